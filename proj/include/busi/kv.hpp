#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

namespace busi {

// Flat "key=value" text blocks ('#' starts a comment line). Keys are sorted
// on output so serialization is canonical.
class KeyValues {
 public:
  static KeyValues parse(std::string_view text, std::string_view source = "<kv>");
  std::string serialize() const;

  void set(const std::string& key, std::string value) { entries_[key] = std::move(value); }
  void set(const std::string& key, double value);
  void set(const std::string& key, std::int64_t value);
  void set(const std::string& key, std::uint64_t value);
  void set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }
  void set(const std::string& key, int value) { set(key, static_cast<std::int64_t>(value)); }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, std::string fallback) const;
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // Entries whose key starts with `prefix`, with the prefix stripped.
  KeyValues with_prefix(std::string_view prefix) const;
  void merge(const KeyValues& other, std::string_view prefix = "");

  const std::map<std::string, std::string>& entries() const { return entries_; }
  bool operator==(const KeyValues&) const = default;

 private:
  std::map<std::string, std::string> entries_;
};

std::string format_double(double value);

}  // namespace busi
