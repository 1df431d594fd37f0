#include "busi/kv.hpp"

#include <array>
#include <charconv>
#include <sstream>

#include "busi/error.hpp"

namespace busi {

std::string format_double(double value) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), end);
}

KeyValues KeyValues::parse(std::string_view text, std::string_view source) {
  KeyValues kv;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw Error(ErrorKind::kParse, std::string(source) + ":" + std::to_string(line_no) +
                                         ": expected key=value, got '" + line + "'");
    }
    kv.entries_[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

std::string KeyValues::serialize() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
  return out;
}

void KeyValues::set(const std::string& key, double value) { entries_[key] = format_double(value); }
void KeyValues::set(const std::string& key, std::int64_t value) {
  entries_[key] = std::to_string(value);
}
void KeyValues::set(const std::string& key, std::uint64_t value) {
  entries_[key] = std::to_string(value);
}

const std::string& KeyValues::get(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw Error(ErrorKind::kConfig, "missing key '" + key + "'");
  return it->second;
}

std::string KeyValues::get_or(const std::string& key, std::string fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

namespace {
template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || p != text.data() + text.size()) {
    throw Error(ErrorKind::kConfig, "key '" + key + "': not a number: '" + text + "'");
  }
  return value;
}
}  // namespace

double KeyValues::get_double(const std::string& key) const {
  return parse_number<double>(key, get(key));
}
std::int64_t KeyValues::get_int(const std::string& key) const {
  return parse_number<std::int64_t>(key, get(key));
}
std::uint64_t KeyValues::get_uint(const std::string& key) const {
  return parse_number<std::uint64_t>(key, get(key));
}
bool KeyValues::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error(ErrorKind::kConfig, "key '" + key + "': not a boolean: '" + v + "'");
}

KeyValues KeyValues::with_prefix(std::string_view prefix) const {
  KeyValues out;
  for (const auto& [k, v] : entries_) {
    if (k.size() > prefix.size() && k.compare(0, prefix.size(), prefix) == 0) {
      out.entries_[k.substr(prefix.size())] = v;
    }
  }
  return out;
}

void KeyValues::merge(const KeyValues& other, std::string_view prefix) {
  for (const auto& [k, v] : other.entries_) entries_[std::string(prefix) + k] = v;
}

}  // namespace busi
