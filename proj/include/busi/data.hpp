#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "busi/labels.hpp"

namespace busi {

enum class Split { kTrain, kValidation, kTest, kUnassigned };

std::string_view name_of(Split split);
std::optional<Split> split_from_name(std::string_view name);

struct ImageRecord {
  std::filesystem::path path;
  ClassLabel label = ClassLabel::kNormal;
  Split split = Split::kUnassigned;
  bool is_mask = false;
  std::string byte_digest;

  bool operator==(const ImageRecord&) const = default;
};

using ClassCounts = std::array<std::size_t, kNumClasses>;

struct SplitSpec {
  std::array<double, 3> ratios{0.64, 0.16, 0.20};  // train, validation, test
  std::uint64_t seed = 0;
  bool stratified = true;

  // Throws Error{kSpec} unless each ratio is in (0,1) and they sum to 1.
  void validate() const;
};

struct DatasetManifest {
  std::vector<ImageRecord> records;
  ClassCounts class_counts{};  // distinct non-mask images per label
  std::uint64_t split_seed = 0;
  std::array<double, 3> split_ratios{0.64, 0.16, 0.20};

  std::size_t raw_file_count() const { return records.size(); }
  std::size_t classifiable_count() const;
  bool is_split() const;
  // Records of one split in manifest order (duplicates from oversampling included).
  std::vector<ImageRecord> records_in(Split split) const;
  ClassCounts split_class_counts(Split split) const;
  std::size_t split_size(Split split) const;

  bool operator==(const DatasetManifest&) const = default;
};

// Oversampling duplicates are counted once.
ClassCounts tally_classifiable(const std::vector<ImageRecord>& records);

// True for stems such as "benign (3)_mask" or "benign (3)_mask_1".
bool is_mask_name(const std::filesystem::path& file);

struct IngestResult {
  DatasetManifest manifest;
  std::vector<std::string> warnings;  // skipped/unreadable files, missing class dirs
};

// Expects root/{normal,benign,malignant}/ with .png/.jpg/.jpeg files.
// Records are in canonical (sorted path) order.
IngestResult ingest(const std::filesystem::path& root);

// Per-split totals for n items: nearest rounding by largest remainder,
// ties resolved toward train.
std::array<std::size_t, 3> split_targets(std::size_t n, const std::array<double, 3>& ratios);

DatasetManifest split(const DatasetManifest& manifest, const SplitSpec& spec);

DatasetManifest oversample_train(const DatasetManifest& manifest, std::uint64_t seed);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);
std::string serialize_manifest(const DatasetManifest& manifest);
DatasetManifest parse_manifest(std::string_view text, std::string_view source = "<manifest>");

// SHA-256 of the serialized manifest; used to pin run configs.
std::string manifest_digest(const DatasetManifest& manifest);

}  // namespace busi
