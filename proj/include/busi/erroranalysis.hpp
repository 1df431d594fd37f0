#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "busi/data.hpp"
#include "busi/metrics.hpp"
#include "busi/model.hpp"

namespace busi {

struct MisclassificationEntry {
  ImageRecord record;
  ClassLabel true_label = ClassLabel::kNormal;
  ClassLabel predicted_label = ClassLabel::kNormal;
  ProbabilityRow probabilities{};
  double confidence = 0.0;  // top-1 probability
  double margin = 0.0;      // top-1 minus top-2
};

struct ErrorReport {
  std::vector<MisclassificationEntry> entries;  // most confidently wrong first
  std::map<std::pair<ClassLabel, ClassLabel>, std::size_t> pair_counts;  // (true, predicted)
  std::array<std::size_t, kNumClasses> support{};
  std::array<double, kNumClasses> error_rate{};  // errors / support, 0 without support
  std::size_t evaluated = 0;
};

// Rows of `probabilities` align with `records`; labels come from the records.
ErrorReport analyze(const std::vector<ImageRecord>& records, const ProbabilityMatrix& probabilities);
// Rescale-only inference over a split. Throws Error{kInput} for an empty split.
ErrorReport analyze(const TrainedClassifier& model, const DatasetManifest& manifest, Split split);

nlohmann::json to_json(const ErrorReport& report);

// index.csv (path,true,predicted,p0,p1,p2,confidence,margin) plus one image
// copy per entry named true-X_pred-Y_conf-Z_<rank>_<file>. Gallery files from
// an earlier export are replaced. Throws Error{kIo}.
void export_gallery(const ErrorReport& report, const std::filesystem::path& out_dir);
std::string gallery_file_name(const MisclassificationEntry& entry, std::size_t rank);

struct GalleryRow {
  std::filesystem::path path;
  ClassLabel true_label = ClassLabel::kNormal;
  ClassLabel predicted_label = ClassLabel::kNormal;
  ProbabilityRow probabilities{};
  double confidence = 0.0;
  double margin = 0.0;
};
std::vector<GalleryRow> read_gallery_index(const std::filesystem::path& index_csv);

}  // namespace busi
