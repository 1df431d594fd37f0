#include "busi/erroranalysis.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <sstream>

#include "busi/csv.hpp"
#include "busi/digest.hpp"
#include "busi/error.hpp"
#include "busi/kv.hpp"

namespace busi {

namespace {

constexpr std::string_view kIndexHeader = "path,true,predicted,p0,p1,p2,confidence,margin";

ClassLabel parse_label(const std::string& text, const std::string& where) {
  const auto label = label_from_name(text);
  if (!label) throw Error(ErrorKind::kParse, where + ": unknown class '" + text + "'");
  return *label;
}

double parse_number(const std::string& text, const std::string& where) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) {
    throw Error(ErrorKind::kParse, where + ": bad number '" + text + "'");
  }
  return v;
}

}  // namespace

ErrorReport analyze(const std::vector<ImageRecord>& records, const ProbabilityMatrix& probabilities) {
  if (records.size() != probabilities.size()) {
    throw Error(ErrorKind::kInput, "analyze: " + std::to_string(records.size()) + " records but " +
                                       std::to_string(probabilities.size()) + " probability rows");
  }
  ErrorReport report;
  report.evaluated = records.size();
  std::array<std::size_t, kNumClasses> errors{};
  for (std::size_t i = 0; i < records.size(); ++i) {
    const ProbabilityRow& p = probabilities[i];
    const auto truth = records[i].label;
    ++report.support[index_of(truth)];
    const int predicted = predicted_label(p);
    if (predicted == index_of(truth)) continue;
    MisclassificationEntry e;
    e.record = records[i];
    e.true_label = truth;
    e.predicted_label = *label_from_index(predicted);
    e.probabilities = p;
    ProbabilityRow sorted = p;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    e.confidence = sorted[0];
    e.margin = sorted[0] - sorted[1];
    ++report.pair_counts[{e.true_label, e.predicted_label}];
    ++errors[index_of(truth)];
    report.entries.push_back(std::move(e));
  }
  std::stable_sort(report.entries.begin(), report.entries.end(),
                   [](const MisclassificationEntry& a, const MisclassificationEntry& b) {
                     return a.confidence > b.confidence;
                   });
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    report.error_rate[c] = report.support[c] == 0
                               ? 0.0
                               : static_cast<double>(errors[c]) / static_cast<double>(report.support[c]);
  }
  return report;
}

ErrorReport analyze(const TrainedClassifier& model, const DatasetManifest& manifest, Split split) {
  if (manifest.split_size(split) == 0) {
    throw Error(ErrorKind::kInput, "error analysis: split '" + std::string(name_of(split)) +
                                       "' is empty");
  }
  const SplitPredictions preds = predict_split(model, manifest, split);
  return analyze(preds.records, preds.probabilities);
}

nlohmann::json to_json(const ErrorReport& r) {
  nlohmann::json j;
  j["evaluated"] = r.evaluated;
  j["misclassified"] = r.entries.size();
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [key, count] : r.pair_counts) {
    pairs.push_back({{"true", name_of(key.first)}, {"predicted", name_of(key.second)}, {"count", count}});
  }
  j["pair_counts"] = pairs;
  nlohmann::json rates = nlohmann::json::object();
  for (ClassLabel l : kAllLabels) {
    rates[std::string(name_of(l))] = {{"support", r.support[index_of(l)]},
                                      {"error_rate", r.error_rate[index_of(l)]}};
  }
  j["per_class"] = rates;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : r.entries) {
    entries.push_back({{"path", e.record.path.string()},
                       {"true", name_of(e.true_label)},
                       {"predicted", name_of(e.predicted_label)},
                       {"probabilities", e.probabilities},
                       {"confidence", e.confidence},
                       {"margin", e.margin}});
  }
  j["entries"] = entries;
  return j;
}

std::string gallery_file_name(const MisclassificationEntry& e, std::size_t rank) {
  char conf[16];
  std::snprintf(conf, sizeof conf, "%.4f", e.confidence);
  char ordinal[16];
  std::snprintf(ordinal, sizeof ordinal, "%04zu", rank);
  return "true-" + std::string(name_of(e.true_label)) + "_pred-" +
         std::string(name_of(e.predicted_label)) + "_conf-" + conf + "_" + ordinal + "_" +
         e.record.path.filename().string();
}

void export_gallery(const ErrorReport& report, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create " + out_dir.string() + ": " + ec.message());
  for (const auto& item : std::filesystem::directory_iterator(out_dir, ec)) {
    const std::string name = item.path().filename().string();
    if (item.is_regular_file() && name.rfind("true-", 0) == 0) {
      std::filesystem::remove(item.path(), ec);
    }
  }

  std::string index(kIndexHeader);
  index += '\n';
  for (std::size_t i = 0; i < report.entries.size(); ++i) {
    const auto& e = report.entries[i];
    index += csv_field(e.record.path.string());
    index += ',' + std::string(name_of(e.true_label)) + ',' + std::string(name_of(e.predicted_label));
    for (double p : e.probabilities) index += ',' + format_double(p);
    index += ',' + format_double(e.confidence) + ',' + format_double(e.margin) + '\n';
    const auto target = out_dir / gallery_file_name(e, i + 1);
    std::filesystem::copy_file(e.record.path, target,
                               std::filesystem::copy_options::overwrite_existing, ec);
    if (ec) {
      throw Error(ErrorKind::kIo, "cannot copy " + e.record.path.string() + " to " +
                                      target.string() + ": " + ec.message());
    }
  }
  write_file_bytes(out_dir / "index.csv", index);
  write_file_bytes(out_dir / "errors.json", to_json(report).dump(2) + "\n");
}

std::vector<GalleryRow> read_gallery_index(const std::filesystem::path& index_csv) {
  std::istringstream in(read_file_bytes(index_csv));
  std::vector<GalleryRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = index_csv.string() + ":" + std::to_string(line_no);
    if (line_no == 1) {
      if (line != kIndexHeader) throw Error(ErrorKind::kParse, where + ": unexpected header");
      continue;
    }
    if (line.empty()) continue;
    const auto f = parse_csv_line(line);
    if (f.size() != 8) throw Error(ErrorKind::kParse, where + ": expected 8 fields");
    GalleryRow r;
    r.path = f[0];
    r.true_label = parse_label(f[1], where);
    r.predicted_label = parse_label(f[2], where);
    for (std::size_t k = 0; k < kNumClasses; ++k) r.probabilities[k] = parse_number(f[3 + k], where);
    r.confidence = parse_number(f[6], where);
    r.margin = parse_number(f[7], where);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace busi
