#pragma once

// Evaluation engine. Conventions:
//  * confusion rows are true classes, columns predicted classes;
//  * a rate whose denominator is zero is reported as 0 and flagged undefined;
//  * ROC area is the trapezoidal integral over the descending-threshold sweep,
//    PR area is average precision (step sum of precision * recall increment);
//  * predicted label = argmax with ties to the lowest class index.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "busi/labels.hpp"

namespace busi {

using ProbabilityRow = std::array<double, kNumClasses>;
using ProbabilityMatrix = std::vector<ProbabilityRow>;

struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts{};

  std::uint64_t total() const;
  std::uint64_t trace() const;
  std::uint64_t row_sum(std::size_t true_class) const;
  std::uint64_t col_sum(std::size_t predicted_class) const;
  std::uint64_t off_diagonal() const { return total() - trace(); }
  bool operator==(const ConfusionMatrix&) const = default;
};

struct BinaryTally {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::uint64_t total() const { return tp + fp + tn + fn; }
  bool operator==(const BinaryTally&) const = default;
};

// Throws Error{kInput} on length mismatch, empty input or out-of-range labels.
ConfusionMatrix confusion(std::span<const int> true_labels, std::span<const int> predicted_labels);
BinaryTally one_vs_rest(const ConfusionMatrix& m, std::size_t positive_class);

// Throws Error{kUndefinedInput} for an empty matrix.
double accuracy(const ConfusionMatrix& m);

struct PrecisionRecall {
  std::array<double, kNumClasses> precision{};
  std::array<double, kNumClasses> recall{};
  std::array<bool, kNumClasses> precision_defined{};
  std::array<bool, kNumClasses> recall_defined{};
  double precision_macro = 0.0;  // mean over classes with a defined value
  double precision_weighted = 0.0;  // support (true count) weighted
  double recall_macro = 0.0;
  double recall_weighted = 0.0;
};

PrecisionRecall precision_recall(const ConfusionMatrix& m);

struct MccResult {
  double value = 0.0;
  bool defined = false;  // false when the denominator vanishes (value 0)
};

// Multiclass (R_K) Matthews correlation over the full matrix.
MccResult mcc(const ConfusionMatrix& m);
// Binary formula (TP*TN - FP*FN) / sqrt(...).
MccResult binary_mcc(const BinaryTally& t);

enum class CurveKind { kRoc, kPr };

struct CurvePoint {
  double x = 0.0;  // ROC: FPR, PR: recall
  double y = 0.0;  // ROC: TPR, PR: precision
  double threshold = 0.0;  // +inf for the starting point
};

struct Curve {
  CurveKind kind = CurveKind::kRoc;
  std::vector<CurvePoint> points;
  double area = 0.0;
};

// labels are 1 (positive) / 0 (negative). Throws Error{kDegenerateInput}
// unless both classes are present.
Curve roc_curve(std::span<const double> scores, std::span<const int> labels);
// Throws Error{kDegenerateInput} without any positive label.
Curve pr_curve(std::span<const double> scores, std::span<const int> labels);

// Argmax with ties resolved to the lowest index.
int predicted_label(const ProbabilityRow& row);

struct EvaluationReport {
  ConfusionMatrix matrix;
  double accuracy = 0.0;
  PrecisionRecall rates;
  MccResult mcc;
  std::array<std::optional<Curve>, kNumClasses> roc;
  std::array<std::optional<Curve>, kNumClasses> pr;
  double roc_auc_macro = 0.0;  // mean over classes with a defined curve
  double pr_auc_macro = 0.0;
  std::vector<int> predicted;
  std::vector<std::string> flags;  // degenerate inputs, undefined rates
};

// Throws Error{kInput} when a row is off the simplex (sum 1 +- 1e-6) or when
// lengths disagree.
EvaluationReport evaluate(const ProbabilityMatrix& probabilities, std::span<const int> true_labels);

nlohmann::json to_json(const EvaluationReport& report);
// report.json, confusion.csv, roc_<class>.csv and pr_<class>.csv.
void write_report(const EvaluationReport& report, const std::filesystem::path& dir);

}  // namespace busi
