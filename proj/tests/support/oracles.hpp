#pragma once

// Reference implementations written directly from the metric definitions,
// sample by sample, sharing no code with the library's metrics engine.

#include <array>
#include <cstdint>
#include <vector>

#include "busi/metrics.hpp"

namespace busi::oracle {

struct Scalars {
  double accuracy = 0.0;
  std::array<double, 3> precision{}, recall{};
  std::array<bool, 3> precision_defined{}, recall_defined{};
  double precision_macro = 0.0, precision_weighted = 0.0;
  double recall_macro = 0.0, recall_weighted = 0.0;
  double mcc = 0.0;
};

// Brute force over the label lists. Macro averages run over defined classes,
// weighted averages use true-class support.
Scalars brute_force(const std::vector<int>& truth, const std::vector<int>& predicted);

// Multiclass MCC as the correlation of one-hot indicator matrices:
// cov(X,Y) / sqrt(cov(X,X) cov(Y,Y)), 0 when a variance vanishes.
double indicator_mcc(const std::vector<int>& truth, const std::vector<int>& predicted);

// The binary formula (TP*TN - FP*FN) / sqrt((TP+FP)(TP+FN)(TN+FP)(TN+FN)).
double textbook_binary_mcc(double tp, double tn, double fp, double fn);

// P(score_pos > score_neg) + 0.5 P(tie) over all positive/negative pairs.
double mann_whitney_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Average precision by walking every distinct threshold from the top.
double average_precision(const std::vector<double>& scores, const std::vector<int>& labels);

// The published confusion matrix (rows true, columns predicted).
inline constexpr std::array<std::array<int, 3>, 3> kReferenceMatrix{{{35, 1, 1}, {6, 34, 9}, {2, 4, 37}}};

// Label pairs realizing a matrix, in row-major cell order.
void pairs_from_matrix(const std::array<std::array<int, 3>, 3>& m, std::vector<int>& truth,
                       std::vector<int>& predicted);

// Rows concentrating mass on the predicted column (ties impossible), so
// argmax reproduces `predicted` exactly.
ProbabilityMatrix rows_predicting(const std::vector<int>& predicted, std::uint64_t seed);

}  // namespace busi::oracle
