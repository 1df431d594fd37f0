#include "busi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "busi/digest.hpp"
#include "busi/error.hpp"
#include "busi/kv.hpp"

namespace busi {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (const auto& row : counts)
    for (auto v : row) t += v;
  return t;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < kNumClasses; ++i) t += counts[i][i];
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t i) const {
  return std::accumulate(counts[i].begin(), counts[i].end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t j) const {
  std::uint64_t t = 0;
  for (const auto& row : counts) t += row[j];
  return t;
}

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) {
    throw Error(ErrorKind::kInput, "confusion: " + std::to_string(truth.size()) + " true labels vs " +
                                       std::to_string(predicted.size()) + " predictions");
  }
  if (truth.empty()) throw Error(ErrorKind::kInput, "confusion: no samples");
  ConfusionMatrix m;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!label_from_index(truth[i]) || !label_from_index(predicted[i])) {
      throw Error(ErrorKind::kInput, "confusion: label out of range at sample " + std::to_string(i));
    }
    ++m.counts[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
  }
  return m;
}

BinaryTally one_vs_rest(const ConfusionMatrix& m, std::size_t c) {
  BinaryTally t;
  t.tp = m.counts[c][c];
  t.fn = m.row_sum(c) - t.tp;
  t.fp = m.col_sum(c) - t.tp;
  t.tn = m.total() - t.tp - t.fn - t.fp;
  return t;
}

double accuracy(const ConfusionMatrix& m) {
  const auto total = m.total();
  if (total == 0) throw Error(ErrorKind::kUndefinedInput, "accuracy: empty confusion matrix");
  return static_cast<double>(m.trace()) / static_cast<double>(total);
}

PrecisionRecall precision_recall(const ConfusionMatrix& m) {
  const auto total = m.total();
  if (total == 0) throw Error(ErrorKind::kUndefinedInput, "precision/recall: empty confusion matrix");
  PrecisionRecall r;
  double p_sum = 0.0, r_sum = 0.0;
  int p_n = 0, r_n = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const double diag = static_cast<double>(m.counts[c][c]);
    const auto col = m.col_sum(c);
    const auto row = m.row_sum(c);
    r.precision_defined[c] = col > 0;
    r.recall_defined[c] = row > 0;
    r.precision[c] = col > 0 ? diag / static_cast<double>(col) : 0.0;
    r.recall[c] = row > 0 ? diag / static_cast<double>(row) : 0.0;
    if (col > 0) {
      p_sum += r.precision[c];
      ++p_n;
    }
    if (row > 0) {
      r_sum += r.recall[c];
      ++r_n;
    }
    const double weight = static_cast<double>(row) / static_cast<double>(total);
    r.precision_weighted += weight * r.precision[c];
    r.recall_weighted += weight * r.recall[c];
  }
  r.precision_macro = p_n > 0 ? p_sum / p_n : 0.0;
  r.recall_macro = r_n > 0 ? r_sum / r_n : 0.0;
  return r;
}

MccResult mcc(const ConfusionMatrix& m) {
  const double s = static_cast<double>(m.total());
  if (s == 0.0) throw Error(ErrorKind::kUndefinedInput, "mcc: empty confusion matrix");
  const double c = static_cast<double>(m.trace());
  double pt = 0.0, pp = 0.0, tt = 0.0;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    const double p = static_cast<double>(m.col_sum(k));
    const double t = static_cast<double>(m.row_sum(k));
    pt += p * t;
    pp += p * p;
    tt += t * t;
  }
  const double denom = std::sqrt(s * s - pp) * std::sqrt(s * s - tt);
  if (denom == 0.0) return {0.0, false};
  return {(c * s - pt) / denom, true};
}

MccResult binary_mcc(const BinaryTally& t) {
  const double tp = static_cast<double>(t.tp), tn = static_cast<double>(t.tn);
  const double fp = static_cast<double>(t.fp), fn = static_cast<double>(t.fn);
  const double denom = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
  if (denom == 0.0) return {0.0, false};
  return {(tp * tn - fp * fn) / denom, true};
}

namespace {

struct Group {
  double score;
  std::uint64_t positives;
  std::uint64_t negatives;
};

// Distinct scores in descending order with the label tally at each score.
std::vector<Group> sweep(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw Error(ErrorKind::kInput, "curve: scores and labels differ in length");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw Error(ErrorKind::kInput, "curve: non-finite score");
    if (labels[i] != 0 && labels[i] != 1) throw Error(ErrorKind::kInput, "curve: labels must be 0/1");
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<Group> groups;
  for (std::size_t i : order) {
    if (groups.empty() || groups.back().score != scores[i]) groups.push_back({scores[i], 0, 0});
    (labels[i] == 1 ? groups.back().positives : groups.back().negatives) += 1;
  }
  return groups;
}

}  // namespace

Curve roc_curve(std::span<const double> scores, std::span<const int> labels) {
  const auto groups = sweep(scores, labels);
  std::uint64_t pos = 0, neg = 0;
  for (const auto& g : groups) {
    pos += g.positives;
    neg += g.negatives;
  }
  if (pos == 0 || neg == 0) {
    throw Error(ErrorKind::kDegenerateInput, "roc: needs at least one positive and one negative");
  }
  Curve curve;
  curve.kind = CurveKind::kRoc;
  curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::uint64_t tp = 0, fp = 0;
  for (const auto& g : groups) {
    tp += g.positives;
    fp += g.negatives;
    const CurvePoint prev = curve.points.back();
    const CurvePoint next{static_cast<double>(fp) / neg, static_cast<double>(tp) / pos, g.score};
    curve.area += (next.x - prev.x) * (next.y + prev.y) / 2.0;
    curve.points.push_back(next);
  }
  return curve;
}

Curve pr_curve(std::span<const double> scores, std::span<const int> labels) {
  const auto groups = sweep(scores, labels);
  std::uint64_t pos = 0;
  for (const auto& g : groups) pos += g.positives;
  if (pos == 0) throw Error(ErrorKind::kDegenerateInput, "pr: needs at least one positive label");
  Curve curve;
  curve.kind = CurveKind::kPr;
  curve.points.push_back({0.0, 1.0, std::numeric_limits<double>::infinity()});
  std::uint64_t tp = 0, fp = 0;
  for (const auto& g : groups) {
    tp += g.positives;
    fp += g.negatives;
    const double recall = static_cast<double>(tp) / pos;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    curve.area += (recall - curve.points.back().x) * precision;
    curve.points.push_back({recall, precision, g.score});
  }
  return curve;
}

int predicted_label(const ProbabilityRow& row) {
  int best = 0;
  for (int k = 1; k < static_cast<int>(kNumClasses); ++k) {
    if (row[static_cast<std::size_t>(k)] > row[static_cast<std::size_t>(best)]) best = k;
  }
  return best;
}

EvaluationReport evaluate(const ProbabilityMatrix& probs, std::span<const int> truth) {
  if (probs.size() != truth.size()) {
    throw Error(ErrorKind::kInput, "evaluate: " + std::to_string(probs.size()) +
                                       " probability rows vs " + std::to_string(truth.size()) +
                                       " labels");
  }
  for (std::size_t i = 0; i < probs.size(); ++i) {
    double sum = 0.0;
    for (double p : probs[i]) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw Error(ErrorKind::kInput, "evaluate: row " + std::to_string(i) + " has an entry outside [0,1]");
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw Error(ErrorKind::kInput, "evaluate: row " + std::to_string(i) + " sums to " +
                                         std::to_string(sum) + ", not 1");
    }
  }

  EvaluationReport r;
  r.predicted.reserve(probs.size());
  for (const auto& row : probs) r.predicted.push_back(predicted_label(row));
  r.matrix = confusion(truth, r.predicted);
  r.accuracy = accuracy(r.matrix);
  r.rates = precision_recall(r.matrix);
  r.mcc = mcc(r.matrix);
  if (!r.mcc.defined) r.flags.push_back("mcc: zero denominator, reported 0");
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const std::string name(name_of(static_cast<ClassLabel>(c)));
    if (!r.rates.precision_defined[c]) r.flags.push_back("precision[" + name + "]: undefined, reported 0");
    if (!r.rates.recall_defined[c]) r.flags.push_back("recall[" + name + "]: undefined, reported 0");
  }

  double roc_sum = 0.0, pr_sum = 0.0;
  int roc_n = 0, pr_n = 0;
  std::vector<double> scores(probs.size());
  std::vector<int> binary(probs.size());
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const std::string name(name_of(static_cast<ClassLabel>(c)));
    for (std::size_t i = 0; i < probs.size(); ++i) {
      scores[i] = probs[i][c];
      binary[i] = truth[i] == static_cast<int>(c) ? 1 : 0;
    }
    if (!scores.empty() &&
        std::all_of(scores.begin(), scores.end(), [&](double v) { return v == scores[0]; })) {
      r.flags.push_back("roc[" + name + "]: degenerate input, all scores tied");
    }
    try {
      r.roc[c] = roc_curve(scores, binary);
      roc_sum += r.roc[c]->area;
      ++roc_n;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kDegenerateInput) throw;
      r.flags.push_back("roc[" + name + "]: degenerate input, curve undefined");
    }
    try {
      r.pr[c] = pr_curve(scores, binary);
      pr_sum += r.pr[c]->area;
      ++pr_n;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kDegenerateInput) throw;
      r.flags.push_back("pr[" + name + "]: degenerate input, curve undefined");
    }
  }
  r.roc_auc_macro = roc_n > 0 ? roc_sum / roc_n : 0.0;
  r.pr_auc_macro = pr_n > 0 ? pr_sum / pr_n : 0.0;
  return r;
}

nlohmann::json to_json(const EvaluationReport& r) {
  using nlohmann::json;
  json j;
  j["samples"] = r.matrix.total();
  json rows = json::array();
  for (const auto& row : r.matrix.counts) rows.push_back(row);
  j["confusion_matrix"] = rows;
  j["accuracy"] = r.accuracy;
  j["precision_macro"] = r.rates.precision_macro;
  j["precision_weighted"] = r.rates.precision_weighted;
  j["recall_macro"] = r.rates.recall_macro;
  j["recall_weighted"] = r.rates.recall_weighted;
  j["mcc"] = r.mcc.value;
  j["mcc_defined"] = r.mcc.defined;
  j["roc_auc_macro"] = r.roc_auc_macro;
  j["pr_auc_macro"] = r.pr_auc_macro;
  json classes = json::object();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    json k;
    k["precision"] = r.rates.precision[c];
    k["precision_defined"] = r.rates.precision_defined[c];
    k["recall"] = r.rates.recall[c];
    k["recall_defined"] = r.rates.recall_defined[c];
    k["roc_auc"] = r.roc[c] ? json(r.roc[c]->area) : json(nullptr);
    k["pr_auc"] = r.pr[c] ? json(r.pr[c]->area) : json(nullptr);
    classes[std::string(name_of(static_cast<ClassLabel>(c)))] = k;
  }
  j["per_class"] = classes;
  j["flags"] = r.flags;
  return j;
}

namespace {

void write_curve_csv(const Curve& curve, const std::filesystem::path& path) {
  std::string out = curve.kind == CurveKind::kRoc ? "fpr,tpr,threshold\n" : "recall,precision,threshold\n";
  for (const auto& p : curve.points) {
    out += format_double(p.x) + "," + format_double(p.y) + "," +
           (std::isinf(p.threshold) ? std::string("inf") : format_double(p.threshold)) + "\n";
  }
  write_file_bytes(path, out);
}

}  // namespace

void write_report(const EvaluationReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file_bytes(dir / "report.json", to_json(r).dump(2) + "\n");
  std::string cm = "true\\predicted,normal,benign,malignant\n";
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    cm += std::string(name_of(static_cast<ClassLabel>(i)));
    for (auto v : r.matrix.counts[i]) cm += "," + std::to_string(v);
    cm += "\n";
  }
  write_file_bytes(dir / "confusion.csv", cm);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const std::string name(name_of(static_cast<ClassLabel>(c)));
    if (r.roc[c]) write_curve_csv(*r.roc[c], dir / ("roc_" + name + ".csv"));
    if (r.pr[c]) write_curve_csv(*r.pr[c], dir / ("pr_" + name + ".csv"));
  }
}

}  // namespace busi
