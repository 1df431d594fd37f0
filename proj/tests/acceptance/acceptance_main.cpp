// Acceptance run: one PASS/FAIL/SKIP line per primary criterion. Exit status
// is nonzero when any criterion fails. The dataset-gated criterion runs only
// when BUSI_ROOT names a dataset root.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>


#include "busi/augment.hpp"
#include "busi/data.hpp"
#include "busi/head.hpp"
#include "busi/intensity.hpp"
#include "busi/metrics.hpp"
#include "busi/model.hpp"
#include "busi/rng.hpp"
#include "busi/service.hpp"
#include "busi/tune.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

#include <httplib.h>

using namespace busi;
namespace fs = std::filesystem;

namespace {

enum class Status { kPass, kFail, kSkip };

struct Outcome {
  Status status = Status::kPass;
  std::string detail;
};

class Checker {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    if (!ok) ++failed_;
  }
  void note(const std::string& s) { notes_ += (notes_.empty() ? "" : "; ") + s; }
  Outcome outcome() const {
    if (failed_ == 0) return {Status::kPass, notes_};
    std::string d = std::to_string(failed_) + " check(s) failed: ";
    for (std::size_t i = 0; i < failures_.size(); ++i) d += (i ? " | " : "") + failures_[i];
    if (!notes_.empty()) d += "; " + notes_;
    return {Status::kFail, d};
  }

 private:
  std::vector<std::string> failures_;
  std::size_t failed_ = 0;
  std::string notes_;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(precision);
  s << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific;
  s.precision(2);
  s << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

Outcome metrics_oracle() {
  Checker c;
  const auto start = std::chrono::steady_clock::now();
  Rng r(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + r.below(60);
    std::vector<int> t(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = static_cast<int>(r.below(3));
      p[i] = r.uniform() < 0.5 ? t[i] : static_cast<int>(r.below(3));
    }
    const auto m = confusion(t, p);
    const auto pr = precision_recall(m);
    const auto o = oracle::brute_force(t, p);
    std::vector<double> diffs{accuracy(m) - o.accuracy,
                              pr.precision_macro - o.precision_macro,
                              pr.precision_weighted - o.precision_weighted,
                              pr.recall_macro - o.recall_macro,
                              pr.recall_weighted - o.recall_weighted,
                              mcc(m).value - o.mcc};
    for (std::size_t k = 0; k < 3; ++k) {
      diffs.push_back(pr.precision[k] - o.precision[k]);
      diffs.push_back(pr.recall[k] - o.recall[k]);
      c.expect(pr.precision_defined[k] == o.precision_defined[k], "precision_defined");
      c.expect(pr.recall_defined[k] == o.recall_defined[k], "recall_defined");
    }
    for (double d : diffs) worst = std::max(worst, std::abs(d));
  }
  const double elapsed = seconds_since(start);
  c.expect(worst <= 1e-9, "max deviation " + sci(worst));
  c.expect(elapsed < 10.0, "runtime " + fmt(elapsed) + " s");
  c.note("500 instances, max deviation " + sci(worst) + ", " + fmt(elapsed, 3) + " s");
  return c.outcome();
}

Outcome roc_identity() {
  Checker c;
  Rng r(77);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + r.below(80);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    const bool ties = trial % 2 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(r.below(2));
      scores[i] = ties ? static_cast<double>(r.below(5)) / 4.0 : r.uniform();
    }
    labels[0] = 0;
    labels[1] = 1;
    const double area = roc_curve(scores, labels).area;
    worst = std::max(worst, std::abs(area - oracle::mann_whitney_auc(scores, labels)));
  }
  c.expect(worst <= 1e-9, "max deviation " + sci(worst));
  const std::vector<double> sep{0.1, 0.2, 0.8, 0.9};
  const std::vector<int> sep_labels{0, 0, 1, 1};
  c.expect(roc_curve(sep, sep_labels).area == 1.0, "perfect separation");
  const std::vector<double> tied{0.4, 0.4, 0.4, 0.4, 0.4};
  const std::vector<int> tied_labels{0, 1, 0, 1, 1};
  c.expect(roc_curve(tied, tied_labels).area == 0.5, "all tied");
  c.note("200 sets, max deviation " + sci(worst));
  return c.outcome();
}

Outcome golden_matrix() {
  Checker c;
  std::vector<int> t, p;
  oracle::pairs_from_matrix(oracle::kReferenceMatrix, t, p);
  const auto probs = oracle::rows_predicting(p, 5);
  const auto report = evaluate(probs, t);
  c.expect(near(report.accuracy, 0.8217, 1e-4), "accuracy " + fmt(report.accuracy, 6));
  c.expect(near(report.accuracy, 0.82, 0.005), "consistent with 0.82");
  c.expect(report.matrix.off_diagonal() == 23, "off-diagonal count");
  c.expect(report.matrix.counts[1][2] == 9, "benign->malignant count");
  c.note("accuracy " + fmt(report.accuracy, 6) + ", off-diagonal " +
         std::to_string(report.matrix.off_diagonal()) + ", benign->malignant " +
         std::to_string(report.matrix.counts[1][2]) + ", mcc " + fmt(report.mcc.value, 6));
  return c.outcome();
}

Outcome k2_mcc() {
  Checker c;
  Rng r(3);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    ConfusionMatrix m;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) m.counts[i][j] = r.below(60);
    m.counts[1][1] += 1;
    const double tn = double(m.counts[0][0]), fp = double(m.counts[0][1]);
    const double fn = double(m.counts[1][0]), tp = double(m.counts[1][1]);
    worst = std::max(worst, std::abs(mcc(m).value - oracle::textbook_binary_mcc(tp, tn, fp, fn)));
  }
  c.expect(worst <= 1e-12, "max deviation " + sci(worst));
  c.note("1000 matrices, max deviation " + sci(worst));
  return c.outcome();
}

Outcome gradient_check() {
  Checker c;
  Rng r(11);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::array<double, 3> z{};
    for (double& v : z) v = 3.0 * r.normal();
    const std::size_t label = r.below(3);
    const auto g = cross_entropy_grad(z, label);
    for (std::size_t k = 0; k < 3; ++k) {
      const double h = 1e-5;
      auto up = z, down = z;
      up[k] += h;
      down[k] -= h;
      const double fd = (cross_entropy(up, label) - cross_entropy(down, label)) / (2 * h);
      const double rel = std::abs(fd - g[k]) / std::max(1e-8, std::max(std::abs(fd), std::abs(g[k])));
      worst = std::max(worst, rel);
    }
  }
  c.expect(worst <= 1e-4, "max relative error " + sci(worst));
  c.note("50 logit vectors, max relative error " + sci(worst));
  return c.outcome();
}

DatasetManifest counted_manifest(const ClassCounts& counts) {
  DatasetManifest m;
  for (ClassLabel l : kAllLabels) {
    for (std::size_t i = 0; i < counts[index_of(l)]; ++i) {
      ImageRecord rec;
      rec.path = fs::path("/virtual") / std::string(name_of(l)) / (std::to_string(i) + ".png");
      rec.label = l;
      rec.byte_digest = rec.path.string();
      m.records.push_back(rec);
    }
  }
  m.class_counts = tally_classifiable(m.records);
  return m;
}

Outcome split_arithmetic(const fs::path& scratch) {
  Checker c;
  const auto targets = split_targets(780, {0.64, 0.16, 0.20});
  c.expect(targets == std::array<std::size_t, 3>{499, 125, 156}, "split_targets(780)");
  const auto busi_like = counted_manifest({133, 437, 210});
  for (std::uint64_t seed : {0ull, 1ull, 42ull}) {
    SplitSpec spec;
    spec.seed = seed;
    const auto s = split(busi_like, spec);
    c.expect(s.split_size(Split::kTrain) == 499 && s.split_size(Split::kValidation) == 125 &&
                 s.split_size(Split::kTest) == 156,
             "split sizes, seed " + std::to_string(seed));
    c.expect(s == split(busi_like, spec), "split determinism");
    const auto o = oversample_train(s, seed);
    const auto counts = o.split_class_counts(Split::kTrain);
    c.expect(counts[0] == counts[1] && counts[1] == counts[2], "oversampled counts equal");
    c.expect(o == oversample_train(s, seed), "oversample determinism");
  }

  testkit::SyntheticSpec fixture;
  fixture.per_class = {6, 6, 6};
  fixture.min_size = 40;
  fixture.max_size = 60;
  SplitSpec spec;
  spec.seed = 3;
  const auto m = split(testkit::write_synthetic_dataset(scratch / "stream", fixture), spec);
  AugmentConfig aug;
  aug.target_height = aug.target_width = 48;
  aug.seed = 4;
  const auto drain = [&] {
    std::vector<float> all;
    BatchStream s(m, Split::kTrain, aug, 4, 2);
    while (auto b = s.next()) all.insert(all.end(), b->pixels.begin(), b->pixels.end());
    return all;
  };
  c.expect(drain() == drain(), "augmentation stream determinism");

  SearchSpace space;
  for (std::size_t i = 0; i < 20; ++i) {
    c.expect(sample_trial(space, 9, i) == sample_trial(space, 9, i), "tuner trial determinism");
  }
  SearchContext ctx;
  ctx.base_spec = testkit::small_spec(32, 8);
  ctx.base_training.batch_size = 8;
  ctx.backbone = testkit::shared_backbone(32);
  ctx.backbone_provenance = "random:11";
  space.dense_units_choices = {8};
  AugmentConfig small = AugmentConfig::identity();
  small.target_height = small.target_width = 32;
  const auto a = search(space, 3, 2, m, small, 5, ctx);
  const auto b = search(space, 3, 2, m, small, 5, ctx);
  for (std::size_t i = 0; i < 3; ++i) {
    c.expect(a.trials[i].config == b.trials[i].config && a.trials[i].history == b.trials[i].history,
             "tuner trial sequence determinism");
  }
  c.note("780 -> " + std::to_string(targets[0]) + "/" + std::to_string(targets[1]) + "/" +
         std::to_string(targets[2]));
  return c.outcome();
}

Outcome desk_scale(const fs::path& scratch) {
  Checker c;
  const auto start = std::chrono::steady_clock::now();
  const auto base = testkit::write_synthetic_dataset(scratch / "desk", testkit::SyntheticSpec{});
  SplitSpec spec;
  spec.seed = 1;
  const auto manifest = split(base, spec);
  BackboneSource source;
  source.allow_random_init = true;
  source.random_seed = 7;
  TrainedClassifier model = build(ClassifierSpec{}, source, 1);
  AugmentConfig aug;
  aug.seed = 1;
  TrainingConfig training;
  training.epochs = 5;
  training.seed = 1;
  model = train(std::move(model), manifest, aug, training);
  const double val = model.history.epochs.back().val_accuracy;
  const double elapsed = seconds_since(start);
  c.expect(val >= 0.80, "validation accuracy " + fmt(val));
  c.expect(elapsed < 600.0, "runtime " + fmt(elapsed, 1) + " s");

  testkit::SyntheticSpec tiny_spec;
  tiny_spec.per_class = {4, 3, 3};
  tiny_spec.seed = 2;
  const auto tiny = testkit::all_train(testkit::write_synthetic_dataset(scratch / "tiny", tiny_spec));
  TrainedClassifier small = build(ClassifierSpec{}, source, 2);
  TrainingConfig overfit;
  overfit.epochs = 30;
  overfit.batch_size = 10;
  overfit.learning_rate = 1e-3;
  AugmentConfig identity = AugmentConfig::identity();
  small = train(std::move(small), tiny, identity, overfit);
  const auto preds = predict_split(small, tiny, Split::kTrain);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.labels.size(); ++i) {
    correct += predicted_label(preds.probabilities[i]) == preds.labels[i];
  }
  const double train_acc = static_cast<double>(correct) / static_cast<double>(preds.labels.size());
  c.expect(preds.labels.size() == 10, "overfit set size");
  c.expect(train_acc >= 0.9, "overfit train accuracy " + fmt(train_acc));
  c.note("300 images, 5 epochs, val accuracy " + fmt(val) + " in " + fmt(elapsed, 1) +
         " s; 10-image overfit train accuracy " + fmt(train_acc));
  return c.outcome();
}

Outcome busi_bands(const fs::path& scratch) {
  const char* root = std::getenv("BUSI_ROOT");
  if (!root || !*root) return {Status::kSkip, "BUSI_ROOT not set"};
  Checker c;
  const auto ingested = ingest(root).manifest;
  const auto intensity = intensity_report(ingested);
  const auto& n = intensity.classes[index_of(ClassLabel::kNormal)];
  const auto& b = intensity.classes[index_of(ClassLabel::kBenign)];
  const auto& m = intensity.classes[index_of(ClassLabel::kMalignant)];
  c.expect(n && b && m, "all classes present");
  if (n && b && m) {
    c.expect(near(n->median, 0.30, 0.05), "normal median " + fmt(n->median));
    c.expect(m->median < n->median && n->median < b->median, "median ordering");
    c.note("medians malignant " + fmt(m->median) + " normal " + fmt(n->median) + " benign " +
           fmt(b->median));
  }

  SplitSpec spec;
  const auto manifest = split(ingested, spec);
  BackboneSource source;
  if (const char* w = std::getenv("BUSI_BACKBONE_WEIGHTS"); w && *w) {
    source.weights_path = w;
  } else {
    source.allow_random_init = true;
    c.note("random backbone (BUSI_BACKBONE_WEIGHTS not set)");
  }
  TrainedClassifier model = build(ClassifierSpec{}, source, 0);
  TrainingConfig training;  // 50 epochs, batch 32
  model = train(std::move(model), manifest, AugmentConfig{}, training);
  const auto preds = predict_split(model, manifest, Split::kTest);
  const auto report = evaluate(preds.probabilities, preds.labels);
  c.expect(report.accuracy >= 0.72 && report.accuracy <= 0.90, "test accuracy " + fmt(report.accuracy));
  c.expect(report.roc_auc_macro >= 0.88, "macro ROC-AUC " + fmt(report.roc_auc_macro));
  write_report(report, scratch / "busi_report");
  c.note("test accuracy " + fmt(report.accuracy) + ", macro ROC-AUC " + fmt(report.roc_auc_macro));
  return c.outcome();
}

std::set<std::string> listing(const fs::path& dir) {
  std::set<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) out.insert(e.path().string());
  return out;
}

Outcome service_contract(const fs::path& scratch) {
  Checker c;
  const auto ckpt = scratch / "ckpt";
  save_classifier(build(ClassifierSpec{}, testkit::shared_backbone(150), "random:11", 3), ckpt);
  auto service = std::make_shared<const PredictionService>(PredictionService::from_checkpoint(ckpt));
  ServiceConfig cfg;
  cfg.port = 0;
  PredictionServer server(service, cfg);
  const int port = server.bind();
  std::thread thread([&] { server.serve(); });

  const auto tmp = scratch / "tmp";
  fs::create_directories(tmp);
  ::setenv("TMPDIR", tmp.c_str(), 1);
  const auto cwd_before = listing(fs::current_path());
  const auto ckpt_before = listing(ckpt);

  const std::string png = encode_png(testkit::texture_image(ClassLabel::kMalignant, 8, 180, 210));
  httplib::Client client("127.0.0.1", port);
  httplib::Result res;
  for (int i = 0; i < 200 && !(res = client.Get("/health")); ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  const auto start = std::chrono::steady_clock::now();
  res = client.Post("/predict", httplib::MultipartFormDataItems{{"image", png, "fixture.png", "image/png"}});
  const double elapsed = seconds_since(start);
  c.expect(res && res->status == 200, "POST /predict status");
  if (res && res->status == 200) {
    const auto j = nlohmann::json::parse(res->body);
    const auto& model = service->model();
    const auto expected = model.predict_one(preprocess(decode_image(png), model.eval_augment_config()));
    double sum = 0.0;
    bool exact = true;
    for (ClassLabel l : kAllLabels) {
      const double p = j["probabilities"][std::string(name_of(l))].get<double>();
      sum += p;
      exact = exact && p == expected[index_of(l)];
    }
    c.expect(near(sum, 1.0, 1e-6), "probability sum " + std::to_string(sum));
    c.expect(exact, "bit-exact offline match");
    c.note("sum " + fmt(sum, 9) + ", " + fmt(elapsed * 1000.0, 1) + " ms");
  }
  c.expect(elapsed < 2.0, "latency " + fmt(elapsed, 3) + " s");
  c.expect(fs::is_empty(tmp), "temp dir untouched");
  c.expect(listing(fs::current_path()) == cwd_before, "working dir untouched");
  c.expect(listing(ckpt) == ckpt_before, "checkpoint dir untouched");
  server.stop();
  thread.join();
  return c.outcome();
}

}  // namespace

int main() {
  testkit::ScratchDir scratch("acceptance");
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"metrics-oracle-equivalence", metrics_oracle},
      {"roc-identity", roc_identity},
      {"golden-matrix", golden_matrix},
      {"k2-mcc-degeneration", k2_mcc},
      {"gradient-check", gradient_check},
      {"split-arithmetic", [&] { return split_arithmetic(scratch.path()); }},
      {"desk-scale-learning", [&] { return desk_scale(scratch.path()); }},
      {"busi-band-targets", [&] { return busi_bands(scratch.path()); }},
      {"service-contract", [&] { return service_contract(scratch.path()); }},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {Status::kFail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.status == Status::kPass ? "PASS" : o.status == Status::kSkip ? "SKIP" : "FAIL";
    failed += o.status == Status::kFail;
    std::cout << tag << " " << name << (o.detail.empty() ? "" : ": " + o.detail) << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
