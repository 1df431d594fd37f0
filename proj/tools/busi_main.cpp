// busi: command-line entry point for the ultrasound classification pipeline.
//
//   busi ingest    --root DIR            -> manifest.tsv
//   busi split     --manifest FILE       -> manifest updated in place
//   busi train     --manifest FILE       -> checkpoint/, history.tsv
//   busi tune      --manifest FILE       -> trials.tsv, best_config.txt
//   busi evaluate  --checkpoint DIR      -> report.json, confusion.csv, curve CSVs
//   busi intensity --manifest FILE       -> intensity.json and CSV tables
//   busi errors    --checkpoint DIR      -> gallery/
//   busi serve     --checkpoint DIR      -> HTTP on --host:--port
//
// Every stage except serve writes into <out>/<stage>-<config digest>. Exit
// status: 0 success, 1 stage failure, 2 usage or configuration error.

#include <CLI11.hpp>

#include <csignal>
#include <iostream>
#include <map>

#include "busi/data.hpp"
#include "busi/digest.hpp"
#include "busi/erroranalysis.hpp"
#include "busi/error.hpp"
#include "busi/intensity.hpp"
#include "busi/kv.hpp"
#include "busi/metrics.hpp"
#include "busi/model.hpp"
#include "busi/service.hpp"
#include "busi/tune.hpp"

namespace fs = std::filesystem;
using namespace busi;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Invocation {
  std::vector<fs::path> config_files;
  KeyValues overrides;
};

void add_kv(CLI::App* app, Invocation& inv, const std::string& flag, const std::string& key,
            const std::string& help) {
  app->add_option_function<std::string>(
      flag, [&inv, key](const std::string& v) { inv.overrides.set(key, v); }, help);
}

void add_switch(CLI::App* app, Invocation& inv, const std::string& flag, const std::string& key,
                const std::string& help) {
  app->add_flag_callback(flag, [&inv, key] { inv.overrides.set(key, true); }, help);
}

KeyValues resolve(const Invocation& inv) {
  KeyValues kv;
  for (const auto& file : inv.config_files) {
    kv.merge(KeyValues::parse(read_file_bytes(file), file.string()));
  }
  kv.merge(inv.overrides);
  return kv;
}

std::array<double, 3> parse_ratios(const std::string& text) {
  std::array<double, 3> r{};
  std::size_t start = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t comma = text.find(',', start);
    if ((i < 2) != (comma != std::string::npos)) {
      throw Error(ErrorKind::kConfig, "ratios must be three comma-separated numbers: '" + text + "'");
    }
    const std::string part = text.substr(start, comma == std::string::npos ? std::string::npos
                                                                           : comma - start);
    KeyValues tmp;
    tmp.set("r", part);
    r[i] = tmp.get_double("r");
    start = comma + 1;
  }
  return r;
}

std::string require_path(const KeyValues& kv, const std::string& key, const std::string& flag) {
  const std::string v = kv.get_or(key, "");
  if (v.empty()) throw UsageError("missing required " + flag + " (or '" + key + "' in --config)");
  return v;
}

fs::path run_dir(const KeyValues& kv, const std::string& stage) {
  const fs::path base = kv.get_or("paths.output", "runs");
  const fs::path dir = base / (stage + "-" + sha256_hex(kv.serialize()).substr(0, 12));
  fs::create_directories(dir);
  write_file_bytes(dir / "run_config.txt", kv.serialize());
  return dir;
}

RunConfig run_config(const KeyValues& kv) { return RunConfig::from_kv(kv); }

void print_summary(const KeyValues& summary) { std::cout << summary.serialize(); }

std::pair<TrainedClassifier, std::string> build_model(const RunConfig& rc) {
  TrainedClassifier m = build(rc.spec, rc.backbone, rc.training.seed);
  std::string sha;
  if (!rc.backbone.weights_path.empty()) {
    sha = sha256_file(rc.backbone.weights_path);
    if (!rc.backbone_sha256.empty() && rc.backbone_sha256 != sha) {
      throw Error(ErrorKind::kResource, "backbone weights hash " + sha +
                                            " differs from the pinned " + rc.backbone_sha256);
    }
  }
  return {std::move(m), sha};
}

int cmd_ingest(const KeyValues& kv) {
  const fs::path root = require_path(kv, "paths.dataset_root", "--root");
  const IngestResult result = ingest(root);
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
  fs::path manifest_path = kv.get_or("paths.manifest", "");
  const fs::path dir = run_dir(kv, "ingest");
  if (manifest_path.empty()) manifest_path = dir / "manifest.tsv";
  save_manifest(result.manifest, manifest_path);
  KeyValues s;
  s.set("manifest", manifest_path.string());
  s.set("raw_files", static_cast<std::uint64_t>(result.manifest.raw_file_count()));
  s.set("classifiable", static_cast<std::uint64_t>(result.manifest.classifiable_count()));
  for (ClassLabel l : kAllLabels) {
    s.set("count." + std::string(name_of(l)),
          static_cast<std::uint64_t>(result.manifest.class_counts[index_of(l)]));
  }
  s.set("run_dir", dir.string());
  print_summary(s);
  return 0;
}

int cmd_split(const KeyValues& kv) {
  const fs::path manifest_path = require_path(kv, "paths.manifest", "--manifest");
  SplitSpec spec;
  if (kv.has("split.ratios")) spec.ratios = parse_ratios(kv.get("split.ratios"));
  if (kv.has("split.seed")) spec.seed = kv.get_uint("split.seed");
  if (kv.has("split.stratified")) spec.stratified = kv.get_bool("split.stratified");
  spec.validate();
  DatasetManifest m = split(load_manifest(manifest_path), spec);
  if (kv.has("split.oversample") && kv.get_bool("split.oversample")) {
    m = oversample_train(m, kv.has("split.oversample_seed") ? kv.get_uint("split.oversample_seed")
                                                            : spec.seed);
  }
  const fs::path out = kv.get_or("paths.manifest_out", manifest_path.string());
  save_manifest(m, out);
  KeyValues s;
  s.set("manifest", out.string());
  for (Split sp : {Split::kTrain, Split::kValidation, Split::kTest}) {
    const std::string name(name_of(sp));
    s.set("split." + name, static_cast<std::uint64_t>(m.split_size(sp)));
    const auto counts = m.split_class_counts(sp);
    for (ClassLabel l : kAllLabels) {
      s.set("split." + name + "." + std::string(name_of(l)),
            static_cast<std::uint64_t>(counts[index_of(l)]));
    }
  }
  print_summary(s);
  return 0;
}

int cmd_train(KeyValues kv) {
  const DatasetManifest manifest = load_manifest(require_path(kv, "paths.manifest", "--manifest"));
  kv.set("manifest.digest", manifest_digest(manifest));
  RunConfig rc = run_config(kv);
  auto [model, sha] = build_model(rc);
  if (!sha.empty()) kv.set("backbone.sha256", sha);
  const fs::path dir = run_dir(kv, "train");
  model = train(std::move(model), manifest, rc.augment, rc.training,
                [](std::size_t epoch, const EpochRecord& e) {
                  std::cerr << "epoch " << epoch + 1 << " loss=" << format_double(e.train_loss)
                            << " acc=" << format_double(e.train_accuracy)
                            << " val_loss=" << format_double(e.val_loss)
                            << " val_acc=" << format_double(e.val_accuracy) << "\n";
                });
  save_classifier(model, dir / "checkpoint");
  write_file_bytes(dir / "history.tsv", model.history.to_tsv());
  KeyValues s;
  s.set("checkpoint", (dir / "checkpoint").string());
  s.set("model_version", model.version);
  s.set("epochs", static_cast<std::uint64_t>(model.history.epochs.size()));
  if (!model.history.epochs.empty()) {
    s.set("final.val_accuracy", model.history.epochs.back().val_accuracy);
    s.set("final.train_accuracy", model.history.epochs.back().train_accuracy);
  }
  s.set("run_dir", dir.string());
  print_summary(s);
  return 0;
}

int cmd_tune(KeyValues kv) {
  const DatasetManifest manifest = load_manifest(require_path(kv, "paths.manifest", "--manifest"));
  kv.set("manifest.digest", manifest_digest(manifest));
  const RunConfig rc = run_config(kv);
  const SearchSpace space = SearchSpace::from_kv(kv.with_prefix("tune.space."));
  const int budget = kv.has("tune.budget") ? static_cast<int>(kv.get_int("tune.budget")) : 10;
  const int trial_epochs =
      kv.has("tune.trial_epochs") ? static_cast<int>(kv.get_int("tune.trial_epochs")) : 5;
  const std::uint64_t seed = kv.has("tune.seed") ? kv.get_uint("tune.seed") : rc.training.seed;

  auto [probe, sha] = build_model(rc);
  if (!sha.empty()) kv.set("backbone.sha256", sha);
  const fs::path dir = run_dir(kv, "tune");
  SearchContext ctx;
  ctx.base_spec = rc.spec;
  ctx.base_training = rc.training;
  ctx.backbone = probe.backbone;
  ctx.backbone_provenance = probe.backbone_provenance;
  ctx.ledger_path = dir / "trials.tsv";
  ctx.on_trial = [](const TrialResult& t) {
    std::cerr << "trial " << t.index << " dropout=" << format_double(t.config.dropout_rate)
              << " lr=" << format_double(t.config.learning_rate) << " units=" << t.config.dense_units
              << " activation=" << name_of(t.config.activation)
              << " objective=" << format_double(t.objective) << " status=" << name_of(t.status)
              << "\n";
  };
  const SearchOutcome outcome = search(space, budget, trial_epochs, manifest, rc.augment, seed, ctx);

  RunConfig best = rc;
  best.spec = apply_trial(rc.spec, outcome.best.config);
  best.training = apply_trial(rc.training, outcome.best.config);
  best.backbone_sha256 = kv.get_or("backbone.sha256", "");
  write_file_bytes(dir / "best_config.txt", best.to_kv().serialize());
  KeyValues s;
  s.set("trials", (dir / "trials.tsv").string());
  s.set("best_config", (dir / "best_config.txt").string());
  s.set("best.index", static_cast<std::uint64_t>(outcome.best.index));
  s.set("best.objective", outcome.best.objective);
  s.set("best.dropout_rate", outcome.best.config.dropout_rate);
  s.set("best.learning_rate", outcome.best.config.learning_rate);
  s.set("best.dense_units", outcome.best.config.dense_units);
  s.set("best.activation", std::string(name_of(outcome.best.config.activation)));
  s.set("run_dir", dir.string());
  print_summary(s);
  return 0;
}

Split split_option(const KeyValues& kv) {
  const std::string name = kv.get_or("eval.split", "test");
  const auto sp = split_from_name(name);
  if (!sp || *sp == Split::kUnassigned) {
    throw Error(ErrorKind::kConfig, "unknown split '" + name + "' (train, validation, test)");
  }
  return *sp;
}

int cmd_evaluate(const KeyValues& kv) {
  const TrainedClassifier model =
      load_classifier(require_path(kv, "paths.checkpoint", "--checkpoint"));
  const DatasetManifest manifest = load_manifest(require_path(kv, "paths.manifest", "--manifest"));
  const Split sp = split_option(kv);
  if (manifest.split_size(sp) == 0) {
    throw Error(ErrorKind::kInput, "split '" + std::string(name_of(sp)) + "' is empty");
  }
  const SplitPredictions preds = predict_split(model, manifest, sp);
  const EvaluationReport report = evaluate(preds.probabilities, preds.labels);
  const fs::path dir = run_dir(kv, "evaluate");
  write_report(report, dir);
  KeyValues s;
  s.set("report", (dir / "report.json").string());
  s.set("model_version", model.version);
  s.set("split", std::string(name_of(sp)));
  s.set("n", static_cast<std::uint64_t>(preds.labels.size()));
  s.set("accuracy", report.accuracy);
  s.set("mcc", report.mcc.value);
  s.set("roc_auc_macro", report.roc_auc_macro);
  s.set("pr_auc_macro", report.pr_auc_macro);
  s.set("run_dir", dir.string());
  print_summary(s);
  return 0;
}

int cmd_intensity(const KeyValues& kv) {
  DatasetManifest manifest;
  if (kv.has("paths.manifest")) {
    manifest = load_manifest(kv.get("paths.manifest"));
  } else {
    const IngestResult r = ingest(require_path(kv, "paths.dataset_root", "--root or --manifest"));
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
    manifest = r.manifest;
  }
  const std::size_t bins =
      kv.has("intensity.bins") ? static_cast<std::size_t>(kv.get_uint("intensity.bins")) : 50;
  const IntensityReport report = intensity_report(manifest, bins);
  const fs::path dir = run_dir(kv, "intensity");
  write_report(report, dir);
  for (const auto& gap : report.gaps) std::cerr << "warning: " << gap << "\n";
  KeyValues s;
  s.set("report", (dir / "intensity.json").string());
  for (ClassLabel l : kAllLabels) {
    if (const auto& st = report.classes[index_of(l)]) {
      s.set("median." + std::string(name_of(l)), st->median);
      s.set("n." + std::string(name_of(l)), static_cast<std::uint64_t>(st->n));
    }
  }
  std::string order;
  for (ClassLabel l : report.median_order) order += (order.empty() ? "" : "<") + std::string(name_of(l));
  s.set("median_order", order);
  s.set("skew", std::string(name_of(report.skew)));
  s.set("run_dir", dir.string());
  print_summary(s);
  return 0;
}

int cmd_errors(const KeyValues& kv) {
  const TrainedClassifier model =
      load_classifier(require_path(kv, "paths.checkpoint", "--checkpoint"));
  const DatasetManifest manifest = load_manifest(require_path(kv, "paths.manifest", "--manifest"));
  const Split sp = split_option(kv);
  const ErrorReport report = analyze(model, manifest, sp);
  const fs::path dir = run_dir(kv, "errors");
  export_gallery(report, dir / "gallery");
  KeyValues s;
  s.set("gallery", (dir / "gallery").string());
  s.set("evaluated", static_cast<std::uint64_t>(report.evaluated));
  s.set("misclassified", static_cast<std::uint64_t>(report.entries.size()));
  for (const auto& [pair, count] : report.pair_counts) {
    s.set("pair." + std::string(name_of(pair.first)) + "->" + std::string(name_of(pair.second)),
          static_cast<std::uint64_t>(count));
  }
  s.set("run_dir", dir.string());
  print_summary(s);
  return 0;
}

PredictionServer* g_server = nullptr;

int cmd_serve(const KeyValues& kv) {
  ServiceConfig cfg;
  cfg.checkpoint = require_path(kv, "paths.checkpoint", "--checkpoint");
  cfg.host = kv.get_or("service.host", cfg.host);
  if (kv.has("service.port")) cfg.port = static_cast<int>(kv.get_int("service.port"));
  if (kv.has("service.max_upload_bytes")) {
    cfg.max_upload_bytes = static_cast<std::size_t>(kv.get_uint("service.max_upload_bytes"));
  }
  cfg.cors_origin = kv.get_or("service.cors_origin", cfg.cors_origin);
  cfg.validate();
  auto service =
      std::make_shared<const PredictionService>(PredictionService::from_checkpoint(cfg.checkpoint));
  PredictionServer server(service, cfg);
  const int port = server.bind();
  std::cout << "listening=" << cfg.host << ":" << port << "\n"
            << "model_version=" << service->model().version << "\n"
            << std::flush;
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  server.serve();
  g_server = nullptr;
  return 0;
}

void add_model_options(CLI::App* app, Invocation& inv) {
  add_kv(app, inv, "--weights", "backbone.weights_path", "Backbone weight archive (tensor archive)");
  add_switch(app, inv, "--random-backbone", "backbone.allow_random_init",
             "Use a seeded, calibrated random backbone when no weights are available");
  add_kv(app, inv, "--backbone-seed", "backbone.random_seed", "Seed for --random-backbone");
  add_kv(app, inv, "--input-size", "model.input_height", "Input height (and width unless --input-width)");
  add_kv(app, inv, "--input-width", "model.input_width", "Input width");
  add_kv(app, inv, "--units", "model.dense_units", "Dense units in the head");
  add_kv(app, inv, "--dropout", "model.dropout_rate", "Dropout rate in [0,1)");
  add_kv(app, inv, "--activation", "model.head_activation", "Head activation: relu or tanh");
  add_kv(app, inv, "--unfreeze", "model.unfreeze_trailing_blocks",
         "Trailing backbone units left trainable (0-19)");
  add_kv(app, inv, "--epochs", "training.epochs", "Training epochs");
  add_kv(app, inv, "--batch-size", "training.batch_size", "Batch size");
  add_kv(app, inv, "--lr", "training.learning_rate", "Learning rate");
  add_kv(app, inv, "--optimizer", "training.optimizer", "adam or sgd");
  add_kv(app, inv, "--seed", "training.seed", "Training seed (head init, dropout)");
  add_kv(app, inv, "--patience", "training.early_stopping_patience",
         "Early stopping patience on val_loss (0 = off)");
  add_kv(app, inv, "--augment-seed", "augment.seed", "Augmentation stream seed");
  add_kv(app, inv, "--rotation", "augment.rotation_max_deg", "Max rotation in degrees");
  add_kv(app, inv, "--shift", "augment.shift_fraction", "Max shift as a fraction of size");
  add_kv(app, inv, "--shear", "augment.shear_fraction", "Max shear coefficient");
  add_kv(app, inv, "--flip", "augment.horizontal_flip", "Horizontal flip (true/false)");
  add_kv(app, inv, "--fill-mode", "augment.fill_mode", "nearest, reflect or constant");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Breast ultrasound tumor classification pipeline", "busi"};
  app.require_subcommand(1);
  Invocation inv;
  app.add_option("--config", inv.config_files, "key=value config file(s); flags override")
      ->check(CLI::ExistingFile);
  add_kv(&app, inv, "--out", "paths.output", "Base output directory (default runs)");

  auto* ingest_cmd = app.add_subcommand("ingest", "Scan a dataset root into a manifest");
  add_kv(ingest_cmd, inv, "--root", "paths.dataset_root", "Dataset root with class folders");
  add_kv(ingest_cmd, inv, "--manifest", "paths.manifest", "Manifest output path");

  auto* split_cmd = app.add_subcommand("split", "Stratified train/validation/test split");
  add_kv(split_cmd, inv, "--manifest", "paths.manifest", "Manifest to update");
  add_kv(split_cmd, inv, "--output", "paths.manifest_out", "Write here instead of in place");
  add_kv(split_cmd, inv, "--ratios", "split.ratios", "train,validation,test (default 0.64,0.16,0.20)");
  add_kv(split_cmd, inv, "--seed", "split.seed", "Split seed");
  add_switch(split_cmd, inv, "--oversample", "split.oversample", "Balance train classes by duplication");
  add_kv(split_cmd, inv, "--oversample-seed", "split.oversample_seed", "Oversampling seed");

  auto* train_cmd = app.add_subcommand("train", "Train the classifier");
  add_kv(train_cmd, inv, "--manifest", "paths.manifest", "Split manifest");
  add_model_options(train_cmd, inv);

  auto* tune_cmd = app.add_subcommand("tune", "Random hyperparameter search");
  add_kv(tune_cmd, inv, "--manifest", "paths.manifest", "Split manifest");
  add_kv(tune_cmd, inv, "--budget", "tune.budget", "Number of trials (default 10)");
  add_kv(tune_cmd, inv, "--trial-epochs", "tune.trial_epochs", "Epochs per trial (default 5)");
  add_kv(tune_cmd, inv, "--tune-seed", "tune.seed", "Search seed (default training seed)");
  add_model_options(tune_cmd, inv);

  auto* eval_cmd = app.add_subcommand("evaluate", "Metrics report for a split");
  add_kv(eval_cmd, inv, "--checkpoint", "paths.checkpoint", "Checkpoint directory");
  add_kv(eval_cmd, inv, "--manifest", "paths.manifest", "Split manifest");
  add_kv(eval_cmd, inv, "--split", "eval.split", "train, validation or test (default test)");

  auto* intensity_cmd = app.add_subcommand("intensity", "Per-class intensity statistics");
  add_kv(intensity_cmd, inv, "--manifest", "paths.manifest", "Manifest");
  add_kv(intensity_cmd, inv, "--root", "paths.dataset_root", "Dataset root (instead of a manifest)");
  add_kv(intensity_cmd, inv, "--bins", "intensity.bins", "Histogram bins (default 50)");

  auto* errors_cmd = app.add_subcommand("errors", "Misclassification report and gallery");
  add_kv(errors_cmd, inv, "--checkpoint", "paths.checkpoint", "Checkpoint directory");
  add_kv(errors_cmd, inv, "--manifest", "paths.manifest", "Split manifest");
  add_kv(errors_cmd, inv, "--split", "eval.split", "train, validation or test (default test)");

  auto* serve_cmd = app.add_subcommand("serve", "HTTP prediction service");
  add_kv(serve_cmd, inv, "--checkpoint", "paths.checkpoint", "Checkpoint directory");
  add_kv(serve_cmd, inv, "--host", "service.host", "Listen address (default 127.0.0.1)");
  add_kv(serve_cmd, inv, "--port", "service.port", "Listen port (default 8080, 0 = any)");
  add_kv(serve_cmd, inv, "--max-upload-bytes", "service.max_upload_bytes", "Upload limit (default 10 MiB)");
  add_kv(serve_cmd, inv, "--cors-origin", "service.cors_origin", "Access-Control-Allow-Origin value");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const CLI::App* sub = app.get_subcommands().front();
  const std::string stage = sub->get_name();
  KeyValues kv;
  try {
    kv = resolve(inv);
    if (kv.has("model.input_height") && !inv.overrides.has("model.input_width") &&
        !kv.has("model.input_width")) {
      kv.set("model.input_width", kv.get("model.input_height"));
    }
    if (kv.has("model.input_height")) kv.set("augment.target_height", kv.get("model.input_height"));
    if (kv.has("model.input_width")) kv.set("augment.target_width", kv.get("model.input_width"));
    if (stage == "train" || stage == "tune") run_config(kv);
  } catch (const UsageError& e) {
    std::cerr << "error stage=" << stage << " kind=usage message=" << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error stage=" << stage << " kind=" << to_string(e.kind())
              << " message=" << e.what() << "\n";
    return 2;
  }

  try {
    if (stage == "ingest") return cmd_ingest(kv);
    if (stage == "split") return cmd_split(kv);
    if (stage == "train") return cmd_train(kv);
    if (stage == "tune") return cmd_tune(kv);
    if (stage == "evaluate") return cmd_evaluate(kv);
    if (stage == "intensity") return cmd_intensity(kv);
    if (stage == "errors") return cmd_errors(kv);
    if (stage == "serve") return cmd_serve(kv);
  } catch (const UsageError& e) {
    std::cerr << "error stage=" << stage << " kind=usage message=" << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error stage=" << stage << " kind=" << to_string(e.kind())
              << " message=" << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error stage=" << stage << " kind=internal message=" << e.what() << "\n";
    return 1;
  }
  return 2;
}
