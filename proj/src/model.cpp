#include "busi/model.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "busi/digest.hpp"
#include "busi/error.hpp"
#include "busi/rng.hpp"

namespace busi {

namespace {

constexpr std::uint64_t kDropoutStream = 0x44524F504F5554ULL;

template <typename T>
T require_range(T value, T lo, T hi, const char* what) {
  if (!(value >= lo && value <= hi)) {
    std::ostringstream msg;
    msg << what << " must be in [" << lo << ", " << hi << "], got " << value;
    throw Error(ErrorKind::kSpec, msg.str());
  }
  return value;
}

ProbabilityRow to_probabilities(const Logits& z) {
  const std::array<double, kNumClasses> zd{z[0], z[1], z[2]};
  return softmax(zd);
}

std::string compute_version(const TrainedClassifier& m) {
  const std::string digest = sha256_hex(m.backbone_digest() + ":" + m.head_digest());
  return "mnv2-" + digest.substr(0, 16);
}

TensorMap head_tensors(const DenseHead& head) {
  TensorMap t;
  auto put = [&](const std::string& name, const float* p, std::uint64_t rows, std::uint64_t cols) {
    Tensor x;
    x.shape = {rows, cols};
    x.values.assign(p, p + rows * cols);
    t.emplace(name, std::move(x));
  };
  put("head/w1", head.w1.data(), head.w1.rows(), head.w1.cols());
  put("head/b1", head.b1.data(), 1, head.b1.size());
  put("head/w2", head.w2.data(), head.w2.rows(), head.w2.cols());
  put("head/b2", head.b2.data(), 1, head.b2.size());
  return t;
}

void fill_from(const TensorMap& t, const std::string& name, float* dst, std::size_t count) {
  auto it = t.find(name);
  if (it == t.end()) throw Error(ErrorKind::kLoad, "checkpoint: missing tensor " + name);
  if (it->second.values.size() != count) {
    throw Error(ErrorKind::kLoad, "checkpoint: tensor " + name + " has " +
                                      std::to_string(it->second.values.size()) +
                                      " values, expected " + std::to_string(count));
  }
  std::copy(it->second.values.begin(), it->second.values.end(), dst);
}

struct ValidationSet {
  MatrixRM features;  // n x F
  std::vector<int> labels;
};

ValidationSet validation_features(const MobileNetV2& backbone, const DatasetManifest& manifest,
                                  const AugmentConfig& eval) {
  ValidationSet v;
  if (manifest.split_size(Split::kValidation) == 0) return v;
  BatchStream stream(manifest, Split::kValidation, eval, 32, 1, StreamMode::kRescaleOnly);
  const std::size_t f = MobileNetV2::feature_length(eval.target_height, eval.target_width);
  v.features.resize(static_cast<Eigen::Index>(stream.split_size()), static_cast<Eigen::Index>(f));
  Eigen::Index row = 0;
  while (auto batch = stream.next()) {
    for (std::size_t i = 0; i < batch->batch; ++i, ++row) {
      const auto feats = backbone.features(batch->image(i), batch->height, batch->width);
      v.features.row(row) = Eigen::Map<const RowVec>(feats.data(), static_cast<Eigen::Index>(f));
      v.labels.push_back(batch->label_indices[i]);
    }
  }
  return v;
}

void evaluate_validation(const DenseHead& head, const ValidationSet& v, EpochRecord& rec) {
  if (v.labels.empty()) return;
  double loss = 0.0;
  std::vector<int> predicted;
  predicted.reserve(v.labels.size());
  for (std::size_t i = 0; i < v.labels.size(); ++i) {
    const Logits z = head.logits(v.features.row(static_cast<Eigen::Index>(i)).data());
    const std::array<double, kNumClasses> zd{z[0], z[1], z[2]};
    loss += cross_entropy(zd, static_cast<std::size_t>(v.labels[i]));
    predicted.push_back(static_cast<int>(argmax(zd)));
  }
  const auto m = confusion(v.labels, predicted);
  const auto pr = precision_recall(m);
  rec.val_loss = loss / static_cast<double>(v.labels.size());
  rec.val_accuracy = accuracy(m);
  rec.val_precision = pr.precision_macro;
  rec.val_recall = pr.recall_macro;
}

}  // namespace

void ClassifierSpec::validate() const {
  if (backbone != kBackboneId) {
    throw Error(ErrorKind::kSpec, "unsupported backbone '" + backbone + "'");
  }
  if (input_channels != 3 || input_height < 32 || input_width < 32) {
    throw Error(ErrorKind::kSpec, "incompatible input shape (" + std::to_string(input_height) +
                                      "," + std::to_string(input_width) + "," +
                                      std::to_string(input_channels) +
                                      "): need 3 channels and at least 32x32");
  }
  if (output_classes != kNumClasses) {
    throw Error(ErrorKind::kSpec, "output_classes must be 3");
  }
  require_range(dense_units, 1, 1 << 16, "dense_units");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw Error(ErrorKind::kSpec, "dropout_rate must be in [0,1)");
  }
  require_range(unfreeze_trailing_blocks, 0, MobileNetV2::kUnitCount, "unfreeze_trailing_blocks");
}

int ClassifierSpec::first_trainable_unit() const {
  return freeze_backbone ? MobileNetV2::kUnitCount - unfreeze_trailing_blocks : 0;
}

KeyValues ClassifierSpec::to_kv() const {
  KeyValues kv;
  kv.set("input_height", input_height);
  kv.set("input_width", input_width);
  kv.set("input_channels", input_channels);
  kv.set("backbone", backbone);
  kv.set("freeze_backbone", freeze_backbone);
  kv.set("unfreeze_trailing_blocks", unfreeze_trailing_blocks);
  kv.set("dense_units", dense_units);
  kv.set("dropout_rate", dropout_rate);
  kv.set("head_activation", std::string(name_of(head_activation)));
  kv.set("output_classes", output_classes);
  return kv;
}

ClassifierSpec ClassifierSpec::from_kv(const KeyValues& kv) {
  ClassifierSpec s;
  auto get_int = [&](const char* k, int& dst) {
    if (kv.has(k)) dst = static_cast<int>(kv.get_int(k));
  };
  get_int("input_height", s.input_height);
  get_int("input_width", s.input_width);
  get_int("input_channels", s.input_channels);
  if (kv.has("backbone")) s.backbone = kv.get("backbone");
  if (kv.has("freeze_backbone")) s.freeze_backbone = kv.get_bool("freeze_backbone");
  get_int("unfreeze_trailing_blocks", s.unfreeze_trailing_blocks);
  get_int("dense_units", s.dense_units);
  if (kv.has("dropout_rate")) s.dropout_rate = kv.get_double("dropout_rate");
  if (kv.has("head_activation")) {
    s.head_activation = head_activation_from_name(kv.get("head_activation"));
  }
  get_int("output_classes", s.output_classes);
  s.validate();
  return s;
}

void TrainingConfig::validate() const {
  if (epochs < 1) throw Error(ErrorKind::kConfig, "epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorKind::kConfig, "batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorKind::kConfig, "learning_rate must be > 0");
  }
  if (early_stopping_patience < 0) {
    throw Error(ErrorKind::kConfig, "early_stopping_patience must be >= 0");
  }
}

KeyValues TrainingConfig::to_kv() const {
  KeyValues kv;
  kv.set("epochs", epochs);
  kv.set("batch_size", batch_size);
  kv.set("learning_rate", learning_rate);
  kv.set("optimizer", std::string(name_of(optimizer)));
  kv.set("loss", "categorical_crossentropy");
  kv.set("seed", seed);
  kv.set("early_stopping_patience", early_stopping_patience);
  return kv;
}

TrainingConfig TrainingConfig::from_kv(const KeyValues& kv) {
  TrainingConfig c;
  if (kv.has("epochs")) c.epochs = static_cast<int>(kv.get_int("epochs"));
  if (kv.has("batch_size")) c.batch_size = static_cast<int>(kv.get_int("batch_size"));
  if (kv.has("learning_rate")) c.learning_rate = kv.get_double("learning_rate");
  if (kv.has("optimizer")) c.optimizer = optimizer_from_name(kv.get("optimizer"));
  if (kv.has("loss") && kv.get("loss") != "categorical_crossentropy") {
    throw Error(ErrorKind::kConfig, "loss is fixed to categorical_crossentropy");
  }
  if (kv.has("seed")) c.seed = kv.get_uint("seed");
  if (kv.has("early_stopping_patience")) {
    c.early_stopping_patience = static_cast<int>(kv.get_int("early_stopping_patience"));
  }
  c.validate();
  return c;
}

std::string TrainingHistory::to_tsv() const {
  std::string out =
      "epoch\ttrain_loss\ttrain_accuracy\tval_loss\tval_accuracy\tval_precision\tval_recall\n";
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto& e = epochs[i];
    out += std::to_string(i + 1);
    for (double v : {e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy, e.val_precision,
                     e.val_recall}) {
      out += '\t';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

TrainingHistory TrainingHistory::from_tsv(std::string_view text, std::string_view source) {
  TrainingHistory h;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    std::array<double, 7> v{};
    std::size_t field = 0;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      const std::string_view cell = line.substr(start, tab == std::string_view::npos
                                                           ? std::string_view::npos
                                                           : tab - start);
      if (field >= v.size()) field = v.size() + 1;
      else {
        auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v[field]);
        if (ec != std::errc() || p != cell.data() + cell.size()) {
          throw Error(ErrorKind::kParse, std::string(source) + ":" + std::to_string(line_no) +
                                             ": bad number '" + std::string(cell) + "'");
        }
        ++field;
      }
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (field != v.size()) {
      throw Error(ErrorKind::kParse, std::string(source) + ":" + std::to_string(line_no) +
                                         ": expected 7 columns");
    }
    h.epochs.push_back({v[1], v[2], v[3], v[4], v[5], v[6]});
  }
  return h;
}

std::vector<float> TrainedClassifier::features(const float* raster) const {
  return backbone->features(raster, spec.input_height, spec.input_width);
}

Logits TrainedClassifier::logits(const float* raster) const {
  return head.logits(features(raster).data());
}

ProbabilityMatrix TrainedClassifier::predict_batch(const RasterBatchView& r) const {
  const std::size_t per = static_cast<std::size_t>(spec.input_height) * spec.input_width *
                          spec.input_channels;
  if (r.height != spec.input_height || r.width != spec.input_width ||
      r.channels != spec.input_channels || r.data.size() != r.count * per) {
    std::ostringstream msg;
    msg << "predict_batch: expected (n," << spec.input_height << "," << spec.input_width << ","
        << spec.input_channels << "), received (" << r.count << "," << r.height << "," << r.width
        << "," << r.channels << ") with " << r.data.size() << " values";
    throw Error(ErrorKind::kShape, msg.str());
  }
  ProbabilityMatrix out;
  out.reserve(r.count);
  for (std::size_t i = 0; i < r.count; ++i) {
    out.push_back(to_probabilities(logits(r.data.data() + i * per)));
  }
  return out;
}

ProbabilityRow TrainedClassifier::predict_one(const Raster& raster) const {
  return predict_batch({raster.data, 1, raster.height, raster.width, raster.channels}).front();
}

AugmentConfig TrainedClassifier::eval_augment_config() const {
  AugmentConfig c = AugmentConfig::identity();
  c.target_height = preprocessing.target_height;
  c.target_width = preprocessing.target_width;
  c.rescale_factor = preprocessing.rescale_factor;
  return c;
}

std::string TrainedClassifier::head_digest() const {
  return sha256_hex(encode_tensors(head_tensors(head)));
}

TrainedClassifier build(const ClassifierSpec& spec, std::shared_ptr<const MobileNetV2> backbone,
                        std::string provenance, std::uint64_t head_seed) {
  spec.validate();
  TrainedClassifier m;
  m.spec = spec;
  m.backbone = std::move(backbone);
  m.backbone_provenance = std::move(provenance);
  m.head = DenseHead::initialized(MobileNetV2::feature_length(spec.input_height, spec.input_width),
                                  spec.dense_units, spec.head_activation, spec.dropout_rate,
                                  head_seed);
  m.preprocessing.target_height = spec.input_height;
  m.preprocessing.target_width = spec.input_width;
  m.version = compute_version(m);
  return m;
}

TrainedClassifier build(const ClassifierSpec& spec, const BackboneSource& source,
                        std::uint64_t head_seed) {
  spec.validate();
  if (!source.weights_path.empty()) {
    if (!std::filesystem::exists(source.weights_path)) {
      throw Error(ErrorKind::kResource,
                  "backbone weights unavailable: " + source.weights_path.string());
    }
    auto net = std::make_shared<const MobileNetV2>(
        MobileNetV2::from_file(source.weights_path.string()));
    return build(spec, std::move(net), "weights:" + sha256_file(source.weights_path), head_seed);
  }
  if (!source.allow_random_init) {
    throw Error(ErrorKind::kResource,
                "backbone weights unavailable: no weights file given and random init not allowed");
  }
  auto net = std::make_shared<const MobileNetV2>(
      MobileNetV2::random_calibrated(source.random_seed, spec.input_height, spec.input_width));
  return build(spec, std::move(net), "random:" + std::to_string(source.random_seed), head_seed);
}

TrainedClassifier train(TrainedClassifier model, const DatasetManifest& manifest,
                        const AugmentConfig& augment, const TrainingConfig& config,
                        const EpochCallback& on_epoch) {
  if (config.epochs == 0) return model;
  config.validate();
  augment.validate();
  if (!manifest.is_split()) throw Error(ErrorKind::kState, "train: manifest is not split");
  if (augment.target_height != model.spec.input_height ||
      augment.target_width != model.spec.input_width) {
    throw Error(ErrorKind::kSpec, "train: augment target size does not match the model input");
  }

  const int first = model.spec.first_trainable_unit();
  const bool backbone_trainable = first < MobileNetV2::kUnitCount;
  std::shared_ptr<MobileNetV2> trainable;
  if (backbone_trainable) trainable = std::make_shared<MobileNetV2>(*model.backbone);
  const MobileNetV2& net = backbone_trainable ? *trainable : *model.backbone;

  const int h = model.spec.input_height, w = model.spec.input_width;
  const auto f = static_cast<Eigen::Index>(MobileNetV2::feature_length(h, w));
  const auto [oh, ow] = MobileNetV2::output_size(h, w);

  AugmentConfig eval = model.eval_augment_config();
  eval.seed = augment.seed;
  ValidationSet val;
  if (!backbone_trainable) val = validation_features(net, manifest, eval);

  Optimizer optimizer(config.optimizer, config.learning_rate);
  BatchStream stream(manifest, Split::kTrain, augment, static_cast<std::size_t>(config.batch_size),
                     static_cast<std::size_t>(config.epochs), StreamMode::kAugmented);
  const std::size_t per_epoch = stream.batches_per_epoch();

  auto head_grads = model.head.make_grads();
  BackboneGrads bb_grads;
  if (backbone_trainable) bb_grads = net.make_grads(first);

  double best_val_loss = std::numeric_limits<double>::infinity();
  int stale = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      auto batch = stream.next();
      if (!batch) throw Error(ErrorKind::kStream, "train: stream ended early");
      const auto n = static_cast<Eigen::Index>(batch->batch);
      MatrixRM feats(n, f);
      std::vector<std::vector<UnitCache>> caches(batch->batch);
      for (Eigen::Index i = 0; i < n; ++i) {
        FeatureMap x = net.input_map(batch->image(static_cast<std::size_t>(i)), h, w);
        x = net.forward(std::move(x), 0, first);
        x = net.forward(std::move(x), first, MobileNetV2::kUnitCount,
                        backbone_trainable ? &caches[static_cast<std::size_t>(i)] : nullptr);
        feats.row(i) = Eigen::Map<const RowVec>(x.data.data(), f);
      }
      DenseHead::TrainCache cache;
      const MatrixRM logits = model.head.forward_train(
          feats, mix_seed({config.seed, kDropoutStream, static_cast<std::uint64_t>(epoch), b}),
          cache);
      MatrixRM grad_logits(n, static_cast<Eigen::Index>(kNumClasses));
      double batch_loss = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const std::array<double, kNumClasses> z{logits(i, 0), logits(i, 1), logits(i, 2)};
        const auto label = static_cast<std::size_t>(batch->label_indices[static_cast<std::size_t>(i)]);
        batch_loss += cross_entropy(z, label);
        if (argmax(z) == label) ++correct;
        const auto g = cross_entropy_grad(z, label);
        for (std::size_t k = 0; k < kNumClasses; ++k) {
          grad_logits(i, static_cast<Eigen::Index>(k)) =
              static_cast<float>(g[k] / static_cast<double>(n));
        }
      }
      if (!std::isfinite(batch_loss)) {
        throw Error(ErrorKind::kDiverged, "training diverged: non-finite loss at epoch " +
                                              std::to_string(epoch + 1) + ", batch " +
                                              std::to_string(b + 1));
      }
      loss_sum += batch_loss;
      seen += batch->batch;

      head_grads.w1.setZero();
      head_grads.b1.setZero();
      head_grads.w2.setZero();
      head_grads.b2.setZero();
      const MatrixRM feat_grad =
          model.head.backward(feats, cache, grad_logits, head_grads, backbone_trainable);
      auto params = model.head.parameters();
      auto grads = DenseHead::gradient_spans(head_grads);
      if (backbone_trainable) {
        bb_grads.zero();
        for (Eigen::Index i = 0; i < n; ++i) {
          MatrixRM g = Eigen::Map<const MatrixRM>(feat_grad.row(i).data(),
                                                  static_cast<Eigen::Index>(oh) * ow,
                                                  MobileNetV2::kFeatureChannels);
          net.backward(caches[static_cast<std::size_t>(i)], std::move(g), bb_grads);
        }
        auto bp = trainable->parameters(first);
        auto bg = MobileNetV2::gradient_spans(bb_grads);
        params.insert(params.end(), bp.begin(), bp.end());
        grads.insert(grads.end(), bg.begin(), bg.end());
      }
      optimizer.step(params, grads);
    }

    EpochRecord rec;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    if (backbone_trainable) val = validation_features(net, manifest, eval);
    evaluate_validation(model.head, val, rec);
    model.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(static_cast<std::size_t>(epoch), rec);

    if (config.early_stopping_patience > 0 && !val.labels.empty()) {
      if (rec.val_loss < best_val_loss) {
        best_val_loss = rec.val_loss;
        stale = 0;
      } else if (++stale >= config.early_stopping_patience) {
        break;
      }
    }
  }
  if (backbone_trainable) model.backbone = trainable;
  model.version = compute_version(model);
  return model;
}

SplitPredictions predict_split(const TrainedClassifier& model, const DatasetManifest& manifest,
                               Split split) {
  SplitPredictions out;
  if (manifest.split_size(split) == 0) return out;
  BatchStream stream(manifest, split, model.eval_augment_config(), 32, 1, StreamMode::kRescaleOnly);
  out.records = stream.records();
  while (auto batch = stream.next()) {
    const auto rows = model.predict_batch(
        {batch->pixels, batch->batch, batch->height, batch->width, 3});
    out.probabilities.insert(out.probabilities.end(), rows.begin(), rows.end());
    out.labels.insert(out.labels.end(), batch->label_indices.begin(), batch->label_indices.end());
  }
  return out;
}

KeyValues RunConfig::to_kv() const {
  KeyValues kv;
  kv.merge(spec.to_kv(), "model.");
  kv.merge(training.to_kv(), "training.");
  kv.merge(augment.to_kv(), "augment.");
  kv.set("backbone.weights_path", backbone.weights_path.string());
  kv.set("backbone.allow_random_init", backbone.allow_random_init);
  kv.set("backbone.random_seed", backbone.random_seed);
  kv.set("backbone.sha256", backbone_sha256);
  kv.set("manifest.digest", manifest_digest);
  return kv;
}

RunConfig RunConfig::from_kv(const KeyValues& kv) {
  RunConfig r;
  r.spec = ClassifierSpec::from_kv(kv.with_prefix("model."));
  r.training = TrainingConfig::from_kv(kv.with_prefix("training."));
  r.augment = AugmentConfig::from_kv(kv.with_prefix("augment."));
  r.backbone.weights_path = kv.get_or("backbone.weights_path", "");
  if (kv.has("backbone.allow_random_init")) {
    r.backbone.allow_random_init = kv.get_bool("backbone.allow_random_init");
  }
  if (kv.has("backbone.random_seed")) r.backbone.random_seed = kv.get_uint("backbone.random_seed");
  r.backbone_sha256 = kv.get_or("backbone.sha256", "");
  r.manifest_digest = kv.get_or("manifest.digest", "");
  return r;
}

void save_classifier(const TrainedClassifier& model, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());

  TensorMap tensors = model.backbone->to_tensors();
  tensors.merge(head_tensors(model.head));
  const std::string weights = encode_tensors(tensors);
  write_file_bytes(dir / "weights.bin", weights);

  KeyValues spec = model.spec.to_kv();
  spec.set("preprocessing.target_height", model.preprocessing.target_height);
  spec.set("preprocessing.target_width", model.preprocessing.target_width);
  spec.set("preprocessing.rescale_factor", model.preprocessing.rescale_factor);
  spec.set("backbone_provenance", model.backbone_provenance);
  write_file_bytes(dir / "spec.txt", spec.serialize());
  write_file_bytes(dir / "history.tsv", model.history.to_tsv());

  KeyValues version;
  version.set("format", kCheckpointFormat);
  version.set("version", model.version);
  version.set("weights_sha256", sha256_hex(weights));
  write_file_bytes(dir / "VERSION", version.serialize());
}

TrainedClassifier load_classifier(const std::filesystem::path& dir) {
  std::string version_label = "unknown";
  try {
    if (!std::filesystem::is_directory(dir)) {
      throw Error(ErrorKind::kLoad, "checkpoint directory not found: " + dir.string());
    }
    const KeyValues version =
        KeyValues::parse(read_file_bytes(dir / "VERSION"), (dir / "VERSION").string());
    version_label = version.get_or("version", "unknown");
    const std::int64_t format = version.get_int("format");
    if (format != kCheckpointFormat) {
      throw Error(ErrorKind::kLoad, "checkpoint format " + std::to_string(format) +
                                        " is not supported (expected " +
                                        std::to_string(kCheckpointFormat) + ")");
    }
    const std::string weights = read_file_bytes(dir / "weights.bin");
    if (sha256_hex(weights) != version.get("weights_sha256")) {
      throw Error(ErrorKind::kLoad, "weights.bin does not match its recorded digest");
    }
    const KeyValues spec_kv =
        KeyValues::parse(read_file_bytes(dir / "spec.txt"), (dir / "spec.txt").string());

    TrainedClassifier m;
    KeyValues spec_only;
    for (const auto& [k, v] : spec_kv.entries()) {
      if (k.rfind("preprocessing.", 0) != 0 && k != "backbone_provenance") spec_only.set(k, v);
    }
    m.spec = ClassifierSpec::from_kv(spec_only);
    m.preprocessing.target_height =
        static_cast<int>(spec_kv.get_int("preprocessing.target_height"));
    m.preprocessing.target_width = static_cast<int>(spec_kv.get_int("preprocessing.target_width"));
    m.preprocessing.rescale_factor = spec_kv.get_double("preprocessing.rescale_factor");
    m.backbone_provenance = spec_kv.get_or("backbone_provenance", "");

    TensorMap tensors = decode_tensors(weights, (dir / "weights.bin").string());
    m.backbone = std::make_shared<const MobileNetV2>(MobileNetV2::from_tensors(tensors));
    const auto f = static_cast<Eigen::Index>(
        MobileNetV2::feature_length(m.spec.input_height, m.spec.input_width));
    m.head.activation = m.spec.head_activation;
    m.head.dropout_rate = m.spec.dropout_rate;
    m.head.w1.resize(f, m.spec.dense_units);
    m.head.b1.resize(m.spec.dense_units);
    m.head.w2.resize(m.spec.dense_units, static_cast<Eigen::Index>(kNumClasses));
    m.head.b2.resize(static_cast<Eigen::Index>(kNumClasses));
    fill_from(tensors, "head/w1", m.head.w1.data(), static_cast<std::size_t>(m.head.w1.size()));
    fill_from(tensors, "head/b1", m.head.b1.data(), static_cast<std::size_t>(m.head.b1.size()));
    fill_from(tensors, "head/w2", m.head.w2.data(), static_cast<std::size_t>(m.head.w2.size()));
    fill_from(tensors, "head/b2", m.head.b2.data(), static_cast<std::size_t>(m.head.b2.size()));

    m.history = TrainingHistory::from_tsv(read_file_bytes(dir / "history.tsv"),
                                          (dir / "history.tsv").string());
    m.version = version_label;
    return m;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kLoad && std::string_view(e.what()).find("version ") == 0) throw;
    throw Error(ErrorKind::kLoad, "version " + version_label + ": " + e.what());
  }
}

}  // namespace busi
