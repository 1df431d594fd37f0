#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "busi/augment.hpp"
#include "busi/backbone.hpp"
#include "busi/data.hpp"
#include "busi/head.hpp"
#include "busi/kv.hpp"
#include "busi/metrics.hpp"

namespace busi {

inline constexpr std::string_view kBackboneId = "mobilenet_v2_imagenet_notop";

struct ClassifierSpec {
  int input_height = 150;
  int input_width = 150;
  int input_channels = 3;
  std::string backbone{kBackboneId};
  bool freeze_backbone = true;
  // With freeze_backbone, this many trailing backbone units (top conv first,
  // then inverted-residual blocks) stay trainable. 0..19.
  int unfreeze_trailing_blocks = 0;
  int dense_units = 1024;
  double dropout_rate = 0.5;
  HeadActivation head_activation = HeadActivation::kRelu;
  int output_classes = 3;

  void validate() const;
  // Index of the first trainable backbone unit (kUnitCount when frozen).
  int first_trainable_unit() const;
  KeyValues to_kv() const;
  static ClassifierSpec from_kv(const KeyValues& kv);
  bool operator==(const ClassifierSpec&) const = default;
};

// Where the backbone weights come from. Pretrained weights are a tensor
// archive (Keras layer names or folded form). Random initialization must be
// requested explicitly.
struct BackboneSource {
  std::filesystem::path weights_path;
  bool allow_random_init = false;
  std::uint64_t random_seed = 0;
};

struct TrainingConfig {
  int epochs = 50;
  int batch_size = 32;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::uint64_t seed = 0;
  int early_stopping_patience = 0;  // 0 disables; monitors val_loss

  void validate() const;
  KeyValues to_kv() const;
  static TrainingConfig from_kv(const KeyValues& kv);
  bool operator==(const TrainingConfig&) const = default;
};

struct EpochRecord {
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double val_precision = 0.0;  // macro
  double val_recall = 0.0;     // macro
  bool operator==(const EpochRecord&) const = default;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;

  std::string to_tsv() const;
  static TrainingHistory from_tsv(std::string_view text, std::string_view source = "<history>");
  bool operator==(const TrainingHistory&) const = default;
};

struct PreprocessingContract {
  int target_height = 150;
  int target_width = 150;
  double rescale_factor = 1.0 / 255.0;
  bool operator==(const PreprocessingContract&) const = default;
};

// n images of height x width x channels, values already preprocessed.
struct RasterBatchView {
  std::span<const float> data;
  std::size_t count = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
};

class TrainedClassifier {
 public:
  ClassifierSpec spec;
  std::shared_ptr<const MobileNetV2> backbone;
  std::string backbone_provenance;  // "weights:<sha256>" or "random:<seed>"
  DenseHead head;
  TrainingHistory history;
  PreprocessingContract preprocessing;
  std::string version;

  std::vector<float> features(const float* raster) const;
  Logits logits(const float* raster) const;

  // Throws Error{kShape} naming expected vs received dimensions.
  ProbabilityMatrix predict_batch(const RasterBatchView& rasters) const;
  ProbabilityRow predict_one(const Raster& raster) const;

  AugmentConfig eval_augment_config() const;
  std::string backbone_digest() const { return backbone->parameter_digest(); }
  std::string head_digest() const;
  std::size_t head_parameter_count() const { return head.parameter_count(); }
};

// Throws Error{kResource} when weights are unavailable and random init was not
// requested, Error{kSpec} for an invalid spec.
TrainedClassifier build(const ClassifierSpec& spec, const BackboneSource& source,
                        std::uint64_t head_seed);
// Same, reusing an already constructed backbone (trials share one).
TrainedClassifier build(const ClassifierSpec& spec, std::shared_ptr<const MobileNetV2> backbone,
                        std::string provenance, std::uint64_t head_seed);

using EpochCallback = std::function<void(std::size_t epoch, const EpochRecord&)>;

// Runs training epochs over the augmented train stream, evaluating the
// rescale-only validation stream after each. Throws Error{kDiverged} naming
// the epoch and batch if the loss becomes non-finite.
TrainedClassifier train(TrainedClassifier model, const DatasetManifest& manifest,
                        const AugmentConfig& augment, const TrainingConfig& config,
                        const EpochCallback& on_epoch = {});

// Rescale-only inference over a split, in manifest order.
struct SplitPredictions {
  std::vector<ImageRecord> records;
  ProbabilityMatrix probabilities;
  std::vector<int> labels;
};
SplitPredictions predict_split(const TrainedClassifier& model, const DatasetManifest& manifest,
                               Split split);

// Everything needed to reproduce a training run, as one key=value file.
struct RunConfig {
  ClassifierSpec spec;
  TrainingConfig training;
  AugmentConfig augment;
  BackboneSource backbone;
  std::string backbone_sha256;  // pinned content hash of the weights file, if any
  std::string manifest_digest;

  KeyValues to_kv() const;
  static RunConfig from_kv(const KeyValues& kv);
};

inline constexpr int kCheckpointFormat = 1;

// Checkpoint directory: weights.bin (tensor archive), spec.txt, history.tsv, VERSION.
void save_classifier(const TrainedClassifier& model, const std::filesystem::path& dir);
// Throws Error{kLoad} for missing, corrupt, truncated, or version-incompatible checkpoints.
TrainedClassifier load_classifier(const std::filesystem::path& dir);

}  // namespace busi
