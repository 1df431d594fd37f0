#pragma once

// MobileNetV2 (width 1.0) convolutional base without the classification top.
// BatchNorm layers are folded into per-channel conv scale and bias at load
// time, so a unit is a short chain of convolutions with optional ReLU6 and an
// optional identity shortcut.

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "busi/tensor_archive.hpp"

namespace busi {

using MatrixRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<float, 1, Eigen::Dynamic>;

// Activation of one image: rows are pixels (row-major y, x), columns channels.
struct FeatureMap {
  int height = 0;
  int width = 0;
  MatrixRM data;
};

enum class ConvKind { kFull3x3, kDepthwise3x3, kPointwise };

struct Conv {
  ConvKind kind = ConvKind::kPointwise;
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  bool relu6 = true;
  // Full: (9*in) x out, rows ordered (ky, kx, ci). Depthwise: 9 x channels.
  // Pointwise: in x out.
  MatrixRM weight;
  RowVec bias;
};

struct Unit {
  std::string name;
  std::vector<Conv> convs;
  bool residual = false;
};

struct ConvCache {
  FeatureMap input;
  MatrixRM pre;  // pre-activation output
  int out_height = 0;
  int out_width = 0;
};

struct UnitCache {
  std::vector<ConvCache> convs;
};

struct ConvGrad {
  MatrixRM weight;
  RowVec bias;
};

// Gradient buffers for units [first_unit, unit_count).
struct BackboneGrads {
  int first_unit = 0;
  std::vector<std::vector<ConvGrad>> units;

  void zero();
  void add(const BackboneGrads& other);
};

class MobileNetV2 {
 public:
  static constexpr int kUnitCount = 19;  // stem, 17 inverted residual blocks, top conv
  static constexpr int kFeatureChannels = 1280;
  static constexpr float kBatchNormEpsilon = 1e-3f;

  // Accepts either Keras layer-named tensors ("Conv1/kernel", "bn_Conv1/gamma",
  // "block_1_expand/kernel", ...) or the folded form written by to_tensors().
  static MobileNetV2 from_tensors(const TensorMap& tensors);
  static MobileNetV2 from_file(const std::string& path);

  // He-normal weights, then per-channel standardization of every conv output
  // on a fixed synthetic calibration batch (a BatchNorm fit on that batch).
  static MobileNetV2 random_calibrated(std::uint64_t seed, int input_height = 150,
                                       int input_width = 150);

  TensorMap to_tensors() const;
  std::string parameter_digest() const;
  std::size_t parameter_count() const;

  static std::pair<int, int> output_size(int input_height, int input_width);
  static std::size_t feature_length(int input_height, int input_width);

  FeatureMap input_map(const float* image, int height, int width) const;
  FeatureMap forward(FeatureMap x, int first_unit, int end_unit,
                     std::vector<UnitCache>* caches = nullptr) const;
  // Flattened (y, x, channel) output of the whole base.
  std::vector<float> features(const float* image, int height, int width) const;

  // Backpropagates `grad_out` (w.r.t. the output of unit end-1) through units
  // [grads.first_unit, end), accumulating parameter gradients.
  void backward(const std::vector<UnitCache>& caches, MatrixRM grad_out,
                BackboneGrads& grads) const;

  BackboneGrads make_grads(int first_unit) const;
  // Parameters of units [first_unit, kUnitCount) in the same order as
  // BackboneGrads so optimizers can zip them.
  std::vector<std::span<float>> parameters(int first_unit);
  static std::vector<std::span<float>> gradient_spans(BackboneGrads& grads);

  const std::vector<Unit>& units() const { return units_; }
  std::vector<Unit>& mutable_units() { return units_; }

 private:
  static MobileNetV2 skeleton();
  std::vector<Unit> units_;
};

}  // namespace busi
