#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "busi/backbone.hpp"
#include "busi/labels.hpp"

namespace busi {

template <typename T, std::size_t K>
std::array<T, K> softmax(const std::array<T, K>& logits) {
  const T top = *std::max_element(logits.begin(), logits.end());
  std::array<T, K> out{};
  T sum = 0;
  for (std::size_t k = 0; k < K; ++k) {
    out[k] = std::exp(logits[k] - top);
    sum += out[k];
  }
  for (auto& v : out) v /= sum;
  return out;
}

// -log softmax(logits)[label], computed via log-sum-exp.
template <typename T, std::size_t K>
T cross_entropy(const std::array<T, K>& logits, std::size_t label) {
  const T top = *std::max_element(logits.begin(), logits.end());
  T sum = 0;
  for (T z : logits) sum += std::exp(z - top);
  return std::log(sum) + top - logits[label];
}

// d cross_entropy / d logits = softmax(logits) - onehot(label).
template <typename T, std::size_t K>
std::array<T, K> cross_entropy_grad(const std::array<T, K>& logits, std::size_t label) {
  auto g = softmax(logits);
  g[label] -= T(1);
  return g;
}

// Lowest index among maximal entries.
template <typename T, std::size_t K>
std::size_t argmax(const std::array<T, K>& values) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < K; ++k)
    if (values[k] > values[best]) best = k;
  return best;
}

enum class HeadActivation { kRelu, kTanh };

std::string_view name_of(HeadActivation a);
HeadActivation head_activation_from_name(std::string_view name);

using Logits = std::array<float, kNumClasses>;

// flatten -> dense(units, activation) -> dropout -> dense(3) [-> softmax]
struct DenseHead {
  HeadActivation activation = HeadActivation::kRelu;
  double dropout_rate = 0.5;
  MatrixRM w1;  // features x units
  RowVec b1;
  MatrixRM w2;  // units x 3
  RowVec b2;

  // Glorot-uniform kernels, zero biases.
  static DenseHead initialized(std::size_t features, int units, HeadActivation activation,
                               double dropout_rate, std::uint64_t seed);

  std::size_t input_length() const { return static_cast<std::size_t>(w1.rows()); }
  std::size_t parameter_count() const {
    return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + b2.size());
  }

  // Inference (dropout inactive). Row-at-a-time so a sample's output does not
  // depend on which other samples share its batch.
  Logits logits(const float* features) const;

  struct TrainCache {
    MatrixRM pre1;   // B x units
    MatrixRM mask;   // B x units, inverted-dropout multipliers
    MatrixRM act1;   // after dropout
    MatrixRM logits; // B x 3
  };
  // Training-mode forward over a batch; dropout masks drawn from `seed`.
  MatrixRM forward_train(const MatrixRM& features, std::uint64_t seed, TrainCache& cache) const;

  struct Grads {
    MatrixRM w1, w2;
    RowVec b1, b2;
  };
  Grads make_grads() const;
  // `grad_logits` is d loss / d logits (B x 3). Returns d loss / d features
  // when `need_input_grad`.
  MatrixRM backward(const MatrixRM& features, const TrainCache& cache, const MatrixRM& grad_logits,
                    Grads& grads, bool need_input_grad) const;

  std::vector<std::span<float>> parameters();
  static std::vector<std::span<float>> gradient_spans(Grads& grads);
};

enum class OptimizerKind { kAdam, kSgd };

std::string_view name_of(OptimizerKind o);
OptimizerKind optimizer_from_name(std::string_view name);

// Adam with the usual bias correction folded into the step size
// (beta1 0.9, beta2 0.999, epsilon 1e-7), or plain SGD.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate) : kind_(kind), lr_(learning_rate) {}

  void step(const std::vector<std::span<float>>& params,
            const std::vector<std::span<float>>& grads);

 private:
  OptimizerKind kind_;
  double lr_;
  std::int64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

}  // namespace busi
