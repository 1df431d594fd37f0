#include "busi/head.hpp"

#include <cmath>

#include "busi/error.hpp"
#include "busi/rng.hpp"

namespace busi {

std::string_view name_of(HeadActivation a) {
  return a == HeadActivation::kRelu ? "relu" : "tanh";
}

HeadActivation head_activation_from_name(std::string_view name) {
  if (name == "relu") return HeadActivation::kRelu;
  if (name == "tanh") return HeadActivation::kTanh;
  throw Error(ErrorKind::kConfig, "unknown head activation '" + std::string(name) + "'");
}

std::string_view name_of(OptimizerKind o) { return o == OptimizerKind::kAdam ? "adam" : "sgd"; }

OptimizerKind optimizer_from_name(std::string_view name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "sgd") return OptimizerKind::kSgd;
  throw Error(ErrorKind::kConfig, "unknown optimizer '" + std::string(name) + "'");
}

namespace {

void glorot_uniform(MatrixRM& w, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    w.data()[i] = static_cast<float>(rng.uniform(-limit, limit));
  }
}

template <typename Derived>
void apply_activation(HeadActivation a, Eigen::MatrixBase<Derived>& m) {
  if (a == HeadActivation::kRelu) {
    m = m.cwiseMax(0.0f);
  } else {
    m = m.array().tanh().matrix();
  }
}

}  // namespace

DenseHead DenseHead::initialized(std::size_t features, int units, HeadActivation activation,
                                 double dropout_rate, std::uint64_t seed) {
  DenseHead h;
  h.activation = activation;
  h.dropout_rate = dropout_rate;
  h.w1 = MatrixRM(static_cast<Eigen::Index>(features), units);
  h.b1 = RowVec::Zero(units);
  h.w2 = MatrixRM(units, static_cast<Eigen::Index>(kNumClasses));
  h.b2 = RowVec::Zero(static_cast<Eigen::Index>(kNumClasses));
  Rng r1(mix_seed({seed, 0x44454E534531ULL}));
  glorot_uniform(h.w1, r1);
  Rng r2(mix_seed({seed, 0x44454E534532ULL}));
  glorot_uniform(h.w2, r2);
  return h;
}

Logits DenseHead::logits(const float* features) const {
  const Eigen::Map<const RowVec> x(features, w1.rows());
  RowVec hidden = x * w1;
  hidden += b1;
  apply_activation(activation, hidden);
  RowVec z = hidden * w2;
  z += b2;
  return {z(0), z(1), z(2)};
}

MatrixRM DenseHead::forward_train(const MatrixRM& features, std::uint64_t seed,
                                  TrainCache& cache) const {
  cache.pre1.noalias() = features * w1;
  cache.pre1.rowwise() += b1;
  cache.act1 = cache.pre1;
  apply_activation(activation, cache.act1);
  cache.mask = MatrixRM::Ones(cache.pre1.rows(), cache.pre1.cols());
  if (dropout_rate > 0.0) {
    Rng rng(mix_seed({seed, 0x44524F50ULL}));
    const float keep_scale = static_cast<float>(1.0 / (1.0 - dropout_rate));
    for (Eigen::Index i = 0; i < cache.mask.size(); ++i) {
      cache.mask.data()[i] = rng.uniform() < dropout_rate ? 0.0f : keep_scale;
    }
    cache.act1.array() *= cache.mask.array();
  }
  cache.logits.noalias() = cache.act1 * w2;
  cache.logits.rowwise() += b2;
  return cache.logits;
}

DenseHead::Grads DenseHead::make_grads() const {
  return {MatrixRM::Zero(w1.rows(), w1.cols()), MatrixRM::Zero(w2.rows(), w2.cols()),
          RowVec::Zero(b1.size()), RowVec::Zero(b2.size())};
}

MatrixRM DenseHead::backward(const MatrixRM& features, const TrainCache& cache,
                             const MatrixRM& grad_logits, Grads& grads,
                             bool need_input_grad) const {
  grads.w2.noalias() += cache.act1.transpose() * grad_logits;
  grads.b2 += grad_logits.colwise().sum();
  MatrixRM g = grad_logits * w2.transpose();
  g.array() *= cache.mask.array();
  if (activation == HeadActivation::kRelu) {
    g.array() *= (cache.pre1.array() > 0.0f).cast<float>();
  } else {
    g.array() *= 1.0f - cache.pre1.array().tanh().square();
  }
  grads.w1.noalias() += features.transpose() * g;
  grads.b1 += g.colwise().sum();
  if (!need_input_grad) return {};
  return g * w1.transpose();
}

std::vector<std::span<float>> DenseHead::parameters() {
  return {{w1.data(), static_cast<std::size_t>(w1.size())},
          {b1.data(), static_cast<std::size_t>(b1.size())},
          {w2.data(), static_cast<std::size_t>(w2.size())},
          {b2.data(), static_cast<std::size_t>(b2.size())}};
}

std::vector<std::span<float>> DenseHead::gradient_spans(Grads& g) {
  return {{g.w1.data(), static_cast<std::size_t>(g.w1.size())},
          {g.b1.data(), static_cast<std::size_t>(g.b1.size())},
          {g.w2.data(), static_cast<std::size_t>(g.w2.size())},
          {g.b2.data(), static_cast<std::size_t>(g.b2.size())}};
}

void Optimizer::step(const std::vector<std::span<float>>& params,
                     const std::vector<std::span<float>>& grads) {
  if (params.size() != grads.size()) {
    throw Error(ErrorKind::kShape, "optimizer: parameter/gradient list mismatch");
  }
  ++t_;
  if (kind_ == OptimizerKind::kSgd) {
    const float lr = static_cast<float>(lr_);
    for (std::size_t i = 0; i < params.size(); ++i)
      for (std::size_t j = 0; j < params[i].size(); ++j) params[i][j] -= lr * grads[i][j];
    return;
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-7;
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.size(), 0.0f);
      v_.emplace_back(p.size(), 0.0f);
    }
  }
  const float step = static_cast<float>(lr_ * std::sqrt(1.0 - std::pow(kBeta2, t_)) /
                                        (1.0 - std::pow(kBeta1, t_)));
  const float b1 = static_cast<float>(kBeta1), b2 = static_cast<float>(kBeta2);
  const float eps = static_cast<float>(kEps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    float* p = params[i].data();
    const float* g = grads[i].data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    const std::size_t n = params[i].size();
    for (std::size_t j = 0; j < n; ++j) {
      m[j] = b1 * m[j] + (1.0f - b1) * g[j];
      v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
      p[j] -= step * m[j] / (std::sqrt(v[j]) + eps);
    }
  }
}

}  // namespace busi
