#include "busi/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "busi/digest.hpp"
#include "busi/error.hpp"
#include "busi/rng.hpp"

namespace busi {

namespace {

struct BlockSpec {
  int expansion;
  int channels;
  int repeats;
  int stride;
};

constexpr BlockSpec kBlocks[] = {{1, 16, 1, 1},  {6, 24, 2, 2},  {6, 32, 3, 2}, {6, 64, 4, 2},
                                 {6, 96, 3, 1},  {6, 160, 3, 2}, {6, 320, 1, 1}};

int pad_before(int in, int stride) { return stride == 1 ? 1 : (in % 2 == 0 ? 0 : 1); }
int out_extent(int in, int stride) {
  return stride == 1 ? in : (in + pad_before(in, stride) - 2) / 2 + 1;
}

Conv make_conv(ConvKind kind, int in, int out, int stride, bool relu6) {
  Conv c;
  c.kind = kind;
  c.in_channels = in;
  c.out_channels = out;
  c.stride = stride;
  c.relu6 = relu6;
  switch (kind) {
    case ConvKind::kFull3x3: c.weight = MatrixRM::Zero(9 * in, out); break;
    case ConvKind::kDepthwise3x3: c.weight = MatrixRM::Zero(9, out); break;
    case ConvKind::kPointwise: c.weight = MatrixRM::Zero(in, out); break;
  }
  c.bias = RowVec::Zero(out);
  return c;
}

MatrixRM im2col(const FeatureMap& in, int stride, int oh, int ow) {
  const int cin = static_cast<int>(in.data.cols());
  const int pt = pad_before(in.height, stride), pl = pad_before(in.width, stride);
  MatrixRM cols = MatrixRM::Zero(static_cast<Eigen::Index>(oh) * ow, 9 * cin);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      float* dst = cols.row(oy * ow + ox).data();
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = oy * stride - pt + ky;
        if (iy < 0 || iy >= in.height) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = ox * stride - pl + kx;
          if (ix < 0 || ix >= in.width) continue;
          const float* src = in.data.row(iy * in.width + ix).data();
          std::copy(src, src + cin, dst + (ky * 3 + kx) * cin);
        }
      }
    }
  }
  return cols;
}

// Pre-activation of one conv.
MatrixRM conv_pre(const Conv& conv, const FeatureMap& in, int& oh, int& ow) {
  oh = out_extent(in.height, conv.stride);
  ow = out_extent(in.width, conv.stride);
  MatrixRM pre;
  switch (conv.kind) {
    case ConvKind::kPointwise:
      pre.noalias() = in.data * conv.weight;
      break;
    case ConvKind::kFull3x3:
      pre.noalias() = im2col(in, conv.stride, oh, ow) * conv.weight;
      break;
    case ConvKind::kDepthwise3x3: {
      const int ch = conv.out_channels;
      const int pt = pad_before(in.height, conv.stride), pl = pad_before(in.width, conv.stride);
      pre = MatrixRM::Zero(static_cast<Eigen::Index>(oh) * ow, ch);
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          float* dst = pre.row(oy * ow + ox).data();
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * conv.stride - pt + ky;
            if (iy < 0 || iy >= in.height) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox * conv.stride - pl + kx;
              if (ix < 0 || ix >= in.width) continue;
              const float* src = in.data.row(iy * in.width + ix).data();
              const float* w = conv.weight.row(ky * 3 + kx).data();
              for (int c = 0; c < ch; ++c) dst[c] += src[c] * w[c];
            }
          }
        }
      }
      break;
    }
  }
  pre.rowwise() += conv.bias;
  return pre;
}

MatrixRM activate(const Conv& conv, const MatrixRM& pre) {
  if (!conv.relu6) return pre;
  return pre.cwiseMax(0.0f).cwiseMin(6.0f);
}

// Returns the gradient w.r.t. the conv input (empty when !need_input_grad).
MatrixRM conv_backward(const Conv& conv, const ConvCache& cache, MatrixRM grad_out, ConvGrad& grad,
                       bool need_input_grad) {
  if (conv.relu6) {
    grad_out.array() *= ((cache.pre.array() > 0.0f) && (cache.pre.array() < 6.0f)).cast<float>();
  }
  grad.bias += grad_out.colwise().sum();
  const FeatureMap& in = cache.input;
  MatrixRM grad_in;
  switch (conv.kind) {
    case ConvKind::kPointwise:
      grad.weight.noalias() += in.data.transpose() * grad_out;
      if (need_input_grad) grad_in.noalias() = grad_out * conv.weight.transpose();
      break;
    case ConvKind::kFull3x3: {
      const MatrixRM cols = im2col(in, conv.stride, cache.out_height, cache.out_width);
      grad.weight.noalias() += cols.transpose() * grad_out;
      if (need_input_grad) {
        const MatrixRM gcols = grad_out * conv.weight.transpose();
        const int cin = conv.in_channels;
        const int pt = pad_before(in.height, conv.stride), pl = pad_before(in.width, conv.stride);
        grad_in = MatrixRM::Zero(in.data.rows(), cin);
        for (int oy = 0; oy < cache.out_height; ++oy) {
          for (int ox = 0; ox < cache.out_width; ++ox) {
            const float* src = gcols.row(oy * cache.out_width + ox).data();
            for (int ky = 0; ky < 3; ++ky) {
              const int iy = oy * conv.stride - pt + ky;
              if (iy < 0 || iy >= in.height) continue;
              for (int kx = 0; kx < 3; ++kx) {
                const int ix = ox * conv.stride - pl + kx;
                if (ix < 0 || ix >= in.width) continue;
                float* dst = grad_in.row(iy * in.width + ix).data();
                for (int c = 0; c < cin; ++c) dst[c] += src[(ky * 3 + kx) * cin + c];
              }
            }
          }
        }
      }
      break;
    }
    case ConvKind::kDepthwise3x3: {
      const int ch = conv.out_channels;
      const int pt = pad_before(in.height, conv.stride), pl = pad_before(in.width, conv.stride);
      if (need_input_grad) grad_in = MatrixRM::Zero(in.data.rows(), ch);
      for (int oy = 0; oy < cache.out_height; ++oy) {
        for (int ox = 0; ox < cache.out_width; ++ox) {
          const float* g = grad_out.row(oy * cache.out_width + ox).data();
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * conv.stride - pt + ky;
            if (iy < 0 || iy >= in.height) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox * conv.stride - pl + kx;
              if (ix < 0 || ix >= in.width) continue;
              const int k = ky * 3 + kx;
              const float* src = in.data.row(iy * in.width + ix).data();
              float* gw = grad.weight.row(k).data();
              for (int c = 0; c < ch; ++c) gw[c] += g[c] * src[c];
              if (need_input_grad) {
                const float* w = conv.weight.row(k).data();
                float* gi = grad_in.row(iy * in.width + ix).data();
                for (int c = 0; c < ch; ++c) gi[c] += g[c] * w[c];
              }
            }
          }
        }
      }
      break;
    }
  }
  return grad_in;
}

std::string folded_name(std::size_t unit, std::size_t conv, const char* what) {
  return "backbone/u" + std::to_string(unit) + "/c" + std::to_string(conv) + "/" + what;
}

const Tensor& require(const TensorMap& t, const std::string& name) {
  auto it = t.find(name);
  if (it == t.end()) throw Error(ErrorKind::kLoad, "backbone weights: missing tensor '" + name + "'");
  return it->second;
}

// Keras layer names for each conv in skeleton order, as (kernel, batchnorm).
std::vector<std::vector<std::pair<std::string, std::string>>> keras_names() {
  std::vector<std::vector<std::pair<std::string, std::string>>> names;
  names.push_back({{"Conv1", "bn_Conv1"}});
  names.push_back({{"expanded_conv_depthwise", "expanded_conv_depthwise_BN"},
                   {"expanded_conv_project", "expanded_conv_project_BN"}});
  for (int b = 1; b <= 16; ++b) {
    const std::string p = "block_" + std::to_string(b) + "_";
    names.push_back({{p + "expand", p + "expand_BN"},
                     {p + "depthwise", p + "depthwise_BN"},
                     {p + "project", p + "project_BN"}});
  }
  names.push_back({{"Conv_1", "Conv_1_bn"}});
  return names;
}

}  // namespace

void BackboneGrads::zero() {
  for (auto& u : units)
    for (auto& g : u) {
      g.weight.setZero();
      g.bias.setZero();
    }
}

void BackboneGrads::add(const BackboneGrads& other) {
  for (std::size_t u = 0; u < units.size(); ++u)
    for (std::size_t c = 0; c < units[u].size(); ++c) {
      units[u][c].weight += other.units[u][c].weight;
      units[u][c].bias += other.units[u][c].bias;
    }
}

MobileNetV2 MobileNetV2::skeleton() {
  MobileNetV2 net;
  net.units_.push_back({"stem", {make_conv(ConvKind::kFull3x3, 3, 32, 2, true)}, false});
  int in = 32;
  int block = 0;
  for (const auto& spec : kBlocks) {
    for (int r = 0; r < spec.repeats; ++r, ++block) {
      const int stride = r == 0 ? spec.stride : 1;
      const int hidden = in * spec.expansion;
      Unit u;
      u.name = "block_" + std::to_string(block);
      if (spec.expansion != 1) u.convs.push_back(make_conv(ConvKind::kPointwise, in, hidden, 1, true));
      u.convs.push_back(make_conv(ConvKind::kDepthwise3x3, hidden, hidden, stride, true));
      u.convs.push_back(make_conv(ConvKind::kPointwise, hidden, spec.channels, 1, false));
      u.residual = stride == 1 && in == spec.channels;
      net.units_.push_back(std::move(u));
      in = spec.channels;
    }
  }
  net.units_.push_back(
      {"top", {make_conv(ConvKind::kPointwise, in, kFeatureChannels, 1, true)}, false});
  return net;
}

MobileNetV2 MobileNetV2::from_tensors(const TensorMap& tensors) {
  MobileNetV2 net = skeleton();
  const bool keras = tensors.count("Conv1/kernel") != 0;
  const auto names = keras_names();
  for (std::size_t u = 0; u < net.units_.size(); ++u) {
    for (std::size_t c = 0; c < net.units_[u].convs.size(); ++c) {
      Conv& conv = net.units_[u].convs[c];
      const auto rows = conv.weight.rows(), cols = conv.weight.cols();
      if (!keras) {
        const Tensor& w = require(tensors, folded_name(u, c, "weight"));
        const Tensor& b = require(tensors, folded_name(u, c, "bias"));
        if (w.values.size() != static_cast<std::size_t>(rows * cols) ||
            b.values.size() != static_cast<std::size_t>(cols)) {
          throw Error(ErrorKind::kLoad, "backbone weights: shape mismatch at " + folded_name(u, c, ""));
        }
        std::memcpy(conv.weight.data(), w.values.data(), w.values.size() * sizeof(float));
        std::memcpy(conv.bias.data(), b.values.data(), b.values.size() * sizeof(float));
        continue;
      }
      const auto& [layer, bn] = names[u][c];
      // Keras 2 files name the depthwise weight "depthwise_kernel", Keras 3 "kernel".
      std::string kernel_name = layer + "/kernel";
      if (conv.kind == ConvKind::kDepthwise3x3 && tensors.count(kernel_name) == 0) {
        kernel_name = layer + "/depthwise_kernel";
      }
      const Tensor& k = require(tensors, kernel_name);
      if (k.values.size() != static_cast<std::size_t>(rows * cols)) {
        throw Error(ErrorKind::kLoad, "backbone weights: shape mismatch at " + kernel_name);
      }
      // Keras HWIO (and HWC1 for depthwise) flattens to exactly our row order.
      std::memcpy(conv.weight.data(), k.values.data(), k.values.size() * sizeof(float));
      const Tensor& gamma = require(tensors, bn + "/gamma");
      const Tensor& beta = require(tensors, bn + "/beta");
      const Tensor& mean = require(tensors, bn + "/moving_mean");
      const Tensor& var = require(tensors, bn + "/moving_variance");
      for (Eigen::Index o = 0; o < cols; ++o) {
        const double scale = gamma.values.at(o) / std::sqrt(static_cast<double>(var.values.at(o)) +
                                                            kBatchNormEpsilon);
        for (Eigen::Index r = 0; r < rows; ++r) {
          conv.weight(r, o) = static_cast<float>(conv.weight(r, o) * scale);
        }
        conv.bias(o) = static_cast<float>(beta.values.at(o) - mean.values.at(o) * scale);
      }
    }
  }
  return net;
}

MobileNetV2 MobileNetV2::from_file(const std::string& path) {
  try {
    return from_tensors(load_tensors(path));
  } catch (const Error& e) {
    throw Error(ErrorKind::kResource, "backbone weights unavailable: " + std::string(e.what()));
  }
}

MobileNetV2 MobileNetV2::random_calibrated(std::uint64_t seed, int input_height, int input_width) {
  MobileNetV2 net = skeleton();
  Rng rng(mix_seed({seed, 0x4D4E5632ULL}));
  for (auto& unit : net.units_) {
    for (auto& conv : unit.convs) {
      const double fan_in = conv.kind == ConvKind::kFull3x3       ? 9.0 * conv.in_channels
                            : conv.kind == ConvKind::kDepthwise3x3 ? 9.0
                                                                   : conv.in_channels;
      const double stddev = std::sqrt(2.0 / fan_in);
      for (Eigen::Index i = 0; i < conv.weight.size(); ++i) {
        conv.weight.data()[i] = static_cast<float>(rng.normal() * stddev);
      }
    }
  }

  // Calibration batch: smooth random intensity fields in [0,1].
  constexpr int kCalibrationImages = 4;
  std::vector<FeatureMap> acts;
  for (int n = 0; n < kCalibrationImages; ++n) {
    std::vector<float> img(static_cast<std::size_t>(input_height) * input_width * 3);
    double fx[6], fy[6], ph[6], amp[6];
    for (int k = 0; k < 6; ++k) {
      fx[k] = rng.uniform(0.02, 0.6);
      fy[k] = rng.uniform(0.02, 0.6);
      ph[k] = rng.uniform(0.0, 6.283185307179586);
      amp[k] = rng.uniform(0.03, 0.12);
    }
    const double base = rng.uniform(0.2, 0.6);
    for (int y = 0; y < input_height; ++y)
      for (int x = 0; x < input_width; ++x) {
        double v = base;
        for (int k = 0; k < 6; ++k) v += amp[k] * std::sin(fx[k] * x + fy[k] * y + ph[k]);
        v += 0.05 * (rng.uniform() - 0.5);
        const float f = static_cast<float>(std::clamp(v, 0.0, 1.0));
        for (int c = 0; c < 3; ++c) img[(static_cast<std::size_t>(y) * input_width + x) * 3 + c] = f;
      }
    acts.push_back(net.input_map(img.data(), input_height, input_width));
  }

  for (auto& unit : net.units_) {
    std::vector<FeatureMap> unit_in = acts;
    for (auto& conv : unit.convs) {
      std::vector<MatrixRM> pres;
      int oh = 0, ow = 0;
      Eigen::Index rows = 0;
      for (const auto& a : acts) {
        pres.push_back(conv_pre(conv, a, oh, ow));
        rows += pres.back().rows();
      }
      Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(conv.out_channels);
      Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(conv.out_channels);
      for (const auto& p : pres) {
        const Eigen::MatrixXd pd = p.cast<double>();
        sum += pd.colwise().sum();
        sq += pd.array().square().matrix().colwise().sum();
      }
      const Eigen::RowVectorXd mean = sum / static_cast<double>(rows);
      const Eigen::RowVectorXd var =
          (sq / static_cast<double>(rows) - mean.array().square().matrix()).cwiseMax(0.0);
      for (int o = 0; o < conv.out_channels; ++o) {
        const double inv = 1.0 / std::sqrt(var(o) + kBatchNormEpsilon);
        conv.weight.col(o) *= static_cast<float>(inv);
        conv.bias(o) = static_cast<float>((conv.bias(o) - mean(o)) * inv);
      }
      for (std::size_t n = 0; n < acts.size(); ++n) {
        int h = 0, w = 0;
        FeatureMap next;
        next.data = activate(conv, conv_pre(conv, acts[n], h, w));
        next.height = h;
        next.width = w;
        acts[n] = std::move(next);
      }
    }
    if (unit.residual) {
      for (std::size_t n = 0; n < acts.size(); ++n) acts[n].data += unit_in[n].data;
    }
  }
  return net;
}

TensorMap MobileNetV2::to_tensors() const {
  TensorMap out;
  for (std::size_t u = 0; u < units_.size(); ++u) {
    for (std::size_t c = 0; c < units_[u].convs.size(); ++c) {
      const Conv& conv = units_[u].convs[c];
      Tensor w;
      w.shape = {static_cast<std::uint64_t>(conv.weight.rows()),
                 static_cast<std::uint64_t>(conv.weight.cols())};
      w.values.assign(conv.weight.data(), conv.weight.data() + conv.weight.size());
      Tensor b;
      b.shape = {static_cast<std::uint64_t>(conv.bias.size())};
      b.values.assign(conv.bias.data(), conv.bias.data() + conv.bias.size());
      out.emplace(folded_name(u, c, "weight"), std::move(w));
      out.emplace(folded_name(u, c, "bias"), std::move(b));
    }
  }
  return out;
}

std::string MobileNetV2::parameter_digest() const {
  std::string bytes;
  for (const auto& unit : units_)
    for (const auto& conv : unit.convs) {
      bytes.append(reinterpret_cast<const char*>(conv.weight.data()), conv.weight.size() * sizeof(float));
      bytes.append(reinterpret_cast<const char*>(conv.bias.data()), conv.bias.size() * sizeof(float));
    }
  return sha256_hex(bytes);
}

std::size_t MobileNetV2::parameter_count() const {
  std::size_t n = 0;
  for (const auto& unit : units_)
    for (const auto& conv : unit.convs) n += conv.weight.size() + conv.bias.size();
  return n;
}

std::pair<int, int> MobileNetV2::output_size(int h, int w) {
  const MobileNetV2 net = skeleton();
  for (const auto& unit : net.units_)
    for (const auto& conv : unit.convs) {
      h = out_extent(h, conv.stride);
      w = out_extent(w, conv.stride);
    }
  return {h, w};
}

std::size_t MobileNetV2::feature_length(int h, int w) {
  const auto [oh, ow] = output_size(h, w);
  return static_cast<std::size_t>(oh) * ow * kFeatureChannels;
}

FeatureMap MobileNetV2::input_map(const float* image, int height, int width) const {
  FeatureMap m;
  m.height = height;
  m.width = width;
  m.data = Eigen::Map<const MatrixRM>(image, static_cast<Eigen::Index>(height) * width, 3);
  return m;
}

FeatureMap MobileNetV2::forward(FeatureMap x, int first_unit, int end_unit,
                                std::vector<UnitCache>* caches) const {
  for (int u = first_unit; u < end_unit; ++u) {
    const Unit& unit = units_[static_cast<std::size_t>(u)];
    UnitCache cache;
    const MatrixRM shortcut = unit.residual ? x.data : MatrixRM();
    for (const Conv& conv : unit.convs) {
      int oh = 0, ow = 0;
      MatrixRM pre = conv_pre(conv, x, oh, ow);
      FeatureMap next;
      next.height = oh;
      next.width = ow;
      next.data = activate(conv, pre);
      if (caches) cache.convs.push_back({std::move(x), std::move(pre), oh, ow});
      x = std::move(next);
    }
    if (unit.residual) x.data += shortcut;
    if (caches) caches->push_back(std::move(cache));
  }
  return x;
}

std::vector<float> MobileNetV2::features(const float* image, int height, int width) const {
  const FeatureMap out = forward(input_map(image, height, width), 0, kUnitCount);
  return std::vector<float>(out.data.data(), out.data.data() + out.data.size());
}

void MobileNetV2::backward(const std::vector<UnitCache>& caches, MatrixRM grad,
                           BackboneGrads& grads) const {
  const int first = grads.first_unit;
  const int end = first + static_cast<int>(caches.size());
  for (int u = end - 1; u >= first; --u) {
    const Unit& unit = units_[static_cast<std::size_t>(u)];
    const UnitCache& cache = caches[static_cast<std::size_t>(u - first)];
    const MatrixRM shortcut_grad = unit.residual ? grad : MatrixRM();
    for (int c = static_cast<int>(unit.convs.size()) - 1; c >= 0; --c) {
      const bool need_input = !(u == first && c == 0);
      grad = conv_backward(unit.convs[static_cast<std::size_t>(c)],
                           cache.convs[static_cast<std::size_t>(c)], std::move(grad),
                           grads.units[static_cast<std::size_t>(u - first)][static_cast<std::size_t>(c)],
                           need_input);
    }
    if (unit.residual && u != first) grad += shortcut_grad;
  }
}

BackboneGrads MobileNetV2::make_grads(int first_unit) const {
  BackboneGrads g;
  g.first_unit = first_unit;
  for (int u = first_unit; u < kUnitCount; ++u) {
    std::vector<ConvGrad> convs;
    for (const Conv& conv : units_[static_cast<std::size_t>(u)].convs) {
      convs.push_back({MatrixRM::Zero(conv.weight.rows(), conv.weight.cols()),
                       RowVec::Zero(conv.bias.size())});
    }
    g.units.push_back(std::move(convs));
  }
  return g;
}

std::vector<std::span<float>> MobileNetV2::parameters(int first_unit) {
  std::vector<std::span<float>> out;
  for (int u = first_unit; u < kUnitCount; ++u)
    for (Conv& conv : units_[static_cast<std::size_t>(u)].convs) {
      out.emplace_back(conv.weight.data(), static_cast<std::size_t>(conv.weight.size()));
      out.emplace_back(conv.bias.data(), static_cast<std::size_t>(conv.bias.size()));
    }
  return out;
}

std::vector<std::span<float>> MobileNetV2::gradient_spans(BackboneGrads& grads) {
  std::vector<std::span<float>> out;
  for (auto& unit : grads.units)
    for (auto& g : unit) {
      out.emplace_back(g.weight.data(), static_cast<std::size_t>(g.weight.size()));
      out.emplace_back(g.bias.data(), static_cast<std::size_t>(g.bias.size()));
    }
  return out;
}

}  // namespace busi
