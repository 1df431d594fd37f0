#include "busi/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "busi/error.hpp"
#include "busi/rng.hpp"

namespace busi {

std::string_view name_of(FillMode mode) {
  switch (mode) {
    case FillMode::kNearest: return "nearest";
    case FillMode::kReflect: return "reflect";
    case FillMode::kConstant: return "constant";
  }
  return "nearest";
}

FillMode fill_mode_from_name(std::string_view name) {
  for (FillMode m : {FillMode::kNearest, FillMode::kReflect, FillMode::kConstant}) {
    if (name_of(m) == name) return m;
  }
  throw Error(ErrorKind::kConfig, "unknown fill mode '" + std::string(name) + "'");
}

void AugmentConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::kSpec, "augment: " + what); };
  if (!(rescale_factor > 0.0)) fail("rescale_factor must be positive");
  if (!(rotation_max_deg >= 0.0 && rotation_max_deg <= 180.0))
    fail("rotation_max_deg must lie in [0,180]");
  if (!(shift_fraction >= 0.0 && shift_fraction < 1.0)) fail("shift_fraction must lie in [0,1)");
  if (!(shear_fraction >= 0.0)) fail("shear_fraction must be >= 0");
  if (target_height <= 0 || target_width <= 0) fail("target size must be positive");
}

AugmentConfig AugmentConfig::identity() {
  AugmentConfig c;
  c.rotation_max_deg = 0.0;
  c.shift_fraction = 0.0;
  c.shear_fraction = 0.0;
  c.horizontal_flip = false;
  return c;
}

KeyValues AugmentConfig::to_kv() const {
  KeyValues kv;
  kv.set("rescale_factor", rescale_factor);
  kv.set("rotation_max_deg", rotation_max_deg);
  kv.set("shift_fraction", shift_fraction);
  kv.set("shear_fraction", shear_fraction);
  kv.set("horizontal_flip", horizontal_flip);
  kv.set("fill_mode", std::string(name_of(fill_mode)));
  kv.set("target_height", target_height);
  kv.set("target_width", target_width);
  kv.set("seed", seed);
  return kv;
}

AugmentConfig AugmentConfig::from_kv(const KeyValues& kv) {
  AugmentConfig c;
  if (kv.has("rescale_factor")) c.rescale_factor = kv.get_double("rescale_factor");
  if (kv.has("rotation_max_deg")) c.rotation_max_deg = kv.get_double("rotation_max_deg");
  if (kv.has("shift_fraction")) c.shift_fraction = kv.get_double("shift_fraction");
  if (kv.has("shear_fraction")) c.shear_fraction = kv.get_double("shear_fraction");
  if (kv.has("horizontal_flip")) c.horizontal_flip = kv.get_bool("horizontal_flip");
  if (kv.has("fill_mode")) c.fill_mode = fill_mode_from_name(kv.get("fill_mode"));
  if (kv.has("target_height")) c.target_height = static_cast<int>(kv.get_int("target_height"));
  if (kv.has("target_width")) c.target_width = static_cast<int>(kv.get_int("target_width"));
  if (kv.has("seed")) c.seed = kv.get_uint("seed");
  c.validate();
  return c;
}

bool AugmentDraw::within(const AugmentConfig& c) const {
  return std::abs(rotation_deg) <= c.rotation_max_deg && std::abs(shift_x) <= c.shift_fraction &&
         std::abs(shift_y) <= c.shift_fraction && shear >= 0.0 && shear <= c.shear_fraction &&
         (!flip || c.horizontal_flip);
}

AugmentDraw draw_for(const AugmentConfig& config, std::uint64_t epoch, const std::string& digest,
                     std::uint64_t ordinal) {
  Rng rng(mix_seed({config.seed, epoch, fnv1a64(digest), ordinal}));
  AugmentDraw d;
  d.rotation_deg = rng.uniform(-config.rotation_max_deg, config.rotation_max_deg);
  d.shift_x = rng.uniform(-config.shift_fraction, config.shift_fraction);
  d.shift_y = rng.uniform(-config.shift_fraction, config.shift_fraction);
  d.shear = rng.uniform(0.0, config.shear_fraction);
  d.flip = config.horizontal_flip && rng.coin();
  // uniform(-0, 0) yields -0.0; normalize so zero magnitudes compare as identity.
  if (d.rotation_deg == 0.0) d.rotation_deg = 0.0;
  if (d.shift_x == 0.0) d.shift_x = 0.0;
  if (d.shift_y == 0.0) d.shift_y = 0.0;
  return d;
}

Raster resize_bilinear(const Raster& src, int height, int width) {
  if (src.height <= 0 || src.width <= 0) throw Error(ErrorKind::kShape, "image has zero area");
  if (src.height == height && src.width == width) return src;
  Raster out(height, width, src.channels);
  const double sy = static_cast<double>(src.height) / height;
  const double sx = static_cast<double>(src.width) / width;
  std::vector<int> x0(width), x1(width);
  std::vector<float> fx(width);
  for (int x = 0; x < width; ++x) {
    const double pos = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
    x0[x] = static_cast<int>(std::floor(pos));
    x1[x] = std::min(x0[x] + 1, src.width - 1);
    fx[x] = static_cast<float>(pos - x0[x]);
  }
  for (int y = 0; y < height; ++y) {
    const double pos = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const int y0 = static_cast<int>(std::floor(pos));
    const int y1 = std::min(y0 + 1, src.height - 1);
    const float fy = static_cast<float>(pos - y0);
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < src.channels; ++c) {
        const float a = src.at(y0, x0[x], c), b = src.at(y0, x1[x], c);
        const float d = src.at(y1, x0[x], c), e = src.at(y1, x1[x], c);
        const float top = a + fx[x] * (b - a);
        const float bottom = d + fx[x] * (e - d);
        out.at(y, x, c) = top + fy * (bottom - top);
      }
    }
  }
  return out;
}

Raster preprocess(const Raster& rgb255, const AugmentConfig& config) {
  if (rgb255.height <= 0 || rgb255.width <= 0) {
    throw Error(ErrorKind::kShape, "image has zero area");
  }
  Raster rgb = rgb255;
  if (rgb.channels == 1) {
    Raster rep(rgb.height, rgb.width, 3);
    for (std::size_t p = 0; p < rgb.data.size(); ++p)
      rep.data[p * 3] = rep.data[p * 3 + 1] = rep.data[p * 3 + 2] = rgb.data[p];
    rgb = std::move(rep);
  } else if (rgb.channels != 3) {
    throw Error(ErrorKind::kShape, "expected 1 or 3 channels, got " + std::to_string(rgb.channels));
  }
  Raster out = resize_bilinear(rgb, config.target_height, config.target_width);
  const float scale = static_cast<float>(config.rescale_factor);
  for (float& v : out.data) v = std::clamp(v * scale, 0.0f, 1.0f);
  return out;
}

Raster preprocess(const Image8& image, const AugmentConfig& config) {
  return preprocess(to_rgb_float(image), config);
}

namespace {

// Maps an out-of-range index back into [0, n) per fill mode; -1 means "use
// the constant fill value".
int map_index(int i, int n, FillMode mode) {
  if (i >= 0 && i < n) return i;
  switch (mode) {
    case FillMode::kNearest: return std::clamp(i, 0, n - 1);
    case FillMode::kReflect: {
      // Half-sample symmetric: ... 1 0 | 0 1 ... n-1 | n-1 n-2 ...
      const int period = 2 * n;
      int m = i % period;
      if (m < 0) m += period;
      return m < n ? m : period - 1 - m;
    }
    case FillMode::kConstant: return -1;
  }
  return -1;
}

}  // namespace

Raster apply_draw(const Raster& src, const AugmentConfig& config, const AugmentDraw& draw) {
  if (draw.is_identity()) return src;
  const int h = src.height, w = src.width, ch = src.channels;
  Raster out(h, w, ch);
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  const double theta = draw.rotation_deg * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  const double tx = draw.shift_x * w, ty = draw.shift_y * h;
  constexpr float kFill = 0.0f;

  for (int y = 0; y < h; ++y) {
    for (int xo = 0; xo < w; ++xo) {
      // Invert flip, shear, shift, rotation in that order.
      const double x = draw.flip ? (w - 1 - xo) : xo;
      const double xs = x - draw.shear * (y - cy);
      const double dx = xs - tx - cx;
      const double dy = y - ty - cy;
      const double sx = cx + cos_t * dx - sin_t * dy;
      const double sy = cy + sin_t * dx + cos_t * dy;

      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const float fx = static_cast<float>(sx - x0);
      const float fy = static_cast<float>(sy - y0);
      const int ix0 = map_index(x0, w, config.fill_mode), ix1 = map_index(x0 + 1, w, config.fill_mode);
      const int iy0 = map_index(y0, h, config.fill_mode), iy1 = map_index(y0 + 1, h, config.fill_mode);
      auto sample = [&](int iy, int ix, int c) {
        return (iy < 0 || ix < 0) ? kFill : src.at(iy, ix, c);
      };
      for (int c = 0; c < ch; ++c) {
        const float a = sample(iy0, ix0, c), b = sample(iy0, ix1, c);
        const float d = sample(iy1, ix0, c), e = sample(iy1, ix1, c);
        const float top = a + fx * (b - a);
        const float bottom = d + fx * (e - d);
        out.at(y, xo, c) = std::clamp(top + fy * (bottom - top), 0.0f, 1.0f);
      }
    }
  }
  return out;
}

Raster transform_image(const Image8& image, const AugmentConfig& config, const AugmentDraw& draw) {
  return apply_draw(preprocess(image, config), config, draw);
}

BatchStream::BatchStream(const DatasetManifest& manifest, Split split, AugmentConfig config,
                         std::size_t batch_size, std::size_t epochs)
    : BatchStream(manifest, split, config, batch_size, epochs,
                  split == Split::kTrain ? StreamMode::kAugmented : StreamMode::kRescaleOnly) {}

BatchStream::BatchStream(const DatasetManifest& manifest, Split split, AugmentConfig config,
                         std::size_t batch_size, std::size_t epochs, StreamMode mode)
    : records_(manifest.records_in(split)),
      config_(config),
      batch_size_(batch_size),
      epochs_(epochs),
      mode_(mode) {
  config_.validate();
  if (records_.empty()) {
    throw Error(ErrorKind::kStream, "split '" + std::string(name_of(split)) + "' is empty");
  }
  if (batch_size_ == 0) throw Error(ErrorKind::kStream, "batch_size must be >= 1");
  std::map<std::string, std::uint64_t> seen;
  ordinals_.reserve(records_.size());
  for (const auto& r : records_) ordinals_.push_back(seen[r.byte_digest]++);
  reset();
}

std::size_t BatchStream::batches_per_epoch() const {
  return (records_.size() + batch_size_ - 1) / batch_size_;
}

void BatchStream::reset() {
  epoch_ = 0;
  cursor_ = 0;
  begin_epoch();
}

void BatchStream::begin_epoch() {
  order_.resize(records_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (mode_ == StreamMode::kAugmented) {
    Rng rng(mix_seed({config_.seed, 0x53485546464CULL, epoch_}));
    rng.shuffle(std::span<std::size_t>(order_));
  }
}

const Raster& BatchStream::resized(std::size_t position) {
  const auto key = records_[position].path.string();
  auto it = cache_.find(key);
  if (it == cache_.end()) {
    it = cache_.emplace(key, preprocess(load_image(records_[position].path), config_)).first;
  }
  return it->second;
}

std::optional<AugmentedBatch> BatchStream::next() {
  if (epoch_ >= epochs_) return std::nullopt;

  AugmentedBatch batch;
  batch.height = config_.target_height;
  batch.width = config_.target_width;
  batch.epoch_index = epoch_;
  const std::size_t end = std::min(cursor_ + batch_size_, records_.size());
  batch.batch = end - cursor_;
  batch.pixels.resize(batch.batch * batch.image_size());
  batch.labels.assign(batch.batch * kNumClasses, 0.0f);

  for (std::size_t i = 0; i < batch.batch; ++i) {
    const std::size_t pos = order_[cursor_ + i];
    const auto& rec = records_[pos];
    const Raster& base = resized(pos);
    AugmentDraw draw;
    if (mode_ == StreamMode::kAugmented) {
      draw = draw_for(config_, epoch_, rec.byte_digest, ordinals_[pos]);
    }
    const Raster img = apply_draw(base, config_, draw);
    std::copy(img.data.begin(), img.data.end(), batch.pixels.begin() + i * batch.image_size());
    const int label = index_of(rec.label);
    batch.labels[i * kNumClasses + static_cast<std::size_t>(label)] = 1.0f;
    batch.label_indices.push_back(label);
    batch.record_positions.push_back(pos);
    batch.draw_log.push_back(draw);
  }

  cursor_ = end;
  if (cursor_ >= records_.size()) {
    cursor_ = 0;
    ++epoch_;
    if (epoch_ < epochs_) begin_epoch();
  }
  return batch;
}

}  // namespace busi
