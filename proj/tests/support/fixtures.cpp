#include "fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <unistd.h>

#include "busi/rng.hpp"

namespace busi::testkit {

ScratchDir::ScratchDir(const std::string& tag) {
  static int counter = 0;
  path_ = std::filesystem::temp_directory_path() /
          ("busi_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

ScratchDir::~ScratchDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

namespace {

// Three passes of a box filter approximate a Gaussian blur.
void box_blur(std::vector<double>& v, int height, int width, int radius) {
  if (radius <= 0) return;
  std::vector<double> tmp(v.size());
  const auto pass = [&](bool horizontal) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        double sum = 0.0;
        int count = 0;
        for (int k = -radius; k <= radius; ++k) {
          const int yy = horizontal ? y : std::clamp(y + k, 0, height - 1);
          const int xx = horizontal ? std::clamp(x + k, 0, width - 1) : x;
          sum += v[static_cast<std::size_t>(yy) * width + xx];
          ++count;
        }
        tmp[static_cast<std::size_t>(y) * width + x] = sum / count;
      }
    }
    v.swap(tmp);
  };
  for (int i = 0; i < 3; ++i) {
    pass(true);
    pass(false);
  }
}

}  // namespace

Image8 texture_image(ClassLabel label, std::uint64_t seed, int height, int width) {
  Rng rng(mix_seed({seed, static_cast<std::uint64_t>(index_of(label)), 0x54455854ULL}));
  Image8 img;
  img.height = height;
  img.width = width;
  img.channels = 1;
  const std::size_t n = static_cast<std::size_t>(height) * width;
  img.data.resize(n);
  const double base = rng.uniform(80.0, 120.0);
  const double contrast = rng.uniform(30.0, 40.0);
  // Speckle grain: normal fine, benign medium, malignant coarse.
  const int radius = label == ClassLabel::kNormal ? 1 : label == ClassLabel::kBenign ? 4 : 12;
  std::vector<double> noise(n);
  for (double& v : noise) v = rng.normal();
  box_blur(noise, height, width, radius);
  double mean = 0.0, sq = 0.0;
  for (double v : noise) mean += v;
  mean /= static_cast<double>(n);
  for (double v : noise) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const double v = base + contrast * (noise[i] - mean) / sd;
    img.data[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }
  return img;
}

DatasetManifest write_synthetic_dataset(const std::filesystem::path& root, const SyntheticSpec& spec) {
  Rng sizes(mix_seed({spec.seed, 0x53495A45ULL}));
  for (ClassLabel label : kAllLabels) {
    const std::string name(name_of(label));
    const auto dir = root / name;
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < spec.per_class[static_cast<std::size_t>(index_of(label))]; ++i) {
      const int h = spec.min_size + static_cast<int>(sizes.below(
                                        static_cast<std::uint64_t>(spec.max_size - spec.min_size + 1)));
      const int w = spec.min_size + static_cast<int>(sizes.below(
                                        static_cast<std::uint64_t>(spec.max_size - spec.min_size + 1)));
      const std::string stem = name + " (" + std::to_string(i + 1) + ")";
      const Image8 img = texture_image(label, mix_seed({spec.seed, i}), h, w);
      save_png(dir / (stem + ".png"), img);
      if (spec.with_masks) {
        Image8 mask = img;
        for (auto& p : mask.data) p = p > 100 ? 255 : 0;
        save_png(dir / (stem + "_mask.png"), mask);
      }
    }
  }
  return ingest(root).manifest;
}

ClassifierSpec small_spec(int size, int units) {
  ClassifierSpec s;
  s.input_height = size;
  s.input_width = size;
  s.dense_units = units;
  return s;
}

std::shared_ptr<const MobileNetV2> shared_backbone(int size) {
  static std::mutex mu;
  static std::map<int, std::shared_ptr<const MobileNetV2>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[size];
  if (!slot) slot = std::make_shared<const MobileNetV2>(MobileNetV2::random_calibrated(11, size, size));
  return slot;
}

DatasetManifest all_train(DatasetManifest manifest) {
  for (auto& r : manifest.records) {
    if (!r.is_mask) r.split = Split::kTrain;
  }
  return manifest;
}

}  // namespace busi::testkit
