#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "busi/data.hpp"
#include "busi/image.hpp"
#include "busi/model.hpp"

namespace busi::testkit {

// Temporary directory removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag);
  ~ScratchDir();
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Gray speckle texture whose grain size encodes the class: normal fine,
// benign medium, malignant coarse. Deterministic in (label, seed, size).
Image8 texture_image(ClassLabel label, std::uint64_t seed, int height, int width);

struct SyntheticSpec {
  std::array<std::size_t, kNumClasses> per_class{100, 100, 100};
  std::uint64_t seed = 1;
  int min_size = 140;
  int max_size = 200;
  bool with_masks = false;  // also write "<name>_mask.png" companions
};

// Writes root/<class>/<class> (<i>).png. Returns the ingested manifest.
DatasetManifest write_synthetic_dataset(const std::filesystem::path& root, const SyntheticSpec& spec);

// Small spec and random backbone for fast model tests.
ClassifierSpec small_spec(int size = 32, int units = 16);
std::shared_ptr<const MobileNetV2> shared_backbone(int size);

// Marks every classifiable record as train (tiny sets below the split minimum).
DatasetManifest all_train(DatasetManifest manifest);

}  // namespace busi::testkit
