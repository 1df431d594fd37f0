#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "busi/data.hpp"
#include "busi/image.hpp"
#include "busi/kv.hpp"

namespace busi {

enum class FillMode { kNearest, kReflect, kConstant };

std::string_view name_of(FillMode mode);
FillMode fill_mode_from_name(std::string_view name);

struct AugmentConfig {
  double rescale_factor = 1.0 / 255.0;
  double rotation_max_deg = 20.0;
  double shift_fraction = 0.2;  // of each dimension
  double shear_fraction = 0.2;  // shear coefficient (x += k * (y - cy))
  bool horizontal_flip = true;
  FillMode fill_mode = FillMode::kNearest;
  int target_height = 150;
  int target_width = 150;
  std::uint64_t seed = 0;

  void validate() const;
  // All magnitudes zero and flip off: only resize and rescale remain.
  static AugmentConfig identity();

  KeyValues to_kv() const;
  static AugmentConfig from_kv(const KeyValues& kv);
  bool operator==(const AugmentConfig&) const = default;
};

// One sampled set of augmentation parameters.
struct AugmentDraw {
  double rotation_deg = 0.0;
  double shift_x = 0.0;  // fraction of width, positive moves content right
  double shift_y = 0.0;  // fraction of height, positive moves content down
  double shear = 0.0;
  bool flip = false;

  bool is_identity() const {
    return rotation_deg == 0.0 && shift_x == 0.0 && shift_y == 0.0 && shear == 0.0 && !flip;
  }
  bool within(const AugmentConfig& config) const;
  bool operator==(const AugmentDraw&) const = default;
};

// Draw derived from (seed, epoch, record digest, duplicate ordinal) only, so a
// record's draw does not depend on batch composition or thread scheduling.
AugmentDraw draw_for(const AugmentConfig& config, std::uint64_t epoch, const std::string& digest,
                     std::uint64_t ordinal);

// Bilinear resize with half-pixel centers, edge clamped.
Raster resize_bilinear(const Raster& src, int height, int width);

// Evaluation path: resize to the target then rescale. Output channels = 3.
Raster preprocess(const Raster& rgb255, const AugmentConfig& config);
Raster preprocess(const Image8& image, const AugmentConfig& config);

// Geometric part on an already resized+rescaled raster: rotate, shift, shear
// composed into one inverse map sampled bilinearly, exposed pixels filled per
// fill mode, then horizontal flip. Output clamped to [0,1].
Raster apply_draw(const Raster& rescaled, const AugmentConfig& config, const AugmentDraw& draw);

// Full pipeline: resize -> rescale -> rotate -> shift -> shear -> flip -> fill.
Raster transform_image(const Image8& image, const AugmentConfig& config, const AugmentDraw& draw);

struct AugmentedBatch {
  std::size_t batch = 0;
  int height = 0;
  int width = 0;
  std::vector<float> pixels;        // batch x height x width x 3
  std::vector<float> labels;        // batch x 3, one-hot
  std::vector<int> label_indices;   // batch
  std::vector<std::size_t> record_positions;  // index into the split's record list
  std::size_t epoch_index = 0;
  std::vector<AugmentDraw> draw_log;

  std::size_t image_size() const { return static_cast<std::size_t>(height) * width * 3; }
  const float* image(std::size_t i) const { return pixels.data() + i * image_size(); }
};

enum class StreamMode { kAugmented, kRescaleOnly };

// Lazily yields batches over `epochs` passes of one split. Augmented streams
// reshuffle per epoch and sample fresh draws per image; rescale-only streams
// keep manifest order and are draw-free.
class BatchStream {
 public:
  BatchStream(const DatasetManifest& manifest, Split split, AugmentConfig config,
              std::size_t batch_size, std::size_t epochs);
  BatchStream(const DatasetManifest& manifest, Split split, AugmentConfig config,
              std::size_t batch_size, std::size_t epochs, StreamMode mode);

  std::optional<AugmentedBatch> next();
  void reset();

  std::size_t split_size() const { return records_.size(); }
  std::size_t batches_per_epoch() const;
  StreamMode mode() const { return mode_; }
  const std::vector<ImageRecord>& records() const { return records_; }

 private:
  const Raster& resized(std::size_t position);
  void begin_epoch();

  std::vector<ImageRecord> records_;
  std::vector<std::uint64_t> ordinals_;
  AugmentConfig config_;
  std::size_t batch_size_;
  std::size_t epochs_;
  StreamMode mode_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
  std::map<std::string, Raster> cache_;  // path -> resized+rescaled
};

}  // namespace busi
