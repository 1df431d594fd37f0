#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace busi {

// Decoded 8-bit raster, row-major HWC, channels 1 (gray) or 3 (RGB order).
struct Image8 {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;

  std::uint8_t at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image8&) const = default;
};

// Float raster, row-major HWC.
struct Raster {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  Raster() = default;
  Raster(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, fill) {}

  float& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::size_t size() const { return data.size(); }
  bool operator==(const Raster&) const = default;
};

// Throws Error{kDecode} for undecodable bytes, Error{kShape} for zero area.
Image8 decode_image(std::string_view bytes);
Image8 load_image(const std::filesystem::path& path);

// Gray is replicated to three channels; values stay on the 0..255 scale.
Raster to_rgb_float(const Image8& image);

std::string encode_png(const Image8& image);
void save_png(const std::filesystem::path& path, const Image8& image);

// Rounds [0,1] floats back to bytes (used for fixtures and previews).
Image8 to_image8(const Raster& raster01);

}  // namespace busi
