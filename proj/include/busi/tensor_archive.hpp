#pragma once

// Named float32 tensors in a small little-endian container:
//   "BUSITNS1" | u32 count | { u32 name_len | name | u32 ndim | u64 dims[ndim] | f32 data } * count

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace busi {

struct Tensor {
  std::vector<std::uint64_t> shape;
  std::vector<float> values;

  std::uint64_t element_count() const;
  bool operator==(const Tensor&) const = default;
};

using TensorMap = std::map<std::string, Tensor>;

std::string encode_tensors(const TensorMap& tensors);
// Throws Error{kLoad} on a bad magic, truncation, or inconsistent sizes.
TensorMap decode_tensors(std::string_view bytes, std::string_view source = "<archive>");

void save_tensors(const TensorMap& tensors, const std::filesystem::path& path);
TensorMap load_tensors(const std::filesystem::path& path);

}  // namespace busi
