#include "busi/tensor_archive.hpp"

#include <bit>
#include <cstring>
#include <numeric>

#include "busi/digest.hpp"
#include "busi/error.hpp"

namespace busi {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes little-endian");

namespace {

constexpr std::string_view kMagic = "BUSITNS1";

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(std::string_view bytes, std::string_view source) : bytes_(bytes), source_(source) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorKind::kLoad, std::string(source_) + ": truncated tensor archive at byte " +
                                        std::to_string(pos_));
    }
  }
  std::string_view bytes_;
  std::string_view source_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t Tensor::element_count() const {
  return std::accumulate(shape.begin(), shape.end(), std::uint64_t{1}, std::multiplies<>());
}

std::string encode_tensors(const TensorMap& tensors) {
  std::string out(kMagic);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (t.element_count() != t.values.size()) {
      throw Error(ErrorKind::kShape, "tensor '" + name + "' shape does not match its values");
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.values.data()), t.values.size() * sizeof(float));
  }
  return out;
}

TensorMap decode_tensors(std::string_view bytes, std::string_view source) {
  Reader r(bytes, source);
  if (r.take(kMagic.size()) != kMagic) {
    throw Error(ErrorKind::kLoad, std::string(source) + ": not a tensor archive (bad magic)");
  }
  TensorMap out;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    std::string name(r.take(name_len));
    Tensor t;
    const auto ndim = r.get<std::uint32_t>();
    if (ndim > 8) throw Error(ErrorKind::kLoad, std::string(source) + ": bad rank for " + name);
    for (std::uint32_t d = 0; d < ndim; ++d) t.shape.push_back(r.get<std::uint64_t>());
    const auto n = t.element_count();
    if (n > bytes.size() / sizeof(float)) {
      throw Error(ErrorKind::kLoad, std::string(source) + ": truncated tensor archive in " + name);
    }
    const auto raw = r.take(n * sizeof(float));
    t.values.resize(n);
    std::memcpy(t.values.data(), raw.data(), raw.size());
    out.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) throw Error(ErrorKind::kLoad, std::string(source) + ": trailing bytes in archive");
  return out;
}

void save_tensors(const TensorMap& tensors, const std::filesystem::path& path) {
  write_file_bytes(path, encode_tensors(tensors));
}

TensorMap load_tensors(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const Error& e) {
    throw Error(ErrorKind::kLoad, e.what());
  }
  return decode_tensors(bytes, path.string());
}

}  // namespace busi
