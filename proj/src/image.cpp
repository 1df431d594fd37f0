#include "busi/image.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "busi/digest.hpp"
#include "busi/error.hpp"

namespace busi {

Image8 decode_image(std::string_view bytes) {
  if (bytes.empty()) throw Error(ErrorKind::kDecode, "unsupported image: empty payload");
  const cv::Mat buffer(1, static_cast<int>(bytes.size()), CV_8UC1,
                       const_cast<char*>(bytes.data()));
  cv::Mat decoded;
  try {
    decoded = cv::imdecode(buffer, cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception& e) {
    throw Error(ErrorKind::kDecode, std::string("unsupported image: ") + e.what());
  }
  if (decoded.empty()) throw Error(ErrorKind::kDecode, "unsupported image");
  if (decoded.rows == 0 || decoded.cols == 0) {
    throw Error(ErrorKind::kShape, "image has zero area");
  }

  if (decoded.depth() == CV_16U) {
    decoded.convertTo(decoded, CV_8U, 1.0 / 257.0);
  } else if (decoded.depth() != CV_8U) {
    throw Error(ErrorKind::kDecode, "unsupported image: pixel depth");
  }

  cv::Mat out;
  switch (decoded.channels()) {
    case 1: out = decoded; break;
    case 2: cv::extractChannel(decoded, out, 0); break;
    case 3: cv::cvtColor(decoded, out, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(decoded, out, cv::COLOR_BGRA2RGB); break;
    default: throw Error(ErrorKind::kDecode, "unsupported image: channel count");
  }
  if (!out.isContinuous()) out = out.clone();

  Image8 image;
  image.height = out.rows;
  image.width = out.cols;
  image.channels = out.channels();
  image.data.assign(out.data, out.data + out.total() * out.elemSize());
  return image;
}

Image8 load_image(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const Error& e) {
    throw Error(ErrorKind::kDecode, "cannot read image " + path.string() + ": " + e.what());
  }
  try {
    return decode_image(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

Raster to_rgb_float(const Image8& image) {
  if (image.height <= 0 || image.width <= 0) {
    throw Error(ErrorKind::kShape, "image has zero area");
  }
  Raster out(image.height, image.width, 3);
  const std::size_t pixels = static_cast<std::size_t>(image.height) * image.width;
  for (std::size_t p = 0; p < pixels; ++p) {
    for (int c = 0; c < 3; ++c) {
      const int src_c = image.channels == 1 ? 0 : c;
      out.data[p * 3 + c] = static_cast<float>(image.data[p * image.channels + src_c]);
    }
  }
  return out;
}

std::string encode_png(const Image8& image) {
  const int type = image.channels == 1 ? CV_8UC1 : CV_8UC3;
  cv::Mat mat(image.height, image.width, type, const_cast<std::uint8_t*>(image.data.data()));
  cv::Mat bgr;
  if (image.channels == 3) {
    cv::cvtColor(mat, bgr, cv::COLOR_RGB2BGR);
  } else {
    bgr = mat;
  }
  std::vector<unsigned char> buf;
  if (!cv::imencode(".png", bgr, buf)) throw Error(ErrorKind::kIo, "png encode failed");
  return std::string(buf.begin(), buf.end());
}

void save_png(const std::filesystem::path& path, const Image8& image) {
  write_file_bytes(path, encode_png(image));
}

Image8 to_image8(const Raster& raster01) {
  Image8 out;
  out.height = raster01.height;
  out.width = raster01.width;
  out.channels = raster01.channels;
  out.data.resize(raster01.data.size());
  std::transform(raster01.data.begin(), raster01.data.end(), out.data.begin(), [](float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  });
  return out;
}

}  // namespace busi
