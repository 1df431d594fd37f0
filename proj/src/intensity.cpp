#include "busi/intensity.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "busi/csv.hpp"
#include "busi/digest.hpp"
#include "busi/error.hpp"
#include "busi/kv.hpp"

namespace busi {

double image_mean_intensity(const Image8& image) {
  const std::size_t pixels = static_cast<std::size_t>(image.height) * image.width;
  if (pixels == 0) throw Error(ErrorKind::kShape, "image has zero area");
  double sum = 0.0;
  if (image.channels == 1) {
    for (std::uint8_t v : image.data) sum += v;
  } else {
    for (std::size_t p = 0; p < pixels; ++p) {
      const std::uint8_t* px = image.data.data() + p * image.channels;
      sum += 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    }
  }
  return std::clamp(sum / (255.0 * static_cast<double>(pixels)), 0.0, 1.0);
}

double image_mean_intensity(const std::filesystem::path& file) {
  try {
    return image_mean_intensity(load_image(file));
  } catch (const Error& e) {
    const std::string what = e.what();
    if (what.find(file.string()) != std::string::npos) throw;
    throw Error(e.kind(), file.string() + ": " + what);
  }
}

double quantile(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw Error(ErrorKind::kInput, "quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double sample_skewness(std::span<const double> values) {
  const auto n = static_cast<double>(values.size());
  if (values.size() < 3) return 0.0;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*lo == *hi) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double m2 = 0.0, m3 = 0.0;
  for (double v : values) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= n;
  m3 /= n;
  if (m2 <= 0.0) return 0.0;
  const double g1 = m3 / std::pow(m2, 1.5);
  return std::sqrt(n * (n - 1.0)) / (n - 2.0) * g1;
}

IntensityStats compute_stats(ClassLabel label, std::span<const double> values) {
  if (values.empty()) {
    throw Error(ErrorKind::kInput, "no images for class " + std::string(name_of(label)));
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  IntensityStats s;
  s.label = label;
  s.n = sorted.size();
  s.min = sorted.front();
  s.max = sorted.back();
  s.q1 = quantile(sorted, 0.25);
  s.median = quantile(sorted, 0.5);
  s.q3 = quantile(sorted, 0.75);
  double sum = 0.0;
  for (double v : sorted) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  s.skewness = sample_skewness(sorted);
  const double iqr = s.q3 - s.q1;
  const double lo = s.q1 - 1.5 * iqr, hi = s.q3 + 1.5 * iqr;
  s.outlier_count = static_cast<std::size_t>(
      std::count_if(sorted.begin(), sorted.end(), [&](double v) { return v < lo || v > hi; }));
  return s;
}

std::size_t Histogram::total() const {
  std::size_t t = 0;
  for (std::size_t c : counts) t += c;
  return t;
}

Histogram histogram(std::span<const double> values, std::size_t bins) {
  if (bins == 0) throw Error(ErrorKind::kConfig, "histogram needs at least one bin");
  Histogram h;
  h.counts.assign(bins, 0);
  for (double v : values) {
    const double clamped = std::clamp(v, 0.0, 1.0);
    auto b = static_cast<std::size_t>(clamped * static_cast<double>(bins));
    ++h.counts[std::min(b, bins - 1)];
  }
  return h;
}

std::string_view name_of(SkewDirection d) {
  switch (d) {
    case SkewDirection::kLeft: return "left";
    case SkewDirection::kRight: return "right";
    default: return "symmetric";
  }
}

IntensityReport intensity_report(const std::vector<ImageIntensity>& images, std::size_t bins) {
  IntensityReport r;
  r.images = images;
  std::array<std::vector<double>, kNumClasses> per_class;
  std::vector<double> pooled;
  for (const auto& img : images) {
    per_class[index_of(img.label)].push_back(img.intensity);
    pooled.push_back(img.intensity);
  }
  if (pooled.empty()) throw Error(ErrorKind::kInput, "intensity report: no images");
  for (ClassLabel label : kAllLabels) {
    const auto& v = per_class[index_of(label)];
    if (v.empty()) {
      r.gaps.push_back("missing class: " + std::string(name_of(label)));
      continue;
    }
    r.classes[index_of(label)] = compute_stats(label, v);
  }
  r.pooled = histogram(pooled, bins);
  const IntensityStats all = compute_stats(ClassLabel::kNormal, pooled);
  r.pooled_mean = all.mean;
  r.pooled_median = all.median;
  r.pooled_skewness = all.skewness;
  r.skew = all.skewness > 0.0 ? SkewDirection::kRight
           : all.skewness < 0.0 ? SkewDirection::kLeft
                                : SkewDirection::kSymmetric;
  for (ClassLabel label : kAllLabels) {
    if (r.classes[index_of(label)]) r.median_order.push_back(label);
  }
  std::stable_sort(r.median_order.begin(), r.median_order.end(), [&](ClassLabel a, ClassLabel b) {
    return r.classes[index_of(a)]->median < r.classes[index_of(b)]->median;
  });
  return r;
}

IntensityReport intensity_report(const DatasetManifest& manifest, std::size_t bins) {
  std::vector<ImageIntensity> images;
  std::set<std::filesystem::path> seen;
  for (const auto& rec : manifest.records) {
    if (rec.is_mask || !seen.insert(rec.path).second) continue;
    images.push_back({rec.path, rec.label, image_mean_intensity(rec.path)});
  }
  return intensity_report(images, bins);
}

IntensityStats class_stats(const DatasetManifest& manifest, ClassLabel label) {
  std::vector<double> values;
  std::set<std::filesystem::path> seen;
  for (const auto& rec : manifest.records) {
    if (rec.is_mask || rec.label != label || !seen.insert(rec.path).second) continue;
    values.push_back(image_mean_intensity(rec.path));
  }
  return compute_stats(label, values);
}

nlohmann::json to_json(const IntensityReport& r) {
  nlohmann::json j;
  nlohmann::json classes = nlohmann::json::object();
  for (ClassLabel label : kAllLabels) {
    const auto& s = r.classes[index_of(label)];
    if (!s) {
      classes[std::string(name_of(label))] = nullptr;
      continue;
    }
    classes[std::string(name_of(label))] = {
        {"n", s->n},          {"min", s->min},   {"q1", s->q1},
        {"median", s->median}, {"q3", s->q3},     {"max", s->max},
        {"mean", s->mean},    {"skewness", s->skewness}, {"outlier_count", s->outlier_count}};
  }
  j["classes"] = classes;
  j["gaps"] = r.gaps;
  j["pooled"] = {{"mean", r.pooled_mean},
                 {"median", r.pooled_median},
                 {"skewness", r.pooled_skewness},
                 {"skew_direction", name_of(r.skew)},
                 {"histogram", {{"lo", r.pooled.lo}, {"hi", r.pooled.hi}, {"counts", r.pooled.counts}}}};
  std::vector<std::string> order;
  for (ClassLabel l : r.median_order) order.emplace_back(name_of(l));
  j["median_order"] = order;
  return j;
}

void write_report(const IntensityReport& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());
  write_file_bytes(dir / "intensity.json", to_json(r).dump(2) + "\n");

  std::string stats = "class,n,min,q1,median,q3,max,mean,skewness,outlier_count\n";
  for (ClassLabel label : kAllLabels) {
    const auto& s = r.classes[index_of(label)];
    if (!s) continue;
    std::ostringstream row;
    row << name_of(label) << ',' << s->n << ',' << format_double(s->min) << ','
        << format_double(s->q1) << ',' << format_double(s->median) << ',' << format_double(s->q3)
        << ',' << format_double(s->max) << ',' << format_double(s->mean) << ','
        << format_double(s->skewness) << ',' << s->outlier_count << '\n';
    stats += row.str();
  }
  write_file_bytes(dir / "intensity_stats.csv", stats);

  std::string hist = "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < r.pooled.counts.size(); ++b) {
    hist += format_double(r.pooled.lo + static_cast<double>(b) * r.pooled.bin_width()) + "," +
            format_double(r.pooled.lo + static_cast<double>(b + 1) * r.pooled.bin_width()) + "," +
            std::to_string(r.pooled.counts[b]) + "\n";
  }
  write_file_bytes(dir / "intensity_histogram.csv", hist);

  std::string images = "path,class,intensity\n";
  for (const auto& img : r.images) {
    images += csv_field(img.path.string()) + "," + std::string(name_of(img.label)) + "," +
              format_double(img.intensity) + "\n";
  }
  write_file_bytes(dir / "intensity_images.csv", images);
}

}  // namespace busi
