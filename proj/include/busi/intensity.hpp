#pragma once

// Dataset intensity profile: per-image mean luminance on the [0,1] scale and
// per-class box-plot statistics over those means.

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "busi/data.hpp"
#include "busi/image.hpp"

namespace busi {

// Luma 0.299 R + 0.587 G + 0.114 B (gray taken as is), scaled by 1/255, averaged.
double image_mean_intensity(const Image8& image);
// Throws Error{kDecode} naming the file.
double image_mean_intensity(const std::filesystem::path& file);

// Linear interpolation between order statistics (type 7). `sorted` ascending, non-empty.
double quantile(std::span<const double> sorted, double p);
// Adjusted Fisher-Pearson coefficient G1; 0 for n < 3 or zero variance.
double sample_skewness(std::span<const double> values);

struct IntensityStats {
  ClassLabel label = ClassLabel::kNormal;
  std::size_t n = 0;
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
  double mean = 0.0;
  double skewness = 0.0;
  std::size_t outlier_count = 0;  // outside [q1 - 1.5 IQR, q3 + 1.5 IQR]
};

// Throws Error{kInput} for an empty value set.
IntensityStats compute_stats(ClassLabel label, std::span<const double> values);

struct Histogram {
  double lo = 0.0, hi = 1.0;
  std::vector<std::size_t> counts;

  double bin_width() const { return (hi - lo) / static_cast<double>(counts.size()); }
  std::size_t total() const;
};

// Fixed-width bins over [0,1]; 1.0 falls in the last bin.
Histogram histogram(std::span<const double> values, std::size_t bins = 50);

enum class SkewDirection { kLeft, kSymmetric, kRight };
std::string_view name_of(SkewDirection d);

struct ImageIntensity {
  std::filesystem::path path;
  ClassLabel label = ClassLabel::kNormal;
  double intensity = 0.0;
};

struct IntensityReport {
  std::array<std::optional<IntensityStats>, kNumClasses> classes;
  std::vector<std::string> gaps;  // one marker per empty class
  Histogram pooled;
  double pooled_mean = 0.0;
  double pooled_median = 0.0;
  double pooled_skewness = 0.0;
  SkewDirection skew = SkewDirection::kSymmetric;
  std::vector<ClassLabel> median_order;  // ascending median, present classes only
  std::vector<ImageIntensity> images;
};

// Throws Error{kInput} if `label` has no non-mask record.
IntensityStats class_stats(const DatasetManifest& manifest, ClassLabel label);
// Non-mask records, each distinct path counted once.
IntensityReport intensity_report(const DatasetManifest& manifest, std::size_t bins = 50);
IntensityReport intensity_report(const std::vector<ImageIntensity>& images, std::size_t bins = 50);

nlohmann::json to_json(const IntensityReport& report);
// intensity.json, intensity_stats.csv, intensity_histogram.csv, intensity_images.csv.
void write_report(const IntensityReport& report, const std::filesystem::path& dir);

}  // namespace busi
