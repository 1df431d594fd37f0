#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>

namespace busi {

inline constexpr std::size_t kNumClasses = 3;

// Index <-> name bijection: 0 normal, 1 benign, 2 malignant.
enum class ClassLabel : int { kNormal = 0, kBenign = 1, kMalignant = 2 };

inline constexpr std::array<ClassLabel, kNumClasses> kAllLabels = {
    ClassLabel::kNormal, ClassLabel::kBenign, ClassLabel::kMalignant};

inline constexpr std::array<std::string_view, kNumClasses> kLabelNames = {
    "normal", "benign", "malignant"};

constexpr int index_of(ClassLabel label) { return static_cast<int>(label); }

constexpr std::string_view name_of(ClassLabel label) {
  return kLabelNames[static_cast<std::size_t>(label)];
}

constexpr std::optional<ClassLabel> label_from_index(int index) {
  if (index < 0 || index >= static_cast<int>(kNumClasses)) return std::nullopt;
  return static_cast<ClassLabel>(index);
}

constexpr std::optional<ClassLabel> label_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (kLabelNames[i] == name) return static_cast<ClassLabel>(i);
  }
  return std::nullopt;
}

}  // namespace busi
