#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "busi/model.hpp"

namespace busi {

struct SearchSpace {
  std::vector<double> dropout_grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  double learning_rate_low = 1e-4;
  double learning_rate_high = 1e-2;
  std::vector<int> dense_units_choices{256, 512, 1024};
  std::vector<HeadActivation> activation_choices{HeadActivation::kRelu, HeadActivation::kTanh};

  void validate() const;
  KeyValues to_kv() const;
  static SearchSpace from_kv(const KeyValues& kv);
};

struct TrialConfig {
  double dropout_rate = 0.5;
  double learning_rate = 1e-3;
  int dense_units = 1024;
  HeadActivation activation = HeadActivation::kRelu;

  bool within(const SearchSpace& space) const;
  bool operator==(const TrialConfig&) const = default;
};

// Trial `index` of a search seeded with `seed`; depends on nothing else.
TrialConfig sample_trial(const SearchSpace& space, std::uint64_t seed, std::size_t index);
std::uint64_t trial_seed(std::uint64_t seed, std::size_t index);

enum class TrialStatus { kOk, kDiverged };
std::string_view name_of(TrialStatus status);

struct TrialResult {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  TrialConfig config;
  double objective = 0.0;  // final-epoch validation accuracy
  TrainingHistory history;
  TrialStatus status = TrialStatus::kOk;
  std::string note;
};

// Strict "a is preferred over b": higher objective, then lower dropout, then
// lower learning rate, then lower index.
bool better_trial(const TrialResult& a, const TrialResult& b);

struct SearchContext {
  ClassifierSpec base_spec;        // non-searched fields (input size, freezing)
  TrainingConfig base_training;    // batch size, optimizer
  std::shared_ptr<const MobileNetV2> backbone;
  std::string backbone_provenance;
  std::filesystem::path ledger_path;  // appended per trial when non-empty
  std::function<void(const TrialResult&)> on_trial;
};

struct SearchOutcome {
  TrialResult best;
  std::vector<TrialResult> trials;
};

// Throws Error{kConfig} for budget < 1 or trial_epochs < 1.
SearchOutcome search(const SearchSpace& space, int budget, int trial_epochs,
                     const DatasetManifest& manifest, const AugmentConfig& augment,
                     std::uint64_t seed, const SearchContext& context);

// Spec and training config for retraining the winner.
ClassifierSpec apply_trial(ClassifierSpec spec, const TrialConfig& trial);
TrainingConfig apply_trial(TrainingConfig training, const TrialConfig& trial);

// Append-only trial ledger (TSV): index, seed, dropout, learning_rate,
// dense_units, activation, objective, status, note.
void append_ledger(const std::filesystem::path& path, const TrialResult& trial);
struct LedgerRow {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  TrialConfig config;
  double objective = 0.0;
  TrialStatus status = TrialStatus::kOk;
  std::string note;
};
std::vector<LedgerRow> read_ledger(const std::filesystem::path& path);

}  // namespace busi
