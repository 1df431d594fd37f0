#include "busi/tune.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "busi/digest.hpp"
#include "busi/error.hpp"
#include "busi/rng.hpp"

namespace busi {

namespace {

constexpr std::uint64_t kTrialStream = 0x545249414CULL;
constexpr const char* kLedgerHeader =
    "index\tseed\tdropout\tlearning_rate\tdense_units\tactivation\tobjective\tstatus\tnote\n";

template <typename T>
std::string join(const std::vector<T>& values, auto&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += fmt(values[i]);
  }
  return out;
}

std::vector<std::string> split_on(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t at = text.find(sep, start);
    out.emplace_back(text.substr(start, at == std::string_view::npos ? std::string_view::npos
                                                                     : at - start));
    if (at == std::string_view::npos) break;
    start = at + 1;
  }
  return out;
}

template <typename T>
T parse_field(const std::string& text, const std::string& what) {
  T value{};
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || p != text.data() + text.size()) {
    throw Error(ErrorKind::kParse, what + ": bad value '" + text + "'");
  }
  return value;
}

std::string clean_note(std::string note) {
  std::replace_if(note.begin(), note.end(), [](char c) { return c == '\t' || c == '\n' || c == '\r'; }, ' ');
  return note;
}

}  // namespace

void SearchSpace::validate() const {
  if (dropout_grid.empty()) throw Error(ErrorKind::kConfig, "search space: empty dropout grid");
  for (double d : dropout_grid) {
    if (!(d >= 0.0 && d < 1.0)) {
      throw Error(ErrorKind::kConfig, "search space: dropout " + format_double(d) + " outside [0,1)");
    }
  }
  if (!(learning_rate_low > 0.0 && learning_rate_low < learning_rate_high) ||
      !std::isfinite(learning_rate_high)) {
    throw Error(ErrorKind::kConfig, "search space: need 0 < learning_rate_low < learning_rate_high");
  }
  if (dense_units_choices.empty() || activation_choices.empty()) {
    throw Error(ErrorKind::kConfig, "search space: empty units or activation choices");
  }
  for (int u : dense_units_choices) {
    if (u < 1) throw Error(ErrorKind::kConfig, "search space: dense units must be positive");
  }
}

KeyValues SearchSpace::to_kv() const {
  KeyValues kv;
  kv.set("dropout_grid", join(dropout_grid, [](double d) { return format_double(d); }));
  kv.set("learning_rate_low", learning_rate_low);
  kv.set("learning_rate_high", learning_rate_high);
  kv.set("dense_units_choices", join(dense_units_choices, [](int u) { return std::to_string(u); }));
  kv.set("activation_choices",
         join(activation_choices, [](HeadActivation a) { return std::string(name_of(a)); }));
  return kv;
}

SearchSpace SearchSpace::from_kv(const KeyValues& kv) {
  SearchSpace s;
  if (kv.has("dropout_grid")) {
    s.dropout_grid.clear();
    for (const auto& item : split_on(kv.get("dropout_grid"), ',')) {
      s.dropout_grid.push_back(parse_field<double>(item, "dropout_grid"));
    }
  }
  if (kv.has("learning_rate_low")) s.learning_rate_low = kv.get_double("learning_rate_low");
  if (kv.has("learning_rate_high")) s.learning_rate_high = kv.get_double("learning_rate_high");
  if (kv.has("dense_units_choices")) {
    s.dense_units_choices.clear();
    for (const auto& item : split_on(kv.get("dense_units_choices"), ',')) {
      s.dense_units_choices.push_back(parse_field<int>(item, "dense_units_choices"));
    }
  }
  if (kv.has("activation_choices")) {
    s.activation_choices.clear();
    for (const auto& item : split_on(kv.get("activation_choices"), ',')) {
      s.activation_choices.push_back(head_activation_from_name(item));
    }
  }
  s.validate();
  return s;
}

bool TrialConfig::within(const SearchSpace& space) const {
  return std::find(space.dropout_grid.begin(), space.dropout_grid.end(), dropout_rate) !=
             space.dropout_grid.end() &&
         learning_rate >= space.learning_rate_low && learning_rate <= space.learning_rate_high &&
         std::find(space.dense_units_choices.begin(), space.dense_units_choices.end(),
                   dense_units) != space.dense_units_choices.end() &&
         std::find(space.activation_choices.begin(), space.activation_choices.end(), activation) !=
             space.activation_choices.end();
}

std::uint64_t trial_seed(std::uint64_t seed, std::size_t index) {
  return mix_seed({seed, static_cast<std::uint64_t>(index)});
}

TrialConfig sample_trial(const SearchSpace& space, std::uint64_t seed, std::size_t index) {
  space.validate();
  Rng rng(mix_seed({seed, kTrialStream, static_cast<std::uint64_t>(index)}));
  TrialConfig t;
  t.dropout_rate = space.dropout_grid[rng.below(space.dropout_grid.size())];
  const double lo = std::log(space.learning_rate_low), hi = std::log(space.learning_rate_high);
  t.learning_rate = std::clamp(std::exp(rng.uniform(lo, hi)), space.learning_rate_low,
                               space.learning_rate_high);
  t.dense_units = space.dense_units_choices[rng.below(space.dense_units_choices.size())];
  t.activation = space.activation_choices[rng.below(space.activation_choices.size())];
  return t;
}

std::string_view name_of(TrialStatus status) {
  return status == TrialStatus::kOk ? "ok" : "diverged";
}

bool better_trial(const TrialResult& a, const TrialResult& b) {
  if (a.objective != b.objective) return a.objective > b.objective;
  if (a.config.dropout_rate != b.config.dropout_rate) {
    return a.config.dropout_rate < b.config.dropout_rate;
  }
  if (a.config.learning_rate != b.config.learning_rate) {
    return a.config.learning_rate < b.config.learning_rate;
  }
  return a.index < b.index;
}

ClassifierSpec apply_trial(ClassifierSpec spec, const TrialConfig& trial) {
  spec.dropout_rate = trial.dropout_rate;
  spec.dense_units = trial.dense_units;
  spec.head_activation = trial.activation;
  return spec;
}

TrainingConfig apply_trial(TrainingConfig training, const TrialConfig& trial) {
  training.learning_rate = trial.learning_rate;
  return training;
}

SearchOutcome search(const SearchSpace& space, int budget, int trial_epochs,
                     const DatasetManifest& manifest, const AugmentConfig& augment,
                     std::uint64_t seed, const SearchContext& context) {
  space.validate();
  if (budget < 1) throw Error(ErrorKind::kConfig, "tune: budget must be >= 1");
  if (trial_epochs < 1) throw Error(ErrorKind::kConfig, "tune: trial_epochs must be >= 1");
  if (!context.backbone) throw Error(ErrorKind::kState, "tune: no backbone");

  SearchOutcome out;
  for (int i = 0; i < budget; ++i) {
    const auto index = static_cast<std::size_t>(i);
    TrialResult r;
    r.index = index;
    r.seed = trial_seed(seed, index);
    r.config = sample_trial(space, seed, index);

    TrainingConfig training = apply_trial(context.base_training, r.config);
    training.epochs = trial_epochs;
    training.seed = r.seed;
    TrainedClassifier model = build(apply_trial(context.base_spec, r.config), context.backbone,
                                    context.backbone_provenance, r.seed);
    try {
      model = train(std::move(model), manifest, augment, training);
      r.history = model.history;
      r.objective = r.history.epochs.empty() ? 0.0 : r.history.epochs.back().val_accuracy;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kDiverged) throw;
      r.status = TrialStatus::kDiverged;
      r.objective = 0.0;
      r.note = e.what();
    }
    if (!context.ledger_path.empty()) append_ledger(context.ledger_path, r);
    if (context.on_trial) context.on_trial(r);
    out.trials.push_back(std::move(r));
  }
  out.best = *std::min_element(out.trials.begin(), out.trials.end(),
                               [](const TrialResult& a, const TrialResult& b) {
                                 return better_trial(a, b);
                               });
  return out;
}

void append_ledger(const std::filesystem::path& path, const TrialResult& t) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream f(path, std::ios::app | std::ios::binary);
  if (!f) throw Error(ErrorKind::kIo, "cannot append to " + path.string());
  if (fresh) f << kLedgerHeader;
  f << t.index << '\t' << t.seed << '\t' << format_double(t.config.dropout_rate) << '\t'
    << format_double(t.config.learning_rate) << '\t' << t.config.dense_units << '\t'
    << name_of(t.config.activation) << '\t' << format_double(t.objective) << '\t'
    << name_of(t.status) << '\t' << clean_note(t.note) << '\n';
  if (!f) throw Error(ErrorKind::kIo, "cannot append to " + path.string());
}

std::vector<LedgerRow> read_ledger(const std::filesystem::path& path) {
  std::istringstream in(read_file_bytes(path));
  std::vector<LedgerRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    const auto cells = split_on(line, '\t');
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (cells.size() != 9) throw Error(ErrorKind::kParse, where + ": expected 9 columns");
    LedgerRow r;
    r.index = parse_field<std::size_t>(cells[0], where + " index");
    r.seed = parse_field<std::uint64_t>(cells[1], where + " seed");
    r.config.dropout_rate = parse_field<double>(cells[2], where + " dropout");
    r.config.learning_rate = parse_field<double>(cells[3], where + " learning_rate");
    r.config.dense_units = parse_field<int>(cells[4], where + " dense_units");
    r.config.activation = head_activation_from_name(cells[5]);
    r.objective = parse_field<double>(cells[6], where + " objective");
    if (cells[7] == "ok") r.status = TrialStatus::kOk;
    else if (cells[7] == "diverged") r.status = TrialStatus::kDiverged;
    else throw Error(ErrorKind::kParse, where + ": bad status '" + cells[7] + "'");
    r.note = cells[8];
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace busi
