#include "busi/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>

#include "busi/digest.hpp"
#include "busi/error.hpp"
#include "busi/kv.hpp"
#include "busi/rng.hpp"

namespace busi {

namespace fs = std::filesystem;

namespace {

constexpr std::array<Split, 3> kAssignedSplits = {Split::kTrain, Split::kValidation,
                                                  Split::kTest};

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

bool is_image_extension(const fs::path& p) {
  const std::string ext = lower(p.extension().string());
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

// Candidate per-cell counts around the quota, at least one per cell.
std::vector<std::size_t> cell_candidates(double quota, std::size_t class_size) {
  const auto fl = static_cast<long long>(std::floor(quota + 1e-9));
  std::vector<std::size_t> out;
  for (long long v = std::max(1LL, fl - 1); v <= fl + 2; ++v) {
    if (v <= static_cast<long long>(class_size)) out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

using Allocation = std::array<std::array<std::size_t, 3>, kNumClasses>;

// Integer class x split table with row sums = class sizes and column sums =
// global targets, minimizing total deviation from the ratio quotas. Ties go
// to the table with more records in train (then validation), class by class.
std::optional<Allocation> stratified_allocation(const ClassCounts& sizes,
                                                const std::array<std::size_t, 3>& targets,
                                                const std::array<double, 3>& ratios) {
  std::array<std::vector<std::array<std::size_t, 3>>, kNumClasses> rows;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const std::size_t n = sizes[c];
    const auto train_c = cell_candidates(n * ratios[0], n);
    const auto val_c = cell_candidates(n * ratios[1], n);
    const auto test_c = cell_candidates(n * ratios[2], n);
    for (std::size_t tr : train_c) {
      for (std::size_t va : val_c) {
        if (tr + va >= n) continue;
        const std::size_t te = n - tr - va;
        if (std::find(test_c.begin(), test_c.end(), te) == test_c.end()) continue;
        rows[c].push_back({tr, va, te});
      }
    }
  }

  std::optional<Allocation> best;
  double best_cost = std::numeric_limits<double>::infinity();
  auto cost_of = [&](const Allocation& a) {
    double cost = 0.0;
    for (std::size_t c = 0; c < kNumClasses; ++c)
      for (std::size_t s = 0; s < 3; ++s)
        cost += std::abs(static_cast<double>(a[c][s]) - sizes[c] * ratios[s]);
    return cost;
  };
  auto prefers = [](const Allocation& a, const Allocation& b) {
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      if (a[c][0] != b[c][0]) return a[c][0] > b[c][0];
      if (a[c][1] != b[c][1]) return a[c][1] > b[c][1];
    }
    return false;
  };

  for (const auto& r0 : rows[0]) {
    for (const auto& r1 : rows[1]) {
      for (const auto& r2 : rows[2]) {
        bool ok = true;
        for (std::size_t s = 0; s < 3 && ok; ++s) ok = r0[s] + r1[s] + r2[s] == targets[s];
        if (!ok) continue;
        const Allocation a{r0, r1, r2};
        const double cost = cost_of(a);
        if (!best || cost < best_cost - 1e-12 ||
            (std::abs(cost - best_cost) <= 1e-12 && prefers(a, *best))) {
          best = a;
          best_cost = cost;
        }
      }
    }
  }
  return best;
}

[[noreturn]] void parse_fail(std::string_view source, std::size_t line, std::string_view field,
                             const std::string& what) {
  std::ostringstream os;
  os << source << ":" << line << ": field '" << field << "': " << what;
  throw Error(ErrorKind::kParse, os.str());
}

}  // namespace

std::string_view name_of(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
    case Split::kUnassigned: return "unassigned";
  }
  return "unassigned";
}

std::optional<Split> split_from_name(std::string_view name) {
  for (Split s : {Split::kTrain, Split::kValidation, Split::kTest, Split::kUnassigned}) {
    if (name_of(s) == name) return s;
  }
  return std::nullopt;
}

void SplitSpec::validate() const {
  double sum = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0 && r < 1.0)) {
      throw Error(ErrorKind::kSpec, "split ratios must each lie in (0,1), got " + format_double(r));
    }
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw Error(ErrorKind::kSpec, "split ratios must sum to 1, got " + format_double(sum));
  }
}

ClassCounts tally_classifiable(const std::vector<ImageRecord>& records) {
  ClassCounts counts{};
  std::set<std::pair<fs::path, std::string>> seen;
  for (const auto& r : records) {
    if (!r.is_mask && seen.insert({r.path, r.byte_digest}).second) {
      ++counts[static_cast<std::size_t>(r.label)];
    }
  }
  return counts;
}

std::size_t DatasetManifest::classifiable_count() const {
  return std::accumulate(class_counts.begin(), class_counts.end(), std::size_t{0});
}

bool DatasetManifest::is_split() const {
  bool any = false;
  for (const auto& r : records) {
    if (r.is_mask) continue;
    if (r.split == Split::kUnassigned) return false;
    any = true;
  }
  return any;
}

std::vector<ImageRecord> DatasetManifest::records_in(Split split) const {
  std::vector<ImageRecord> out;
  for (const auto& r : records) {
    if (!r.is_mask && r.split == split) out.push_back(r);
  }
  return out;
}

ClassCounts DatasetManifest::split_class_counts(Split split) const {
  ClassCounts counts{};
  for (const auto& r : records) {
    if (!r.is_mask && r.split == split) ++counts[static_cast<std::size_t>(r.label)];
  }
  return counts;
}

std::size_t DatasetManifest::split_size(Split split) const {
  const auto c = split_class_counts(split);
  return std::accumulate(c.begin(), c.end(), std::size_t{0});
}

bool is_mask_name(const fs::path& file) {
  static const std::regex kMask(R"(_mask(_\d+)?$)", std::regex::icase);
  return std::regex_search(file.stem().string(), kMask);
}

IngestResult ingest(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) {
    throw Error(ErrorKind::kIngest, "dataset root not found: " + root.string());
  }
  IngestResult result;
  auto& records = result.manifest.records;
  std::size_t present = 0;
  for (ClassLabel label : kAllLabels) {
    const fs::path dir = root / std::string(name_of(label));
    if (!fs::is_directory(dir, ec)) {
      result.warnings.push_back("missing class directory: " + dir.string());
      continue;
    }
    ++present;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file(ec) && is_image_extension(entry.path())) {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      ImageRecord rec;
      rec.path = file;
      rec.label = label;
      rec.is_mask = is_mask_name(file);
      try {
        rec.byte_digest = sha256_file(file);
      } catch (const Error& e) {
        result.warnings.push_back("skipped unreadable file: " + file.string());
        continue;
      }
      records.push_back(std::move(rec));
    }
  }
  if (present == 0) {
    throw Error(ErrorKind::kIngest,
                "no class directories (normal/, benign/, malignant/) under " + root.string());
  }
  std::sort(records.begin(), records.end(),
            [](const ImageRecord& a, const ImageRecord& b) { return a.path < b.path; });
  result.manifest.class_counts = tally_classifiable(records);
  return result;
}

std::array<std::size_t, 3> split_targets(std::size_t n, const std::array<double, 3>& ratios) {
  std::array<std::size_t, 3> out{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const double quota = static_cast<double>(n) * ratios[s];
    const double fl = std::floor(quota + 1e-9);
    out[s] = static_cast<std::size_t>(fl);
    frac[s] = quota - fl;
    assigned += out[s];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b] + 1e-12; });
  for (std::size_t i = 0; assigned < n; i = (i + 1) % 3, ++assigned) ++out[order[i]];
  return out;
}

DatasetManifest split(const DatasetManifest& manifest, const SplitSpec& spec) {
  spec.validate();

  // Drop oversampling duplicates so re-splitting starts from the originals.
  DatasetManifest out;
  out.split_seed = spec.seed;
  out.split_ratios = spec.ratios;
  std::set<std::pair<fs::path, std::string>> seen;
  for (const auto& r : manifest.records) {
    if (!seen.insert({r.path, r.byte_digest}).second) continue;
    ImageRecord copy = r;
    copy.split = Split::kUnassigned;
    out.records.push_back(std::move(copy));
  }
  out.class_counts = tally_classifiable(out.records);

  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  std::vector<std::size_t> all;
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    if (out.records[i].is_mask) continue;
    by_class[static_cast<std::size_t>(out.records[i].label)].push_back(i);
    all.push_back(i);
  }
  if (all.empty()) throw Error(ErrorKind::kStratification, "no classifiable records to split");

  const auto targets = split_targets(all.size(), spec.ratios);

  auto assign = [&](std::vector<std::size_t>& idx, const std::array<std::size_t, 3>& counts) {
    std::size_t pos = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t k = 0; k < counts[s]; ++k) out.records[idx[pos++]].split = kAssignedSplits[s];
    }
  };

  if (spec.stratified) {
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      if (by_class[c].size() < 3) {
        throw Error(ErrorKind::kStratification,
                    "class '" + std::string(name_of(static_cast<ClassLabel>(c))) + "' has " +
                        std::to_string(by_class[c].size()) +
                        " records; stratified split needs at least one per split (3)");
      }
    }
    const auto alloc = stratified_allocation(out.class_counts, targets, spec.ratios);
    if (!alloc) {
      throw Error(ErrorKind::kStratification,
                  "no stratified allocation matches the split targets for these class sizes");
    }
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      Rng rng(mix_seed({spec.seed, 0x5354524154ULL, c}));
      rng.shuffle(std::span<std::size_t>(by_class[c]));
      assign(by_class[c], (*alloc)[c]);
    }
  } else {
    Rng rng(mix_seed({spec.seed, 0x524E44ULL}));
    rng.shuffle(std::span<std::size_t>(all));
    assign(all, targets);
  }
  return out;
}

DatasetManifest oversample_train(const DatasetManifest& manifest, std::uint64_t seed) {
  if (!manifest.is_split()) {
    throw Error(ErrorKind::kState, "oversample_train requires a split manifest");
  }
  std::array<std::vector<std::size_t>, kNumClasses> train_idx;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (!r.is_mask && r.split == Split::kTrain) {
      train_idx[static_cast<std::size_t>(r.label)].push_back(i);
    }
  }
  std::size_t target = 0;
  for (const auto& v : train_idx) target = std::max(target, v.size());

  DatasetManifest out = manifest;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto& pool = train_idx[c];
    if (pool.empty() || pool.size() == target) continue;
    Rng rng(mix_seed({seed, 0x4F56455253ULL, c}));
    for (std::size_t k = pool.size(); k < target; ++k) {
      out.records.push_back(manifest.records[pool[rng.below(pool.size())]]);
    }
  }
  return out;
}

std::string serialize_manifest(const DatasetManifest& manifest) {
  std::ostringstream os;
  os << "#seed=" << manifest.split_seed << " ratios=" << format_double(manifest.split_ratios[0])
     << "," << format_double(manifest.split_ratios[1]) << ","
     << format_double(manifest.split_ratios[2]) << "\n";
  for (const auto& r : manifest.records) {
    os << r.path.generic_string() << '\t' << name_of(r.label) << '\t' << name_of(r.split) << '\t'
       << (r.is_mask ? 1 : 0) << '\t' << r.byte_digest << '\n';
  }
  return os.str();
}

DatasetManifest parse_manifest(std::string_view text, std::string_view source) {
  DatasetManifest m;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!header_seen) {
      static const std::regex kHeader(R"(^#seed=(\d+) ratios=([^,\s]+),([^,\s]+),([^,\s]+)$)");
      std::smatch match;
      if (!std::regex_match(line, match, kHeader)) {
        parse_fail(source, line_no, "header",
                   "expected '#seed=<int> ratios=<f>,<f>,<f>', got '" + line + "'");
      }
      const std::string seed_text = match[1];
      auto [p, ec] = std::from_chars(seed_text.data(), seed_text.data() + seed_text.size(),
                                     m.split_seed);
      if (ec != std::errc()) parse_fail(source, line_no, "seed", "not an integer");
      for (std::size_t s = 0; s < 3; ++s) {
        const std::string t = match[s + 2];
        auto [q, ec2] = std::from_chars(t.data(), t.data() + t.size(), m.split_ratios[s]);
        if (ec2 != std::errc() || q != t.data() + t.size()) {
          parse_fail(source, line_no, "ratios", "not a number: '" + t + "'");
        }
      }
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 5) {
      parse_fail(source, line_no, "record",
                 "expected 5 tab-separated fields, got " + std::to_string(fields.size()));
    }
    ImageRecord r;
    if (fields[0].empty()) parse_fail(source, line_no, "path", "empty");
    r.path = fields[0];
    const auto label = label_from_name(fields[1]);
    if (!label) parse_fail(source, line_no, "label", "unknown label '" + fields[1] + "'");
    r.label = *label;
    const auto split = split_from_name(fields[2]);
    if (!split) parse_fail(source, line_no, "split", "unknown split '" + fields[2] + "'");
    r.split = *split;
    if (fields[3] != "0" && fields[3] != "1") {
      parse_fail(source, line_no, "is_mask", "expected 0 or 1, got '" + fields[3] + "'");
    }
    r.is_mask = fields[3] == "1";
    r.byte_digest = fields[4];
    m.records.push_back(std::move(r));
  }
  if (!header_seen) parse_fail(source, 1, "header", "missing header line");
  m.class_counts = tally_classifiable(m.records);
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_bytes(path, serialize_manifest(manifest));
}

DatasetManifest load_manifest(const fs::path& path) {
  return parse_manifest(read_file_bytes(path), path.string());
}

std::string manifest_digest(const DatasetManifest& manifest) {
  return sha256_hex(serialize_manifest(manifest));
}

}  // namespace busi
