#include <gtest/gtest.h>

#include <map>

#include "busi/digest.hpp"
#include "busi/erroranalysis.hpp"
#include "expect.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace busi;
using namespace busi::testkit;
namespace fs = std::filesystem;

namespace {

ImageRecord record(const fs::path& path, ClassLabel label) {
  return {path, label, Split::kTest, false, sha256_hex(path.string())};
}

// A row predicting `predicted` with the given top probability.
ProbabilityRow row_for(int predicted, double top) {
  ProbabilityRow r{};
  const double rest = (1.0 - top) / 2.0;
  for (int k = 0; k < 3; ++k) r[static_cast<std::size_t>(k)] = k == predicted ? top : rest;
  return r;
}

struct Case {
  std::vector<ImageRecord> records;
  ProbabilityMatrix probs;
};

Case reference_case() {
  std::vector<int> truth, predicted;
  oracle::pairs_from_matrix(oracle::kReferenceMatrix, truth, predicted);
  Case c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    c.records.push_back(record("/v/" + std::to_string(i) + ".png", *label_from_index(truth[i])));
    c.probs.push_back(row_for(predicted[i], 0.4 + 0.004 * static_cast<double>(i % 100)));
  }
  return c;
}

}  // namespace

TEST(AnalyzeTest, ReferenceMatrixErrors) {
  const Case c = reference_case();
  const auto report = analyze(c.records, c.probs);
  EXPECT_EQ(report.evaluated, 129u);
  EXPECT_EQ(report.entries.size(), 23u);
  EXPECT_EQ((report.pair_counts.at({ClassLabel::kBenign, ClassLabel::kMalignant})), 9u);

  // Pair counts equal the off-diagonal confusion cells.
  std::vector<int> truth, predicted;
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    truth.push_back(index_of(c.records[i].label));
    predicted.push_back(predicted_label(c.probs[i]));
  }
  const auto m = confusion(truth, predicted);
  std::size_t off = 0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i == j) continue;
      const auto key = std::pair{*label_from_index(i), *label_from_index(j)};
      const std::size_t got = report.pair_counts.count(key) ? report.pair_counts.at(key) : 0;
      EXPECT_EQ(got, m.counts[i][j]);
      off += m.counts[i][j];
    }
  }
  EXPECT_EQ(off, report.entries.size());
  EXPECT_NEAR(report.error_rate[index_of(ClassLabel::kBenign)], 15.0 / 49.0, 1e-12);
  EXPECT_EQ(report.support[index_of(ClassLabel::kMalignant)], 43u);
}

TEST(AnalyzeTest, ConfidenceAndMargin) {
  const std::vector<ImageRecord> records{record("/v/a.png", ClassLabel::kMalignant)};
  const ProbabilityMatrix probs{{0.2, 0.5, 0.3}};
  const auto report = analyze(records, probs);
  ASSERT_EQ(report.entries.size(), 1u);
  const auto& e = report.entries[0];
  EXPECT_EQ(e.true_label, ClassLabel::kMalignant);
  EXPECT_EQ(e.predicted_label, ClassLabel::kBenign);
  EXPECT_DOUBLE_EQ(e.confidence, 0.5);
  EXPECT_NEAR(e.margin, 0.2, 1e-12);
}

TEST(AnalyzeTest, PerfectModelHasNoEntries) {
  std::vector<ImageRecord> records;
  ProbabilityMatrix probs;
  for (int i = 0; i < 9; ++i) {
    records.push_back(record("/v/" + std::to_string(i), *label_from_index(i % 3)));
    probs.push_back(row_for(i % 3, 0.9));
  }
  const auto report = analyze(records, probs);
  EXPECT_TRUE(report.entries.empty());
  EXPECT_TRUE(report.pair_counts.empty());
  for (double r : report.error_rate) EXPECT_EQ(r, 0.0);
  expect_kind(ErrorKind::kInput, [&] { analyze(records, ProbabilityMatrix{}); });
}

TEST(AnalyzeTest, MostConfidentFirstWithStableTies) {
  std::vector<ImageRecord> records;
  ProbabilityMatrix probs;
  const std::vector<double> tops{0.5, 0.9, 0.5, 0.7};
  for (std::size_t i = 0; i < tops.size(); ++i) {
    records.push_back(record("/v/" + std::to_string(i), ClassLabel::kNormal));
    probs.push_back(row_for(2, tops[i]));
  }
  const auto report = analyze(records, probs);
  ASSERT_EQ(report.entries.size(), 4u);
  EXPECT_EQ(report.entries[0].record.path, "/v/1");
  EXPECT_EQ(report.entries[1].record.path, "/v/3");
  EXPECT_EQ(report.entries[2].record.path, "/v/0");
  EXPECT_EQ(report.entries[3].record.path, "/v/2");
}

TEST(GalleryTest, ExportsOneFilePerEntryAndIndexParses) {
  ScratchDir dir("gallery");
  std::vector<ImageRecord> records;
  ProbabilityMatrix probs;
  for (int i = 0; i < 5; ++i) {
    const auto p = dir / ("src/img, " + std::to_string(i) + ".png");
    fs::create_directories(p.parent_path());
    write_file_bytes(p, "bytes" + std::to_string(i));
    records.push_back({p, ClassLabel::kBenign, Split::kTest, false, sha256_file(p)});
    probs.push_back(i < 3 ? row_for(2, 0.5 + 0.1 * i) : row_for(1, 0.8));
  }
  const auto report = analyze(records, probs);
  ASSERT_EQ(report.entries.size(), 3u);

  const auto out = dir / "gallery";
  export_gallery(report, out);
  std::size_t images = 0;
  for (const auto& item : fs::directory_iterator(out)) {
    const auto name = item.path().filename().string();
    if (name.rfind("true-", 0) != 0) continue;
    ++images;
    EXPECT_NE(name.find("true-benign_pred-malignant_conf-"), std::string::npos) << name;
  }
  EXPECT_EQ(images, 3u);
  EXPECT_TRUE(fs::exists(out / gallery_file_name(report.entries[0], 1)));
  EXPECT_EQ(read_file_bytes(out / gallery_file_name(report.entries[0], 1)), "bytes2");

  const auto rows = read_gallery_index(out / "index.csv");
  ASSERT_EQ(rows.size(), 3u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].path, report.entries[i].record.path);
    EXPECT_EQ(rows[i].probabilities, report.entries[i].probabilities);
    EXPECT_EQ(rows[i].confidence, report.entries[i].confidence);
    EXPECT_EQ(rows[i].margin, report.entries[i].margin);
    EXPECT_EQ(rows[i].predicted_label, ClassLabel::kMalignant);
  }

  // Re-export replaces rather than accumulates.
  const std::string index = read_file_bytes(out / "index.csv");
  export_gallery(report, out);
  EXPECT_EQ(read_file_bytes(out / "index.csv"), index);
  images = 0;
  for (const auto& item : fs::directory_iterator(out)) {
    images += item.path().filename().string().rfind("true-", 0) == 0;
  }
  EXPECT_EQ(images, 3u);
  EXPECT_TRUE(fs::exists(out / "errors.json"));
}

TEST(GalleryTest, EmptyReportWritesHeaderOnly) {
  ScratchDir dir("gallery_empty");
  export_gallery(ErrorReport{}, dir / "g");
  EXPECT_EQ(read_file_bytes(dir / "g/index.csv"), "path,true,predicted,p0,p1,p2,confidence,margin\n");
  EXPECT_TRUE(read_gallery_index(dir / "g/index.csv").empty());
}

TEST(AnalyzeModelTest, EmptySplitIsAnInputError) {
  const auto m = build(small_spec(), shared_backbone(32), "random:11", 1);
  DatasetManifest manifest;
  manifest.records.push_back(record("/v/x.png", ClassLabel::kNormal));
  manifest.records[0].split = Split::kTrain;
  expect_kind(ErrorKind::kInput, [&] { analyze(m, manifest, Split::kTest); });
}
