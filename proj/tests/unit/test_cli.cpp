#include <gtest/gtest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <map>

#include <nlohmann/json.hpp>

#include "busi/digest.hpp"
#include "busi/kv.hpp"
#include "fixtures.hpp"

using namespace busi;
using namespace busi::testkit;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  KeyValues summary;
  std::string out;
  std::string err;
};

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

CliResult run_cli(const fs::path& scratch, const std::vector<std::string>& args) {
  std::string cmd = quote(BUSI_CLI_PATH);
  for (const auto& a : args) cmd += " " + quote(a);
  const auto out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  cmd += " >" + quote(out.string()) + " 2>" + quote(err.string());
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file_bytes(out);
  r.err = read_file_bytes(err);
  if (r.exit_code == 0 && r.out.find('=') != std::string::npos) {
    try {
      r.summary = KeyValues::parse(r.out, "stdout");
    } catch (...) {
    }
  }
  return r;
}

std::map<std::string, std::string> tree_digest(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[e.path().string()] = sha256_file(e.path());
  }
  return out;
}

class CliChainTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new ScratchDir("cli");
    SyntheticSpec s;
    s.per_class = {100, 100, 100};
    s.seed = 1;
    s.with_masks = true;
    write_synthetic_dataset(dir_->path() / "data", s);
  }
  static void TearDownTestSuite() { delete dir_; }
  static ScratchDir* dir_;
};

ScratchDir* CliChainTest::dir_ = nullptr;

}  // namespace

TEST(CliTest, UsageErrorsExitTwo) {
  ScratchDir dir("cli_usage");
  EXPECT_EQ(run_cli(dir.path(), {}).exit_code, 2);
  EXPECT_EQ(run_cli(dir.path(), {"ingest", "--bogus"}).exit_code, 2);
  EXPECT_EQ(run_cli(dir.path(), {"frobnicate"}).exit_code, 2);
  const auto missing = run_cli(dir.path(), {"--out", (dir / "runs").string(), "ingest"});
  EXPECT_EQ(missing.exit_code, 2);
  EXPECT_NE(missing.err.find("--root"), std::string::npos) << missing.err;
  const auto bad = run_cli(dir.path(), {"train", "--manifest", "m.tsv", "--epochs", "abc"});
  EXPECT_EQ(bad.exit_code, 2);
  EXPECT_NE(bad.err.find("kind="), std::string::npos) << bad.err;
}

TEST(CliTest, HelpExitsZero) {
  ScratchDir dir("cli_help");
  const auto r = run_cli(dir.path(), {"--help"});
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_NE(r.out.find("evaluate"), std::string::npos);
}

TEST(CliTest, RuntimeFailuresExitOne) {
  ScratchDir dir("cli_runtime");
  const auto r = run_cli(dir.path(), {"--out", (dir / "runs").string(), "ingest", "--root",
                                      (dir / "no_such_root").string()});
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("stage=ingest"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("kind=ingest"), std::string::npos) << r.err;
}

TEST_F(CliChainTest, IngestSplitTrainEvaluate) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path data = dir_->path() / "data";
  const auto before = tree_digest(data);
  const fs::path work = dir_->path() / "work";
  fs::create_directories(work);
  const std::string out = (work / "runs").string();
  const std::string manifest = (work / "manifest.tsv").string();

  auto r = run_cli(work, {"--out", out, "ingest", "--root", data.string(), "--manifest", manifest});
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(r.summary.get("classifiable"), "300");
  EXPECT_EQ(r.summary.get("raw_files"), "600");

  r = run_cli(work, {"--out", out, "split", "--manifest", manifest, "--seed", "1"});
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(r.summary.get("split.train"), "192");
  EXPECT_EQ(r.summary.get("split.validation"), "48");
  EXPECT_EQ(r.summary.get("split.test"), "60");

  const std::vector<std::string> train_args{"train", "--manifest", manifest, "--random-backbone",
                                            "--backbone-seed", "7", "--input-size", "64",
                                            "--units", "64", "--epochs", "2", "--seed", "1"};
  std::vector<std::string> a{"--out", out};
  a.insert(a.end(), train_args.begin(), train_args.end());
  r = run_cli(work, a);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const std::string checkpoint = r.summary.get("checkpoint");
  const std::string version = r.summary.get("model_version");
  EXPECT_EQ(r.summary.get("epochs"), "2");
  EXPECT_TRUE(fs::exists(fs::path(r.summary.get("run_dir")) / "run_config.txt"));

  // Same configuration in a different output root reproduces the model.
  std::vector<std::string> b{"--out", (work / "runs2").string()};
  b.insert(b.end(), train_args.begin(), train_args.end());
  const auto again = run_cli(work, b);
  ASSERT_EQ(again.exit_code, 0) << again.err;
  EXPECT_EQ(again.summary.get("model_version"), version);

  r = run_cli(work, {"--out", out, "evaluate", "--checkpoint", checkpoint, "--manifest", manifest});
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto report = nlohmann::json::parse(read_file_bytes(r.summary.get("report")));
  const double acc = report["accuracy"].get<double>();
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);
  EXPECT_EQ(r.summary.get("n"), "60");
  EXPECT_EQ(r.summary.get("model_version"), version);

  r = run_cli(work, {"--out", out, "errors", "--checkpoint", checkpoint, "--manifest", manifest});
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_TRUE(fs::exists(fs::path(r.summary.get("gallery")) / "index.csv"));

  r = run_cli(work, {"--out", out, "intensity", "--manifest", manifest});
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(r.summary.get("n.benign"), "100");

  r = run_cli(work, {"--out", out, "evaluate", "--checkpoint", (work / "missing").string(),
                     "--manifest", manifest});
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("kind=load"), std::string::npos) << r.err;

  EXPECT_EQ(tree_digest(data), before);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 300.0);
}
