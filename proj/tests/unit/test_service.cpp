#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "busi/augment.hpp"
#include "busi/digest.hpp"
#include "busi/service.hpp"
#include "expect.hpp"
#include "fixtures.hpp"

#include <httplib.h>

using namespace busi;
using namespace busi::testkit;
namespace fs = std::filesystem;

namespace {

std::set<std::string> listing(const fs::path& dir) {
  std::set<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) out.insert(e.path().string());
  return out;
}

class ServiceTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new ScratchDir("service");
    const auto model = build(small_spec(48, 16), shared_backbone(48), "random:11", 3);
    save_classifier(model, dir_->path() / "ckpt");
    service_ = std::make_shared<const PredictionService>(
        PredictionService::from_checkpoint(dir_->path() / "ckpt"));
    ServiceConfig cfg;
    cfg.port = 0;
    cfg.max_upload_bytes = 200'000;
    server_ = new PredictionServer(service_, cfg);
    port_ = server_->bind();
    thread_ = new std::thread([] { server_->serve(); });
    httplib::Client probe("127.0.0.1", port_);
    for (int i = 0; i < 200 && !probe.Get("/health"); ++i) {
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
  }
  static void TearDownTestSuite() {
    server_->stop();
    thread_->join();
    delete thread_;
    delete server_;
    service_.reset();
    delete dir_;
  }

  static httplib::Result post_image(const std::string& bytes, const std::string& field = "image") {
    httplib::Client cli("127.0.0.1", port_);
    httplib::MultipartFormDataItems items{{field, bytes, "upload.png", "image/png"}};
    return cli.Post("/predict", items);
  }

  static std::string sample_png(std::uint64_t seed, int h = 70, int w = 90) {
    return encode_png(texture_image(ClassLabel::kBenign, seed, h, w));
  }

  static ScratchDir* dir_;
  static std::shared_ptr<const PredictionService> service_;
  static PredictionServer* server_;
  static std::thread* thread_;
  static int port_;
};

ScratchDir* ServiceTest::dir_ = nullptr;
std::shared_ptr<const PredictionService> ServiceTest::service_;
PredictionServer* ServiceTest::server_ = nullptr;
std::thread* ServiceTest::thread_ = nullptr;
int ServiceTest::port_ = 0;

}  // namespace

TEST(ServiceUnitTest, SeverityAndMediaSniffing) {
  EXPECT_EQ(severity_of(ClassLabel::kNormal), "none");
  EXPECT_EQ(severity_of(ClassLabel::kBenign), "low");
  EXPECT_EQ(severity_of(ClassLabel::kMalignant), "high");
  EXPECT_TRUE(is_supported_media(std::string("\x89PNG\r\n\x1a\n....", 12)));
  EXPECT_TRUE(is_supported_media("\xFF\xD8\xFF\xE0"));
  EXPECT_TRUE(is_supported_media("BM...."));
  EXPECT_FALSE(is_supported_media("GIF89a"));
  EXPECT_FALSE(is_supported_media(""));
}

TEST(ServiceUnitTest, MissingCheckpointIsALoadError) {
  expect_kind(ErrorKind::kLoad, [] { PredictionService::from_checkpoint("/nonexistent/ckpt"); });
  ServiceConfig cfg;
  cfg.max_upload_bytes = 0;
  expect_kind(ErrorKind::kConfig, [&] { cfg.validate(); });
}

TEST_F(ServiceTest, PredictReturnsADistributionMatchingOfflineInference) {
  const std::string png = sample_png(1);
  const auto start = std::chrono::steady_clock::now();
  const auto res = post_image(png);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200) << res->body;
  EXPECT_LT(seconds, 2.0);
  const auto j = nlohmann::json::parse(res->body);

  const TrainedClassifier& model = service_->model();
  const Raster offline = preprocess(decode_image(png), model.eval_augment_config());
  EXPECT_EQ(offline.data, service_->preprocess_upload(png).data);
  const ProbabilityRow expected = model.predict_one(offline);

  double sum = 0.0, percent = 0.0;
  for (ClassLabel l : kAllLabels) {
    const std::string name(name_of(l));
    const double p = j["probabilities"][name].get<double>();
    EXPECT_EQ(p, expected[index_of(l)]) << name;
    sum += p;
    percent += j["percent_display"][name].get<double>();
  }
  EXPECT_NEAR(sum, 1.0, 1e-6);
  EXPECT_NEAR(percent, 100.0, 0.3);
  const auto label = *label_from_index(predicted_label(expected));
  EXPECT_EQ(j["predicted_label"], name_of(label));
  EXPECT_EQ(j["severity"], severity_of(label));
  EXPECT_EQ(j["model_version"], model.version);
  EXPECT_TRUE(j.contains("elapsed_ms"));
}

TEST_F(ServiceTest, BadRequests) {
  auto res = post_image(sample_png(2), "file");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  EXPECT_NE(res->body.find("missing multipart field 'image'"), std::string::npos);

  res = post_image("this is plain text");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  EXPECT_NE(res->body.find("unsupported image"), std::string::npos);

  std::string truncated = sample_png(3);
  truncated.resize(40);
  res = post_image(truncated);
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);

  httplib::Client cli("127.0.0.1", port_);
  res = cli.Post("/predict", "{}", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
}

TEST_F(ServiceTest, OversizedUploadIs413) {
  const auto res = post_image(std::string(300'000, 'x'));
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 413);
  EXPECT_NE(res->body.find("payload too large"), std::string::npos);
}

TEST_F(ServiceTest, HealthAndCors) {
  httplib::Client cli("127.0.0.1", port_);
  auto res = cli.Get("/health");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  const auto j = nlohmann::json::parse(res->body);
  EXPECT_EQ(j["status"], "ok");
  EXPECT_EQ(j["model_version"], service_->model().version);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");

  res = cli.Options("/predict");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 204);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
  EXPECT_NE(res->get_header_value("Access-Control-Allow-Methods").find("POST"), std::string::npos);

  res = post_image(sample_png(4));
  ASSERT_TRUE(res);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
}

TEST_F(ServiceTest, ConcurrentIdenticalRequestsAgree) {
  const std::string png = sample_png(5);
  std::vector<std::string> bodies(8);
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    threads.emplace_back([&, i] {
      const auto res = post_image(png);
      if (res && res->status == 200) {
        auto j = nlohmann::json::parse(res->body);
        j.erase("elapsed_ms");
        bodies[i] = j.dump();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (const auto& b : bodies) {
    EXPECT_FALSE(b.empty());
    EXPECT_EQ(b, bodies[0]);
  }
}

TEST_F(ServiceTest, PredictionWritesNothingToDisk) {
  ScratchDir tmp("service_tmp");
  const char* old_tmp = std::getenv("TMPDIR");
  const std::string saved = old_tmp ? old_tmp : "";
  ::setenv("TMPDIR", tmp.path().c_str(), 1);
  const auto cwd_before = listing(fs::current_path());
  const auto ckpt_before = listing(dir_->path());

  for (std::uint64_t s = 10; s < 14; ++s) {
    const auto res = post_image(sample_png(s, 60 + static_cast<int>(s), 80));
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
  }
  EXPECT_EQ(service_->predict_tumor(sample_png(20)).probabilities.size(), kNumClasses);

  EXPECT_TRUE(fs::is_empty(tmp.path()));
  EXPECT_EQ(listing(fs::current_path()), cwd_before);
  EXPECT_EQ(listing(dir_->path()), ckpt_before);
  if (old_tmp) ::setenv("TMPDIR", saved.c_str(), 1);
  else ::unsetenv("TMPDIR");
}
