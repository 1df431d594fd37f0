#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "busi/model.hpp"

namespace httplib {
class Server;
}

namespace busi {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 binds an ephemeral port
  std::filesystem::path checkpoint;
  std::size_t max_upload_bytes = 10u << 20;
  std::string cors_origin = "*";

  void validate() const;
};

struct PredictionResult {
  ClassLabel predicted_label = ClassLabel::kNormal;
  ProbabilityRow probabilities{};
  std::array<double, kNumClasses> percent_display{};  // one decimal
  std::string severity;  // none | low | high
  std::string model_version;
  std::int64_t elapsed_ms = 0;

  nlohmann::json to_json() const;
};

std::string_view severity_of(ClassLabel label);

// Accepted upload formats, identified by signature: PNG, JPEG, BMP.
bool is_supported_media(std::string_view bytes);

// Holds a loaded classifier read-only; safe for concurrent predict calls.
class PredictionService {
 public:
  explicit PredictionService(TrainedClassifier model);
  // Throws Error{kLoad} when the checkpoint is missing or unreadable.
  static PredictionService from_checkpoint(const std::filesystem::path& dir);

  // Throws Error{kDecode} "unsupported image" for bytes that are not a
  // supported raster. Nothing is written to disk.
  PredictionResult predict_tumor(std::string_view bytes) const;
  // The exact raster predict_tumor feeds the model.
  Raster preprocess_upload(std::string_view bytes) const;

  nlohmann::json health() const;
  const TrainedClassifier& model() const { return model_; }

 private:
  TrainedClassifier model_;
  std::chrono::steady_clock::time_point started_;
};

// POST /predict (multipart field "image"), GET /health, CORS preflight.
class PredictionServer {
 public:
  PredictionServer(std::shared_ptr<const PredictionService> service, ServiceConfig config);
  ~PredictionServer();
  PredictionServer(const PredictionServer&) = delete;
  PredictionServer& operator=(const PredictionServer&) = delete;

  // Binds the socket; returns the bound port. Throws Error{kIo} on failure.
  int bind();
  // Blocks until stop().
  void serve();
  void stop();
  int port() const { return port_; }

 private:
  std::shared_ptr<const PredictionService> service_;
  ServiceConfig config_;
  std::unique_ptr<httplib::Server> server_;
  int port_ = 0;
};

}  // namespace busi
