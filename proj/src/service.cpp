#include "busi/service.hpp"

#include <cmath>

#include <httplib.h>

#include "busi/augment.hpp"
#include "busi/error.hpp"
#include "busi/image.hpp"

namespace busi {

namespace {

nlohmann::json error_body(std::string_view message) {
  return {{"error", message}};
}

void set_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

}  // namespace

void ServiceConfig::validate() const {
  if (max_upload_bytes == 0) throw Error(ErrorKind::kConfig, "max upload bytes must be > 0");
  if (port < 0 || port > 65535) throw Error(ErrorKind::kConfig, "port out of range");
}

std::string_view severity_of(ClassLabel label) {
  switch (label) {
    case ClassLabel::kNormal: return "none";
    case ClassLabel::kBenign: return "low";
    default: return "high";
  }
}

bool is_supported_media(std::string_view b) {
  const auto starts = [&](std::string_view magic) { return b.substr(0, magic.size()) == magic; };
  return starts("\x89PNG\r\n\x1a\n") || starts("\xFF\xD8\xFF") || starts("BM");
}

nlohmann::json PredictionResult::to_json() const {
  nlohmann::json probs = nlohmann::json::object();
  nlohmann::json percent = nlohmann::json::object();
  for (ClassLabel l : kAllLabels) {
    probs[std::string(name_of(l))] = probabilities[index_of(l)];
    percent[std::string(name_of(l))] = percent_display[index_of(l)];
  }
  return {{"predicted_label", name_of(predicted_label)},
          {"probabilities", probs},
          {"percent_display", percent},
          {"severity", severity},
          {"model_version", model_version},
          {"elapsed_ms", elapsed_ms}};
}

PredictionService::PredictionService(TrainedClassifier model)
    : model_(std::move(model)), started_(std::chrono::steady_clock::now()) {}

PredictionService PredictionService::from_checkpoint(const std::filesystem::path& dir) {
  return PredictionService(load_classifier(dir));
}

Raster PredictionService::preprocess_upload(std::string_view bytes) const {
  if (!is_supported_media(bytes)) throw Error(ErrorKind::kDecode, "unsupported image");
  Image8 image;
  try {
    image = decode_image(bytes);
  } catch (const Error&) {
    throw Error(ErrorKind::kDecode, "unsupported image");
  }
  return preprocess(image, model_.eval_augment_config());
}

PredictionResult PredictionService::predict_tumor(std::string_view bytes) const {
  const auto start = std::chrono::steady_clock::now();
  const Raster raster = preprocess_upload(bytes);
  PredictionResult r;
  r.probabilities = model_.predict_one(raster);
  r.predicted_label = *label_from_index(predicted_label(r.probabilities));
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    r.percent_display[k] = std::round(r.probabilities[k] * 1000.0) / 10.0;
  }
  r.severity = std::string(severity_of(r.predicted_label));
  r.model_version = model_.version;
  r.elapsed_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                     std::chrono::steady_clock::now() - start)
                     .count();
  return r;
}

nlohmann::json PredictionService::health() const {
  const double uptime =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  return {{"status", "ok"}, {"model_version", model_.version}, {"uptime_s", uptime}};
}

PredictionServer::PredictionServer(std::shared_ptr<const PredictionService> service,
                                   ServiceConfig config)
    : service_(std::move(service)), config_(std::move(config)),
      server_(std::make_unique<httplib::Server>()) {
  config_.validate();
  auto& s = *server_;
  const std::string origin = config_.cors_origin;
  s.set_payload_max_length(config_.max_upload_bytes);
  s.set_default_headers({{"Access-Control-Allow-Origin", origin},
                         {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                         {"Access-Control-Allow-Headers", "Content-Type"}});

  s.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  s.Get("/health", [svc = service_](const httplib::Request&, httplib::Response& res) {
    set_json(res, 200, svc->health());
  });

  s.Post("/predict", [svc = service_, limit = config_.max_upload_bytes](
                         const httplib::Request& req, httplib::Response& res) {
    if (!req.is_multipart_form_data() || !req.has_file("image")) {
      set_json(res, 400, error_body("missing multipart field 'image'"));
      return;
    }
    const auto file = req.get_file_value("image");
    if (file.content.size() > limit) {
      set_json(res, 413, error_body("payload too large"));
      return;
    }
    try {
      set_json(res, 200, svc->predict_tumor(file.content).to_json());
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kDecode || e.kind() == ErrorKind::kShape) {
        set_json(res, 400, error_body("unsupported image"));
      } else {
        set_json(res, 500, error_body(e.what()));
      }
    }
  });

  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
    if (res.status == 413) {
      set_json(res, 413, error_body("payload too large"));
    } else {
      set_json(res, res.status, error_body(httplib::status_message(res.status)));
    }
    return httplib::Server::HandlerResponse::Handled;
  });
}

PredictionServer::~PredictionServer() { stop(); }

int PredictionServer::bind() {
  if (config_.port == 0) {
    port_ = server_->bind_to_any_port(config_.host);
  } else {
    port_ = server_->bind_to_port(config_.host, config_.port) ? config_.port : -1;
  }
  if (port_ <= 0) {
    throw Error(ErrorKind::kIo, "cannot bind " + config_.host + ":" + std::to_string(config_.port));
  }
  return port_;
}

void PredictionServer::serve() {
  if (port_ <= 0) bind();
  server_->listen_after_bind();
}

void PredictionServer::stop() {
  if (server_ && server_->is_running()) server_->stop();
}

}  // namespace busi
