#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "exsr/config.hpp"
#include "exsr/generator.hpp"

namespace exsr {

/// Identity-labeled exemplar images: <root>/<identity>/<file>. Indexed once
/// and read-only afterwards. Image ids have the form "<identity>/<file>".
class Gallery {
 public:
  Gallery() = default;
  /// A missing or empty root gives an empty gallery.
  static Gallery scan(const std::filesystem::path& root);

  std::vector<std::string> identities() const;
  /// Image ids of one identity; NotFoundError for unknown identities.
  const std::vector<std::string>& images(const std::string& identity) const;
  /// NotFoundError when the id does not name an indexed image.
  std::filesystem::path resolve(const std::string& image_id) const;
  bool empty() const { return by_identity_.empty(); }

 private:
  std::filesystem::path root_;
  std::map<std::string, std::vector<std::string>> by_identity_;
};

struct ExemplarRef {
  std::optional<std::string> gallery_id;
  std::vector<uint8_t> image;  // encoded PNG/JPEG, used when gallery_id is empty
};

struct EditRequest {
  /// Encoded LR image at the model's LR size, or an HR image when `input_is_hr`.
  std::vector<uint8_t> input_image;
  bool input_is_hr = false;
  /// Scale the client expects; 0 accepts the model's.
  int requested_scale = 0;
  std::vector<ExemplarRef> exemplars;
  bool return_heatmaps = false;
  uint64_t seed = 0;
};

struct EditResult {
  std::vector<uint8_t> sr_png;
  std::string sr_sha256;
  int64_t height = 0;
  int64_t width = 0;
  /// Per exemplar in request order, at the LR-feature and 2x-feature scales.
  std::vector<std::vector<uint8_t>> heatmaps_lr;
  std::vector<std::vector<uint8_t>> heatmaps_2x;
  nlohmann::json request_echo;
  std::string model_tag;
  std::string version;
  double latency_ms = 0;
};

nlohmann::json to_json_response(const EditResult& result);

/// Parses the JSON body of POST /api/superresolve:
///   {"lr_image": b64 | "hr_image": b64, "scale": int,
///    "exemplars": [ "<gallery id>" | {"gallery_id": id} | {"image": b64} ],
///    "return_heatmaps": bool, "seed": int}
/// Malformed bodies raise ValidationError.
EditRequest parse_edit_request(const nlohmann::json& body);

struct ServiceConfig {
  std::filesystem::path checkpoint;
  /// When set, the checkpoint architecture must match this config.
  std::optional<std::filesystem::path> config_path;
  std::filesystem::path gallery_dir;
  std::optional<std::filesystem::path> static_dir;
  std::string host = "127.0.0.1";
  int port = 8080;
};

/// Immutable model plus gallery. Requests are validated before any compute
/// and then run one at a time.
class InferenceService {
 public:
  /// Refuses (ConfigError) when the checkpoint does not match the config.
  explicit InferenceService(const ServiceConfig& config);
  InferenceService(Generator generator, Gallery gallery, std::string model_tag);

  EditResult edit(const EditRequest& request) const;

  nlohmann::json health() const;
  nlohmann::json identities() const;
  nlohmann::json exemplars(const std::string& identity) const;
  /// Raw bytes of a gallery image; NotFoundError if absent.
  std::vector<uint8_t> gallery_image(const std::string& image_id) const;

  const ModelConfig& model_config() const { return generator_->config(); }
  const std::string& model_tag() const { return model_tag_; }
  /// Digest of the loaded parameters; constant for the life of the service.
  std::string parameter_digest() const;

 private:
  torch::Tensor decode_exemplar(const ExemplarRef& ref) const;

  mutable Generator generator_{nullptr};
  Gallery gallery_;
  std::string model_tag_;
  mutable std::mutex lane_;
};

const char* version_string();

/// HTTP front end over an InferenceService:
///   POST /api/superresolve   JSON (base64 images) or multipart/form-data
///   GET  /api/identities
///   GET  /api/exemplars/{identity}
///   GET  /api/images/{identity}/{file}
///   GET  /api/health
class HttpServer {
 public:
  HttpServer(const InferenceService& service, std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds to host:port (port 0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks serving requests until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace exsr
