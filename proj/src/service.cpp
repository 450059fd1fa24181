#include "exsr/service.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>

#include <httplib.h>

#include "exsr/checkpoint.hpp"
#include "exsr/errors.hpp"
#include "exsr/hashing.hpp"
#include "exsr/image_io.hpp"
#include "exsr/log.hpp"
#include "exsr/metrics.hpp"
#include "exsr/resample.hpp"

#ifndef EXSR_VERSION
#define EXSR_VERSION "0.0.0"
#endif

namespace exsr {

namespace fs = std::filesystem;
using nlohmann::json;

const char* version_string() { return EXSR_VERSION; }

namespace {

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

torch::Tensor decode_or_reject(std::span<const uint8_t> bytes, const std::string& what) {
  if (bytes.empty()) throw ValidationError(what + " is empty");
  try {
    return decode_image(bytes);
  } catch (const IoError&) {
    throw ValidationError(what + " is not a decodable PNG or JPEG image");
  }
}

torch::Tensor fit(const torch::Tensor& image, int64_t h, int64_t w) {
  if (image.size(1) == h && image.size(2) == w) return image;
  return center_crop_resize(image, h, w);
}

std::string tensor_digest(const torch::Tensor& t) {
  auto c = t.contiguous();
  return sha256_hex(std::span<const uint8_t>(static_cast<const uint8_t*>(c.data_ptr()), c.numel() * c.element_size()));
}

}  // namespace

Gallery Gallery::scan(const fs::path& root) {
  Gallery g;
  g.root_ = root;
  if (root.empty() || !fs::is_directory(root)) return g;
  for (const auto& dir : fs::directory_iterator(root)) {
    if (!dir.is_directory()) continue;
    const auto identity = dir.path().filename().string();
    std::vector<std::string> ids;
    for (const auto& f : fs::directory_iterator(dir.path())) {
      if (f.is_regular_file() && is_image_file(f.path())) ids.push_back(identity + "/" + f.path().filename().string());
    }
    if (ids.empty()) continue;
    std::sort(ids.begin(), ids.end());
    g.by_identity_.emplace(identity, std::move(ids));
  }
  return g;
}

std::vector<std::string> Gallery::identities() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : by_identity_) out.push_back(id);
  return out;
}

const std::vector<std::string>& Gallery::images(const std::string& identity) const {
  auto it = by_identity_.find(identity);
  if (it == by_identity_.end()) throw NotFoundError("unknown gallery identity '" + identity + "'");
  return it->second;
}

fs::path Gallery::resolve(const std::string& image_id) const {
  const auto slash = image_id.find('/');
  if (slash == std::string::npos) throw NotFoundError("gallery id '" + image_id + "' is not <identity>/<file>");
  const auto& ids = images(image_id.substr(0, slash));
  if (!std::binary_search(ids.begin(), ids.end(), image_id)) {
    throw NotFoundError("gallery image '" + image_id + "' does not exist");
  }
  return root_ / image_id;
}

json to_json_response(const EditResult& r) {
  json heat_lr = json::array(), heat_2x = json::array();
  for (const auto& h : r.heatmaps_lr) heat_lr.push_back(base64_encode(h));
  for (const auto& h : r.heatmaps_2x) heat_2x.push_back(base64_encode(h));
  return json{{"sr_image", base64_encode(r.sr_png)},
              {"sr_sha256", r.sr_sha256},
              {"height", r.height},
              {"width", r.width},
              {"heatmaps", {{"lr", heat_lr}, {"x2", heat_2x}}},
              {"request", r.request_echo},
              {"model", r.model_tag},
              {"version", r.version},
              {"latency_ms", r.latency_ms}};
}

EditRequest parse_edit_request(const json& body) {
  if (!body.is_object()) throw ValidationError("request body must be a JSON object");
  EditRequest req;
  try {
    const bool has_lr = body.contains("lr_image");
    const bool has_hr = body.contains("hr_image");
    if (has_lr == has_hr) throw ValidationError("exactly one of lr_image and hr_image is required");
    req.input_is_hr = has_hr;
    req.input_image = base64_decode(body.at(has_hr ? "hr_image" : "lr_image").get<std::string>());
    req.requested_scale = body.value("scale", 0);
    req.return_heatmaps = body.value("return_heatmaps", false);
    req.seed = body.value("seed", uint64_t{0});
    if (!body.contains("exemplars") || !body.at("exemplars").is_array()) {
      throw ValidationError("exemplars must be an array");
    }
    for (const auto& e : body.at("exemplars")) {
      ExemplarRef ref;
      if (e.is_string()) {
        ref.gallery_id = e.get<std::string>();
      } else if (e.is_object() && e.contains("gallery_id")) {
        ref.gallery_id = e.at("gallery_id").get<std::string>();
      } else if (e.is_object() && e.contains("image")) {
        ref.image = base64_decode(e.at("image").get<std::string>());
      } else {
        throw ValidationError("each exemplar must be a gallery id or {\"image\": base64}");
      }
      req.exemplars.push_back(std::move(ref));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed request: ") + e.what());
  }
  return req;
}

InferenceService::InferenceService(const ServiceConfig& config) {
  std::optional<ModelConfig> expected;
  if (config.config_path) expected = load_config(*config.config_path);
  generator_ = load_generator(config.checkpoint, expected ? &*expected : nullptr);
  generator_->eval();
  gallery_ = Gallery::scan(config.gallery_dir);
  model_tag_ = config.checkpoint.stem().string() + "@" + exsr::parameter_digest(*generator_).substr(0, 12);
}

InferenceService::InferenceService(Generator generator, Gallery gallery, std::string model_tag)
    : generator_(std::move(generator)), gallery_(std::move(gallery)), model_tag_(std::move(model_tag)) {
  generator_->eval();
}

std::string InferenceService::parameter_digest() const { return exsr::parameter_digest(*generator_); }

torch::Tensor InferenceService::decode_exemplar(const ExemplarRef& ref) const {
  const auto& arch = model_config().arch;
  if (ref.gallery_id) {
    const auto path = gallery_.resolve(*ref.gallery_id);
    return fit(decode_or_reject(read_file(path), "gallery image " + *ref.gallery_id), arch.hr_height(), arch.hr_width());
  }
  return fit(decode_or_reject(ref.image, "uploaded exemplar"), arch.hr_height(), arch.hr_width());
}

EditResult InferenceService::edit(const EditRequest& request) const {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& arch = model_config().arch;

  // Validation and decoding happen before the model is touched.
  if (request.requested_scale != 0 && request.requested_scale != arch.scale_factor) {
    throw ValidationError("requested scale " + std::to_string(request.requested_scale) + " but the model upsamples by " +
                          std::to_string(arch.scale_factor));
  }
  if (static_cast<int>(request.exemplars.size()) != arch.k) {
    throw ValidationError("model expects K=" + std::to_string(arch.k) + " exemplars, request has " +
                          std::to_string(request.exemplars.size()));
  }
  auto input = decode_or_reject(request.input_image, request.input_is_hr ? "hr_image" : "lr_image");
  torch::Tensor lr;
  if (request.input_is_hr) {
    lr = downsample(fit(input, arch.hr_height(), arch.hr_width()), arch.scale_factor);
  } else {
    if (input.size(1) != arch.lr_height || input.size(2) != arch.lr_width) {
      throw ValidationError("lr_image must be " + std::to_string(arch.lr_width) + " x " + std::to_string(arch.lr_height) +
                            " pixels, got " + std::to_string(input.size(2)) + " x " + std::to_string(input.size(1)));
    }
    lr = input;
  }
  std::vector<torch::Tensor> exemplars;
  json echo_refs = json::array();
  for (const auto& ref : request.exemplars) {
    exemplars.push_back(decode_exemplar(ref));
    echo_refs.push_back(ref.gallery_id ? json{{"gallery_id", *ref.gallery_id}}
                                       : json{{"upload_sha256", sha256_hex(ref.image)}});
  }

  // Canonical exemplar order makes the output independent of request order.
  std::vector<size_t> order(exemplars.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::vector<std::string> keys;
  for (const auto& e : exemplars) keys.push_back(tensor_digest(e));
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return keys[a] < keys[b]; });

  EditResult result;
  torch::Tensor sr, w_lr, w_2x, ex_canonical;
  {
    std::lock_guard<std::mutex> lane(lane_);
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> sorted;
    for (size_t i : order) sorted.push_back(exemplars[i]);
    ex_canonical = arch.k > 0 ? torch::stack(sorted).unsqueeze(0)
                              : torch::empty({1, 0, 3, arch.hr_height(), arch.hr_width()});
    auto out = super_resolve(generator_, lr.unsqueeze(0), ex_canonical);
    sr = out.sr[0];
    if (out.weights_lr.defined()) w_lr = out.weights_lr.data[0];
    if (out.weights_2x.defined()) w_2x = out.weights_2x.data[0];
  }

  result.sr_png = encode_png(sr);
  result.sr_sha256 = sha256_hex(result.sr_png);
  result.height = sr.size(1);
  result.width = sr.size(2);
  if (request.return_heatmaps && arch.k > 0) {
    auto ex = ex_canonical[0];
    auto lr_maps = render_weight_heatmap(w_lr, ex);
    auto x2_maps = render_weight_heatmap(w_2x, ex);
    result.heatmaps_lr.resize(order.size());
    result.heatmaps_2x.resize(order.size());
    for (size_t pos = 0; pos < order.size(); ++pos) {
      result.heatmaps_lr[order[pos]] = encode_png(lr_maps[pos]);
      result.heatmaps_2x[order[pos]] = encode_png(x2_maps[pos]);
    }
  }
  result.request_echo = {{"input", request.input_is_hr ? "hr_image" : "lr_image"},
                         {"input_sha256", sha256_hex(request.input_image)},
                         {"scale", arch.scale_factor},
                         {"exemplars", echo_refs},
                         {"return_heatmaps", request.return_heatmaps},
                         {"seed", request.seed}};
  result.model_tag = model_tag_;
  result.version = version_string();
  result.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

json InferenceService::health() const {
  const auto& arch = model_config().arch;
  return json{{"status", "ok"},
              {"model", model_tag_},
              {"k", arch.k},
              {"scale", arch.scale_factor},
              {"fusion", to_string(arch.fusion)},
              {"lr_size", {arch.lr_height, arch.lr_width}},
              {"hr_size", {arch.hr_height(), arch.hr_width()}},
              {"version", version_string()}};
}

json InferenceService::identities() const {
  json out = json::array();
  for (const auto& id : gallery_.identities()) {
    const auto& imgs = gallery_.images(id);
    out.push_back({{"identity", id}, {"count", imgs.size()}, {"thumbnail", "/api/images/" + imgs.front()}});
  }
  return json{{"identities", out}};
}

json InferenceService::exemplars(const std::string& identity) const {
  json out = json::array();
  for (const auto& id : gallery_.images(identity)) out.push_back({{"id", id}, {"url", "/api/images/" + id}});
  return json{{"identity", identity}, {"exemplars", out}};
}

std::vector<uint8_t> InferenceService::gallery_image(const std::string& image_id) const {
  return read_file(gallery_.resolve(image_id));
}

// ---------------------------------------------------------------------------

struct HttpServer::Impl {
  const InferenceService& service;
  httplib::Server server;

  explicit Impl(const InferenceService& s) : service(s) {}
};

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename F>
void guarded(httplib::Response& res, F&& handler) {
  try {
    handler();
  } catch (const ValidationError& e) {
    send_json(res, 400, {{"error", e.what()}, {"kind", "validation"}});
  } catch (const NotFoundError& e) {
    send_json(res, 404, {{"error", e.what()}, {"kind", "not_found"}});
  } catch (const ShapeError& e) {
    send_json(res, 400, {{"error", e.what()}, {"kind", "validation"}});
  } catch (const std::exception& e) {
    log::error(std::string("request failed: ") + e.what());
    send_json(res, 500, {{"error", e.what()}, {"kind", "internal"}});
  }
}

EditRequest parse_multipart(const httplib::Request& req) {
  EditRequest out;
  const bool has_lr = req.has_file("lr_image");
  const bool has_hr = req.has_file("hr_image");
  if (has_lr == has_hr) throw ValidationError("exactly one of lr_image and hr_image is required");
  out.input_is_hr = has_hr;
  const auto& content = req.get_file_value(has_hr ? "hr_image" : "lr_image").content;
  out.input_image.assign(content.begin(), content.end());
  const auto int_field = [&](const char* name, int fallback) {
    if (!req.has_file(name)) return fallback;
    try {
      return std::stoi(req.get_file_value(name).content);
    } catch (const std::exception&) {
      throw ValidationError(std::string(name) + " must be an integer");
    }
  };
  out.requested_scale = int_field("scale", 0);
  out.seed = static_cast<uint64_t>(int_field("seed", 0));
  if (req.has_file("return_heatmaps")) {
    const auto v = req.get_file_value("return_heatmaps").content;
    out.return_heatmaps = v == "1" || v == "true";
  }
  for (const auto& f : req.get_file_values("exemplar_id")) out.exemplars.push_back({f.content, {}});
  for (const auto& f : req.get_file_values("exemplar")) {
    out.exemplars.push_back({std::nullopt, std::vector<uint8_t>(f.content.begin(), f.content.end())});
  }
  return out;
}

}  // namespace

HttpServer::HttpServer(const InferenceService& service, std::optional<fs::path> static_dir)
    : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  const InferenceService& svc = service;
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  srv.set_payload_max_length(64ull << 20);

  srv.Get("/api/health", [&svc](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.health()); });
  });
  srv.Get("/api/identities", [&svc](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.identities()); });
  });
  srv.Get(R"(/api/exemplars/([^/]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, svc.exemplars(req.matches[1].str())); });
  });
  srv.Get(R"(/api/images/([^/]+)/([^/]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto file = req.matches[2].str();
      const auto bytes = svc.gallery_image(req.matches[1].str() + "/" + file);
      const bool png = file.size() > 4 && (file.substr(file.size() - 4) == ".png" || file.substr(file.size() - 4) == ".PNG");
      res.set_content(std::string(bytes.begin(), bytes.end()), png ? "image/png" : "image/jpeg");
    });
  });
  srv.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  srv.Post("/api/superresolve", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      EditRequest edit;
      if (req.is_multipart_form_data()) {
        edit = parse_multipart(req);
      } else {
        json body;
        try {
          body = json::parse(req.body);
        } catch (const json::exception& e) {
          throw ValidationError(std::string("body is not valid JSON: ") + e.what());
        }
        edit = parse_edit_request(body);
      }
      send_json(res, 200, to_json_response(svc.edit(edit)));
    });
  });
  if (static_dir && !srv.set_mount_point("/", static_dir->string())) {
    throw ConfigError("static directory " + static_dir->string() + " does not exist");
  }
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace exsr
