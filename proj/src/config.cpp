#include "exsr/config.hpp"

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

#include "exsr/errors.hpp"

namespace exsr {

using nlohmann::json;

std::string to_string(DatasetKind kind) {
  return kind == DatasetKind::kCelebA ? "celeba" : "webface";
}

std::string to_string(FusionMode mode) {
  return mode == FusionMode::kPWAve ? "pwave" : "average";
}

std::string to_string(NormKind kind) {
  return kind == NormKind::kInstance ? "instance" : "none";
}

DatasetKind dataset_kind_from_string(const std::string& s) {
  if (s == "celeba") return DatasetKind::kCelebA;
  if (s == "webface") return DatasetKind::kWebFace;
  throw ConfigError("unknown dataset_kind '" + s + "' (expected celeba|webface)");
}

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "pwave") return FusionMode::kPWAve;
  if (s == "average") return FusionMode::kAverage;
  throw ConfigError("unknown fusion mode '" + s + "' (expected pwave|average)");
}

NormKind norm_kind_from_string(const std::string& s) {
  if (s == "instance") return NormKind::kInstance;
  if (s == "none") return NormKind::kNone;
  throw ConfigError("unknown normalization '" + s + "' (expected instance|none)");
}

int ArchConfig::trunk_channels_at(int stage) const {
  return std::max(trunk_channels >> stage, std::min(min_trunk_channels, trunk_channels));
}

void ModelConfig::validate() const {
  const auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (arch.m1 < 1) fail("m1 must be >= 1");
  if (arch.m1 > 8) fail("m1 must be <= 8");
  if ((1 << arch.m1) != arch.scale_factor) {
    fail("scale_factor " + std::to_string(arch.scale_factor) + " is inconsistent with m1=" +
         std::to_string(arch.m1) + " (expected 2^m1)");
  }
  if (arch.m2 < 0) fail("m2 must be >= 0");
  if (arch.num_wnn != 2) fail("num_wnn is fixed to 2 (one weight network per fusion scale)");
  if (arch.k < 0) fail("k must be >= 0");
  if (arch.lr_height < 2 || arch.lr_width < 2) fail("LR resolution must be at least 2x2");
  if (arch.encoder_channels < 1 || arch.trunk_channels < 1 || arch.wnn_hidden < 1 ||
      arch.gs_channels < 1 || arch.critic_channels < 1 || arch.min_trunk_channels < 1) {
    fail("channel widths must be positive");
  }
  if (arch.critic_max_channels < arch.critic_channels) fail("critic_max_channels < critic_channels");
  if (loss.lambda1 < 0 || loss.lambda2 < 0 || loss.lambda3 < 0) fail("loss coefficients must be >= 0");
  if (loss.lambda_gp < 0) fail("lambda_gp must be >= 0");
  if (optim.lr_main <= 0 || optim.lr_wnn <= 0 || optim.lr_critic <= 0) fail("learning rates must be > 0");
  if (optim.adam_beta1 < 0 || optim.adam_beta1 >= 1 || optim.adam_beta2 < 0 || optim.adam_beta2 >= 1) {
    fail("adam betas must lie in [0, 1)");
  }
  if (train.batch_size < 1) fail("batch_size must be >= 1");
  if (train.n_critic < 1) fail("n_critic must be >= 1");
  if (train.steps < 0) fail("steps must be >= 0");
  if (data.min_images < 1) fail("min_images must be >= 1");
  if (data.test_fraction <= 0 || data.test_fraction >= 1) fail("test_fraction must lie in (0, 1)");
}

ModelConfig ModelConfig::celeba(int scale_factor) {
  ModelConfig c;
  if (scale_factor != 8 && scale_factor != 16) throw ConfigError("CelebA preset supports x8 and x16");
  c.arch.scale_factor = scale_factor;
  c.arch.m1 = scale_factor == 8 ? 3 : 4;
  c.arch.m2 = 1;
  c.arch.lr_height = c.arch.lr_width = scale_factor == 8 ? 16 : 8;
  c.train.batch_size = 8;
  c.data.dataset_kind = DatasetKind::kCelebA;
  c.data.min_images = 5;
  return c;
}

ModelConfig ModelConfig::webface(int scale_factor) {
  ModelConfig c;
  if (scale_factor != 8 && scale_factor != 16) throw ConfigError("WebFace preset supports x8 and x16");
  c.arch.scale_factor = scale_factor;
  c.arch.m1 = scale_factor == 8 ? 3 : 4;
  c.arch.m2 = 1;
  c.arch.lr_height = c.arch.lr_width = scale_factor == 8 ? 32 : 16;
  c.train.batch_size = 4;
  c.data.dataset_kind = DatasetKind::kWebFace;
  c.data.min_images = 10;
  return c;
}

void to_json(json& j, const ModelConfig& c) {
  j = json{
      {"model",
       {{"scale_factor", c.arch.scale_factor},
        {"m1", c.arch.m1},
        {"m2", c.arch.m2},
        {"num_wnn", c.arch.num_wnn},
        {"k", c.arch.k},
        {"lr_height", c.arch.lr_height},
        {"lr_width", c.arch.lr_width},
        {"encoder_channels", c.arch.encoder_channels},
        {"trunk_channels", c.arch.trunk_channels},
        {"min_trunk_channels", c.arch.min_trunk_channels},
        {"wnn_hidden", c.arch.wnn_hidden},
        {"gs_channels", c.arch.gs_channels},
        {"critic_channels", c.arch.critic_channels},
        {"critic_max_channels", c.arch.critic_max_channels},
        {"fusion", to_string(c.arch.fusion)},
        {"upsample_norm", to_string(c.arch.upsample_norm)}}},
      {"loss",
       {{"lambda1", c.loss.lambda1},
        {"lambda2", c.loss.lambda2},
        {"lambda3", c.loss.lambda3},
        {"lambda_gp", c.loss.lambda_gp},
        {"phi_p", c.loss.phi_p},
        {"phi_id", c.loss.phi_id}}},
      {"optim",
       {{"lr_main", c.optim.lr_main},
        {"lr_wnn", c.optim.lr_wnn},
        {"lr_critic", c.optim.lr_critic},
        {"adam_beta1", c.optim.adam_beta1},
        {"adam_beta2", c.optim.adam_beta2},
        {"adam_eps", c.optim.adam_eps},
        {"linear_decay", c.optim.linear_decay}}},
      {"train",
       {{"batch_size", c.train.batch_size},
        {"steps", c.train.steps},
        {"n_critic", c.train.n_critic},
        {"use_critic", c.train.use_critic},
        {"checkpoint_every", c.train.checkpoint_every},
        {"log_every", c.train.log_every},
        {"seed", c.train.seed},
        {"out_dir", c.train.out_dir}}},
      {"data",
       {{"dataset_kind", to_string(c.data.dataset_kind)},
        {"root_dir", c.data.root_dir},
        {"min_images", c.data.min_images},
        {"test_fraction", c.data.test_fraction}}},
  };
}

namespace {

// Missing keys keep their defaults so config files only need to list overrides.
template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (auto it = obj.find(key); it != obj.end()) {
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
  }
}

const json& section(const json& j, const char* name) {
  static const json empty = json::object();
  auto it = j.find(name);
  if (it == j.end()) return empty;
  if (!it->is_object()) throw ConfigError(std::string("config section '") + name + "' must be an object");
  return *it;
}

}  // namespace

void from_json(const json& j, ModelConfig& c) {
  if (!j.is_object()) throw ConfigError("config document must be an object");
  const json& m = section(j, "model");
  read(m, "scale_factor", c.arch.scale_factor);
  read(m, "m1", c.arch.m1);
  read(m, "m2", c.arch.m2);
  read(m, "num_wnn", c.arch.num_wnn);
  read(m, "k", c.arch.k);
  read(m, "lr_height", c.arch.lr_height);
  read(m, "lr_width", c.arch.lr_width);
  read(m, "encoder_channels", c.arch.encoder_channels);
  read(m, "trunk_channels", c.arch.trunk_channels);
  read(m, "min_trunk_channels", c.arch.min_trunk_channels);
  read(m, "wnn_hidden", c.arch.wnn_hidden);
  read(m, "gs_channels", c.arch.gs_channels);
  read(m, "critic_channels", c.arch.critic_channels);
  read(m, "critic_max_channels", c.arch.critic_max_channels);
  std::string s;
  if (m.contains("fusion")) {
    read(m, "fusion", s);
    c.arch.fusion = fusion_mode_from_string(s);
  }
  if (m.contains("upsample_norm")) {
    read(m, "upsample_norm", s);
    c.arch.upsample_norm = norm_kind_from_string(s);
  }

  const json& l = section(j, "loss");
  read(l, "lambda1", c.loss.lambda1);
  read(l, "lambda2", c.loss.lambda2);
  read(l, "lambda3", c.loss.lambda3);
  read(l, "lambda_gp", c.loss.lambda_gp);
  read(l, "phi_p", c.loss.phi_p);
  read(l, "phi_id", c.loss.phi_id);

  const json& o = section(j, "optim");
  read(o, "lr_main", c.optim.lr_main);
  read(o, "lr_wnn", c.optim.lr_wnn);
  read(o, "lr_critic", c.optim.lr_critic);
  read(o, "adam_beta1", c.optim.adam_beta1);
  read(o, "adam_beta2", c.optim.adam_beta2);
  read(o, "adam_eps", c.optim.adam_eps);
  read(o, "linear_decay", c.optim.linear_decay);

  const json& t = section(j, "train");
  read(t, "batch_size", c.train.batch_size);
  read(t, "steps", c.train.steps);
  read(t, "n_critic", c.train.n_critic);
  read(t, "use_critic", c.train.use_critic);
  read(t, "checkpoint_every", c.train.checkpoint_every);
  read(t, "log_every", c.train.log_every);
  read(t, "seed", c.train.seed);
  read(t, "out_dir", c.train.out_dir);

  const json& d = section(j, "data");
  if (d.contains("dataset_kind")) {
    read(d, "dataset_kind", s);
    c.data.dataset_kind = dataset_kind_from_string(s);
  }
  read(d, "root_dir", c.data.root_dir);
  read(d, "min_images", c.data.min_images);
  read(d, "test_fraction", c.data.test_fraction);
}

ModelConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  ModelConfig c = j.get<ModelConfig>();
  c.validate();
  return c;
}

void save_config(const std::filesystem::path& path, const ModelConfig& config) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config " + path.string());
  out << json(config).dump(2) << '\n';
}

void require_same_architecture(const ArchConfig& expected, const ArchConfig& actual) {
  const auto check = [](const char* field, auto a, auto b) {
    if (a != b) {
      throw ConfigError(std::string("architecture mismatch on '") + field + "'");
    }
  };
  check("scale_factor", expected.scale_factor, actual.scale_factor);
  check("m1", expected.m1, actual.m1);
  check("m2", expected.m2, actual.m2);
  check("num_wnn", expected.num_wnn, actual.num_wnn);
  check("k", expected.k, actual.k);
  check("lr_height", expected.lr_height, actual.lr_height);
  check("lr_width", expected.lr_width, actual.lr_width);
  check("encoder_channels", expected.encoder_channels, actual.encoder_channels);
  check("trunk_channels", expected.trunk_channels, actual.trunk_channels);
  check("min_trunk_channels", expected.min_trunk_channels, actual.min_trunk_channels);
  check("wnn_hidden", expected.wnn_hidden, actual.wnn_hidden);
  check("gs_channels", expected.gs_channels, actual.gs_channels);
  check("critic_channels", expected.critic_channels, actual.critic_channels);
  check("critic_max_channels", expected.critic_max_channels, actual.critic_max_channels);
  check("fusion", expected.fusion, actual.fusion);
  check("upsample_norm", expected.upsample_norm, actual.upsample_norm);
}

}  // namespace exsr
