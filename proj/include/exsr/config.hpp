#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json_fwd.hpp>

namespace exsr {

enum class DatasetKind { kCelebA, kWebFace };
enum class FusionMode { kPWAve, kAverage };
enum class NormKind { kNone, kInstance };

std::string to_string(DatasetKind kind);
std::string to_string(FusionMode mode);
std::string to_string(NormKind kind);
DatasetKind dataset_kind_from_string(const std::string& s);
FusionMode fusion_mode_from_string(const std::string& s);
NormKind norm_kind_from_string(const std::string& s);

/// Architecture hyperparameters. Everything here must match between a
/// checkpoint and the config used to load it.
struct ArchConfig {
  int scale_factor = 8;
  int m1 = 3;  // upsample blocks, 2^m1 == scale_factor
  int m2 = 1;  // residual blocks
  int num_wnn = 2;
  int k = 3;  // exemplars per sample; 0 disables the exemplar branch
  int lr_height = 16;
  int lr_width = 16;
  int encoder_channels = 64;
  int trunk_channels = 64;
  int min_trunk_channels = 16;
  int wnn_hidden = 32;
  int gs_channels = 32;
  int critic_channels = 32;
  int critic_max_channels = 256;
  FusionMode fusion = FusionMode::kPWAve;
  NormKind upsample_norm = NormKind::kInstance;

  int hr_height() const { return lr_height << m1; }
  int hr_width() const { return lr_width << m1; }
  /// Channel width of the trunk after the given number of upsample blocks.
  int trunk_channels_at(int stage) const;
};

struct LossConfig {
  double lambda1 = 1.0;
  double lambda2 = 0.01;
  double lambda3 = 1.0;
  double lambda_gp = 10.0;
  std::string phi_p = "random_conv:1";
  std::string phi_id = "random_conv:2";
};

struct OptimConfig {
  double lr_main = 0.003;
  double lr_wnn = 0.0001;
  double lr_critic = 0.003;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.99;
  double adam_eps = 1e-8;
  bool linear_decay = false;
};

struct TrainConfig {
  int batch_size = 8;
  int64_t steps = 100000;
  int n_critic = 1;
  bool use_critic = true;
  int64_t checkpoint_every = 1000;
  int64_t log_every = 1;
  uint64_t seed = 0;
  std::string out_dir = "runs/default";
};

struct DataConfig {
  DatasetKind dataset_kind = DatasetKind::kCelebA;
  std::string root_dir;
  int min_images = 5;
  double test_fraction = 0.1;
};

/// Every architecture and training hyperparameter of the model.
struct ModelConfig {
  ArchConfig arch;
  LossConfig loss;
  OptimConfig optim;
  TrainConfig train;
  DataConfig data;

  /// Throws ConfigError when the fields contradict each other.
  void validate() const;

  /// Presets: CelebA (128x128 HR) and WebFace (256x256 HR).
  static ModelConfig celeba(int scale_factor);
  static ModelConfig webface(int scale_factor);
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

ModelConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ModelConfig& config);

/// Throws ConfigError naming the first architecture field that differs.
void require_same_architecture(const ArchConfig& expected, const ArchConfig& actual);

}  // namespace exsr
