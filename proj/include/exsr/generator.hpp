#pragma once

#include <cstdint>
#include <mutex>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "exsr/config.hpp"
#include "exsr/fusion.hpp"

namespace exsr {

/// x2 sub-pixel upsample: conv -> pixel shuffle -> optional instance norm -> LeakyReLU.
class UpsampleBlockImpl : public torch::nn::Module {
 public:
  UpsampleBlockImpl(int in_channels, int out_channels, NormKind norm);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv_{nullptr};
  torch::nn::InstanceNorm2d norm_{nullptr};
};
TORCH_MODULE(UpsampleBlock);

class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr};
  torch::nn::Conv2d conv2_{nullptr};
};
TORCH_MODULE(ResidualBlock);

struct SuperResolveOutput {
  torch::Tensor sr;     // N x 3 x H x W in [-1, 1]
  torch::Tensor lr_2x;  // G_S output, N x 3 x 2h x 2w
  WeightMap weights_lr;  // undefined when K == 0
  WeightMap weights_2x;
};

enum class ParamGroup { kMain, kWnn, kSmallGenerator };

std::string to_string(ParamGroup group);

/// Parameter group of a generator parameter name: the two weight networks,
/// G_S, and everything else.
ParamGroup param_group_of(const std::string& parameter_name);

/// ISR trunk with M1 upsample and M2 residual blocks, the PWAve module and
/// G_S. Fused LR-scale features join the trunk before the first upsample
/// block, 2x-scale features right after it.
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const ModelConfig& config);

  SuperResolveOutput forward(const torch::Tensor& lr, const torch::Tensor& exemplars);

  const ModelConfig& config() const { return config_; }
  bool uses_exemplars() const { return config_.arch.k > 0; }

  /// Parameters of one group, in registration order.
  std::vector<torch::Tensor> group_parameters(ParamGroup group) const;

  PWAve pwave() const { return pwave_; }
  SmallGenerator small_generator() const { return gs_; }

 private:
  ModelConfig config_;
  SmallGenerator gs_{nullptr};
  PWAve pwave_{nullptr};
  torch::nn::Conv2d head_{nullptr};
  torch::nn::Conv2d merge_lr_{nullptr};
  torch::nn::ModuleList residual_{nullptr};
  torch::nn::ModuleList upsample_{nullptr};
  torch::nn::Conv2d merge_2x_{nullptr};
  torch::nn::Conv2d tail_{nullptr};
};
TORCH_MODULE(Generator);

/// Validates the config and builds a generator whose initial parameters are a
/// pure function of `seed`.
Generator build_generator(const ModelConfig& config, uint64_t seed);

/// Runs the generator after validating shapes against its config: K mismatch
/// raises ConfigError, resolution mismatch raises ShapeError.
SuperResolveOutput super_resolve(Generator& generator, const torch::Tensor& lr,
                                 const torch::Tensor& exemplars);

/// Seeds the global torch generator for the duration of a module
/// construction. Serializes concurrent builders.
class ScopedInitSeed {
 public:
  explicit ScopedInitSeed(uint64_t seed);
  ~ScopedInitSeed();
  ScopedInitSeed(const ScopedInitSeed&) = delete;
  ScopedInitSeed& operator=(const ScopedInitSeed&) = delete;

 private:
  std::unique_lock<std::mutex> lock_;
};

}  // namespace exsr
