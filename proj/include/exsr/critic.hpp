#pragma once

#include <cstdint>
#include <functional>

#include <torch/torch.h>

#include "exsr/config.hpp"

namespace exsr {

/// Any differentiable map from an N x 3 x H x W batch to N scores.
using CriticFn = std::function<torch::Tensor(const torch::Tensor&)>;

/// Plain strided conv critic: halves the resolution until the shorter side is
/// at most 4, then a linear head emits one unbounded score per sample. No
/// normalization layers, so per-sample input gradients stay independent.
class CriticImpl : public torch::nn::Module {
 public:
  explicit CriticImpl(const ArchConfig& arch);

  /// N x 3 x H x W -> N
  torch::Tensor forward(const torch::Tensor& images);

  int64_t input_height() const { return height_; }
  int64_t input_width() const { return width_; }

 private:
  int64_t height_;
  int64_t width_;
  torch::nn::Conv2d stem_{nullptr};
  torch::nn::ModuleList down_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(Critic);

Critic build_critic(const ModelConfig& config, uint64_t seed);

inline CriticFn as_critic_fn(Critic critic) {
  return [critic](const torch::Tensor& x) mutable { return critic->forward(x); };
}

}  // namespace exsr
