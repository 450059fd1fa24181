#include "exsr/critic.hpp"

#include <algorithm>

#include "exsr/errors.hpp"
#include "exsr/fusion.hpp"
#include "exsr/generator.hpp"

namespace exsr {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

CriticImpl::CriticImpl(const ArchConfig& arch)
    : height_(arch.hr_height()), width_(arch.hr_width()) {
  int channels = arch.critic_channels;
  stem_ = register_module("stem", nn::Conv2d(nn::Conv2dOptions(3, channels, 3).padding(1)));
  down_ = register_module("down", nn::ModuleList());
  int64_t h = height_, w = width_;
  while (std::min(h, w) > 4) {
    const int next = std::min(channels * 2, arch.critic_max_channels);
    down_->push_back(nn::Conv2d(nn::Conv2dOptions(channels, next, 3).stride(2).padding(1)));
    channels = next;
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  }
  head_ = register_module("head", nn::Linear(channels * h * w, 1));
}

torch::Tensor CriticImpl::forward(const torch::Tensor& images) {
  check_image_batch(images, "critic input");
  if (images.size(2) != height_ || images.size(3) != width_) {
    throw ShapeError("critic expects " + std::to_string(height_) + "x" + std::to_string(width_) +
                     " images, got " + std::to_string(images.size(2)) + "x" +
                     std::to_string(images.size(3)));
  }
  const auto act = F::LeakyReLUFuncOptions().negative_slope(0.2);
  auto x = F::leaky_relu(stem_->forward(images), act);
  for (const auto& layer : *down_) x = F::leaky_relu(layer->as<nn::Conv2d>()->forward(x), act);
  return head_->forward(x.flatten(1)).squeeze(1);
}

Critic build_critic(const ModelConfig& config, uint64_t seed) {
  config.validate();
  ScopedInitSeed scoped(seed);
  return Critic(config.arch);
}

}  // namespace exsr
