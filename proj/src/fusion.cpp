#include "exsr/fusion.hpp"

#include <sstream>

#include "exsr/errors.hpp"

namespace exsr {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

constexpr double kLeakySlope = 0.2;

std::string shape_of(const torch::Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

torch::Tensor lrelu(const torch::Tensor& x) {
  return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(kLeakySlope));
}

nn::Conv2d conv3x3(int in, int out, int stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

}  // namespace

void check_image_batch(const torch::Tensor& t, const char* what) {
  if (!t.defined() || t.dim() != 4 || t.size(1) != 3) {
    throw ShapeError(std::string(what) + ": expected N x 3 x H x W, got " +
                     (t.defined() ? shape_of(t) : std::string("undefined")));
  }
}

void check_exemplar_set(const torch::Tensor& t, const char* what) {
  if (!t.defined() || t.dim() != 5 || t.size(2) != 3) {
    throw ShapeError(std::string(what) + ": expected N x K x 3 x H x W, got " +
                     (t.defined() ? shape_of(t) : std::string("undefined")));
  }
}

torch::Tensor normalize_weights(const torch::Tensor& scores) {
  if (scores.dim() != 5 || scores.size(2) != 1) {
    throw ShapeError("weight scores: expected N x K x 1 x h x w, got " + shape_of(scores));
  }
  const int64_t k = scores.size(1);
  if (k < 1) throw ShapeError("weight scores: K must be >= 1");
  auto mass = scores.sum(1, /*keepdim=*/true);
  auto degenerate = mass <= 0;
  // Dividing by a placeholder keeps the gradient finite on degenerate pixels.
  auto safe_mass = torch::where(degenerate, torch::ones_like(mass), mass);
  auto normalized = scores / safe_mass;
  auto uniform = torch::full_like(scores, 1.0 / static_cast<double>(k));
  return torch::where(degenerate.expand_as(scores), uniform, normalized);
}

WeightMap uniform_weights(int64_t n, int64_t k, int64_t h, int64_t w,
                          const torch::TensorOptions& options) {
  return WeightMap{torch::full({n, k, 1, h, w}, 1.0 / static_cast<double>(k), options)};
}

FusedFeatures fuse(const ExemplarFeatures& features, const WeightMap& weights) {
  const auto& f = features.data;
  const auto& w = weights.data;
  if (f.dim() != 5 || w.dim() != 5) {
    throw ShapeError("fuse: expected 5-d features and weights, got " + shape_of(f) + " and " +
                     shape_of(w));
  }
  if (w.size(2) != 1 || f.size(0) != w.size(0) || f.size(1) != w.size(1) ||
      f.size(3) != w.size(3) || f.size(4) != w.size(4)) {
    throw ShapeError("fuse: features " + shape_of(f) + " do not match weights " + shape_of(w));
  }
  return FusedFeatures{(f * w).sum(1, /*keepdim=*/true)};
}

// ---------------------------------------------------------------------------
// ExemplarEncoder

ExemplarEncoderImpl::ExemplarEncoderImpl(const ArchConfig& arch) : arch_(arch) {
  const int c = arch.encoder_channels;
  stem_ = register_module("stem", conv3x3(3, c));
  down_ = register_module("down", nn::ModuleList());
  // HR -> 2*h_LR takes m1-1 halvings.
  for (int i = 0; i + 1 < arch.m1; ++i) down_->push_back(conv3x3(c, c, 2));
  to_lr_ = register_module("to_lr", conv3x3(c, c, 2));
}

std::pair<ExemplarFeatures, ExemplarFeatures> ExemplarEncoderImpl::forward(
    const torch::Tensor& exemplars) {
  check_exemplar_set(exemplars, "exemplars");
  const int64_t n = exemplars.size(0);
  const int64_t k = exemplars.size(1);
  if (k < 1) throw ConfigError("exemplar set must contain at least one exemplar");
  if (exemplars.size(3) != arch_.hr_height() || exemplars.size(4) != arch_.hr_width()) {
    throw ConfigError("exemplar resolution " + std::to_string(exemplars.size(3)) + "x" +
                      std::to_string(exemplars.size(4)) + " does not match configured HR size " +
                      std::to_string(arch_.hr_height()) + "x" + std::to_string(arch_.hr_width()));
  }
  auto x = exemplars.reshape({n * k, 3, exemplars.size(3), exemplars.size(4)});
  x = lrelu(stem_->forward(x));
  for (const auto& layer : *down_) x = lrelu(layer->as<nn::Conv2d>()->forward(x));
  auto tap_2x = x;
  auto tap_lr = lrelu(to_lr_->forward(x));

  const auto unflatten = [n, k](const torch::Tensor& t) {
    return t.reshape({n, k, t.size(1), t.size(2), t.size(3)});
  };
  return {ExemplarFeatures{unflatten(tap_lr), FeatureScale::kLR},
          ExemplarFeatures{unflatten(tap_2x), FeatureScale::k2X}};
}

// ---------------------------------------------------------------------------
// WeightNet

WeightNetImpl::WeightNetImpl(int feature_channels, int hidden) {
  conv1_ = register_module("conv1", conv3x3(feature_channels + 3, hidden));
  conv2_ = register_module("conv2", conv3x3(hidden, 1));
}

torch::Tensor WeightNetImpl::scores(const ExemplarFeatures& features, const torch::Tensor& guide) {
  const auto& f = features.data;
  if (f.dim() != 5) throw ShapeError("weight net: features must be 5-d, got " + shape_of(f));
  check_image_batch(guide, "weight net guide");
  if (guide.size(0) != f.size(0) || guide.size(2) != f.size(3) || guide.size(3) != f.size(4)) {
    throw ShapeError("weight net: guide " + shape_of(guide) + " does not match features " +
                     shape_of(f));
  }
  const int64_t n = f.size(0), k = f.size(1), h = f.size(3), w = f.size(4);
  auto g = guide.unsqueeze(1).expand({n, k, 3, h, w}).reshape({n * k, 3, h, w});
  auto x = torch::cat({g, f.reshape({n * k, f.size(2), h, w})}, 1);
  x = lrelu(conv1_->forward(x));
  x = F::softplus(conv2_->forward(x));
  return x.reshape({n, k, 1, h, w});
}

WeightMap WeightNetImpl::forward(const ExemplarFeatures& features, const torch::Tensor& guide) {
  return WeightMap{normalize_weights(scores(features, guide))};
}

// ---------------------------------------------------------------------------
// SmallGenerator

SmallGeneratorImpl::SmallGeneratorImpl(int channels) {
  head_ = register_module("head", conv3x3(3, channels));
  up_ = register_module("up", conv3x3(channels, channels * 4));
  tail_ = register_module("tail", conv3x3(channels, 3));
}

torch::Tensor SmallGeneratorImpl::forward(const torch::Tensor& lr) {
  check_image_batch(lr, "small generator input");
  auto x = lrelu(head_->forward(lr));
  x = lrelu(F::pixel_shuffle(up_->forward(x), 2));
  return torch::tanh(tail_->forward(x));
}

// ---------------------------------------------------------------------------
// PWAve

PWAveImpl::PWAveImpl(const ArchConfig& arch) : mode_(arch.fusion) {
  encoder_ = register_module("encoder", ExemplarEncoder(arch));
  if (mode_ == FusionMode::kPWAve) {
    wnn_lr_ = register_module("wnn_lr", WeightNet(arch.encoder_channels, arch.wnn_hidden));
    wnn_2x_ = register_module("wnn_2x", WeightNet(arch.encoder_channels, arch.wnn_hidden));
  }
}

std::pair<ExemplarFeatures, ExemplarFeatures> PWAveImpl::encode(const torch::Tensor& exemplars) {
  return encoder_->forward(exemplars);
}

PWAveOutput PWAveImpl::forward(const torch::Tensor& exemplars, const torch::Tensor& lr,
                               const torch::Tensor& lr_2x) {
  auto [f_lr, f_2x] = encoder_->forward(exemplars);
  PWAveOutput out;
  if (mode_ == FusionMode::kPWAve) {
    out.weights_lr = wnn_lr_->forward(f_lr, lr);
    out.weights_2x = wnn_2x_->forward(f_2x, lr_2x);
  } else {
    const auto opts = f_lr.data.options();
    out.weights_lr = uniform_weights(f_lr.batch(), f_lr.count(), f_lr.height(), f_lr.width(), opts);
    out.weights_2x = uniform_weights(f_2x.batch(), f_2x.count(), f_2x.height(), f_2x.width(), opts);
  }
  out.fused_lr = fuse(f_lr, out.weights_lr);
  out.fused_2x = fuse(f_2x, out.weights_2x);
  return out;
}

}  // namespace exsr
