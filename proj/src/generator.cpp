#include "exsr/generator.hpp"

#include "exsr/errors.hpp"

namespace exsr {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

torch::Tensor lrelu(const torch::Tensor& x) {
  return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2));
}

nn::Conv2d conv3x3(int in, int out) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1));
}

std::mutex& init_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

ScopedInitSeed::ScopedInitSeed(uint64_t seed) : lock_(init_mutex()) {
  torch::manual_seed(seed);
}

ScopedInitSeed::~ScopedInitSeed() = default;

UpsampleBlockImpl::UpsampleBlockImpl(int in_channels, int out_channels, NormKind norm) {
  conv_ = register_module("conv", conv3x3(in_channels, out_channels * 4));
  if (norm == NormKind::kInstance) {
    norm_ = register_module(
        "norm", nn::InstanceNorm2d(nn::InstanceNorm2dOptions(out_channels).affine(true)));
  }
}

torch::Tensor UpsampleBlockImpl::forward(const torch::Tensor& x) {
  auto y = F::pixel_shuffle(conv_->forward(x), 2);
  if (!norm_.is_empty()) y = norm_->forward(y);
  return lrelu(y);
}

ResidualBlockImpl::ResidualBlockImpl(int channels) {
  conv1_ = register_module("conv1", conv3x3(channels, channels));
  conv2_ = register_module("conv2", conv3x3(channels, channels));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  return x + conv2_->forward(lrelu(conv1_->forward(x)));
}

std::string to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::kMain:
      return "main";
    case ParamGroup::kWnn:
      return "wnn";
    case ParamGroup::kSmallGenerator:
      return "gs";
  }
  return "main";
}

ParamGroup param_group_of(const std::string& name) {
  if (name.starts_with("gs.")) return ParamGroup::kSmallGenerator;
  if (name.starts_with("pwave.wnn_")) return ParamGroup::kWnn;
  return ParamGroup::kMain;
}

GeneratorImpl::GeneratorImpl(const ModelConfig& config) : config_(config) {
  const ArchConfig& a = config.arch;
  gs_ = register_module("gs", SmallGenerator(a.gs_channels));
  if (a.k > 0) pwave_ = register_module("pwave", PWAve(a));

  const int c0 = a.trunk_channels_at(0);
  head_ = register_module("head", conv3x3(3, c0));
  if (a.k > 0) merge_lr_ = register_module("merge_lr", conv3x3(c0 + a.encoder_channels, c0));
  residual_ = register_module("residual", nn::ModuleList());
  for (int i = 0; i < a.m2; ++i) residual_->push_back(ResidualBlock(c0));
  upsample_ = register_module("upsample", nn::ModuleList());
  for (int i = 0; i < a.m1; ++i) {
    upsample_->push_back(
        UpsampleBlock(a.trunk_channels_at(i), a.trunk_channels_at(i + 1), a.upsample_norm));
  }
  const int c1 = a.trunk_channels_at(1);
  if (a.k > 0) merge_2x_ = register_module("merge_2x", conv3x3(c1 + a.encoder_channels, c1));
  tail_ = register_module("tail", conv3x3(a.trunk_channels_at(a.m1), 3));
}

SuperResolveOutput GeneratorImpl::forward(const torch::Tensor& lr, const torch::Tensor& exemplars) {
  SuperResolveOutput out;
  out.lr_2x = gs_->forward(lr);

  PWAveOutput fused;
  if (uses_exemplars()) {
    fused = pwave_->forward(exemplars, lr, out.lr_2x);
    out.weights_lr = fused.weights_lr;
    out.weights_2x = fused.weights_2x;
  }

  auto x = lrelu(head_->forward(lr));
  if (uses_exemplars()) {
    x = lrelu(merge_lr_->forward(torch::cat({x, fused.fused_lr.data.squeeze(1)}, 1)));
  }
  for (const auto& block : *residual_) x = block->as<ResidualBlock>()->forward(x);
  for (size_t i = 0; i < upsample_->size(); ++i) {
    x = (*upsample_)[i]->as<UpsampleBlock>()->forward(x);
    if (i == 0 && uses_exemplars()) {
      x = lrelu(merge_2x_->forward(torch::cat({x, fused.fused_2x.data.squeeze(1)}, 1)));
    }
  }
  out.sr = torch::tanh(tail_->forward(x));
  return out;
}

std::vector<torch::Tensor> GeneratorImpl::group_parameters(ParamGroup group) const {
  std::vector<torch::Tensor> params;
  for (const auto& item : named_parameters(/*recurse=*/true)) {
    if (param_group_of(item.key()) == group) params.push_back(item.value());
  }
  return params;
}

Generator build_generator(const ModelConfig& config, uint64_t seed) {
  config.validate();
  ScopedInitSeed scoped(seed);
  return Generator(config);
}

SuperResolveOutput super_resolve(Generator& generator, const torch::Tensor& lr,
                                 const torch::Tensor& exemplars) {
  const ArchConfig& a = generator->config().arch;
  check_image_batch(lr, "lr");
  if (lr.size(2) != a.lr_height || lr.size(3) != a.lr_width) {
    throw ShapeError("lr image is " + std::to_string(lr.size(2)) + "x" + std::to_string(lr.size(3)) +
                     ", model expects " + std::to_string(a.lr_height) + "x" +
                     std::to_string(a.lr_width));
  }
  if (a.k > 0) {
    check_exemplar_set(exemplars, "exemplars");
    if (exemplars.size(1) != a.k) {
      throw ConfigError("model expects K=" + std::to_string(a.k) + " exemplars, got " +
                        std::to_string(exemplars.size(1)));
    }
    if (exemplars.size(0) != lr.size(0)) {
      throw ShapeError("exemplar batch " + std::to_string(exemplars.size(0)) +
                       " does not match lr batch " + std::to_string(lr.size(0)));
    }
    if (exemplars.size(3) != a.hr_height() || exemplars.size(4) != a.hr_width()) {
      throw ShapeError("exemplars are " + std::to_string(exemplars.size(3)) + "x" +
                       std::to_string(exemplars.size(4)) + ", model expects " +
                       std::to_string(a.hr_height()) + "x" + std::to_string(a.hr_width()));
    }
  } else if (exemplars.defined() && exemplars.numel() > 0) {
    throw ConfigError("model was built without exemplars (K=0) but exemplars were supplied");
  }
  return generator->forward(lr, exemplars);
}

}  // namespace exsr
