#pragma once

// Pixel-wise weighted averaging of exemplar features (PWAve) and the small
// generator that produces the 2x guide image for the second weight network.
//
// Tensor layouts:
//   exemplar set      N x K x 3 x h  x w      (HR resolution)
//   ExemplarFeatures  N x K x C x h' x w'
//   WeightMap         N x K x 1 x h' x w'
//   FusedFeatures     N x 1 x C x h' x w'

#include <cstdint>
#include <utility>

#include <torch/torch.h>

#include "exsr/config.hpp"

namespace exsr {

enum class FeatureScale { kLR, k2X };

struct ExemplarFeatures {
  torch::Tensor data;
  FeatureScale scale = FeatureScale::kLR;

  int64_t batch() const { return data.size(0); }
  int64_t count() const { return data.size(1); }
  int64_t channels() const { return data.size(2); }
  int64_t height() const { return data.size(3); }
  int64_t width() const { return data.size(4); }
};

/// Non-negative fusion weights with unit L1 mass over the exemplar axis.
struct WeightMap {
  torch::Tensor data;

  bool defined() const { return data.defined(); }
};

struct FusedFeatures {
  torch::Tensor data;
};

/// Throws ShapeError unless `t` is N x 3 x H x W.
void check_image_batch(const torch::Tensor& t, const char* what);
/// Throws ShapeError unless `t` is N x K x 3 x H x W.
void check_exemplar_set(const torch::Tensor& t, const char* what);

/// L1-normalizes non-negative scores (N x K x 1 x h x w) over K. Pixels whose
/// scores sum to zero receive the uniform weight 1/K.
torch::Tensor normalize_weights(const torch::Tensor& scores);

WeightMap uniform_weights(int64_t n, int64_t k, int64_t h, int64_t w,
                          const torch::TensorOptions& options);

/// f^c[n,0,c,i,j] = sum_k W[n,k,0,i,j] * f[n,k,c,i,j]
FusedFeatures fuse(const ExemplarFeatures& features, const WeightMap& weights);

/// Strided conv encoder with taps at 2*h_LR and h_LR.
class ExemplarEncoderImpl : public torch::nn::Module {
 public:
  explicit ExemplarEncoderImpl(const ArchConfig& arch);

  /// Returns {SCALE_LR, SCALE_2X} feature stacks. Throws ConfigError when the
  /// exemplar resolution differs from the configured HR size.
  std::pair<ExemplarFeatures, ExemplarFeatures> forward(const torch::Tensor& exemplars);

 private:
  ArchConfig arch_;
  torch::nn::Conv2d stem_{nullptr};
  torch::nn::ModuleList down_{nullptr};
  torch::nn::Conv2d to_lr_{nullptr};
};
TORCH_MODULE(ExemplarEncoder);

/// Weight-generation network for one scale. The same weights score every
/// exemplar slice, so permuting exemplars permutes the output slices.
class WeightNetImpl : public torch::nn::Module {
 public:
  WeightNetImpl(int feature_channels, int hidden);

  /// Raw non-negative scores N x K x 1 x h x w (softplus of the conv output).
  torch::Tensor scores(const ExemplarFeatures& features, const torch::Tensor& guide);
  WeightMap forward(const ExemplarFeatures& features, const torch::Tensor& guide);

 private:
  torch::nn::Conv2d conv1_{nullptr};
  torch::nn::Conv2d conv2_{nullptr};
};
TORCH_MODULE(WeightNet);

/// G_S: LR image -> 3-channel image at twice the resolution, in [-1, 1].
class SmallGeneratorImpl : public torch::nn::Module {
 public:
  explicit SmallGeneratorImpl(int channels);

  torch::Tensor forward(const torch::Tensor& lr);

 private:
  torch::nn::Conv2d head_{nullptr};
  torch::nn::Conv2d up_{nullptr};
  torch::nn::Conv2d tail_{nullptr};
};
TORCH_MODULE(SmallGenerator);

struct PWAveOutput {
  FusedFeatures fused_lr;
  FusedFeatures fused_2x;
  WeightMap weights_lr;
  WeightMap weights_2x;
};

/// Encoder plus one weight network per scale. In average mode no weight
/// networks are built and the weights are uniform.
class PWAveImpl : public torch::nn::Module {
 public:
  explicit PWAveImpl(const ArchConfig& arch);

  std::pair<ExemplarFeatures, ExemplarFeatures> encode(const torch::Tensor& exemplars);
  PWAveOutput forward(const torch::Tensor& exemplars, const torch::Tensor& lr,
                      const torch::Tensor& lr_2x);

  FusionMode mode() const { return mode_; }

 private:
  FusionMode mode_;
  ExemplarEncoder encoder_{nullptr};
  WeightNet wnn_lr_{nullptr};
  WeightNet wnn_2x_{nullptr};
};
TORCH_MODULE(PWAve);

}  // namespace exsr
