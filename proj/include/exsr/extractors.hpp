#pragma once

// Frozen feature extractors used by the perceptual loss. Extractors are
// created from a spec string so config files can name them:
//
//   none                       contributes nothing
//   flatten                    the image itself, flattened
//   random_conv[:SEED]         fixed random two-layer conv, pooled to 8x8
//   torchscript:PATH[@SIZE]    exported TorchScript network, input resized
//                              to SIZE x SIZE and mapped to [0, 1]

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace exsr {

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;

  virtual std::string name() const = 0;

  /// N x 3 x H x W in [-1, 1] -> N x D. An empty (undefined) result means the
  /// extractor contributes no term.
  virtual torch::Tensor features(const torch::Tensor& images) const = 0;

  /// Frozen parameters, for inspection. Never updated by training.
  virtual std::vector<torch::Tensor> parameters() const { return {}; }
};

using ExtractorPtr = std::shared_ptr<const FeatureExtractor>;

class NoneExtractor final : public FeatureExtractor {
 public:
  std::string name() const override { return "none"; }
  torch::Tensor features(const torch::Tensor&) const override { return {}; }
};

class FlattenExtractor final : public FeatureExtractor {
 public:
  std::string name() const override { return "flatten"; }
  torch::Tensor features(const torch::Tensor& images) const override;
};

/// Two tanh conv layers with weights drawn from a private generator, average
/// pooled to an 8x8 grid and scaled by 1/sqrt(D) so the squared distance is a
/// mean rather than a sum.
class RandomConvExtractor final : public FeatureExtractor {
 public:
  explicit RandomConvExtractor(uint64_t seed, int channels = 16);

  std::string name() const override { return "random_conv:" + std::to_string(seed_); }
  torch::Tensor features(const torch::Tensor& images) const override;
  std::vector<torch::Tensor> parameters() const override { return {w1_, b1_, w2_, b2_}; }

 private:
  uint64_t seed_;
  torch::Tensor w1_, b1_, w2_, b2_;
};

/// Adapter for externally exported perceptual or identity networks.
class TorchScriptExtractor final : public FeatureExtractor {
 public:
  TorchScriptExtractor(const std::string& path, int input_size);

  std::string name() const override { return "torchscript:" + path_; }
  torch::Tensor features(const torch::Tensor& images) const override;
  std::vector<torch::Tensor> parameters() const override;

 private:
  std::string path_;
  int input_size_;
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

/// Name -> factory map. Built-ins are registered on first use; callers may add
/// their own kinds. Factories receive the text after the first ':'.
class ExtractorRegistry {
 public:
  using Factory = std::function<ExtractorPtr(const std::string& argument)>;

  static ExtractorRegistry& instance();

  void add(const std::string& kind, Factory factory);
  /// Throws DependencyError for unknown kinds or failing factories.
  ExtractorPtr create(const std::string& spec) const;
  std::vector<std::string> kinds() const;

 private:
  ExtractorRegistry();
  std::map<std::string, Factory> factories_;
};

inline ExtractorPtr make_extractor(const std::string& spec) {
  return ExtractorRegistry::instance().create(spec);
}

}  // namespace exsr
