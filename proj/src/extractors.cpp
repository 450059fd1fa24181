#include "exsr/extractors.hpp"

#include <cmath>

#include <torch/script.h>

#include "exsr/errors.hpp"
#include "exsr/fusion.hpp"

namespace exsr {

namespace F = torch::nn::functional;

torch::Tensor FlattenExtractor::features(const torch::Tensor& images) const {
  return images.flatten(1);
}

RandomConvExtractor::RandomConvExtractor(uint64_t seed, int channels) : seed_(seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  const auto opts = torch::TensorOptions().dtype(torch::kFloat32);
  const auto he = [&](int64_t out, int64_t in) {
    return at::normal(0.0, std::sqrt(2.0 / static_cast<double>(in * 9)), {out, in, 3, 3}, gen, opts);
  };
  w1_ = he(channels, 3);
  b1_ = at::normal(0.0, 0.1, {channels}, gen, opts);
  w2_ = he(channels, channels);
  b2_ = at::normal(0.0, 0.1, {channels}, gen, opts);
}

torch::Tensor RandomConvExtractor::features(const torch::Tensor& images) const {
  check_image_batch(images, "random_conv extractor input");
  const auto dtype = images.scalar_type();
  auto x = torch::tanh(F::conv2d(images, w1_.to(dtype), F::Conv2dFuncOptions().bias(b1_.to(dtype)).padding(1)));
  x = torch::tanh(F::conv2d(x, w2_.to(dtype), F::Conv2dFuncOptions().bias(b2_.to(dtype)).stride(2).padding(1)));
  x = F::adaptive_avg_pool2d(x, F::AdaptiveAvgPool2dFuncOptions({8, 8})).flatten(1);
  return x / std::sqrt(static_cast<double>(x.size(1)));
}

struct TorchScriptExtractor::Impl {
  mutable torch::jit::script::Module module;
};

TorchScriptExtractor::TorchScriptExtractor(const std::string& path, int input_size)
    : path_(path), input_size_(input_size), impl_(std::make_shared<Impl>()) {
  try {
    impl_->module = torch::jit::load(path);
  } catch (const c10::Error& e) {
    throw DependencyError("cannot load TorchScript extractor '" + path + "': " + e.what_without_backtrace());
  }
  impl_->module.eval();
  for (auto p : impl_->module.parameters()) p.requires_grad_(false);
}

torch::Tensor TorchScriptExtractor::features(const torch::Tensor& images) const {
  check_image_batch(images, "torchscript extractor input");
  auto x = (images + 1.0) * 0.5;
  if (input_size_ > 0 && (x.size(2) != input_size_ || x.size(3) != input_size_)) {
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{input_size_, input_size_})
                              .mode(torch::kBilinear)
                              .align_corners(false));
  }
  try {
    auto out = impl_->module.forward({x});
    torch::Tensor t;
    if (out.isTensor()) {
      t = out.toTensor();
    } else if (out.isTuple() && !out.toTupleRef().elements().empty()) {
      t = out.toTupleRef().elements()[0].toTensor();
    } else {
      throw DependencyError("TorchScript extractor '" + path_ + "' did not return a tensor");
    }
    return t.flatten(1);
  } catch (const c10::Error& e) {
    throw DependencyError("TorchScript extractor '" + path_ + "' failed: " + e.what_without_backtrace());
  }
}

std::vector<torch::Tensor> TorchScriptExtractor::parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& p : impl_->module.parameters()) out.push_back(p);
  return out;
}

ExtractorRegistry& ExtractorRegistry::instance() {
  static ExtractorRegistry registry;
  return registry;
}

ExtractorRegistry::ExtractorRegistry() {
  factories_["none"] = [](const std::string&) -> ExtractorPtr { return std::make_shared<NoneExtractor>(); };
  factories_["flatten"] = [](const std::string&) -> ExtractorPtr {
    return std::make_shared<FlattenExtractor>();
  };
  factories_["random_conv"] = [](const std::string& arg) -> ExtractorPtr {
    const uint64_t seed = arg.empty() ? 0 : std::stoull(arg);
    return std::make_shared<RandomConvExtractor>(seed);
  };
  factories_["torchscript"] = [](const std::string& arg) -> ExtractorPtr {
    std::string path = arg;
    int size = 224;
    if (auto at = arg.rfind('@'); at != std::string::npos) {
      path = arg.substr(0, at);
      size = std::stoi(arg.substr(at + 1));
    }
    if (path.empty()) throw DependencyError("torchscript extractor needs a path");
    return std::make_shared<TorchScriptExtractor>(path, size);
  };
}

void ExtractorRegistry::add(const std::string& kind, Factory factory) {
  factories_[kind] = std::move(factory);
}

ExtractorPtr ExtractorRegistry::create(const std::string& spec) const {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
  auto it = factories_.find(kind);
  if (it == factories_.end()) throw DependencyError("unknown feature extractor '" + spec + "'");
  try {
    return it->second(arg);
  } catch (const DependencyError&) {
    throw;
  } catch (const std::exception& e) {
    throw DependencyError("feature extractor '" + spec + "': " + e.what());
  }
}

std::vector<std::string> ExtractorRegistry::kinds() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : factories_) out.push_back(k);
  return out;
}

}  // namespace exsr
