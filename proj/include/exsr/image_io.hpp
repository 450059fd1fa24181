#pragma once

// Conversions between encoded images (PNG/JPEG, 8-bit RGB) and the [-1, 1]
// float tensors used everywhere else. Tensors are 3 x H x W, RGB order.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace exsr {

/// Throws IoError when the file is missing or undecodable.
torch::Tensor load_image(const std::filesystem::path& path);
/// Throws IoError when the bytes are not a decodable image.
torch::Tensor decode_image(std::span<const uint8_t> bytes);

std::vector<uint8_t> encode_png(const torch::Tensor& image);
void save_image(const std::filesystem::path& path, const torch::Tensor& image);

/// 3 x H x W in [-1, 1] -> H x W x 3 bytes, rounded and clamped.
std::vector<uint8_t> to_rgb8(const torch::Tensor& image);
/// H x W x 3 bytes -> 3 x H x W in [-1, 1].
torch::Tensor from_rgb8(std::span<const uint8_t> pixels, int64_t height, int64_t width);

inline torch::Tensor to_unit_range(const torch::Tensor& x) { return (x + 1.0) * 0.5; }
inline torch::Tensor from_unit_range(const torch::Tensor& x) { return x * 2.0 - 1.0; }

/// Takes the centered square of side min(H, W) and resizes it to
/// height x width with the bicubic resampler.
torch::Tensor center_crop_resize(const torch::Tensor& image, int64_t height, int64_t width);

/// Variance of the 3x3 Laplacian of the 8-bit luma channel.
double laplacian_variance(const torch::Tensor& image);

}  // namespace exsr
