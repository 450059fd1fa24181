#pragma once

// Separable bicubic resampling with a Keys kernel (a = -0.5). When shrinking,
// the kernel is stretched by the scale factor so it also acts as the
// anti-aliasing filter. Sample positions use pixel-center alignment and taps
// falling outside the image are dropped and the remaining weights
// renormalized. Rows are resampled first, then columns, in double precision.
// The output is a pure function of the input, so repeated runs are bit-exact.

#include <cstdint>

#include <torch/torch.h>

namespace exsr {

/// Keys cubic convolution kernel with a = -0.5.
double cubic_kernel(double x);

/// out x in interpolation matrix, rows summing to one.
torch::Tensor bicubic_weights(int64_t in_size, int64_t out_size);

/// Resamples the last two dimensions of `images` to out_h x out_w.
torch::Tensor resize_bicubic(const torch::Tensor& images, int64_t out_h, int64_t out_w);

/// Shrinks the last two dimensions by `factor`. Throws ShapeError when the
/// factor does not divide both dimensions. factor == 1 returns a copy.
torch::Tensor downsample(const torch::Tensor& images, int factor);

/// Enlarges the last two dimensions by `factor`.
torch::Tensor upsample_bicubic(const torch::Tensor& images, int factor);

}  // namespace exsr
