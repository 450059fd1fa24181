#include "exsr/resample.hpp"

#include <algorithm>
#include <cmath>

#include "exsr/errors.hpp"

namespace exsr {

double cubic_kernel(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
  return 0.0;
}

torch::Tensor bicubic_weights(int64_t in_size, int64_t out_size) {
  if (in_size < 1 || out_size < 1) throw ShapeError("bicubic: sizes must be positive");
  auto weights = torch::zeros({out_size, in_size}, torch::kFloat64);
  auto acc = weights.accessor<double, 2>();
  const double scale = static_cast<double>(in_size) / static_cast<double>(out_size);
  const double filter_scale = std::max(scale, 1.0);
  const double support = 2.0 * filter_scale;
  for (int64_t i = 0; i < out_size; ++i) {
    const double center = (static_cast<double>(i) + 0.5) * scale;
    // Truncation toward zero matches the usual integer window bounds.
    const int64_t lo = std::max<int64_t>(static_cast<int64_t>(center - support + 0.5), 0);
    const int64_t hi = std::min<int64_t>(static_cast<int64_t>(center + support + 0.5), in_size);
    double total = 0.0;
    for (int64_t j = lo; j < hi; ++j) {
      const double w = cubic_kernel((static_cast<double>(j) - center + 0.5) / filter_scale);
      acc[i][j] = w;
      total += w;
    }
    if (total != 0.0) {
      for (int64_t j = lo; j < hi; ++j) acc[i][j] /= total;
    }
  }
  return weights;
}

torch::Tensor resize_bicubic(const torch::Tensor& images, int64_t out_h, int64_t out_w) {
  if (!images.defined() || images.dim() < 2) throw ShapeError("bicubic: need at least a 2-d tensor");
  const int64_t in_h = images.size(-2);
  const int64_t in_w = images.size(-1);
  if (in_h == out_h && in_w == out_w) return images.clone();
  const auto dtype = images.scalar_type();
  auto x = images.to(torch::kFloat64);
  if (in_w != out_w) x = torch::matmul(x, bicubic_weights(in_w, out_w).t());
  if (in_h != out_h) x = torch::matmul(bicubic_weights(in_h, out_h), x);
  return x.to(dtype).contiguous();
}

torch::Tensor downsample(const torch::Tensor& images, int factor) {
  if (!images.defined() || images.dim() < 2) throw ShapeError("downsample: need at least a 2-d tensor");
  if (factor < 1) throw ShapeError("downsample: factor must be >= 1");
  const int64_t h = images.size(-2);
  const int64_t w = images.size(-1);
  if (h % factor != 0 || w % factor != 0) {
    throw ShapeError("downsample: factor " + std::to_string(factor) + " does not divide " +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  return resize_bicubic(images, h / factor, w / factor);
}

torch::Tensor upsample_bicubic(const torch::Tensor& images, int factor) {
  if (!images.defined() || images.dim() < 2) throw ShapeError("upsample: need at least a 2-d tensor");
  if (factor < 1) throw ShapeError("upsample: factor must be >= 1");
  return resize_bicubic(images, images.size(-2) * factor, images.size(-1) * factor);
}

}  // namespace exsr
