#include "exsr/image_io.hpp"

#include <algorithm>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "exsr/errors.hpp"
#include "exsr/resample.hpp"

namespace exsr {

namespace {

torch::Tensor from_bgr_mat(const cv::Mat& bgr) {
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  if (!rgb.isContinuous()) rgb = rgb.clone();
  return from_rgb8(std::span<const uint8_t>(rgb.data, rgb.total() * 3), rgb.rows, rgb.cols);
}

cv::Mat to_bgr_mat(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("expected a 3 x H x W image");
  auto pixels = to_rgb8(image);
  cv::Mat rgb(static_cast<int>(image.size(1)), static_cast<int>(image.size(2)), CV_8UC3, pixels.data());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

}  // namespace

std::vector<uint8_t> to_rgb8(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("expected a 3 x H x W image");
  auto q = ((image.detach().to(torch::kFloat64) + 1.0) * 127.5).round().clamp(0, 255);
  q = q.to(torch::kUInt8).permute({1, 2, 0}).contiguous();
  const auto* p = q.data_ptr<uint8_t>();
  return {p, p + q.numel()};
}

torch::Tensor from_rgb8(std::span<const uint8_t> pixels, int64_t height, int64_t width) {
  if (static_cast<int64_t>(pixels.size()) != height * width * 3) throw ShapeError("pixel buffer size mismatch");
  auto t = torch::from_blob(const_cast<uint8_t*>(pixels.data()), {height, width, 3}, torch::kUInt8);
  return t.permute({2, 0, 1}).to(torch::kFloat32).div(127.5).sub(1.0).contiguous();
}

torch::Tensor load_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot decode image " + path.string());
  return from_bgr_mat(bgr);
}

torch::Tensor decode_image(std::span<const uint8_t> bytes) {
  if (bytes.empty()) throw IoError("empty image payload");
  cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<uint8_t*>(bytes.data()));
  cv::Mat bgr;
  try {
    bgr = cv::imdecode(buf, cv::IMREAD_COLOR);
  } catch (const cv::Exception&) {
    bgr.release();
  }
  if (bgr.empty()) throw IoError("image payload is not a decodable PNG/JPEG");
  return from_bgr_mat(bgr);
}

std::vector<uint8_t> encode_png(const torch::Tensor& image) {
  std::vector<uint8_t> out;
  if (!cv::imencode(".png", to_bgr_mat(image), out)) throw IoError("PNG encoding failed");
  return out;
}

void save_image(const std::filesystem::path& path, const torch::Tensor& image) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), to_bgr_mat(image))) throw IoError("cannot write image " + path.string());
}

torch::Tensor center_crop_resize(const torch::Tensor& image, int64_t height, int64_t width) {
  if (image.dim() != 3) throw ShapeError("expected a C x H x W image");
  const int64_t h = image.size(1), w = image.size(2);
  const int64_t side = std::min(h, w);
  auto crop = image.narrow(1, (h - side) / 2, side).narrow(2, (w - side) / 2, side);
  return resize_bicubic(crop, height, width);
}

double laplacian_variance(const torch::Tensor& image) {
  cv::Mat gray;
  cv::cvtColor(to_bgr_mat(image), gray, cv::COLOR_BGR2GRAY);
  cv::Mat lap;
  cv::Laplacian(gray, lap, CV_64F);
  cv::Scalar mean, stddev;
  cv::meanStdDev(lap, mean, stddev);
  return stddev[0] * stddev[0];
}

}  // namespace exsr
