#include "toy_faces.hpp"

#include <atomic>
#include <random>

#include <opencv2/imgproc.hpp>

#include "exsr/dataset.hpp"
#include "exsr/image_io.hpp"

namespace exsr::testing {

namespace fs = std::filesystem;

namespace {

cv::Scalar color(std::mt19937_64& rng, int lo, int hi) {
  std::uniform_int_distribution<int> d(lo, hi);
  return cv::Scalar(d(rng), d(rng), d(rng));
}

}  // namespace

torch::Tensor render_toy_face(int identity, int variant, int size, uint64_t seed) {
  // Identity traits come from one stream, per-image jitter from another.
  std::mt19937_64 traits(derive_seed(seed, static_cast<uint64_t>(identity) * 7919 + 1));
  std::mt19937_64 jitter(derive_seed(seed ^ 0x5bd1e995ULL, static_cast<uint64_t>(identity) * 104729 + variant));

  const double s = size / 64.0;
  const cv::Scalar background = color(traits, 20, 235);
  const cv::Scalar skin = color(traits, 90, 240);
  const cv::Scalar hair = color(traits, 0, 160);
  const cv::Scalar eyes = color(traits, 0, 255);
  const cv::Scalar mouth = color(traits, 60, 220);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double face_w = 17 + 6 * u(traits);
  const double face_h = 21 + 6 * u(traits);
  const double eye_dx = 6 + 4 * u(traits);
  const double eye_r = 2 + 2 * u(traits);
  const double mouth_w = 4 + 6 * u(traits);
  const double hair_h = 6 + 8 * u(traits);

  std::uniform_real_distribution<double> shift(-2.0, 2.0);
  const double cx = 32 + shift(jitter);
  const double cy = 33 + shift(jitter);
  const double zoom = 0.95 + 0.1 * u(jitter);
  const double gain = 0.9 + 0.2 * u(jitter);

  cv::Mat img(size, size, CV_8UC3, background);
  const auto P = [&](double x, double y) {
    return cv::Point(static_cast<int>(std::lround((32 + (x - 32) * zoom) * s)),
                     static_cast<int>(std::lround((32 + (y - 32) * zoom) * s)));
  };
  const auto L = [&](double v) { return static_cast<int>(std::lround(v * zoom * s)); };
  cv::ellipse(img, P(cx, cy), cv::Size(L(face_w), L(face_h)), 0, 0, 360, skin, cv::FILLED, cv::LINE_AA);
  cv::ellipse(img, P(cx, cy - face_h + hair_h / 2), cv::Size(L(face_w + 1), L(hair_h)), 0, 180, 360, hair,
              cv::FILLED, cv::LINE_AA);
  cv::circle(img, P(cx - eye_dx, cy - 4), L(eye_r), eyes, cv::FILLED, cv::LINE_AA);
  cv::circle(img, P(cx + eye_dx, cy - 4), L(eye_r), eyes, cv::FILLED, cv::LINE_AA);
  cv::ellipse(img, P(cx, cy + 10), cv::Size(L(mouth_w), std::max(1, L(2))), 0, 0, 180, mouth, cv::FILLED,
              cv::LINE_AA);
  img.convertTo(img, CV_8UC3, gain, 0);

  std::vector<uint8_t> pixels(img.data, img.data + img.total() * 3);
  return from_rgb8(pixels, size, size);
}

void write_toy_faces(const fs::path& root, const ToyFaceOptions& o) {
  for (int i = 0; i < o.identities; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "id_%02d", i);
    fs::create_directories(root / id);
    for (int v = 0; v < o.images_per_identity; ++v) {
      char name[32];
      std::snprintf(name, sizeof(name), "img_%02d.png", v);
      save_image(root / id / name, render_toy_face(i, v, o.size, o.seed));
    }
  }
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  std::random_device rd;
  path_ = fs::temp_directory_path() /
          ("exsr_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

}  // namespace exsr::testing
