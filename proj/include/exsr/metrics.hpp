#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "exsr/config.hpp"
#include "exsr/dataset.hpp"
#include "exsr/fusion.hpp"
#include "exsr/generator.hpp"

namespace exsr {

constexpr double kPsnrCapDb = 99.0;
constexpr int64_t kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

/// Per-image PSNR in dB of images in [0, 1], shaped C x H x W or N x C x H x W.
/// 10 log10(1 / MSE), capped at kPsnrCapDb once MSE < 1e-10.
std::vector<double> psnr(const torch::Tensor& a, const torch::Tensor& b);

/// Per-image SSIM of images in [0, 1]: 11 x 11 Gaussian window (sigma 1.5),
/// population statistics, C1 = 0.01^2, C2 = 0.03^2, averaged over the
/// positions where the window fits and then over channels. Images smaller
/// than the window raise ShapeError.
std::vector<double> ssim(const torch::Tensor& a, const torch::Tensor& b);

/// Rounds [0, 1] values to the nearest 8-bit level, as writing a PNG would.
torch::Tensor quantize8(const torch::Tensor& unit);

struct MetricReport {
  std::string method;
  std::string color_space = "rgb";
  std::vector<std::string> image_ids;
  std::vector<double> ssim;
  std::vector<double> psnr_db;
  double ssim_mean = 0, ssim_std = 0;
  double psnr_mean = 0, psnr_std = 0;
  nlohmann::json config = nlohmann::json::object();

  void add(const std::string& id, double ssim_value, double psnr_value);
  /// Recomputes the aggregates (population standard deviation).
  void finalize();
  size_t size() const { return ssim.size(); }
};

void to_json(nlohmann::json& j, const MetricReport& r);

/// CSV with one row per image followed by "mean" and "std" rows.
void write_metric_csv(const std::filesystem::path& path, const MetricReport& report);

/// Scores bicubic upsampling of the downsampled targets of `records`.
/// Factor 1 compares every image with itself.
MetricReport bicubic_baseline(const std::vector<SampleRecord>& records, const ImageSource& source, int scale);

/// Scores a generator on `records` (targets and their listed exemplars).
MetricReport evaluate_model(Generator& generator, const std::vector<SampleRecord>& records,
                            const ImageSource& source, int batch_size = 8);

struct AblationSpec {
  ModelConfig base;
  std::vector<int> ks{0, 1, 2, 3, 4, 5};
  std::vector<FusionMode> fusions{FusionMode::kAverage, FusionMode::kPWAve};
  /// Cell checkpoints live at <checkpoint_dir>/k<K>_<fusion>.exsr.
  std::filesystem::path checkpoint_dir;
  /// When positive, missing cells are trained for this many steps first.
  int64_t train_steps = 0;
  int max_eval_images = 64;
  uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const AblationSpec& s);
void from_json(const nlohmann::json& j, AblationSpec& s);

struct AblationCell {
  int k = 0;
  FusionMode fusion = FusionMode::kPWAve;
  bool present = false;
  std::string note;  // why a cell is absent, or where it came from
  std::filesystem::path checkpoint;
  std::optional<MetricReport> report;
};

struct AblationTable {
  std::vector<AblationCell> cells;

  void write_csv(const std::filesystem::path& path) const;
  /// Chart-ready series: PSNR and SSIM means per fusion mode against K, with
  /// null for absent cells and a flag telling whether each series rises with K.
  nlohmann::json chart() const;
};

std::filesystem::path ablation_cell_path(const AblationSpec& spec, int k, FusionMode fusion);

/// Evaluates (and optionally trains) every cell of the grid. A cell that can
/// be neither loaded nor trained is marked absent and the run continues.
AblationTable run_ablation(const AblationSpec& spec, const IdentityIndex& train_index,
                           const IdentityIndex& test_index, const ImageSource& source);

/// Jet colormap of values in [0, 1]: returns 3 x ... RGB in [0, 1].
torch::Tensor jet_colormap(const torch::Tensor& values);

/// One overlay per exemplar: weights (K x 1 x h x w, or 1 x K x 1 x h x w)
/// upsampled by nearest neighbour to the exemplar size, colored with jet and
/// alpha-blended at 0.5 over the exemplar (K x 3 x H x W in [-1, 1]).
/// Overlays are returned in [-1, 1]. K mismatch raises ShapeError.
std::vector<torch::Tensor> render_weight_heatmap(const torch::Tensor& weights, const torch::Tensor& exemplars);

}  // namespace exsr
