#include "exsr/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

#include "exsr/checkpoint.hpp"
#include "exsr/errors.hpp"
#include "exsr/image_io.hpp"
#include "exsr/log.hpp"
#include "exsr/resample.hpp"
#include "exsr/trainer.hpp"

namespace exsr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

torch::Tensor as_batch(const torch::Tensor& t) {
  if (t.dim() == 3) return t.unsqueeze(0);
  if (t.dim() == 4) return t;
  throw ShapeError("metric inputs must be C x H x W or N x C x H x W");
}

void check_pair(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) {
    throw ShapeError("metric inputs differ in shape: " + c10::str(a.sizes()) + " vs " + c10::str(b.sizes()));
  }
}

torch::Tensor gaussian_window() {
  auto x = torch::arange(kSsimWindow, torch::kFloat64) - static_cast<double>(kSsimWindow / 2);
  auto g = torch::exp(-(x * x) / (2.0 * kSsimSigma * kSsimSigma));
  g = g / g.sum();
  return g;
}

// Separable valid-region filtering of N*C single-channel planes.
torch::Tensor filter_valid(const torch::Tensor& planes, const torch::Tensor& g) {
  namespace F = torch::nn::functional;
  auto out = F::conv2d(planes, g.view({1, 1, 1, kSsimWindow}));
  return F::conv2d(out, g.view({1, 1, kSsimWindow, 1}));
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v, double mean) {
  double s = 0;
  for (double x : v) s += (x - mean) * (x - mean);
  return v.empty() ? 0.0 : std::sqrt(s / static_cast<double>(v.size()));
}

torch::Tensor to_scored(const torch::Tensor& signed_images) {
  return quantize8(to_unit_range(signed_images).clamp(0.0, 1.0));
}

}  // namespace

std::vector<double> psnr(const torch::Tensor& a, const torch::Tensor& b) {
  check_pair(a, b);
  auto x = as_batch(a).to(torch::kFloat64);
  auto y = as_batch(b).to(torch::kFloat64);
  auto mse = (x - y).pow(2).flatten(1).mean(1);
  std::vector<double> out;
  for (int64_t i = 0; i < mse.size(0); ++i) {
    const double m = mse[i].item<double>();
    out.push_back(m < 1e-10 ? kPsnrCapDb : std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / m)));
  }
  return out;
}

std::vector<double> ssim(const torch::Tensor& a, const torch::Tensor& b) {
  check_pair(a, b);
  auto x = as_batch(a).to(torch::kFloat64);
  auto y = as_batch(b).to(torch::kFloat64);
  const int64_t n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  if (h < kSsimWindow || w < kSsimWindow) {
    throw ShapeError("SSIM needs images of at least " + std::to_string(kSsimWindow) + " x " +
                     std::to_string(kSsimWindow) + " pixels, got " + std::to_string(h) + " x " + std::to_string(w));
  }
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const auto g = gaussian_window();
  auto px = x.reshape({n * c, 1, h, w});
  auto py = y.reshape({n * c, 1, h, w});
  auto mx = filter_valid(px, g);
  auto my = filter_valid(py, g);
  auto vx = filter_valid(px * px, g) - mx * mx;
  auto vy = filter_valid(py * py, g) - my * my;
  auto cxy = filter_valid(px * py, g) - mx * my;
  auto map = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
  auto per_image = map.reshape({n, c, -1}).mean(2).mean(1);
  std::vector<double> out(per_image.data_ptr<double>(), per_image.data_ptr<double>() + n);
  return out;
}

torch::Tensor quantize8(const torch::Tensor& unit) { return torch::round(unit * 255.0) / 255.0; }

void MetricReport::add(const std::string& id, double ssim_value, double psnr_value) {
  image_ids.push_back(id);
  ssim.push_back(ssim_value);
  psnr_db.push_back(psnr_value);
}

void MetricReport::finalize() {
  ssim_mean = mean_of(ssim);
  ssim_std = std_of(ssim, ssim_mean);
  psnr_mean = mean_of(psnr_db);
  psnr_std = std_of(psnr_db, psnr_mean);
}

void to_json(json& j, const MetricReport& r) {
  j = json{{"method", r.method},
           {"color_space", r.color_space},
           {"count", r.size()},
           {"ssim_mean", r.ssim_mean},
           {"ssim_std", r.ssim_std},
           {"psnr_mean", r.psnr_mean},
           {"psnr_std", r.psnr_std},
           {"images", json::array()},
           {"config", r.config}};
  for (size_t i = 0; i < r.size(); ++i) {
    j["images"].push_back({{"id", r.image_ids[i]}, {"ssim", r.ssim[i]}, {"psnr_db", r.psnr_db[i]}});
  }
}

void write_metric_csv(const fs::path& path, const MetricReport& report) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(10);
  out << "# method=" << report.method << " color_space=" << report.color_space << '\n';
  out << "image,ssim,psnr_db\n";
  for (size_t i = 0; i < report.size(); ++i) {
    out << report.image_ids[i] << ',' << report.ssim[i] << ',' << report.psnr_db[i] << '\n';
  }
  out << "mean," << report.ssim_mean << ',' << report.psnr_mean << '\n';
  out << "std," << report.ssim_std << ',' << report.psnr_std << '\n';
}

MetricReport bicubic_baseline(const std::vector<SampleRecord>& records, const ImageSource& source, int scale) {
  torch::NoGradGuard no_grad;
  MetricReport report;
  report.method = "bicubic_x" + std::to_string(scale);
  report.config = {{"scale", scale}, {"hr_height", source.height()}, {"hr_width", source.width()}};
  for (const auto& rec : records) {
    auto hr = source.load(rec.target_path);
    auto lr = quantize8(to_unit_range(downsample(hr, scale)).clamp(0.0, 1.0));
    auto up = quantize8(resize_bicubic(lr, source.height(), source.width()).clamp(0.0, 1.0));
    auto truth = to_scored(hr);
    report.add(rec.target_path, ssim(up, truth).front(), psnr(up, truth).front());
  }
  report.finalize();
  return report;
}

MetricReport evaluate_model(Generator& generator, const std::vector<SampleRecord>& records,
                            const ImageSource& source, int batch_size) {
  torch::NoGradGuard no_grad;
  generator->eval();
  const auto& cfg = generator->config();
  MetricReport report;
  report.method = "model_k" + std::to_string(cfg.arch.k) + "_" + to_string(cfg.arch.fusion);
  report.config = cfg;
  const size_t step = static_cast<size_t>(std::max(1, batch_size));
  for (size_t start = 0; start < records.size(); start += step) {
    std::vector<SampleRecord> chunk(records.begin() + static_cast<std::ptrdiff_t>(start),
                                    records.begin() + static_cast<std::ptrdiff_t>(std::min(records.size(), start + step)));
    for (const auto& rec : chunk) {
      if (static_cast<int>(rec.exemplar_paths.size()) != cfg.arch.k) {
        throw ConfigError("record for " + rec.target_path + " lists " + std::to_string(rec.exemplar_paths.size()) +
                          " exemplars but the model uses K=" + std::to_string(cfg.arch.k));
      }
    }
    Batch batch = load_batch(chunk, source, cfg.arch);
    auto sr = to_scored(super_resolve(generator, batch.lr, batch.exemplars).sr);
    auto truth = to_scored(batch.hr);
    const auto s = ssim(sr, truth);
    const auto p = psnr(sr, truth);
    for (size_t i = 0; i < chunk.size(); ++i) report.add(chunk[i].target_path, s[i], p[i]);
  }
  report.finalize();
  return report;
}

void to_json(json& j, const AblationSpec& s) {
  json fusions = json::array();
  for (auto f : s.fusions) fusions.push_back(to_string(f));
  j = json{{"base", s.base},
           {"ks", s.ks},
           {"fusions", fusions},
           {"checkpoint_dir", s.checkpoint_dir.string()},
           {"train_steps", s.train_steps},
           {"max_eval_images", s.max_eval_images},
           {"seed", s.seed}};
}

void from_json(const json& j, AblationSpec& s) {
  if (j.contains("base")) s.base = j.at("base").get<ModelConfig>();
  if (j.contains("ks")) s.ks = j.at("ks").get<std::vector<int>>();
  if (j.contains("fusions")) {
    s.fusions.clear();
    for (const auto& f : j.at("fusions")) s.fusions.push_back(fusion_mode_from_string(f.get<std::string>()));
  }
  if (j.contains("checkpoint_dir")) s.checkpoint_dir = j.at("checkpoint_dir").get<std::string>();
  s.train_steps = j.value("train_steps", s.train_steps);
  s.max_eval_images = j.value("max_eval_images", s.max_eval_images);
  s.seed = j.value("seed", s.seed);
}

fs::path ablation_cell_path(const AblationSpec& spec, int k, FusionMode fusion) {
  return spec.checkpoint_dir / ("k" + std::to_string(k) + "_" + to_string(fusion) + ".exsr");
}

void AblationTable::write_csv(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(10);
  out << "k,fusion,status,count,ssim_mean,ssim_std,psnr_mean,psnr_std,checkpoint,note\n";
  for (const auto& c : cells) {
    out << c.k << ',' << to_string(c.fusion) << ',' << (c.present ? "ok" : "absent") << ',';
    if (c.report) {
      out << c.report->size() << ',' << c.report->ssim_mean << ',' << c.report->ssim_std << ','
          << c.report->psnr_mean << ',' << c.report->psnr_std;
    } else {
      out << ",,,,";
    }
    std::string note = c.note;
    for (auto& ch : note) {
      if (ch == ',' || ch == '\n') ch = ';';
    }
    out << ',' << c.checkpoint.string() << ',' << note << '\n';
  }
}

json AblationTable::chart() const {
  json series = json::object();
  std::vector<int> ks;
  for (const auto& c : cells) {
    if (std::find(ks.begin(), ks.end(), c.k) == ks.end()) ks.push_back(c.k);
  }
  std::sort(ks.begin(), ks.end());
  for (const auto mode : {FusionMode::kAverage, FusionMode::kPWAve}) {
    json psnr_values = json::array(), ssim_values = json::array();
    bool any = false, rising = true;
    std::optional<double> prev;
    for (int k : ks) {
      auto it = std::find_if(cells.begin(), cells.end(),
                             [&](const AblationCell& c) { return c.k == k && c.fusion == mode; });
      if (it == cells.end() || !it->report) {
        psnr_values.push_back(nullptr);
        ssim_values.push_back(nullptr);
        continue;
      }
      any = true;
      psnr_values.push_back(it->report->psnr_mean);
      ssim_values.push_back(it->report->ssim_mean);
      if (prev && it->report->psnr_mean < *prev) rising = false;
      prev = it->report->psnr_mean;
    }
    if (!any) continue;
    series[to_string(mode)] = {{"psnr_mean", psnr_values}, {"ssim_mean", ssim_values}, {"psnr_rises_with_k", rising}};
  }
  return json{{"x_label", "K"}, {"x", ks}, {"series", series}};
}

AblationTable run_ablation(const AblationSpec& spec, const IdentityIndex& train_index,
                           const IdentityIndex& test_index, const ImageSource& source) {
  AblationTable table;
  for (int k : spec.ks) {
    for (FusionMode fusion : spec.fusions) {
      AblationCell cell;
      cell.k = k;
      cell.fusion = fusion;
      cell.checkpoint = ablation_cell_path(spec, k, fusion);
      try {
        ModelConfig cfg = spec.base;
        cfg.arch.k = k;
        cfg.arch.fusion = fusion;
        cfg.validate();
        Generator gen{nullptr};
        if (fs::exists(cell.checkpoint)) {
          gen = load_generator(cell.checkpoint, &cfg);
          cell.note = "loaded";
        } else if (spec.train_steps > 0) {
          cfg.train.steps = spec.train_steps;
          cfg.train.out_dir = (spec.checkpoint_dir / ("k" + std::to_string(k) + "_" + to_string(fusion) + "_run")).string();
          TrainState state = make_train_state(cfg);
          train(state, train_index, source, Extractors::from_config(cfg.loss));
          save_generator(cell.checkpoint, state.generator);
          gen = state.generator;
          cell.note = "trained " + std::to_string(spec.train_steps) + " steps";
        } else {
          cell.note = "no checkpoint and no training budget";
          table.cells.push_back(std::move(cell));
          continue;
        }
        auto records = build_manifest(test_index, SplitTag::kTest, k, derive_seed(spec.seed, 7));
        if (records.empty()) throw DataError("no test identity has " + std::to_string(k + 1) + " images");
        if (spec.max_eval_images > 0 && static_cast<int>(records.size()) > spec.max_eval_images) {
          records.resize(static_cast<size_t>(spec.max_eval_images));
        }
        cell.report = evaluate_model(gen, records, source);
        cell.present = true;
      } catch (const std::exception& e) {
        cell.present = false;
        cell.report.reset();
        cell.note = e.what();
        log::warn("ablation cell k=" + std::to_string(k) + " " + to_string(fusion) + " is absent: " + e.what());
      }
      table.cells.push_back(std::move(cell));
    }
  }
  return table;
}

torch::Tensor jet_colormap(const torch::Tensor& values) {
  auto v = values.to(torch::kFloat64).clamp(0.0, 1.0);
  auto r = (1.5 - (4.0 * v - 3.0).abs()).clamp(0.0, 1.0);
  auto g = (1.5 - (4.0 * v - 2.0).abs()).clamp(0.0, 1.0);
  auto b = (1.5 - (4.0 * v - 1.0).abs()).clamp(0.0, 1.0);
  return torch::stack({r, g, b}).to(values.scalar_type() == torch::kFloat64 ? torch::kFloat64 : torch::kFloat32);
}

std::vector<torch::Tensor> render_weight_heatmap(const torch::Tensor& weights, const torch::Tensor& exemplars) {
  torch::NoGradGuard no_grad;
  torch::Tensor w = weights.detach();
  if (w.dim() == 5) {
    if (w.size(0) != 1) throw ShapeError("heatmaps are rendered for one sample at a time");
    w = w[0];
  }
  if (w.dim() != 4 || w.size(1) != 1) {
    throw ShapeError("weights must be K x 1 x h x w or 1 x K x 1 x h x w, got " + c10::str(weights.sizes()));
  }
  if (exemplars.dim() != 4 || exemplars.size(1) != 3) {
    throw ShapeError("exemplars must be K x 3 x H x W, got " + c10::str(exemplars.sizes()));
  }
  if (w.size(0) != exemplars.size(0)) {
    throw ShapeError("weights cover K=" + std::to_string(w.size(0)) + " exemplars but " +
                     std::to_string(exemplars.size(0)) + " were given");
  }
  const int64_t h = exemplars.size(2), wd = exemplars.size(3);
  auto up = torch::nn::functional::interpolate(
      w.to(torch::kFloat32),
      torch::nn::functional::InterpolateFuncOptions().size(std::vector<int64_t>{h, wd}).mode(torch::kNearest));
  std::vector<torch::Tensor> out;
  for (int64_t k = 0; k < w.size(0); ++k) {
    auto color = jet_colormap(up[k][0]);
    auto base = to_unit_range(exemplars[k].to(torch::kFloat32)).clamp(0.0, 1.0);
    out.push_back(from_unit_range(0.5 * base + 0.5 * color));
  }
  return out;
}

}  // namespace exsr
