// exsr: train, evaluate and serve exemplar-guided face super-resolution models.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "exsr/checkpoint.hpp"
#include "exsr/config.hpp"
#include "exsr/dataset.hpp"
#include "exsr/errors.hpp"
#include "exsr/image_io.hpp"
#include "exsr/log.hpp"
#include "exsr/metrics.hpp"
#include "exsr/resample.hpp"
#include "exsr/service.hpp"
#include "exsr/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace exsr;

namespace {

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::pair<IdentityIndex, IdentityIndex> load_splits(const ModelConfig& cfg) {
  if (cfg.data.root_dir.empty()) throw ConfigError("data.root_dir is not set");
  auto index = ingest(cfg.data.root_dir, cfg.data.dataset_kind, cfg.data.min_images);
  return make_splits(index, cfg.train.seed, cfg.data.test_fraction);
}

void print_report(const MetricReport& r) {
  std::cout << r.method << ": n=" << r.size() << " ssim=" << r.ssim_mean << " (std " << r.ssim_std
            << ") psnr=" << r.psnr_mean << " dB (std " << r.psnr_std << ") color_space=" << r.color_space << '\n';
}

HttpServer* g_server = nullptr;

void handle_signal(int) {
  if (g_server != nullptr) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exemplar-guided face super-resolution"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "debug, info, warn, error or off");

  // prepare
  auto* prepare = app.add_subcommand("prepare", "Index a dataset, split it by identity and write manifests");
  std::string prep_root, prep_kind = "celeba", prep_out;
  int prep_k = 3, prep_min_images = 0;
  uint64_t prep_seed = 0;
  double prep_test_fraction = 0.1;
  prepare->add_option("--root", prep_root, "Dataset root (<root>/<identity>/<image>)")->required();
  prepare->add_option("--kind", prep_kind, "celeba or webface");
  prepare->add_option("--out", prep_out, "Output directory for manifests")->required();
  prepare->add_option("--k", prep_k, "Exemplars per record");
  prepare->add_option("--min-images", prep_min_images, "Minimum images per identity (default by kind)");
  prepare->add_option("--seed", prep_seed);
  prepare->add_option("--test-fraction", prep_test_fraction);

  // config
  auto* config_cmd = app.add_subcommand("config", "Write a preset model config");
  std::string cfg_preset = "celeba", cfg_out = "config.json", cfg_root;
  int cfg_scale = 8;
  config_cmd->add_option("--preset", cfg_preset, "celeba or webface");
  config_cmd->add_option("--scale", cfg_scale, "8 or 16");
  config_cmd->add_option("--root", cfg_root, "Dataset root to record in data.root_dir");
  config_cmd->add_option("--out", cfg_out);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  std::string train_config, train_resume, train_out;
  bool train_no_critic = false;
  std::optional<uint64_t> train_seed;
  std::optional<int64_t> train_steps;
  train_cmd->add_option("--config", train_config, "Model config JSON")->required();
  train_cmd->add_option("--resume", train_resume, "Training checkpoint to continue from");
  train_cmd->add_flag("--no-critic", train_no_critic, "Disable the adversarial term");
  train_cmd->add_option("--seed", train_seed);
  train_cmd->add_option("--steps", train_steps);
  train_cmd->add_option("--out", train_out, "Run directory (overrides train.out_dir)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a manifest");
  std::string eval_ckpt, eval_manifest, eval_out;
  int eval_scale = 0;
  eval_cmd->add_option("--ckpt", eval_ckpt)->required();
  eval_cmd->add_option("--manifest", eval_manifest)->required();
  eval_cmd->add_option("--scale", eval_scale, "Expected scale factor (checked against the checkpoint)");
  eval_cmd->add_option("--out", eval_out, "Write <out>.csv and <out>.json");

  // bicubic
  auto* bicubic_cmd = app.add_subcommand("bicubic", "Score bicubic upsampling on a manifest");
  std::string bic_manifest, bic_out;
  int bic_scale = 8, bic_hr = 128;
  bicubic_cmd->add_option("--manifest", bic_manifest)->required();
  bicubic_cmd->add_option("--scale", bic_scale);
  bicubic_cmd->add_option("--hr-size", bic_hr);
  bicubic_cmd->add_option("--out", bic_out, "Write <out>.csv and <out>.json");

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "Run the K x fusion ablation grid");
  std::string ablate_grid, ablate_out = "ablation";
  ablate_cmd->add_option("--grid", ablate_grid, "Grid JSON")->required();
  ablate_cmd->add_option("--out", ablate_out, "Output prefix for <out>.csv and <out>_chart.json");

  // heatmap
  auto* heatmap_cmd = app.add_subcommand("heatmap", "Render per-exemplar weight overlays for one manifest record");
  std::string heat_ckpt, heat_manifest, heat_out = "heatmaps";
  int heat_sample = 0;
  heatmap_cmd->add_option("--ckpt", heat_ckpt)->required();
  heatmap_cmd->add_option("--manifest", heat_manifest)->required();
  heatmap_cmd->add_option("--sample", heat_sample, "Record index in the manifest");
  heatmap_cmd->add_option("--out", heat_out, "Output directory");

  // hallucinate
  auto* hal_cmd = app.add_subcommand("hallucinate", "Super-resolve one image with the given exemplars");
  std::string hal_ckpt, hal_lr, hal_out = "sr.png", hal_heatmaps;
  std::vector<std::string> hal_exemplars;
  bool hal_is_hr = false;
  hal_cmd->add_option("--ckpt", hal_ckpt)->required();
  hal_cmd->add_option("--lr", hal_lr, "Input image")->required();
  hal_cmd->add_option("--exemplars", hal_exemplars, "Exemplar images");
  hal_cmd->add_flag("--hr", hal_is_hr, "Input is a high-resolution image to be downsampled first");
  hal_cmd->add_option("--out", hal_out);
  hal_cmd->add_option("--heatmaps", hal_heatmaps, "Directory for weight overlays");

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  ServiceConfig serve_cfg;
  std::string serve_ckpt, serve_config, serve_gallery, serve_static;
  serve_cmd->add_option("--ckpt", serve_ckpt)->required();
  serve_cmd->add_option("--config", serve_config, "Config the checkpoint must match");
  serve_cmd->add_option("--gallery", serve_gallery, "Gallery directory (<dir>/<identity>/<image>)");
  serve_cmd->add_option("--static", serve_static, "Directory of static assets served at /");
  serve_cmd->add_option("--host", serve_cfg.host);
  serve_cmd->add_option("--port", serve_cfg.port);

  CLI11_PARSE(app, argc, argv);

  try {
    log::set_level(log::level_from_string(log_level));

    if (*config_cmd) {
      const auto kind = dataset_kind_from_string(cfg_preset);
      ModelConfig cfg = kind == DatasetKind::kWebFace ? ModelConfig::webface(cfg_scale) : ModelConfig::celeba(cfg_scale);
      cfg.data.root_dir = cfg_root;
      cfg.validate();
      save_config(cfg_out, cfg);
      std::cout << cfg_out << "\n";
      return 0;
    }

    if (*prepare) {
      const auto kind = dataset_kind_from_string(prep_kind);
      const int min_images = prep_min_images > 0 ? prep_min_images : (kind == DatasetKind::kWebFace ? 10 : 5);
      auto index = ingest(prep_root, kind, min_images);
      auto [train_idx, test_idx] = make_splits(index, prep_seed, prep_test_fraction);
      fs::create_directories(prep_out);
      auto train_records = build_manifest(train_idx, SplitTag::kTrain, prep_k, derive_seed(prep_seed, 11));
      auto test_records = build_manifest(test_idx, SplitTag::kTest, prep_k, derive_seed(prep_seed, 12));
      write_manifest(fs::path(prep_out) / "train.tsv", train_records);
      write_manifest(fs::path(prep_out) / "test.tsv", test_records);
      write_json(fs::path(prep_out) / "summary.json",
                 {{"kind", to_string(kind)},
                  {"identities", index.identities.size()},
                  {"images", index.image_count()},
                  {"train_identities", train_idx.identities.size()},
                  {"test_identities", test_idx.identities.size()},
                  {"train_records", train_records.size()},
                  {"test_records", test_records.size()},
                  {"k", prep_k},
                  {"hr_size", default_hr_size(kind)}});
      std::cout << "indexed " << index.image_count() << " images of " << index.identities.size() << " identities; "
                << train_records.size() << " train and " << test_records.size() << " test records\n";
    } else if (*train_cmd) {
      ModelConfig cfg = load_config(train_config);
      if (train_no_critic) cfg.train.use_critic = false;
      if (train_seed) cfg.train.seed = *train_seed;
      if (train_steps) cfg.train.steps = *train_steps;
      if (!train_out.empty()) cfg.train.out_dir = train_out;
      cfg.validate();
      auto [train_idx, test_idx] = load_splits(cfg);
      ImageSource source(cfg.arch.hr_height(), cfg.arch.hr_width());
      TrainState state = train_resume.empty() ? make_train_state(cfg) : load_train_state(train_resume, &cfg);
      fs::create_directories(cfg.train.out_dir);
      save_config(fs::path(cfg.train.out_dir) / "config.json", cfg);
      TrainCallbacks cb;
      cb.on_step = [&](const LossReport& r) {
        if (cfg.train.log_every > 0 && r.step % cfg.train.log_every == 0) {
          log::info("step " + std::to_string(r.step) + " l_c=" + std::to_string(r.l_c) + " l_p=" + std::to_string(r.l_p) +
                    " l_adv=" + std::to_string(r.l_adv) + " l_c_s=" + std::to_string(r.l_c_s));
        }
      };
      cb.on_checkpoint = [](int64_t step, const fs::path& p) { log::info("checkpoint " + p.string()); };
      auto result = train(state, train_idx, source, Extractors::from_config(cfg.loss), cb);
      save_generator(fs::path(cfg.train.out_dir) / "generator.exsr", state.generator);
      std::cout << "trained to step " << state.step << "; " << result.checkpoints.size() << " checkpoints\n";
    } else if (*eval_cmd) {
      Generator gen = load_generator(eval_ckpt);
      if (eval_scale != 0 && eval_scale != gen->config().arch.scale_factor) {
        throw ConfigError("checkpoint upsamples by " + std::to_string(gen->config().arch.scale_factor) +
                          ", not " + std::to_string(eval_scale));
      }
      const auto& arch = gen->config().arch;
      ImageSource source(arch.hr_height(), arch.hr_width());
      auto report = evaluate_model(gen, read_manifest(eval_manifest), source);
      print_report(report);
      if (!eval_out.empty()) {
        write_metric_csv(eval_out + ".csv", report);
        write_json(eval_out + ".json", report);
      }
    } else if (*bicubic_cmd) {
      ImageSource source(bic_hr, bic_hr);
      auto report = bicubic_baseline(read_manifest(bic_manifest), source, bic_scale);
      print_report(report);
      if (!bic_out.empty()) {
        write_metric_csv(bic_out + ".csv", report);
        write_json(bic_out + ".json", report);
      }
    } else if (*ablate_cmd) {
      std::ifstream in(ablate_grid);
      if (!in) throw IoError("cannot read " + ablate_grid);
      AblationSpec spec = json::parse(in, nullptr, true, true).get<AblationSpec>();
      if (spec.checkpoint_dir.empty()) spec.checkpoint_dir = fs::path(ablate_out).parent_path() / "cells";
      auto [train_idx, test_idx] = load_splits(spec.base);
      ImageSource source(spec.base.arch.hr_height(), spec.base.arch.hr_width());
      auto table = run_ablation(spec, train_idx, test_idx, source);
      table.write_csv(ablate_out + ".csv");
      write_json(ablate_out + "_chart.json", table.chart());
      for (const auto& c : table.cells) {
        std::cout << "k=" << c.k << " " << to_string(c.fusion) << ": ";
        if (c.report) {
          std::cout << "psnr=" << c.report->psnr_mean << " ssim=" << c.report->ssim_mean << '\n';
        } else {
          std::cout << "absent (" << c.note << ")\n";
        }
      }
    } else if (*heatmap_cmd) {
      Generator gen = load_generator(heat_ckpt);
      const auto& arch = gen->config().arch;
      if (arch.k == 0) throw ConfigError("a K=0 model has no weight maps");
      auto records = read_manifest(heat_manifest);
      if (heat_sample < 0 || heat_sample >= static_cast<int>(records.size())) {
        throw ConfigError("--sample is outside the manifest (" + std::to_string(records.size()) + " records)");
      }
      ImageSource source(arch.hr_height(), arch.hr_width());
      Batch batch = load_batch({records[static_cast<size_t>(heat_sample)]}, source, arch);
      torch::NoGradGuard no_grad;
      gen->eval();
      auto out = super_resolve(gen, batch.lr, batch.exemplars);
      fs::create_directories(heat_out);
      save_image(fs::path(heat_out) / "sr.png", out.sr[0]);
      save_image(fs::path(heat_out) / "hr.png", batch.hr[0]);
      const auto lr_maps = render_weight_heatmap(out.weights_lr.data, batch.exemplars[0]);
      const auto x2_maps = render_weight_heatmap(out.weights_2x.data, batch.exemplars[0]);
      for (size_t k = 0; k < lr_maps.size(); ++k) {
        save_image(fs::path(heat_out) / ("weights_lr_" + std::to_string(k) + ".png"), lr_maps[k]);
        save_image(fs::path(heat_out) / ("weights_x2_" + std::to_string(k) + ".png"), x2_maps[k]);
      }
      std::cout << "wrote " << 2 * lr_maps.size() << " overlays to " << heat_out << '\n';
    } else if (*hal_cmd) {
      InferenceService service(load_generator(hal_ckpt), Gallery{}, fs::path(hal_ckpt).stem().string());
      const auto read = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw IoError("cannot read " + p);
        return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
      };
      EditRequest req;
      req.input_image = read(hal_lr);
      req.input_is_hr = hal_is_hr;
      req.return_heatmaps = !hal_heatmaps.empty();
      for (const auto& e : hal_exemplars) req.exemplars.push_back({std::nullopt, read(e)});
      auto result = service.edit(req);
      const auto write = [](const fs::path& p, const std::vector<uint8_t>& bytes) {
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        std::ofstream out(p, std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("cannot write " + p.string());
      };
      write(hal_out, result.sr_png);
      for (size_t k = 0; k < result.heatmaps_lr.size(); ++k) {
        write(fs::path(hal_heatmaps) / ("weights_lr_" + std::to_string(k) + ".png"), result.heatmaps_lr[k]);
        write(fs::path(hal_heatmaps) / ("weights_x2_" + std::to_string(k) + ".png"), result.heatmaps_2x[k]);
      }
      std::cout << hal_out << " sha256=" << result.sr_sha256 << '\n';
    } else if (*serve_cmd) {
      serve_cfg.checkpoint = serve_ckpt;
      if (!serve_config.empty()) serve_cfg.config_path = serve_config;
      serve_cfg.gallery_dir = serve_gallery;
      if (!serve_static.empty()) serve_cfg.static_dir = serve_static;
      InferenceService service(serve_cfg);
      HttpServer server(service, serve_cfg.static_dir);
      const int port = server.bind(serve_cfg.host, serve_cfg.port);
      g_server = &server;
      std::signal(SIGINT, handle_signal);
      std::signal(SIGTERM, handle_signal);
      log::info("serving " + service.model_tag() + " on http://" + serve_cfg.host + ":" + std::to_string(port));
      server.listen();
      g_server = nullptr;
    }
  } catch (const NonFiniteLossError& e) {
    std::cerr << "error: " << e.what() << '\n';
    if (!e.snapshot_path().empty()) std::cerr << "diagnostic snapshot: " << e.snapshot_path() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
