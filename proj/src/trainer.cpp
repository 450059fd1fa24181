#include "exsr/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include <ATen/CPUGeneratorImpl.h>
#include <nlohmann/json.hpp>

#include "exsr/checkpoint.hpp"
#include "exsr/errors.hpp"
#include "exsr/log.hpp"
#include "exsr/resample.hpp"

namespace exsr {

namespace fs = std::filesystem;
using nlohmann::json;

Extractors Extractors::from_config(const LossConfig& loss) {
  return Extractors{make_extractor(loss.phi_p), make_extractor(loss.phi_id)};
}

namespace {

Adam make_generator_optimizer(const Generator& gen, const OptimConfig& o) {
  return Adam({{"main", o.lr_main, gen->group_parameters(ParamGroup::kMain)},
               {"wnn", o.lr_wnn, gen->group_parameters(ParamGroup::kWnn)},
               {"gs", o.lr_main, gen->group_parameters(ParamGroup::kSmallGenerator)}},
              o.adam_beta1, o.adam_beta2, o.adam_eps);
}

Adam make_critic_optimizer(const Critic& critic, const OptimConfig& o) {
  return Adam({{"critic", o.lr_critic, critic->parameters()}}, o.adam_beta1, o.adam_beta2, o.adam_eps);
}

void apply_lr_schedule(TrainState& s) {
  const double f = lr_multiplier(s.config.optim, s.step, s.config.train.steps);
  const auto& o = s.config.optim;
  s.generator_optimizer.set_lr("main", o.lr_main * f);
  s.generator_optimizer.set_lr("wnn", o.lr_wnn * f);
  s.generator_optimizer.set_lr("gs", o.lr_main * f);
  s.critic_optimizer.set_lr("critic", o.lr_critic * f);
}

void assign_grads(const std::vector<torch::Tensor>& params, const torch::autograd::variable_list& grads) {
  for (size_t i = 0; i < params.size(); ++i) {
    auto p = params[i];
    p.mutable_grad() = grads[i].defined() ? grads[i] : torch::zeros_like(p);
  }
}

std::vector<torch::Tensor> concat(std::vector<torch::Tensor> a, const std::vector<torch::Tensor>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

Checkpoint to_checkpoint(const TrainState& s) {
  Checkpoint ckpt;
  ckpt.config = s.config;
  ckpt.meta = {{"kind", "train_state"},
               {"step", s.step},
               {"generator_optimizer_steps", s.generator_optimizer.step_count()},
               {"critic_optimizer_steps", s.critic_optimizer.step_count()}};
  export_generator(s.generator, ckpt);
  for (const auto& p : s.critic->named_parameters(true)) ckpt.tensors["critic/" + p.key()] = p.value();
  s.generator_optimizer.export_state("optim/generator/", ckpt.tensors);
  s.critic_optimizer.export_state("optim/critic/", ckpt.tensors);
  ckpt.tensors["rng/torch"] = s.rng.get_state();
  return ckpt;
}

}  // namespace

TrainState make_train_state(const ModelConfig& config) {
  config.validate();
  const uint64_t seed = config.train.seed;
  Generator gen = build_generator(config, derive_seed(seed, 1));
  Critic critic = build_critic(config, derive_seed(seed, 2));
  TrainState s{config,
               0,
               gen,
               critic,
               make_generator_optimizer(gen, config.optim),
               make_critic_optimizer(critic, config.optim),
               at::make_generator<at::CPUGeneratorImpl>(derive_seed(seed, 3))};
  return s;
}

double lr_multiplier(const OptimConfig& optim, int64_t step, int64_t total_steps) {
  if (!optim.linear_decay || total_steps <= 0) return 1.0;
  return std::max(0.0, 1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

LossReport train_step(TrainState& s, const Batch& batch, const Extractors& extractors,
                      const StepOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  const ModelConfig& cfg = s.config;
  apply_lr_schedule(s);
  s.generator->train();
  s.critic->train();
  CriticFn critic_fn = as_critic_fn(s.critic);

  LossReport report;
  report.step = s.step + 1;

  if (cfg.train.use_critic) {
    torch::Tensor sr_fixed;
    {
      torch::NoGradGuard no_grad;
      sr_fixed = super_resolve(s.generator, batch.lr, batch.exemplars).sr;
    }
    for (int i = 0; i < cfg.train.n_critic; ++i) {
      auto eps = sample_interpolation(batch.hr.size(0), s.rng, batch.hr.options());
      auto terms = critic_loss(critic_fn, sr_fixed, batch.hr, cfg.loss.lambda_gp, eps);
      s.critic_optimizer.zero_grad();
      terms.total.backward();
      s.critic_optimizer.step();
      report.l_critic = terms.total.item<double>();
      report.l_gp = terms.gp.item<double>();
      report.l_wgap = terms.wasserstein_gap.item<double>();
    }
    s.critic_optimizer.zero_grad();
  }

  auto out = super_resolve(s.generator, batch.lr, batch.exemplars);
  auto hr_down = downsample(batch.hr, cfg.arch.scale_factor / 2);
  auto l_c = content_loss(out.sr, batch.hr);
  auto l_p = perceptual_loss(out.sr, batch.hr, *extractors.phi_p, *extractors.phi_id);
  auto l_adv = cfg.train.use_critic ? generator_adv_loss(critic_fn, out.sr) : torch::zeros({}, out.sr.options());
  auto l_c_s = content_loss_s(out.lr_2x, hr_down);
  auto l_p_s = perceptual_loss(out.lr_2x, hr_down, *extractors.phi_p, *extractors.phi_id);
  auto totals = total_loss(l_c, l_p, l_adv, l_c_s, l_p_s, cfg.loss);

  report.l_c = l_c.item<double>();
  report.l_p = l_p.item<double>();
  report.l_adv = l_adv.item<double>();
  report.l_c_s = l_c_s.item<double>();
  report.l_p_s = l_p_s.item<double>();
  report.total_main = totals.main.item<double>();
  report.total_gs = totals.gs.item<double>();
  if (!report.finite()) {
    std::string snapshot;
    if (!cfg.train.out_dir.empty()) {
      snapshot = (fs::path(cfg.train.out_dir) / ("diagnostic_step" + std::to_string(report.step) + ".exsr")).string();
      try {
        save_train_state(snapshot, s);
      } catch (const std::exception& e) {
        log::error(std::string("could not write diagnostic snapshot: ") + e.what());
        snapshot.clear();
      }
    }
    throw NonFiniteLossError("non-finite loss at step " + std::to_string(report.step) + ": " +
                                 json(report).dump(),
                             snapshot);
  }

  const auto main_params = concat(s.generator->group_parameters(ParamGroup::kMain),
                                  s.generator->group_parameters(ParamGroup::kWnn));
  const auto gs_params = s.generator->group_parameters(ParamGroup::kSmallGenerator);
  auto grads_main = torch::autograd::grad({totals.main * options.main_loss_scale}, main_params, {},
                                          /*retain_graph=*/true, /*create_graph=*/false, /*allow_unused=*/true);
  auto grads_gs = torch::autograd::grad({totals.gs * options.gs_loss_scale}, gs_params, {},
                                        /*retain_graph=*/false, /*create_graph=*/false, /*allow_unused=*/true);
  s.generator_optimizer.zero_grad();
  assign_grads(main_params, grads_main);
  assign_grads(gs_params, grads_gs);
  s.generator_optimizer.step();
  s.generator_optimizer.zero_grad();

  ++s.step;
  report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

void save_train_state(const fs::path& path, const TrainState& state) {
  write_checkpoint(path, to_checkpoint(state));
}

TrainState load_train_state(const fs::path& path, const ModelConfig* expected) {
  Checkpoint ckpt = read_checkpoint(path);
  if (ckpt.meta.value("kind", "") != "train_state") {
    throw ConfigError(path.string() + " is not a training checkpoint");
  }
  ModelConfig config = ckpt.config;
  if (expected != nullptr) {
    require_same_architecture(expected->arch, ckpt.config.arch);
    config = *expected;
  }
  TrainState s = make_train_state(config);
  import_generator(ckpt, s.generator);
  {
    torch::NoGradGuard no_grad;
    for (auto& p : s.critic->named_parameters(true)) {
      auto it = ckpt.tensors.find("critic/" + p.key());
      if (it == ckpt.tensors.end() || it->second.sizes() != p.value().sizes()) {
        throw ConfigError("checkpoint critic tensor '" + p.key() + "' is missing or mis-shaped");
      }
      p.value().copy_(it->second);
    }
  }
  s.generator_optimizer.import_state("optim/generator/", ckpt.tensors,
                                     ckpt.meta.at("generator_optimizer_steps").get<int64_t>());
  s.critic_optimizer.import_state("optim/critic/", ckpt.tensors, ckpt.meta.at("critic_optimizer_steps").get<int64_t>());
  auto rng = ckpt.tensors.find("rng/torch");
  if (rng == ckpt.tensors.end()) throw ConfigError("checkpoint lacks RNG state");
  s.rng.set_state(rng->second);
  s.step = ckpt.meta.at("step").get<int64_t>();
  return s;
}

TrainResult train(TrainState& state, const IdentityIndex& train_index, const ImageSource& source,
                  const Extractors& extractors, const TrainCallbacks& callbacks) {
  const ModelConfig& cfg = state.config;
  const fs::path out_dir = cfg.train.out_dir;
  TrainResult result;
  std::ofstream log;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    log.open(out_dir / "train_log.jsonl", std::ios::app);
    if (!log) throw IoError("cannot open training log in " + out_dir.string());
  }

  const auto checkpoint = [&]() {
    if (out_dir.empty()) return;
    const fs::path path = out_dir / ("ckpt_" + std::to_string(state.step) + ".exsr");
    save_train_state(path, state);
    save_train_state(out_dir / "latest.exsr", state);
    result.checkpoints.push_back(path);
    if (callbacks.on_checkpoint) callbacks.on_checkpoint(state.step, path);
  };

  while (state.step < cfg.train.steps) {
    const Batch batch = sample_batch(train_index, source, cfg, derive_seed(cfg.train.seed, 1000 + state.step));
    LossReport report = train_step(state, batch, extractors);
    if (log.is_open() && cfg.train.log_every > 0 && report.step % cfg.train.log_every == 0) {
      log << json(report).dump() << '\n';
      log.flush();
    }
    if (callbacks.on_step) callbacks.on_step(report);
    result.last = report;
    if (cfg.train.checkpoint_every > 0 && state.step % cfg.train.checkpoint_every == 0) checkpoint();
  }
  if (result.checkpoints.empty() || result.checkpoints.back() != out_dir / ("ckpt_" + std::to_string(state.step) + ".exsr")) {
    checkpoint();
  }
  return result;
}

}  // namespace exsr
