#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "exsr/config.hpp"
#include "exsr/critic.hpp"
#include "exsr/dataset.hpp"
#include "exsr/extractors.hpp"
#include "exsr/generator.hpp"
#include "exsr/losses.hpp"
#include "exsr/optim.hpp"

namespace exsr {

struct Extractors {
  ExtractorPtr phi_p;
  ExtractorPtr phi_id;

  static Extractors from_config(const LossConfig& loss);
};

/// Everything a run needs to continue bit-for-bit after a restart.
struct TrainState {
  ModelConfig config;
  int64_t step = 0;
  Generator generator{nullptr};
  Critic critic{nullptr};
  Adam generator_optimizer;  // groups: "main", "wnn", "gs"
  Adam critic_optimizer;     // group: "critic"
  at::Generator rng;         // interpolation coefficients of the gradient penalty
};

/// Fresh state: parameters and RNG derived from config.train.seed.
TrainState make_train_state(const ModelConfig& config);

struct StepOptions {
  /// Multipliers on the two brackets of the total loss before differentiation.
  double main_loss_scale = 1.0;
  double gs_loss_scale = 1.0;
};

/// One critic update per n_critic (skipped when use_critic is false), then one
/// generator update: total_main drives every parameter except G_S, total_gs
/// drives G_S only. Non-finite losses raise NonFiniteLossError after writing
/// a diagnostic snapshot into config.train.out_dir.
LossReport train_step(TrainState& state, const Batch& batch, const Extractors& extractors,
                      const StepOptions& options = {});

/// Learning-rate multiplier for the given step (1, or linear decay to 0).
double lr_multiplier(const OptimConfig& optim, int64_t step, int64_t total_steps);

void save_train_state(const std::filesystem::path& path, const TrainState& state);
/// When `expected` is given its architecture must match the checkpoint; its
/// non-architecture settings (steps, output dir, ...) replace the stored ones.
TrainState load_train_state(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

struct TrainCallbacks {
  std::function<void(const LossReport&)> on_step;
  std::function<void(int64_t step, const std::filesystem::path&)> on_checkpoint;
};

struct TrainResult {
  std::vector<std::filesystem::path> checkpoints;
  std::optional<LossReport> last;
};

/// Runs until state.step reaches config.train.steps. Batch for step s is drawn
/// with seed derive_seed(seed, s), so a resumed run sees the same batches.
/// Writes "<out_dir>/train_log.jsonl", periodic "ckpt_<step>.exsr" and
/// "latest.exsr".
TrainResult train(TrainState& state, const IdentityIndex& train_index, const ImageSource& source,
                  const Extractors& extractors, const TrainCallbacks& callbacks = {});

}  // namespace exsr
