#include <doctest.h>

#include <fstream>

#include <nlohmann/json.hpp>

#include "configs.hpp"
#include "exsr/checkpoint.hpp"
#include "exsr/errors.hpp"
#include "exsr/trainer.hpp"
#include "toy_faces.hpp"

using namespace exsr;
namespace fs = std::filesystem;

namespace {

Batch random_batch(const ModelConfig& cfg, uint64_t seed) {
  torch::manual_seed(seed);
  const auto& a = cfg.arch;
  Batch b;
  b.hr = torch::rand({cfg.train.batch_size, 3, a.hr_height(), a.hr_width()}) * 2 - 1;
  b.lr = torch::rand({cfg.train.batch_size, 3, a.lr_height, a.lr_width}) * 2 - 1;
  b.exemplars = torch::rand({cfg.train.batch_size, a.k, 3, a.hr_height(), a.hr_width()}) * 2 - 1;
  return b;
}

std::vector<torch::Tensor> snapshot(const std::vector<torch::Tensor>& params) {
  std::vector<torch::Tensor> out;
  for (const auto& p : params) out.push_back(p.detach().clone());
  return out;
}

bool unchanged(const std::vector<torch::Tensor>& before, const std::vector<torch::Tensor>& after) {
  for (size_t i = 0; i < before.size(); ++i) {
    if (!torch::equal(before[i], after[i])) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("optimizer groups carry the configured learning rates") {
    auto state = make_train_state(testing::tiny_config());
    CHECK(state.generator_optimizer.lr("main") == 0.003);
    CHECK(state.generator_optimizer.lr("wnn") == 0.0001);
    CHECK(state.generator_optimizer.lr("gs") == 0.003);
    CHECK(state.critic_optimizer.lr("critic") == 0.003);
    size_t total = 0;
    for (const auto& g : state.generator_optimizer.groups()) total += g.params.size();
    CHECK(total == state.generator->parameters().size());
  }

  TEST_CASE("a step reports finite losses and moves the parameters") {
    auto cfg = testing::tiny_config();
    auto state = make_train_state(cfg);
    auto before = snapshot(state.generator->parameters());
    auto critic_before = snapshot(state.critic->parameters());
    auto report = train_step(state, random_batch(cfg, 1), Extractors::from_config(cfg.loss));
    CHECK(report.finite());
    CHECK(report.step == 1);
    CHECK(state.step == 1);
    CHECK(report.l_c > 0);
    CHECK(report.l_gp >= 0);
    CHECK_FALSE(unchanged(before, snapshot(state.generator->parameters())));
    CHECK_FALSE(unchanged(critic_before, snapshot(state.critic->parameters())));
  }

  TEST_CASE("zeroing the G_S objective freezes G_S and only G_S") {
    auto cfg = testing::tiny_config();
    auto state = make_train_state(cfg);
    auto gs = snapshot(state.generator->group_parameters(ParamGroup::kSmallGenerator));
    auto main = snapshot(state.generator->group_parameters(ParamGroup::kMain));
    train_step(state, random_batch(cfg, 2), Extractors::from_config(cfg.loss), {.main_loss_scale = 1, .gs_loss_scale = 0});
    CHECK(unchanged(gs, snapshot(state.generator->group_parameters(ParamGroup::kSmallGenerator))));
    CHECK_FALSE(unchanged(main, snapshot(state.generator->group_parameters(ParamGroup::kMain))));
  }

  TEST_CASE("zeroing the main objective changes only G_S") {
    auto cfg = testing::tiny_config();
    cfg.train.use_critic = false;
    auto state = make_train_state(cfg);
    auto gs = snapshot(state.generator->group_parameters(ParamGroup::kSmallGenerator));
    auto main = snapshot(state.generator->group_parameters(ParamGroup::kMain));
    auto wnn = snapshot(state.generator->group_parameters(ParamGroup::kWnn));
    train_step(state, random_batch(cfg, 3), Extractors::from_config(cfg.loss), {.main_loss_scale = 0, .gs_loss_scale = 1});
    CHECK(unchanged(main, snapshot(state.generator->group_parameters(ParamGroup::kMain))));
    CHECK(unchanged(wnn, snapshot(state.generator->group_parameters(ParamGroup::kWnn))));
    CHECK_FALSE(unchanged(gs, snapshot(state.generator->group_parameters(ParamGroup::kSmallGenerator))));
  }

  TEST_CASE("critic-free steps leave the critic alone") {
    auto cfg = testing::tiny_config();
    cfg.train.use_critic = false;
    auto state = make_train_state(cfg);
    auto critic = snapshot(state.critic->parameters());
    auto report = train_step(state, random_batch(cfg, 4), Extractors::from_config(cfg.loss));
    CHECK(report.l_adv == 0.0);
    CHECK(report.l_critic == 0.0);
    CHECK(unchanged(critic, snapshot(state.critic->parameters())));
  }

  TEST_CASE("non-finite losses stop training with a diagnostic snapshot") {
    testing::TempDir dir("nan");
    auto cfg = testing::tiny_config();
    cfg.train.out_dir = dir.path().string();
    auto state = make_train_state(cfg);
    auto batch = random_batch(cfg, 5);
    batch.hr[0][0][0][0] = std::nan("");
    try {
      train_step(state, batch, Extractors::from_config(cfg.loss));
      FAIL("expected NonFiniteLossError");
    } catch (const NonFiniteLossError& e) {
      CHECK_FALSE(e.snapshot_path().empty());
      CHECK(fs::exists(e.snapshot_path()));
    }
  }

  TEST_CASE("linear decay reaches zero at the last step") {
    OptimConfig o;
    CHECK(lr_multiplier(o, 50, 100) == 1.0);
    o.linear_decay = true;
    CHECK(lr_multiplier(o, 0, 100) == 1.0);
    CHECK(lr_multiplier(o, 50, 100) == doctest::Approx(0.5));
    CHECK(lr_multiplier(o, 100, 100) == 0.0);
  }

  TEST_CASE("resuming from a checkpoint reproduces an uninterrupted run") {
    testing::TempDir data("resume_data");
    testing::write_toy_faces(data.path(), {.identities = 3, .images_per_identity = 4, .size = 16});
    auto index = ingest(data.path(), DatasetKind::kCelebA, 4);
    ImageSource source(16, 16);
    auto cfg = testing::tiny_config();
    cfg.train.steps = 4;
    cfg.train.checkpoint_every = 2;

    testing::TempDir straight_dir("straight");
    cfg.train.out_dir = straight_dir.path().string();
    auto straight = make_train_state(cfg);
    auto result = train(straight, index, source, Extractors::from_config(cfg.loss));
    CHECK(result.checkpoints.size() == 2);
    CHECK(fs::exists(straight_dir / "latest.exsr"));
    CHECK(fs::exists(straight_dir / "train_log.jsonl"));

    auto resumed = load_train_state(straight_dir / "ckpt_2.exsr", &cfg);
    CHECK(resumed.step == 2);
    testing::TempDir resumed_dir("resumed");
    resumed.config.train.out_dir = resumed_dir.path().string();
    train(resumed, index, source, Extractors::from_config(cfg.loss));
    CHECK(resumed.step == 4);
    CHECK(parameter_digest(*resumed.generator) == parameter_digest(*straight.generator));
    CHECK(parameter_digest(*resumed.critic) == parameter_digest(*straight.critic));

    std::ifstream log(straight_dir / "train_log.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) {
      auto j = nlohmann::json::parse(line);
      CHECK(j.contains("l_c"));
      CHECK(j.at("step") == ++lines);
    }
    CHECK(lines == 4);
  }

  TEST_CASE("a checkpoint refuses a different architecture") {
    testing::TempDir dir("arch");
    auto cfg = testing::tiny_config();
    auto state = make_train_state(cfg);
    save_train_state(dir / "s.exsr", state);
    auto other = cfg;
    other.arch.encoder_channels = 8;
    CHECK_THROWS_AS(load_train_state(dir / "s.exsr", &other), ConfigError);
    save_generator(dir / "g.exsr", state.generator);
    CHECK_THROWS_AS(load_train_state(dir / "g.exsr"), ConfigError);
    // A generator can be pulled out of a training checkpoint.
    CHECK(parameter_digest(*load_generator(dir / "s.exsr")) == parameter_digest(*state.generator));
  }
}
