#include <doctest.h>

#include "configs.hpp"
#include "exsr/checkpoint.hpp"
#include "exsr/errors.hpp"
#include "exsr/generator.hpp"

using namespace exsr;

namespace {

ModelConfig narrow(int lr, int m1, int k) {
  auto c = testing::tiny_config(k, lr, m1);
  return c;
}

}  // namespace

TEST_SUITE("generator") {
  TEST_CASE("output and weight shapes across resolutions") {
    struct Case {
      int lr, m1, hr;
    };
    for (const auto& c : {Case{16, 3, 128}, Case{8, 4, 128}, Case{32, 3, 256}, Case{16, 4, 256}}) {
      CAPTURE(c.lr);
      CAPTURE(c.m1);
      auto cfg = narrow(c.lr, c.m1, 2);
      auto gen = build_generator(cfg, 0);
      torch::NoGradGuard g;
      auto out = super_resolve(gen, torch::randn({1, 3, c.lr, c.lr}), torch::randn({1, 2, 3, c.hr, c.hr}));
      CHECK(out.sr.sizes() == torch::IntArrayRef({1, 3, c.hr, c.hr}));
      CHECK(out.lr_2x.sizes() == torch::IntArrayRef({1, 3, 2 * c.lr, 2 * c.lr}));
      CHECK(out.weights_lr.data.sizes() == torch::IntArrayRef({1, 2, 1, c.lr, c.lr}));
      CHECK(out.weights_2x.data.sizes() == torch::IntArrayRef({1, 2, 1, 2 * c.lr, 2 * c.lr}));
    }
  }

  TEST_CASE("three exemplars at 16 x 16 give a 1 x 3 x 1 x 16 x 16 weight map") {
    auto gen = build_generator(narrow(16, 3, 3), 0);
    torch::NoGradGuard g;
    auto out = super_resolve(gen, torch::randn({1, 3, 16, 16}), torch::randn({1, 3, 3, 128, 128}));
    CHECK(out.weights_lr.data.sizes() == torch::IntArrayRef({1, 3, 1, 16, 16}));
  }

  TEST_CASE("outputs lie in [-1, 1]") {
    auto gen = build_generator(narrow(4, 2, 2), 3);
    torch::NoGradGuard g;
    auto out = super_resolve(gen, torch::randn({2, 3, 4, 4}) * 5, torch::randn({2, 2, 3, 16, 16}));
    CHECK(out.sr.abs().max().item<double>() <= 1.0);
    CHECK(out.lr_2x.abs().max().item<double>() <= 1.0);
  }

  TEST_CASE("K = 0 builds no exemplar branch and ignores an empty exemplar set") {
    auto cfg = narrow(4, 2, 0);
    auto gen = build_generator(cfg, 0);
    CHECK_FALSE(gen->uses_exemplars());
    CHECK(gen->group_parameters(ParamGroup::kWnn).empty());
    for (const auto& p : gen->named_parameters()) CHECK_FALSE(p.key().starts_with("pwave."));
    torch::NoGradGuard g;
    auto out = super_resolve(gen, torch::randn({1, 3, 4, 4}), torch::empty({1, 0, 3, 16, 16}));
    CHECK(out.sr.sizes() == torch::IntArrayRef({1, 3, 16, 16}));
    CHECK_FALSE(out.weights_lr.defined());
    auto undefined = super_resolve(gen, torch::randn({1, 3, 4, 4}), torch::Tensor());
    CHECK(undefined.sr.sizes() == torch::IntArrayRef({1, 3, 16, 16}));
    CHECK_THROWS_AS(super_resolve(gen, torch::randn({1, 3, 4, 4}), torch::randn({1, 2, 3, 16, 16})), ConfigError);
  }

  TEST_CASE("input validation") {
    auto gen = build_generator(narrow(4, 2, 3), 0);
    torch::NoGradGuard g;
    CHECK_THROWS_AS(super_resolve(gen, torch::randn({1, 3, 4, 4}), torch::randn({1, 2, 3, 16, 16})), ConfigError);
    CHECK_THROWS_AS(super_resolve(gen, torch::randn({1, 3, 5, 4}), torch::randn({1, 3, 3, 16, 16})), ShapeError);
    CHECK_THROWS_AS(super_resolve(gen, torch::randn({1, 3, 4, 4}), torch::randn({1, 3, 3, 8, 8})), ShapeError);
    CHECK_THROWS_AS(super_resolve(gen, torch::randn({2, 3, 4, 4}), torch::randn({1, 3, 3, 16, 16})), ShapeError);
    CHECK_THROWS_AS(super_resolve(gen, torch::randn({1, 4, 4, 4}), torch::randn({1, 3, 3, 16, 16})), ShapeError);
  }

  TEST_CASE("scale factor must equal two to the number of upsample blocks") {
    auto cfg = narrow(4, 2, 1);
    cfg.arch.scale_factor = 8;
    CHECK_THROWS_AS(build_generator(cfg, 0), ConfigError);
  }

  TEST_CASE("parameter groups partition the parameters") {
    auto gen = build_generator(narrow(4, 2, 2), 0);
    const auto main = gen->group_parameters(ParamGroup::kMain);
    const auto wnn = gen->group_parameters(ParamGroup::kWnn);
    const auto gs = gen->group_parameters(ParamGroup::kSmallGenerator);
    CHECK(main.size() + wnn.size() + gs.size() == gen->parameters().size());
    CHECK(wnn.size() == 8);  // two networks, two convs each, weight and bias
    CHECK(gs.size() == 6);
    CHECK(param_group_of("gs.head.weight") == ParamGroup::kSmallGenerator);
    CHECK(param_group_of("pwave.wnn_lr.conv1.bias") == ParamGroup::kWnn);
    CHECK(param_group_of("pwave.encoder.stem.weight") == ParamGroup::kMain);
    CHECK(param_group_of("tail.weight") == ParamGroup::kMain);
  }

  TEST_CASE("initialization is a pure function of the seed") {
    auto cfg = narrow(4, 2, 2);
    auto a = build_generator(cfg, 42);
    auto b = build_generator(cfg, 42);
    auto c = build_generator(cfg, 43);
    CHECK(parameter_digest(*a) == parameter_digest(*b));
    CHECK(parameter_digest(*a) != parameter_digest(*c));
  }

  TEST_CASE("trunk width halves per stage down to the floor") {
    ArchConfig a;
    a.trunk_channels = 64;
    a.min_trunk_channels = 16;
    CHECK(a.trunk_channels_at(0) == 64);
    CHECK(a.trunk_channels_at(1) == 32);
    CHECK(a.trunk_channels_at(2) == 16);
    CHECK(a.trunk_channels_at(4) == 16);
    a.min_trunk_channels = 128;
    CHECK(a.trunk_channels_at(3) == 64);
  }
}
