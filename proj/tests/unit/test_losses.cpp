#include <doctest.h>

#include <cmath>

#include "configs.hpp"
#include "exsr/critic.hpp"
#include "exsr/errors.hpp"
#include "exsr/extractors.hpp"
#include "exsr/generator.hpp"
#include "exsr/losses.hpp"
#include "exsr/resample.hpp"
#include "oracles.hpp"

using namespace exsr;

namespace {

// Central-difference step near cbrt(machine epsilon): balances truncation
// against roundoff for O(1) parameters.
constexpr double kFdStep = 6e-6;

/// D(x) = <a, x> per sample, with ||a|| = norm.
CriticFn linear_critic(const torch::Tensor& direction, double norm) {
  auto a = direction / direction.norm() * norm;
  return [a](const torch::Tensor& x) { return (x * a).flatten(1).sum(1); };
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("content loss is the mean absolute difference") {
    torch::manual_seed(0);
    auto a = torch::randn({2, 3, 5, 7});
    auto b = torch::randn({2, 3, 5, 7});
    CHECK(content_loss(a, b).item<double>() == doctest::Approx(testing::mean_abs_loop(a, b)).epsilon(1e-6));
    CHECK(content_loss(a, a).item<double>() == 0.0);
    CHECK(content_loss_s(a, b).item<double>() == doctest::Approx(testing::mean_abs_loop(a, b)).epsilon(1e-6));
    CHECK_THROWS_AS(content_loss(a, b.narrow(3, 0, 6)), ShapeError);
  }

  TEST_CASE("perceptual loss is the batch mean of squared feature distances") {
    torch::manual_seed(1);
    auto a = torch::randn({3, 3, 4, 4}, torch::kFloat64);
    auto b = torch::randn({3, 3, 4, 4}, torch::kFloat64);
    FlattenExtractor flat;
    NoneExtractor none;
    double expect = 0;
    for (int i = 0; i < 3; ++i) expect += (a[i] - b[i]).pow(2).sum().item<double>();
    expect /= 3;
    CHECK(perceptual_loss(a, b, flat, none).item<double>() == doctest::Approx(expect).epsilon(1e-12));
    CHECK(perceptual_loss(a, b, flat, flat).item<double>() == doctest::Approx(2 * expect).epsilon(1e-12));
    CHECK(perceptual_loss(a, b, none, none).item<double>() == 0.0);
    CHECK(perceptual_loss(a, a, flat, flat).item<double>() == 0.0);
  }

  TEST_CASE("a failing extractor surfaces as a dependency error") {
    struct Broken final : FeatureExtractor {
      std::string name() const override { return "broken"; }
      torch::Tensor features(const torch::Tensor&) const override { throw std::runtime_error("boom"); }
    } broken;
    NoneExtractor none;
    auto x = torch::zeros({1, 3, 4, 4});
    CHECK_THROWS_AS(perceptual_loss(x, x, broken, none), DependencyError);
  }

  TEST_CASE("gradient penalty of a linear critic is (||a|| - 1)^2") {
    torch::manual_seed(2);
    auto dir = torch::randn({3, 6, 6}, torch::kFloat64);
    auto real = torch::randn({4, 3, 6, 6}, torch::kFloat64);
    auto fake = torch::randn({4, 3, 6, 6}, torch::kFloat64);
    auto eps = torch::rand({4}, torch::kFloat64);
    for (double norm : {0.5, 1.0, 2.0, 3.0}) {
      CAPTURE(norm);
      const double gp = gradient_penalty(linear_critic(dir, norm), real, fake, eps).item<double>();
      CHECK(std::abs(gp - (norm - 1) * (norm - 1)) < 1e-9);
    }
  }

  TEST_CASE("gradient penalty of a constant critic is one") {
    auto bias = torch::tensor({0.7}, torch::kFloat64).requires_grad_(true);
    CriticFn constant = [bias](const torch::Tensor& x) { return bias.expand({x.size(0)}); };
    auto x = torch::randn({3, 3, 4, 4}, torch::kFloat64);
    auto eps = torch::rand({3}, torch::kFloat64);
    CHECK(gradient_penalty(constant, x, x * 2, eps).item<double>() == doctest::Approx(1.0));
    CriticFn detached = [](const torch::Tensor& x) { return torch::full({x.size(0)}, 3.0, torch::kFloat64); };
    CHECK(gradient_penalty(detached, x, x * 2, eps).item<double>() == doctest::Approx(1.0));
  }

  TEST_CASE("gradient penalty keeps a graph to the critic parameters") {
    auto a = (torch::ones({3, 2, 2}, torch::kFloat64) * 0.2).requires_grad_(true);
    CriticFn critic = [a](const torch::Tensor& x) { return (x * a).flatten(1).sum(1); };
    auto x = torch::randn({2, 3, 2, 2}, torch::kFloat64);
    auto gp = gradient_penalty(critic, x, -x, torch::rand({2}, torch::kFloat64));
    gp.backward();
    // d/da (||a|| - 1)^2 = 2 (||a|| - 1) a / ||a||
    const double n = a.detach().norm().item<double>();
    auto expect = 2 * (n - 1) * a.detach() / n;
    CHECK((a.grad() - expect).abs().max().item<double>() < 1e-10);
  }

  TEST_CASE("critic loss is mean D(sr) - mean D(hr) + lambda gp") {
    torch::manual_seed(3);
    auto dir = torch::randn({3, 4, 4}, torch::kFloat64);
    auto critic = linear_critic(dir, 2.0);
    auto sr = torch::randn({5, 3, 4, 4}, torch::kFloat64);
    auto hr = torch::randn({5, 3, 4, 4}, torch::kFloat64);
    auto eps = torch::rand({5}, torch::kFloat64);
    auto terms = critic_loss(critic, sr, hr, 10.0, eps);
    const double gap = critic(sr).mean().item<double>() - critic(hr).mean().item<double>();
    CHECK(terms.wasserstein_gap.item<double>() == doctest::Approx(gap).epsilon(1e-12));
    CHECK(terms.gp.item<double>() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(terms.total.item<double>() == doctest::Approx(gap + 10.0).epsilon(1e-9));
    CHECK(critic_loss(critic, sr, hr, 0.0, eps).total.item<double>() == doctest::Approx(gap).epsilon(1e-12));
    CHECK_THROWS_AS(critic_loss(critic, sr, hr, -1.0, eps), ConfigError);
  }

  TEST_CASE("critic loss never reaches the generator") {
    auto sr = torch::randn({2, 3, 4, 4}, torch::kFloat64).requires_grad_(true);
    auto hr = torch::randn({2, 3, 4, 4}, torch::kFloat64);
    auto a = torch::randn({3, 4, 4}, torch::kFloat64).requires_grad_(true);
    CriticFn critic = [a](const torch::Tensor& x) { return (x * a).flatten(1).sum(1); };
    critic_loss(critic, sr, hr, 10.0, torch::rand({2}, torch::kFloat64)).total.backward();
    CHECK_FALSE(sr.grad().defined());
    CHECK(a.grad().defined());
  }

  TEST_CASE("generator adversarial loss is minus the mean score") {
    auto scores = torch::tensor({1.0, -2.0, 4.5}, torch::kFloat64);
    CriticFn critic = [scores](const torch::Tensor&) { return scores; };
    CHECK(generator_adv_loss(critic, torch::zeros({3, 3, 2, 2})).item<double>() == doctest::Approx(-3.5 / 3));
  }

  TEST_CASE("critics must return one floating-point score per sample") {
    CriticFn ints = [](const torch::Tensor& x) { return torch::zeros({x.size(0)}, torch::kLong); };
    CriticFn wrong = [](const torch::Tensor& x) { return torch::zeros({x.size(0) + 1}); };
    auto x = torch::zeros({2, 3, 2, 2});
    CHECK_THROWS_AS(generator_adv_loss(ints, x), ConfigError);
    CHECK_THROWS_AS(generator_adv_loss(wrong, x), ConfigError);
  }

  TEST_CASE("total loss combines the terms with their coefficients") {
    LossConfig cfg;
    cfg.lambda1 = 2;
    cfg.lambda2 = 0.5;
    cfg.lambda3 = 3;
    auto t = [](double v) { return torch::tensor(v, torch::kFloat64); };
    auto total = total_loss(t(1), t(2), t(4), t(8), t(16), cfg);
    CHECK(total.main.item<double>() == doctest::Approx(1 + 4 + 2));
    CHECK(total.gs.item<double>() == doctest::Approx(8 + 48));
    LossConfig defaults;
    CHECK(defaults.lambda1 == 1.0);
    CHECK(defaults.lambda2 == 0.01);
    CHECK(defaults.lambda3 == 1.0);
    CHECK(defaults.lambda_gp == 10.0);
  }

  TEST_CASE("autodiff matches finite differences for the main objective") {
    auto cfg = testing::tiny_config(2, 4, 2);
    cfg.arch.upsample_norm = NormKind::kNone;
    auto gen = build_generator(cfg, 5);
    gen->to(torch::kFloat64);
    auto critic = build_critic(cfg, 6);
    critic->to(torch::kFloat64);
    auto critic_fn = as_critic_fn(critic);
    torch::manual_seed(7);
    auto lr = torch::rand({2, 3, 4, 4}, torch::kFloat64) * 2 - 1;
    auto hr = torch::rand({2, 3, 16, 16}, torch::kFloat64) * 2 - 1;
    auto ex = torch::rand({2, 2, 3, 16, 16}, torch::kFloat64) * 2 - 1;
    RandomConvExtractor phi_p(1);
    RandomConvExtractor phi_id(2);
    const auto objective = [&]() {
      auto out = super_resolve(gen, lr, ex);
      auto l_c = content_loss(out.sr, hr);
      auto l_p = perceptual_loss(out.sr, hr, phi_p, phi_id);
      auto l_adv = generator_adv_loss(critic_fn, out.sr);
      auto zero = torch::zeros({}, torch::kFloat64);
      return total_loss(l_c, l_p, l_adv, zero, zero, cfg.loss).main;
    };
    auto params = gen->named_parameters();
    for (std::string name : {"tail.bias", "head.weight", "pwave.wnn_lr.conv2.weight", "pwave.encoder.stem.bias",
                             "merge_2x.weight"}) {
      CAPTURE(name);
      auto p = params[name];
      auto analytic = torch::autograd::grad({objective()}, {p})[0];
      auto numeric = testing::finite_difference([&] { return objective().item<double>(); }, p, kFdStep, 12);
      auto count = std::min<int64_t>(12, p.numel());
      auto a = analytic.reshape({-1}).narrow(0, 0, count);
      auto n = numeric.reshape({-1}).narrow(0, 0, count);
      CHECK(testing::relative_error(a, n) < 1e-3);
    }
  }

  TEST_CASE("autodiff matches finite differences through weight normalization and fusion") {
    torch::manual_seed(8);
    auto f = torch::randn({1, 3, 2, 3, 3}, torch::kFloat64).requires_grad_(true);
    auto s = (torch::rand({1, 3, 1, 3, 3}, torch::kFloat64) + 0.1).requires_grad_(true);
    auto target = torch::randn({1, 1, 2, 3, 3}, torch::kFloat64);
    const auto loss = [&]() {
      auto fused = fuse({f}, {normalize_weights(s)}).data;
      return (fused - target).pow(2).sum();
    };
    auto grads = torch::autograd::grad({loss()}, {f, s});
    auto nf = testing::finite_difference([&] { return loss().item<double>(); }, f);
    auto ns = testing::finite_difference([&] { return loss().item<double>(); }, s);
    CHECK(testing::relative_error(grads[0], nf) < 1e-6);
    CHECK(testing::relative_error(grads[1], ns) < 1e-6);
  }

  TEST_CASE("loss report finiteness") {
    LossReport r;
    CHECK(r.finite());
    r.l_p = std::nan("");
    CHECK_FALSE(r.finite());
    r.l_p = 0;
    r.l_gp = INFINITY;
    CHECK_FALSE(r.finite());
  }
}
