#include <doctest.h>

#include <fstream>

#include <nlohmann/json.hpp>

#include "configs.hpp"
#include "exsr/checkpoint.hpp"
#include "exsr/config.hpp"
#include "exsr/errors.hpp"
#include "exsr/extractors.hpp"
#include "exsr/optim.hpp"
#include "toy_faces.hpp"

using namespace exsr;
using nlohmann::json;
namespace fs = std::filesystem;

TEST_SUITE("config") {
  TEST_CASE("defaults") {
    ModelConfig c;
    CHECK(c.arch.scale_factor == 8);
    CHECK(c.arch.m1 == 3);
    CHECK(c.arch.m2 == 1);
    CHECK(c.arch.num_wnn == 2);
    CHECK(c.arch.k == 3);
    CHECK(c.optim.lr_main == 0.003);
    CHECK(c.optim.lr_wnn == 0.0001);
    CHECK(c.optim.adam_beta1 == 0.0);
    CHECK(c.optim.adam_beta2 == 0.99);
    CHECK(c.train.n_critic == 1);
    CHECK_NOTHROW(c.validate());
  }

  TEST_CASE("presets") {
    auto c8 = ModelConfig::celeba(8);
    CHECK(c8.arch.m1 == 3);
    CHECK(c8.arch.lr_height == 16);
    CHECK(c8.arch.hr_height() == 128);
    CHECK(c8.train.batch_size == 8);
    auto c16 = ModelConfig::celeba(16);
    CHECK(c16.arch.m1 == 4);
    CHECK(c16.arch.lr_height == 8);
    CHECK(c16.arch.hr_height() == 128);
    auto w8 = ModelConfig::webface(8);
    CHECK(w8.arch.lr_height == 32);
    CHECK(w8.arch.hr_height() == 256);
    CHECK(w8.train.batch_size == 4);
    CHECK(w8.data.min_images == 10);
    auto w16 = ModelConfig::webface(16);
    CHECK(w16.arch.lr_height == 16);
    CHECK(w16.arch.hr_height() == 256);
    CHECK_THROWS_AS(ModelConfig::celeba(4), ConfigError);
  }

  TEST_CASE("inconsistent fields are rejected") {
    auto bad = [](auto mutate) {
      ModelConfig c;
      mutate(c);
      return c;
    };
    CHECK_THROWS_AS(bad([](ModelConfig& c) { c.arch.m1 = 4; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](ModelConfig& c) { c.arch.num_wnn = 1; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](ModelConfig& c) { c.arch.k = -1; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](ModelConfig& c) { c.loss.lambda_gp = -0.5; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](ModelConfig& c) { c.optim.lr_wnn = 0; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](ModelConfig& c) { c.train.batch_size = 0; }).validate(), ConfigError);
  }

  TEST_CASE("json round trip and partial files") {
    auto c = ModelConfig::webface(16);
    c.arch.fusion = FusionMode::kAverage;
    c.loss.phi_p = "flatten";
    c.train.seed = 99;
    json j = c;
    auto back = j.get<ModelConfig>();
    CHECK(json(back) == j);
    testing::TempDir dir("config");
    std::ofstream(dir / "partial.json") << R"({
      // comments are allowed
      "model": {"k": 5, "fusion": "average"},
      "train": {"batch_size": 2}
    })";
    auto loaded = load_config(dir / "partial.json");
    CHECK(loaded.arch.k == 5);
    CHECK(loaded.arch.fusion == FusionMode::kAverage);
    CHECK(loaded.train.batch_size == 2);
    CHECK(loaded.arch.m1 == 3);
    save_config(dir / "saved.json", c);
    CHECK(json(load_config(dir / "saved.json")) == j);
    std::ofstream(dir / "bad.json") << R"({"model": {"fusion": "median"}})";
    CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
  }

  TEST_CASE("architecture comparison names the differing field") {
    ArchConfig a, b;
    CHECK_NOTHROW(require_same_architecture(a, b));
    b.k = 5;
    try {
      require_same_architecture(a, b);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("k") != std::string::npos);
    }
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("generator round trip") {
    testing::TempDir dir("ckpt");
    auto cfg = testing::tiny_config();
    auto gen = build_generator(cfg, 3);
    save_generator(dir / "g.exsr", gen);
    CHECK_FALSE(fs::exists(dir / "g.exsr.tmp"));
    auto back = load_generator(dir / "g.exsr", &cfg);
    CHECK(parameter_digest(*back) == parameter_digest(*gen));
    auto lr = torch::randn({1, 3, 4, 4});
    auto ex = torch::randn({1, 3, 3, 16, 16});
    torch::NoGradGuard g;
    gen->eval();
    back->eval();
    CHECK(torch::equal(super_resolve(gen, lr, ex).sr, super_resolve(back, lr, ex).sr));
  }

  TEST_CASE("mixed dtypes and metadata survive") {
    testing::TempDir dir("ckpt_mixed");
    Checkpoint c;
    c.meta = {{"note", "x"}, {"step", 12}};
    c.tensors["a"] = torch::arange(6, torch::kFloat64).reshape({2, 3});
    c.tensors["b"] = torch::tensor({1, 2, 250}, torch::kUInt8);
    c.tensors["c"] = torch::tensor({-5}, torch::kLong);
    c.tensors["d"] = torch::zeros({0, 4});
    write_checkpoint(dir / "c.exsr", c);
    auto back = read_checkpoint(dir / "c.exsr");
    CHECK(back.meta == c.meta);
    for (const auto& [k, v] : c.tensors) {
      CAPTURE(k);
      CHECK((back.tensors.at(k).scalar_type() == v.scalar_type()));
      CHECK(torch::equal(back.tensors.at(k), v));
    }
  }

  TEST_CASE("foreign, truncated and mismatched files are rejected") {
    testing::TempDir dir("ckpt_bad");
    std::ofstream(dir / "junk.exsr") << "definitely not a checkpoint";
    CHECK_THROWS_AS(read_checkpoint(dir / "junk.exsr"), ConfigError);
    CHECK_THROWS_AS(read_checkpoint(dir / "missing.exsr"), IoError);

    auto cfg = testing::tiny_config();
    save_generator(dir / "g.exsr", build_generator(cfg, 0));
    const auto size = fs::file_size(dir / "g.exsr");
    fs::resize_file(dir / "g.exsr", size - 16);
    CHECK_THROWS_AS(read_checkpoint(dir / "g.exsr"), IoError);

    save_generator(dir / "g2.exsr", build_generator(cfg, 0));
    auto other = cfg;
    other.arch.k = 2;
    CHECK_THROWS_AS(load_generator(dir / "g2.exsr", &other), ConfigError);

    // Bump the version field that follows the 8-byte magic.
    {
      std::fstream f(dir / "g2.exsr", std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(8);
      const uint32_t v = kCheckpointVersion + 1;
      f.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    CHECK_THROWS_AS(read_checkpoint(dir / "g2.exsr"), ConfigError);
  }
}

TEST_SUITE("optimizer") {
  TEST_CASE("one Adam step matches the closed form") {
    auto p = torch::tensor({1.0, -2.0}, torch::kFloat64).requires_grad_(true);
    Adam adam({{"g", 0.1, {p}}}, 0.0, 0.99, 1e-8);
    p.mutable_grad() = torch::tensor({0.5, -4.0}, torch::kFloat64);
    adam.step();
    // beta1 = 0: m = g; v = (1 - b2) g^2, bias-corrected to g^2, so the step is lr * sign(g).
    CHECK(p[0].item<double>() == doctest::Approx(0.9).epsilon(1e-7));
    CHECK(p[1].item<double>() == doctest::Approx(-1.9).epsilon(1e-7));
  }

  TEST_CASE("two steps against a hand-rolled reference") {
    auto p = torch::tensor({0.3}, torch::kFloat64).requires_grad_(true);
    Adam adam({{"g", 0.01, {p}}}, 0.9, 0.999, 1e-8);
    double x = 0.3, m = 0, v = 0;
    for (int t = 1; t <= 2; ++t) {
      const double g = 2 * x;  // gradient of x^2
      p.mutable_grad() = torch::tensor({2 * p.item<double>()}, torch::kFloat64);
      adam.step();
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
      x -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
    CHECK(p.item<double>() == doctest::Approx(x).epsilon(1e-12));
  }

  TEST_CASE("groups keep their own learning rates and skip missing gradients") {
    auto a = torch::zeros({1}, torch::kFloat64).requires_grad_(true);
    auto b = torch::zeros({1}, torch::kFloat64).requires_grad_(true);
    Adam adam({{"fast", 0.5, {a}}, {"slow", 0.001, {b}}}, 0.0, 0.99, 1e-8);
    CHECK(adam.lr("slow") == 0.001);
    a.mutable_grad() = torch::ones({1}, torch::kFloat64);
    adam.step();
    CHECK(a.item<double>() == doctest::Approx(-0.5));
    CHECK(b.item<double>() == 0.0);
    adam.set_lr("slow", 0.2);
    CHECK(adam.lr("slow") == 0.2);
    CHECK_THROWS_AS(adam.set_lr("missing", 1), ConfigError);
  }

  TEST_CASE("state export and import") {
    auto p = torch::tensor({1.0, 2.0}, torch::kFloat64).requires_grad_(true);
    Adam a({{"g", 0.1, {p}}}, 0.5, 0.9, 1e-8);
    p.mutable_grad() = torch::ones({2}, torch::kFloat64);
    a.step();
    std::map<std::string, torch::Tensor> state;
    a.export_state("opt/", state);
    CHECK(state.count("opt/g/0/m") == 1);
    auto q = p.detach().clone().requires_grad_(true);
    Adam b({{"g", 0.1, {q}}}, 0.5, 0.9, 1e-8);
    b.import_state("opt/", state, a.step_count());
    p.mutable_grad() = torch::ones({2}, torch::kFloat64) * 3;
    q.mutable_grad() = torch::ones({2}, torch::kFloat64) * 3;
    a.step();
    b.step();
    CHECK(torch::equal(p, q));
    CHECK_THROWS_AS(b.import_state("other/", state, 1), ConfigError);
  }
}

TEST_SUITE("extractors") {
  TEST_CASE("registry builds the built-in kinds") {
    CHECK(make_extractor("none")->name() == "none");
    CHECK(make_extractor("flatten")->name() == "flatten");
    CHECK(make_extractor("random_conv:5")->name() == "random_conv:5");
    CHECK(make_extractor("random_conv")->name().rfind("random_conv", 0) == 0);
    CHECK_THROWS_AS(make_extractor("vgg19"), DependencyError);
    CHECK_THROWS_AS(make_extractor("torchscript:/nonexistent/model.pt"), DependencyError);
  }

  TEST_CASE("random conv features are frozen, seeded and sized") {
    RandomConvExtractor a(1), b(1), c(2);
    auto x = torch::rand({2, 3, 32, 32}) * 2 - 1;
    auto fa = a.features(x);
    CHECK(fa.sizes() == torch::IntArrayRef({2, 16 * 8 * 8}));
    CHECK(torch::equal(fa, b.features(x)));
    CHECK_FALSE(torch::equal(fa, c.features(x)));
    for (const auto& p : a.parameters()) CHECK_FALSE(p.requires_grad());
  }

  TEST_CASE("custom kinds can be registered") {
    ExtractorRegistry::instance().add("const_test", [](const std::string&) -> ExtractorPtr {
      return std::make_shared<NoneExtractor>();
    });
    CHECK(make_extractor("const_test:anything")->name() == "none");
  }

  TEST_CASE("torchscript adapter maps input to [0, 1] and resizes") {
    const std::string path = std::string(EXSR_FIXTURE_DIR) + "/tiny_extractor.pt";
    auto ex = make_extractor("torchscript:" + path + "@32");
    auto f = ex->features(torch::zeros({2, 3, 16, 16}));
    CHECK(f.sizes() == torch::IntArrayRef({2, 4 * 4 * 4}));
    // Resizing a constant image leaves it constant, so any input size agrees.
    CHECK((f - ex->features(torch::zeros({2, 3, 48, 48}))).abs().max().item<double>() < 1e-6);
    CHECK_FALSE(ex->parameters().empty());
  }
}
