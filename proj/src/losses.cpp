#include "exsr/losses.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "exsr/errors.hpp"

namespace exsr {

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.defined() || !b.defined() || a.sizes() != b.sizes()) {
    std::ostringstream os;
    os << what << ": shape mismatch";
    if (a.defined() && b.defined()) os << " " << a.sizes() << " vs " << b.sizes();
    throw ShapeError(os.str());
  }
}

torch::Tensor squared_feature_distance(const torch::Tensor& a, const torch::Tensor& b,
                                       const FeatureExtractor& phi) {
  torch::Tensor fa, fb;
  try {
    fa = phi.features(a);
    fb = phi.features(b);
  } catch (const DependencyError&) {
    throw;
  } catch (const c10::Error& e) {
    throw DependencyError("extractor '" + phi.name() + "' failed: " + e.what_without_backtrace());
  } catch (const std::exception& e) {
    throw DependencyError("extractor '" + phi.name() + "' failed: " + e.what());
  }
  if (!fa.defined() && !fb.defined()) return {};
  if (!fa.defined() || !fb.defined() || fa.sizes() != fb.sizes()) {
    throw DependencyError("extractor '" + phi.name() + "' returned inconsistent features");
  }
  return (fa - fb).pow(2).flatten(1).sum(1).mean();
}

torch::Tensor scores_of(const CriticFn& critic, const torch::Tensor& x) {
  auto s = critic(x);
  if (!s.defined() || !s.is_floating_point()) {
    throw ConfigError("critic must return floating-point scores");
  }
  if (s.dim() == 2 && s.size(1) == 1) s = s.squeeze(1);
  if (s.dim() != 1 || s.size(0) != x.size(0)) {
    std::ostringstream os;
    os << "critic must return one score per sample, got " << s.sizes();
    throw ConfigError(os.str());
  }
  return s;
}

}  // namespace

torch::Tensor content_loss(const torch::Tensor& sr, const torch::Tensor& hr) {
  require_same_shape(sr, hr, "content loss");
  return (sr - hr).abs().mean();
}

torch::Tensor content_loss_s(const torch::Tensor& gs_out, const torch::Tensor& hr_down) {
  require_same_shape(gs_out, hr_down, "G_S content loss");
  return (gs_out - hr_down).abs().mean();
}

torch::Tensor perceptual_loss(const torch::Tensor& sr, const torch::Tensor& hr,
                              const FeatureExtractor& phi_p, const FeatureExtractor& phi_id) {
  require_same_shape(sr, hr, "perceptual loss");
  auto total = torch::zeros({}, sr.options());
  if (auto d = squared_feature_distance(sr, hr, phi_p); d.defined()) total = total + d;
  if (auto d = squared_feature_distance(sr, hr, phi_id); d.defined()) total = total + d;
  return total;
}

torch::Tensor sample_interpolation(int64_t n, at::Generator& gen, const torch::TensorOptions& options) {
  return at::rand({n}, gen, options.dtype(torch::kFloat64)).to(options.dtype());
}

torch::Tensor gradient_penalty(const CriticFn& critic, const torch::Tensor& real,
                               const torch::Tensor& fake, const torch::Tensor& epsilon) {
  require_same_shape(real, fake, "gradient penalty");
  const int64_t n = real.size(0);
  if (!epsilon.defined() || epsilon.numel() != n) {
    throw ShapeError("gradient penalty: need one interpolation coefficient per sample");
  }
  std::vector<int64_t> view(real.dim(), 1);
  view[0] = n;
  auto eps = epsilon.to(real.dtype()).reshape(view);
  auto x_hat = (eps * real.detach() + (1.0 - eps) * fake.detach()).requires_grad_(true);

  auto scores = scores_of(critic, x_hat);
  torch::Tensor grad;
  if (scores.requires_grad()) {
    auto grads = torch::autograd::grad({scores.sum()}, {x_hat}, /*grad_outputs=*/{},
                                       /*retain_graph=*/true, /*create_graph=*/true,
                                       /*allow_unused=*/true);
    grad = grads[0];
  }
  if (!grad.defined()) grad = torch::zeros_like(x_hat);
  auto norm = grad.flatten(1).norm(2, 1);
  return (norm - 1.0).pow(2).mean();
}

CriticLossTerms critic_loss(const CriticFn& critic, const torch::Tensor& sr, const torch::Tensor& hr,
                            double lambda_gp, const torch::Tensor& epsilon) {
  if (lambda_gp < 0) throw ConfigError("lambda_gp must be >= 0");
  require_same_shape(sr, hr, "critic loss");
  auto fake = sr.detach();
  CriticLossTerms out;
  out.wasserstein_gap = scores_of(critic, fake).mean() - scores_of(critic, hr).mean();
  out.gp = gradient_penalty(critic, hr, fake, epsilon);
  out.total = out.wasserstein_gap + lambda_gp * out.gp;
  return out;
}

torch::Tensor generator_adv_loss(const CriticFn& critic, const torch::Tensor& sr) {
  return -scores_of(critic, sr).mean();
}

TotalLoss total_loss(const torch::Tensor& l_c, const torch::Tensor& l_p, const torch::Tensor& l_adv,
                     const torch::Tensor& l_c_s, const torch::Tensor& l_p_s, const LossConfig& cfg) {
  TotalLoss out;
  out.main = l_c + cfg.lambda1 * l_p + cfg.lambda2 * l_adv;
  out.gs = l_c_s + cfg.lambda3 * l_p_s;
  return out;
}

bool LossReport::finite() const {
  for (double v : {l_c, l_p, l_adv, l_c_s, l_p_s, l_critic, l_gp, l_wgap, total_main, total_gs}) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void to_json(nlohmann::json& j, const LossReport& r) {
  j = nlohmann::json{{"step", r.step},         {"l_c", r.l_c},
                     {"l_p", r.l_p},           {"l_adv", r.l_adv},
                     {"l_c_s", r.l_c_s},       {"l_p_s", r.l_p_s},
                     {"l_critic", r.l_critic}, {"l_gp", r.l_gp},
                     {"l_wgap", r.l_wgap},     {"total_main", r.total_main},
                     {"total_gs", r.total_gs}, {"wall_time_s", r.wall_time_s}};
}

}  // namespace exsr
