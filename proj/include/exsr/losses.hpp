#pragma once

#include <nlohmann/json_fwd.hpp>
#include <torch/torch.h>

#include "exsr/config.hpp"
#include "exsr/critic.hpp"
#include "exsr/extractors.hpp"

namespace exsr {

/// Mean absolute difference between the super-resolved and ground-truth images.
torch::Tensor content_loss(const torch::Tensor& sr, const torch::Tensor& hr);

/// Mean absolute difference between the G_S output and the downsampled ground truth.
torch::Tensor content_loss_s(const torch::Tensor& gs_out, const torch::Tensor& hr_down);

/// Batch mean of ||phi_p(sr) - phi_p(hr)||^2 + ||phi_id(sr) - phi_id(hr)||^2.
/// Extractor failures surface as DependencyError.
torch::Tensor perceptual_loss(const torch::Tensor& sr, const torch::Tensor& hr,
                              const FeatureExtractor& phi_p, const FeatureExtractor& phi_id);

/// Per-sample interpolation coefficients, uniform in [0, 1).
torch::Tensor sample_interpolation(int64_t n, at::Generator& gen, const torch::TensorOptions& options);

/// Mean over the batch of (||grad critic(x_hat)||_2 - 1)^2 at
/// x_hat = eps * real + (1 - eps) * fake. The returned tensor keeps the graph
/// so it can be differentiated w.r.t. critic parameters. A critic whose output
/// does not depend on its input has zero gradient.
torch::Tensor gradient_penalty(const CriticFn& critic, const torch::Tensor& real,
                               const torch::Tensor& fake, const torch::Tensor& epsilon);

struct CriticLossTerms {
  torch::Tensor total;            // mean D(sr) - mean D(hr) + lambda_gp * gp
  torch::Tensor wasserstein_gap;  // mean D(sr) - mean D(hr)
  torch::Tensor gp;
};

/// WGAN-GP critic objective, minimized w.r.t. the critic. `sr` is detached
/// here so critic updates never reach the generator.
CriticLossTerms critic_loss(const CriticFn& critic, const torch::Tensor& sr, const torch::Tensor& hr,
                            double lambda_gp, const torch::Tensor& epsilon);

/// -mean D(sr)
torch::Tensor generator_adv_loss(const CriticFn& critic, const torch::Tensor& sr);

struct TotalLoss {
  torch::Tensor main;  // l_c + lambda1 * l_p + lambda2 * l_adv; updates everything except G_S
  torch::Tensor gs;    // l_c_s + lambda3 * l_p_s; updates G_S only
};

TotalLoss total_loss(const torch::Tensor& l_c, const torch::Tensor& l_p, const torch::Tensor& l_adv,
                     const torch::Tensor& l_c_s, const torch::Tensor& l_p_s, const LossConfig& cfg);

struct LossReport {
  int64_t step = 0;
  double l_c = 0, l_p = 0, l_adv = 0;
  double l_c_s = 0, l_p_s = 0;
  double l_critic = 0, l_gp = 0, l_wgap = 0;
  double total_main = 0, total_gs = 0;
  double wall_time_s = 0;

  bool finite() const;
};

void to_json(nlohmann::json& j, const LossReport& r);

}  // namespace exsr
