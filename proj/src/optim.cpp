#include "exsr/optim.hpp"

#include <cmath>

#include "exsr/errors.hpp"

namespace exsr {

Adam::Adam(std::vector<Group> groups, double beta1, double beta2, double eps)
    : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& g : groups_) {
    std::vector<torch::Tensor> m, v;
    for (const auto& p : g.params) {
      m.push_back(torch::zeros_like(p, torch::MemoryFormat::Contiguous));
      v.push_back(torch::zeros_like(p, torch::MemoryFormat::Contiguous));
    }
    exp_avg_.push_back(std::move(m));
    exp_avg_sq_.push_back(std::move(v));
  }
}

void Adam::step() {
  torch::NoGradGuard no_grad;
  ++steps_;
  const double bias1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double bias2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (size_t gi = 0; gi < groups_.size(); ++gi) {
    auto& g = groups_[gi];
    for (size_t pi = 0; pi < g.params.size(); ++pi) {
      auto& p = g.params[pi];
      const auto& grad = p.grad();
      if (!grad.defined()) continue;
      auto& m = exp_avg_[gi][pi];
      auto& v = exp_avg_sq_[gi][pi];
      m.mul_(beta1_).add_(grad, 1.0 - beta1_);
      v.mul_(beta2_).addcmul_(grad, grad, 1.0 - beta2_);
      auto denom = (v / bias2).sqrt_().add_(eps_);
      p.addcdiv_(m, denom, -g.lr / bias1);
    }
  }
}

void Adam::zero_grad() {
  for (auto& g : groups_) {
    for (auto& p : g.params) {
      if (p.grad().defined()) p.mutable_grad() = torch::Tensor();
    }
  }
}

void Adam::set_lr(const std::string& group, double lr) {
  for (auto& g : groups_) {
    if (g.name == group) {
      g.lr = lr;
      return;
    }
  }
  throw ConfigError("optimizer has no group '" + group + "'");
}

double Adam::lr(const std::string& group) const {
  for (const auto& g : groups_) {
    if (g.name == group) return g.lr;
  }
  throw ConfigError("optimizer has no group '" + group + "'");
}

void Adam::export_state(const std::string& prefix, std::map<std::string, torch::Tensor>& out) const {
  for (size_t gi = 0; gi < groups_.size(); ++gi) {
    for (size_t pi = 0; pi < groups_[gi].params.size(); ++pi) {
      const auto key = prefix + groups_[gi].name + "/" + std::to_string(pi);
      out[key + "/m"] = exp_avg_[gi][pi];
      out[key + "/v"] = exp_avg_sq_[gi][pi];
    }
  }
}

void Adam::import_state(const std::string& prefix, const std::map<std::string, torch::Tensor>& in,
                        int64_t step_count) {
  torch::NoGradGuard no_grad;
  for (size_t gi = 0; gi < groups_.size(); ++gi) {
    for (size_t pi = 0; pi < groups_[gi].params.size(); ++pi) {
      const auto key = prefix + groups_[gi].name + "/" + std::to_string(pi);
      const auto m = in.find(key + "/m");
      const auto v = in.find(key + "/v");
      if (m == in.end() || v == in.end()) throw ConfigError("checkpoint lacks optimizer state '" + key + "'");
      if (m->second.sizes() != exp_avg_[gi][pi].sizes()) {
        throw ConfigError("optimizer state '" + key + "' has the wrong shape");
      }
      exp_avg_[gi][pi].copy_(m->second);
      exp_avg_sq_[gi][pi].copy_(v->second);
    }
  }
  steps_ = step_count;
}

}  // namespace exsr
