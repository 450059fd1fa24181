#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace exsr {

/// Adam over named parameter groups with per-group learning rates. Parameters
/// whose gradient is undefined are skipped for that step.
class Adam {
 public:
  struct Group {
    std::string name;
    double lr = 1e-3;
    std::vector<torch::Tensor> params;
  };

  Adam(std::vector<Group> groups, double beta1, double beta2, double eps);

  void step();
  void zero_grad();

  void set_lr(const std::string& group, double lr);
  double lr(const std::string& group) const;
  const std::vector<Group>& groups() const { return groups_; }
  int64_t step_count() const { return steps_; }

  /// Moment tensors keyed "<prefix><group>/<index>/m" and ".../v".
  void export_state(const std::string& prefix, std::map<std::string, torch::Tensor>& out) const;
  void import_state(const std::string& prefix, const std::map<std::string, torch::Tensor>& in,
                    int64_t step_count);

 private:
  std::vector<Group> groups_;
  std::vector<std::vector<torch::Tensor>> exp_avg_;
  std::vector<std::vector<torch::Tensor>> exp_avg_sq_;
  double beta1_, beta2_, eps_;
  int64_t steps_ = 0;
};

}  // namespace exsr
