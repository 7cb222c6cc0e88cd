#pragma once

// Adam with optional decoupled weight decay and cosine learning-rate decay.

#include "livi/graph.hpp"

#include <vector>

namespace livi {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  bool cosine_decay = true;
  /// Learning rate at the final step, as a fraction of lr.
  double final_lr_fraction = 0.0;

  void validate() const;
};

/// Minimizes: each step moves against the gradients accumulated on the
/// parameters since the last step, then clears them.
class Adam {
public:
  Adam(std::vector<Var> params, AdamConfig cfg, std::size_t total_steps);

  void step();
  void zero_grad();
  double current_lr() const;
  std::size_t steps_taken() const { return t_; }

private:
  std::vector<Var> params_;
  AdamConfig cfg_;
  std::size_t total_steps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace livi
