#include "livi/optim.hpp"

#include "livi/errors.hpp"

#include <cmath>
#include <numbers>

namespace livi {

void AdamConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("adam: learning rate must be finite and >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam: betas must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("adam: eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("adam: weight decay must be >= 0");
  if (!(final_lr_fraction >= 0.0 && final_lr_fraction <= 1.0))
    throw ConfigError("adam: final_lr_fraction must be in [0, 1]");
}

Adam::Adam(std::vector<Var> params, AdamConfig cfg, std::size_t total_steps)
    : params_(std::move(params)), cfg_(cfg), total_steps_(total_steps) {
  cfg_.validate();
  for (const auto& p : params_) {
    if (!p.requires_grad()) throw ContractError("adam: every parameter must be trainable");
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

double Adam::current_lr() const {
  if (!cfg_.cosine_decay || total_steps_ <= 1) return cfg_.lr;
  const double frac = std::min(1.0, static_cast<double>(t_) / static_cast<double>(total_steps_ - 1));
  const double f = cfg_.final_lr_fraction;
  return cfg_.lr * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac)));
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
  const double lr = current_lr();
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    auto& value = p.mutable_value();
    const Tensor& g = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double gi = g.size() ? g[i] : 0.0;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      if (lr == 0.0) continue;
      value[i] -= lr * ((m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps) + cfg_.weight_decay * value[i]);
    }
  }
  zero_grad();
}

}  // namespace livi
