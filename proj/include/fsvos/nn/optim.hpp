#pragma once

#include <cmath>
#include <vector>

#include "fsvos/nn/layers.hpp"

namespace fsvos::nn {

// Cosine annealing from base_lr down to min_lr over total_steps.
struct CosineSchedule {
  double base_lr = 1e-5;
  double min_lr = 0.0;
  int64_t total_steps = 1;

  double lr_at(int64_t step) const {
    if (step >= total_steps) return min_lr;
    double t = double(step) / double(total_steps);
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(M_PI * t));
  }
};

template <typename S>
class Adam {
 public:
  explicit Adam(ParamList<S> params, double lr = 1e-5, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].second.numel(), 0.0);
      v_[i].assign(params_[i].second.numel(), 0.0);
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor<S>& p = params_[i].second;
      const auto& g = p.grad();
      auto& val = p.vec();
      for (size_t j = 0; j < val.size(); ++j) {
        double gj = double(g[j]);
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * gj;
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * gj * gj;
        double mhat = m_[i][j] / bc1;
        double vhat = v_[i][j] / bc2;
        val[j] -= static_cast<S>(lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  const ParamList<S>& params() const { return params_; }

  // Moment state for checkpoint resume.
  std::vector<std::vector<double>>& moment1() { return m_; }
  std::vector<std::vector<double>>& moment2() { return v_; }

 private:
  ParamList<S> params_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace fsvos::nn
