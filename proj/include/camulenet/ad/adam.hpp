#pragma once

#include <cmath>
#include <vector>

#include "camulenet/ad/nn.hpp"

namespace camulenet::ad {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over the trainable entries of a ParamList. Parameters
// with no gradient buffer are left untouched.
template <class T>
class Adam {
 public:
  Adam(const ParamList<T>& params, AdamConfig cfg) : cfg_(cfg) {
    if (!(cfg.lr > 0.0)) throw ConfigError("Adam learning rate must be positive, got " + std::to_string(cfg.lr));
    for (const auto& p : params) {
      if (!p.trainable) continue;
      params_.push_back(p.tensor);
      m_.emplace_back(p.tensor->numel(), 0.0);
      v_.emplace_back(p.tensor->numel(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor<T>& p = *params_[k];
      if (!p.has_grad()) continue;
      const auto g = p.grad();
      auto w = p.mutable_data();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        w[i] = static_cast<T>(static_cast<double>(w[i]) - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  std::size_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor<T>*> params_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace camulenet::ad
