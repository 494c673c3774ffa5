#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "camulenet/ad/nn.hpp"

namespace camulenet::test_support {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::string worst;
};

// Central finite differences against the tape's gradients for up to
// `per_tensor` sampled entries of each input.
inline GradCheckResult gradcheck(const std::function<ad::Tensor<double>()>& loss_fn,
                                 const std::vector<std::pair<std::string, ad::Tensor<double>*>>& inputs,
                                 std::size_t per_tensor = 20, double eps = 1e-6, std::uint64_t seed = 7) {
  for (auto& [name, t] : inputs) {
    t->set_requires_grad(true);
    t->zero_grad();
  }
  loss_fn().backward();
  GradCheckResult r;
  CounterRng rng(seed);
  for (auto& [name, t] : inputs) {
    std::vector<double> analytic(t->numel(), 0.0);
    if (t->has_grad()) std::copy(t->grad().begin(), t->grad().end(), analytic.begin());
    std::vector<std::size_t> idx(t->numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > per_tensor) {
      shuffle(idx.begin(), idx.end(), rng);
      idx.resize(per_tensor);
    }
    for (const auto i : idx) {
      auto data = t->mutable_data();
      const double v = data[i];
      double plus, minus;
      {
        ad::NoGradGuard g;
        data[i] = v + eps;
        plus = loss_fn().item();
        data[i] = v - eps;
        minus = loss_fn().item();
        data[i] = v;
      }
      const double numeric = (plus - minus) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-5});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      ++r.checked;
      if (rel > r.max_rel_err) {
        r.max_rel_err = rel;
        r.worst = name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic[i]) + " numeric " +
                  std::to_string(numeric);
      }
    }
  }
  return r;
}

inline ad::Tensor<double> random_tensor(ad::Shape shape, CounterRng& rng, double scale = 1.0) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng.normal() * scale;
  return ad::Tensor<double>(std::move(shape), std::move(v), true);
}

// Fixed random projection of every output element to one scalar.
inline ad::Tensor<double> project(const ad::Tensor<double>& y, std::uint64_t seed = 99) {
  CounterRng rng(seed);
  std::vector<double> w(y.numel());
  for (auto& x : w) x = rng.normal();
  return ad::sum(ad::mul(y, ad::Tensor<double>(y.shape(), std::move(w))));
}

}  // namespace camulenet::test_support
