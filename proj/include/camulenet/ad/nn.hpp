#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "camulenet/ad/ops.hpp"

namespace camulenet::ad {

// A named tensor owned by some module. Buffers (batch-norm running stats)
// are checkpointed but never touched by the optimiser.
template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T>* tensor;
  bool trainable;
};

template <class T>
using ParamList = std::vector<NamedTensor<T>>;

template <class T>
Tensor<T> uniform_param(Shape shape, double bound, CounterRng& rng) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <class T>
struct Linear {
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, CounterRng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = uniform_param<T>({out, in}, bound, rng);
    bias = uniform_param<T>({out}, bound, rng);
  }

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, &bias); }

  void collect(ParamList<T>& out, const std::string& prefix) {
    out.push_back({prefix + ".weight", &weight, true});
    out.push_back({prefix + ".bias", &bias, true});
  }
};

template <class T>
struct Conv2d {
  Tensor<T> weight;  // [O, C, K, K]
  Tensor<T> bias;
  std::size_t stride = 1;
  std::size_t pad = 0;

  Conv2d() = default;
  Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride_, std::size_t pad_,
         CounterRng& rng)
      : stride(stride_), pad(pad_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * kernel * kernel));
    weight = uniform_param<T>({out_ch, in_ch, kernel, kernel}, bound, rng);
    bias = uniform_param<T>({out_ch}, bound, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, &bias, stride, pad); }

  void collect(ParamList<T>& out, const std::string& prefix) {
    out.push_back({prefix + ".weight", &weight, true});
    out.push_back({prefix + ".bias", &bias, true});
  }
};

template <class T>
struct LayerNorm {
  Tensor<T> gain;
  Tensor<T> bias;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t d) : gain(Tensor<T>::full({d}, T(1), true)), bias(Tensor<T>::zeros({d}, true)) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, bias, T(1e-5)); }

  void collect(ParamList<T>& out, const std::string& prefix) {
    out.push_back({prefix + ".gain", &gain, true});
    out.push_back({prefix + ".bias", &bias, true});
  }
};

template <class T>
struct BatchNorm {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels)
      : gamma(Tensor<T>::full({channels}, T(1), true)),
        beta(Tensor<T>::zeros({channels}, true)),
        running_mean(Tensor<T>::zeros({channels})),
        running_var(Tensor<T>::full({channels}, T(1))) {}

  Tensor<T> operator()(const Tensor<T>& x, Mode mode) { return batch_norm(x, gamma, beta, running_mean, running_var, mode); }

  void collect(ParamList<T>& out, const std::string& prefix) {
    out.push_back({prefix + ".gamma", &gamma, true});
    out.push_back({prefix + ".beta", &beta, true});
    out.push_back({prefix + ".running_mean", &running_mean, false});
    out.push_back({prefix + ".running_var", &running_var, false});
  }
};

// One direction of one GRU layer, gate order (r, z, n):
//   r = σ(W_ir x + b_ir + W_hr h + b_hr)
//   z = σ(W_iz x + b_iz + W_hz h + b_hz)
//   n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
//   h' = (1 − z) ⊙ n + z ⊙ h
template <class T>
struct GruCell {
  Linear<T> input;   // in -> 3H
  Linear<T> hidden;  // H -> 3H

  GruCell() = default;
  GruCell(std::size_t in, std::size_t hidden_size, CounterRng& rng) {
    // Every gate uses the ±1/√H bound.
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_size));
    input.weight = uniform_param<T>({3 * hidden_size, in}, bound, rng);
    input.bias = uniform_param<T>({3 * hidden_size}, bound, rng);
    hidden.weight = uniform_param<T>({3 * hidden_size, hidden_size}, bound, rng);
    hidden.bias = uniform_param<T>({3 * hidden_size}, bound, rng);
  }

  std::size_t hidden_size() const { return hidden.in_features(); }

  // gi: precomputed input projection for this step [B, 3H]; h: [B, H].
  Tensor<T> step(const Tensor<T>& gi, const Tensor<T>& h) const {
    const std::size_t hs = hidden_size();
    const Tensor<T> gh = hidden(h);
    const auto r = sigmoid(add(narrow(gi, 1, 0, hs), narrow(gh, 1, 0, hs)));
    const auto z = sigmoid(add(narrow(gi, 1, hs, hs), narrow(gh, 1, hs, hs)));
    const auto n = tanh(add(narrow(gi, 1, 2 * hs, hs), mul(r, narrow(gh, 1, 2 * hs, hs))));
    return add(mul(one_minus(z), n), mul(z, h));
  }

  void collect(ParamList<T>& out, const std::string& prefix) {
    input.collect(out, prefix + ".ih");
    hidden.collect(out, prefix + ".hh");
  }
};

template <class T>
struct GruOutput {
  Tensor<T> sequence;     // [B, S, 2H]
  Tensor<T> final_state;  // [B, 2H]: forward last step ⊕ backward first step
};

template <class T>
struct BiGru {
  std::vector<GruCell<T>> forward_cells;
  std::vector<GruCell<T>> backward_cells;
  double dropout_rate = 0.2;

  BiGru() = default;
  BiGru(std::size_t in, std::size_t hidden_size, std::size_t layers, double dropout, CounterRng& rng)
      : dropout_rate(dropout) {
    if (hidden_size == 0 || layers == 0) throw ConfigError("GRU needs hidden size and layer count >= 1");
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t layer_in = l == 0 ? in : 2 * hidden_size;
      forward_cells.emplace_back(layer_in, hidden_size, rng);
      backward_cells.emplace_back(layer_in, hidden_size, rng);
    }
  }

  std::size_t hidden_size() const { return forward_cells.front().hidden_size(); }
  std::size_t output_width() const { return 2 * hidden_size(); }

  // x: [B, S, in]
  GruOutput<T> operator()(const Tensor<T>& x, Mode mode, CounterRng& rng) const {
    if (x.rank() != 3) throw ShapeError("BiGru expects [batch, seq, features], got " + shape_str(x.shape()));
    if (x.dim(1) == 0) throw EmptySequence("BiGru received a zero-length sequence");
    const std::size_t bs = x.dim(0), seq = x.dim(1), hs = hidden_size();
    Tensor<T> layer_in = x;
    Tensor<T> last_fwd, first_bwd;
    for (std::size_t l = 0; l < forward_cells.size(); ++l) {
      if (l > 0) layer_in = dropout(layer_in, dropout_rate, mode, rng);
      std::vector<Tensor<T>> fwd(seq), bwd(seq);
      const auto gi_f = forward_cells[l].input(layer_in);
      const auto gi_b = backward_cells[l].input(layer_in);
      Tensor<T> h = Tensor<T>::zeros({bs, hs});
      for (std::size_t t = 0; t < seq; ++t) fwd[t] = h = forward_cells[l].step(select(gi_f, 1, t), h);
      h = Tensor<T>::zeros({bs, hs});
      for (std::size_t t = seq; t-- > 0;) bwd[t] = h = backward_cells[l].step(select(gi_b, 1, t), h);
      last_fwd = fwd.back();
      first_bwd = bwd.front();
      layer_in = concat<T>({stack(fwd, 1), stack(bwd, 1)}, 2);
    }
    return {layer_in, concat<T>({last_fwd, first_bwd}, 1)};
  }

  void collect(ParamList<T>& out, const std::string& prefix) {
    for (std::size_t l = 0; l < forward_cells.size(); ++l) {
      forward_cells[l].collect(out, prefix + ".l" + std::to_string(l) + ".fwd");
      backward_cells[l].collect(out, prefix + ".l" + std::to_string(l) + ".bwd");
    }
  }
};

template <class T>
void zero_grads(const ParamList<T>& params) {
  for (const auto& p : params) p.tensor->zero_grad();
}

}  // namespace camulenet::ad
