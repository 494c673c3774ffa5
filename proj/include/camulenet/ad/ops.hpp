#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <type_traits>
#include <vector>

#include "camulenet/ad/tensor.hpp"
#include "camulenet/rng.hpp"

namespace camulenet::ad {

enum class Mode { train, eval };

namespace detail {

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

template <class T>
std::vector<T>& grad_of(Node<T>& n) {
  n.ensure_grad();
  return n.grad;
}

// C[m,n] += A[m,k] * B[k,n]
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T, class F, class D>
Tensor<T> unary(const char* op, const Tensor<T>& x, F f, D df) {
  std::vector<T> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result<T>(op, x.shape(), std::move(out), {x}, [df](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = grad_of(p);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(p.data[i], self.data[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) detail::shape_mismatch("add", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result<T>("add", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = detail::grad_of(*p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) detail::shape_mismatch("sub", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result<T>("sub", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    const T sign[2] = {T(1), T(-1)};
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = *self.parents[k];
      if (!p.requires_grad) continue;
      auto& g = detail::grad_of(p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) detail::shape_mismatch("mul", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result<T>("mul", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = detail::grad_of(pa);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      auto& g = detail::grad_of(pb);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
    }
  });
}

// x[..., D] + bias[D]
template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (bias.rank() != 1 || x.rank() == 0 || x.shape().back() != bias.dim(0)) {
    detail::shape_mismatch("add_bias", x.shape(), bias.shape());
  }
  const std::size_t d = bias.dim(0);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + bias[i % d];
  return make_result<T>("add_bias", x.shape(), std::move(out), {x, bias}, [d](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pb = *self.parents[1];
    if (px.requires_grad) {
      auto& g = detail::grad_of(px);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = detail::grad_of(pb);
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % d] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary<T>("scale", x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary<T>("add_scalar", x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

// 1 - x
template <class T>
Tensor<T> one_minus(const Tensor<T>& x) {
  return detail::unary<T>("one_minus", x, [](T v) { return T(1) - v; }, [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary<T>("tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

// ---------------------------------------------------------------- shape ops

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) detail::shape_mismatch("reshape", x.shape(), shape);
  return make_result<T>("reshape", std::move(shape), x.vec(), {x}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = detail::grad_of(p);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("transpose expects rank 2, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return make_result<T>("transpose", Shape{c, r}, std::move(out), {x}, [r, c](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = detail::grad_of(p);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat of zero tensors");
  const Shape& ref = xs[0].shape();
  if (axis >= ref.size()) throw ShapeError("concat axis " + std::to_string(axis) + " out of range for " + shape_str(ref));
  std::size_t outer = 1, inner = 1, total = 0;
  for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
  for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];
  std::vector<std::size_t> chunk;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == ref[i];
    if (!ok) detail::shape_mismatch("concat", ref, s);
    chunk.push_back(s[axis] * inner);
    total += s[axis];
  }
  Shape out_shape = ref;
  out_shape[axis] = total;
  const std::size_t row = total * inner;
  std::vector<T> out(outer * row);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto d = xs[k].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(d.begin() + o * chunk[k], chunk[k], out.begin() + o * row + offset);
    offset += chunk[k];
  }
  return make_result<T>("concat", std::move(out_shape), std::move(out), xs, [chunk, outer, row](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = *self.parents[k];
      if (p.requires_grad) {
        auto& g = detail::grad_of(p);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < chunk[k]; ++i) g[o * chunk[k] + i] += self.grad[o * row + off + i];
      }
      off += chunk[k];
    }
  });
}

// Slice [start, start+len) along `axis`; keeps the axis.
template <class T>
Tensor<T> narrow(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t len) {
  const Shape& s = x.shape();
  if (axis >= s.size() || start + len > s[axis]) {
    throw ShapeError("narrow [" + std::to_string(start) + ", " + std::to_string(start + len) + ") on axis " +
                     std::to_string(axis) + " of " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t src_row = s[axis] * inner, dst_row = len * inner, off = start * inner;
  std::vector<T> out(outer * dst_row);
  const auto d = x.data();
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(d.begin() + o * src_row + off, dst_row, out.begin() + o * dst_row);
  Shape out_shape = s;
  out_shape[axis] = len;
  return make_result<T>("narrow", std::move(out_shape), std::move(out), {x},
                        [outer, src_row, dst_row, off](Node<T>& self) {
                          auto& p = *self.parents[0];
                          if (!p.requires_grad) return;
                          auto& g = detail::grad_of(p);
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t i = 0; i < dst_row; ++i) g[o * src_row + off + i] += self.grad[o * dst_row + i];
                        });
}

// Picks index `i` along `axis` and drops that axis.
template <class T>
Tensor<T> select(const Tensor<T>& x, std::size_t axis, std::size_t i) {
  Shape s = x.shape();
  auto n = narrow(x, axis, i, 1);
  s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  return reshape(n, std::move(s));
}

template <class T>
Tensor<T> stack(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("stack of zero tensors");
  std::vector<Tensor<T>> parts;
  parts.reserve(xs.size());
  for (const auto& x : xs) {
    Shape s = x.shape();
    if (axis > s.size()) throw ShapeError("stack axis out of range for " + shape_str(s));
    s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), 1);
    parts.push_back(reshape(x, std::move(s)));
  }
  return concat(parts, axis);
}

// Row gather: x[N, D] -> [k, D].
template <class T>
Tensor<T> index_select_rows(const Tensor<T>& x, const std::vector<std::size_t>& rows) {
  if (x.rank() != 2) throw ShapeError("index_select_rows expects rank 2, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<T> out(rows.size() * d);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) throw ShapeError("row index " + std::to_string(rows[r]) + " out of range for " + shape_str(x.shape()));
    std::copy_n(x.data().begin() + rows[r] * d, d, out.begin() + r * d);
  }
  return make_result<T>("index_select_rows", Shape{rows.size(), d}, std::move(out), {x}, [rows, d](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = detail::grad_of(p);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) g[rows[r] * d + j] += self.grad[r * d + j];
  });
}

// ---------------------------------------------------------------- reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (const T v : x.data()) acc += v;
  return make_result<T>("sum", Shape{}, {acc}, {x}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = detail::grad_of(p);
    for (auto& v : g) v += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// Mean over `axis`, dropping it.
template <class T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size() || s[axis] == 0) throw ShapeError("mean_axis " + std::to_string(axis) + " on " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  const T inv = T(1) / static_cast<T>(n);
  std::vector<T> out(outer * inner, T(0));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * n + k) * inner + i];
  for (auto& v : out) v *= inv;
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  return make_result<T>("mean_axis", std::move(out_shape), std::move(out), {x}, [outer, inner, n, inv](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = detail::grad_of(p);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < inner; ++i) g[(o * n + k) * inner + i] += inv * self.grad[o * inner + i];
  });
}

// ---------------------------------------------------------------- linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) detail::shape_mismatch("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  detail::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
  return make_result<T>("matmul", Shape{m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) detail::gemm_nt(m, k, n, self.grad.data(), pb.data.data(), detail::grad_of(pa).data());
    if (pb.requires_grad) detail::gemm_tn(k, n, m, pa.data.data(), self.grad.data(), detail::grad_of(pb).data());
  });
}

// Batched matmul: a[B,m,k] x b[B,k,n] -> [B,m,n].
template <class T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    detail::shape_mismatch("bmm", a.shape(), b.shape());
  }
  const std::size_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<T> out(bs * m * n, T(0));
  for (std::size_t i = 0; i < bs; ++i)
    detail::gemm_nn(m, n, k, a.data().data() + i * m * k, b.data().data() + i * k * n, out.data() + i * m * n);
  return make_result<T>("bmm", Shape{bs, m, n}, std::move(out), {a, b}, [bs, m, k, n](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (std::size_t i = 0; i < bs; ++i) {
      const T* g = self.grad.data() + i * m * n;
      if (pa.requires_grad)
        detail::gemm_nt(m, k, n, g, pb.data.data() + i * k * n, detail::grad_of(pa).data() + i * m * k);
      if (pb.requires_grad)
        detail::gemm_tn(k, n, m, pa.data.data() + i * m * k, g, detail::grad_of(pb).data() + i * k * n);
    }
  });
}

// x[..., in] * W[out, in]^T + b[out]
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const std::type_identity_t<Tensor<T>>* b = nullptr) {
  if (x.rank() == 0 || w.rank() != 2 || x.shape().back() != w.dim(1)) detail::shape_mismatch("linear", x.shape(), w.shape());
  if (b && (b->rank() != 1 || b->dim(0) != w.dim(0))) detail::shape_mismatch("linear bias", w.shape(), b->shape());
  const std::size_t in = w.dim(1), out_dim = w.dim(0), rows = x.numel() / in;
  std::vector<T> out(rows * out_dim, T(0));
  if (b) {
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(b->data().begin(), out_dim, out.begin() + r * out_dim);
  }
  detail::gemm_nt(rows, out_dim, in, x.data().data(), w.data().data(), out.data());
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  std::vector<Tensor<T>> inputs{x, w};
  if (b) inputs.push_back(*b);
  return make_result<T>("linear", std::move(out_shape), std::move(out), inputs, [rows, in, out_dim](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    if (px.requires_grad) detail::gemm_nn(rows, in, out_dim, self.grad.data(), pw.data.data(), detail::grad_of(px).data());
    if (pw.requires_grad) detail::gemm_tn(out_dim, in, rows, self.grad.data(), px.data.data(), detail::grad_of(pw).data());
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      auto& g = detail::grad_of(*self.parents[2]);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < out_dim; ++j) g[j] += self.grad[r * out_dim + j];
    }
  });
}

// ---------------------------------------------------------------- normalisation

template <class T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.rank() == 0) throw ShapeError("softmax on a scalar");
  const std::size_t d = x.shape().back(), rows = x.numel() / d;
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data().data() + r * d;
    T* o = out.data() + r * d;
    const T mx = *std::max_element(in, in + d);
    T z = T(0);
    for (std::size_t j = 0; j < d; ++j) z += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < d; ++j) o[j] /= z;
  }
  return make_result<T>("softmax", x.shape(), std::move(out), {x}, [rows, d](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = detail::grad_of(p);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * d;
      const T* dy = self.grad.data() + r * d;
      T dot = T(0);
      for (std::size_t j = 0; j < d; ++j) dot += y[j] * dy[j];
      for (std::size_t j = 0; j < d; ++j) g[r * d + j] += y[j] * (dy[j] - dot);
    }
  });
}

template <class T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  if (x.rank() == 0) throw ShapeError("log_softmax on a scalar");
  const std::size_t d = x.shape().back(), rows = x.numel() / d;
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data().data() + r * d;
    const T mx = *std::max_element(in, in + d);
    T z = T(0);
    for (std::size_t j = 0; j < d; ++j) z += std::exp(in[j] - mx);
    const T lse = mx + std::log(z);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = in[j] - lse;
  }
  return make_result<T>("log_softmax", x.shape(), std::move(out), {x}, [rows, d](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = detail::grad_of(p);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * d;
      const T* dy = self.grad.data() + r * d;
      T s = T(0);
      for (std::size_t j = 0; j < d; ++j) s += dy[j];
      for (std::size_t j = 0; j < d; ++j) g[r * d + j] += dy[j] - std::exp(y[j]) * s;
    }
  });
}

// Normalises over the last axis with population variance.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
  if (x.rank() == 0) throw ShapeError("layer_norm on a scalar");
  const std::size_t d = x.shape().back(), rows = x.numel() / d;
  if (gain.numel() != d || bias.numel() != d) detail::shape_mismatch("layer_norm", x.shape(), gain.shape());
  std::vector<T> out(x.numel()), xhat(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data().data() + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<T>(d);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (in[j] - mu) * inv_std[r];
      out[r * d + j] = gain[j] * xhat[r * d + j] + bias[j];
    }
  }
  return make_result<T>("layer_norm", x.shape(), std::move(out), {x, gain, bias},
                        [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
                          auto& px = *self.parents[0];
                          auto& pg = *self.parents[1];
                          auto& pb = *self.parents[2];
                          std::vector<T> dxhat(d);
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* dy = self.grad.data() + r * d;
                            const T* xh = xhat.data() + r * d;
                            if (pg.requires_grad) {
                              auto& g = detail::grad_of(pg);
                              for (std::size_t j = 0; j < d; ++j) g[j] += dy[j] * xh[j];
                            }
                            if (pb.requires_grad) {
                              auto& g = detail::grad_of(pb);
                              for (std::size_t j = 0; j < d; ++j) g[j] += dy[j];
                            }
                            if (!px.requires_grad) continue;
                            T s1 = T(0), s2 = T(0);
                            for (std::size_t j = 0; j < d; ++j) {
                              dxhat[j] = dy[j] * pg.data[j];
                              s1 += dxhat[j];
                              s2 += dxhat[j] * xh[j];
                            }
                            auto& g = detail::grad_of(px);
                            const T scale_ = inv_std[r] / static_cast<T>(d);
                            for (std::size_t j = 0; j < d; ++j)
                              g[r * d + j] += scale_ * (static_cast<T>(d) * dxhat[j] - s1 - xh[j] * s2);
                          }
                        });
}

// x[B, C] or x[B, C, L]; statistics per channel over batch (and length).
// Running buffers are updated in train mode with momentum `momentum`.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                     Tensor<T>& running_var, Mode mode, T momentum = T(0.1), T eps = T(1e-5)) {
  if (x.rank() != 2 && x.rank() != 3) throw ShapeError("batch_norm expects rank 2 or 3, got " + shape_str(x.shape()));
  const std::size_t bs = x.dim(0), c = x.dim(1), len = x.rank() == 3 ? x.dim(2) : 1;
  if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c || running_var.numel() != c) {
    detail::shape_mismatch("batch_norm", x.shape(), gamma.shape());
  }
  const std::size_t n = bs * len;
  auto at = [c, len](std::size_t b, std::size_t ch, std::size_t l) { return (b * c + ch) * len + l; };
  std::vector<T> mu(c), inv_std(c), out(x.numel()), xhat(x.numel());
  for (std::size_t ch = 0; ch < c; ++ch) {
    T m, v;
    if (mode == Mode::train) {
      if (n < 2) throw ShapeError("batch_norm in train mode needs more than one value per channel");
      m = T(0);
      for (std::size_t b = 0; b < bs; ++b)
        for (std::size_t l = 0; l < len; ++l) m += x[at(b, ch, l)];
      m /= static_cast<T>(n);
      v = T(0);
      for (std::size_t b = 0; b < bs; ++b)
        for (std::size_t l = 0; l < len; ++l) v += (x[at(b, ch, l)] - m) * (x[at(b, ch, l)] - m);
      v /= static_cast<T>(n);
      auto rm = running_mean.mutable_data();
      auto rv = running_var.mutable_data();
      rm[ch] = (T(1) - momentum) * rm[ch] + momentum * m;
      rv[ch] = (T(1) - momentum) * rv[ch] + momentum * v * static_cast<T>(n) / static_cast<T>(n - 1);
    } else {
      m = running_mean[ch];
      v = running_var[ch];
    }
    mu[ch] = m;
    inv_std[ch] = T(1) / std::sqrt(v + eps);
    for (std::size_t b = 0; b < bs; ++b)
      for (std::size_t l = 0; l < len; ++l) {
        const auto i = at(b, ch, l);
        xhat[i] = (x[i] - m) * inv_std[ch];
        out[i] = gamma[ch] * xhat[i] + beta[ch];
      }
  }
  const bool train = mode == Mode::train;
  return make_result<T>(
      "batch_norm", x.shape(), std::move(out), {x, gamma, beta},
      [bs, c, len, n, train, at, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        for (std::size_t ch = 0; ch < c; ++ch) {
          T sdy = T(0), sdyx = T(0);
          for (std::size_t b = 0; b < bs; ++b)
            for (std::size_t l = 0; l < len; ++l) {
              const auto i = at(b, ch, l);
              sdy += self.grad[i];
              sdyx += self.grad[i] * xhat[i];
            }
          if (pg.requires_grad) detail::grad_of(pg)[ch] += sdyx;
          if (pb.requires_grad) detail::grad_of(pb)[ch] += sdy;
          if (!px.requires_grad) continue;
          auto& g = detail::grad_of(px);
          const T gm = pg.data[ch];
          for (std::size_t b = 0; b < bs; ++b)
            for (std::size_t l = 0; l < len; ++l) {
              const auto i = at(b, ch, l);
              if (train) {
                g[i] += gm * inv_std[ch] / static_cast<T>(n) *
                        (static_cast<T>(n) * self.grad[i] - sdy - xhat[i] * sdyx);
              } else {
                g[i] += gm * inv_std[ch] * self.grad[i];
              }
            }
        }
      });
}

// Inverted dropout; eval mode (or p == 0) returns the input unchanged.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, Mode mode, CounterRng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(p));
  if (mode == Mode::eval || p == 0.0) return x;
  const T keep_scale = T(1) / static_cast<T>(1.0 - p);
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() >= p ? keep_scale : T(0);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
  return make_result<T>("dropout", x.shape(), std::move(out), {x}, [mask = std::move(mask)](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = detail::grad_of(p);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

// ---------------------------------------------------------------- convolution

struct Conv2dGeometry {
  std::size_t batch, in_ch, h, w, out_ch, kh, kw, stride, pad, oh, ow;
};

namespace detail {

template <class T>
void im2col(const T* img, const Conv2dGeometry& g, T* cols) {
  const std::size_t ohw = g.oh * g.ow;
  for (std::size_t c = 0; c < g.in_ch; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = cols + ((c * g.kh + ky) * g.kw + kx) * ohw;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            row[oy * g.ow + ox] = (iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w))
                                      ? img[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)]
                                      : T(0);
          }
        }
      }
}

template <class T>
void col2im_add(const T* cols, const Conv2dGeometry& g, T* img) {
  const std::size_t ohw = g.oh * g.ow;
  for (std::size_t c = 0; c < g.in_ch; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = cols + ((c * g.kh + ky) * g.kw + kx) * ohw;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            img[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] += row[oy * g.ow + ox];
          }
        }
      }
}

}  // namespace detail

// x[B, C, H, W], w[O, C, KH, KW], b[O]
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const std::type_identity_t<Tensor<T>>* b, std::size_t stride, std::size_t pad) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1)) detail::shape_mismatch("conv2d", x.shape(), w.shape());
  if (stride == 0) throw ConfigError("conv2d stride must be positive");
  Conv2dGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), stride, pad, 0, 0};
  if (g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw) detail::shape_mismatch("conv2d (kernel larger than input)", x.shape(), w.shape());
  g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
  g.ow = (g.w + 2 * pad - g.kw) / stride + 1;
  const std::size_t ohw = g.oh * g.ow, ckk = g.in_ch * g.kh * g.kw;
  std::vector<T> out(g.batch * g.out_ch * ohw, T(0));
  std::vector<T> cols(ckk * ohw);
  for (std::size_t bi = 0; bi < g.batch; ++bi) {
    detail::im2col(x.data().data() + bi * g.in_ch * g.h * g.w, g, cols.data());
    T* o = out.data() + bi * g.out_ch * ohw;
    if (b)
      for (std::size_t oc = 0; oc < g.out_ch; ++oc) std::fill_n(o + oc * ohw, ohw, (*b)[oc]);
    detail::gemm_nn(g.out_ch, ohw, ckk, w.data().data(), cols.data(), o);
  }
  std::vector<Tensor<T>> inputs{x, w};
  if (b) inputs.push_back(*b);
  return make_result<T>("conv2d", Shape{g.batch, g.out_ch, g.oh, g.ow}, std::move(out), inputs, [g](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    const std::size_t ohw = g.oh * g.ow, ckk = g.in_ch * g.kh * g.kw;
    std::vector<T> cols(ckk * ohw), dcols(ckk * ohw);
    for (std::size_t bi = 0; bi < g.batch; ++bi) {
      const T* dy = self.grad.data() + bi * g.out_ch * ohw;
      if (pw.requires_grad) {
        detail::im2col(px.data.data() + bi * g.in_ch * g.h * g.w, g, cols.data());
        detail::gemm_nt(g.out_ch, ckk, ohw, dy, cols.data(), detail::grad_of(pw).data());
      }
      if (px.requires_grad) {
        std::fill(dcols.begin(), dcols.end(), T(0));
        detail::gemm_tn(ckk, ohw, g.out_ch, pw.data.data(), dy, dcols.data());
        detail::col2im_add(dcols.data(), g, detail::grad_of(px).data() + bi * g.in_ch * g.h * g.w);
      }
      if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
        auto& gb = detail::grad_of(*self.parents[2]);
        for (std::size_t oc = 0; oc < g.out_ch; ++oc)
          for (std::size_t i = 0; i < ohw; ++i) gb[oc] += dy[oc * ohw + i];
      }
    }
  });
}

// x[B, C, H, W] with a kh × kw window; ties resolve to the first maximum in scan order.
template <class T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t kh, std::size_t kw, std::size_t sh, std::size_t sw) {
  if (x.rank() != 4) throw ShapeError("maxpool2d expects rank 4, got " + shape_str(x.shape()));
  const std::size_t bs = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < kh || w < kw || sh == 0 || sw == 0) throw ShapeError("maxpool2d window does not fit " + shape_str(x.shape()));
  const std::size_t oh = (h - kh) / sh + 1, ow = (w - kw) / sw + 1;
  std::vector<T> out(bs * c * oh * ow);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t plane = 0; plane < bs * c; ++plane) {
    const T* in = x.data().data() + plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (oy * sh) * w + ox * sw;
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::size_t i = (oy * sh + ky) * w + ox * sw + kx;
            if (in[i] > in[best]) best = i;
          }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        out[o] = in[best];
        arg[o] = plane * h * w + best;
      }
  }
  return make_result<T>("maxpool2d", Shape{bs, c, oh, ow}, std::move(out), {x}, [arg = std::move(arg)](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = detail::grad_of(p);
    for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
  });
}

template <class T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride) {
  return maxpool2d(x, kernel, kernel, stride, stride);
}

// ---------------------------------------------------------------- losses

// Mean categorical cross-entropy over rows of logits[B, C].
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " + std::to_string(labels.size()) +
                     " labels");
  }
  const std::size_t bs = logits.dim(0), c = logits.dim(1);
  std::vector<T> probs(bs * c);
  T loss = T(0);
  for (std::size_t r = 0; r < bs; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= c) {
      throw LabelError("emotion label " + std::to_string(labels[r]) + " outside [0, " + std::to_string(c) + ")");
    }
    const T* in = logits.data().data() + r * c;
    const T mx = *std::max_element(in, in + c);
    T z = T(0);
    for (std::size_t j = 0; j < c; ++j) z += (probs[r * c + j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] /= z;
    loss += mx + std::log(z) - in[labels[r]];
  }
  loss /= static_cast<T>(bs);
  return make_result<T>("cross_entropy", Shape{}, {loss}, {logits}, [bs, c, labels, probs = std::move(probs)](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = detail::grad_of(p);
    const T s = self.grad[0] / static_cast<T>(bs);
    for (std::size_t r = 0; r < bs; ++r)
      for (std::size_t j = 0; j < c; ++j)
        g[r * c + j] += s * (probs[r * c + j] - (static_cast<int>(j) == labels[r] ? T(1) : T(0)));
  });
}

// Mean binary cross-entropy of sigmoid(logits) against {0,1} targets.
template <class T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const std::vector<int>& targets) {
  if (logits.numel() != targets.size()) {
    throw ShapeError("bce_with_logits: " + std::to_string(logits.numel()) + " logits vs " +
                     std::to_string(targets.size()) + " targets");
  }
  const std::size_t n = targets.size();
  T loss = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] != 0 && targets[i] != 1) throw LabelError("gender label must be 0 or 1, got " + std::to_string(targets[i]));
    const T z = logits[i];
    loss += std::max(z, T(0)) - z * static_cast<T>(targets[i]) + std::log1p(std::exp(-std::abs(z)));
  }
  loss /= static_cast<T>(n);
  return make_result<T>("bce_with_logits", Shape{}, {loss}, {logits}, [n, targets](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = detail::grad_of(p);
    const T s = self.grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T z = p.data[i];
      const T sig = z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
      g[i] += s * (sig - static_cast<T>(targets[i]));
    }
  });
}

}  // namespace camulenet::ad
