#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "acdzero/param_store.hpp"
#include "acdzero/rng.hpp"
#include "acdzero/tensor.hpp"

// Layer helpers over the tape. All linear weights are stored [in x out]
// so the same parameters serve vector inputs (x . W) and row-batched
// inputs (X . W) without a transpose.
namespace acdz::nn {

inline Tensor xavier_uniform(std::size_t in, std::size_t out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor t = Tensor::zeros({in, out});
  for (double& v : t.values) v = (rng.uniform() * 2.0 - 1.0) * limit;
  return t;
}

inline void declare_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                           Rng& rng, bool zero_init = false) {
  store.create(prefix + ".w", zero_init ? Tensor::zeros({in, out}) : xavier_uniform(in, out, rng));
  store.create(prefix + ".b", Tensor::zeros({out}));
}

// y = x.W + b for a rank-1 x.
inline Var linear(Tape& t, ParamStore& s, const std::string& prefix, Var x) {
  Var w = s.use(t, prefix + ".w");
  Var b = s.use(t, prefix + ".b");
  return t.add(t.matmul(x, w), b);
}

// Y = X.W + 1.b for a rank-2 X of n rows.
inline Var linear_rows(Tape& t, ParamStore& s, const std::string& prefix, Var x) {
  const std::size_t n = t.value(x).shape[0];
  Var w = s.use(t, prefix + ".w");
  Var b = s.use(t, prefix + ".b");
  Var ones = t.leaf(Tensor::matrix(n, 1, std::vector<double>(n, 1.0)));
  const std::size_t out = t.value(b).numel();
  Var bias = t.matmul(ones, t.reshape(b, {1, out}));
  return t.add(t.matmul(x, w), bias);
}

// Two-layer perceptron, relu hidden.
inline void declare_mlp2(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden,
                         std::size_t out, Rng& rng, bool zero_last = false) {
  declare_linear(store, prefix + ".l0", in, hidden, rng);
  declare_linear(store, prefix + ".l1", hidden, out, rng, zero_last);
}

inline Var mlp2(Tape& t, ParamStore& s, const std::string& prefix, Var x) {
  return linear(t, s, prefix + ".l1", t.relu(linear(t, s, prefix + ".l0", x)));
}

inline Var mlp2_rows(Tape& t, ParamStore& s, const std::string& prefix, Var x) {
  return linear_rows(t, s, prefix + ".l1", t.relu(linear_rows(t, s, prefix + ".l0", x)));
}

// Gated recurrent cell:
//   z = sigmoid(Wz.[x,h] + bz)
//   r = sigmoid(Wr.[x,h] + br)
//   hc = tanh(Wh.[x, r*h] + bh)
//   h' = (1-z)*h + z*hc
inline void declare_gru(ParamStore& store, const std::string& prefix, std::size_t d_in, std::size_t d_h,
                        Rng& rng) {
  declare_linear(store, prefix + ".z", d_in + d_h, d_h, rng);
  declare_linear(store, prefix + ".r", d_in + d_h, d_h, rng);
  declare_linear(store, prefix + ".c", d_in + d_h, d_h, rng);
}

inline Var gru_cell(Tape& t, ParamStore& s, const std::string& prefix, Var x, Var h) {
  const Tensor& xv = t.value(x);
  const Tensor& hv = t.value(h);
  const Tensor& wz = s.value(prefix + ".z.w");
  if (xv.rank() != 1 || hv.rank() != 1 || xv.numel() + hv.numel() != wz.shape[0])
    throw ShapeError("gru_cell: input " + xv.shape_str() + " and hidden " + hv.shape_str() +
                     " do not match weights " + wz.shape_str());
  Var xh = t.concat(x, h);
  Var z = t.sigmoid(linear(t, s, prefix + ".z", xh));
  Var r = t.sigmoid(linear(t, s, prefix + ".r", xh));
  Var xrh = t.concat(x, t.mul(r, h));
  Var hc = t.tanh(linear(t, s, prefix + ".c", xrh));
  Var keep = t.mul(t.add_scalar(t.mul_scalar(z, -1.0), 1.0), h);
  return t.add(keep, t.mul(z, hc));
}

}  // namespace acdz::nn
