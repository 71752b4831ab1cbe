#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "acdzero/errors.hpp"

namespace acdz {

// Dense row-major tensor of 64-bit reals, rank 0 (scalar) to 2.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  bool requires_grad = false;

  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> s) {
    Tensor t;
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    t.shape = std::move(s);
    t.values.assign(n, 0.0);
    return t;
  }

  static Tensor scalar(double v) {
    Tensor t;
    t.values = {v};
    return t;
  }

  static Tensor vec(std::vector<double> v) {
    Tensor t;
    t.shape = {v.size()};
    t.values = std::move(v);
    return t;
  }

  static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v) {
    Tensor t;
    t.shape = {r, c};
    t.values = std::move(v);
    if (t.values.size() != r * c) throw ShapeError("matrix: value count does not match shape");
    return t;
  }

  std::size_t rank() const { return shape.size(); }
  std::size_t numel() const { return values.size(); }
  std::size_t rows() const { return rank() == 2 ? shape[0] : (rank() == 1 ? shape[0] : 1); }
  std::size_t cols() const { return rank() == 2 ? shape[1] : 1; }

  double& at(std::size_t i, std::size_t j) { return values[i * shape[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * shape[1] + j]; }

  double item() const {
    if (numel() != 1) throw ContractError("item: tensor is not a scalar");
    return values[0];
  }

  bool finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
  }
};

// Handle to a node on a Tape.
struct Var {
  std::uint32_t id = 0;
};

class ParamStore;
namespace detail {
void accumulate_param_grad(ParamStore& store, std::size_t slot, const std::vector<double>& grad);
}  // namespace detail

// Records forward operations and replays them in reverse to accumulate
// gradients. Nodes are appended in creation order, so every input id
// precedes its output id; backward walks ids downward and visits each
// reachable node exactly once. With gradients disabled the same ops run
// value-only and record nothing extra.
class Tape {
 public:
  Tape() = default;
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  // Valid until the next op is recorded (node storage may reallocate).
  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const std::vector<double>& grad(Var v) const { return nodes_[v.id].grad; }

  Var leaf(Tensor t) {
    return push(std::move(t), nullptr);
  }

  // Leaf backed by a ParamStore entry; its gradient is added into the
  // store when backward() completes.
  Var param_leaf(ParamStore& store, std::size_t slot, Tensor value) {
    Var v = push(std::move(value), nullptr);
    nodes_[v.id].store = &store;
    nodes_[v.id].slot = slot;
    return v;
  }

  // ---- arithmetic ----

  Var matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() == 2 && B.rank() == 2) {
      if (A.shape[1] != B.shape[0])
        throw ShapeError("matmul: inner dimensions differ: " + A.shape_str() + " vs " + B.shape_str());
      Tensor out = Tensor::zeros({A.shape[0], B.shape[1]});
      emap(out) = cmap(A) * cmap(B);
      Var o = push(std::move(out), a, b);
      record(o, [this, a, b, o] {
        const Tensor& Av = value(a);
        const Tensor& Bv = value(b);
        gmap(a) += gcmap(o, Av.shape[0], Bv.shape[1]) * cmap(Bv).transpose();
        gmap(b) += cmap(Av).transpose() * gcmap(o, Av.shape[0], Bv.shape[1]);
      });
      return o;
    }
    if (A.rank() == 2 && B.rank() == 1) {
      if (A.shape[1] != B.shape[0])
        throw ShapeError("matmul: inner dimensions differ: " + A.shape_str() + " vs " + B.shape_str());
      Tensor out = Tensor::zeros({A.shape[0]});
      evmap(out) = cmap(A) * cvmap(B);
      Var o = push(std::move(out), a, b);
      record(o, [this, a, b, o] {
        const Tensor& Av = value(a);
        const Tensor& Bv = value(b);
        gvmap(a, Av.numel()) += gvcmap(o) * cvmap(Bv).transpose();  // outer product, flattened
        gvmap2(b) += cmap(Av).transpose() * gvcmap(o);
      });
      return o;
    }
    if (A.rank() == 1 && B.rank() == 2) {
      if (A.shape[0] != B.shape[0])
        throw ShapeError("matmul: inner dimensions differ: " + A.shape_str() + " vs " + B.shape_str());
      Tensor out = Tensor::zeros({B.shape[1]});
      evmap(out) = (cvmap(A).transpose() * cmap(B)).transpose();
      Var o = push(std::move(out), a, b);
      record(o, [this, a, b, o] {
        const Tensor& Av = value(a);
        const Tensor& Bv = value(b);
        gvmap2(a) += cmap(Bv) * gvcmap(o);
        gvmap(b, Bv.numel()) += cvmap(Av) * gvcmap(o).transpose();
      });
      return o;
    }
    throw ShapeError("matmul: unsupported ranks " + A.shape_str() + " vs " + B.shape_str());
  }

  Var add(Var a, Var b) { return elementwise_pair(a, b, "add", [](double x, double y) { return x + y; }, 1.0, 1.0); }
  Var sub(Var a, Var b) { return elementwise_pair(a, b, "sub", [](double x, double y) { return x - y; }, 1.0, -1.0); }

  Var mul(Var a, Var b) {
    check_same_shape(value(a), value(b), "mul");
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= value(b).values[i];
    Var o = push(std::move(out), a, b);
    record(o, [this, a, b, o] {
      const auto& g = nodes_[o.id].grad;
      auto& ga = nodes_[a.id].grad;
      auto& gb = nodes_[b.id].grad;
      const auto& av = value(a).values;
      const auto& bv = value(b).values;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * bv[i];
        gb[i] += g[i] * av[i];
      }
    });
    return o;
  }

  Var add_scalar(Var a, double c) { return unary(a, [c](double x) { return x + c; }, [](double) { return 1.0; }); }
  Var mul_scalar(Var a, double c) { return unary(a, [c](double x) { return x * c; }, [c](double) { return c; }); }
  Var clamp_min(Var a, double c) {
    return unary(a, [c](double x) { return x < c ? c : x; }, [c](double x) { return x < c ? 0.0 : 1.0; });
  }

  Var tanh(Var a) {
    return unary(a, [](double x) { return std::tanh(x); },
                 [](double x) { double t = std::tanh(x); return 1.0 - t * t; });
  }
  Var sigmoid(Var a) {
    return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                 [](double x) { double s = 1.0 / (1.0 + std::exp(-x)); return s * (1.0 - s); });
  }
  Var relu(Var a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
  }
  Var exp(Var a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
  }
  Var log(Var a) {
    return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
  }

  // Numerically stabilized softmax over a rank-1 tensor. Masked entries
  // are exactly 0 in the output and receive no gradient.
  Var softmax(Var a, const std::vector<bool>* mask = nullptr) {
    const Tensor& x = value(a);
    if (x.rank() != 1) throw ShapeError("softmax: expected rank-1 input, got " + x.shape_str());
    if (mask && mask->size() != x.numel())
      throw ShapeError("softmax: mask length does not match input length");
    double hi = -1e308;
    bool any = false;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      if (mask && !(*mask)[i]) continue;
      any = true;
      hi = std::max(hi, x.values[i]);
    }
    if (!any) throw EmptySupportError("softmax: all entries masked");
    Tensor out = Tensor::zeros({x.numel()});
    double total = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      if (mask && !(*mask)[i]) continue;
      out.values[i] = std::exp(x.values[i] - hi);
      total += out.values[i];
    }
    for (std::size_t i = 0; i < x.numel(); ++i) out.values[i] /= total;
    std::vector<bool> m = mask ? *mask : std::vector<bool>(x.numel(), true);
    Var o = push(std::move(out), a);
    record(o, [this, a, o, m = std::move(m)] {
      const auto& y = value(o).values;
      const auto& g = nodes_[o.id].grad;
      auto& ga = nodes_[a.id].grad;
      double dot = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i)
        if (m[i]) dot += g[i] * y[i];
      for (std::size_t i = 0; i < y.size(); ++i)
        if (m[i]) ga[i] += y[i] * (g[i] - dot);
    });
    return o;
  }

  // Concatenation along axis 0 (vectors end to end, matrices stacked by
  // rows) or axis 1 (matrix columns side by side).
  Var concat(Var a, Var b, int axis = 0) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    Tensor out;
    if (axis == 0 && A.rank() == 1 && B.rank() == 1) {
      out = Tensor::zeros({A.numel() + B.numel()});
    } else if (axis == 0 && A.rank() == 2 && B.rank() == 2 && A.shape[1] == B.shape[1]) {
      out = Tensor::zeros({A.shape[0] + B.shape[0], A.shape[1]});
    } else if (axis == 1 && A.rank() == 2 && B.rank() == 2 && A.shape[0] == B.shape[0]) {
      out = Tensor::zeros({A.shape[0], A.shape[1] + B.shape[1]});
      for (std::size_t i = 0; i < A.shape[0]; ++i) {
        for (std::size_t j = 0; j < A.shape[1]; ++j) out.at(i, j) = A.at(i, j);
        for (std::size_t j = 0; j < B.shape[1]; ++j) out.at(i, A.shape[1] + j) = B.at(i, j);
      }
      Var o = push(std::move(out), a, b);
      record(o, [this, a, b, o] {
        const Tensor& Av = value(a);
        const Tensor& Bv = value(b);
        const auto& g = nodes_[o.id].grad;
        auto& ga = nodes_[a.id].grad;
        auto& gb = nodes_[b.id].grad;
        const std::size_t w = Av.shape[1] + Bv.shape[1];
        for (std::size_t i = 0; i < Av.shape[0]; ++i) {
          for (std::size_t j = 0; j < Av.shape[1]; ++j) ga[i * Av.shape[1] + j] += g[i * w + j];
          for (std::size_t j = 0; j < Bv.shape[1]; ++j) gb[i * Bv.shape[1] + j] += g[i * w + Av.shape[1] + j];
        }
      });
      return o;
    } else {
      throw ShapeError("concat: incompatible shapes " + A.shape_str() + " vs " + B.shape_str());
    }
    for (std::size_t i = 0; i < A.numel(); ++i) out.values[i] = A.values[i];
    for (std::size_t i = 0; i < B.numel(); ++i) out.values[A.numel() + i] = B.values[i];
    Var o = push(std::move(out), a, b);
    record(o, [this, a, b, o] {
      const std::size_t na = value(a).numel();
      const auto& g = nodes_[o.id].grad;
      auto& ga = nodes_[a.id].grad;
      auto& gb = nodes_[b.id].grad;
      for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
    });
    return o;
  }

  // Sum along axis 0: matrix -> vector of column sums, vector -> scalar.
  Var sum0(Var a) { return pool0(a, false); }
  // Mean along axis 0.
  Var mean0(Var a) { return pool0(a, true); }

  // Row gather: out[i] = a[indices[i]] for a rank-2 input.
  Var gather0(Var a, std::vector<std::size_t> indices) {
    const Tensor& A = value(a);
    if (A.rank() != 2) throw ShapeError("gather0: expected rank-2 input, got " + A.shape_str());
    for (std::size_t idx : indices)
      if (idx >= A.shape[0]) throw ContractError("gather0: row index out of range");
    Tensor out = Tensor::zeros({indices.size(), A.shape[1]});
    for (std::size_t i = 0; i < indices.size(); ++i)
      for (std::size_t j = 0; j < A.shape[1]; ++j) out.at(i, j) = A.at(indices[i], j);
    Var o = push(std::move(out), a);
    record(o, [this, a, o, indices = std::move(indices)] {
      const std::size_t w = value(a).shape[1];
      const auto& g = nodes_[o.id].grad;
      auto& ga = nodes_[a.id].grad;
      for (std::size_t i = 0; i < indices.size(); ++i)
        for (std::size_t j = 0; j < w; ++j) ga[indices[i] * w + j] += g[i * w + j];
    });
    return o;
  }

  // Metadata-only reshape; numel must be preserved.
  Var reshape(Var a, std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    if (n != value(a).numel())
      throw ShapeError("reshape: numel mismatch for " + value(a).shape_str());
    Tensor out = value(a);
    out.shape = std::move(shape);
    Var o = push(std::move(out), a);
    record(o, [this, a, o] {
      const auto& g = nodes_[o.id].grad;
      auto& ga = nodes_[a.id].grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    return o;
  }

  // ---- backward ----

  // Accumulates d(loss)/d(param) into every ParamStore leaf reachable
  // from `loss`. Grads add across calls; zeroing is the caller's job.
  void backward(Var loss) {
    if (!grad_enabled_) throw ContractError("backward: tape was created with gradients disabled");
    if (value(loss).numel() != 1) throw ContractError("backward: loss must be a scalar");
    for (auto& n : nodes_) {
      n.grad.assign(n.value.numel(), 0.0);
      n.touched = false;
    }
    nodes_[loss.id].grad[0] = 1.0;
    nodes_[loss.id].touched = true;
    for (std::uint32_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.touched) continue;
      if (n.back) {
        for (int k = 0; k < n.n_inputs; ++k) nodes_[n.inputs[k].id].touched = true;
        n.back();
      }
      if (n.store) detail::accumulate_param_grad(*n.store, n.slot, n.grad);
    }
  }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    std::function<void()> back;
    Var inputs[2];
    int n_inputs = 0;
    bool touched = false;
    ParamStore* store = nullptr;
    std::size_t slot = 0;
  };

  Var push(Tensor t, std::nullptr_t) {
    nodes_.push_back(Node{std::move(t), {}, nullptr, {}, 0, false, nullptr, 0});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }
  Var push(Tensor t, Var a) {
    nodes_.push_back(Node{std::move(t), {}, nullptr, {a, Var{}}, 1, false, nullptr, 0});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }
  Var push(Tensor t, Var a, Var b) {
    nodes_.push_back(Node{std::move(t), {}, nullptr, {a, b}, 2, false, nullptr, 0});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  template <typename F>
  void record(Var out, F&& fn) {
    if (grad_enabled_) nodes_[out.id].back = std::forward<F>(fn);
  }

  template <typename FwdF, typename DerF>
  Var unary(Var a, FwdF fwd, DerF der) {
    Tensor out = value(a);
    for (double& v : out.values) v = fwd(v);
    Var o = push(std::move(out), a);
    record(o, [this, a, o, der] {
      const auto& g = nodes_[o.id].grad;
      auto& ga = nodes_[a.id].grad;
      const auto& x = value(a).values;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * der(x[i]);
    });
    return o;
  }

  template <typename F>
  Var elementwise_pair(Var a, Var b, const char* name, F fwd, double da, double db) {
    check_same_shape(value(a), value(b), name);
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = fwd(out.values[i], value(b).values[i]);
    Var o = push(std::move(out), a, b);
    record(o, [this, a, b, o, da, db] {
      const auto& g = nodes_[o.id].grad;
      auto& ga = nodes_[a.id].grad;
      auto& gb = nodes_[b.id].grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * da;
        gb[i] += g[i] * db;
      }
    });
    return o;
  }

  Var pool0(Var a, bool mean) {
    const Tensor& A = value(a);
    if (A.rank() == 2) {
      const double scale = mean ? 1.0 / static_cast<double>(A.shape[0]) : 1.0;
      Tensor out = Tensor::zeros({A.shape[1]});
      for (std::size_t i = 0; i < A.shape[0]; ++i)
        for (std::size_t j = 0; j < A.shape[1]; ++j) out.values[j] += A.at(i, j);
      for (double& v : out.values) v *= scale;
      Var o = push(std::move(out), a);
      record(o, [this, a, o, scale] {
        const Tensor& Av = value(a);
        const auto& g = nodes_[o.id].grad;
        auto& ga = nodes_[a.id].grad;
        for (std::size_t i = 0; i < Av.shape[0]; ++i)
          for (std::size_t j = 0; j < Av.shape[1]; ++j) ga[i * Av.shape[1] + j] += g[j] * scale;
      });
      return o;
    }
    if (A.rank() == 1) {
      const double scale = mean ? 1.0 / static_cast<double>(A.numel()) : 1.0;
      double total = 0.0;
      for (double v : A.values) total += v;
      Tensor out = Tensor::scalar(total * scale);
      Var o = push(std::move(out), a);
      record(o, [this, a, o, scale] {
        const double g = nodes_[o.id].grad[0];
        auto& ga = nodes_[a.id].grad;
        for (double& v : ga) v += g * scale;
      });
      return o;
    }
    throw ShapeError("pool0: expected rank-1 or rank-2 input, got " + A.shape_str());
  }

  static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape)
      throw ShapeError(std::string(op) + ": shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
  }

  // Eigen views over flat storage (row-major).
  using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using EVec = Eigen::VectorXd;

  static Eigen::Map<const EMat> cmap(const Tensor& t) {
    return {t.values.data(), static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1])};
  }
  static Eigen::Map<EMat> emap(Tensor& t) {
    return {t.values.data(), static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1])};
  }
  static Eigen::Map<const EVec> cvmap(const Tensor& t) {
    return {t.values.data(), static_cast<Eigen::Index>(t.numel())};
  }
  static Eigen::Map<EVec> evmap(Tensor& t) {
    return {t.values.data(), static_cast<Eigen::Index>(t.numel())};
  }
  Eigen::Map<EMat> gmap(Var v) {
    const Tensor& t = value(v);
    return {nodes_[v.id].grad.data(), static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1])};
  }
  Eigen::Map<EMat> gvmap(Var v, std::size_t numel) {
    const Tensor& t = value(v);
    (void)numel;
    return {nodes_[v.id].grad.data(), static_cast<Eigen::Index>(t.shape[0]),
            static_cast<Eigen::Index>(t.rank() == 2 ? t.shape[1] : 1)};
  }
  Eigen::Map<EVec> gvmap2(Var v) {
    return {nodes_[v.id].grad.data(), static_cast<Eigen::Index>(nodes_[v.id].grad.size())};
  }
  Eigen::Map<const EMat> gcmap(Var v, std::size_t r, std::size_t c) {
    return {nodes_[v.id].grad.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
  }
  Eigen::Map<const EVec> gvcmap(Var v) {
    return {nodes_[v.id].grad.data(), static_cast<Eigen::Index>(nodes_[v.id].grad.size())};
  }

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

}  // namespace acdz
