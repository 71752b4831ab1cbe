#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "acdzero/errors.hpp"
#include "acdzero/tensor.hpp"

namespace acdz {

// Named parameter tensors with per-parameter Adam moments and a shared
// step counter. Names are unique and shapes are frozen at creation.
class ParamStore {
 public:
  std::size_t create(const std::string& name, Tensor init) {
    if (index_.count(name)) throw ContractError("ParamStore: duplicate parameter name: " + name);
    Entry e;
    e.name = name;
    e.value = std::move(init);
    e.value.requires_grad = true;
    e.grad.assign(e.value.numel(), 0.0);
    e.m.assign(e.value.numel(), 0.0);
    e.v.assign(e.value.numel(), 0.0);
    entries_.push_back(std::move(e));
    index_[name] = entries_.size() - 1;
    return entries_.size() - 1;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t slot(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("ParamStore: unknown parameter: " + name);
    return it->second;
  }

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t s) const { return entries_[s].name; }
  const Tensor& value(std::size_t s) const { return entries_[s].value; }
  const Tensor& value(const std::string& n) const { return entries_[slot(n)].value; }
  Tensor& mutable_value(std::size_t s) { return entries_[s].value; }
  const std::vector<double>& grad(std::size_t s) const { return entries_[s].grad; }
  const std::vector<double>& grad(const std::string& n) const { return entries_[slot(n)].grad; }
  std::vector<double>& mutable_grad(std::size_t s) { return entries_[s].grad; }
  std::uint64_t step_count() const { return step_; }

  // Inserts the parameter as a leaf on `tape`; backward() will add the
  // leaf's gradient into this store.
  Var use(Tape& tape, const std::string& name) {
    std::size_t s = slot(name);
    return tape.param_leaf(*this, s, entries_[s].value);
  }

  void zero_grad() {
    for (auto& e : entries_) e.grad.assign(e.grad.size(), 0.0);
  }

  double grad_norm() const {
    double sq = 0.0;
    for (const auto& e : entries_)
      for (double g : e.grad) sq += g * g;
    return std::sqrt(sq);
  }

  void clip_grad_norm(double max_norm) {
    const double norm = grad_norm();
    if (norm <= max_norm || norm == 0.0) return;
    const double scale = max_norm / norm;
    for (auto& e : entries_)
      for (double& g : e.grad) g *= scale;
  }

  // Bias-corrected Adam update over all parameters; advances the step
  // counter once per call.
  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    step_ += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
    for (auto& e : entries_) {
      for (std::size_t i = 0; i < e.value.values.size(); ++i) {
        const double g = e.grad[i];
        e.m[i] = beta1 * e.m[i] + (1.0 - beta1) * g;
        e.v[i] = beta2 * e.v[i] + (1.0 - beta2) * g * g;
        const double mhat = e.m[i] / bc1;
        const double vhat = e.v[i] / bc2;
        e.value.values[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  std::vector<std::pair<std::string, std::vector<std::size_t>>> manifest() const {
    std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.emplace_back(e.name, e.value.shape);
    return out;
  }

  bool all_finite() const {
    for (const auto& e : entries_)
      if (!e.value.finite()) return false;
    return true;
  }

  // ---- checkpoint format ----
  // "ACDZ", version u32, count u32, then per parameter: name length u32,
  // UTF-8 name, rank u32, dims u64 each, little-endian f64 values.

  std::vector<std::uint8_t> save_bytes() const {
    std::vector<std::uint8_t> out;
    out.push_back('A'); out.push_back('C'); out.push_back('D'); out.push_back('Z');
    put_u32(out, kFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
      put_u32(out, static_cast<std::uint32_t>(e.name.size()));
      out.insert(out.end(), e.name.begin(), e.name.end());
      put_u32(out, static_cast<std::uint32_t>(e.value.rank()));
      for (std::size_t d : e.value.shape) put_u64(out, static_cast<std::uint64_t>(d));
      for (double v : e.value.values) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put_u64(out, bits);
      }
    }
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open checkpoint for writing: " + path);
    const auto bytes = save_bytes();
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("short write to checkpoint: " + path);
  }

  static ParamStore load_bytes(const std::vector<std::uint8_t>& bytes) {
    Reader r{bytes.data(), bytes.size(), 0};
    if (r.remaining() < 4 || std::memcmp(r.ptr(), "ACDZ", 4) != 0)
      throw CheckpointError("bad checkpoint magic");
    r.skip(4);
    const std::uint32_t version = r.u32();
    if (version != kFormatVersion)
      throw CheckpointError("unsupported checkpoint version: " + std::to_string(version));
    const std::uint32_t count = r.u32();
    ParamStore store;
    for (std::uint32_t p = 0; p < count; ++p) {
      const std::uint32_t name_len = r.u32();
      std::string name(reinterpret_cast<const char*>(r.ptr()), name_len);
      r.skip(name_len);
      const std::uint32_t rank = r.u32();
      if (rank > 2) throw CheckpointError("checkpoint parameter rank > 2: " + name);
      std::vector<std::size_t> shape(rank);
      std::size_t numel = 1;
      for (std::uint32_t d = 0; d < rank; ++d) {
        shape[d] = static_cast<std::size_t>(r.u64());
        numel *= shape[d];
      }
      Tensor t = Tensor::zeros(shape);
      for (std::size_t i = 0; i < numel; ++i) {
        const std::uint64_t bits = r.u64();
        std::memcpy(&t.values[i], &bits, 8);
      }
      store.create(name, std::move(t));
    }
    if (r.remaining() != 0) throw CheckpointError("trailing bytes after checkpoint payload");
    return store;
  }

  static ParamStore load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return load_bytes(bytes);
  }

 private:
  static constexpr std::uint32_t kFormatVersion = 1;

  struct Entry {
    std::string name;
    Tensor value;
    std::vector<double> grad;
    std::vector<double> m, v;
  };

  struct Reader {
    const std::uint8_t* data;
    std::size_t size;
    std::size_t pos;
    std::size_t remaining() const { return size - pos; }
    const std::uint8_t* ptr() const { return data + pos; }
    void skip(std::size_t n) {
      if (remaining() < n) throw CheckpointError("truncated checkpoint");
      pos += n;
    }
    std::uint32_t u32() {
      if (remaining() < 4) throw CheckpointError("truncated checkpoint");
      std::uint32_t v = 0;
      for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data[pos + i]) << (8 * i);
      pos += 4;
      return v;
    }
    std::uint64_t u64() {
      if (remaining() < 8) throw CheckpointError("truncated checkpoint");
      std::uint64_t v = 0;
      for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data[pos + i]) << (8 * i);
      pos += 8;
      return v;
    }
  };

  static void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  static void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  std::uint64_t step_ = 0;
};

namespace detail {
inline void accumulate_param_grad(ParamStore& store, std::size_t slot, const std::vector<double>& grad) {
  auto& g = store.mutable_grad(slot);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += grad[i];
}
}  // namespace detail

}  // namespace acdz
