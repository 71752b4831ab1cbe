#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace acdz {

// Deterministic, platform-independent random stream (SplitMix64 core).
// Streams are cheap value types; sub-streams are derived by mixing key
// words into the state, so a draw keyed by (seed, step, entity) never
// shifts when unrelated code adds or removes draws elsewhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix(seed ^ 0x9e3779b97f4a7c15ull)) {}

  Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) : Rng(seed) {
    for (std::uint64_t k : keys) state_ = mix(state_ ^ mix(k + 0x632be59bd9b4e019ull));
  }

  Rng substream(std::initializer_list<std::uint64_t> keys) const {
    Rng out = *this;
    for (std::uint64_t k : keys) out.state_ = mix(out.state_ ^ mix(k + 0x632be59bd9b4e019ull));
    return out;
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  // Uniform integer in [lo, hi], inclusive. Fixed-point scaling keeps the
  // mapping identical on every platform.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
    const std::uint64_t x = next_u64();
    return lo + static_cast<std::int64_t>(
                    static_cast<std::uint64_t>((static_cast<unsigned __int128>(x) * range) >> 64));
  }

  // Uniform real in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller; both draws consumed every call.
  double normal() {
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0,1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Gamma(alpha, 1) via Marsaglia-Tsang, with the alpha < 1 boost.
  double gamma(double alpha) {
    if (alpha < 1.0) {
      const double u = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
      return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
  }

  // Dirichlet(alpha, ..., alpha) over n components.
  std::vector<double> dirichlet(double alpha, std::size_t n) {
    std::vector<double> out(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = gamma(alpha);
      total += out[i];
    }
    if (total <= 0.0) total = 1.0;
    for (double& v : out) v /= total;
    return out;
  }

  // Index sampled from an (unnormalized, non-negative) weight vector.
  std::size_t categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = uniform() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      u -= weights[i];
      if (u < 0.0) return i;
    }
    return weights.size() - 1;
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t state_;
};

}  // namespace acdz
