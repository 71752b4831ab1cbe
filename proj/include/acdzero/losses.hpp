#pragma once

#include <cmath>
#include <vector>

#include "acdzero/errors.hpp"
#include "acdzero/tensor.hpp"

namespace acdz {

// Generalized advantage estimation over one trajectory's rewards and
// critic values; `bootstrap` is the critic value after the final step
// (time-limited episodes bootstrap through the cutoff).
inline std::vector<double> compute_advantages(const std::vector<double>& rewards,
                                              const std::vector<double>& values, double bootstrap,
                                              double gamma, double gae_lambda) {
  if (rewards.size() != values.size())
    throw ContractError("compute_advantages: rewards/values length mismatch");
  const std::size_t n = rewards.size();
  std::vector<double> adv(n, 0.0);
  double carry = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double next_value = t + 1 < n ? values[t + 1] : bootstrap;
    const double delta = rewards[t] + gamma * next_value - values[t];
    carry = delta + gamma * gae_lambda * carry;
    adv[t] = carry;
  }
  return adv;
}

inline std::vector<double> value_targets_from(const std::vector<double>& advantages,
                                              const std::vector<double>& values) {
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = advantages[i] + values[i];
  return out;
}

namespace op {

// min(a, b) = a - relu(a - b), elementwise.
inline Var vmin(Tape& t, Var a, Var b) { return t.sub(a, t.relu(t.sub(a, b))); }

// clamp into [lo, hi].
inline Var vclamp(Tape& t, Var x, double lo, double hi) {
  Var low = t.clamp_min(x, lo);
  return t.mul_scalar(t.clamp_min(t.mul_scalar(low, -1.0), -hi), -1.0);
}

}  // namespace op

// Clipped surrogate objective, negated for minimization:
//   -mean_t min(r_t A_t, clip(r_t, 1-eps, 1+eps) A_t),
//   r_t = exp(logp_new - logp_old).
inline Var ppo_loss(Tape& t, Var logp_new, const std::vector<double>& logp_old,
                    const std::vector<double>& advantages, double clip_epsilon) {
  const std::size_t n = t.value(logp_new).numel();
  if (n == 0) throw ContractError("ppo_loss: empty batch");
  if (logp_old.size() != n || advantages.size() != n)
    throw ContractError("ppo_loss: batch length mismatch");
  Var old = t.leaf(Tensor::vec(logp_old));
  Var adv = t.leaf(Tensor::vec(advantages));
  Var ratio = t.exp(t.sub(logp_new, old));
  Var surrogate = op::vmin(t, t.mul(ratio, adv),
                           t.mul(op::vclamp(t, ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon), adv));
  return t.mul_scalar(t.mean0(surrogate), -1.0);
}

// KL(pi_mcts || pi_theta) over the legal actions, with pi_theta floored
// at 1e-12 inside the log. `log_probs` must already be the floored log
// of the actor distribution.
inline Var distill_loss(Tape& t, Var log_probs, const std::vector<double>& pi_mcts,
                        const std::vector<bool>& mask) {
  const std::size_t n = t.value(log_probs).numel();
  if (pi_mcts.size() != n || mask.size() != n)
    throw ContractError("distill_loss: support size mismatch");
  double entropy = 0.0;  // sum pi ln pi, constant in theta
  std::vector<double> target(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (pi_mcts[i] > 0.0 && !mask[i])
      throw ContractError("distill_loss: target mass on a masked action");
    if (pi_mcts[i] > 0.0) {
      entropy += pi_mcts[i] * std::log(pi_mcts[i]);
      target[i] = pi_mcts[i];
    }
  }
  Var cross = t.sum0(t.mul(t.leaf(Tensor::vec(target)), log_probs));
  return t.add_scalar(t.mul_scalar(cross, -1.0), entropy);
}

// Single-sample entropy bonus term (negated entropy of the actor), used
// only when the entropy coefficient is switched on.
inline Var entropy_term(Tape& t, Var probs, Var log_probs) {
  return t.sum0(t.mul(probs, log_probs));
}

}  // namespace acdz
