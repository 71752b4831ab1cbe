#pragma once

// Exhaustively solvable 2-step decision problems with an exact oracle
// model, for checking that the search concentrates on verified optima.

#include <algorithm>
#include <vector>

#include "acdzero/mcts.hpp"
#include "acdzero/rng.hpp"
#include "acdzero/tensor.hpp"

namespace toy {

struct ToyMdp {
  int n_actions = 3;
  double gamma = 0.99;
  std::vector<double> r0;               // first-step rewards, per action
  std::vector<std::vector<double>> r1;  // second-step rewards [a][b]

  double v1(int a) const { return *std::max_element(r1[a].begin(), r1[a].end()); }
  double q0(int a) const { return r0[a] + gamma * v1(a); }

  int optimal_action() const {
    int best = 0;
    for (int a = 1; a < n_actions; ++a)
      if (q0(a) > q0(best)) best = a;
    return best;
  }

  double optimal_value() const { return q0(optimal_action()); }

  // expected return of acting uniformly at both steps
  double uniform_policy_value() const {
    double total = 0.0;
    for (int a = 0; a < n_actions; ++a) {
      double inner = 0.0;
      for (double r : r1[a]) inner += r;
      total += r0[a] + gamma * inner / n_actions;
    }
    return total / n_actions;
  }
};

// Rewards are uniform in [0,1]; instances are redrawn until the optimal
// root action dominates the runner-up by `gap`. Sixteen simulations over
// uniform priors only concentrate when one action clearly dominates, so
// the generator enforces that regime.
inline ToyMdp random_instance(acdz::Rng& rng, int n_actions = 2, double gap = 0.5) {
  for (;;) {
    ToyMdp m;
    m.n_actions = n_actions;
    m.r0.resize(n_actions);
    m.r1.assign(n_actions, std::vector<double>(n_actions));
    for (int a = 0; a < n_actions; ++a) {
      m.r0[a] = rng.uniform();
      for (int b = 0; b < n_actions; ++b) m.r1[a][b] = rng.uniform();
    }
    std::vector<double> q;
    for (int a = 0; a < n_actions; ++a) q.push_back(m.q0(a));
    std::sort(q.begin(), q.end());
    if (q[q.size() - 1] - q[q.size() - 2] >= gap) return m;
  }
}

// Latent encoding: {depth, state index}. Depth 2 is absorbing with zero
// reward; values are the exact optima of the underlying instance.
class OracleModel : public acdz::SearchModel {
 public:
  explicit OracleModel(const ToyMdp& mdp) : mdp_(mdp), mask_(mdp.n_actions, true) {
    root_ = acdz::Tensor::vec({0.0, 0.0});
  }

  int action_count() const override { return mdp_.n_actions; }
  const std::vector<bool>& legal_mask() const override { return mask_; }
  const acdz::Tensor& root_latent() const override { return root_; }

  acdz::Evaluation evaluate(const acdz::Tensor& latent) override {
    acdz::Evaluation out;
    out.prior.assign(mdp_.n_actions, 1.0 / mdp_.n_actions);
    const int depth = static_cast<int>(latent.values[0]);
    const int state = static_cast<int>(latent.values[1]);
    if (depth == 0)
      out.value = mdp_.optimal_value();
    else if (depth == 1)
      out.value = mdp_.v1(state);
    else
      out.value = 0.0;
    return out;
  }

  std::pair<acdz::Tensor, double> step(const acdz::Tensor& latent, int action) override {
    const int depth = static_cast<int>(latent.values[0]);
    const int state = static_cast<int>(latent.values[1]);
    if (depth == 0)
      return {acdz::Tensor::vec({1.0, static_cast<double>(action)}), mdp_.r0[action]};
    if (depth == 1) return {acdz::Tensor::vec({2.0, 0.0}), mdp_.r1[state][action]};
    return {acdz::Tensor::vec({2.0, 0.0}), 0.0};
  }

 private:
  ToyMdp mdp_;
  std::vector<bool> mask_;
  acdz::Tensor root_;
};

}  // namespace toy
