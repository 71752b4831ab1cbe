#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <ostream>
#include <utility>
#include <vector>

#include "acdzero/config.hpp"
#include "acdzero/errors.hpp"
#include "acdzero/graph.hpp"
#include "acdzero/latent.hpp"
#include "acdzero/rng.hpp"
#include "acdzero/tensor.hpp"

namespace acdz {

enum class SearchMode { Train, Eval };

struct Evaluation {
  std::vector<double> prior;
  double value = 0.0;
};

// What the tree needs from a model: a root embedding, per-latent priors
// and values, and a latent transition with predicted reward. The real
// network and test oracles both implement it.
class SearchModel {
 public:
  virtual ~SearchModel() = default;
  virtual int action_count() const = 0;
  virtual const std::vector<bool>& legal_mask() const = 0;
  virtual const Tensor& root_latent() const = 0;
  virtual Evaluation evaluate(const Tensor& latent) = 0;
  virtual std::pair<Tensor, double> step(const Tensor& latent, int action) = 0;
};

// Per-node child statistics. Q(s,a) is kept as a running sum so it is
// exactly the mean of the returns backed up through the edge.
struct SearchNode {
  Tensor latent;
  bool expanded = false;
  std::vector<double> prior;
  std::vector<int> visit_count;
  std::vector<double> value_sum;
  std::vector<double> reward;
  std::vector<std::unique_ptr<SearchNode>> children;

  void allocate(int n_actions) {
    prior.assign(n_actions, 0.0);
    visit_count.assign(n_actions, 0);
    value_sum.assign(n_actions, 0.0);
    reward.assign(n_actions, 0.0);
    children.resize(n_actions);
  }

  double q(int a) const {
    return visit_count[a] > 0 ? value_sum[a] / static_cast<double>(visit_count[a]) : 0.0;
  }

  int total_visits() const {
    int n = 0;
    for (int v : visit_count) n += v;
    return n;
  }
};

// Tree-wide running min-max used to squash Q into [0,1] before the
// selection rule compares it against the prior term.
struct MinMaxTracker {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void update(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }

  double normalize(double v) const {
    if (!(hi > lo)) return 0.0;
    return (v - lo) / (hi - lo);
  }
};

struct SearchResult {
  std::vector<double> policy;
  double root_value = 0.0;
  std::vector<int> visit_counts;
  std::vector<int> principal_variation;
};

// Per-simulation log consumed by the Q-mean exactness checks and the
// trace dump: path actions from the root and the return G at each depth.
struct SearchTraceEntry {
  int simulation = 0;
  std::vector<int> path;
  std::vector<double> returns;
  double leaf_value = 0.0;
};

struct SearchTrace {
  std::vector<SearchTraceEntry> simulations;
  std::unique_ptr<SearchNode> root;  // final tree, for exactness checks
};

// Line format: sim=<k> path=<a0,a1,...> g=<G0,G1,...>
inline void write_search_trace(std::ostream& os, const SearchTrace& trace) {
  for (const auto& s : trace.simulations) {
    os << "sim=" << s.simulation << " path=";
    for (std::size_t i = 0; i < s.path.size(); ++i) os << (i ? "," : "") << s.path[i];
    os << " g=";
    char buf[32];
    for (std::size_t i = 0; i < s.returns.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", s.returns[i]);
      os << (i ? "," : "") << buf;
    }
    os << "\n";
  }
}

// Counts run_search calls process-wide; ablation tests assert the
// search-free variant never plans.
inline std::atomic<long long>& search_invocations() {
  static std::atomic<long long> counter{0};
  return counter;
}

inline double exploration_scale(int total_visits, const SearchConfig& cfg) {
  if (!cfg.dynamic_c1) return cfg.c_init;
  return cfg.c_init +
         std::log((static_cast<double>(total_visits) + cfg.c_base + 1.0) / cfg.c_base);
}

// pUCT selection: argmax over legal a of
//   Qn(s,a) + P(s,a) * sqrt(sum_b N) / (1 + N(s,a)) * c1
// with Qn min-max normalized (0 for unvisited children), c1 on the
// dynamic schedule, and sqrt(1) substituted at an all-unvisited node so
// the prior stays decisive on the first pass. Ties break low.
inline int select_child(const SearchNode& node, const SearchConfig& cfg, const MinMaxTracker& minmax,
                        const std::vector<bool>& mask) {
  if (!node.expanded) throw ContractError("select_child: node is not expanded");
  const int total = node.total_visits();
  const double sqrt_total = std::sqrt(total == 0 ? 1.0 : static_cast<double>(total));
  const double c1 = exploration_scale(total, cfg);
  int best = -1;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < static_cast<int>(node.prior.size()); ++a) {
    if (!mask[a]) continue;
    const double qn = node.visit_count[a] > 0 ? minmax.normalize(node.q(a)) : 0.0;
    const double score = qn + node.prior[a] * sqrt_total / (1.0 + node.visit_count[a]) * c1;
    if (score > best_score) {
      best_score = score;
      best = a;
    }
  }
  if (best < 0) throw EmptySupportError("select_child: no legal action");
  return best;
}

// P'(s,a) = (1-eps) P(s,a) + eps eta_a, eta ~ Dirichlet(alpha) over the
// legal actions.
inline void add_root_noise(SearchNode& root, const SearchConfig& cfg, Rng& rng,
                           const std::vector<bool>& mask) {
  if (!root.expanded) throw ContractError("add_root_noise: root is not expanded");
  std::vector<int> legal;
  for (int a = 0; a < static_cast<int>(mask.size()); ++a)
    if (mask[a]) legal.push_back(a);
  const auto noise = rng.dirichlet(cfg.dirichlet_alpha, legal.size());
  for (std::size_t i = 0; i < legal.size(); ++i)
    root.prior[legal[i]] =
        (1.0 - cfg.noise_fraction) * root.prior[legal[i]] + cfg.noise_fraction * noise[i];
}

// pi_mcts(a) proportional to N(s,a)^(1/tau); tau = 0 degenerates to the
// lowest-index argmax.
inline std::vector<double> extract_policy(const std::vector<int>& visits, double tau) {
  int total = 0, best = -1;
  for (int a = 0; a < static_cast<int>(visits.size()); ++a) {
    total += visits[a];
    if (best < 0 || visits[a] > visits[best]) best = a;
  }
  if (total < 1) throw ContractError("extract_policy: zero total visits");
  std::vector<double> out(visits.size(), 0.0);
  if (tau <= 0.0) {
    out[best] = 1.0;
    return out;
  }
  const double log_max = std::log(static_cast<double>(visits[best]));
  double norm = 0.0;
  for (std::size_t a = 0; a < visits.size(); ++a) {
    if (visits[a] == 0) continue;
    out[a] = std::exp((std::log(static_cast<double>(visits[a])) - log_max) / tau);
    norm += out[a];
  }
  for (double& v : out) v /= norm;
  return out;
}

namespace detail {

// n-step bootstrapped backup along the simulation path:
//   G_k = sum_j gamma^j r_{k+j} + gamma^(l-k) v_leaf
// folded right-to-left; every edge's mean and count advance once.
inline void backup(std::vector<std::pair<SearchNode*, int>>& path, double leaf_value,
                   const SearchConfig& cfg, MinMaxTracker& minmax, std::vector<double>* returns_out) {
  if (path.empty()) throw ContractError("backup: empty path");
  std::vector<double> returns(path.size(), 0.0);
  double g = leaf_value;
  for (std::size_t k = path.size(); k-- > 0;) {
    auto [node, action] = path[k];
    g = node->reward[action] + cfg.discount * g;
    returns[k] = g;
  }
  for (std::size_t k = 0; k < path.size(); ++k) {
    auto [node, action] = path[k];
    node->value_sum[action] += returns[k];
    node->visit_count[action] += 1;
    minmax.update(node->q(action));
  }
  if (returns_out) *returns_out = std::move(returns);
}

}  // namespace detail

// Runs `cfg.num_simulations` selection / expansion / backup iterations
// in latent space and returns the visit-count policy at the root. All
// rewards inside the tree come from the model's reward head; the
// environment is never consulted.
inline SearchResult run_search(SearchModel& model, const SearchConfig& cfg, SearchMode mode, Rng& rng,
                               SearchTrace* trace = nullptr) {
  search_invocations().fetch_add(1, std::memory_order_relaxed);
  const auto& mask = model.legal_mask();
  const int n_actions = model.action_count();
  {
    bool any = false;
    for (bool b : mask) any = any || b;
    if (!any) throw EmptySupportError("run_search: no legal actions at the root");
  }

  SearchNode root;
  root.latent = model.root_latent();
  root.allocate(n_actions);
  {
    Evaluation eval = model.evaluate(root.latent);
    root.prior = std::move(eval.prior);
    root.expanded = true;
  }
  if (mode == SearchMode::Train && cfg.noise_fraction > 0.0) add_root_noise(root, cfg, rng, mask);

  MinMaxTracker minmax;
  for (int sim = 0; sim < cfg.num_simulations; ++sim) {
    SearchNode* node = &root;
    std::vector<std::pair<SearchNode*, int>> path;
    int action = -1;
    for (;;) {
      action = select_child(*node, cfg, minmax, mask);
      path.emplace_back(node, action);
      if (!node->children[action]) break;
      node = node->children[action].get();
    }

    // expand and evaluate through the learned dynamics
    auto [child_latent, reward] = model.step(node->latent, action);
    node->reward[action] = reward;
    auto child = std::make_unique<SearchNode>();
    child->latent = std::move(child_latent);
    child->allocate(n_actions);
    Evaluation eval = model.evaluate(child->latent);
    child->prior = std::move(eval.prior);
    child->expanded = true;
    node->children[action] = std::move(child);

    std::vector<double> returns;
    detail::backup(path, eval.value, cfg, minmax, trace ? &returns : nullptr);
    if (trace) {
      SearchTraceEntry entry;
      entry.simulation = sim;
      for (const auto& [n, a] : path) entry.path.push_back(a);
      entry.returns = std::move(returns);
      entry.leaf_value = eval.value;
      trace->simulations.push_back(std::move(entry));
    }
  }

  SearchResult result;
  result.visit_counts = root.visit_count;
  const double tau = mode == SearchMode::Train ? cfg.temperature_train : cfg.temperature_eval;
  result.policy = extract_policy(root.visit_count, tau);
  double sum = 0.0;
  int total = 0;
  for (int a = 0; a < n_actions; ++a) {
    sum += root.value_sum[a];
    total += root.visit_count[a];
  }
  result.root_value = total > 0 ? sum / total : 0.0;

  const SearchNode* pv = &root;
  while (pv && pv->expanded && pv->total_visits() > 0) {
    int best = -1;
    for (int a = 0; a < n_actions; ++a)
      if (pv->visit_count[a] > 0 && (best < 0 || pv->visit_count[a] > pv->visit_count[best])) best = a;
    if (best < 0) break;
    result.principal_variation.push_back(best);
    pv = pv->children[best].get();
  }
  if (trace) trace->root = std::make_unique<SearchNode>(std::move(root));
  return result;
}

// Network-backed search model: the root embedding and the per-action
// embeddings are computed once per decision; inner-tree legality reuses
// the root mask (latent states carry no catalog of their own).
class LatentSearchModel : public SearchModel {
 public:
  LatentSearchModel(const LatentModel& model, ParamStore& store, const AttributedGraph& graph,
                    const ActionCatalog& catalog)
      : model_(model), store_(store), mask_(catalog.legal) {
    Tape t(false);
    Var latent = model_.represent(t, store_, graph);
    Var embs = model_.action_embeddings(t, store_, graph, catalog);
    root_ = t.value(latent);
    embeddings_ = t.value(embs);
  }

  int action_count() const override { return static_cast<int>(mask_.size()); }
  const std::vector<bool>& legal_mask() const override { return mask_; }
  const Tensor& root_latent() const override { return root_; }
  const Tensor& action_embedding_matrix() const { return embeddings_; }

  Evaluation evaluate(const Tensor& latent) override {
    Tape t(false);
    Var s = t.leaf(latent);
    Var embs = t.leaf(embeddings_);
    auto [prior, value] = model_.predict(t, store_, s, embs, mask_);
    Evaluation out;
    out.value = t.value(value).item();
    out.prior = t.value(prior).values;
    return out;
  }

  std::pair<Tensor, double> step(const Tensor& latent, int action) override {
    Tape t(false);
    Var s = t.leaf(latent);
    Var a = t.reshape(t.gather0(t.leaf(embeddings_), {static_cast<std::size_t>(action)}),
                      {embeddings_.shape[1]});
    auto [next, reward] = model_.dynamics(t, store_, s, a);
    return {t.value(next), t.value(reward).item()};
  }

 private:
  const LatentModel& model_;
  ParamStore& store_;
  std::vector<bool> mask_;
  Tensor root_;
  Tensor embeddings_;
};

// Convenience entry point matching the per-decision call shape.
inline SearchResult run_search(const AttributedGraph& graph, const LatentModel& model,
                               ParamStore& store, const ActionCatalog& catalog,
                               const SearchConfig& cfg, SearchMode mode, Rng& rng,
                               SearchTrace* trace = nullptr) {
  LatentSearchModel adapter(model, store, graph, catalog);
  return run_search(adapter, cfg, mode, rng, trace);
}

}  // namespace acdz
