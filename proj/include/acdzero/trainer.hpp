#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "acdzero/config.hpp"
#include "acdzero/graph.hpp"
#include "acdzero/latent.hpp"
#include "acdzero/losses.hpp"
#include "acdzero/mcts.hpp"
#include "acdzero/param_store.hpp"
#include "acdzero/sim.hpp"

namespace acdz {

struct TrajStep {
  AttributedGraph graph;       // observation graph at decision time
  ActionCatalog catalog;
  int action = 0;
  double reward = 0.0;         // team reward for the step
  std::vector<double> pi_mcts; // search policy (behavior-policy temperature)
  double root_value = 0.0;     // search root value (critic value when no search)
  double critic_value = 0.0;   // v_theta(o_t) under the snapshot
  double logp_old = 0.0;       // log pi_theta(a|o) under the snapshot
};

struct Trajectory {
  int agent = 0;
  std::uint64_t episode_seed = 0;
  std::vector<TrajStep> steps;
  double bootstrap_value = 0.0;
  double episode_return = 0.0;
  std::vector<double> advantages;
  std::vector<double> value_targets;
};

namespace detail {
enum DecisionStream : std::uint64_t { kSearchNoise = 0x5e1ec7, kActionSample = 0x5a3b1e };
}

inline ParamStore& agent_store(std::vector<ParamStore>& stores, int agent) {
  return stores.size() == 1 ? stores[0] : stores[agent];
}

struct EpisodeOptions {
  bool use_search = true;
  bool actions_from_mcts = true;
  SearchMode mode = SearchMode::Train;
  bool record = true;             // keep graphs/targets for training
  std::ostream* replay = nullptr;
  std::ostream* trace = nullptr;  // search trace dump
};

struct EpisodeOutcome {
  std::vector<Trajectory> trajectories;  // one per agent when recording
  double episode_return = 0.0;
  int steps = 0;
};

// Plays one full episode: per agent and step, build the observation
// graph, optionally run the latent-space search, act, and exchange the
// 8-bit coordination messages.
inline EpisodeOutcome run_episode(const LatentModel& model, std::vector<ParamStore>& stores,
                                  const RunConfig& cfg, std::uint64_t episode_seed,
                                  const EpisodeOptions& opt) {
  Environment env(cfg.sim, episode_seed);
  if (opt.replay) env.set_replay_sink(opt.replay);
  std::array<AgentMemory, kNumAgents> memories;
  std::vector<LocalObservation> obs = env.observations();

  EpisodeOutcome out;
  out.trajectories.resize(kNumAgents);
  for (int a = 0; a < kNumAgents; ++a) {
    out.trajectories[a].agent = a;
    out.trajectories[a].episode_seed = episode_seed;
  }

  while (!env.done()) {
    const int step = env.timestep();
    std::vector<BlueAction> actions(kNumAgents);
    std::vector<int> action_ix(kNumAgents, 0);

    for (int agent = 0; agent < kNumAgents; ++agent) {
      memories[agent].observe(obs[agent]);
      AttributedGraph graph = build_graph(obs[agent], memories[agent]);
      ActionCatalog catalog = enumerate_actions(graph, obs[agent]);
      LatentSearchModel adapter(model, agent_store(stores, agent), graph, catalog);
      const Evaluation actor = adapter.evaluate(adapter.root_latent());

      std::vector<double> behavior;
      std::vector<double> pi_target;
      double root_value;
      if (opt.use_search) {
        Rng noise_rng(episode_seed, {static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(agent),
                                     detail::kSearchNoise});
        SearchTrace trace_storage;
        SearchTrace* trace = opt.trace ? &trace_storage : nullptr;
        const SearchResult sr = run_search(adapter, cfg.search, opt.mode, noise_rng, trace);
        if (opt.trace) {
          (*opt.trace) << "decision step=" << step << " agent=" << agent << "\n";
          write_search_trace(*opt.trace, trace_storage);
        }
        pi_target = sr.policy;
        behavior = opt.actions_from_mcts ? sr.policy : actor.prior;
        root_value = sr.root_value;
      } else {
        pi_target = actor.prior;
        behavior = actor.prior;
        root_value = actor.value;
      }

      Rng sample_rng(episode_seed, {static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(agent),
                                    detail::kActionSample});
      const int ix = static_cast<int>(sample_rng.categorical(behavior));
      action_ix[agent] = ix;
      actions[agent] = action_to_command(ix, catalog);

      if (opt.record) {
        TrajStep ts;
        ts.graph = std::move(graph);
        ts.catalog = std::move(catalog);
        ts.action = ix;
        ts.pi_mcts = std::move(pi_target);
        ts.root_value = root_value;
        ts.critic_value = actor.value;
        ts.logp_old = std::log(std::max(actor.prior[ix], 1e-12));
        out.trajectories[agent].steps.push_back(std::move(ts));
      }
    }

    std::array<int, kNumAgents> outbox{};
    for (int agent = 0; agent < kNumAgents; ++agent)
      outbox[agent] = encode_outgoing_message(summarize_step(obs[agent], actions[agent]));
    env.queue_messages(outbox);

    const StepResult result = env.step(actions);
    out.episode_return += result.global_reward;
    out.steps += 1;
    for (int agent = 0; agent < kNumAgents; ++agent) {
      if (opt.record) out.trajectories[agent].steps.back().reward = result.global_reward;
      if (!result.rejected[agent]) memories[agent].note_action(actions[agent], step);
    }
    obs = result.observations;
  }

  if (opt.record) {
    for (int agent = 0; agent < kNumAgents; ++agent) {
      memories[agent].observe(obs[agent]);
      AttributedGraph graph = build_graph(obs[agent], memories[agent]);
      ActionCatalog catalog = enumerate_actions(graph, obs[agent]);
      LatentSearchModel adapter(model, agent_store(stores, agent), graph, catalog);
      out.trajectories[agent].bootstrap_value = adapter.evaluate(adapter.root_latent()).value;
      out.trajectories[agent].episode_return = out.episode_return;
    }
  } else {
    out.trajectories.clear();
  }
  return out;
}

// Parallel rollout collection. Worker w plays episodes w, w+W, ...; each
// worker acts on its own parameter snapshot and merge order is fixed by
// episode index, so the result is independent of scheduling.
inline std::vector<Trajectory> collect_rollouts(const LatentModel& model,
                                                const std::vector<ParamStore>& stores,
                                                const RunConfig& cfg, std::uint64_t run_seed,
                                                int episode_offset, int episodes,
                                                std::vector<double>* episode_returns = nullptr) {
  const int workers = std::max(1, std::min(cfg.train.workers, episodes));
  std::vector<std::vector<Trajectory>> per_episode(episodes);
  std::vector<double> returns(episodes, 0.0);
  std::vector<std::string> errors(workers);

  auto work = [&](int w) {
    try {
      std::vector<ParamStore> snapshot = stores;  // value copy per worker
      for (int e = w; e < episodes; e += workers) {
        EpisodeOptions opt;
        opt.use_search = cfg.train.use_search;
        opt.actions_from_mcts = cfg.train.actions_from_mcts;
        opt.mode = SearchMode::Train;
        const std::uint64_t episode_seed =
            Rng(run_seed, {static_cast<std::uint64_t>(episode_offset + e), 0xE9u}).next_u64();
        EpisodeOutcome outcome = run_episode(model, snapshot, cfg, episode_seed, opt);
        returns[e] = outcome.episode_return;
        per_episode[e] = std::move(outcome.trajectories);
      }
    } catch (const std::exception& ex) {
      errors[w] = ex.what();
    }
  };

  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& th : pool) th.join();
  }
  for (const auto& err : errors)
    if (!err.empty()) throw ContractError("rollout worker failed: " + err);

  std::vector<Trajectory> merged;
  for (int e = 0; e < episodes; ++e)
    for (auto& traj : per_episode[e]) merged.push_back(std::move(traj));
  if (episode_returns) *episode_returns = returns;
  return merged;
}

// Unrolled dynamics/value loss from one starting step: K latent
// transitions along the recorded actions, squared error on predicted
// rewards and on the value targets, each term mean-reduced. Later
// observations are never consulted.
inline Var model_loss(Tape& t, const LatentModel& model, ParamStore& store, const Trajectory& traj,
                      std::size_t start, int K) {
  if (start + static_cast<std::size_t>(K) >= traj.steps.size())
    throw ContractError("model_loss: segment shorter than K+1");
  const TrajStep& root = traj.steps[start];
  Var latent = model.represent(t, store, root.graph);
  Var embs = model.action_embeddings(t, store, root.graph, root.catalog);

  Var value_sq{};
  Var reward_sq{};
  bool have_reward = false;
  for (int k = 0;; ++k) {
    Var v = model.value_head(t, store, latent);
    Var verr = t.add_scalar(v, -traj.value_targets[start + k]);
    Var vterm = t.mul(verr, verr);
    value_sq = k == 0 ? vterm : t.add(value_sq, vterm);
    if (k == K) break;
    Var a = t.reshape(t.gather0(embs, {static_cast<std::size_t>(traj.steps[start + k].action)}),
                      {static_cast<std::size_t>(model.dims().action_embed)});
    auto [next, rhat] = model.dynamics(t, store, latent, a);
    Var rerr = t.add_scalar(rhat, -traj.steps[start + k].reward);
    Var rterm = t.mul(rerr, rerr);
    reward_sq = have_reward ? t.add(reward_sq, rterm) : rterm;
    have_reward = true;
    latent = next;
  }
  Var loss = t.mul_scalar(t.sum0(value_sq), 1.0 / (K + 1));
  if (have_reward) loss = t.add(loss, t.mul_scalar(t.sum0(reward_sq), 1.0 / K));
  return loss;
}

struct RoundStats {
  double mean_reward = 0.0;
  double ppo = 0.0, distill = 0.0, model = 0.0, entropy = 0.0, total = 0.0, kl = 0.0;
  double grad_norm = 0.0;
  int env_steps = 0;
  int samples = 0;
  bool finite = true;
};

// One optimization pass over freshly collected trajectories: GAE, then
// shuffled minibatches of the joint loss, one Adam step per minibatch.
inline RoundStats train_round(const LatentModel& model, std::vector<ParamStore>& stores,
                              const RunConfig& cfg, std::vector<Trajectory>& trajectories,
                              Rng& shuffle_rng) {
  RoundStats stats;
  for (auto& traj : trajectories) {
    std::vector<double> rewards, values;
    for (const auto& s : traj.steps) {
      rewards.push_back(s.reward);
      values.push_back(s.critic_value);
    }
    traj.advantages =
        compute_advantages(rewards, values, traj.bootstrap_value, cfg.train.gamma, cfg.train.gae_lambda);
    traj.value_targets = value_targets_from(traj.advantages, values);
    stats.env_steps += static_cast<int>(traj.steps.size());
  }

  std::vector<std::pair<std::size_t, std::size_t>> index;  // (trajectory, step)
  for (std::size_t ti = 0; ti < trajectories.size(); ++ti)
    for (std::size_t si = 0; si < trajectories[ti].steps.size(); ++si) index.emplace_back(ti, si);

  const int K = cfg.train.unroll_k;
  double ppo_sum = 0, distill_sum = 0, model_sum = 0, entropy_sum = 0;
  long long ppo_n = 0, model_n = 0;
  double grad_norm_sum = 0;
  int minibatches = 0;

  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    for (std::size_t i = index.size(); i > 1; --i)
      std::swap(index[i - 1], index[shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1)]);
    for (std::size_t begin = 0; begin < index.size(); begin += cfg.train.minibatch) {
      const std::size_t end = std::min(index.size(), begin + cfg.train.minibatch);
      const double batch = static_cast<double>(end - begin);
      double model_eligible = 0;
      for (std::size_t i = begin; i < end; ++i) {
        const auto& [ti, si] = index[i];
        if (si + static_cast<std::size_t>(K) < trajectories[ti].steps.size()) model_eligible += 1;
      }

      for (auto& store : stores) store.zero_grad();
      for (std::size_t i = begin; i < end; ++i) {
        const auto& [ti, si] = index[i];
        Trajectory& traj = trajectories[ti];
        const TrajStep& step = traj.steps[si];
        ParamStore& store = agent_store(stores, traj.agent);

        Tape t;
        Var latent = model.represent(t, store, step.graph);
        Var embs = model.action_embeddings(t, store, step.graph, step.catalog);
        auto [prior, value] = model.predict(t, store, latent, embs, step.catalog.legal);
        (void)value;
        Var log_probs = t.log(t.clamp_min(prior, 1e-12));
        std::vector<double> onehot(step.catalog.legal.size(), 0.0);
        onehot[step.action] = 1.0;
        Var logp_new = t.reshape(t.sum0(t.mul(log_probs, t.leaf(Tensor::vec(onehot)))), {1});

        Var ppo = ppo_loss(t, logp_new, {step.logp_old}, {traj.advantages[si]}, cfg.train.clip_epsilon);
        Var distill = distill_loss(t, log_probs, step.pi_mcts, step.catalog.legal);
        ppo_sum += t.value(ppo).item();
        distill_sum += t.value(distill).item();
        ppo_n += 1;

        Var sample = t.add(t.mul_scalar(ppo, 1.0 / batch),
                           t.mul_scalar(distill, cfg.train.lambda_pi / batch));
        if (cfg.train.entropy_coef != 0.0) {
          Var ent = entropy_term(t, prior, log_probs);
          entropy_sum += t.value(ent).item();
          sample = t.add(sample, t.mul_scalar(ent, cfg.train.entropy_coef / batch));
        }
        const bool eligible = si + static_cast<std::size_t>(K) < traj.steps.size();
        if (eligible && cfg.train.lambda_v != 0.0) {
          Var m = model_loss(t, model, store, traj, si, K);
          model_sum += t.value(m).item();
          model_n += 1;
          sample = t.add(sample, t.mul_scalar(m, cfg.train.lambda_v / model_eligible));
        } else if (eligible) {
          model_n += 1;  // counted for reporting symmetry even when weightless
        }
        if (!std::isfinite(t.value(sample).item())) {
          stats.finite = false;
          return stats;
        }
        t.backward(sample);
      }

      double norm = 0.0;
      for (auto& store : stores) norm = std::max(norm, store.grad_norm());
      grad_norm_sum += norm;
      ++minibatches;
      for (auto& store : stores) {
        store.clip_grad_norm(cfg.train.grad_clip);
        store.adam_step(cfg.train.lr);
        if (!store.all_finite()) {
          stats.finite = false;
          return stats;
        }
      }
    }
  }

  stats.samples = static_cast<int>(ppo_n);
  stats.ppo = ppo_n ? ppo_sum / ppo_n : 0.0;
  stats.distill = ppo_n ? distill_sum / ppo_n : 0.0;
  stats.kl = stats.distill;
  stats.model = model_n ? model_sum / model_n : 0.0;
  stats.entropy = ppo_n ? entropy_sum / ppo_n : 0.0;
  stats.total = stats.ppo + cfg.train.lambda_pi * stats.distill + cfg.train.lambda_v * stats.model +
                cfg.train.entropy_coef * stats.entropy;
  stats.grad_norm = minibatches ? grad_norm_sum / minibatches : 0.0;
  return stats;
}

struct TrainOutcome {
  int exit_code = 0;
  std::string message;
  int episodes_done = 0;
  int rounds_done = 0;
  double final_mean_reward = 0.0;
  long long search_calls = 0;
  std::string metrics_path;
  std::string last_checkpoint;
};

namespace detail {

inline void atomic_checkpoint(const std::vector<ParamStore>& stores, const std::string& base_path) {
  for (std::size_t i = 0; i < stores.size(); ++i) {
    const std::string path =
        stores.size() == 1 ? base_path : base_path + ".agent" + std::to_string(i);
    const std::string tmp = path + ".tmp";
    stores[i].save(tmp);
    std::filesystem::rename(tmp, path);
  }
}

inline std::string csv_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

// Full training pipeline: repeated collect -> advantage -> minibatch
// optimization rounds, a metrics CSV row per round, periodic atomic
// checkpoints, and an abort path that keeps the last good checkpoint if
// the loss ever turns non-finite.
inline TrainOutcome train(const LatentModel& model, const RunConfig& cfg, std::uint64_t seed,
                          const std::string& out_dir, const ParamStore* initial = nullptr) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  const long long search_calls_before = search_invocations().load();

  std::vector<ParamStore> stores;
  const int n_stores = cfg.train.shared_weights ? 1 : kNumAgents;
  for (int i = 0; i < n_stores; ++i) {
    if (initial) {
      stores.push_back(*initial);
    } else {
      stores.push_back(model.make_store(Rng(seed, {static_cast<std::uint64_t>(i), 0x1417}).next_u64()));
    }
  }
  if (initial) {
    ParamStore reference = model.make_store(0);
    auto expect = reference.manifest();
    auto got = initial->manifest();
    std::sort(expect.begin(), expect.end());
    std::sort(got.begin(), got.end());
    if (expect != got) throw CheckpointError("initial checkpoint does not match the model manifest");
  }

  TrainOutcome out;
  const std::string initial_ckpt = out_dir + "/checkpoint_initial.acdz";
  detail::atomic_checkpoint(stores, initial_ckpt);
  out.last_checkpoint = initial_ckpt;

  out.metrics_path = out_dir + "/metrics.csv";
  std::ofstream csv(out.metrics_path, std::ios::trunc);
  csv << "round,episodes,env_steps,mean_reward,ppo_loss,distill_loss,model_loss,total_loss,mean_kl,"
         "grad_norm,search_calls\n";

  Rng shuffle_rng(seed, {0x5F513});
  int episodes_done = 0;
  int round = 0;
  while (episodes_done < cfg.train.episodes) {
    const int batch_episodes = std::min(cfg.train.episodes_per_round, cfg.train.episodes - episodes_done);
    std::vector<double> returns;
    std::vector<Trajectory> trajectories;
    try {
      trajectories =
          collect_rollouts(model, stores, cfg, seed, episodes_done, batch_episodes, &returns);
    } catch (const std::exception& ex) {
      out.exit_code = 3;
      out.message = std::string("rollout collection aborted: ") + ex.what();
      break;
    }
    RoundStats stats = train_round(model, stores, cfg, trajectories, shuffle_rng);
    episodes_done += batch_episodes;
    round += 1;

    double mean_reward = 0.0;
    for (double r : returns) mean_reward += r;
    mean_reward /= std::max<std::size_t>(1, returns.size());
    out.final_mean_reward = mean_reward;

    csv << round << "," << episodes_done << "," << stats.env_steps << ","
        << detail::csv_double(mean_reward) << "," << detail::csv_double(stats.ppo) << ","
        << detail::csv_double(stats.distill) << "," << detail::csv_double(stats.model) << ","
        << detail::csv_double(stats.total) << "," << detail::csv_double(stats.kl) << ","
        << detail::csv_double(stats.grad_norm) << ","
        << (search_invocations().load() - search_calls_before) << "\n";
    csv.flush();

    if (!stats.finite) {
      out.exit_code = 3;
      out.message = "non-finite loss; aborted with last good checkpoint retained";
      break;
    }
    if (cfg.train.checkpoint_every > 0 && round % cfg.train.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "/checkpoint_round_%04d.acdz", round);
      const std::string path = out_dir + name;
      detail::atomic_checkpoint(stores, path);
      out.last_checkpoint = path;
    }
  }

  if (out.exit_code == 0) {
    const std::string final_ckpt = out_dir + "/checkpoint_final.acdz";
    detail::atomic_checkpoint(stores, final_ckpt);
    out.last_checkpoint = final_ckpt;
  }
  out.episodes_done = episodes_done;
  out.rounds_done = round;
  out.search_calls = search_invocations().load() - search_calls_before;
  return out;
}

}  // namespace acdz
