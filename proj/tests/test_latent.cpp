#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "acdzero/graph.hpp"
#include "acdzero/latent.hpp"
#include "acdzero/sim.hpp"
#include "oracles.hpp"

using namespace acdz;

namespace {

ModelDims tiny_dims() {
  ModelDims d;
  d.hidden = 12;
  d.embedding = 8;
  d.entity_embed = 5;
  d.action_embed = 6;
  return d;
}

LocalObservation env_observation(std::uint64_t seed, int agent = 0, int steps = 0) {
  SimConfig cfg;
  cfg.hosts_min = 5;
  cfg.hosts_max = 7;
  cfg.horizon = 30;
  Environment env(cfg, seed);
  std::vector<BlueAction> sleeps;
  for (int a = 0; a < kNumAgents; ++a) sleeps.push_back(BlueAction::sleep(a));
  for (int t = 0; t < steps; ++t) env.step(sleeps);
  return env.observation(agent);
}

// Shuffle sibling order in the observation arrays; node identities are
// untouched, so the graph differs only by same-kind node permutation.
LocalObservation permute_siblings(const LocalObservation& obs, Rng& rng) {
  LocalObservation p = obs;
  for (std::size_t i = p.hosts.size(); i > 1; --i)
    std::swap(p.hosts[i - 1], p.hosts[rng.uniform_int(0, static_cast<std::int64_t>(i) - 1)]);
  for (auto& h : p.hosts) {
    for (std::size_t i = h.services.size(); i > 1; --i)
      std::swap(h.services[i - 1], h.services[rng.uniform_int(0, static_cast<std::int64_t>(i) - 1)]);
    for (std::size_t i = h.decoy_ports.size(); i > 1; --i)
      std::swap(h.decoy_ports[i - 1], h.decoy_ports[rng.uniform_int(0, static_cast<std::int64_t>(i) - 1)]);
  }
  for (std::size_t i = p.owned_subnets.size(); i > 1; --i)
    std::swap(p.owned_subnets[i - 1], p.owned_subnets[rng.uniform_int(0, static_cast<std::int64_t>(i) - 1)]);
  for (std::size_t i = p.links.size(); i > 1; --i)
    std::swap(p.links[i - 1], p.links[rng.uniform_int(0, static_cast<std::int64_t>(i) - 1)]);
  return p;
}

std::vector<double> represent_values(const LatentModel& model, ParamStore& store,
                                     const AttributedGraph& g) {
  Tape t(false);
  Var s = model.represent(t, store, g);
  return t.value(s).values;
}

}  // namespace

TEST_CASE("represent is invariant to sibling permutations") {
  const LatentModel model(tiny_dims());
  ParamStore store = model.make_store(1);
  Rng rng(2);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const LocalObservation obs = env_observation(seed, static_cast<int>(seed % kNumAgents), 3);
    AgentMemory mem;
    const auto base = represent_values(model, store, build_graph(obs, mem));
    for (int trial = 0; trial < 5; ++trial) {
      const auto permuted = represent_values(model, store, build_graph(permute_siblings(obs, rng), mem));
      REQUIRE(permuted.size() == base.size());
      for (std::size_t i = 0; i < base.size(); ++i)
        CHECK_THAT(permuted[i], Catch::Matchers::WithinAbs(base[i], 1e-10));
    }
  }
}

TEST_CASE("represent handles every generator topology and stays in [-1,1]") {
  const LatentModel model(tiny_dims());
  ParamStore store = model.make_store(3);
  SimConfig cfg;
  for (std::uint64_t seed = 50; seed < 60; ++seed) {
    Environment env(cfg, seed);
    for (int agent = 0; agent < kNumAgents; ++agent) {
      const auto values = represent_values(model, store, build_graph(env.observation(agent), AgentMemory{}));
      CHECK(values.size() == static_cast<std::size_t>(model.dims().embedding));
      for (double v : values) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
        CHECK(std::isfinite(v));
      }
    }
  }
}

TEST_CASE("duplicating an identical host leaves the pooled latent unchanged") {
  const LatentModel model(tiny_dims());
  ParamStore store = model.make_store(5);
  LocalObservation obs;
  obs.agent = 0;
  obs.horizon = 100;
  obs.owned_subnets = {0};
  obs.visible_subnet_owners = {{0, 0}};
  HostObservation h;
  h.host = 0;
  h.subnet = 0;
  h.role = HostRole::Server;
  h.os_tag = 2;
  h.services = {{22, 0}, {443, 2}};
  obs.hosts.push_back(h);

  const auto single = represent_values(model, store, build_graph(obs, AgentMemory{}));
  HostObservation dup = h;
  dup.host = 1;
  obs.hosts.push_back(dup);
  const auto doubled = represent_values(model, store, build_graph(obs, AgentMemory{}));
  for (std::size_t i = 0; i < single.size(); ++i)
    CHECK_THAT(doubled[i], Catch::Matchers::WithinAbs(single[i], 1e-12));
}

TEST_CASE("different graphs give different latents") {
  const LatentModel model(tiny_dims());
  ParamStore store = model.make_store(7);
  const auto a = represent_values(model, store, build_graph(env_observation(1), AgentMemory{}));
  const auto b = represent_values(model, store, build_graph(env_observation(2, 1), AgentMemory{}));
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += std::abs(a[i] - b[i]);
  CHECK(diff > 1e-6);
}

TEST_CASE("dynamics: zero reward head, determinism, scalar oracle") {
  const LatentModel model(tiny_dims());
  ParamStore store = model.make_store(9);
  const LocalObservation obs = env_observation(4);
  const AttributedGraph g = build_graph(obs, AgentMemory{});
  const ActionCatalog cat = enumerate_actions(g, obs);

  Tape t(false);
  Var latent = model.represent(t, store, g);
  Var embs = model.action_embeddings(t, store, g, cat);
  Var a0 = t.reshape(t.gather0(embs, {0}), {static_cast<std::size_t>(model.dims().action_embed)});
  auto [next1, r1] = model.dynamics(t, store, latent, a0);
  CHECK(t.value(r1).item() == 0.0);  // freshly zero-initialized head

  auto [next2, r2] = model.dynamics(t, store, latent, a0);
  CHECK(t.value(next1).values == t.value(next2).values);
  CHECK(t.value(r2).item() == t.value(r1).item());

  for (double v : t.value(next1).values) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }

  // scalar recomputation of the whole transition
  const auto s_vals = t.value(latent).values;
  const auto a_vals = t.value(a0).values;
  const auto gru = oracle::gru_reference(a_vals, s_vals, store, "dyn.gru");
  auto proj = oracle::linear_reference(gru, store, "dyn.proj");
  for (double& v : proj) v = std::tanh(v);
  const auto got = t.value(next1).values;
  for (std::size_t i = 0; i < proj.size(); ++i)
    CHECK_THAT(got[i], Catch::Matchers::WithinAbs(proj[i], 1e-12));

  std::vector<double> sa = s_vals;
  sa.insert(sa.end(), a_vals.begin(), a_vals.end());
  const auto reward_ref = oracle::mlp2_reference(sa, store, "dyn.reward");
  CHECK_THAT(t.value(r1).item(), Catch::Matchers::WithinAbs(reward_ref[0], 1e-12));
}

TEST_CASE("predict: uniform prior at zero init, single support, masked validity") {
  const LatentModel model(tiny_dims());
  ParamStore store = model.make_store(11);
  const LocalObservation obs = env_observation(6);
  const AttributedGraph g = build_graph(obs, AgentMemory{});
  const ActionCatalog cat = enumerate_actions(g, obs);

  Tape t(false);
  Var latent = model.represent(t, store, g);
  Var embs = model.action_embeddings(t, store, g, cat);

  SECTION("zero policy head gives a uniform prior over legal actions") {
    auto [prior, value] = model.predict(t, store, latent, embs, cat.legal);
    const auto p = t.value(prior).values;
    const double expect = 1.0 / cat.legal_count();
    for (int i = 0; i < cat.size(); ++i) {
      if (cat.legal[i])
        CHECK_THAT(p[i], Catch::Matchers::WithinAbs(expect, 1e-12));
      else
        CHECK(p[i] == 0.0);
    }
    CHECK(t.value(value).item() == 0.0);
  }

  SECTION("single legal action takes all the mass") {
    std::vector<bool> one(cat.size(), false);
    one[3] = true;
    auto [prior, value] = model.predict(t, store, latent, embs, one);
    (void)value;
    CHECK(t.value(prior).values[3] == 1.0);
  }

  SECTION("empty mask raises") {
    std::vector<bool> none(cat.size(), false);
    CHECK_THROWS_AS(model.predict(t, store, latent, embs, none), EmptySupportError);
  }

  SECTION("prior is a distribution for random parameters") {
    ParamStore random_store = model.make_store(12345);
    // randomize the zero heads too
    Rng rng(13);
    for (std::size_t s = 0; s < random_store.size(); ++s) {
      auto& v = random_store.mutable_value(s);
      for (double& x : v.values) x += rng.normal() * 0.3;
    }
    Tape t2(false);
    Var latent2 = model.represent(t2, random_store, g);
    Var embs2 = model.action_embeddings(t2, random_store, g, cat);
    auto [prior, value] = model.predict(t2, random_store, latent2, embs2, cat.legal);
    (void)value;
    const auto p = t2.value(prior).values;
    double total = 0.0;
    for (int i = 0; i < cat.size(); ++i) {
      CHECK(p[i] >= 0.0);
      if (!cat.legal[i]) CHECK(p[i] == 0.0);
      total += p[i];
    }
    CHECK_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-12));
  }
}

TEST_CASE("value gradients through the full graph encoder match finite differences") {
  ModelDims d = tiny_dims();
  d.hidden = 6;
  d.embedding = 5;
  d.entity_embed = 3;
  d.action_embed = 3;
  const LatentModel model(d);
  ParamStore store = model.make_store(21);
  Rng rng(22);
  for (std::size_t s = 0; s < store.size(); ++s) {
    auto& v = store.mutable_value(s);
    for (double& x : v.values) x += rng.normal() * 0.2;
  }
  const LocalObservation obs = env_observation(8);
  AgentMemory mem;
  mem.analyzed_files[obs.hosts[0].host] = {{0.7, false}};
  const AttributedGraph g = build_graph(obs, mem);

  auto forward = [&](Tape& t) {
    Var latent = model.represent(t, store, g);
    Var embs = model.action_embeddings(t, store, g, enumerate_actions(g, obs));
    Var a0 = t.reshape(t.gather0(embs, {1}), {static_cast<std::size_t>(d.action_embed)});
    auto [next, reward] = model.dynamics(t, store, latent, a0);
    auto [prior, value] = model.predict(t, store, next, embs, enumerate_actions(g, obs).legal);
    (void)prior;
    return t.add(value, reward);
  };
  store.zero_grad();
  Tape t;
  t.backward(t.sum0(forward(t)));
  std::vector<std::vector<double>> analytic;
  for (std::size_t s = 0; s < store.size(); ++s) analytic.push_back(store.grad(s));
  auto numeric = oracle::finite_difference_grads(store, [&] {
    Tape ft(false);
    Var out = forward(ft);
    return ft.value(out).values[0];
  });
  CHECK(oracle::max_relative_error(analytic, numeric) < 1e-4);
}

TEST_CASE("permuting catalog entries permutes the prior identically") {
  const LatentModel model(tiny_dims());
  ParamStore store = model.make_store(31);
  Rng rng(32);
  for (std::size_t s = 0; s < store.size(); ++s) {
    auto& v = store.mutable_value(s);
    for (double& x : v.values) x += rng.normal() * 0.3;
  }
  const LocalObservation obs = env_observation(9);
  const AttributedGraph g = build_graph(obs, AgentMemory{});
  const ActionCatalog cat = enumerate_actions(g, obs);

  std::vector<int> perm(cat.size());
  for (int i = 0; i < cat.size(); ++i) perm[i] = i;
  for (std::size_t i = perm.size(); i > 1; --i)
    std::swap(perm[i - 1], perm[rng.uniform_int(0, static_cast<std::int64_t>(i) - 1)]);
  ActionCatalog shuffled;
  shuffled.agent = cat.agent;
  shuffled.entries.resize(cat.size());
  shuffled.legal.resize(cat.size());
  for (int i = 0; i < cat.size(); ++i) {
    shuffled.entries[perm[i]] = cat.entries[i];
    shuffled.legal[perm[i]] = cat.legal[i];
  }

  Tape t(false);
  Var latent = model.represent(t, store, g);
  auto [p1, v1] = model.predict(t, store, latent, model.action_embeddings(t, store, g, cat), cat.legal);
  auto [p2, v2] =
      model.predict(t, store, latent, model.action_embeddings(t, store, g, shuffled), shuffled.legal);
  (void)v1;
  (void)v2;
  const auto base = t.value(p1).values;
  const auto moved = t.value(p2).values;
  for (int i = 0; i < cat.size(); ++i)
    CHECK_THAT(moved[perm[i]], Catch::Matchers::WithinAbs(base[i], 1e-12));
  // the relabeled image of the argmax is still a maximizer (ties allowed:
  // identical hosts score identically)
  const int argmax_base =
      static_cast<int>(std::max_element(base.begin(), base.end()) - base.begin());
  const double moved_max = *std::max_element(moved.begin(), moved.end());
  CHECK_THAT(moved[perm[argmax_base]], Catch::Matchers::WithinAbs(moved_max, 1e-12));
}
