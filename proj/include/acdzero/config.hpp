#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "acdzero/errors.hpp"

namespace acdz {

// Environment parameters. Bounds follow the stochastic-topology regime
// (5-15 hosts per subnet, 1-5 services per host) unless narrowed.
struct SimConfig {
  int subnets_per_zone = 2;   // 1 or 2
  int router_subnets = 2;     // owned by the last agent
  int hosts_min = 5;
  int hosts_max = 15;
  int services_min = 1;
  int services_max = 5;
  int horizon = 500;
  int max_decoys_per_host = 4;
  double p_detect = 0.9;
  double p_false = 0.02;
  double p_discover = 0.8;
  double p_scan = 0.75;
  double p_exploit = 0.6;
  double p_escalate = 0.5;
  bool red_initial_foothold = true;  // off: threat-free baseline runs

  void validate() const {
    if (hosts_min < 1 || hosts_min > hosts_max) throw ConfigError("topology.hosts bounds invalid");
    if (services_min < 1 || services_min > services_max) throw ConfigError("topology.services bounds invalid");
    if (subnets_per_zone < 1 || subnets_per_zone > 2) throw ConfigError("topology.subnets_per_zone must be 1 or 2");
    if (router_subnets < 1 || router_subnets > 2) throw ConfigError("topology.router_subnets must be 1 or 2");
    if (horizon < 1) throw ConfigError("episode.horizon must be positive");
    for (double p : {p_detect, p_false, p_discover, p_scan, p_exploit, p_escalate})
      if (p < 0.0 || p > 1.0) throw ConfigError("probability out of [0,1]");
  }
};

// Tree-search constants.
struct SearchConfig {
  int num_simulations = 16;
  double c_base = 19652.0;
  double c_init = 1.25;
  double dirichlet_alpha = 0.3;
  double noise_fraction = 0.25;
  double temperature_train = 1.0;
  double temperature_eval = 0.1;
  double discount = 0.99;
  bool dynamic_c1 = true;

  void validate() const {
    if (num_simulations < 1) throw ConfigError("search.num_simulations must be positive");
    if (c_base <= 0 || c_init <= 0) throw ConfigError("search.c constants must be positive");
    if (temperature_train <= 0 || temperature_eval <= 0) throw ConfigError("search.temperature must be positive");
    if (discount <= 0 || discount > 1) throw ConfigError("search.discount out of (0,1]");
  }
};

// Network widths.
struct ModelDims {
  int hidden = 256;
  int embedding = 128;
  int entity_embed = 32;
  int action_embed = 32;

  void validate() const {
    if (hidden < 1 || embedding < 1 || entity_embed < 1 || action_embed < 1)
      throw ConfigError("model dims must be positive");
  }
};

// Optimization parameters.
struct TrainConfig {
  double lambda_pi = 0.5;
  double lambda_v = 0.5;
  double clip_epsilon = 0.2;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  int unroll_k = 5;
  int workers = 5;
  double lr = 3e-4;
  int minibatch = 64;
  int epochs = 1;
  int episodes = 100;
  int episodes_per_round = 5;
  int checkpoint_every = 10;  // rounds
  double grad_clip = 5.0;
  double entropy_coef = 0.0;
  bool use_search = true;        // off: pure reactive actor (no MCTS anywhere)
  bool actions_from_mcts = true; // behavior policy toggle while search is on
  bool shared_weights = true;    // one parameter set for all agents

  void validate() const {
    if (lambda_pi < 0 || lambda_v < 0) throw ConfigError("train.lambda must be non-negative");
    if (clip_epsilon <= 0 || clip_epsilon >= 1) throw ConfigError("train.clip_epsilon out of (0,1)");
    if (gamma <= 0 || gamma > 1) throw ConfigError("train.gamma out of (0,1]");
    if (gae_lambda < 0 || gae_lambda > 1) throw ConfigError("train.gae_lambda out of [0,1]");
    if (unroll_k < 0) throw ConfigError("train.unroll_k must be non-negative");
    if (workers < 1) throw ConfigError("train.workers must be positive");
    if (minibatch < 1 || epochs < 0) throw ConfigError("train.minibatch/epochs invalid");
    if (episodes < 0 || episodes_per_round < 1) throw ConfigError("train.episodes invalid");
  }
};

struct RunConfig {
  SimConfig sim;
  SearchConfig search;
  ModelDims model;
  TrainConfig train;

  void validate() const {
    sim.validate();
    search.validate();
    model.validate();
    train.validate();
  }

  // Flat key/value view in stable order; shared by the writer and the
  // ablation-isolation diff.
  std::vector<std::pair<std::string, std::string>> to_kv() const;
  static RunConfig from_file(const std::string& path);
  void write(const std::string& path) const;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct ConfigBinder {
  std::vector<std::pair<std::string, std::string>> kv;
  std::map<std::string, std::function<void(const std::string&)>> setters;

  void bind(const std::string& key, int* slot) {
    kv.emplace_back(key, std::to_string(*slot));
    setters[key] = [slot, key](const std::string& v) {
      try {
        std::size_t used = 0;
        *slot = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
      } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
      }
    };
  }
  void bind(const std::string& key, double* slot) {
    kv.emplace_back(key, fmt_double(*slot));
    setters[key] = [slot, key](const std::string& v) {
      try {
        std::size_t used = 0;
        *slot = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
      } catch (const std::exception&) {
        throw ConfigError("config: bad real for " + key + ": '" + v + "'");
      }
    };
  }
  void bind(const std::string& key, bool* slot) {
    kv.emplace_back(key, *slot ? "true" : "false");
    setters[key] = [slot, key](const std::string& v) {
      if (v == "true" || v == "1")
        *slot = true;
      else if (v == "false" || v == "0")
        *slot = false;
      else
        throw ConfigError("config: bad boolean for " + key + ": '" + v + "'");
    };
  }
};

inline ConfigBinder bind_config(RunConfig& c) {
  ConfigBinder b;
  b.bind("topology.subnets_per_zone", &c.sim.subnets_per_zone);
  b.bind("topology.router_subnets", &c.sim.router_subnets);
  b.bind("topology.hosts_min", &c.sim.hosts_min);
  b.bind("topology.hosts_max", &c.sim.hosts_max);
  b.bind("topology.services_min", &c.sim.services_min);
  b.bind("topology.services_max", &c.sim.services_max);
  b.bind("episode.horizon", &c.sim.horizon);
  b.bind("episode.max_decoys_per_host", &c.sim.max_decoys_per_host);
  b.bind("detection.p_detect", &c.sim.p_detect);
  b.bind("detection.p_false", &c.sim.p_false);
  b.bind("red.p_discover", &c.sim.p_discover);
  b.bind("red.p_scan", &c.sim.p_scan);
  b.bind("red.p_exploit", &c.sim.p_exploit);
  b.bind("red.p_escalate", &c.sim.p_escalate);
  b.bind("red.initial_foothold", &c.sim.red_initial_foothold);
  b.bind("search.num_simulations", &c.search.num_simulations);
  b.bind("search.c_base", &c.search.c_base);
  b.bind("search.c_init", &c.search.c_init);
  b.bind("search.dirichlet_alpha", &c.search.dirichlet_alpha);
  b.bind("search.noise_fraction", &c.search.noise_fraction);
  b.bind("search.temperature_train", &c.search.temperature_train);
  b.bind("search.temperature_eval", &c.search.temperature_eval);
  b.bind("search.discount", &c.search.discount);
  b.bind("search.dynamic_c1", &c.search.dynamic_c1);
  b.bind("model.hidden", &c.model.hidden);
  b.bind("model.embedding", &c.model.embedding);
  b.bind("model.entity_embed", &c.model.entity_embed);
  b.bind("model.action_embed", &c.model.action_embed);
  b.bind("train.lambda_pi", &c.train.lambda_pi);
  b.bind("train.lambda_v", &c.train.lambda_v);
  b.bind("train.clip_epsilon", &c.train.clip_epsilon);
  b.bind("train.gamma", &c.train.gamma);
  b.bind("train.gae_lambda", &c.train.gae_lambda);
  b.bind("train.unroll_k", &c.train.unroll_k);
  b.bind("train.workers", &c.train.workers);
  b.bind("train.lr", &c.train.lr);
  b.bind("train.minibatch", &c.train.minibatch);
  b.bind("train.epochs", &c.train.epochs);
  b.bind("train.episodes", &c.train.episodes);
  b.bind("train.episodes_per_round", &c.train.episodes_per_round);
  b.bind("train.checkpoint_every", &c.train.checkpoint_every);
  b.bind("train.grad_clip", &c.train.grad_clip);
  b.bind("train.entropy_coef", &c.train.entropy_coef);
  b.bind("train.use_search", &c.train.use_search);
  b.bind("train.actions_from_mcts", &c.train.actions_from_mcts);
  b.bind("train.shared_weights", &c.train.shared_weights);
  return b;
}

}  // namespace detail

inline std::vector<std::pair<std::string, std::string>> RunConfig::to_kv() const {
  RunConfig copy = *this;
  return detail::bind_config(copy).kv;
}

inline RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  RunConfig c;
  auto binder = detail::bind_config(c);
  std::string line, section;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    const std::size_t hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected 'key = value' at " + path + ":" + std::to_string(line_no));
    const std::string key = section + "." + detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    auto it = binder.setters.find(key);
    if (it == binder.setters.end())
      throw ConfigError("config: unknown key '" + key + "' at " + path + ":" + std::to_string(line_no));
    it->second(value);
  }
  c.validate();
  return c;
}

inline void RunConfig::write(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ConfigError("cannot write config file: " + path);
  std::string section;
  for (const auto& [key, value] : to_kv()) {
    const std::size_t dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) f << "\n";
      f << "[" << sec << "]\n";
      section = sec;
    }
    f << key.substr(dot + 1) << " = " << value << "\n";
  }
}

}  // namespace acdz
