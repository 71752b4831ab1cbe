#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "acdzero/config.hpp"
#include "acdzero/errors.hpp"
#include "acdzero/rng.hpp"
#include "acdzero/topology.hpp"

namespace acdz {

enum class Compromise { Clean, UserAccess, RootAccess };
enum class RedPhase { Unknown, Discovered, Scanned, Exploited, Escalated, Impacting };

// Per-step penalties. The magnitudes mirror the confidentiality /
// availability trade-off of enterprise defense scenarios; they are local
// constants of this simulator, not calibrated against any external one.
namespace reward {
inline constexpr double kUserAccessPerHost = -0.1;
inline constexpr double kRootAccessPerHost = -0.3;
inline constexpr double kImpactEvent = -2.0;
inline constexpr double kRestoreCost = -1.0;
inline constexpr double kAnalyzeCost = -0.05;
inline constexpr double kGreenBlocked = -0.1;
inline constexpr double kGreenLocalFail = -0.2;
}  // namespace reward

enum class ActionKind { Sleep, Analyze, Restore, DeployDecoy, BlockTraffic, AllowTraffic };

inline const char* action_kind_name(ActionKind k) {
  switch (k) {
    case ActionKind::Sleep: return "Sleep";
    case ActionKind::Analyze: return "Analyze";
    case ActionKind::Restore: return "Restore";
    case ActionKind::DeployDecoy: return "DeployDecoy";
    case ActionKind::BlockTraffic: return "BlockTraffic";
    case ActionKind::AllowTraffic: return "AllowTraffic";
  }
  return "?";
}

struct BlueAction {
  ActionKind kind = ActionKind::Sleep;
  int agent = 0;
  int host = -1;                     // Analyze / Restore / DeployDecoy
  int subnet_a = -1, subnet_b = -1;  // BlockTraffic / AllowTraffic

  static BlueAction sleep(int agent) { return {ActionKind::Sleep, agent, -1, -1, -1}; }
  static BlueAction analyze(int agent, int host) { return {ActionKind::Analyze, agent, host, -1, -1}; }
  static BlueAction restore(int agent, int host) { return {ActionKind::Restore, agent, host, -1, -1}; }
  static BlueAction deploy_decoy(int agent, int host) { return {ActionKind::DeployDecoy, agent, host, -1, -1}; }
  static BlueAction block(int agent, int a, int b) { return {ActionKind::BlockTraffic, agent, -1, a, b}; }
  static BlueAction allow(int agent, int a, int b) { return {ActionKind::AllowTraffic, agent, -1, a, b}; }

  bool host_targeted() const {
    return kind == ActionKind::Analyze || kind == ActionKind::Restore || kind == ActionKind::DeployDecoy;
  }
  bool traffic_targeted() const {
    return kind == ActionKind::BlockTraffic || kind == ActionKind::AllowTraffic;
  }
};

struct HostState {
  Compromise compromise = Compromise::Clean;
  std::vector<int> decoy_ports;
  std::vector<FileRecord> files;
  std::optional<int> last_compromise_step;
  HostRole role = HostRole::Workstation;
};

struct RedState {
  std::vector<RedPhase> phase;  // per host
  std::set<int> footholds;
  std::uint64_t rng_stream = 0;
};

struct HostObservation {
  int host = 0;
  int subnet = 0;
  HostRole role = HostRole::Workstation;
  int os_tag = 0;
  std::vector<Service> services;
  std::vector<int> decoy_ports;
  bool scan_alert = false;
  bool exploit_alert = false;
  bool decoy_alert = false;
  bool analyzed = false;               // analysis ran this step
  std::vector<FileRecord> files;       // populated only when analyzed
};

struct LinkObservation {
  int subnet_a = 0, subnet_b = 0;
  bool allowed = true;
};

// What one defender sees. Deliberately carries no compromise state. The
// static, public facts (subnet ownership, horizon) ride along so the
// graph layer needs no topology pointer.
struct LocalObservation {
  int agent = 0;
  int timestep = 0;
  int horizon = 0;
  int phase = 0;  // horizon thirds: 0, 1, 2
  std::vector<int> owned_subnets;
  std::vector<std::pair<int, int>> visible_subnet_owners;  // (subnet, agent)
  std::vector<HostObservation> hosts;
  std::vector<LinkObservation> links;
  std::array<std::uint8_t, kNumAgents - 1> inbox{};  // other agents, ascending id
  bool action_rejected = false;
};

struct RewardBreakdown {
  double user_access = 0.0;
  double root_access = 0.0;
  double impact = 0.0;
  double restore_cost = 0.0;
  double analyze_cost = 0.0;
  double green_blocked = 0.0;
  double green_local_fail = 0.0;

  double total() const {
    return user_access + root_access + impact + restore_cost + analyze_cost + green_blocked +
           green_local_fail;
  }
};

struct RedEvent {
  enum class Kind { Discover, Scan, Exploit, ExploitDecoy, Escalate, Impact };
  Kind kind;
  int host;     // target
  bool success; // decoy hits and impacts are always "true"
};

inline const char* red_event_name(RedEvent::Kind k) {
  switch (k) {
    case RedEvent::Kind::Discover: return "discover";
    case RedEvent::Kind::Scan: return "scan";
    case RedEvent::Kind::Exploit: return "exploit";
    case RedEvent::Kind::ExploitDecoy: return "exploit_decoy";
    case RedEvent::Kind::Escalate: return "escalate";
    case RedEvent::Kind::Impact: return "impact";
  }
  return "?";
}

struct GroundTruth {
  std::vector<Compromise> compromise;
  std::vector<RedPhase> red_phase;
  int impact_events = 0;
};

struct StepResult {
  std::vector<LocalObservation> observations;
  std::vector<double> agent_rewards;
  double global_reward = 0.0;
  RewardBreakdown components;
  std::vector<bool> rejected;
  bool done = false;
  GroundTruth truth;  // metrics only, never fed to agents
};

// One-step-delayed broadcast of one byte per agent. inbox[i] holds the
// other agents' bytes in ascending agent id order.
inline std::array<std::array<std::uint8_t, kNumAgents - 1>, kNumAgents> deliver_messages(
    const std::array<int, kNumAgents>& outbox) {
  for (int v : outbox)
    if (v < 0 || v > 255) throw ContractError("deliver_messages: value out of [0,255]");
  std::array<std::array<std::uint8_t, kNumAgents - 1>, kNumAgents> inboxes{};
  for (int receiver = 0; receiver < kNumAgents; ++receiver) {
    int slot = 0;
    for (int sender = 0; sender < kNumAgents; ++sender) {
      if (sender == receiver) continue;
      inboxes[receiver][slot++] = static_cast<std::uint8_t>(outbox[sender]);
    }
  }
  return inboxes;
}

// Debug/wire form of an observation. By construction it carries no
// ground-truth compromise state.
inline nlohmann::json to_json(const LocalObservation& obs) {
  nlohmann::json j;
  j["agent"] = obs.agent;
  j["timestep"] = obs.timestep;
  j["horizon"] = obs.horizon;
  j["phase"] = obs.phase;
  j["owned_subnets"] = obs.owned_subnets;
  j["action_rejected"] = obs.action_rejected;
  nlohmann::json hosts = nlohmann::json::array();
  for (const auto& h : obs.hosts) {
    nlohmann::json hj;
    hj["host"] = h.host;
    hj["subnet"] = h.subnet;
    hj["role"] = role_name(h.role);
    hj["os"] = h.os_tag;
    nlohmann::json svcs = nlohmann::json::array();
    for (const auto& s : h.services) svcs.push_back({{"port", s.port}, {"kind", kServiceNames[s.kind]}});
    hj["services"] = std::move(svcs);
    hj["decoy_ports"] = h.decoy_ports;
    hj["alerts"] = {{"scan", h.scan_alert}, {"exploit", h.exploit_alert}, {"decoy", h.decoy_alert}};
    if (h.analyzed) {
      nlohmann::json files = nlohmann::json::array();
      for (const auto& f : h.files) files.push_back({{"density", f.density}, {"signed", f.signed_flag}});
      hj["files"] = std::move(files);
    }
    hosts.push_back(std::move(hj));
  }
  j["hosts"] = std::move(hosts);
  nlohmann::json links = nlohmann::json::array();
  for (const auto& l : obs.links)
    links.push_back({{"a", l.subnet_a}, {"b", l.subnet_b}, {"allowed", l.allowed}});
  j["links"] = std::move(links);
  j["inbox"] = std::vector<int>(obs.inbox.begin(), obs.inbox.end());
  return j;
}

namespace detail {
// Draw-stream purpose tags for per-(step, entity) keying.
enum StreamTag : std::uint64_t {
  kRedChoice = 1,
  kRedTarget = 2,
  kRedRoll = 3,
  kRedPort = 4,
  kRedFile = 5,
  kGreen = 6,
  kObsScan = 7,
  kObsExploit = 8,
  kDecoyPort = 9,
  kInit = 10,
};
}  // namespace detail

// Seedable multi-subnet defense environment: blue actions, a finite-state
// red attacker, background green users, partial observations, and a
// per-component reward ledger.
class Environment {
 public:
  Environment(SimConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) { reset(seed); }

  void reset(std::uint64_t seed) {
    cfg_.validate();
    seed_ = seed;
    topo_ = generate_topology(seed, cfg_);
    timestep_ = 0;
    impact_total_ = 0;
    hosts_.assign(topo_.hosts.size(), HostState{});
    for (std::size_t h = 0; h < hosts_.size(); ++h) {
      hosts_[h].role = topo_.hosts[h].role;
      hosts_[h].files = topo_.hosts[h].baseline_files;
    }
    red_ = RedState{};
    red_.phase.assign(topo_.hosts.size(), RedPhase::Unknown);
    red_.rng_stream = seed;
    allowed_.clear();
    for (const auto& [a, b] : topo_.links) allowed_[{a, b}] = true;
    pending_inbox_ = {};
    have_pending_ = false;

    if (cfg_.red_initial_foothold) {
      // Initial foothold: a random workstation in the first zone.
      std::vector<int> candidates;
      for (const auto& s : topo_.subnets)
        if (s.zone == 0)
          for (int h : s.hosts)
            if (topo_.hosts[h].role == HostRole::Workstation) candidates.push_back(h);
      Rng init(seed_, {detail::kInit});
      const int start =
          candidates[init.uniform_int(0, static_cast<std::int64_t>(candidates.size()) - 1)];
      red_.phase[start] = RedPhase::Exploited;
      red_.footholds.insert(start);
      hosts_[start].compromise = Compromise::UserAccess;
      hosts_[start].last_compromise_step = 0;
      hosts_[start].files.push_back(FileRecord{0.6 + 0.4 * init.uniform(), false});
    }

    current_obs_.clear();
    for (int a = 0; a < kNumAgents; ++a) current_obs_.push_back(make_observation(a, {}, {}, false));
    if (replay_) write_meta();
    meta_written_ = replay_ != nullptr;
  }

  const Topology& topology() const { return topo_; }
  const SimConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  int timestep() const { return timestep_; }
  bool done() const { return timestep_ >= cfg_.horizon; }
  bool link_allowed(int a, int b) const {
    if (a > b) std::swap(a, b);
    auto it = allowed_.find({a, b});
    return it != allowed_.end() && it->second;
  }
  const HostState& host_state(int h) const { return hosts_[h]; }
  const RedState& red_state() const { return red_; }
  const LocalObservation& observation(int agent) const { return current_obs_[agent]; }
  const std::vector<LocalObservation>& observations() const { return current_obs_; }

  // Streams one JSON record per step (plus a topology header) for replay
  // debugging and metric recomputation.
  void set_replay_sink(std::ostream* sink) {
    replay_ = sink;
    if (replay_ && !meta_written_) {
      write_meta();
      meta_written_ = true;
    }
  }

  // Messages emitted after the previous decision; visible in the
  // observations produced by the next step() call.
  void queue_messages(const std::array<int, kNumAgents>& outbox) {
    pending_inbox_ = deliver_messages(outbox);
    have_pending_ = true;
  }

  StepResult step(const std::vector<BlueAction>& actions) {
    if (done()) throw ContractError("step: episode is complete");
    if (static_cast<int>(actions.size()) != kNumAgents)
      throw ContractError("step: expected one action per agent");
    const int t = timestep_;

    StepResult result;
    result.rejected.assign(kNumAgents, false);
    result.agent_rewards.assign(kNumAgents, 0.0);
    std::vector<RedEvent> events;
    std::vector<bool> restored_now(hosts_.size(), false);
    std::vector<bool> analyzed_now(hosts_.size(), false);
    auto& comp = result.components;
    nlohmann::json action_log = nlohmann::json::array();

    // -- blue phase --
    for (int agent = 0; agent < kNumAgents; ++agent) {
      BlueAction act = actions[agent];
      act.agent = agent;
      const bool ok = action_in_scope(act);
      if (!ok) {
        result.rejected[agent] = true;
        act = BlueAction::sleep(agent);
      }
      apply_blue(act, t, comp, result.agent_rewards, restored_now, analyzed_now);
      nlohmann::json a;
      a["agent"] = agent;
      a["kind"] = action_kind_name(act.kind);
      if (act.host_targeted()) a["host"] = act.host;
      if (act.traffic_targeted()) {
        a["a"] = act.subnet_a;
        a["b"] = act.subnet_b;
      }
      a["rejected"] = result.rejected[agent];
      action_log.push_back(std::move(a));
    }

    // -- red phase --
    red_step(t, comp, result.agent_rewards, restored_now, events);

    // -- green phase --
    green_step(t, comp, result.agent_rewards);

    // -- standing compromise penalties --
    for (std::size_t h = 0; h < hosts_.size(); ++h) {
      const int owner = topo_.owner_of_host(static_cast<int>(h));
      if (hosts_[h].compromise == Compromise::UserAccess) {
        comp.user_access += reward::kUserAccessPerHost;
        result.agent_rewards[owner] += reward::kUserAccessPerHost;
      } else if (hosts_[h].compromise == Compromise::RootAccess) {
        comp.root_access += reward::kRootAccessPerHost;
        result.agent_rewards[owner] += reward::kRootAccessPerHost;
      }
    }

    result.global_reward = comp.total();
    timestep_ = t + 1;
    result.done = done();

    // -- observations --
    current_obs_.clear();
    for (int a = 0; a < kNumAgents; ++a)
      current_obs_.push_back(make_observation(a, events, analyzed_now, result.rejected[a]));
    have_pending_ = false;
    pending_inbox_ = {};
    result.observations = current_obs_;

    result.truth.compromise.reserve(hosts_.size());
    result.truth.red_phase = red_.phase;
    for (const auto& h : hosts_) result.truth.compromise.push_back(h.compromise);
    result.truth.impact_events = impacts_this_step_;

    if (replay_) write_step(t, action_log, events, result);
    return result;
  }

 private:
  bool action_in_scope(const BlueAction& act) const {
    switch (act.kind) {
      case ActionKind::Sleep:
        return true;
      case ActionKind::Analyze:
      case ActionKind::Restore:
      case ActionKind::DeployDecoy:
        return act.host >= 0 && act.host < topo_.host_count() &&
               topo_.owner_of_host(act.host) == act.agent;
      case ActionKind::BlockTraffic:
      case ActionKind::AllowTraffic: {
        if (act.subnet_a < 0 || act.subnet_b < 0 || act.subnet_a >= topo_.subnet_count() ||
            act.subnet_b >= topo_.subnet_count())
          return false;
        if (!topo_.has_link(act.subnet_a, act.subnet_b)) return false;
        return topo_.owner_of_subnet(act.subnet_a) == act.agent ||
               topo_.owner_of_subnet(act.subnet_b) == act.agent;
      }
    }
    return false;
  }

  void apply_blue(const BlueAction& act, int t, RewardBreakdown& comp, std::vector<double>& agent_rewards,
                  std::vector<bool>& restored_now, std::vector<bool>& analyzed_now) {
    switch (act.kind) {
      case ActionKind::Sleep:
        break;
      case ActionKind::Analyze:
        comp.analyze_cost += reward::kAnalyzeCost;
        agent_rewards[act.agent] += reward::kAnalyzeCost;
        analyzed_now[act.host] = true;
        break;
      case ActionKind::Restore: {
        comp.restore_cost += reward::kRestoreCost;
        agent_rewards[act.agent] += reward::kRestoreCost;
        HostState& h = hosts_[act.host];
        h.compromise = Compromise::Clean;
        h.last_compromise_step.reset();
        std::erase_if(h.files, [](const FileRecord& f) { return !f.signed_flag; });
        red_.footholds.erase(act.host);
        if (red_.phase[act.host] != RedPhase::Unknown) red_.phase[act.host] = RedPhase::Discovered;
        restored_now[act.host] = true;
        break;
      }
      case ActionKind::DeployDecoy: {
        HostState& h = hosts_[act.host];
        if (static_cast<int>(h.decoy_ports.size()) >= cfg_.max_decoys_per_host) break;
        std::set<int> used(h.decoy_ports.begin(), h.decoy_ports.end());
        for (const Service& s : topo_.hosts[act.host].services) used.insert(s.port);
        Rng r(seed_, {static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(act.host),
                      detail::kDecoyPort});
        int port = -1;
        for (int k = 0; k < kNumServiceKinds && port < 0; ++k)
          if (!used.count(kDefaultPorts[k])) port = kDefaultPorts[k];
        while (port < 0 || used.count(port)) port = static_cast<int>(r.uniform_int(49152, 65535));
        h.decoy_ports.push_back(port);
        break;
      }
      case ActionKind::BlockTraffic:
      case ActionKind::AllowTraffic: {
        int a = act.subnet_a, b = act.subnet_b;
        if (a > b) std::swap(a, b);
        allowed_[{a, b}] = act.kind == ActionKind::AllowTraffic;
        break;
      }
    }
  }

  bool red_reachable(int from_host, int to_host) const {
    const int sa = topo_.hosts[from_host].subnet;
    const int sb = topo_.hosts[to_host].subnet;
    if (sa == sb) return true;
    return topo_.has_link(sa, sb) && link_allowed(sa, sb);
  }

  // One action per foothold per step, chosen uniformly over the kinds
  // currently eligible, then uniformly over that kind's targets.
  void red_step(int t, RewardBreakdown& comp, std::vector<double>& agent_rewards,
                const std::vector<bool>& restored_now, std::vector<RedEvent>& events) {
    impacts_this_step_ = 0;
    const std::vector<int> footholds(red_.footholds.begin(), red_.footholds.end());
    for (int f : footholds) {
      if (!red_.footholds.count(f)) continue;  // restored earlier this step
      std::vector<int> discover_targets, scan_targets, exploit_targets;
      for (int h = 0; h < topo_.host_count(); ++h) {
        if (h == f || restored_now[h] || !red_reachable(f, h)) continue;
        switch (red_.phase[h]) {
          case RedPhase::Unknown: discover_targets.push_back(h); break;
          case RedPhase::Discovered: scan_targets.push_back(h); break;
          case RedPhase::Scanned: exploit_targets.push_back(h); break;
          default: break;
        }
      }
      enum Kind { kDiscover, kScan, kExploit, kEscalate, kImpact };
      std::vector<Kind> kinds;
      if (!discover_targets.empty()) kinds.push_back(kDiscover);
      if (!scan_targets.empty()) kinds.push_back(kScan);
      if (!exploit_targets.empty()) kinds.push_back(kExploit);
      if (red_.phase[f] == RedPhase::Exploited) kinds.push_back(kEscalate);
      if ((red_.phase[f] == RedPhase::Escalated || red_.phase[f] == RedPhase::Impacting) &&
          hosts_[f].role == HostRole::OperationalServer)
        kinds.push_back(kImpact);
      if (kinds.empty()) continue;

      auto key = [&](std::uint64_t tag) {
        return Rng(seed_, {static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(f), tag});
      };
      Kind kind = kinds[key(detail::kRedChoice).uniform_int(0, static_cast<std::int64_t>(kinds.size()) - 1)];
      auto pick = [&](const std::vector<int>& v) {
        return v[key(detail::kRedTarget).uniform_int(0, static_cast<std::int64_t>(v.size()) - 1)];
      };
      switch (kind) {
        case kDiscover: {
          const int h = pick(discover_targets);
          const bool ok = key(detail::kRedRoll).bernoulli(cfg_.p_discover);
          if (ok) red_.phase[h] = RedPhase::Discovered;
          events.push_back({RedEvent::Kind::Discover, h, ok});
          break;
        }
        case kScan: {
          const int h = pick(scan_targets);
          const bool ok = key(detail::kRedRoll).bernoulli(cfg_.p_scan);
          if (ok) red_.phase[h] = RedPhase::Scanned;
          events.push_back({RedEvent::Kind::Scan, h, ok});
          break;
        }
        case kExploit: {
          const int h = pick(exploit_targets);
          const auto& real = topo_.hosts[h].services;
          const auto& decoys = hosts_[h].decoy_ports;
          const std::size_t total = real.size() + decoys.size();
          const std::size_t port_ix =
              key(detail::kRedPort).uniform_int(0, static_cast<std::int64_t>(total) - 1);
          if (port_ix >= real.size()) {
            events.push_back({RedEvent::Kind::ExploitDecoy, h, true});
            break;
          }
          const bool ok = key(detail::kRedRoll).bernoulli(cfg_.p_exploit);
          if (ok) {
            red_.phase[h] = RedPhase::Exploited;
            red_.footholds.insert(h);
            hosts_[h].compromise = Compromise::UserAccess;
            hosts_[h].last_compromise_step = t;
            hosts_[h].files.push_back(FileRecord{0.6 + 0.4 * key(detail::kRedFile).uniform(), false});
          }
          events.push_back({RedEvent::Kind::Exploit, h, ok});
          break;
        }
        case kEscalate: {
          const bool ok = key(detail::kRedRoll).bernoulli(cfg_.p_escalate);
          if (ok) {
            red_.phase[f] = RedPhase::Escalated;
            hosts_[f].compromise = Compromise::RootAccess;
            if (!hosts_[f].last_compromise_step) hosts_[f].last_compromise_step = t;
            hosts_[f].files.push_back(FileRecord{0.6 + 0.4 * key(detail::kRedFile).uniform(), false});
          }
          events.push_back({RedEvent::Kind::Escalate, f, ok});
          break;
        }
        case kImpact: {
          red_.phase[f] = RedPhase::Impacting;
          impacts_this_step_ += 1;
          impact_total_ += 1;
          comp.impact += reward::kImpactEvent;
          agent_rewards[topo_.owner_of_host(f)] += reward::kImpactEvent;
          events.push_back({RedEvent::Kind::Impact, f, true});
          break;
        }
      }
    }
  }

  // Every workstation runs one task per step: a local task that fails on
  // a compromised host, or a remote task that fails over a blocked link.
  void green_step(int t, RewardBreakdown& comp, std::vector<double>& agent_rewards) {
    for (int h = 0; h < topo_.host_count(); ++h) {
      if (topo_.hosts[h].role != HostRole::Workstation) continue;
      Rng g(seed_, {static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(h), detail::kGreen});
      const int owner = topo_.owner_of_host(h);
      if (hosts_[h].compromise != Compromise::Clean) {
        comp.green_local_fail += reward::kGreenLocalFail;
        agent_rewards[owner] += reward::kGreenLocalFail;
        continue;
      }
      if (!g.bernoulli(0.5)) continue;  // local task on a clean host succeeds
      const auto adj = topo_.adjacent_subnets(topo_.hosts[h].subnet);
      if (adj.empty()) continue;
      const int target = adj[g.uniform_int(0, static_cast<std::int64_t>(adj.size()) - 1)];
      if (!link_allowed(topo_.hosts[h].subnet, target)) {
        comp.green_blocked += reward::kGreenBlocked;
        agent_rewards[owner] += reward::kGreenBlocked;
      }
    }
  }

  LocalObservation make_observation(int agent, const std::vector<RedEvent>& events,
                                    const std::vector<bool>& analyzed_now, bool rejected) const {
    LocalObservation obs;
    obs.agent = agent;
    obs.timestep = timestep_;
    obs.horizon = cfg_.horizon;
    obs.phase = std::min(2, 3 * timestep_ / cfg_.horizon);
    obs.owned_subnets = topo_.agent_subnets(agent);
    obs.action_rejected = rejected;

    std::vector<bool> scan_act(topo_.host_count(), false), exploit_act(topo_.host_count(), false),
        decoy_act(topo_.host_count(), false);
    for (const auto& e : events) {
      if (e.kind == RedEvent::Kind::Scan) scan_act[e.host] = true;
      if (e.kind == RedEvent::Kind::Exploit || e.kind == RedEvent::Kind::Escalate)
        exploit_act[e.host] = true;
      if (e.kind == RedEvent::Kind::ExploitDecoy) decoy_act[e.host] = true;
    }
    const int t_obs = timestep_ - 1;  // alerts describe the step just taken

    for (int s : obs.owned_subnets) {
      for (int h : topo_.subnets[s].hosts) {
        HostObservation ho;
        ho.host = h;
        ho.subnet = s;
        ho.role = topo_.hosts[h].role;
        ho.os_tag = topo_.hosts[h].os_tag;
        ho.services = topo_.hosts[h].services;
        ho.decoy_ports = hosts_[h].decoy_ports;
        if (t_obs >= 0) {
          Rng rs(seed_, {static_cast<std::uint64_t>(t_obs), static_cast<std::uint64_t>(h),
                         detail::kObsScan});
          Rng re(seed_, {static_cast<std::uint64_t>(t_obs), static_cast<std::uint64_t>(h),
                         detail::kObsExploit});
          ho.scan_alert = scan_act[h] ? rs.bernoulli(cfg_.p_detect) : rs.bernoulli(cfg_.p_false);
          ho.exploit_alert = exploit_act[h] ? re.bernoulli(cfg_.p_detect) : re.bernoulli(cfg_.p_false);
          ho.decoy_alert = decoy_act[h];
          if (!analyzed_now.empty() && analyzed_now[h]) {
            ho.analyzed = true;
            ho.files = hosts_[h].files;
          }
        }
        obs.hosts.push_back(std::move(ho));
      }
      for (int n : topo_.adjacent_subnets(s)) {
        const int a = std::min(s, n), b = std::max(s, n);
        bool seen = false;
        for (const auto& l : obs.links) seen = seen || (l.subnet_a == a && l.subnet_b == b);
        if (!seen) obs.links.push_back({a, b, link_allowed(a, b)});
      }
    }
    std::set<int> visible(obs.owned_subnets.begin(), obs.owned_subnets.end());
    for (const auto& l : obs.links) {
      visible.insert(l.subnet_a);
      visible.insert(l.subnet_b);
    }
    for (int s : visible) obs.visible_subnet_owners.emplace_back(s, topo_.owner_of_subnet(s));
    if (have_pending_) obs.inbox = pending_inbox_[agent];
    return obs;
  }

  std::string compromise_string() const {
    std::string out;
    out.reserve(hosts_.size());
    for (const auto& h : hosts_)
      out.push_back(h.compromise == Compromise::Clean ? 'C'
                    : h.compromise == Compromise::UserAccess ? 'U'
                                                             : 'R');
    return out;
  }

  std::string phase_string() const {
    static constexpr char kPhaseChar[] = {'U', 'D', 'S', 'X', 'E', 'I'};
    std::string out;
    out.reserve(red_.phase.size());
    for (RedPhase p : red_.phase) out.push_back(kPhaseChar[static_cast<int>(p)]);
    return out;
  }

  void write_meta() {
    nlohmann::json meta;
    meta["type"] = "meta";
    meta["seed"] = seed_;
    meta["horizon"] = cfg_.horizon;
    meta["comp0"] = compromise_string();
    nlohmann::json hosts = nlohmann::json::array();
    for (const auto& h : topo_.hosts) {
      hosts.push_back({{"id", h.id},
                       {"subnet", h.subnet},
                       {"role", role_name(h.role)},
                       {"agent", topo_.owner_of_host(h.id)}});
    }
    meta["hosts"] = std::move(hosts);
    nlohmann::json subnets = nlohmann::json::array();
    for (const auto& s : topo_.subnets)
      subnets.push_back({{"id", s.id}, {"zone", s.zone}, {"agent", s.agent}});
    meta["subnets"] = std::move(subnets);
    nlohmann::json links = nlohmann::json::array();
    for (const auto& [a, b] : topo_.links) links.push_back({a, b});
    meta["links"] = std::move(links);
    (*replay_) << meta.dump() << "\n";
  }

  void write_step(int t, const nlohmann::json& action_log, const std::vector<RedEvent>& events,
                  const StepResult& result) {
    nlohmann::json rec;
    rec["type"] = "step";
    rec["t"] = t;
    rec["actions"] = action_log;
    nlohmann::json ev = nlohmann::json::array();
    for (const auto& e : events)
      ev.push_back({{"kind", red_event_name(e.kind)}, {"host", e.host}, {"ok", e.success}});
    rec["events"] = std::move(ev);
    rec["reward"] = {{"global", result.global_reward},
                     {"per_agent", result.agent_rewards},
                     {"components",
                      {{"user_access", result.components.user_access},
                       {"root_access", result.components.root_access},
                       {"impact", result.components.impact},
                       {"restore_cost", result.components.restore_cost},
                       {"analyze_cost", result.components.analyze_cost},
                       {"green_blocked", result.components.green_blocked},
                       {"green_local_fail", result.components.green_local_fail}}}};
    rec["comp"] = compromise_string();
    rec["phases"] = phase_string();
    nlohmann::json blocked = nlohmann::json::array();
    for (const auto& [pair, ok] : allowed_)
      if (!ok) blocked.push_back({pair.first, pair.second});
    rec["blocked"] = std::move(blocked);
    (*replay_) << rec.dump() << "\n";
  }

  SimConfig cfg_;
  std::uint64_t seed_ = 0;
  Topology topo_;
  int timestep_ = 0;
  std::vector<HostState> hosts_;
  RedState red_;
  std::map<std::pair<int, int>, bool> allowed_;
  std::vector<LocalObservation> current_obs_;
  std::array<std::array<std::uint8_t, kNumAgents - 1>, kNumAgents> pending_inbox_{};
  bool have_pending_ = false;
  int impacts_this_step_ = 0;
  int impact_total_ = 0;
  std::ostream* replay_ = nullptr;
  bool meta_written_ = false;
};

}  // namespace acdz
