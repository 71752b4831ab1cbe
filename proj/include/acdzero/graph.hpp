#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "acdzero/errors.hpp"
#include "acdzero/sim.hpp"

namespace acdz {

enum class NodeKind { Host, Subnet, Port, File };
enum class EdgeKind { PortOf, FileOn, HostInSubnet, SubnetLink };

inline const char* node_kind_name(NodeKind k) {
  switch (k) {
    case NodeKind::Host: return "host";
    case NodeKind::Subnet: return "subnet";
    case NodeKind::Port: return "port";
    case NodeKind::File: return "file";
  }
  return "?";
}

inline const char* edge_kind_name(EdgeKind k) {
  switch (k) {
    case EdgeKind::PortOf: return "port-of";
    case EdgeKind::FileOn: return "file-on";
    case EdgeKind::HostInSubnet: return "host-in-subnet";
    case EdgeKind::SubnetLink: return "subnet-link";
  }
  return "?";
}

// Fixed per-kind feature widths; identical across every topology.
namespace feat {
inline constexpr int kHostWidth = 12;    // role(3) os(4) alerts(3) decoys(1) since-restore(1)
inline constexpr int kPortWidth = 19;    // kind(8) bucket(8) ephemeral default decoy
inline constexpr int kFileWidth = 2;     // density, signed
inline constexpr int kSubnetWidth = 10;  // message bits(8) owned(1) blocked-fraction(1)
inline constexpr int kGlobalWidth = 6;   // t/H, phase(3), alerts, blocked

inline int width(NodeKind k) {
  switch (k) {
    case NodeKind::Host: return kHostWidth;
    case NodeKind::Subnet: return kSubnetWidth;
    case NodeKind::Port: return kPortWidth;
    case NodeKind::File: return kFileWidth;
  }
  return 0;
}

inline int port_bucket(int port) {
  if (port < 100) return 0;
  if (port < 500) return 1;
  if (port < 1024) return 2;
  if (port < 2048) return 3;
  if (port < 8192) return 4;
  if (port < 32768) return 5;
  if (port < 49152) return 6;
  return 7;
}
}  // namespace feat

struct GraphNode {
  NodeKind kind;
  int key_a = 0;  // host id / subnet id
  int key_b = 0;  // port number / file index
  std::vector<double> features;
};

struct GraphEdge {
  int src = 0, dst = 0;
  EdgeKind kind;
};

struct AttributedGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;
  std::vector<double> global_context;

  std::vector<int> nodes_of_kind(NodeKind k) const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(nodes.size()); ++i)
      if (nodes[i].kind == k) out.push_back(i);
    return out;
  }

  int find_node(NodeKind k, int key_a, int key_b = 0) const {
    for (int i = 0; i < static_cast<int>(nodes.size()); ++i)
      if (nodes[i].kind == k && nodes[i].key_a == key_a && nodes[i].key_b == key_b) return i;
    return -1;
  }

  void check() const {
    for (const auto& n : nodes)
      if (static_cast<int>(n.features.size()) != feat::width(n.kind))
        throw ContractError("graph: node feature width mismatch");
    for (const auto& e : edges)
      if (e.src < 0 || e.dst < 0 || e.src >= static_cast<int>(nodes.size()) ||
          e.dst >= static_cast<int>(nodes.size()))
        throw ContractError("graph: edge endpoint out of range");
  }
};

// Cross-step state the instantaneous observation does not carry: analysis
// results and the steps at which this agent restored hosts.
struct AgentMemory {
  std::map<int, std::vector<FileRecord>> analyzed_files;
  std::map<int, int> last_restore_step;

  void observe(const LocalObservation& obs) {
    for (const auto& h : obs.hosts)
      if (h.analyzed) analyzed_files[h.host] = h.files;
  }

  void note_action(const BlueAction& act, int timestep) {
    if (act.kind == ActionKind::Restore) {
      last_restore_step[act.host] = timestep;
      analyzed_files.erase(act.host);  // reimaged; stale analysis dropped
    }
  }

  void reset() {
    analyzed_files.clear();
    last_restore_step.clear();
  }
};

// Message byte layout: bits 0-3 per-owned-subnet suspicion, bit 4 restore
// performed, bit 5 decoy triggered, bits 6-7 alerted host count clipped
// to 3.
struct AgentStepSummary {
  std::array<bool, 4> subnet_suspicion{};
  bool restore_performed = false;
  bool decoy_triggered = false;
  int alerted_hosts = 0;
};

inline std::uint8_t encode_outgoing_message(const AgentStepSummary& s) {
  std::uint8_t byte = 0;
  for (int i = 0; i < 4; ++i)
    if (s.subnet_suspicion[i]) byte |= static_cast<std::uint8_t>(1u << i);
  if (s.restore_performed) byte |= 1u << 4;
  if (s.decoy_triggered) byte |= 1u << 5;
  const int clipped = std::min(3, std::max(0, s.alerted_hosts));
  byte |= static_cast<std::uint8_t>(clipped << 6);
  return byte;
}

inline AgentStepSummary summarize_step(const LocalObservation& obs, const BlueAction& own_action) {
  AgentStepSummary s;
  s.restore_performed = own_action.kind == ActionKind::Restore;
  for (const auto& h : obs.hosts) {
    const bool alerted = h.scan_alert || h.exploit_alert || h.decoy_alert;
    if (alerted) {
      s.alerted_hosts += 1;
      for (std::size_t i = 0; i < obs.owned_subnets.size() && i < 4; ++i)
        if (obs.owned_subnets[i] == h.subnet) s.subnet_suspicion[i] = true;
    }
    s.decoy_triggered = s.decoy_triggered || h.decoy_alert;
  }
  return s;
}

// MSB-first bit expansion of an inbound byte.
inline std::array<double, 8> decode_message_bits(std::uint8_t byte) {
  std::array<double, 8> bits{};
  for (int i = 0; i < 8; ++i) bits[i] = (byte >> (7 - i)) & 1u ? 1.0 : 0.0;
  return bits;
}

inline int host_subnet_of(const LocalObservation& obs, int host) {
  for (const auto& h : obs.hosts)
    if (h.host == host) return h.subnet;
  throw ContractError("observation does not contain host " + std::to_string(host));
}

inline int subnet_owner_of(const LocalObservation& obs, int subnet) {
  for (const auto& [s, agent] : obs.visible_subnet_owners)
    if (s == subnet) return agent;
  return -1;
}

// Environment-wide signal: [t/H, phase one-hot(3), alert load, blocked
// link fraction].
inline std::vector<double> build_global_context(const LocalObservation& obs) {
  const int horizon = obs.horizon;
  std::vector<double> g(feat::kGlobalWidth, 0.0);
  g[0] = horizon > 0 ? static_cast<double>(obs.timestep) / horizon : 0.0;
  g[1 + std::min(2, std::max(0, obs.phase))] = 1.0;
  int alerts = 0;
  for (const auto& h : obs.hosts)
    alerts += static_cast<int>(h.scan_alert) + static_cast<int>(h.exploit_alert) +
              static_cast<int>(h.decoy_alert);
  const int host_count = static_cast<int>(obs.hosts.size());
  g[4] = host_count > 0 ? std::min(1.0, static_cast<double>(alerts) / (3.0 * host_count)) : 0.0;
  int blocked = 0;
  for (const auto& l : obs.links) blocked += l.allowed ? 0 : 1;
  g[5] = obs.links.empty() ? 0.0 : static_cast<double>(blocked) / static_cast<double>(obs.links.size());
  return g;
}

// Observation -> attributed graph. Deterministic given (obs, memory):
// one Host node per owned host, one Port node per service or decoy, one
// File node per remembered analysis record, one Subnet node per owned
// subnet plus a stub per adjacent foreign subnet.
inline AttributedGraph build_graph(const LocalObservation& obs, const AgentMemory& memory) {
  const int horizon = obs.horizon;
  AttributedGraph g;

  std::vector<int> subnet_ids = obs.owned_subnets;
  std::vector<bool> owned_flag(subnet_ids.size(), true);
  for (const auto& l : obs.links) {
    for (int s : {l.subnet_a, l.subnet_b}) {
      if (std::find(subnet_ids.begin(), subnet_ids.end(), s) == subnet_ids.end()) {
        subnet_ids.push_back(s);
        owned_flag.push_back(false);
      }
    }
  }

  std::map<int, int> subnet_node;
  for (std::size_t i = 0; i < subnet_ids.size(); ++i) {
    const int sid = subnet_ids[i];
    GraphNode n;
    n.kind = NodeKind::Subnet;
    n.key_a = sid;
    n.features.assign(feat::kSubnetWidth, 0.0);
    if (!owned_flag[i]) {
      // A foreign stub carries the latest byte from the agent that owns
      // it; owners are static so the mapping is unambiguous.
      const int sender = subnet_owner_of(obs, sid);
      if (sender >= 0 && sender != obs.agent) {
        const int slot = sender < obs.agent ? sender : sender - 1;
        const auto bits = decode_message_bits(obs.inbox[slot]);
        for (int b = 0; b < 8; ++b) n.features[b] = bits[b];
      }
    }
    n.features[8] = owned_flag[i] ? 1.0 : 0.0;
    int incident = 0, blocked = 0;
    for (const auto& l : obs.links)
      if (l.subnet_a == sid || l.subnet_b == sid) {
        incident += 1;
        blocked += l.allowed ? 0 : 1;
      }
    n.features[9] = incident > 0 ? static_cast<double>(blocked) / incident : 0.0;
    subnet_node[sid] = static_cast<int>(g.nodes.size());
    g.nodes.push_back(std::move(n));
  }

  for (const auto& h : obs.hosts) {
    GraphNode n;
    n.kind = NodeKind::Host;
    n.key_a = h.host;
    n.features.assign(feat::kHostWidth, 0.0);
    n.features[static_cast<int>(h.role)] = 1.0;
    n.features[3 + h.os_tag] = 1.0;
    n.features[7] = h.scan_alert ? 1.0 : 0.0;
    n.features[8] = h.exploit_alert ? 1.0 : 0.0;
    n.features[9] = h.decoy_alert ? 1.0 : 0.0;
    n.features[10] = std::min(1.0, static_cast<double>(h.decoy_ports.size()) / 4.0);
    auto it = memory.last_restore_step.find(h.host);
    n.features[11] = it == memory.last_restore_step.end()
                         ? 1.0
                         : std::min(1.0, static_cast<double>(obs.timestep - it->second) /
                                             std::max(1, horizon));
    const int host_node = static_cast<int>(g.nodes.size());
    g.nodes.push_back(std::move(n));

    const int subnet_of_host = h.subnet;
    g.edges.push_back({host_node, subnet_node.at(subnet_of_host), EdgeKind::HostInSubnet});

    auto push_port = [&](int port, int kind, bool decoy) {
      GraphNode p;
      p.kind = NodeKind::Port;
      p.key_a = h.host;
      p.key_b = port;
      p.features.assign(feat::kPortWidth, 0.0);
      if (kind >= 0) p.features[kind] = 1.0;
      p.features[8 + feat::port_bucket(port)] = 1.0;
      p.features[16] = port >= 49152 ? 1.0 : 0.0;
      p.features[17] = (kind >= 0 && port == kDefaultPorts[kind]) ? 1.0 : 0.0;
      p.features[18] = decoy ? 1.0 : 0.0;
      const int port_node = static_cast<int>(g.nodes.size());
      g.nodes.push_back(std::move(p));
      g.edges.push_back({port_node, host_node, EdgeKind::PortOf});
    };
    for (const Service& s : h.services) push_port(s.port, s.kind, false);
    for (int port : h.decoy_ports) {
      int kind = -1;
      for (int k = 0; k < kNumServiceKinds; ++k)
        if (kDefaultPorts[k] == port) kind = k;
      push_port(port, kind, true);
    }

    auto files = memory.analyzed_files.find(h.host);
    if (files != memory.analyzed_files.end()) {
      int ix = 0;
      for (const FileRecord& f : files->second) {
        GraphNode fn;
        fn.kind = NodeKind::File;
        fn.key_a = h.host;
        fn.key_b = ix++;
        fn.features = {f.density, f.signed_flag ? 1.0 : 0.0};
        const int file_node = static_cast<int>(g.nodes.size());
        g.nodes.push_back(std::move(fn));
        g.edges.push_back({file_node, host_node, EdgeKind::FileOn});
      }
    }
  }

  for (const auto& l : obs.links) {
    const int a = subnet_node.at(l.subnet_a);
    const int b = subnet_node.at(l.subnet_b);
    g.edges.push_back({a, b, EdgeKind::SubnetLink});
    g.edges.push_back({b, a, EdgeKind::SubnetLink});
  }

  g.global_context = build_global_context(obs);
  g.check();
  return g;
}

// ---- action catalog ----

struct CatalogEntry {
  BlueAction action;
};

// Canonically ordered executable actions: Sleep, then host-targeted
// actions sorted by (subnet, host, kind), then traffic actions sorted by
// subnet pair with Block before Allow.
struct ActionCatalog {
  int agent = 0;
  std::vector<CatalogEntry> entries;
  std::vector<bool> legal;

  int size() const { return static_cast<int>(entries.size()); }
  int legal_count() const {
    int n = 0;
    for (bool b : legal) n += b ? 1 : 0;
    return n;
  }
};

inline ActionCatalog enumerate_actions(const AttributedGraph& graph, const LocalObservation& obs) {
  ActionCatalog cat;
  cat.agent = obs.agent;
  cat.entries.push_back({BlueAction::sleep(obs.agent)});
  cat.legal.push_back(true);

  std::vector<std::pair<int, int>> host_order;  // (subnet, host)
  for (const auto& h : obs.hosts) host_order.emplace_back(h.subnet, h.host);
  std::sort(host_order.begin(), host_order.end());
  for (const auto& [subnet, host] : host_order) {
    (void)subnet;
    if (graph.find_node(NodeKind::Host, host) < 0)
      throw ContractError("enumerate_actions: graph is missing a host node");
    cat.entries.push_back({BlueAction::analyze(obs.agent, host)});
    cat.entries.push_back({BlueAction::restore(obs.agent, host)});
    cat.entries.push_back({BlueAction::deploy_decoy(obs.agent, host)});
    for (int k = 0; k < 3; ++k) cat.legal.push_back(true);
  }

  std::vector<LinkObservation> links = obs.links;
  std::sort(links.begin(), links.end(), [](const LinkObservation& x, const LinkObservation& y) {
    return std::make_pair(x.subnet_a, x.subnet_b) < std::make_pair(y.subnet_a, y.subnet_b);
  });
  for (const auto& l : links) {
    cat.entries.push_back({BlueAction::block(obs.agent, l.subnet_a, l.subnet_b)});
    cat.legal.push_back(l.allowed);
    cat.entries.push_back({BlueAction::allow(obs.agent, l.subnet_a, l.subnet_b)});
    cat.legal.push_back(!l.allowed);
  }
  return cat;
}

inline BlueAction action_to_command(int index, const ActionCatalog& catalog) {
  if (index < 0 || index >= catalog.size())
    throw MaskedActionError("action index out of range: " + std::to_string(index));
  if (!catalog.legal[index])
    throw MaskedActionError("action index is masked illegal: " + std::to_string(index));
  return catalog.entries[index].action;
}

// ---- debug dump ----

// Canonical line-delimited dump: nodes sorted by (kind, keys), then edges
// by (kind, keys), then the global context. Two graphs that differ only
// by sibling permutation dump identically.
inline std::string dump_graph(const AttributedGraph& g) {
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  std::vector<std::string> node_lines;
  for (const auto& n : g.nodes) {
    std::ostringstream os;
    os << "node " << node_kind_name(n.kind) << " " << n.key_a << ":" << n.key_b << " f=";
    for (std::size_t i = 0; i < n.features.size(); ++i) os << (i ? "," : "") << fmt(n.features[i]);
    node_lines.push_back(os.str());
  }
  std::sort(node_lines.begin(), node_lines.end());
  std::vector<std::string> edge_lines;
  for (const auto& e : g.edges) {
    const auto& s = g.nodes[e.src];
    const auto& d = g.nodes[e.dst];
    std::ostringstream os;
    os << "edge " << edge_kind_name(e.kind) << " " << node_kind_name(s.kind) << " " << s.key_a << ":"
       << s.key_b << " -> " << node_kind_name(d.kind) << " " << d.key_a << ":" << d.key_b;
    edge_lines.push_back(os.str());
  }
  std::sort(edge_lines.begin(), edge_lines.end());
  std::ostringstream out;
  for (const auto& l : node_lines) out << l << "\n";
  for (const auto& l : edge_lines) out << l << "\n";
  out << "global f=";
  for (std::size_t i = 0; i < g.global_context.size(); ++i)
    out << (i ? "," : "") << fmt(g.global_context[i]);
  out << "\n";
  return out.str();
}

}  // namespace acdz
