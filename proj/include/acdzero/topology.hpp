#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "acdzero/config.hpp"
#include "acdzero/errors.hpp"
#include "acdzero/rng.hpp"

namespace acdz {

inline constexpr int kNumAgents = 5;
inline constexpr int kNumZones = 4;
inline constexpr int kHqZone = 3;       // operational servers live here
inline constexpr int kRouterZone = 4;   // cross-zone subnets, owned by the last agent
inline constexpr int kNumServiceKinds = 8;
inline constexpr int kNumOsTags = 4;

enum class HostRole { Workstation, Server, OperationalServer };

// Fixed service catalogue; index doubles as the kind id.
inline constexpr int kDefaultPorts[kNumServiceKinds] = {22, 80, 443, 445, 21, 53, 3389, 1433};
inline constexpr const char* kServiceNames[kNumServiceKinds] = {"ssh", "http", "https", "smb",
                                                                "ftp", "dns",  "rdp",   "sql"};

struct Service {
  int port = 0;
  int kind = 0;  // index into the catalogue
};

struct FileRecord {
  double density = 0.0;
  bool signed_flag = true;
};

struct HostInfo {
  int id = 0;
  int subnet = 0;
  HostRole role = HostRole::Workstation;
  int os_tag = 0;
  std::vector<Service> services;
  std::vector<FileRecord> baseline_files;
};

struct SubnetInfo {
  int id = 0;
  int zone = 0;  // 0..3, or kRouterZone
  int agent = 0;
  std::vector<int> hosts;
};

struct Topology {
  std::vector<SubnetInfo> subnets;
  std::vector<HostInfo> hosts;
  std::vector<std::pair<int, int>> links;  // canonical (a < b)

  int host_count() const { return static_cast<int>(hosts.size()); }
  int subnet_count() const { return static_cast<int>(subnets.size()); }

  int owner_of_subnet(int subnet) const { return subnets[subnet].agent; }
  int owner_of_host(int host) const { return subnets[hosts[host].subnet].agent; }

  std::vector<int> agent_subnets(int agent) const {
    std::vector<int> out;
    for (const auto& s : subnets)
      if (s.agent == agent) out.push_back(s.id);
    return out;
  }

  bool has_link(int a, int b) const {
    if (a > b) std::swap(a, b);
    return std::find(links.begin(), links.end(), std::make_pair(a, b)) != links.end();
  }

  std::vector<int> adjacent_subnets(int subnet) const {
    std::vector<int> out;
    for (const auto& [a, b] : links) {
      if (a == subnet) out.push_back(b);
      if (b == subnet) out.push_back(a);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  bool connected() const {
    if (subnets.empty()) return false;
    std::vector<bool> seen(subnets.size(), false);
    std::vector<int> stack{0};
    seen[0] = true;
    while (!stack.empty()) {
      const int s = stack.back();
      stack.pop_back();
      for (int n : adjacent_subnets(s))
        if (!seen[n]) {
          seen[n] = true;
          stack.push_back(n);
        }
    }
    return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
  }
};

namespace detail {
inline constexpr std::uint64_t kTopoKey = 0x544f504f;  // draw-stream tag
}

// Deterministic topology sample: 4 zones of `subnets_per_zone` subnets
// owned by agents 0..3, plus router subnets owned by agent 4 tying the
// zones together. Identical (seed, config) always yields an identical
// topology.
inline Topology generate_topology(std::uint64_t seed, const SimConfig& cfg) {
  cfg.validate();
  if (cfg.services_max > kNumServiceKinds)
    throw ConfigError("topology.services_max exceeds the service catalogue size");

  Topology topo;
  const Rng base(seed, {detail::kTopoKey});

  for (int zone = 0; zone < kNumZones; ++zone)
    for (int i = 0; i < cfg.subnets_per_zone; ++i) {
      SubnetInfo s;
      s.id = topo.subnet_count();
      s.zone = zone;
      s.agent = zone;
      topo.subnets.push_back(s);
    }
  std::vector<int> routers;
  for (int i = 0; i < cfg.router_subnets; ++i) {
    SubnetInfo s;
    s.id = topo.subnet_count();
    s.zone = kRouterZone;
    s.agent = kNumAgents - 1;
    routers.push_back(s.id);
    topo.subnets.push_back(s);
  }

  auto add_link = [&](int a, int b) {
    if (a > b) std::swap(a, b);
    if (!topo.has_link(a, b)) topo.links.emplace_back(a, b);
  };
  for (int zone = 0; zone < kNumZones; ++zone) {
    std::vector<int> zs;
    for (const auto& s : topo.subnets)
      if (s.zone == zone) zs.push_back(s.id);
    for (std::size_t i = 1; i < zs.size(); ++i) add_link(zs[0], zs[i]);
    const int router = routers[zone < 2 ? 0 : routers.size() - 1];
    for (int s : zs) add_link(s, router);
  }
  for (std::size_t i = 1; i < routers.size(); ++i) add_link(routers[0], routers[i]);

  // Hosts, roles, services.
  for (auto& subnet : topo.subnets) {
    Rng r = base.substream({static_cast<std::uint64_t>(subnet.id), 1});
    const int n_hosts = static_cast<int>(r.uniform_int(cfg.hosts_min, cfg.hosts_max));
    for (int i = 0; i < n_hosts; ++i) {
      HostInfo h;
      h.id = topo.host_count();
      h.subnet = subnet.id;
      Rng hr = base.substream({static_cast<std::uint64_t>(h.id), 2});
      if (subnet.zone == kRouterZone) {
        h.role = HostRole::Server;
      } else if (hr.bernoulli(0.3)) {
        h.role = subnet.zone == kHqZone ? HostRole::OperationalServer : HostRole::Server;
      } else {
        h.role = HostRole::Workstation;
      }
      h.os_tag = static_cast<int>(hr.uniform_int(0, kNumOsTags - 1));
      const int n_services = static_cast<int>(hr.uniform_int(cfg.services_min, cfg.services_max));
      std::vector<int> kinds{0, 1, 2, 3, 4, 5, 6, 7};
      for (int k = 0; k < n_services; ++k) {
        const int pick = static_cast<int>(hr.uniform_int(0, static_cast<std::int64_t>(kinds.size()) - 1));
        Service svc;
        svc.kind = kinds[pick];
        kinds.erase(kinds.begin() + pick);
        if (hr.bernoulli(0.8)) {
          svc.port = kDefaultPorts[svc.kind];
        } else {
          svc.port = static_cast<int>(hr.uniform_int(49152, 65535));
        }
        h.services.push_back(svc);
      }
      const int n_files = static_cast<int>(hr.uniform_int(0, 2));
      for (int f = 0; f < n_files; ++f)
        h.baseline_files.push_back(FileRecord{hr.uniform() * 0.3, true});
      subnet.hosts.push_back(h.id);
      topo.hosts.push_back(std::move(h));
    }
  }

  // The red kill chain needs a starting workstation and a target.
  const int first_subnet_host = topo.subnets[0].hosts.front();
  topo.hosts[first_subnet_host].role = HostRole::Workstation;
  bool any_opserver = false;
  for (const auto& h : topo.hosts) any_opserver = any_opserver || h.role == HostRole::OperationalServer;
  if (!any_opserver) {
    for (const auto& s : topo.subnets)
      if (s.zone == kHqZone) {
        topo.hosts[s.hosts.back()].role = HostRole::OperationalServer;
        break;
      }
  }
  return topo;
}

inline const char* role_name(HostRole r) {
  switch (r) {
    case HostRole::Workstation: return "workstation";
    case HostRole::Server: return "server";
    case HostRole::OperationalServer: return "op_server";
  }
  return "?";
}

}  // namespace acdz
