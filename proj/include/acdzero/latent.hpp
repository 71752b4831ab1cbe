#pragma once

#include <string>
#include <utility>
#include <vector>

#include "acdzero/config.hpp"
#include "acdzero/graph.hpp"
#include "acdzero/nn.hpp"
#include "acdzero/param_store.hpp"
#include "acdzero/rng.hpp"
#include "acdzero/tensor.hpp"

namespace acdz {

// The three learned functions over graphs: a two-stage hierarchical
// encoder (ports/files -> hosts -> subnets -> latent), a GRU latent
// transition with a reward head, and a prediction head scoring each
// catalog action against the latent state. Output heads start at zero so
// a fresh model predicts reward 0, value 0, and a uniform prior.
class LatentModel {
 public:
  explicit LatentModel(ModelDims dims = {}) : d_(dims) { d_.validate(); }

  const ModelDims& dims() const { return d_; }

  void init_params(ParamStore& s, Rng& rng) const {
    const int E = d_.entity_embed, H = d_.hidden, D = d_.embedding, A = d_.action_embed;
    nn::declare_linear(s, "repr.port", feat::kPortWidth, E, rng);
    nn::declare_linear(s, "repr.file", feat::kFileWidth, E, rng);
    s.create("repr.null_port", Tensor::zeros({static_cast<std::size_t>(E)}));
    s.create("repr.null_file", Tensor::zeros({static_cast<std::size_t>(E)}));
    nn::declare_mlp2(s, "repr.host", feat::kHostWidth + 2 * E, H, H, rng);
    s.create("repr.null_host", Tensor::zeros({static_cast<std::size_t>(H)}));
    nn::declare_mlp2(s, "repr.subnet", feat::kSubnetWidth + H, H, H, rng);
    nn::declare_mlp2(s, "repr.final", H + feat::kGlobalWidth, H, D, rng);
    nn::declare_linear(s, "act", 6 + kActionTargetWidth, A, rng);
    nn::declare_gru(s, "dyn.gru", A, D, rng);
    nn::declare_linear(s, "dyn.proj", D, D, rng);
    nn::declare_mlp2(s, "dyn.reward", D + A, H, 1, rng, /*zero_last=*/true);
    nn::declare_mlp2(s, "pred.policy", D + A, H, 1, rng, /*zero_last=*/true);
    nn::declare_mlp2(s, "pred.value", D, H, 1, rng, /*zero_last=*/true);
  }

  ParamStore make_store(std::uint64_t seed) const {
    ParamStore s;
    Rng rng(seed, {0x1a7e});
    init_params(s, rng);
    return s;
  }

  std::vector<std::pair<std::string, std::vector<std::size_t>>> manifest() const {
    ParamStore s;
    Rng rng(0);
    init_params(s, rng);
    return s.manifest();
  }

  // Two-stage hierarchical aggregation to a tanh-bounded latent vector.
  Var represent(Tape& t, ParamStore& s, const AttributedGraph& g) const {
    g.check();
    const int E = d_.entity_embed;

    const auto host_ix = g.nodes_of_kind(NodeKind::Host);
    const auto subnet_ix = g.nodes_of_kind(NodeKind::Subnet);
    const auto port_ix = g.nodes_of_kind(NodeKind::Port);
    const auto file_ix = g.nodes_of_kind(NodeKind::File);
    if (subnet_ix.empty()) throw ContractError("represent: graph has no subnet nodes");

    // entity embeddings, batched over all ports / files in the graph
    Var port_emb{}, file_emb{};
    std::vector<std::size_t> port_row(g.nodes.size(), 0), file_row(g.nodes.size(), 0);
    if (!port_ix.empty()) {
      std::vector<double> flat;
      for (std::size_t r = 0; r < port_ix.size(); ++r) {
        port_row[port_ix[r]] = r;
        const auto& f = g.nodes[port_ix[r]].features;
        flat.insert(flat.end(), f.begin(), f.end());
      }
      port_emb = t.relu(nn::linear_rows(
          t, s, "repr.port", t.leaf(Tensor::matrix(port_ix.size(), feat::kPortWidth, std::move(flat)))));
    }
    if (!file_ix.empty()) {
      std::vector<double> flat;
      for (std::size_t r = 0; r < file_ix.size(); ++r) {
        file_row[file_ix[r]] = r;
        const auto& f = g.nodes[file_ix[r]].features;
        flat.insert(flat.end(), f.begin(), f.end());
      }
      file_emb = t.relu(nn::linear_rows(
          t, s, "repr.file", t.leaf(Tensor::matrix(file_ix.size(), feat::kFileWidth, std::move(flat)))));
    }

    // stage 1: pool port/file embeddings into each host
    std::vector<std::vector<std::size_t>> host_ports(host_ix.size()), host_files(host_ix.size());
    std::vector<std::size_t> host_row(g.nodes.size(), 0);
    for (std::size_t r = 0; r < host_ix.size(); ++r) host_row[host_ix[r]] = r;
    for (const auto& e : g.edges) {
      if (e.kind == EdgeKind::PortOf) host_ports[host_row[e.dst]].push_back(port_row[e.src]);
      if (e.kind == EdgeKind::FileOn) host_files[host_row[e.dst]].push_back(file_row[e.src]);
    }
    Var host_mat{};
    for (std::size_t i = 0; i < host_ix.size(); ++i) {
      Var hf = t.leaf(Tensor::vec(g.nodes[host_ix[i]].features));
      Var pp = host_ports[i].empty() ? s.use(t, "repr.null_port")
                                     : t.mean0(t.gather0(port_emb, host_ports[i]));
      Var fp = host_files[i].empty() ? s.use(t, "repr.null_file")
                                     : t.mean0(t.gather0(file_emb, host_files[i]));
      Var row = t.reshape(t.concat(t.concat(hf, pp), fp),
                          {1, static_cast<std::size_t>(feat::kHostWidth + 2 * E)});
      host_mat = i == 0 ? row : t.concat(host_mat, row, 0);
    }
    Var host_emb{};
    if (!host_ix.empty()) host_emb = t.relu(nn::mlp2_rows(t, s, "repr.host", host_mat));

    // stage 2: propagate host embeddings into subnet nodes
    std::vector<std::vector<std::size_t>> subnet_hosts(subnet_ix.size());
    std::vector<std::size_t> subnet_row(g.nodes.size(), 0);
    for (std::size_t r = 0; r < subnet_ix.size(); ++r) subnet_row[subnet_ix[r]] = r;
    for (const auto& e : g.edges)
      if (e.kind == EdgeKind::HostInSubnet) subnet_hosts[subnet_row[e.dst]].push_back(host_row[e.src]);
    Var subnet_mat{};
    for (std::size_t j = 0; j < subnet_ix.size(); ++j) {
      Var sf = t.leaf(Tensor::vec(g.nodes[subnet_ix[j]].features));
      Var hp = subnet_hosts[j].empty() ? s.use(t, "repr.null_host")
                                       : t.mean0(t.gather0(host_emb, subnet_hosts[j]));
      Var row = t.reshape(t.concat(sf, hp),
                          {1, static_cast<std::size_t>(feat::kSubnetWidth + d_.hidden)});
      subnet_mat = j == 0 ? row : t.concat(subnet_mat, row, 0);
    }
    Var subnet_emb = t.relu(nn::mlp2_rows(t, s, "repr.subnet", subnet_mat));

    Var pooled = t.mean0(subnet_emb);
    Var ctx = t.leaf(Tensor::vec(g.global_context));
    return t.tanh(nn::mlp2(t, s, "repr.final", t.concat(pooled, ctx)));
  }

  // Target summary width: host features plus the mean of the host's
  // port and file node features (the subnet pair's mean features for
  // traffic actions, zero-padded). Pooled summaries keep the embedding
  // permutation-invariant while still telling look-alike hosts apart by
  // their service profile.
  static constexpr int kActionTargetWidth = feat::kHostWidth + feat::kPortWidth + feat::kFileWidth;

  // One embedding row per catalog entry: action template one-hot plus
  // the target's current summary; all-zero target for Sleep.
  Var action_embeddings(Tape& t, ParamStore& s, const AttributedGraph& g,
                        const ActionCatalog& cat) const {
    const int w = 6 + kActionTargetWidth;
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(cat.size()) * w);
    for (const auto& entry : cat.entries) {
      std::vector<double> row(w, 0.0);
      row[static_cast<int>(entry.action.kind)] = 1.0;
      if (entry.action.host_targeted()) {
        const int n = g.find_node(NodeKind::Host, entry.action.host);
        if (n < 0) throw ContractError("action_embeddings: catalog host missing from graph");
        for (int i = 0; i < feat::kHostWidth; ++i) row[6 + i] = g.nodes[n].features[i];
        int ports = 0, files = 0;
        for (const auto& e : g.edges) {
          if (e.dst != n) continue;
          if (e.kind == EdgeKind::PortOf) {
            ports += 1;
            for (int i = 0; i < feat::kPortWidth; ++i)
              row[6 + feat::kHostWidth + i] += g.nodes[e.src].features[i];
          } else if (e.kind == EdgeKind::FileOn) {
            files += 1;
            for (int i = 0; i < feat::kFileWidth; ++i)
              row[6 + feat::kHostWidth + feat::kPortWidth + i] += g.nodes[e.src].features[i];
          }
        }
        for (int i = 0; i < feat::kPortWidth && ports > 0; ++i) row[6 + feat::kHostWidth + i] /= ports;
        for (int i = 0; i < feat::kFileWidth && files > 0; ++i)
          row[6 + feat::kHostWidth + feat::kPortWidth + i] /= files;
      } else if (entry.action.traffic_targeted()) {
        const int a = g.find_node(NodeKind::Subnet, entry.action.subnet_a);
        const int b = g.find_node(NodeKind::Subnet, entry.action.subnet_b);
        if (a < 0 || b < 0) throw ContractError("action_embeddings: catalog subnet missing from graph");
        for (int i = 0; i < feat::kSubnetWidth; ++i)
          row[6 + i] = 0.5 * (g.nodes[a].features[i] + g.nodes[b].features[i]);
      }
      flat.insert(flat.end(), row.begin(), row.end());
    }
    Var x = t.leaf(Tensor::matrix(cat.size(), w, std::move(flat)));
    return t.tanh(nn::linear_rows(t, s, "act", x));
  }

  // g_theta: next latent via the GRU plus a reward head on (s, a).
  std::pair<Var, Var> dynamics(Tape& t, ParamStore& s, Var latent, Var action_emb) const {
    Var h = nn::gru_cell(t, s, "dyn.gru", action_emb, latent);
    Var next = t.tanh(nn::linear(t, s, "dyn.proj", h));
    Var reward = nn::mlp2(t, s, "dyn.reward", t.concat(latent, action_emb));
    return {next, reward};
  }

  // f_theta: masked policy prior over the catalog plus a scalar value.
  std::pair<Var, Var> predict(Tape& t, ParamStore& s, Var latent, Var action_embs,
                              const std::vector<bool>& mask) const {
    const Tensor& embs = t.value(action_embs);
    const std::size_t n = embs.shape[0];
    if (mask.size() != n) throw ContractError("predict: mask length does not match the catalog");
    bool any = false;
    for (bool b : mask) any = any || b;
    if (!any) throw EmptySupportError("predict: no legal actions");
    Var ones = t.leaf(Tensor::matrix(n, 1, std::vector<double>(n, 1.0)));
    Var latent_rows = t.matmul(ones, t.reshape(latent, {1, static_cast<std::size_t>(d_.embedding)}));
    Var x = t.concat(latent_rows, action_embs, 1);
    Var logits = t.reshape(nn::mlp2_rows(t, s, "pred.policy", x), {n});
    Var prior = t.softmax(logits, &mask);
    Var value = nn::mlp2(t, s, "pred.value", latent);
    return {prior, value};
  }

  // Value head alone, for the unrolled prediction loss.
  Var value_head(Tape& t, ParamStore& s, Var latent) const {
    return nn::mlp2(t, s, "pred.value", latent);
  }

  // Log of the masked actor distribution (used by the PPO/distill path).
  Var policy_log_probs(Tape& t, ParamStore& s, Var latent, Var action_embs,
                       const std::vector<bool>& mask) const {
    auto [prior, value] = predict(t, s, latent, action_embs, mask);
    (void)value;
    return t.log(t.clamp_min(prior, 1e-12));
  }

 private:
  ModelDims d_;
};

}  // namespace acdz
