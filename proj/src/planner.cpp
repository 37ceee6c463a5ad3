#include "gaisnet/planner.hpp"

#include <algorithm>
#include <functional>
#include <set>

namespace gaisnet {

const char* to_string(ClusterRole r) { return r == ClusterRole::finetune ? "finetune" : "inference"; }

PartitionPlan make_partition(const ModelConfig& config, const std::vector<ClientRate>& clients) {
  if (clients.empty()) throw InfeasibleError("make_partition: no clients");
  const int n_blocks = static_cast<int>(clients.size());
  if (n_blocks > config.n_layers + 1)
    throw InfeasibleError("make_partition: " + std::to_string(n_blocks) +
                          " blocks exceed the " + std::to_string(config.n_layers + 1) +
                          " tunable modules");
  std::vector<double> rates;
  for (const auto& c : clients) {
    if (!(c.compute_rate > 0))
      throw InfeasibleError("make_partition: client " + c.client + " has no compute");
    rates.push_back(c.compute_rate);
  }
  PartitionPlan plan;
  plan.n_blocks = n_blocks;
  plan.blocks = split_tunable(config, n_blocks, rates);
  for (const auto& c : clients) plan.clients.push_back(c.client);
  return plan;
}

std::vector<std::string> validate_cluster(const Topology& topology, const ClusterSpec& spec,
                                          const std::string& edge_id) {
  std::vector<std::string> v;
  if (spec.members.empty()) return {"cluster has no members"};
  for (const auto& m : spec.members)
    if (!topology.has_node(m)) v.push_back("unknown member " + m);
  if (!v.empty()) return v;
  std::set<std::string> seen(spec.members.begin(), spec.members.end());
  if (seen.size() != spec.members.size()) v.push_back("members repeat");

  auto is_edge = [&](const std::string& id) { return id == edge_id; };
  auto hop_ok = [&](const std::string& a, const std::string& b) {
    if (is_edge(a)) return topology.cs_linked(b, a);
    if (is_edge(b)) return topology.cs_linked(a, b);
    return topology.d2d_linked(a, b);
  };

  const std::string& start = spec.start_point();
  if (topology.node(start).kind != NodeKind::client) v.push_back("start point " + start + " is not a client");
  for (std::size_t k = 0; k + 1 < spec.members.size(); ++k)
    if (!hop_ok(spec.members[k], spec.members[k + 1]))
      v.push_back("no D2D link between consecutive members " + spec.members[k] + " and " +
                  spec.members[k + 1]);
  for (std::size_t k = 0; k < spec.members.size(); ++k) {
    const std::string& m = spec.members[k];
    if (is_edge(m)) {
      if (k + 1 != spec.members.size()) v.push_back("edge server " + m + " must close the chain");
      continue;
    }
    if (topology.node(m).kind != NodeKind::client) {
      v.push_back("member " + m + " is neither a client nor the edge server");
      continue;
    }
    const bool needs_cs = spec.role == ClusterRole::finetune || k > 0;
    if (needs_cs && !topology.cs_linked(m, edge_id))
      v.push_back("member " + m + " has no CS link to edge server " + edge_id);
  }
  if (spec.role == ClusterRole::finetune && topology.node(start).kind == NodeKind::client &&
      !(topology.node(start).data_size > 0))
    v.push_back("start point " + start + " holds no local training data");
  if (spec.role == ClusterRole::inference && spec.members.size() > 2 &&
      !hop_ok(spec.end_point(), start))
    v.push_back("no link from end point " + spec.end_point() + " back to start point " + start);
  return v;
}

std::vector<ClusterSpec> form_clusters(const Topology& topology, const ClusterRequest& request) {
  if (request.k_clusters < 1) throw InfeasibleError("form_clusters: k_clusters must be positive");
  if (request.chain_len < 1) throw InfeasibleError("form_clusters: chain_len must be positive");
  if (!topology.has_node(request.edge_id))
    throw InfeasibleError("form_clusters: unknown edge server '" + request.edge_id + "'");

  std::vector<std::string> starts;
  if (request.role == ClusterRole::inference) {
    if (static_cast<int>(request.requesters.size()) < request.k_clusters)
      throw InfeasibleError("form_clusters: " + std::to_string(request.k_clusters) +
                            " inference clusters need as many requesting clients");
    starts.assign(request.requesters.begin(), request.requesters.begin() + request.k_clusters);
  } else {
    for (const auto& id : topology.clients())
      if (topology.node(id).data_size > 0) starts.push_back(id);
    std::stable_sort(starts.begin(), starts.end(), [&](const auto& a, const auto& b) {
      const Node& na = topology.node(a);
      const Node& nb = topology.node(b);
      if (na.data_quality != nb.data_quality) return na.data_quality > nb.data_quality;
      if (na.data_size != nb.data_size) return na.data_size > nb.data_size;
      return a < b;
    });
  }

  std::set<std::string> used;
  // Pending inference requesters stay out of earlier chains.
  std::set<std::string> reserved;
  if (request.role == ClusterRole::inference) reserved.insert(starts.begin(), starts.end());
  std::vector<ClusterSpec> out;
  std::string last_reason;

  auto search = [&](const std::string& start) -> std::optional<ClusterSpec> {
    ClusterSpec spec{request.role, {start}};
    std::function<bool()> dfs = [&]() -> bool {
      if (static_cast<int>(spec.members.size()) == request.chain_len) {
        auto violations = validate_cluster(topology, spec, request.edge_id);
        if (violations.empty()) return true;
        last_reason = violations.front();
        return false;
      }
      std::vector<std::string> next;
      for (const auto& n : topology.d2d_neighbors(spec.members.back()))
        if (!used.count(n) && !reserved.count(n) &&
            std::find(spec.members.begin(), spec.members.end(), n) == spec.members.end())
          next.push_back(n);
      std::stable_sort(next.begin(), next.end(), [&](const auto& a, const auto& b) {
        const double ra = topology.node(a).compute_rate;
        const double rb = topology.node(b).compute_rate;
        return ra != rb ? ra > rb : a < b;
      });
      for (const auto& n : next) {
        spec.members.push_back(n);
        if (dfs()) return true;
        spec.members.pop_back();
      }
      if (request.allow_edge_member &&
          static_cast<int>(spec.members.size()) == request.chain_len - 1) {
        spec.members.push_back(request.edge_id);
        if (dfs()) return true;
        spec.members.pop_back();
      }
      if (next.empty() && last_reason.empty())
        last_reason = "no D2D path of length " + std::to_string(request.chain_len) + " from " + start;
      return false;
    };
    if (dfs()) return spec;
    return std::nullopt;
  };

  std::size_t cursor = 0;
  for (int k = 0; k < request.k_clusters; ++k) {
    std::optional<ClusterSpec> found;
    last_reason.clear();
    if (request.role == ClusterRole::inference) {
      const std::string& start = starts[static_cast<std::size_t>(k)];
      reserved.erase(start);
      if (used.count(start)) {
        last_reason = "requesting client " + start + " already serves another cluster";
      } else {
        found = search(start);
      }
    } else {
      for (; cursor < starts.size() && !found; ++cursor)
        if (!used.count(starts[cursor])) found = search(starts[cursor]);
    }
    if (!found) {
      if (last_reason.empty()) last_reason = "no unused start point with local data";
      throw InfeasibleError("cluster " + std::to_string(k + 1) + " of " +
                            std::to_string(request.k_clusters) + " infeasible: " + last_reason);
    }
    for (const auto& m : found->members)
      if (m != request.edge_id) used.insert(m);
    out.push_back(std::move(*found));
  }
  return out;
}

ClientChain plan_chain(const Topology& topology, const ModelConfig& config, const ClusterSpec& spec) {
  if (spec.members.empty()) throw InfeasibleError("plan_chain: empty cluster");
  std::vector<ClientRate> working;
  const std::size_t first = spec.members.size() == 1 ? 0 : 1;
  for (std::size_t k = first; k < spec.members.size(); ++k)
    working.push_back({spec.members[k], topology.node(spec.members[k]).compute_rate});
  const PartitionPlan plan = make_partition(config, working);
  return make_chain(spec.members, plan.blocks);
}

nlohmann::json to_json(const PartitionPlan& plan) {
  nlohmann::json blocks = nlohmann::json::array();
  for (std::size_t k = 0; k < plan.blocks.size(); ++k) {
    const auto& b = plan.blocks[k];
    nlohmann::json modules = nlohmann::json::array();
    for (int i = b.first_layer; i <= b.last_layer(); ++i) modules.push_back("P" + std::to_string(i));
    if (b.has_head) modules.push_back("Head");
    blocks.push_back({{"client", plan.clients[k]}, {"modules", modules}});
  }
  return {{"n_blocks", plan.n_blocks}, {"blocks", blocks}};
}

nlohmann::json to_json(const ClusterSpec& spec) {
  return {{"role", to_string(spec.role)},
          {"members", spec.members},
          {"start_point", spec.start_point()},
          {"end_point", spec.end_point()}};
}

}  // namespace gaisnet
