#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gaisnet/model.hpp"
#include "gaisnet/simnet.hpp"
#include "gaisnet/splitnet.hpp"

namespace gaisnet {

struct InfeasibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ClientRate {
  std::string client;
  double compute_rate = 1.0;
};

struct PartitionPlan {
  int n_blocks = 0;
  std::vector<std::string> clients;  // clients[k] runs blocks[k]
  std::vector<TunableBlock> blocks;
};

/// Apportions the prompt modules to clients proportionally to compute rate
/// (largest remainder, lower client position wins ties); the head joins the
/// last block. Throws InfeasibleError when clients outnumber modules.
PartitionPlan make_partition(const ModelConfig& config, const std::vector<ClientRate>& clients);

enum class ClusterRole { finetune, inference };
const char* to_string(ClusterRole r);

struct ClusterSpec {
  ClusterRole role = ClusterRole::finetune;
  std::vector<std::string> members;  // chain order
  const std::string& start_point() const { return members.front(); }
  const std::string& end_point() const { return members.back(); }
};

/// Every violated ClusterSpec invariant, one message per violation:
///  - consecutive members D2D-linked (or a CS link when one side is the edge server);
///  - fine-tune: every client member has a CS link to the edge server;
///  - inference: every working client (all but the start) has a CS link, and
///    the end point reaches the start point directly.
std::vector<std::string> validate_cluster(const Topology& topology, const ClusterSpec& spec,
                                          const std::string& edge_id);

struct ClusterRequest {
  ClusterRole role = ClusterRole::finetune;
  int k_clusters = 1;
  int chain_len = 1;
  std::vector<std::string> requesters;  // inference start points, in order
  std::string edge_id;                  // edge server coordinating the clusters
  bool allow_edge_member = false;       // edge may close a chain as cooperative node
};

/// Greedy cluster formation. Fine-tune start points are ranked by data
/// quality, then data size, then id; inference start points are the
/// requesters. Chains grow depth-first along unused D2D neighbours in
/// decreasing compute rate. Throws InfeasibleError naming the constraint
/// that blocked the first cluster that could not be formed.
std::vector<ClusterSpec> form_clusters(const Topology& topology, const ClusterRequest& request);

/// Partition over the working members (all but the start point, or the
/// start itself for a one-member cluster) and the resulting chain.
ClientChain plan_chain(const Topology& topology, const ModelConfig& config, const ClusterSpec& spec);

nlohmann::json to_json(const PartitionPlan& plan);
nlohmann::json to_json(const ClusterSpec& spec);

}  // namespace gaisnet
