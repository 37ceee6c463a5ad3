#include "gaisnet/simnet.hpp"

#include <algorithm>

namespace gaisnet {

const char* to_string(NodeKind k) {
  switch (k) {
    case NodeKind::cloud: return "cloud";
    case NodeKind::edge: return "edge";
    case NodeKind::client: return "client";
  }
  return "unknown";
}

const char* to_string(LinkKind k) { return k == LinkKind::cs ? "CS" : "D2D"; }

void Topology::add_node(Node node) {
  if (node.id.empty()) throw TopologyError("node id must be non-empty");
  if (index_.count(node.id)) throw TopologyError("duplicate node " + node.id);
  if (!(node.compute_rate > 0) || !(node.power_compute >= 0) || !(node.power_tx >= 0) ||
      !(node.memory_cap > 0))
    throw TopologyError("node " + node.id + ": rates, powers and capacity must be positive");
  index_.emplace(node.id, nodes_.size());
  nodes_.push_back(std::move(node));
}

void Topology::add_link(Link link) {
  if (!has_node(link.a) || !has_node(link.b))
    throw TopologyError("link " + link.a + "-" + link.b + " references an unknown node");
  if (link.a == link.b) throw TopologyError("self link on " + link.a);
  if (!(link.bandwidth > 0)) throw TopologyError("link " + link.a + "-" + link.b + ": bandwidth must be positive");
  if (!(link.energy_per_bit >= 0)) throw TopologyError("link " + link.a + "-" + link.b + ": energy_per_bit must be non-negative");
  const NodeKind ka = node(link.a).kind;
  const NodeKind kb = node(link.b).kind;
  if (link.kind == LinkKind::d2d && (ka != NodeKind::client || kb != NodeKind::client))
    throw TopologyError("D2D link " + link.a + "-" + link.b + " must join two clients");
  if (link.kind == LinkKind::cs) {
    const bool client_edge = (ka == NodeKind::client && kb == NodeKind::edge) ||
                             (ka == NodeKind::edge && kb == NodeKind::client);
    const bool edge_cloud = (ka == NodeKind::edge && kb == NodeKind::cloud) ||
                            (ka == NodeKind::cloud && kb == NodeKind::edge);
    if (!client_edge && !edge_cloud)
      throw TopologyError("CS link " + link.a + "-" + link.b + " must join client-edge or edge-cloud");
  }
  if (find_link(link.a, link.b)) throw TopologyError("duplicate link " + link.a + "-" + link.b);
  links_.push_back(std::move(link));
}

const Node& Topology::node(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw TopologyError("unknown node " + id);
  return nodes_[it->second];
}

const Link* Topology::find_link(const std::string& a, const std::string& b) const {
  for (const auto& l : links_)
    if ((l.a == a && l.b == b) || (l.a == b && l.b == a)) return &l;
  return nullptr;
}

const Link& Topology::link(const std::string& a, const std::string& b) const {
  const Link* l = find_link(a, b);
  if (!l) throw TopologyError("no link between " + a + " and " + b);
  return *l;
}

bool Topology::d2d_linked(const std::string& a, const std::string& b) const {
  const Link* l = find_link(a, b);
  return l && l->kind == LinkKind::d2d;
}

bool Topology::cs_linked(const std::string& client, const std::string& server) const {
  const Link* l = find_link(client, server);
  return l && l->kind == LinkKind::cs;
}

std::vector<std::string> Topology::clients() const {
  std::vector<std::string> out;
  for (const auto& n : nodes_)
    if (n.kind == NodeKind::client) out.push_back(n.id);
  return out;
}

std::vector<std::string> Topology::d2d_neighbors(const std::string& id) const {
  std::vector<std::string> out;
  for (const auto& l : links_) {
    if (l.kind != LinkKind::d2d) continue;
    if (l.a == id) out.push_back(l.b);
    if (l.b == id) out.push_back(l.a);
  }
  return out;
}

std::optional<std::string> Topology::first_of(NodeKind kind) const {
  for (const auto& n : nodes_)
    if (n.kind == kind) return n.id;
  return std::nullopt;
}

Topology Topology::scaled_bandwidth(double k) const {
  Topology out = *this;
  for (auto& l : out.links_) l.bandwidth *= k;
  return out;
}

double tx_time(double bytes, const Link& link) {
  if (bytes < 0) throw std::invalid_argument("tx_time: bytes must be non-negative");
  return 8.0 * bytes / link.bandwidth;
}

double compute_time(double flops, const Node& node) {
  if (!(node.compute_rate > 0)) throw std::invalid_argument("compute_time: rate must be positive");
  return flops / node.compute_rate;
}

namespace {

struct LayerCost {
  double linear = 0;     // weight matmuls: qkv, out, fc1, fc2
  double attention = 0;  // q k^T and weights v
};

LayerCost layer_cost(const ModelConfig& c) {
  const double t = c.layer_tokens();
  const double d = c.hidden;
  const double h = c.mlp_hidden();
  return {t * (4 * d * d + 2 * d * h), 2 * t * t * d};
}

}  // namespace

double layer_forward_flops(const ModelConfig& config) {
  const LayerCost lc = layer_cost(config);
  return lc.linear + lc.attention;
}

double flops_of(const TunableBlock& block, const ModelConfig& config, Pass pass, TrainingMode mode) {
  const LayerCost lc = layer_cost(config);
  const double head = static_cast<double>(config.hidden) * config.n_classes;
  double per_layer = lc.linear + lc.attention;
  double head_cost = head;
  if (pass == Pass::backward) {
    // Attention products are activation-activation: both operands need grads.
    per_layer = mode == TrainingMode::full ? 2 * (lc.linear + lc.attention)
                                           : lc.linear + 2 * lc.attention;
    head_cost = 2 * head;
  }
  return block.prompt_count * per_layer + (block.has_head ? head_cost : 0.0);
}

double embed_flops(const ModelConfig& config, Pass pass, TrainingMode mode) {
  const double fwd = static_cast<double>(config.n_patches) * config.patch_dim * config.hidden;
  if (pass == Pass::forward) return fwd;
  return mode == TrainingMode::full ? fwd : 0.0;
}

double distribution_bytes(const ModelConfig& config, Distribution mode) {
  const ParamCounts counts = count_params(config);
  const auto n = mode == Distribution::parameter_efficient ? counts.tunable : counts.total;
  return 8.0 * static_cast<double>(n);
}

Event Event::compute(std::string node, double flops) {
  return {EventKind::compute, std::move(node), {}, flops, false};
}

Event Event::transmit(std::string from, std::string to, double bytes, bool gradient) {
  return {EventKind::transmit, std::move(from), std::move(to), bytes, gradient};
}

Event Event::sense(std::string node, double seconds) {
  return {EventKind::sense, std::move(node), {}, seconds, false};
}

Event Event::memory(std::string node, double bytes) {
  return {EventKind::memory, std::move(node), {}, bytes, false};
}

void Trace::serial(std::vector<Event> events) {
  Stage s;
  s.branches.push_back(std::move(events));
  stages.push_back(std::move(s));
}

void Trace::parallel(std::vector<std::vector<Event>> branches) {
  stages.push_back({std::move(branches)});
}

void Trace::append(const Trace& other) {
  stages.insert(stages.end(), other.stages.begin(), other.stages.end());
}

double RoundMetrics::max_peak_memory() const {
  double m = 0;
  for (const auto& [_, v] : peak_memory) m = std::max(m, v);
  return m;
}

RoundMetrics account_round(RoundKind /*kind*/, const Trace& trace, const Topology& topology,
                           const AccountOptions& options) {
  RoundMetrics m;
  for (const Stage& stage : trace.stages) {
    double slowest = 0;
    for (const auto& branch : stage.branches) {
      double elapsed = 0;
      for (const Event& e : branch) {
        const Node& actor = topology.node(e.node);
        switch (e.kind) {
          case EventKind::compute: {
            const double t = compute_time(e.amount, actor);
            elapsed += t;
            m.compute_cost += e.amount;
            m.energy += actor.power_compute * t;
            break;
          }
          case EventKind::transmit: {
            if (e.node == e.peer) break;  // local hand-off
            topology.node(e.peer);
            if (e.gradient && !options.count_gradient_feedback) break;
            const Link& l = topology.link(e.node, e.peer);
            const double t = tx_time(e.amount, l);
            elapsed += t;
            m.channel_seconds += t;
            m.energy += actor.power_tx * t + l.energy_per_bit * 8.0 * e.amount;
            (l.kind == LinkKind::cs ? m.comm_bytes_cs : m.comm_bytes_d2d) += e.amount;
            break;
          }
          case EventKind::sense:
            elapsed += e.amount;
            m.energy += actor.power_compute * e.amount;
            break;
          case EventKind::memory: {
            double& peak = m.peak_memory[e.node];
            peak = std::max(peak, e.amount);
            break;
          }
        }
      }
      slowest = std::max(slowest, elapsed);
    }
    m.latency += slowest;
  }
  return m;
}

}  // namespace gaisnet
