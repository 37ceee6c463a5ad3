#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaisnet/model.hpp"

namespace gaisnet {

struct TopologyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class NodeKind { cloud, edge, client };
enum class LinkKind { cs, d2d };

const char* to_string(NodeKind k);
const char* to_string(LinkKind k);

struct Node {
  std::string id;
  NodeKind kind = NodeKind::client;
  double compute_rate = 1e9;   // FLOP/s (multiply-adds per second)
  double power_compute = 1.0;  // W
  double power_tx = 0.5;       // W
  double memory_cap = 1e9;     // bytes
  // Client-only planning attributes.
  double data_size = 0.0;      // labelled samples available locally
  double data_quality = 1.0;
};

struct Link {
  LinkKind kind = LinkKind::d2d;
  std::string a, b;
  double bandwidth = 1e6;       // bit/s
  double energy_per_bit = 0.0;  // J/bit
};

/// Undirected graph of nodes and links.
class Topology {
 public:
  void add_node(Node node);
  void add_link(Link link);

  const Node& node(const std::string& id) const;
  bool has_node(const std::string& id) const { return index_.count(id) > 0; }
  const Link* find_link(const std::string& a, const std::string& b) const;
  const Link& link(const std::string& a, const std::string& b) const;
  bool d2d_linked(const std::string& a, const std::string& b) const;
  bool cs_linked(const std::string& client, const std::string& server) const;

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Link>& links() const { return links_; }
  std::vector<std::string> clients() const;
  std::vector<std::string> d2d_neighbors(const std::string& id) const;
  /// First node of the given kind, if any.
  std::optional<std::string> first_of(NodeKind kind) const;

  /// Multiplies every link bandwidth by k.
  Topology scaled_bandwidth(double k) const;

 private:
  std::vector<Node> nodes_;
  std::vector<Link> links_;
  std::map<std::string, std::size_t> index_;
};

/// 8 * bytes / bandwidth.
double tx_time(double bytes, const Link& link);
double compute_time(double flops, const Node& node);

enum class Pass { forward, backward };

/// How the backward pass is costed: with a trainable backbone every matmul
/// needs an input gradient and a weight gradient (backward = 2x forward);
/// with a frozen backbone only input gradients flow through backbone matmuls.
enum class TrainingMode { full, prompt_tuning };

/// Multiply-adds of one sample through the block's layers and head.
double flops_of(const TunableBlock& block, const ModelConfig& config, Pass pass,
                TrainingMode mode = TrainingMode::full);
/// Multiply-adds of one encoder layer forward (closed form).
double layer_forward_flops(const ModelConfig& config);
double embed_flops(const ModelConfig& config, Pass pass, TrainingMode mode = TrainingMode::full);

/// Bytes moved when distributing a fine-tuned model to a receiver.
enum class Distribution { parameter_efficient, parameter_full };
double distribution_bytes(const ModelConfig& config, Distribution mode);

enum class EventKind { compute, transmit, sense, memory };

struct Event {
  EventKind kind = EventKind::compute;
  std::string node;  // actor (sender for transmit)
  std::string peer;  // receiver for transmit
  double amount = 0; // FLOPs | bytes | seconds | bytes held
  bool gradient = false;  // transmit of backward gradients

  static Event compute(std::string node, double flops);
  static Event transmit(std::string from, std::string to, double bytes, bool gradient = false);
  static Event sense(std::string node, double seconds);
  static Event memory(std::string node, double bytes);
};

/// A run of serial stages; within a stage, branches execute in parallel.
struct Stage {
  std::vector<std::vector<Event>> branches;
};

struct Trace {
  std::vector<Stage> stages;

  void serial(std::vector<Event> events);
  void parallel(std::vector<std::vector<Event>> branches);
  void append(const Trace& other);
};

enum class RoundKind { finetune, inference };

struct AccountOptions {
  bool count_gradient_feedback = false;
};

struct RoundMetrics {
  double model_performance = 0.0;  // accuracy in [0, 1]
  double latency = 0.0;            // s
  double compute_cost = 0.0;       // FLOPs
  double energy = 0.0;             // J
  double comm_bytes_cs = 0.0;
  double comm_bytes_d2d = 0.0;
  double channel_seconds = 0.0;
  std::map<std::string, double> peak_memory;  // bytes per node

  double comm_overhead() const { return comm_bytes_cs + comm_bytes_d2d; }
  double max_peak_memory() const;
};

/// Pure fold over the trace: latency is the sum over stages of the slowest
/// branch; every other metric is additive. Throws TopologyError on unknown
/// nodes or links.
RoundMetrics account_round(RoundKind kind, const Trace& trace, const Topology& topology,
                           const AccountOptions& options = {});

}  // namespace gaisnet
