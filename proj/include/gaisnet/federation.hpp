#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gaisnet/model.hpp"
#include "gaisnet/simnet.hpp"
#include "gaisnet/splitnet.hpp"

namespace gaisnet {

/// Values of the prompt modules and head, index-aligned across models.
struct TunableModules {
  std::vector<Mat> prompts;  // prompts[i-1] belongs to layer i
  Mat head_weight;
  Mat head_bias;
};

TunableModules extract_tunable(const SplitModel& model);
void load_tunable(SplitModel& model, const TunableModules& modules);

struct ClusterUpdate {
  int cluster_id = 0;
  TunableModules modules;
  std::int64_t sample_count = 0;
};

enum class Weighting { uniform, by_sample_count };

/// Weighted mean of homologous modules. Updates are folded in cluster-id
/// order as a running mean, so the result is independent of input order and
/// k identical updates average to that update exactly.
TunableModules fedavg(std::span<const ClusterUpdate> updates, Weighting weighting = Weighting::uniform);

struct EdgeModelState {
  std::string domain;
  SplitModel model;
  int round = 0;
};

struct FinetuneCluster {
  int id = 0;
  ClientChain chain;
  std::vector<Sample> train;  // held by the start point
};

struct RoundOptions {
  int local_epochs = 1;
  double lr = 1e-3;
  int batch_size = 10;
  Weighting weighting = Weighting::uniform;
  double sensing_seconds_per_sample = 1e-3;
  std::string edge_id = "edge";
  AccountOptions accounting;
  std::uint64_t shuffle_seed = 0;  // 0 keeps the local data order
};

struct RoundOutcome {
  EdgeModelState edge;
  RoundMetrics metrics;
  double train_loss = 0.0;  // mean over clusters of the last local batch losses
  SmashedLog smashed;
};

/// One HFSL round: deliver each cluster's blocks, train every cluster over
/// its chain, upload, and FedAvg into the edge model. With a trainable
/// backbone the backbone is averaged too and travels with the blocks.
/// Metrics are accounted over the simulated trace; model_performance is
/// accuracy on `validation`.
RoundOutcome finetune_round(const EdgeModelState& edge, const std::vector<FinetuneCluster>& clusters,
                            const RoundOptions& options, const Topology& topology,
                            std::span<const Sample> validation);

/// Inference service: deliver the tunable blocks to the working members,
/// then run each sample over the chain with result feedback.
struct InferenceOutcome {
  std::vector<int> predictions;
  RoundMetrics metrics;
  SmashedLog smashed;
};

InferenceOutcome inference_service(const SplitModel& model, const ClientChain& chain,
                                   std::span<const Sample> requests, const Topology& topology,
                                   const std::string& edge_id, double sensing_seconds_per_sample = 1e-3,
                                   const AccountOptions& accounting = {});

/// FedAvg of edge tunable modules into a copy of the cloud model.
SplitModel cloud_aggregate(const SplitModel& cloud, std::span<const TunableModules> edge_updates);

/// Pushes the cloud tunable modules to every edge every `interval` edge
/// rounds (interval <= 0 disables delivery). Returns the number of edges updated.
int deliver_cloud(const SplitModel& cloud, std::vector<EdgeModelState>& edges, int interval);

/// Values a member holds: its tunable block and, when `with_backbone`, the
/// backbone layers it runs (plus the embedding at the start point).
std::int64_t member_param_count(const ModelConfig& config, const ChainMember& member, bool is_start,
                                bool with_backbone);

/// Bytes held by one member while it trains (fine-tune) or serves (inference).
/// A trainable backbone adds its weights and grads.
double member_memory_bytes(const ModelConfig& config, const ChainMember& member, bool finetune,
                           bool is_start, bool backbone_trainable = false);

}  // namespace gaisnet
