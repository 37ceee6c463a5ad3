#include "gaisnet/federation.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <stdexcept>

namespace gaisnet {

TunableModules extract_tunable(const SplitModel& model) {
  TunableModules m;
  for (const auto& p : model.prompts) m.prompts.push_back(p.tokens.value);
  m.head_weight = model.head.weight.value;
  m.head_bias = model.head.bias.value;
  return m;
}

namespace {

bool same_shape(const Mat& a, const Mat& b) { return a.rows() == b.rows() && a.cols() == b.cols(); }

void check_homologous(const TunableModules& ref, const TunableModules& m, const std::string& what) {
  bool ok = m.prompts.size() == ref.prompts.size() && same_shape(m.head_weight, ref.head_weight) &&
            same_shape(m.head_bias, ref.head_bias);
  for (std::size_t i = 0; ok && i < m.prompts.size(); ++i) ok = same_shape(m.prompts[i], ref.prompts[i]);
  if (!ok) throw ShapeError(what + ": module shapes differ");
}

}  // namespace

void load_tunable(SplitModel& model, const TunableModules& modules) {
  check_homologous(extract_tunable(model), modules, "load_tunable");
  for (std::size_t i = 0; i < modules.prompts.size(); ++i) model.prompts[i].tokens.value = modules.prompts[i];
  model.head.weight.value = modules.head_weight;
  model.head.bias.value = modules.head_bias;
}

TunableModules fedavg(std::span<const ClusterUpdate> updates, Weighting weighting) {
  if (updates.empty()) throw std::invalid_argument("fedavg: no updates");
  std::vector<const ClusterUpdate*> order;
  for (const auto& u : updates) order.push_back(&u);
  std::sort(order.begin(), order.end(),
            [](const ClusterUpdate* a, const ClusterUpdate* b) { return a->cluster_id < b->cluster_id; });
  for (std::size_t k = 1; k < order.size(); ++k)
    if (order[k]->cluster_id == order[k - 1]->cluster_id)
      throw std::invalid_argument("fedavg: duplicate cluster id " + std::to_string(order[k]->cluster_id));

  TunableModules mean = order.front()->modules;
  double seen = 0;
  for (const ClusterUpdate* u : order) {
    check_homologous(mean, u->modules, "fedavg");
    double w = 1.0;
    if (weighting == Weighting::by_sample_count) {
      if (u->sample_count <= 0) throw std::invalid_argument("fedavg: sample-count weighting needs positive counts");
      w = static_cast<double>(u->sample_count);
    }
    seen += w;
    const double step = w / seen;
    for (std::size_t i = 0; i < mean.prompts.size(); ++i)
      mean.prompts[i] += step * (u->modules.prompts[i] - mean.prompts[i]);
    mean.head_weight += step * (u->modules.head_weight - mean.head_weight);
    mean.head_bias += step * (u->modules.head_bias - mean.head_bias);
  }
  return mean;
}

std::int64_t member_param_count(const ModelConfig& c, const ChainMember& member, bool is_start,
                                bool with_backbone) {
  std::int64_t n = member.block ? block_param_count(c, *member.block) : 0;
  if (!with_backbone) return n;
  const std::int64_t d = c.hidden, h = c.mlp_hidden();
  if (is_start) n += static_cast<std::int64_t>(c.patch_dim) * d + d + c.n_patches * d + d;
  if (member.block) n += member.block->prompt_count * (4 * d * d + 2 * d * h + 9 * d + h);
  return n;
}

double member_memory_bytes(const ModelConfig& c, const ChainMember& member, bool finetune, bool is_start,
                           bool backbone_trainable) {
  const double payload = static_cast<double>(token_payload_bytes(c));
  double bytes = 2 * payload;
  if (is_start) bytes += 8.0 * c.n_patches * c.patch_dim;
  const bool full = finetune && backbone_trainable;
  const double params = static_cast<double>(member_param_count(c, member, is_start, full));
  if (!finetune) return bytes + 8.0 * params;
  bytes += 16.0 * params;
  if (!member.block) return bytes;
  const double t = c.layer_tokens();
  const double cache = 8.0 * (10 * t * c.hidden + 2 * t * c.mlp_hidden() + 2 * t + c.n_heads * t * t);
  return bytes + cache * member.block->prompt_count;
}

namespace {

std::vector<Event> sample_forward_events(const ModelConfig& c, const ClientChain& chain, double payload) {
  std::vector<Event> ev;
  ev.push_back(Event::compute(chain.start_point(), embed_flops(c, Pass::forward)));
  for (std::size_t k = 0; k < chain.members.size(); ++k) {
    const auto& m = chain.members[k];
    if (k > 0) ev.push_back(Event::transmit(chain.members[k - 1].client, m.client, payload));
    if (m.block) ev.push_back(Event::compute(m.client, flops_of(*m.block, c, Pass::forward)));
  }
  return ev;
}

void deliver_events(const ModelConfig& c, const ClientChain& chain, const std::string& edge_id,
                    bool to_members, bool with_backbone, std::vector<Event>& out) {
  for (std::size_t k = 0; k < chain.members.size(); ++k) {
    const auto& m = chain.members[k];
    const auto n = member_param_count(c, m, k == 0, with_backbone);
    if (n == 0) continue;
    const double bytes = 8.0 * static_cast<double>(n);
    out.push_back(to_members ? Event::transmit(edge_id, m.client, bytes)
                             : Event::transmit(m.client, edge_id, bytes));
  }
}

struct LocalBackbone {
  int cluster_id;
  double weight;
  const Backbone* backbone;
};

// Weighted running mean of backbones in cluster-id order, like fedavg.
void average_backbones(Backbone& into, std::vector<LocalBackbone> locals) {
  std::sort(locals.begin(), locals.end(),
            [](const auto& a, const auto& b) { return a.cluster_id < b.cluster_id; });
  auto dst = into.params();
  double seen = 0;
  for (const auto& l : locals) {
    auto src = l.backbone->params();
    seen += l.weight;
    const double step = l.weight / seen;
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k]->value += step * (src[k]->value - dst[k]->value);
  }
}

}  // namespace

RoundOutcome finetune_round(const EdgeModelState& edge, const std::vector<FinetuneCluster>& clusters,
                            const RoundOptions& options, const Topology& topology,
                            std::span<const Sample> validation) {
  if (clusters.empty()) throw std::invalid_argument("finetune_round: no clusters");
  if (options.local_epochs < 1 || options.batch_size < 1 || !(options.lr >= 0))
    throw std::invalid_argument("finetune_round: bad training options");
  const ModelConfig& c = edge.model.config;
  const double payload = static_cast<double>(token_payload_bytes(c));
  const bool frozen = edge.model.backbone.all_frozen();
  const TrainingMode mode = frozen ? TrainingMode::prompt_tuning : TrainingMode::full;

  RoundOutcome out;
  std::vector<ClusterUpdate> updates;
  std::vector<SplitModel> locals;
  locals.reserve(clusters.size());
  std::vector<std::vector<Event>> delivery, training, upload;
  for (const auto& cluster : clusters) {
    cluster.chain.validate(c);
    if (cluster.train.empty())
      throw std::invalid_argument("finetune_round: cluster " + std::to_string(cluster.id) + " has no data");
    const ClientChain& chain = cluster.chain;
    locals.push_back(edge.model);
    SplitModel& local = locals.back();
    const bool start_trains = !frozen || chain.members.front().block.has_value();

    std::vector<Event> deliver, train, up;
    deliver_events(c, chain, options.edge_id, true, !frozen, deliver);
    deliver_events(c, chain, options.edge_id, false, !frozen, up);
    for (std::size_t k = 0; k < chain.members.size(); ++k)
      train.push_back(Event::memory(chain.members[k].client,
                                    member_memory_bytes(c, chain.members[k], true, k == 0, !frozen)));
    train.push_back(Event::sense(chain.start_point(),
                                 options.sensing_seconds_per_sample * static_cast<double>(cluster.train.size())));

    std::vector<Sample> data = cluster.train;
    double last_loss = 0;
    for (int epoch = 0; epoch < options.local_epochs; ++epoch) {
      if (options.shuffle_seed != 0) {
        std::mt19937_64 rng(options.shuffle_seed * 1000003ULL + static_cast<std::uint64_t>(cluster.id) * 7919ULL +
                            static_cast<std::uint64_t>(epoch));
        std::shuffle(data.begin(), data.end(), rng);
      }
      double epoch_loss = 0;
      std::size_t batches = 0;
      for (std::size_t b = 0; b < data.size(); b += static_cast<std::size_t>(options.batch_size)) {
        const std::size_t n = std::min(data.size() - b, static_cast<std::size_t>(options.batch_size));
        BackwardResult r = pipeline_backward(chain, local, std::span<const Sample>(data).subspan(b, n), options.lr);
        epoch_loss += r.loss;
        ++batches;
        for (auto& rec : r.log) {
          rec.round = edge.round + 1;
          out.smashed.push_back(rec);
        }
        for (std::size_t s = 0; s < n; ++s) {
          auto fwd = sample_forward_events(c, chain, payload);
          train.insert(train.end(), fwd.begin(), fwd.end());
          for (std::size_t k = chain.members.size(); k-- > 0;) {
            const auto& m = chain.members[k];
            if (m.block) train.push_back(Event::compute(m.client, flops_of(*m.block, c, Pass::backward, mode)));
            if (k > 0 && (k > 1 || start_trains))
              train.push_back(Event::transmit(m.client, chain.members[k - 1].client, payload, true));
          }
          if (!frozen) train.push_back(Event::compute(chain.start_point(), embed_flops(c, Pass::backward, mode)));
        }
      }
      last_loss = batches ? epoch_loss / static_cast<double>(batches) : 0.0;
    }
    out.train_loss += last_loss / static_cast<double>(clusters.size());
    updates.push_back({cluster.id, extract_tunable(local), static_cast<std::int64_t>(cluster.train.size())});
    delivery.push_back(std::move(deliver));
    training.push_back(std::move(train));
    upload.push_back(std::move(up));
  }

  out.edge = edge;
  load_tunable(out.edge.model, fedavg(updates, options.weighting));
  if (!frozen) {
    std::vector<LocalBackbone> backbones;
    for (std::size_t j = 0; j < clusters.size(); ++j) {
      const double w = options.weighting == Weighting::by_sample_count
                           ? static_cast<double>(clusters[j].train.size())
                           : 1.0;
      backbones.push_back({clusters[j].id, w, &locals[j].backbone});
    }
    average_backbones(out.edge.model.backbone, std::move(backbones));
  }
  ++out.edge.round;

  Trace trace;
  trace.parallel(std::move(delivery));
  trace.parallel(std::move(training));
  trace.parallel(std::move(upload));
  const ParamCounts counts = count_params(c);
  const double aggregate_flops = static_cast<double>(clusters.size()) *
                                 static_cast<double>(frozen ? counts.tunable : counts.total);
  trace.serial({Event::compute(options.edge_id, aggregate_flops)});
  out.metrics = account_round(RoundKind::finetune, trace, topology, options.accounting);
  out.metrics.model_performance = accuracy(out.edge.model, validation);
  return out;
}

InferenceOutcome inference_service(const SplitModel& model, const ClientChain& chain,
                                   std::span<const Sample> requests, const Topology& topology,
                                   const std::string& edge_id, double sensing_seconds_per_sample,
                                   const AccountOptions& accounting) {
  const ModelConfig& c = model.config;
  const double payload = static_cast<double>(token_payload_bytes(c));
  const LinkPredicate linked = [&](const std::string& a, const std::string& b) {
    return topology.find_link(a, b) != nullptr;
  };
  InferenceOutcome out;
  std::vector<Event> deliver;
  deliver_events(c, chain, edge_id, true, false, deliver);
  std::vector<Event> serve;
  for (std::size_t k = 0; k < chain.members.size(); ++k)
    serve.push_back(Event::memory(chain.members[k].client,
                                  member_memory_bytes(c, chain.members[k], false, k == 0)));
  for (const Sample& s : requests) {
    InferenceResult r = inference_round(chain, model, s.features, linked);
    out.predictions.push_back(r.predicted);
    out.smashed.insert(out.smashed.end(), r.log.begin(), r.log.end());
    serve.push_back(Event::sense(chain.start_point(), sensing_seconds_per_sample));
    auto fwd = sample_forward_events(c, chain, payload);
    serve.insert(serve.end(), fwd.begin(), fwd.end());
    serve.push_back(Event::transmit(chain.end_point(), chain.start_point(),
                                    static_cast<double>(kResultFeedbackBytes)));
  }
  Trace trace;
  trace.serial(std::move(deliver));
  trace.serial(std::move(serve));
  out.metrics = account_round(RoundKind::inference, trace, topology, accounting);
  long correct = 0;
  for (std::size_t i = 0; i < requests.size(); ++i)
    if (out.predictions[i] == requests[i].label) ++correct;
  out.metrics.model_performance =
      requests.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(requests.size());
  return out;
}

SplitModel cloud_aggregate(const SplitModel& cloud, std::span<const TunableModules> edge_updates) {
  std::vector<ClusterUpdate> updates;
  int id = 0;
  for (const auto& m : edge_updates) updates.push_back({id++, m, 1});
  SplitModel out = cloud;
  load_tunable(out, fedavg(updates, Weighting::uniform));
  return out;
}

int deliver_cloud(const SplitModel& cloud, std::vector<EdgeModelState>& edges, int interval) {
  if (interval <= 0) return 0;
  int delivered = 0;
  const TunableModules modules = extract_tunable(cloud);
  for (auto& e : edges) {
    if (e.round > 0 && e.round % interval == 0) {
      load_tunable(e.model, modules);
      ++delivered;
    }
  }
  return delivered;
}

}  // namespace gaisnet
