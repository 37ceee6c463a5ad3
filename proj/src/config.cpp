#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "gaisnet/experiment.hpp"

namespace gaisnet {

const char* to_string(ExperimentId id) {
  static const char* names[] = {"E1", "E2", "E3", "E4", "E5", "E6"};
  return names[static_cast<int>(id)];
}

std::optional<ExperimentId> parse_experiment_id(const std::string& text) {
  for (int i = 0; i < 6; ++i)
    if (text == to_string(static_cast<ExperimentId>(i))) return static_cast<ExperimentId>(i);
  return std::nullopt;
}

namespace {

std::string join_lines(const std::vector<std::string>& lines) {
  std::string s = "invalid config";
  for (const auto& l : lines) s += "\n  " + l;
  return s;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> d) : std::runtime_error(join_lines(d)), diagnostics(std::move(d)) {}

namespace {

// Walks a YAML tree into the config structs, collecting one diagnostic per
// bad field instead of stopping at the first.
class Reader {
 public:
  std::vector<std::string> diags;

  bool map(const YAML::Node& node, const std::string& path, const std::set<std::string>& allowed) {
    if (!node.IsMap()) {
      fail(node, path, "expected a mapping");
      return false;
    }
    std::set<std::string> seen;
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.count(key)) fail(kv.first, join(path, key), "unknown field");
      if (!seen.insert(key).second) fail(kv.first, join(path, key), "duplicate field");
    }
    return true;
  }

  template <typename T>
  void field(const YAML::Node& map, const std::string& key, const std::string& path, T& out) {
    const YAML::Node node = map[key];
    if (!node) return;
    scalar(node, join(path, key), out);
  }

  void scalar(const YAML::Node& node, const std::string& path, int& out) {
    long long v = 0;
    if (as_integer(node, path, v)) {
      if (v < INT32_MIN || v > INT32_MAX) return fail(node, path, "integer out of range");
      out = static_cast<int>(v);
    }
  }
  void scalar(const YAML::Node& node, const std::string& path, std::uint64_t& out) {
    long long v = 0;
    if (as_integer(node, path, v)) {
      if (v < 0) return fail(node, path, "must be non-negative");
      out = static_cast<std::uint64_t>(v);
    }
  }
  void scalar(const YAML::Node& node, const std::string& path, double& out) {
    if (!node.IsScalar()) return fail(node, path, "expected a number");
    try {
      out = node.as<double>();
    } catch (const YAML::Exception&) {
      fail(node, path, fmt::format("expected a number, got '{}'", node.Scalar()));
    }
  }
  void scalar(const YAML::Node& node, const std::string& path, bool& out) {
    if (!node.IsScalar()) return fail(node, path, "expected true or false");
    try {
      out = node.as<bool>();
    } catch (const YAML::Exception&) {
      fail(node, path, fmt::format("expected true or false, got '{}'", node.Scalar()));
    }
  }
  void scalar(const YAML::Node& node, const std::string& path, std::string& out) {
    if (!node.IsScalar()) return fail(node, path, "expected a string");
    out = node.Scalar();
  }
  template <typename T>
  void scalar(const YAML::Node& node, const std::string& path, std::vector<T>& out) {
    if (!node.IsSequence()) return fail(node, path, "expected a list");
    out.clear();
    for (std::size_t i = 0; i < node.size(); ++i) {
      T v{};
      scalar(node[i], fmt::format("{}[{}]", path, i), v);
      out.push_back(v);
    }
  }

  void fail(const YAML::Node& node, const std::string& path, const std::string& message) {
    const auto mark = node.Mark();
    if (mark.line >= 0)
      diags.push_back(fmt::format("{}: {} (line {})", path, message, mark.line + 1));
    else
      diags.push_back(fmt::format("{}: {}", path, message));
  }

  static std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
  }

 private:
  bool as_integer(const YAML::Node& node, const std::string& path, long long& out) {
    if (!node.IsScalar()) {
      fail(node, path, "expected an integer");
      return false;
    }
    try {
      out = node.as<long long>();
      return true;
    } catch (const YAML::Exception&) {
      fail(node, path, fmt::format("expected an integer, got '{}'", node.Scalar()));
      return false;
    }
  }
};

void read_model(Reader& r, const YAML::Node& n, ModelConfig& m) {
  if (!r.map(n, "model", {"n_layers", "hidden", "n_heads", "n_patches", "patch_dim", "prompt_len",
                          "n_classes", "mlp_ratio", "ln_eps"}))
    return;
  r.field(n, "n_layers", "model", m.n_layers);
  r.field(n, "hidden", "model", m.hidden);
  r.field(n, "n_heads", "model", m.n_heads);
  r.field(n, "n_patches", "model", m.n_patches);
  r.field(n, "patch_dim", "model", m.patch_dim);
  r.field(n, "prompt_len", "model", m.prompt_len);
  r.field(n, "n_classes", "model", m.n_classes);
  r.field(n, "mlp_ratio", "model", m.mlp_ratio);
  r.field(n, "ln_eps", "model", m.ln_eps);
}

void read_data(Reader& r, const YAML::Node& n, DataConfig& d) {
  if (!r.map(n, "data", {"generator", "cloud_per_class", "edge_per_class", "classes_per_client",
                         "samples_per_client"}))
    return;
  if (const auto g = n["generator"]) {
    if (r.map(g, "data.generator",
              {"signal_dims", "class_separation", "patch_noise", "nuisance_noise", "task_seed"})) {
      r.field(g, "signal_dims", "data.generator", d.generator.signal_dims);
      r.field(g, "class_separation", "data.generator", d.generator.class_separation);
      r.field(g, "patch_noise", "data.generator", d.generator.patch_noise);
      r.field(g, "nuisance_noise", "data.generator", d.generator.nuisance_noise);
      r.field(g, "task_seed", "data.generator", d.generator.task_seed);
    }
  }
  r.field(n, "cloud_per_class", "data", d.cloud_per_class);
  r.field(n, "edge_per_class", "data", d.edge_per_class);
  r.field(n, "classes_per_client", "data", d.classes_per_client);
  r.field(n, "samples_per_client", "data", d.samples_per_client);
}

void read_pretrain(Reader& r, const YAML::Node& n, PretrainOptions& p) {
  if (!r.map(n, "pretrain", {"epochs", "lr", "batch_size"})) return;
  r.field(n, "epochs", "pretrain", p.epochs);
  r.field(n, "lr", "pretrain", p.lr);
  r.field(n, "batch_size", "pretrain", p.batch_size);
}

void read_finetune(Reader& r, const YAML::Node& n, FinetuneConfig& f) {
  if (!r.map(n, "finetune", {"rounds", "local_epochs", "lr", "batch_size", "weighting", "clusters",
                             "chain_len", "allow_edge_member", "sensing_seconds_per_sample",
                             "count_gradient_feedback"}))
    return;
  r.field(n, "rounds", "finetune", f.rounds);
  r.field(n, "local_epochs", "finetune", f.local_epochs);
  r.field(n, "lr", "finetune", f.lr);
  r.field(n, "batch_size", "finetune", f.batch_size);
  if (const auto w = n["weighting"]) {
    std::string s;
    r.scalar(w, "finetune.weighting", s);
    if (s == "uniform")
      f.weighting = Weighting::uniform;
    else if (s == "by_sample_count")
      f.weighting = Weighting::by_sample_count;
    else if (!s.empty())
      r.fail(w, "finetune.weighting", fmt::format("unknown weighting '{}' (uniform | by_sample_count)", s));
  }
  r.field(n, "clusters", "finetune", f.clusters);
  r.field(n, "chain_len", "finetune", f.chain_len);
  r.field(n, "allow_edge_member", "finetune", f.allow_edge_member);
  r.field(n, "sensing_seconds_per_sample", "finetune", f.sensing_seconds_per_sample);
  r.field(n, "count_gradient_feedback", "finetune", f.count_gradient_feedback);
}

void read_nodes(Reader& r, const YAML::Node& n, std::vector<Node>& out) {
  if (!n.IsSequence()) return r.fail(n, "topology.nodes", "expected a list");
  for (std::size_t i = 0; i < n.size(); ++i) {
    const std::string path = fmt::format("topology.nodes[{}]", i);
    const YAML::Node e = n[i];
    Node node;
    if (!r.map(e, path, {"id", "kind", "compute_rate", "power_compute", "power_tx", "memory_cap",
                         "data_size", "data_quality"}))
      continue;
    if (!e["id"]) r.fail(e, path + ".id", "required");
    r.field(e, "id", path, node.id);
    if (const auto k = e["kind"]) {
      std::string s;
      r.scalar(k, path + ".kind", s);
      if (s == "cloud")
        node.kind = NodeKind::cloud;
      else if (s == "edge")
        node.kind = NodeKind::edge;
      else if (s == "client")
        node.kind = NodeKind::client;
      else
        r.fail(k, path + ".kind", fmt::format("unknown node kind '{}' (cloud | edge | client)", s));
    }
    r.field(e, "compute_rate", path, node.compute_rate);
    r.field(e, "power_compute", path, node.power_compute);
    r.field(e, "power_tx", path, node.power_tx);
    r.field(e, "memory_cap", path, node.memory_cap);
    r.field(e, "data_size", path, node.data_size);
    r.field(e, "data_quality", path, node.data_quality);
    out.push_back(node);
  }
}

void read_links(Reader& r, const YAML::Node& n, std::vector<Link>& out) {
  if (!n.IsSequence()) return r.fail(n, "topology.links", "expected a list");
  for (std::size_t i = 0; i < n.size(); ++i) {
    const std::string path = fmt::format("topology.links[{}]", i);
    const YAML::Node e = n[i];
    Link link;
    if (!r.map(e, path, {"kind", "a", "b", "bandwidth", "energy_per_bit"})) continue;
    if (const auto k = e["kind"]) {
      std::string s;
      r.scalar(k, path + ".kind", s);
      if (s == "cs" || s == "CS")
        link.kind = LinkKind::cs;
      else if (s == "d2d" || s == "D2D")
        link.kind = LinkKind::d2d;
      else
        r.fail(k, path + ".kind", fmt::format("unknown link kind '{}' (cs | d2d)", s));
    }
    r.field(e, "a", path, link.a);
    r.field(e, "b", path, link.b);
    r.field(e, "bandwidth", path, link.bandwidth);
    r.field(e, "energy_per_bit", path, link.energy_per_bit);
    out.push_back(link);
  }
}

void read_topology(Reader& r, const YAML::Node& n, TopologyConfig& t) {
  if (!r.map(n, "topology",
             {"edge_id", "cloud_id", "nodes", "links", "n_clients", "client_compute", "d2d", "d2d_bandwidth",
              "cs_bandwidth", "d2d_energy_per_bit", "cs_energy_per_bit", "client_power_compute",
              "client_power_tx", "client_memory", "edge_compute", "edge_power_compute", "edge_power_tx",
              "edge_memory"}))
    return;
  r.field(n, "edge_id", "topology", t.edge_id);
  r.field(n, "cloud_id", "topology", t.cloud_id);
  if (const auto v = n["nodes"]) read_nodes(r, v, t.nodes);
  if (const auto v = n["links"]) read_links(r, v, t.links);
  r.field(n, "n_clients", "topology", t.n_clients);
  r.field(n, "client_compute", "topology", t.client_compute);
  r.field(n, "d2d", "topology", t.d2d);
  r.field(n, "d2d_bandwidth", "topology", t.d2d_bandwidth);
  r.field(n, "cs_bandwidth", "topology", t.cs_bandwidth);
  r.field(n, "d2d_energy_per_bit", "topology", t.d2d_energy_per_bit);
  r.field(n, "cs_energy_per_bit", "topology", t.cs_energy_per_bit);
  r.field(n, "client_power_compute", "topology", t.client_power_compute);
  r.field(n, "client_power_tx", "topology", t.client_power_tx);
  r.field(n, "client_memory", "topology", t.client_memory);
  r.field(n, "edge_compute", "topology", t.edge_compute);
  r.field(n, "edge_power_compute", "topology", t.edge_power_compute);
  r.field(n, "edge_power_tx", "topology", t.edge_power_tx);
  r.field(n, "edge_memory", "topology", t.edge_memory);
}

void read_schedule(Reader& r, const YAML::Node& n, ScheduleConfig& s) {
  if (!r.map(n, "schedule", {"stream", "economy", "rs_episodes", "request_probs"})) return;
  r.field(n, "stream", "schedule", s.stream);
  if (const auto e = n["economy"]) {
    if (r.map(e, "schedule.economy", {"base_profit", "upgrade_cost", "upgrade_increment", "max_level"})) {
      r.field(e, "base_profit", "schedule.economy", s.economy.base_profit);
      r.field(e, "upgrade_cost", "schedule.economy", s.economy.upgrade_cost);
      r.field(e, "upgrade_increment", "schedule.economy", s.economy.upgrade_increment);
      r.field(e, "max_level", "schedule.economy", s.economy.max_level);
    }
  }
  r.field(n, "rs_episodes", "schedule", s.rs_episodes);
  r.field(n, "request_probs", "schedule", s.request_probs);
}

// Samples each class must supply to the client pool for a round-robin partition.
std::vector<long long> partition_demand(int n_classes, int n_clients, int cpc, int spc) {
  std::vector<long long> need(static_cast<std::size_t>(std::max(n_classes, 0)), 0);
  if (n_classes < 1 || cpc < 1) return need;
  for (int j = 0; j < n_clients; ++j)
    for (int t = 0; t < cpc; ++t)
      need[static_cast<std::size_t>((j * cpc + t) % n_classes)] += spc / cpc + (t < spc % cpc ? 1 : 0);
  return need;
}

}  // namespace

int client_pool_per_class(int edge_per_class) { return edge_per_class - edge_per_class / 5; }

std::vector<std::string> validate(const ExperimentConfig& c) {
  std::vector<std::string> v;
  auto bad = [&](const std::string& path, const std::string& msg) { v.push_back(path + ": " + msg); };

  if (c.seeds.empty()) bad("seeds", "must list at least one seed");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size())
    bad("seeds", "seeds repeat");
  if (c.jobs < 1) bad("jobs", "must be at least 1");

  const ModelConfig& m = c.model;
  if (m.n_layers < 1) bad("model.n_layers", "must be positive");
  if (m.hidden < 1) bad("model.hidden", "must be positive");
  if (m.n_heads < 1)
    bad("model.n_heads", "must be positive");
  else if (m.hidden % m.n_heads != 0)
    bad("model.n_heads", fmt::format("{} does not divide model.hidden {}", m.n_heads, m.hidden));
  if (m.n_patches < 1) bad("model.n_patches", "must be positive");
  if (m.patch_dim < 1) bad("model.patch_dim", "must be positive");
  if (m.prompt_len < 0) bad("model.prompt_len", "must be non-negative");
  if (m.n_classes < 2) bad("model.n_classes", "must be at least 2");
  if (!(m.mlp_ratio > 0)) bad("model.mlp_ratio", "must be positive");
  if (!(m.ln_eps > 0)) bad("model.ln_eps", "must be positive");

  const DataConfig& d = c.data;
  const bool e4 = c.id == ExperimentId::E4;
  const GeneratorConfig& g = d.generator;
  if (g.signal_dims < 1 || g.signal_dims > m.patch_dim)
    bad("data.generator.signal_dims", fmt::format("{} outside [1, model.patch_dim = {}]", g.signal_dims, m.patch_dim));
  if (!(g.class_separation >= 0)) bad("data.generator.class_separation", "must be non-negative");
  if (!(g.patch_noise >= 0)) bad("data.generator.patch_noise", "must be non-negative");
  if (!(g.nuisance_noise >= 0)) bad("data.generator.nuisance_noise", "must be non-negative");
  if (d.cloud_per_class < 0) bad("data.cloud_per_class", "must be non-negative");
  if (d.edge_per_class < 5) bad("data.edge_per_class", "must be at least 5 (4:1 pool/validation split)");
  // E4 sweeps classes_per_client, replacing the data field.
  if (!e4) {
    if (d.classes_per_client < 1 || d.classes_per_client > m.n_classes)
      bad("data.classes_per_client",
          fmt::format("{} outside [1, model.n_classes = {}]", d.classes_per_client, m.n_classes));
    if (d.samples_per_client < d.classes_per_client)
      bad("data.samples_per_client", "must be at least data.classes_per_client");
  }

  if (c.pretrain.epochs < 0) bad("pretrain.epochs", "must be non-negative");
  if (!(c.pretrain.lr >= 0)) bad("pretrain.lr", "must be non-negative");
  if (c.pretrain.batch_size < 1) bad("pretrain.batch_size", "must be positive");
  if (c.pretrain.epochs > 0 && d.cloud_per_class < 1)
    bad("data.cloud_per_class", "pre-training needs a non-empty cloud split");

  const FinetuneConfig& f = c.finetune;
  if (f.rounds < 1) bad("finetune.rounds", "must be positive");
  if (f.local_epochs < 1) bad("finetune.local_epochs", "must be positive");
  if (!(f.lr >= 0)) bad("finetune.lr", "must be non-negative");
  if (f.batch_size < 1) bad("finetune.batch_size", "must be positive");
  if (f.clusters < 1) bad("finetune.clusters", "must be positive");
  if (f.chain_len < 1) bad("finetune.chain_len", "must be positive");
  if (m.n_layers >= 1 && f.chain_len > 1 && f.chain_len - 1 > m.n_layers + 1)
    bad("finetune.chain_len", fmt::format("{} working clients exceed the {} tunable modules", f.chain_len - 1,
                                          m.n_layers + 1));
  if (!(f.sensing_seconds_per_sample >= 0)) bad("finetune.sensing_seconds_per_sample", "must be non-negative");

  // Sweeps.
  const bool e5 = c.id == ExperimentId::E5;
  if ((e4 || e5) && c.sweep.empty()) bad("sweep", fmt::format("{} needs a non-empty sweep", to_string(c.id)));
  if (!e4 && !e5 && !c.sweep.empty()) bad("sweep", fmt::format("{} takes no sweep", to_string(c.id)));
  for (std::size_t i = 0; i < c.sweep.size(); ++i) {
    const int s = c.sweep[i];
    if (e4 && (s < 1 || s > m.n_classes))
      bad(fmt::format("sweep[{}]", i), fmt::format("classes_per_client {} outside [1, model.n_classes = {}]", s,
                                                   m.n_classes));
    if (e4 && s > d.samples_per_client)
      bad(fmt::format("sweep[{}]", i), "classes_per_client exceeds data.samples_per_client");
    if (e5 && s < 1) bad(fmt::format("sweep[{}]", i), "cluster count must be positive");
  }
  if (c.id == ExperimentId::E1 && c.pretrain.epochs < 1)
    bad("pretrain.epochs", "E1 compares against a pre-trained arm and needs at least one epoch");

  // Partition feasibility against the client pool.
  if (c.id != ExperimentId::E6 && v.empty()) {
    std::vector<std::pair<int, int>> cases;  // (clusters, classes_per_client)
    if (e4)
      for (int s : c.sweep) cases.emplace_back(f.clusters, s);
    else if (e5)
      for (int s : c.sweep) cases.emplace_back(s, d.classes_per_client);
    else
      cases.emplace_back(f.clusters, d.classes_per_client);
    const long long pool = client_pool_per_class(d.edge_per_class);
    for (auto [k, cpc] : cases) {
      const auto need = partition_demand(m.n_classes, k, cpc, d.samples_per_client);
      for (std::size_t cls = 0; cls < need.size(); ++cls)
        if (need[cls] > pool) {
          bad("data.edge_per_class",
              fmt::format("{} clusters with {} classes each need {} samples of class {}, pool holds {}", k, cpc,
                          need[cls], cls, pool));
          break;
        }
    }
  }

  // Topology.
  const TopologyConfig& t = c.topology;
  auto positive = [&](double x, const std::string& path) {
    if (!(x > 0)) bad(path, fmt::format("must be positive, got {}", x));
  };
  auto non_negative = [&](double x, const std::string& path) {
    if (!(x >= 0)) bad(path, fmt::format("must be non-negative, got {}", x));
  };
  const std::size_t topo_start = v.size();
  if (t.nodes.empty()) {
    if (t.n_clients < 1) bad("topology.n_clients", "must be positive");
    if (t.client_compute.empty()) bad("topology.client_compute", "must list at least one rate");
    for (std::size_t i = 0; i < t.client_compute.size(); ++i)
      positive(t.client_compute[i], fmt::format("topology.client_compute[{}]", i));
    if (t.d2d != "complete" && t.d2d != "ring" && t.d2d != "line" && t.d2d != "none")
      bad("topology.d2d", fmt::format("unknown pattern '{}' (complete | ring | line | none)", t.d2d));
    positive(t.d2d_bandwidth, "topology.d2d_bandwidth");
    positive(t.cs_bandwidth, "topology.cs_bandwidth");
    non_negative(t.d2d_energy_per_bit, "topology.d2d_energy_per_bit");
    non_negative(t.cs_energy_per_bit, "topology.cs_energy_per_bit");
    non_negative(t.client_power_compute, "topology.client_power_compute");
    non_negative(t.client_power_tx, "topology.client_power_tx");
    positive(t.client_memory, "topology.client_memory");
    positive(t.edge_compute, "topology.edge_compute");
    non_negative(t.edge_power_compute, "topology.edge_power_compute");
    non_negative(t.edge_power_tx, "topology.edge_power_tx");
    positive(t.edge_memory, "topology.edge_memory");
    if (t.edge_id == t.cloud_id) bad("topology.cloud_id", "must differ from topology.edge_id");
    if (t.edge_id.empty()) bad("topology.edge_id", "must be non-empty");
  } else {
    std::set<std::string> ids;
    for (std::size_t i = 0; i < t.nodes.size(); ++i) {
      const Node& n = t.nodes[i];
      const std::string path = fmt::format("topology.nodes[{}]", i);
      if (n.id.empty()) bad(path + ".id", "must be non-empty");
      if (!ids.insert(n.id).second) bad(path + ".id", fmt::format("duplicate node id '{}'", n.id));
      positive(n.compute_rate, path + ".compute_rate");
      non_negative(n.power_compute, path + ".power_compute");
      non_negative(n.power_tx, path + ".power_tx");
      positive(n.memory_cap, path + ".memory_cap");
      non_negative(n.data_size, path + ".data_size");
      non_negative(n.data_quality, path + ".data_quality");
    }
    for (std::size_t i = 0; i < t.links.size(); ++i) {
      const Link& l = t.links[i];
      const std::string path = fmt::format("topology.links[{}]", i);
      if (!ids.count(l.a)) bad(path + ".a", fmt::format("unknown node '{}'", l.a));
      if (!ids.count(l.b)) bad(path + ".b", fmt::format("unknown node '{}'", l.b));
      positive(l.bandwidth, path + ".bandwidth");
      non_negative(l.energy_per_bit, path + ".energy_per_bit");
    }
    if (!ids.count(t.edge_id)) bad("topology.edge_id", fmt::format("'{}' is not a listed node", t.edge_id));
  }
  if (v.size() == topo_start) {
    try {
      const Topology topo = build_topology(t, d);
      if (topo.node(t.edge_id).kind != NodeKind::edge)
        bad("topology.edge_id", fmt::format("'{}' is not an edge node", t.edge_id));
    } catch (const TopologyError& e) {
      bad("topology", e.what());
    }
  }

  // Scheduling.
  const ScheduleConfig& s = c.schedule;
  try {
    sched::parse_stream(s.stream);
  } catch (const std::exception& e) {
    bad("schedule.stream", e.what());
  }
  try {
    s.economy.validate();
  } catch (const std::exception& e) {
    bad("schedule.economy", e.what());
  }
  if (s.rs_episodes < 1) bad("schedule.rs_episodes", "must be positive");
  if (!s.request_probs.empty()) {
    if (s.request_probs.size() != static_cast<std::size_t>(sched::kDevices))
      bad("schedule.request_probs", fmt::format("needs {} entries", sched::kDevices));
    double sum = 0;
    for (std::size_t i = 0; i < s.request_probs.size(); ++i) {
      non_negative(s.request_probs[i], fmt::format("schedule.request_probs[{}]", i));
      sum += s.request_probs[i];
    }
    if (std::abs(sum - 1.0) > 1e-9) bad("schedule.request_probs", fmt::format("must sum to 1, got {}", sum));
  }
  return v;
}

ExperimentConfig parse_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError({fmt::format("line {}, column {}: {}", e.mark.line + 1, e.mark.column + 1, e.msg)});
  }
  Reader r;
  ExperimentConfig c;
  if (!root || root.IsNull()) throw ConfigError({"config: empty document"});
  if (!r.map(root, "", {"experiment", "name", "seeds", "output", "jobs", "model", "data", "pretrain", "finetune",
                        "topology", "schedule", "sweep"}))
    throw ConfigError(r.diags);

  if (const auto id = root["experiment"]) {
    std::string s;
    r.scalar(id, "experiment", s);
    if (auto parsed = parse_experiment_id(s))
      c.id = *parsed;
    else if (id.IsScalar())
      r.fail(id, "experiment", fmt::format("unknown experiment id '{}' (E1..E6)", s));
  } else {
    r.diags.push_back("experiment: required");
  }
  r.field(root, "name", "", c.name);
  r.field(root, "seeds", "", c.seeds);
  r.field(root, "output", "", c.output);
  r.field(root, "jobs", "", c.jobs);
  r.field(root, "sweep", "", c.sweep);
  if (const auto n = root["model"]) read_model(r, n, c.model);
  if (const auto n = root["data"]) read_data(r, n, c.data);
  if (const auto n = root["pretrain"]) read_pretrain(r, n, c.pretrain);
  if (const auto n = root["finetune"]) read_finetune(r, n, c.finetune);
  if (const auto n = root["topology"]) read_topology(r, n, c.topology);
  if (const auto n = root["schedule"]) read_schedule(r, n, c.schedule);
  c.data.generator.n_patches = c.model.n_patches;
  c.data.generator.patch_dim = c.model.patch_dim;

  std::vector<std::string> diags = std::move(r.diags);
  if (diags.empty()) diags = validate(c);
  if (!diags.empty()) throw ConfigError(std::move(diags));
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({fmt::format("{}: cannot open file", path.string())});
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::vector<std::string> validate_config(const std::filesystem::path& path) {
  try {
    load_config(path);
    return {};
  } catch (const ConfigError& e) {
    return e.diagnostics;
  } catch (const std::exception& e) {
    return {fmt::format("config: {}", e.what())};
  }
}

namespace {

nlohmann::json node_json(const Node& n) {
  return {{"id", n.id},
          {"kind", to_string(n.kind)},
          {"compute_rate", n.compute_rate},
          {"power_compute", n.power_compute},
          {"power_tx", n.power_tx},
          {"memory_cap", n.memory_cap},
          {"data_size", n.data_size},
          {"data_quality", n.data_quality}};
}

nlohmann::json link_json(const Link& l) {
  return {{"kind", to_string(l.kind)}, {"a", l.a}, {"b", l.b}, {"bandwidth", l.bandwidth},
          {"energy_per_bit", l.energy_per_bit}};
}

}  // namespace

nlohmann::json to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  const auto& m = c.model;
  const auto& d = c.data;
  const auto& g = d.generator;
  const auto& f = c.finetune;
  const auto& t = c.topology;
  const auto& s = c.schedule;
  json nodes = json::array();
  for (const auto& n : t.nodes) nodes.push_back(node_json(n));
  json links = json::array();
  for (const auto& l : t.links) links.push_back(link_json(l));
  return {
      {"experiment", to_string(c.id)},
      {"name", c.name},
      {"seeds", c.seeds},
      {"output", c.output},
      {"jobs", c.jobs},
      {"model",
       {{"n_layers", m.n_layers}, {"hidden", m.hidden}, {"n_heads", m.n_heads}, {"n_patches", m.n_patches},
        {"patch_dim", m.patch_dim}, {"prompt_len", m.prompt_len}, {"n_classes", m.n_classes},
        {"mlp_ratio", m.mlp_ratio}, {"ln_eps", m.ln_eps}}},
      {"data",
       {{"generator",
         {{"signal_dims", g.signal_dims}, {"class_separation", g.class_separation}, {"patch_noise", g.patch_noise},
          {"nuisance_noise", g.nuisance_noise}, {"task_seed", g.task_seed}}},
        {"cloud_per_class", d.cloud_per_class},
        {"edge_per_class", d.edge_per_class},
        {"classes_per_client", d.classes_per_client},
        {"samples_per_client", d.samples_per_client}}},
      {"pretrain", {{"epochs", c.pretrain.epochs}, {"lr", c.pretrain.lr}, {"batch_size", c.pretrain.batch_size}}},
      {"finetune",
       {{"rounds", f.rounds}, {"local_epochs", f.local_epochs}, {"lr", f.lr}, {"batch_size", f.batch_size},
        {"weighting", f.weighting == Weighting::uniform ? "uniform" : "by_sample_count"},
        {"clusters", f.clusters}, {"chain_len", f.chain_len}, {"allow_edge_member", f.allow_edge_member},
        {"sensing_seconds_per_sample", f.sensing_seconds_per_sample},
        {"count_gradient_feedback", f.count_gradient_feedback}}},
      {"topology",
       {{"edge_id", t.edge_id}, {"cloud_id", t.cloud_id}, {"nodes", nodes}, {"links", links},
        {"n_clients", t.n_clients}, {"client_compute", t.client_compute}, {"d2d", t.d2d},
        {"d2d_bandwidth", t.d2d_bandwidth}, {"cs_bandwidth", t.cs_bandwidth},
        {"d2d_energy_per_bit", t.d2d_energy_per_bit}, {"cs_energy_per_bit", t.cs_energy_per_bit},
        {"client_power_compute", t.client_power_compute}, {"client_power_tx", t.client_power_tx},
        {"client_memory", t.client_memory}, {"edge_compute", t.edge_compute},
        {"edge_power_compute", t.edge_power_compute}, {"edge_power_tx", t.edge_power_tx},
        {"edge_memory", t.edge_memory}}},
      {"schedule",
       {{"stream", s.stream},
        {"economy",
         {{"base_profit", s.economy.base_profit}, {"upgrade_cost", s.economy.upgrade_cost},
          {"upgrade_increment", s.economy.upgrade_increment}, {"max_level", s.economy.max_level}}},
        {"rs_episodes", s.rs_episodes},
        {"request_probs", s.request_probs}}},
      {"sweep", c.sweep},
  };
}

std::string config_hash(const ExperimentConfig& config) {
  nlohmann::json j = to_json(config);
  j.erase("output");
  j.erase("jobs");
  j.erase("seeds");
  const std::string text = j.dump();
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return fmt::format("{:016x}", h);
}

Topology build_topology(const TopologyConfig& t, const DataConfig& data) {
  Topology topo;
  if (!t.nodes.empty()) {
    for (const auto& n : t.nodes) topo.add_node(n);
    for (const auto& l : t.links) topo.add_link(l);
    return topo;
  }
  Node edge{t.edge_id, NodeKind::edge, t.edge_compute, t.edge_power_compute, t.edge_power_tx, t.edge_memory};
  Node cloud{t.cloud_id, NodeKind::cloud, t.edge_compute, t.edge_power_compute, t.edge_power_tx, t.edge_memory};
  topo.add_node(edge);
  topo.add_node(cloud);
  topo.add_link({LinkKind::cs, t.edge_id, t.cloud_id, t.cs_bandwidth, t.cs_energy_per_bit});

  const int width = std::max(2, static_cast<int>(std::to_string(t.n_clients).size()));
  // Training share of a client's samples under the 4:1 split.
  const double train = static_cast<double>(std::llround(data.samples_per_client * 4.0 / 5.0));
  std::vector<std::string> ids;
  for (int i = 0; i < t.n_clients; ++i) {
    Node n;
    n.id = fmt::format("c{:0{}}", i + 1, width);
    n.kind = NodeKind::client;
    n.compute_rate = t.client_compute[static_cast<std::size_t>(i) % t.client_compute.size()];
    n.power_compute = t.client_power_compute;
    n.power_tx = t.client_power_tx;
    n.memory_cap = t.client_memory;
    n.data_size = train;
    n.data_quality = 1.0;
    topo.add_node(n);
    topo.add_link({LinkKind::cs, n.id, t.edge_id, t.cs_bandwidth, t.cs_energy_per_bit});
    ids.push_back(n.id);
  }
  auto d2d = [&](std::size_t a, std::size_t b) {
    topo.add_link({LinkKind::d2d, ids[a], ids[b], t.d2d_bandwidth, t.d2d_energy_per_bit});
  };
  const std::size_t n = ids.size();
  if (t.d2d == "complete") {
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b) d2d(a, b);
  } else if (t.d2d == "line" || t.d2d == "ring") {
    for (std::size_t a = 0; a + 1 < n; ++a) d2d(a, a + 1);
    if (t.d2d == "ring" && n > 2) d2d(n - 1, 0);
  } else if (t.d2d != "none") {
    throw TopologyError("unknown D2D pattern '" + t.d2d + "'");
  }
  return topo;
}

std::filesystem::path resolve_output(const ExperimentConfig& config) {
  if (!config.output.empty()) return config.output;
  if (const char* env = std::getenv(kOutputEnv); env && *env) return env;
  return "results";
}

}  // namespace gaisnet
