#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "gaisnet/experiment.hpp"
#include "gaisnet/planner.hpp"

namespace gaisnet {

namespace {

// splitmix64 over (seed, stream): independent RNG streams per pipeline stage.
std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed * 0x9e3779b97f4a7c15ULL + stream * 0xbf58476d1ce4e5b9ULL + 0x94d049bb133111ebULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum Stream : std::uint64_t { kCloud = 1, kEdge, kPool, kShuffle, kInit, kRs };

std::string num(double x) { return fmt::format("{}", x); }

std::string seed_list(const std::vector<std::uint64_t>& seeds) {
  std::string s;
  for (std::size_t i = 0; i < seeds.size(); ++i) s += (i ? ";" : "") + std::to_string(seeds[i]);
  return s;
}

void write_file(const std::filesystem::path& path, const std::string& text, RunSummary& summary) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  summary.files.push_back(path);
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first
// failure in index order.
template <typename Fn>
void for_each_seed(std::size_t n, int jobs, Fn fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---- fine-tuning experiments (E1..E5) ----

struct SeedData {
  std::vector<Sample> cloud;
  std::vector<Sample> pool;        // client pool
  std::vector<Sample> validation;  // held at the edge, covers every class
};

SeedData make_data(const ExperimentConfig& c, std::uint64_t seed) {
  SeedData d;
  const int n_classes = c.model.n_classes;
  d.cloud = generate(mix(seed, kCloud), n_classes, c.data.cloud_per_class, c.data.generator).samples;
  const auto edge = generate(mix(seed, kEdge), n_classes, c.data.edge_per_class, c.data.generator);
  const int pool_per_class = client_pool_per_class(c.data.edge_per_class);
  std::vector<int> taken(static_cast<std::size_t>(n_classes), 0);
  for (const Sample& s : edge.samples) {
    int& t = taken[static_cast<std::size_t>(s.label)];
    (t++ < pool_per_class ? d.pool : d.validation).push_back(s);
  }
  return d;
}

struct RoundRow {
  std::string arm;
  int sweep = 0;
  bool has_sweep = false;
  int round = 0;
  double accuracy = 0;
  double train_loss = 0;
  RoundMetrics metrics;
};

struct Setting {
  std::string arm;
  std::optional<int> sweep;
  int clusters = 1;
  int classes_per_client = 1;
  bool backbone_trainable = false;
  bool pretrained = true;
};

std::vector<Setting> settings_for(const ExperimentConfig& c) {
  const int k = c.finetune.clusters;
  const int cpc = c.data.classes_per_client;
  switch (c.id) {
    case ExperimentId::E1:
      return {{"pretrained", {}, k, cpc, false, true}, {"scratch", {}, k, cpc, true, false}};
    case ExperimentId::E2:
      return {{"finetune", {}, k, cpc, false, true}};
    case ExperimentId::E3:
      return {{"parameter_efficient", {}, k, cpc, false, true}, {"full", {}, k, cpc, true, true}};
    case ExperimentId::E4: {
      std::vector<Setting> out;
      for (int s : c.sweep) out.push_back({"finetune", s, k, s, false, true});
      return out;
    }
    case ExperimentId::E5: {
      std::vector<Setting> out;
      for (int s : c.sweep) out.push_back({"finetune", s, s, cpc, false, true});
      return out;
    }
    case ExperimentId::E6:
      break;
  }
  return {};
}

struct Plan {
  Setting setting;
  std::vector<ClusterSpec> specs;
  std::vector<ClientChain> chains;
};

std::vector<Plan> plan_settings(const ExperimentConfig& c, const Topology& topo) {
  std::vector<Plan> plans;
  for (const Setting& s : settings_for(c)) {
    Plan p{s, {}, {}};
    ClusterRequest req;
    req.role = ClusterRole::finetune;
    req.k_clusters = s.clusters;
    req.chain_len = c.finetune.chain_len;
    req.edge_id = c.topology.edge_id;
    req.allow_edge_member = c.finetune.allow_edge_member;
    p.specs = form_clusters(topo, req);
    for (const auto& spec : p.specs) p.chains.push_back(plan_chain(topo, c.model, spec));
    plans.push_back(std::move(p));
  }
  return plans;
}

nlohmann::json plan_json(const std::vector<Plan>& plans) {
  nlohmann::json out = nlohmann::json::array();
  for (const Plan& p : plans) {
    nlohmann::json clusters = nlohmann::json::array();
    for (std::size_t j = 0; j < p.specs.size(); ++j) {
      nlohmann::json blocks = nlohmann::json::array();
      for (const auto& m : p.chains[j].members) {
        nlohmann::json modules = nlohmann::json::array();
        if (m.block) {
          for (int i = m.block->first_layer; i <= m.block->last_layer(); ++i) modules.push_back("P" + std::to_string(i));
          if (m.block->has_head) modules.push_back("Head");
        }
        blocks.push_back({{"client", m.client}, {"modules", modules}});
      }
      auto spec = to_json(p.specs[j]);
      spec["blocks"] = blocks;
      clusters.push_back(spec);
    }
    nlohmann::json entry = {{"arm", p.setting.arm}, {"clusters", clusters}};
    if (p.setting.sweep) entry["sweep"] = *p.setting.sweep;
    out.push_back(entry);
  }
  return out;
}

std::vector<RoundRow> run_seed(const ExperimentConfig& c, const std::vector<Plan>& plans, const Topology& topo,
                               std::uint64_t seed) {
  const SeedData data = make_data(c, seed);
  const SyntheticDataset pool{data.pool, c.model.n_classes, mix(seed, kPool)};
  PretrainOptions pre = c.pretrain;
  pre.seed = mix(seed, kInit);
  std::optional<SplitModel> pretrained;

  RoundOptions opt;
  opt.local_epochs = c.finetune.local_epochs;
  opt.lr = c.finetune.lr;
  opt.batch_size = c.finetune.batch_size;
  opt.weighting = c.finetune.weighting;
  opt.sensing_seconds_per_sample = c.finetune.sensing_seconds_per_sample;
  opt.edge_id = c.topology.edge_id;
  opt.accounting.count_gradient_feedback = c.finetune.count_gradient_feedback;
  opt.shuffle_seed = mix(seed, kShuffle);

  std::vector<RoundRow> rows;
  for (const Plan& p : plans) {
    const Setting& s = p.setting;
    SplitModel model;
    if (s.pretrained) {
      if (!pretrained) pretrained = pretrain_backbone(c.model, data.cloud, pre);
      model = *pretrained;
    } else {
      model = init_model(c.model, pre.seed);
    }
    model.backbone.set_frozen(!s.backbone_trainable);

    PartitionSpec ps;
    ps.n_clients = s.clusters;
    ps.classes_per_client = s.classes_per_client;
    ps.samples_per_client = c.data.samples_per_client;
    const auto parts = partition_noniid(pool, ps);
    std::vector<FinetuneCluster> clusters;
    for (std::size_t j = 0; j < p.chains.size(); ++j)
      clusters.push_back({static_cast<int>(j), p.chains[j], parts[j].train});

    EdgeModelState edge{c.topology.edge_id, std::move(model), 0};
    for (int r = 1; r <= c.finetune.rounds; ++r) {
      RoundOutcome out = finetune_round(edge, clusters, opt, topo, data.validation);
      RoundRow row;
      row.arm = s.arm;
      row.has_sweep = s.sweep.has_value();
      row.sweep = s.sweep.value_or(0);
      row.round = r;
      row.accuracy = out.metrics.model_performance;
      row.train_loss = out.train_loss;
      row.metrics = std::move(out.metrics);
      rows.push_back(std::move(row));
      edge = std::move(out.edge);
    }
  }
  return rows;
}

const char* kRoundHeader =
    "seed,config_hash,experiment,arm,sweep,round,accuracy,train_loss,latency_s,compute_flops,"
    "compute_per_epoch_flops,energy_j,comm_cs_bytes,comm_d2d_bytes,comm_bytes,channel_s,peak_memory_bytes\n";

const char* kSummaryHeader =
    "seeds,config_hash,experiment,arm,sweep,n_seeds,rounds,first_accuracy_mean,end_accuracy_mean,"
    "end_accuracy_std,best_accuracy_mean,compute_per_epoch_mean,latency_per_round_mean,"
    "energy_per_round_mean,comm_per_round_mean,peak_memory_max\n";

RunSummary run_finetune(const ExperimentConfig& c, const std::filesystem::path& dir) {
  const std::string hash = config_hash(c);
  const Topology topo = build_topology(c.topology, c.data);
  const std::vector<Plan> plans = plan_settings(c, topo);

  std::vector<std::vector<RoundRow>> results(c.seeds.size());
  for_each_seed(c.seeds.size(), c.jobs, [&](std::size_t i) { results[i] = run_seed(c, plans, topo, c.seeds[i]); });

  RunSummary summary{dir, {}};
  const double epochs = c.finetune.local_epochs;
  std::ostringstream per_seed;
  per_seed << kRoundHeader;
  for (std::size_t i = 0; i < c.seeds.size(); ++i)
    for (const RoundRow& r : results[i]) {
      const RoundMetrics& m = r.metrics;
      per_seed << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", c.seeds[i], hash,
                              to_string(c.id), r.arm, r.has_sweep ? std::to_string(r.sweep) : "", r.round,
                              num(r.accuracy), num(r.train_loss), num(m.latency), num(m.compute_cost),
                              num(m.compute_cost / epochs), num(m.energy), num(m.comm_bytes_cs),
                              num(m.comm_bytes_d2d), num(m.comm_overhead()), num(m.channel_seconds),
                              num(m.max_peak_memory()));
    }
  write_file(dir / "per_seed.csv", per_seed.str(), summary);

  std::ostringstream agg;
  agg << kSummaryHeader;
  for (const Plan& p : plans) {
    std::vector<double> first, end, best, compute, latency, energy, comm;
    double peak = 0;
    for (const auto& rows : results) {
      std::vector<const RoundRow*> mine;
      for (const RoundRow& r : rows)
        if (r.arm == p.setting.arm && r.has_sweep == p.setting.sweep.has_value() &&
            r.sweep == p.setting.sweep.value_or(0))
          mine.push_back(&r);
      if (mine.empty()) continue;
      first.push_back(mine.front()->accuracy);
      end.push_back(mine.back()->accuracy);
      double b = 0;
      for (const RoundRow* r : mine) {
        b = std::max(b, r->accuracy);
        compute.push_back(r->metrics.compute_cost / epochs);
        latency.push_back(r->metrics.latency);
        energy.push_back(r->metrics.energy);
        comm.push_back(r->metrics.comm_overhead());
        peak = std::max(peak, r->metrics.max_peak_memory());
      }
      best.push_back(b);
    }
    agg << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", seed_list(c.seeds), hash,
                       to_string(c.id), p.setting.arm, p.setting.sweep ? std::to_string(*p.setting.sweep) : "",
                       first.size(), c.finetune.rounds, num(mean(first)), num(mean(end)), num(stddev(end)),
                       num(mean(best)), num(mean(compute)), num(mean(latency)), num(mean(energy)), num(mean(comm)),
                       num(peak));
  }
  write_file(dir / "summary.csv", agg.str(), summary);
  write_file(dir / "plan.json", plan_json(plans).dump(2) + "\n", summary);
  return summary;
}

// ---- scheduling (E6) ----

struct PolicyRun {
  std::string policy;
  double total = 0;
  int episodes = 1;
  double std_error = 0;
  sched::Episode sample;  // the episode shown in traces
};

std::vector<PolicyRun> run_schedule_seed(const ExperimentConfig& c, const std::vector<int>& stream,
                                         std::uint64_t seed) {
  const sched::Economy& eco = c.schedule.economy;
  std::vector<PolicyRun> out;

  const sched::Plan plan = sched::policy_mlcp(stream, eco);
  out.push_back({"MLCP", plan.total, 1, 0, sched::run_episode(sched::replay(plan.actions), stream, eco)});

  auto msip = [&](const sched::ScheduleState& s) { return sched::policy_msip(s, eco); };
  auto ep = sched::run_episode(msip, stream, eco);
  out.push_back({"MSIP", ep.total(), 1, 0, ep});

  std::mt19937_64 rng(mix(seed, kRs));
  auto rs = [&](const sched::ScheduleState& s) { return sched::policy_rs(s, eco, rng); };
  PolicyRun r{"RS", 0, c.schedule.rs_episodes, 0, {}};
  std::vector<double> totals;
  totals.reserve(static_cast<std::size_t>(c.schedule.rs_episodes));
  for (int e = 0; e < c.schedule.rs_episodes; ++e) {
    auto episode = sched::run_episode(rs, stream, eco);
    if (e == 0) r.sample = episode;
    totals.push_back(episode.total());
  }
  r.total = mean(totals);
  r.std_error = stddev(totals) / std::sqrt(static_cast<double>(totals.size()));
  out.push_back(std::move(r));

  if (!c.schedule.request_probs.empty()) {
    const sched::DistributionalMlcp policy(c.schedule.request_probs, static_cast<int>(stream.size()), eco);
    auto dist = sched::run_episode(std::cref(policy), stream, eco);
    out.push_back({"MLCP_distributional", dist.total(), 1, 0, dist});
  }
  return out;
}

nlohmann::json episode_json(const sched::Episode& e) {
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& r : e.rounds)
    rounds.push_back({{"round", r.round},
                      {"request", std::string(1, static_cast<char>('A' + r.request))},
                      {"action", sched::action_label(r.action, r.request)},
                      {"reward", r.reward},
                      {"cumulative", r.cumulative}});
  return rounds;
}

RunSummary run_schedule(const ExperimentConfig& c, const std::filesystem::path& dir) {
  const std::string hash = config_hash(c);
  const std::vector<int> stream = sched::parse_stream(c.schedule.stream);
  std::vector<std::vector<PolicyRun>> results(c.seeds.size());
  for_each_seed(c.seeds.size(), c.jobs,
                [&](std::size_t i) { results[i] = run_schedule_seed(c, stream, c.seeds[i]); });

  RunSummary summary{dir, {}};
  std::ostringstream per_seed;
  per_seed << "seed,config_hash,experiment,policy,total,episodes,std_error\n";
  for (std::size_t i = 0; i < c.seeds.size(); ++i)
    for (const PolicyRun& r : results[i])
      per_seed << fmt::format("{},{},E6,{},{},{},{}\n", c.seeds[i], hash, r.policy, num(r.total), r.episodes,
                              num(r.std_error));
  write_file(dir / "per_seed.csv", per_seed.str(), summary);

  const double rs_exact = sched::rs_expected_total(stream, c.schedule.economy);
  std::ostringstream agg;
  agg << "seeds,config_hash,experiment,policy,n_seeds,total_mean,total_std,expected_total\n";
  for (std::size_t k = 0; k < results.front().size(); ++k) {
    std::vector<double> totals;
    for (const auto& runs : results) totals.push_back(runs[k].total);
    const std::string& policy = results.front()[k].policy;
    const double expected = policy == "RS" ? rs_exact : results.front()[k].total;
    agg << fmt::format("{},{},E6,{},{},{},{},{}\n", seed_list(c.seeds), hash, policy, totals.size(),
                       num(mean(totals)), num(stddev(totals)), num(expected));
  }
  write_file(dir / "summary.csv", agg.str(), summary);

  // Cumulative-profit traces: deterministic policies once, RS per seed.
  std::ostringstream trace;
  trace << "seed,config_hash,policy,round,request,action,reward,cumulative\n";
  for (std::size_t i = 0; i < c.seeds.size(); ++i)
    for (const PolicyRun& r : results[i]) {
      if (i > 0 && r.policy != "RS") continue;
      const std::string seed = r.policy == "RS" ? std::to_string(c.seeds[i]) : seed_list(c.seeds);
      sched::write_trace_csv(trace, r.sample, fmt::format("{},{},{},", seed, hash, r.policy), false);
    }
  write_file(dir / "profit_trace.csv", trace.str(), summary);

  // Action table: one row per policy, one column per round.
  std::ostringstream table;
  table << "config_hash,policy";
  for (std::size_t t = 1; t <= stream.size(); ++t) table << ",round_" << t;
  table << ",total\n";
  table << hash << ",request";
  for (int r : stream) table << ',' << static_cast<char>('A' + r);
  table << ",\n";
  for (const PolicyRun& r : results.front()) {
    table << hash << ',' << r.policy;
    for (const auto& rec : r.sample.rounds)
      table << ',' << sched::action_label(rec.action, rec.request) << '/' << num(rec.reward);
    table << ',' << num(r.sample.total()) << '\n';
  }
  write_file(dir / "action_table.csv", table.str(), summary);

  nlohmann::json traces = {{"config_hash", hash},
                           {"stream", sched::stream_string(stream)},
                           {"rs_expected_total", rs_exact},
                           {"policies", nlohmann::json::object()}};
  for (const PolicyRun& r : results.front())
    traces["policies"][r.policy] = {{"total", r.sample.total()}, {"rounds", episode_json(r.sample)}};
  write_file(dir / "traces.json", traces.dump(2) + "\n", summary);
  return summary;
}

}  // namespace

RunSummary run_experiment(const ExperimentConfig& input) {
  ExperimentConfig config = input;
  config.data.generator.n_patches = config.model.n_patches;
  config.data.generator.patch_dim = config.model.patch_dim;
  if (auto diags = validate(config); !diags.empty()) throw ConfigError(std::move(diags));
  const auto dir = resolve_output(config) / to_string(config.id);
  std::filesystem::create_directories(dir);
  RunSummary summary = config.id == ExperimentId::E6 ? run_schedule(config, dir) : run_finetune(config, dir);
  auto resolved = to_json(config);
  resolved.erase("output");
  resolved.erase("jobs");
  resolved["config_hash"] = config_hash(config);
  write_file(dir / "config.json", resolved.dump(2) + "\n", summary);
  return summary;
}

}  // namespace gaisnet
