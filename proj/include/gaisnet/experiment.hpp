#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gaisnet/data.hpp"
#include "gaisnet/federation.hpp"
#include "gaisnet/model.hpp"
#include "gaisnet/scheduler.hpp"
#include "gaisnet/simnet.hpp"

namespace gaisnet {

/// E1 pre-training, E2 fine-tuning, E3 frozen vs full, E4 non-IID,
/// E5 cluster count, E6 scheduling.
enum class ExperimentId { E1, E2, E3, E4, E5, E6 };

const char* to_string(ExperimentId id);
std::optional<ExperimentId> parse_experiment_id(const std::string& text);

/// Invalid configuration; `diagnostics` holds one "field.path: message" per violation.
struct ConfigError : std::runtime_error {
  explicit ConfigError(std::vector<std::string> diagnostics);
  std::vector<std::string> diagnostics;
};

struct DataConfig {
  GeneratorConfig generator;
  int cloud_per_class = 200;  // pre-training split, disjoint seed stream
  int edge_per_class = 100;   // edge pool, split 4:1 into client pool and edge validation
  int classes_per_client = 5;
  int samples_per_client = 20;
};

struct FinetuneConfig {
  int rounds = 10;
  int local_epochs = 1;
  double lr = 1e-3;
  int batch_size = 10;
  Weighting weighting = Weighting::uniform;
  int clusters = 2;
  int chain_len = 3;
  bool allow_edge_member = false;
  double sensing_seconds_per_sample = 1e-3;
  bool count_gradient_feedback = false;
};

/// Client nodes generated on a uniform pattern when no explicit list is given.
struct TopologyConfig {
  std::string edge_id = "edge";
  std::string cloud_id = "cloud";
  std::vector<Node> nodes;  // explicit; overrides the generated layout when non-empty
  std::vector<Link> links;
  int n_clients = 18;
  std::vector<double> client_compute = {1e9, 2e9, 3e9};  // cycled over clients
  std::string d2d = "complete";                          // complete | ring | line | none
  double d2d_bandwidth = 2e7;
  double cs_bandwidth = 5e7;
  double d2d_energy_per_bit = 1e-8;
  double cs_energy_per_bit = 5e-8;
  double client_power_compute = 2.0;
  double client_power_tx = 0.5;
  double client_memory = 4e9;
  double edge_compute = 1e11;
  double edge_power_compute = 100.0;
  double edge_power_tx = 10.0;
  double edge_memory = 6.4e10;
};

struct ScheduleConfig {
  std::string stream = "AABCCCCCCC";
  sched::Economy economy;
  int rs_episodes = 100000;
  std::vector<double> request_probs;  // non-empty enables the distributional MLCP row
};

struct ExperimentConfig {
  ExperimentId id = ExperimentId::E2;
  std::string name;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string output;  // empty: environment default
  int jobs = 1;
  ModelConfig model{.n_layers = 4, .hidden = 16, .n_heads = 2, .n_classes = 5};
  DataConfig data;
  PretrainOptions pretrain;  // seed is overridden per run
  FinetuneConfig finetune;
  TopologyConfig topology;
  ScheduleConfig schedule;
  std::vector<int> sweep;  // E4: classes_per_client values, E5: cluster counts
};

/// Every violated invariant as "field.path: message". Empty when valid.
std::vector<std::string> validate(const ExperimentConfig& config);

/// Parses YAML text. Throws ConfigError with line context on syntax errors and
/// with every violated invariant otherwise.
ExperimentConfig parse_config(const std::string& yaml_text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Diagnostics for a config file; never throws on malformed content.
std::vector<std::string> validate_config(const std::filesystem::path& path);

nlohmann::json to_json(const ExperimentConfig& config);

/// FNV-1a of the canonical JSON form, excluding seeds, output location and jobs,
/// so rows of one seed compare across runs with different seed lists.
std::string config_hash(const ExperimentConfig& config);

Topology build_topology(const TopologyConfig& config, const DataConfig& data);

/// Per-class samples left for clients after the 4:1 pool/validation split.
int client_pool_per_class(int edge_per_class);

/// Environment variable naming the default output directory.
inline constexpr const char* kOutputEnv = "GAISNET_OUT_DIR";
std::filesystem::path resolve_output(const ExperimentConfig& config);

struct RunSummary {
  std::filesystem::path directory;
  std::vector<std::filesystem::path> files;
};

/// Runs every seed of the experiment (up to `jobs` at once) and writes the
/// per-seed CSV, the summary CSV and, for E6, the trace/table files. Output
/// bytes depend only on the config. Planner infeasibility propagates as
/// InfeasibleError.
RunSummary run_experiment(const ExperimentConfig& config);

/// Re-aggregates per-seed CSVs under `out_dir` into tables mirroring the
/// non-IID, cluster-count and scheduling tables. Returns the markdown text
/// and writes it (plus CSV versions) next to the inputs.
std::string build_report(const std::filesystem::path& out_dir);

/// Minimal CSV table: header plus rows of raw fields (no quoting).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  int column(const std::string& name) const;
};
CsvTable read_csv(const std::filesystem::path& path);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace gaisnet
