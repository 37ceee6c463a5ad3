#include <cstdlib>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include <gtest/gtest.h>

#include "gaisnet/experiment.hpp"
#include "gaisnet/planner.hpp"

using namespace gaisnet;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = GAISNET_CONFIG_DIR;

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gaisnet_harness_" + std::to_string(getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_temp(const std::string& name, const std::string& text) {
  const fs::path dir = fs::temp_directory_path() / ("gaisnet_harness_" + std::to_string(getpid())) / "cfg";
  fs::create_directories(dir);
  const fs::path p = dir / name;
  std::ofstream(p) << text;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool mentions(const std::vector<std::string>& diags, const std::string& needle) {
  for (const auto& d : diags)
    if (d.find(needle) != std::string::npos) return true;
  return false;
}

std::vector<std::string> diagnostics_of(const std::string& yaml) {
  try {
    parse_config(yaml);
    return {};
  } catch (const ConfigError& e) {
    return e.diagnostics;
  }
}

// A small, fast fine-tuning config.
const char* kTiny = R"(experiment: E2
seeds: [1, 2]
model: {n_layers: 2, hidden: 8, n_heads: 1, n_classes: 3}
data: {cloud_per_class: 20, edge_per_class: 20, classes_per_client: 3, samples_per_client: 10}
pretrain: {epochs: 1}
finetune: {rounds: 2, clusters: 2, chain_len: 3, lr: 0.05}
topology: {n_clients: 6}
)";

}  // namespace

TEST(Config, ShippedConfigsAreValid) {
  for (const auto& entry : fs::directory_iterator(kConfigs)) {
    if (entry.path().extension() != ".yaml") continue;
    EXPECT_TRUE(validate_config(entry.path()).empty()) << entry.path();
  }
}

TEST(Config, MinimalDocumentTakesDefaults) {
  const ExperimentConfig c = parse_config("experiment: E6\n");
  EXPECT_EQ(c.id, ExperimentId::E6);
  EXPECT_EQ(c.seeds.size(), 5u);
  EXPECT_EQ(c.schedule.stream, "AABCCCCCCC");
  EXPECT_EQ(c.model.n_classes, 5);
  EXPECT_EQ(c.data.generator.patch_dim, c.model.patch_dim);
}

TEST(Config, NegativeBandwidthIsNamed) {
  auto d = diagnostics_of("experiment: E2\ntopology: {d2d_bandwidth: -1}\n");
  EXPECT_TRUE(mentions(d, "topology.d2d_bandwidth: must be positive"));
  d = diagnostics_of(R"(experiment: E2
topology:
  nodes:
    - {id: edge, kind: edge}
    - {id: a, kind: client, data_size: 8}
  links:
    - {kind: cs, a: a, b: edge, bandwidth: -5}
)");
  EXPECT_TRUE(mentions(d, "topology.links[0].bandwidth: must be positive"));
}

TEST(Config, ClassesPerClientAboveClassCountIsNamed) {
  const auto d = diagnostics_of("experiment: E2\nmodel: {n_classes: 4}\ndata: {classes_per_client: 6}\n");
  EXPECT_TRUE(mentions(d, "data.classes_per_client: 6 outside [1, model.n_classes = 4]"));
}

TEST(Config, UnknownExperimentId) {
  const auto d = diagnostics_of("experiment: E9\n");
  EXPECT_TRUE(mentions(d, "experiment: unknown experiment id 'E9'"));
  EXPECT_FALSE(parse_experiment_id("e1"));
  EXPECT_EQ(*parse_experiment_id("E4"), ExperimentId::E4);
}

TEST(Config, EveryViolationIsListed) {
  const auto d = diagnostics_of(
      "experiment: E2\nseeds: []\nmodel: {hidden: 10, n_heads: 3}\nfinetune: {rounds: 0, lr: -1}\n"
      "schedule: {stream: AXB}\n");
  EXPECT_TRUE(mentions(d, "seeds:"));
  EXPECT_TRUE(mentions(d, "model.n_heads: 3 does not divide model.hidden 10"));
  EXPECT_TRUE(mentions(d, "finetune.rounds"));
  EXPECT_TRUE(mentions(d, "finetune.lr"));
  EXPECT_TRUE(mentions(d, "schedule.stream"));
}

TEST(Config, TypeAndStructureErrorsCarryLines) {
  auto d = diagnostics_of("experiment: E2\nfinetune:\n  rounds: ten\n  colour: red\n");
  EXPECT_TRUE(mentions(d, "finetune.rounds: expected an integer, got 'ten' (line 3)"));
  EXPECT_TRUE(mentions(d, "finetune.colour: unknown field (line 4)"));
  d = diagnostics_of("experiment: E2\nfinetune: {rounds: 1}\nfinetune: {rounds: 2}\n");
  EXPECT_TRUE(mentions(d, "finetune: duplicate field (line 3)"));
  d = diagnostics_of("experiment: E2\nmodel: [1, 2]\n");
  EXPECT_TRUE(mentions(d, "model: expected a mapping"));
}

TEST(Config, MalformedInputNeverThrows) {
  const auto syntax = write_temp("syntax.yaml", "experiment: E2\nmodel: {hidden: 8\n  bad: [\n");
  std::vector<std::string> d;
  EXPECT_NO_THROW(d = validate_config(syntax));
  ASSERT_FALSE(d.empty());
  EXPECT_NE(d.front().find("line "), std::string::npos);

  EXPECT_FALSE(validate_config(temp_dir("none") / "missing.yaml").empty());
  EXPECT_FALSE(validate_config(write_temp("empty.yaml", "")).empty());
  EXPECT_FALSE(validate_config(write_temp("scalar.yaml", "42\n")).empty());
  EXPECT_FALSE(validate_config(write_temp("binary.yaml", std::string("\x01\xff\x00:", 4))).empty());
}

TEST(Config, PartitionFeasibilityAgainstPool) {
  // 5 clusters of 50 samples over 5 classes need 50 per class; the pool holds 16.
  const auto d = diagnostics_of(
      "experiment: E2\ndata: {edge_per_class: 20, samples_per_client: 50}\nfinetune: {clusters: 5}\n");
  EXPECT_TRUE(mentions(d, "data.edge_per_class"));
  EXPECT_EQ(client_pool_per_class(100), 80);
  EXPECT_EQ(client_pool_per_class(20), 16);
}

TEST(Config, SweepRules) {
  EXPECT_TRUE(mentions(diagnostics_of("experiment: E4\n"), "sweep: E4 needs a non-empty sweep"));
  EXPECT_TRUE(mentions(diagnostics_of("experiment: E4\nsweep: [1, 6]\n"), "sweep[1]"));
  EXPECT_TRUE(mentions(diagnostics_of("experiment: E2\nsweep: [1]\n"), "sweep: E2 takes no sweep"));
}

TEST(Config, HashIgnoresSeedsOutputAndJobs) {
  ExperimentConfig a = parse_config(kTiny);
  ExperimentConfig b = a;
  b.seeds = {9};
  b.output = "/elsewhere";
  b.jobs = 4;
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b.finetune.lr = 0.06;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(to_json(a)["finetune"]["rounds"], 2);
}

TEST(Config, OutputResolution) {
  ExperimentConfig c;
  c.output = "/x";
  EXPECT_EQ(resolve_output(c), fs::path("/x"));
  c.output.clear();
  setenv(kOutputEnv, "/from/env", 1);
  EXPECT_EQ(resolve_output(c), fs::path("/from/env"));
  unsetenv(kOutputEnv);
  EXPECT_EQ(resolve_output(c), fs::path("results"));
}

TEST(Topology, GeneratedPatterns) {
  TopologyConfig t;
  t.n_clients = 5;
  DataConfig d;
  d.samples_per_client = 10;
  Topology complete = build_topology(t, d);
  EXPECT_EQ(complete.clients().size(), 5u);
  EXPECT_EQ(complete.links().size(), 1u + 5u + 10u);  // edge-cloud, client CS, D2D pairs
  EXPECT_EQ(complete.node("c01").data_size, 8.0);
  EXPECT_EQ(complete.node("c02").compute_rate, 2e9);
  EXPECT_TRUE(complete.cs_linked("c05", "edge"));
  t.d2d = "line";
  EXPECT_EQ(build_topology(t, d).links().size(), 1u + 5u + 4u);
  t.d2d = "ring";
  EXPECT_EQ(build_topology(t, d).links().size(), 1u + 5u + 5u);
  t.d2d = "none";
  EXPECT_EQ(build_topology(t, d).links().size(), 1u + 5u);
  t.n_clients = 120;
  EXPECT_TRUE(build_topology(t, d).has_node("c007"));
}

TEST(Topology, ExplicitNodesAndLinks) {
  const ExperimentConfig c = parse_config(R"(experiment: E2
finetune: {clusters: 1, chain_len: 2}
topology:
  nodes:
    - {id: edge, kind: edge, compute_rate: 1.0e11}
    - {id: a, kind: client, data_size: 16}
    - {id: b, kind: client, compute_rate: 3.0e9}
  links:
    - {kind: cs, a: a, b: edge, bandwidth: 1.0e7}
    - {kind: cs, a: b, b: edge, bandwidth: 1.0e7}
    - {kind: d2d, a: a, b: b, bandwidth: 1.0e6}
)");
  const Topology t = build_topology(c.topology, c.data);
  EXPECT_EQ(t.node("b").compute_rate, 3e9);
  EXPECT_TRUE(t.d2d_linked("a", "b"));
  EXPECT_TRUE(mentions(diagnostics_of(R"(experiment: E2
topology:
  nodes: [{id: edge, kind: edge}, {id: edge, kind: client}]
  links: [{kind: d2d, a: edge, b: ghost}]
)"),
                       "duplicate node id 'edge'"));
}

TEST(Spearman, KnownValues) {
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3}, {10, 20, 30}), 1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3}, {3, 2, 1}), -1.0);
  // Ties take average ranks: rho = 4 / sqrt(5 * 4).
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {1, 1, 2, 2}), 0.894427190999916, 1e-12);
  EXPECT_EQ(spearman({1, 2, 3}, {5, 5, 5}), 0.0);
  EXPECT_THROW(spearman({1}, {1}), std::invalid_argument);
}

TEST(Csv, ReadsFieldsAndRejectsRaggedRows) {
  const auto p = write_temp("t.csv", "a,b,c\n1,,3\n4,5,\n");
  const CsvTable t = read_csv(p);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][1], "");
  EXPECT_EQ(t.rows[1][2], "");
  EXPECT_EQ(t.column("c"), 2);
  EXPECT_THROW(t.column("d"), std::runtime_error);
  EXPECT_THROW(read_csv(write_temp("bad.csv", "a,b\n1\n")), std::runtime_error);
}

TEST(Run, SchedulingOutputs) {
  ExperimentConfig c = load_config(kConfigs / "e6_scheduling.yaml");
  c.output = temp_dir("e6").string();
  c.schedule.rs_episodes = 500;
  const RunSummary s = run_experiment(c);
  const CsvTable summary = read_csv(s.directory / "summary.csv");
  for (const auto& row : summary.rows) {
    const std::string policy = row[summary.column("policy")];
    const double total = std::stod(row[summary.column("total_mean")]);
    if (policy == "MLCP") EXPECT_EQ(total, 650);
    if (policy == "MSIP") EXPECT_EQ(total, 500);
  }
  const CsvTable per_seed = read_csv(s.directory / "per_seed.csv");
  EXPECT_EQ(per_seed.rows.size(), c.seeds.size() * summary.rows.size());
  const std::string hash = config_hash(c);
  for (const auto& row : per_seed.rows) EXPECT_EQ(row[per_seed.column("config_hash")], hash);

  const CsvTable table = read_csv(s.directory / "action_table.csv");
  const auto& mlcp = table.rows[1];
  EXPECT_EQ(mlcp[1], "MLCP");
  EXPECT_EQ(mlcp[2], "A/50");
  EXPECT_EQ(mlcp[3], "c/-50");
  EXPECT_EQ(mlcp[11], "C/100");
  const auto traces = nlohmann::json::parse(slurp(s.directory / "traces.json"));
  EXPECT_EQ(traces["policies"]["MLCP"]["total"], 650);
  EXPECT_EQ(traces["policies"]["MSIP"]["rounds"].size(), 10u);
}

TEST(Run, FinetuneRowsCarrySeedAndHash) {
  ExperimentConfig c = parse_config(kTiny);
  c.output = temp_dir("tiny").string();
  const RunSummary s = run_experiment(c);
  const CsvTable t = read_csv(s.directory / "per_seed.csv");
  ASSERT_EQ(t.rows.size(), 2u * 2u);
  EXPECT_EQ(t.rows[0][t.column("seed")], "1");
  EXPECT_EQ(t.rows[3][t.column("seed")], "2");
  for (const auto& row : t.rows) {
    EXPECT_EQ(row[t.column("config_hash")], config_hash(c));
    const double acc = std::stod(row[t.column("accuracy")]);
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 1.0);
    EXPECT_GT(std::stod(row[t.column("latency_s")]), 0.0);
  }
  const CsvTable summary = read_csv(s.directory / "summary.csv");
  ASSERT_EQ(summary.rows.size(), 1u);
  EXPECT_EQ(summary.rows[0][summary.column("seeds")], "1;2");
  const auto plan = nlohmann::json::parse(slurp(s.directory / "plan.json"));
  EXPECT_EQ(plan[0]["clusters"].size(), 2u);
}

TEST(Run, ByteIdenticalAcrossRunsAndJobCounts) {
  ExperimentConfig c = parse_config(kTiny);
  c.output = temp_dir("det1").string();
  const RunSummary a = run_experiment(c);
  c.output = temp_dir("det2").string();
  c.jobs = 2;
  const RunSummary b = run_experiment(c);
  ASSERT_EQ(a.files.size(), b.files.size());
  for (std::size_t i = 0; i < a.files.size(); ++i)
    EXPECT_EQ(slurp(a.files[i]), slurp(b.files[i])) << a.files[i].filename();
}

TEST(Run, InfeasibleTopologySurfacesPlannerError) {
  ExperimentConfig c = parse_config(kTiny);
  c.topology.d2d = "none";
  c.output = temp_dir("infeasible").string();
  try {
    run_experiment(c);
    FAIL() << "expected InfeasibleError";
  } catch (const InfeasibleError& e) {
    EXPECT_NE(std::string(e.what()).find("cluster 1 of 2 infeasible"), std::string::npos) << e.what();
  }
}

TEST(Report, AggregatesSweepsAndSchedule) {
  const fs::path out = temp_dir("report");
  ExperimentConfig e4 = parse_config(R"(experiment: E4
seeds: [1, 2]
model: {n_layers: 2, hidden: 8, n_heads: 1, n_classes: 3}
data: {cloud_per_class: 20, edge_per_class: 20, samples_per_client: 6}
pretrain: {epochs: 1}
finetune: {rounds: 2, clusters: 1, chain_len: 2, lr: 0.05}
topology: {n_clients: 3}
sweep: [1, 2, 3]
)");
  e4.output = out.string();
  run_experiment(e4);
  ExperimentConfig e6 = parse_config("experiment: E6\nseeds: [1]\nschedule: {rs_episodes: 10}\n");
  e6.output = out.string();
  run_experiment(e6);

  const std::string md = build_report(out);
  EXPECT_NE(md.find("classes_per_client"), std::string::npos);
  EXPECT_NE(md.find("| MLCP | 650 |"), std::string::npos);
  EXPECT_NE(md.find("| MSIP | 500 |"), std::string::npos);
  EXPECT_TRUE(fs::exists(out / "report.md"));
  const CsvTable t = read_csv(out / "table_noniid.csv");
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_EQ(t.rows[0][t.column("n_seeds")], "2");
  EXPECT_THROW(build_report(temp_dir("empty")), std::runtime_error);
}

TEST(Cli, ExitCodes) {
  // 0 ok, 1 config or usage error, 2 infeasible plan.
  const std::string cli = GAISNET_CLI;
  auto code = [&](const std::string& args) {
    const int status = std::system((cli + " " + args + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(status);
  };
  EXPECT_EQ(code("validate --config " + (kConfigs / "e6_scheduling.yaml").string()), 0);
  EXPECT_EQ(code("validate --config " + write_temp("bad.yaml", "experiment: E7\n").string()), 1);
  EXPECT_EQ(code("run --config " + write_temp("bad2.yaml", "experiment: E7\n").string()), 1);
  EXPECT_EQ(code("bogus"), 1);
  const fs::path out = temp_dir("cli");
  std::string text = kTiny;
  text.replace(text.find("topology: {n_clients: 6}"), 24, "topology: {n_clients: 6, d2d: none}");
  const auto infeasible = write_temp("inf.yaml", text);
  EXPECT_EQ(code("run --config " + infeasible.string() + " --out " + out.string()), 2);
  EXPECT_EQ(code("run --config " + (kConfigs / "e6_scheduling.yaml").string() + " --seed 3 --out " + out.string()),
            0);
  const CsvTable t = read_csv(out / "E6" / "per_seed.csv");
  for (const auto& row : t.rows) EXPECT_EQ(row[t.column("seed")], "3");
  EXPECT_EQ(code("report --out " + out.string()), 0);
}
