#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "gaisnet/experiment.hpp"

namespace gaisnet {

int CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw std::runtime_error("csv: no column '" + name + "'");
  return static_cast<int>(it - header.begin());
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty csv");
  t.header = split_fields(line);
  int n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto row = split_fields(line);
    if (row.size() != t.header.size())
      throw std::runtime_error(fmt::format("{}:{}: expected {} fields, got {}", path.string(), n,
                                           t.header.size(), row.size()));
    t.rows.push_back(std::move(row));
  }
  return t;
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need two equal-length series");
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

namespace {

struct SweepPoint {
  double first = 0, end = 0;
  int seeds = 0;
};

// Seed-averaged first- and last-round accuracy per sweep value.
std::map<int, SweepPoint> sweep_table(const CsvTable& t) {
  const int c_seed = t.column("seed"), c_sweep = t.column("sweep"), c_round = t.column("round"),
            c_acc = t.column("accuracy");
  std::map<std::pair<int, std::string>, std::pair<int, double>> first, last;  // (sweep, seed) -> (round, acc)
  for (const auto& row : t.rows) {
    if (row[c_sweep].empty()) continue;
    const auto key = std::make_pair(std::stoi(row[c_sweep]), row[c_seed]);
    const int round = std::stoi(row[c_round]);
    const double acc = std::stod(row[c_acc]);
    if (!first.count(key) || round < first[key].first) first[key] = {round, acc};
    if (!last.count(key) || round > last[key].first) last[key] = {round, acc};
  }
  std::map<int, SweepPoint> out;
  for (const auto& [key, v] : first) {
    auto& p = out[key.first];
    p.first += v.second;
    p.end += last[key].second;
    ++p.seeds;
  }
  for (auto& [k, p] : out) {
    p.first /= p.seeds;
    p.end /= p.seeds;
  }
  return out;
}

std::string pct(double x) { return fmt::format("{:.2f}%", 100.0 * x); }

void emit_sweep(std::ostringstream& md, const std::filesystem::path& dir, const std::filesystem::path& out_csv,
                const std::string& title, const std::string& axis) {
  const auto table = sweep_table(read_csv(dir / "per_seed.csv"));
  std::ofstream csv(out_csv, std::ios::binary);
  csv << axis << ",n_seeds,first_accuracy_mean,end_accuracy_mean\n";
  md << "## " << title << "\n\n| " << axis << " | first round | final round |\n|---|---|---|\n";
  std::vector<double> x, y;
  for (const auto& [k, p] : table) {
    csv << fmt::format("{},{},{},{}\n", k, p.seeds, p.first, p.end);
    md << fmt::format("| {} | {} | {} |\n", k, pct(p.first), pct(p.end));
    x.push_back(k);
    y.push_back(p.end);
  }
  if (x.size() >= 2) md << fmt::format("\nSpearman rho (final accuracy vs {}): {:.3f}\n", axis, spearman(x, y));
  md << "\n";
}

}  // namespace

std::string build_report(const std::filesystem::path& out_dir) {
  std::ostringstream md;
  md << "# Experiment report\n\n";
  bool any = false;

  for (const char* id : {"E1", "E2", "E3"}) {
    const auto path = out_dir / id / "summary.csv";
    if (!std::filesystem::exists(path)) continue;
    any = true;
    const auto t = read_csv(path);
    md << "## " << id << "\n\n| arm | first round | final round | best | compute per epoch (FLOPs) |\n"
       << "|---|---|---|---|---|\n";
    for (const auto& row : t.rows)
      md << fmt::format("| {} | {} | {} | {} | {} |\n", row[t.column("arm")],
                        pct(std::stod(row[t.column("first_accuracy_mean")])),
                        pct(std::stod(row[t.column("end_accuracy_mean")])),
                        pct(std::stod(row[t.column("best_accuracy_mean")])), row[t.column("compute_per_epoch_mean")]);
    md << "\n";
  }
  if (std::filesystem::exists(out_dir / "E4" / "per_seed.csv")) {
    any = true;
    emit_sweep(md, out_dir / "E4", out_dir / "table_noniid.csv", "Accuracy vs classes per client",
               "classes_per_client");
  }
  if (std::filesystem::exists(out_dir / "E5" / "per_seed.csv")) {
    any = true;
    emit_sweep(md, out_dir / "E5", out_dir / "table_clusters.csv", "Accuracy vs cluster count", "clusters");
  }
  if (std::filesystem::exists(out_dir / "E6" / "per_seed.csv")) {
    any = true;
    const auto t = read_csv(out_dir / "E6" / "per_seed.csv");
    std::map<std::string, std::vector<double>> totals;
    std::vector<std::string> order;
    for (const auto& row : t.rows) {
      const auto& p = row[t.column("policy")];
      if (!totals.count(p)) order.push_back(p);
      totals[p].push_back(std::stod(row[t.column("total")]));
    }
    std::ofstream csv(out_dir / "table_schedule.csv", std::ios::binary);
    csv << "policy,n_seeds,total_mean,actions\n";
    std::map<std::string, std::string> actions;
    if (std::filesystem::exists(out_dir / "E6" / "action_table.csv")) {
      const auto a = read_csv(out_dir / "E6" / "action_table.csv");
      for (const auto& row : a.rows) {
        std::string s;
        for (std::size_t k = 2; k + 1 < row.size(); ++k) s += (k > 2 ? " " : "") + row[k];
        actions[row[1]] = s;
      }
    }
    md << "## Scheduling\n\n";
    if (actions.count("request")) md << "Requests: " << actions["request"] << "\n\n";
    md << "| policy | mean total | actions (first seed) |\n|---|---|---|\n";
    for (const auto& p : order) {
      const auto& v = totals[p];
      const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      csv << fmt::format("{},{},{},{}\n", p, v.size(), m, actions[p]);
      md << fmt::format("| {} | {} | {} |\n", p, m, actions[p]);
    }
    md << "\n";
  }
  if (!any) throw std::runtime_error("no experiment outputs under " + out_dir.string());
  const std::string text = md.str();
  std::ofstream(out_dir / "report.md", std::ios::binary) << text;
  return text;
}

}  // namespace gaisnet
