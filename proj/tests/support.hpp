#pragma once

#include <random>
#include <string>
#include <vector>

#include "gaisnet/model.hpp"
#include "gaisnet/splitnet.hpp"

namespace gaisnet::testing {

inline std::vector<Sample> random_samples(const ModelConfig& c, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    Sample s{Mat(c.n_patches, c.patch_dim), static_cast<int>(rng() % static_cast<unsigned>(c.n_classes))};
    for (Eigen::Index k = 0; k < s.features.size(); ++k) s.features.data()[k] = g(rng);
    out.push_back(std::move(s));
  }
  return out;
}

inline void randomize_tunable(SplitModel& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.5);
  for (ParamD* p : m.tunable_params())
    for (Eigen::Index k = 0; k < p->value.size(); ++k) p->value.data()[k] = g(rng);
}

struct RandomSplitCase {
  ModelConfig config;
  ClientChain chain;
};

/// Up to 4 layers and 4 clients with random block proportions.
inline RandomSplitCase random_split_case(std::mt19937_64& rng) {
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  RandomSplitCase rc;
  ModelConfig& c = rc.config;
  c.n_layers = pick(1, 4);
  c.n_heads = pick(1, 2);
  c.hidden = c.n_heads * pick(2, 4);
  c.n_patches = pick(1, 4);
  c.patch_dim = pick(2, 6);
  c.prompt_len = pick(0, 3);
  c.n_classes = pick(2, 4);
  c.mlp_ratio = 2.0;
  const int n_clients = pick(1, std::min(4, c.n_layers + 2));
  const int n_blocks = n_clients == 1 ? 1 : n_clients - 1;
  std::vector<double> w;
  for (int b = 0; b < n_blocks; ++b) w.push_back(std::uniform_real_distribution<double>(0.2, 2.0)(rng));
  std::vector<std::string> ids;
  for (int k = 0; k < n_clients; ++k) ids.push_back("c" + std::to_string(k));
  rc.chain = make_chain(ids, split_tunable(c, n_blocks, w));
  return rc;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return std::numeric_limits<double>::infinity();
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

inline double max_param_diff(SplitModel& a, SplitModel& b) {
  auto pa = a.all_params(), pb = b.all_params();
  double worst = 0;
  for (std::size_t k = 0; k < pa.size(); ++k) worst = std::max(worst, max_abs_diff(pa[k]->value, pb[k]->value));
  return worst;
}

}  // namespace gaisnet::testing
