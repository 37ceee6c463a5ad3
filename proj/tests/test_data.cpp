#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "gaisnet/checkpoint.hpp"
#include "gaisnet/data.hpp"

using namespace gaisnet;

namespace {

Mat pooled(const Sample& s) { return s.features.colwise().mean(); }

// Softmax regression on mean-pooled raw patch features.
double linear_probe_accuracy(const std::vector<Sample>& train, const std::vector<Sample>& test, int classes) {
  const Eigen::Index dim = train.front().features.cols();
  Mat w = Mat::Zero(dim, classes), b = Mat::Zero(1, classes);
  for (int epoch = 0; epoch < 200; ++epoch) {
    Mat gw = Mat::Zero(dim, classes), gb = Mat::Zero(1, classes);
    for (const Sample& s : train) {
      Mat x = pooled(s);
      Mat d;
      cross_entropy(Mat(x * w + b), s.label, &d);
      gw += x.transpose() * d;
      gb += d;
    }
    w -= 0.5 * gw / static_cast<double>(train.size());
    b -= 0.5 * gb / static_cast<double>(train.size());
  }
  int correct = 0;
  for (const Sample& s : test) correct += predict_class(Mat(pooled(s) * w + b)) == s.label;
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace

TEST(Generate, DeterministicAndLabelled) {
  SyntheticDataset a = generate(5, 5, 20), b = generate(5, 5, 20), c = generate(6, 5, 20);
  ASSERT_EQ(a.samples.size(), 100u);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(a.samples[i].features, b.samples[i].features);
    EXPECT_EQ(a.samples[i].label, b.samples[i].label);
    EXPECT_GE(a.samples[i].label, 0);
    EXPECT_LT(a.samples[i].label, 5);
  }
  EXPECT_NE(a.samples[0].features, c.samples[0].features);
  EXPECT_TRUE(generate(1, 3, 0).samples.empty());
  EXPECT_THROW(generate(1, 1, 10), std::invalid_argument);
}

TEST(Generate, LinearProbeSeparatesDefaultSpread) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SyntheticDataset train = generate(seed, 5, 100), test = generate(seed + 100, 5, 100);
    EXPECT_GT(linear_probe_accuracy(train.samples, test.samples, 5), 0.9) << "seed " << seed;
  }
}

TEST(Partition, RoundRobinEqualShares) {
  SyntheticDataset ds = generate(3, 5, 40);
  PartitionSpec spec{5, 2, 20};
  auto clients = partition_noniid(ds, spec);
  ASSERT_EQ(clients.size(), 5u);
  std::set<const double*> seen;
  std::set<std::vector<double>> values;
  for (int j = 0; j < 5; ++j) {
    const auto& c = clients[static_cast<std::size_t>(j)];
    EXPECT_EQ(c.classes, (std::vector<int>{(2 * j) % 5, (2 * j + 1) % 5}));
    EXPECT_EQ(c.train.size(), 16u);
    EXPECT_EQ(c.validation.size(), 4u);
    std::set<int> labels;
    for (const auto* part : {&c.train, &c.validation})
      for (const auto& s : *part) {
        labels.insert(s.label);
        values.insert(std::vector<double>(s.features.data(), s.features.data() + s.features.size()));
      }
    EXPECT_EQ(labels, std::set<int>(c.classes.begin(), c.classes.end()));
  }
  EXPECT_EQ(values.size(), 100u);  // no sample handed out twice
}

TEST(Partition, SingleLabelAndIid) {
  SyntheticDataset ds = generate(4, 5, 30);
  for (const auto& c : partition_noniid(ds, {5, 1, 10})) {
    std::set<int> labels;
    for (const auto& s : c.train) labels.insert(s.label);
    EXPECT_EQ(labels.size(), 1u);
  }
  for (const auto& c : partition_noniid(ds, {2, 5, 25})) EXPECT_EQ(c.classes.size(), 5u);
}

TEST(Partition, CoverageByEnumeration) {
  for (int classes = 2; classes <= 6; ++classes)
    for (int cpc = 1; cpc <= classes; ++cpc)
      for (int n = 1; n <= 6; ++n) {
        SyntheticDataset ds = generate(9, classes, 60);
        auto clients = partition_noniid(ds, {n, cpc, cpc * 2});
        std::set<int> covered;
        for (const auto& c : clients) covered.insert(c.classes.begin(), c.classes.end());
        if (n * cpc >= classes) EXPECT_EQ(static_cast<int>(covered.size()), classes);
      }
}

TEST(Partition, Infeasible) {
  SyntheticDataset ds = generate(1, 3, 4);
  EXPECT_THROW(partition_noniid(ds, {3, 4, 8}), std::invalid_argument);
  EXPECT_THROW(partition_noniid(ds, {3, 1, 10}), std::invalid_argument);
  EXPECT_THROW(partition_noniid(ds, {0, 1, 1}), std::invalid_argument);
}

TEST(Pretrain, ZeroEpochsIsRandomFrozenBackbone) {
  ModelConfig c;
  SyntheticDataset ds = generate(1, 3, 10);
  PretrainOptions opt;
  opt.seed = 4;
  SplitModel m = pretrain_backbone(c, ds.samples, opt);
  EXPECT_EQ(backbone_hash(m.backbone), backbone_hash(init_model(c, 4).backbone));
  EXPECT_TRUE(m.backbone.all_frozen());
}

TEST(Pretrain, TrainsThenFreezes) {
  ModelConfig c;
  c.n_classes = 3;
  SyntheticDataset ds = generate(2, 3, 20);
  PretrainOptions opt;
  opt.epochs = 2;
  opt.seed = 4;
  SplitModel m = pretrain_backbone(c, ds.samples, opt);
  EXPECT_TRUE(m.backbone.all_frozen());
  EXPECT_NE(backbone_hash(m.backbone), backbone_hash(init_model(c, 4).backbone));
  EXPECT_TRUE(m.head.weight.value.isZero());
  const auto hash = backbone_hash(m.backbone);
  backward_step(m, ds.samples, 0.1);
  EXPECT_EQ(backbone_hash(m.backbone), hash);
}

TEST(Cache, BinaryRoundTrip) {
  GeneratorConfig gen;
  SyntheticDataset ds = generate(8, 4, 5, gen);
  const auto dir = std::filesystem::temp_directory_path();
  const auto path = dataset_cache_path(dir, 8, 4, 5, gen);
  save_dataset(ds, path);
  SyntheticDataset back = load_dataset(path);
  EXPECT_EQ(back.seed, 8u);
  EXPECT_EQ(back.n_classes, 4);
  ASSERT_EQ(back.samples.size(), ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    EXPECT_EQ(back.samples[i].features, ds.samples[i].features);
    EXPECT_EQ(back.samples[i].label, ds.samples[i].label);
  }
  std::filesystem::resize_file(path, 20);
  EXPECT_THROW(load_dataset(path), std::runtime_error);
  std::filesystem::remove(path);
}
