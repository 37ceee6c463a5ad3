#include "gaisnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

namespace gaisnet {

void GeneratorConfig::validate() const {
  if (n_patches < 1 || patch_dim < 1) throw std::invalid_argument("generator: empty patch shape");
  if (signal_dims < 1 || signal_dims > patch_dim)
    throw std::invalid_argument("generator: signal_dims must lie in [1, patch_dim]");
  if (!(class_separation >= 0) || !(patch_noise >= 0) || !(nuisance_noise >= 0))
    throw std::invalid_argument("generator: scales must be non-negative");
}

SyntheticDataset generate(std::uint64_t seed, int n_classes, int per_class, const GeneratorConfig& gen) {
  gen.validate();
  if (n_classes < 2) throw std::invalid_argument("generate: n_classes must be at least 2");
  if (per_class < 0) throw std::invalid_argument("generate: per_class must be non-negative");

  std::mt19937_64 task_rng(gen.task_seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<Eigen::RowVectorXd> means;
  for (int c = 0; c < n_classes; ++c) {
    Eigen::RowVectorXd dir(gen.signal_dims);
    for (int k = 0; k < gen.signal_dims; ++k) dir(k) = unit(task_rng);
    means.push_back(gen.class_separation * dir / dir.norm());
  }

  std::mt19937_64 rng(seed);
  SyntheticDataset ds;
  ds.n_classes = n_classes;
  ds.seed = seed;
  const int nuisance = gen.patch_dim - gen.signal_dims;
  for (int c = 0; c < n_classes; ++c) {
    for (int s = 0; s < per_class; ++s) {
      Sample sample{Mat(gen.n_patches, gen.patch_dim), c};
      Eigen::RowVectorXd offset = Eigen::RowVectorXd::Zero(gen.patch_dim);
      for (int k = 0; k < nuisance; ++k) offset(gen.signal_dims + k) = gen.nuisance_noise * unit(rng);
      for (int j = 0; j < gen.n_patches; ++j) {
        for (int k = 0; k < gen.patch_dim; ++k) sample.features(j, k) = offset(k) + gen.patch_noise * unit(rng);
        sample.features.row(j).head(gen.signal_dims) += means[static_cast<std::size_t>(c)];
      }
      ds.samples.push_back(std::move(sample));
    }
  }
  std::shuffle(ds.samples.begin(), ds.samples.end(), rng);
  return ds;
}

void PartitionSpec::validate(int n_classes) const {
  if (n_clients < 1) throw std::invalid_argument("partition: n_clients must be positive");
  if (classes_per_client < 1 || classes_per_client > n_classes)
    throw std::invalid_argument(fmt::format(
        "partition: classes_per_client {} outside [1, {}]", classes_per_client, n_classes));
  if (samples_per_client < classes_per_client)
    throw std::invalid_argument("partition: samples_per_client must cover every assigned class");
  if (train_parts < 1 || val_parts < 0) throw std::invalid_argument("partition: bad train:val ratio");
}

std::vector<ClientData> partition_noniid(const SyntheticDataset& dataset, const PartitionSpec& spec) {
  spec.validate(dataset.n_classes);
  std::vector<std::vector<const Sample*>> pools(static_cast<std::size_t>(dataset.n_classes));
  for (const Sample& s : dataset.samples) pools.at(static_cast<std::size_t>(s.label)).push_back(&s);
  std::vector<std::size_t> cursor(pools.size(), 0);

  std::vector<ClientData> out;
  for (int j = 0; j < spec.n_clients; ++j) {
    ClientData client;
    std::vector<Sample> mine;
    for (int t = 0; t < spec.classes_per_client; ++t) {
      const int c = (j * spec.classes_per_client + t) % dataset.n_classes;
      client.classes.push_back(c);
      const int take = spec.samples_per_client / spec.classes_per_client +
                       (t < spec.samples_per_client % spec.classes_per_client ? 1 : 0);
      auto& pool = pools[static_cast<std::size_t>(c)];
      auto& at = cursor[static_cast<std::size_t>(c)];
      if (at + static_cast<std::size_t>(take) > pool.size())
        throw std::invalid_argument(fmt::format(
            "partition infeasible: class {} has {} samples left, client {} needs {}", c,
            pool.size() - at, j, take));
      for (int k = 0; k < take; ++k) mine.push_back(*pool[at++]);
    }
    std::mt19937_64 rng(dataset.seed ^ (0x51ed2701ULL + static_cast<std::uint64_t>(j)));
    std::shuffle(mine.begin(), mine.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(
        static_cast<double>(mine.size()) * spec.train_parts / (spec.train_parts + spec.val_parts)));
    client.train.assign(mine.begin(), mine.begin() + static_cast<std::ptrdiff_t>(n_train));
    client.validation.assign(mine.begin() + static_cast<std::ptrdiff_t>(n_train), mine.end());
    out.push_back(std::move(client));
  }
  return out;
}

SplitModel pretrain_backbone(const ModelConfig& config, std::span<const Sample> cloud_split,
                             const PretrainOptions& options) {
  if (options.epochs < 0) throw std::invalid_argument("pretrain: epochs must be non-negative");
  if (options.batch_size < 1) throw std::invalid_argument("pretrain: batch_size must be positive");
  SplitModel model = init_model(config, options.seed);
  if (options.epochs > 0) {
    model.backbone.set_frozen(false);
    std::vector<Sample> order(cloud_split.begin(), cloud_split.end());
    std::mt19937_64 rng(options.seed * 0x2545f4914f6cdd1dULL + 1);
    for (int e = 0; e < options.epochs; ++e) {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(options.batch_size)) {
        const std::size_t n = std::min(order.size() - b, static_cast<std::size_t>(options.batch_size));
        backward_step(model, std::span<const Sample>(order).subspan(b, n), options.lr);
      }
    }
    model.backbone.set_frozen(true);
  }
  reset_tunable(model, options.seed + 0x7f4a7c15ULL);
  model.zero_grad();
  return model;
}

namespace {

constexpr char kMagic[4] = {'G', 'S', 'Y', 'N'};
constexpr std::uint32_t kDatasetVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("dataset cache: truncated file");
  return v;
}

}  // namespace

std::filesystem::path dataset_cache_path(const std::filesystem::path& dir, std::uint64_t seed,
                                         int n_classes, int per_class, const GeneratorConfig& gen) {
  return dir / fmt::format("synth_s{}_c{}_n{}_m{}x{}_sig{}_sep{}_pn{}_nn{}_t{}.bin", seed, n_classes,
                           per_class, gen.n_patches, gen.patch_dim, gen.signal_dims,
                           gen.class_separation, gen.patch_noise, gen.nuisance_noise, gen.task_seed);
}

void save_dataset(const SyntheticDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, 4);
  put(out, kDatasetVersion);
  put(out, ds.seed);
  put(out, static_cast<std::int32_t>(ds.n_classes));
  put(out, static_cast<std::uint64_t>(ds.samples.size()));
  const auto rows = ds.samples.empty() ? 0 : ds.samples.front().features.rows();
  const auto cols = ds.samples.empty() ? 0 : ds.samples.front().features.cols();
  put(out, static_cast<std::int32_t>(rows));
  put(out, static_cast<std::int32_t>(cols));
  for (const Sample& s : ds.samples) {
    put(out, static_cast<std::int32_t>(s.label));
    out.write(reinterpret_cast<const char*>(s.features.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(s.features.size())));
  }
}

SyntheticDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("dataset cache: bad magic");
  if (get<std::uint32_t>(in) != kDatasetVersion) throw std::runtime_error("dataset cache: unsupported version");
  SyntheticDataset ds;
  ds.seed = get<std::uint64_t>(in);
  ds.n_classes = get<std::int32_t>(in);
  const auto n = get<std::uint64_t>(in);
  const auto rows = get<std::int32_t>(in);
  const auto cols = get<std::int32_t>(in);
  for (std::uint64_t i = 0; i < n; ++i) {
    Sample s{Mat(rows, cols), get<std::int32_t>(in)};
    in.read(reinterpret_cast<char*>(s.features.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(s.features.size())));
    if (!in) throw std::runtime_error("dataset cache: truncated file");
    if (s.label < 0 || s.label >= ds.n_classes) throw std::runtime_error("dataset cache: label out of range");
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace gaisnet
