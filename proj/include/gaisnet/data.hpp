#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "gaisnet/model.hpp"

namespace gaisnet {

/// Geometry of the synthetic classification task. Class means depend only on
/// task_seed, so datasets drawn with different sample seeds share classes.
struct GeneratorConfig {
  int n_patches = 4;
  int patch_dim = 8;
  int signal_dims = 4;            // leading feature dims that carry the class mean
  double class_separation = 2.0;  // norm of each class mean
  double patch_noise = 1.0;       // i.i.d. per patch and dim
  double nuisance_noise = 0.0;    // per-sample offset shared by all patches, non-signal dims only
  std::uint64_t task_seed = 7;

  void validate() const;
  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

struct SyntheticDataset {
  std::vector<Sample> samples;
  int n_classes = 0;
  std::uint64_t seed = 0;
};

/// Gaussian classes in patch-feature space, shuffled deterministically.
SyntheticDataset generate(std::uint64_t seed, int n_classes, int per_class,
                          const GeneratorConfig& gen = {});

struct PartitionSpec {
  int n_clients = 1;
  int classes_per_client = 1;
  int samples_per_client = 10;
  int train_parts = 4;  // train:validation ratio
  int val_parts = 1;

  void validate(int n_classes) const;
};

struct ClientData {
  std::vector<int> classes;
  std::vector<Sample> train;
  std::vector<Sample> validation;
};

/// Client j receives labels {(j * cpc + t) mod |Y| : t < cpc} and
/// samples_per_client samples split evenly over them, drawn without
/// replacement; each client's share is then split train:validation.
std::vector<ClientData> partition_noniid(const SyntheticDataset& dataset, const PartitionSpec& spec);

struct PretrainOptions {
  int epochs = 0;
  double lr = 0.05;
  int batch_size = 10;
  std::uint64_t seed = 1;
};

/// Trains the whole model (nothing frozen) on the cloud split, then freezes
/// the backbone and re-draws prompts and head. epochs == 0 yields the random
/// frozen backbone.
SplitModel pretrain_backbone(const ModelConfig& config, std::span<const Sample> cloud_split,
                             const PretrainOptions& options);

/// Versioned binary cache keyed by (seed, generator, size).
std::filesystem::path dataset_cache_path(const std::filesystem::path& dir, std::uint64_t seed,
                                         int n_classes, int per_class, const GeneratorConfig& gen);
void save_dataset(const SyntheticDataset& dataset, const std::filesystem::path& path);
SyntheticDataset load_dataset(const std::filesystem::path& path);

}  // namespace gaisnet
