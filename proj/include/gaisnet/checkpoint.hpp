#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "gaisnet/model.hpp"

namespace gaisnet {

inline constexpr int kCheckpointVersion = 1;

/// FNV-1a over the raw bytes of every backbone value, in declaration order.
std::uint64_t backbone_hash(const Backbone& backbone);

std::string hash_hex(std::uint64_t hash);

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

/// Versioned JSON checkpoint: config, every param (values and frozen flag)
/// and the backbone content hash.
nlohmann::json to_json(const SplitModel& model);

/// Throws std::runtime_error on version mismatch, malformed content or a
/// backbone whose hash disagrees with the stored one.
SplitModel model_from_json(const nlohmann::json& j);

void save_checkpoint(const SplitModel& model, const std::filesystem::path& path);
SplitModel load_checkpoint(const std::filesystem::path& path);

}  // namespace gaisnet
