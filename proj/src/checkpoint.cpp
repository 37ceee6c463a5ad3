#include "gaisnet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>

namespace gaisnet {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_mix(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= kFnvPrime;
  }
}

nlohmann::json param_to_json(const ParamD& p) {
  std::vector<double> values(p.value.data(), p.value.data() + p.value.size());
  return {{"rows", p.value.rows()}, {"cols", p.value.cols()}, {"frozen", p.frozen},
          {"values", values}};
}

ParamD param_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto values = j.at("values").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(values.size()) != rows * cols)
    throw std::runtime_error("checkpoint: param value count does not match its shape");
  Mat m(rows, cols);
  std::copy(values.begin(), values.end(), m.data());
  return ParamD(std::move(m), j.at("frozen").get<bool>());
}

}  // namespace

std::uint64_t backbone_hash(const Backbone& backbone) {
  std::uint64_t h = kFnvOffset;
  for (const ParamD* p : backbone.params()) {
    const std::int64_t shape[2] = {p->value.rows(), p->value.cols()};
    fnv_mix(h, shape, sizeof(shape));
    fnv_mix(h, p->value.data(), sizeof(double) * static_cast<std::size_t>(p->value.size()));
  }
  return h;
}

std::string hash_hex(std::uint64_t hash) { return fmt::format("{:016x}", hash); }

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},   {"hidden", c.hidden},         {"n_heads", c.n_heads},
          {"n_patches", c.n_patches}, {"patch_dim", c.patch_dim},   {"prompt_len", c.prompt_len},
          {"n_classes", c.n_classes}, {"mlp_ratio", c.mlp_ratio},   {"ln_eps", c.ln_eps}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_patches = j.at("n_patches").get<int>();
  c.patch_dim = j.at("patch_dim").get<int>();
  c.prompt_len = j.at("prompt_len").get<int>();
  c.n_classes = j.at("n_classes").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<double>();
  c.ln_eps = j.at("ln_eps").get<double>();
  c.validate();
  return c;
}

nlohmann::json to_json(const SplitModel& model) {
  nlohmann::json backbone = nlohmann::json::array();
  for (const ParamD* p : model.backbone.params()) backbone.push_back(param_to_json(*p));
  nlohmann::json prompts = nlohmann::json::array();
  for (const auto& prompt : model.prompts)
    prompts.push_back({{"layer_index", prompt.layer_index}, {"tokens", param_to_json(prompt.tokens)}});
  return {{"version", kCheckpointVersion},
          {"config", config_to_json(model.config)},
          {"backbone", backbone},
          {"backbone_hash", hash_hex(backbone_hash(model.backbone))},
          {"prompts", prompts},
          {"head", {{"weight", param_to_json(model.head.weight)},
                    {"bias", param_to_json(model.head.bias)}}}};
}

SplitModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw std::runtime_error("checkpoint: unsupported version " + j.at("version").dump());
    SplitModel model = init_model(config_from_json(j.at("config")), 0);
    const auto& stored = j.at("backbone");
    auto params = model.backbone.params();
    if (stored.size() != params.size())
      throw std::runtime_error("checkpoint: backbone param count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      ParamD loaded = param_from_json(stored[i]);
      if (loaded.value.rows() != params[i]->value.rows() ||
          loaded.value.cols() != params[i]->value.cols())
        throw std::runtime_error("checkpoint: backbone param " + std::to_string(i) + " shape mismatch");
      *params[i] = std::move(loaded);
    }
    if (hash_hex(backbone_hash(model.backbone)) != j.at("backbone_hash").get<std::string>())
      throw std::runtime_error("checkpoint: backbone hash mismatch");
    const auto& prompts = j.at("prompts");
    if (prompts.size() != model.prompts.size())
      throw std::runtime_error("checkpoint: prompt module count mismatch");
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      model.prompts[i].layer_index = prompts[i].at("layer_index").get<int>();
      model.prompts[i].tokens = param_from_json(prompts[i].at("tokens"));
    }
    model.head.weight = param_from_json(j.at("head").at("weight"));
    model.head.bias = param_from_json(j.at("head").at("bias"));
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: malformed content: ") + e.what());
  }
}

void save_checkpoint(const SplitModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(model).dump() << '\n';
}

SplitModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("checkpoint: " + std::string(e.what()));
  }
  return model_from_json(j);
}

}  // namespace gaisnet
