#include "gaisnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace gaisnet {

int ModelConfig::mlp_hidden() const {
  return static_cast<int>(std::lround(mlp_ratio * hidden));
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("model config: ") + what);
  };
  require(n_layers > 0, "n_layers must be positive");
  require(hidden > 0, "hidden must be positive");
  require(n_heads > 0, "n_heads must be positive");
  require(hidden % n_heads == 0, "hidden must be divisible by n_heads");
  require(n_patches > 0, "n_patches must be positive");
  require(patch_dim > 0, "patch_dim must be positive");
  require(prompt_len >= 0, "prompt_len must be non-negative");
  require(n_classes > 0, "n_classes must be positive");
  require(mlp_ratio > 0 && mlp_hidden() > 0, "mlp_ratio must be positive");
  require(ln_eps > 0, "ln_eps must be positive");
}

std::vector<ParamD*> LayerParams::params() {
  return {&ln1_gamma, &ln1_beta,  &qkv_weight, &qkv_bias,   &out_weight, &out_bias,
          &ln2_gamma, &ln2_beta,  &fc1_weight, &fc1_bias,   &fc2_weight, &fc2_bias};
}

std::vector<const ParamD*> LayerParams::params() const {
  return {&ln1_gamma, &ln1_beta,  &qkv_weight, &qkv_bias,   &out_weight, &out_bias,
          &ln2_gamma, &ln2_beta,  &fc1_weight, &fc1_bias,   &fc2_weight, &fc2_bias};
}

std::vector<ParamD*> Backbone::params() {
  std::vector<ParamD*> out{&patch_weight, &patch_bias, &position, &cls};
  for (auto& layer : layers)
    for (ParamD* p : layer.params()) out.push_back(p);
  return out;
}

std::vector<const ParamD*> Backbone::params() const {
  std::vector<const ParamD*> out{&patch_weight, &patch_bias, &position, &cls};
  for (const auto& layer : layers)
    for (const ParamD* p : layer.params()) out.push_back(p);
  return out;
}

void Backbone::set_frozen(bool frozen) {
  for (ParamD* p : params()) {
    p->frozen = frozen;
    p->zero_grad();
  }
}

bool Backbone::all_frozen() const {
  const auto ps = params();
  return std::all_of(ps.begin(), ps.end(), [](const ParamD* p) { return p->frozen; });
}

std::vector<ParamD*> SplitModel::tunable_params() {
  std::vector<ParamD*> out;
  for (auto& prompt : prompts) out.push_back(&prompt.tokens);
  out.push_back(&head.weight);
  out.push_back(&head.bias);
  return out;
}

std::vector<ParamD*> SplitModel::all_params() {
  std::vector<ParamD*> out = backbone.params();
  for (ParamD* p : tunable_params()) out.push_back(p);
  return out;
}

void SplitModel::zero_grad() {
  for (ParamD* p : all_params()) p->zero_grad();
}

namespace {

Mat random_normal(int rows, int cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = dist(rng);
  return out;
}

ParamD xavier(int fan_in, int fan_out, std::mt19937_64& rng) {
  return ParamD(random_normal(fan_in, fan_out, std::sqrt(2.0 / (fan_in + fan_out)), rng), true);
}

ParamD zeros(int rows, int cols, bool frozen) { return ParamD(Mat::Zero(rows, cols), frozen); }
ParamD ones(int rows, int cols, bool frozen) { return ParamD(Mat::Ones(rows, cols), frozen); }

void check_layer(const SplitModel& model, int layer) {
  if (layer < 1 || layer > model.config.n_layers)
    throw std::out_of_range("layer index " + std::to_string(layer) + " outside [1, " +
                            std::to_string(model.config.n_layers) + "]");
}

// Scatter of the (1+m) persistent rows into a (1+p+m) layer matrix.
Mat insert_prompts(const Mat& tokens, const Mat& prompt) {
  const Eigen::Index p = prompt.rows();
  Mat out(tokens.rows() + p, tokens.cols());
  out.row(0) = tokens.row(0);
  if (p > 0) out.middleRows(1, p) = prompt;
  out.bottomRows(tokens.rows() - 1) = tokens.bottomRows(tokens.rows() - 1);
  return out;
}

Mat drop_prompts(const Mat& full, Eigen::Index p) {
  Mat out(full.rows() - p, full.cols());
  out.row(0) = full.row(0);
  out.bottomRows(out.rows() - 1) = full.bottomRows(out.rows() - 1);
  return out;
}

}  // namespace

SplitModel init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const int d = config.hidden;
  const int h = config.mlp_hidden();
  SplitModel model;
  model.config = config;
  Backbone& bb = model.backbone;
  bb.patch_weight = xavier(config.patch_dim, d, rng);
  bb.patch_bias = zeros(1, d, true);
  bb.position = ParamD(random_normal(config.n_patches, d, 0.02, rng), true);
  bb.cls = ParamD(random_normal(1, d, 0.02, rng), true);
  bb.layers.resize(static_cast<std::size_t>(config.n_layers));
  for (auto& layer : bb.layers) {
    layer.ln1_gamma = ones(1, d, true);
    layer.ln1_beta = zeros(1, d, true);
    layer.qkv_weight = xavier(d, 3 * d, rng);
    layer.qkv_bias = zeros(1, 3 * d, true);
    layer.out_weight = xavier(d, d, rng);
    layer.out_bias = zeros(1, d, true);
    layer.ln2_gamma = ones(1, d, true);
    layer.ln2_beta = zeros(1, d, true);
    layer.fc1_weight = xavier(d, h, rng);
    layer.fc1_bias = zeros(1, h, true);
    layer.fc2_weight = xavier(h, d, rng);
    layer.fc2_bias = zeros(1, d, true);
  }
  reset_tunable(model, seed ^ 0x9e3779b97f4a7c15ULL);
  return model;
}

void reset_tunable(SplitModel& model, std::uint64_t seed) {
  const ModelConfig& c = model.config;
  std::mt19937_64 rng(seed);
  model.prompts.clear();
  for (int i = 1; i <= c.n_layers; ++i)
    model.prompts.push_back({i, ParamD(random_normal(c.prompt_len, c.hidden, 0.1, rng))});
  model.head.weight = zeros(c.hidden, c.n_classes, false);
  model.head.bias = zeros(1, c.n_classes, false);
}

Mat embed(const SplitModel& model, const Mat& features, EmbedCache* cache) {
  const ModelConfig& c = model.config;
  if (features.rows() != c.n_patches || features.cols() != c.patch_dim)
    throw ShapeError("embed: expected " + shape_str(c.n_patches, c.patch_dim) + ", got " +
                     shape_str(features.rows(), features.cols()));
  const Backbone& bb = model.backbone;
  Mat patches = add_row(matmul(features, bb.patch_weight.value), bb.patch_bias.value);
  patches += bb.position.value;
  Mat out(c.tokens(), c.hidden);
  out.row(0) = bb.cls.value.row(0);
  out.bottomRows(c.n_patches) = patches;
  if (cache) cache->features = features;
  return out;
}

void embed_backward(SplitModel& model, const EmbedCache& cache, const Mat& dtokens) {
  Backbone& bb = model.backbone;
  const Mat dpatches = dtokens.bottomRows(dtokens.rows() - 1);
  if (!bb.patch_weight.frozen) bb.patch_weight.accumulate(matmul_tn(cache.features, dpatches));
  bb.patch_bias.accumulate(col_sum(dpatches));
  bb.position.accumulate(dpatches);
  bb.cls.accumulate(dtokens.topRows(1));
}

Mat layer_forward(const SplitModel& model, int layer, const Mat& tokens_in, LayerCache* cache) {
  check_layer(model, layer);
  const ModelConfig& c = model.config;
  if (tokens_in.rows() != c.tokens() || tokens_in.cols() != c.hidden)
    throw ShapeError("layer_forward: expected " + shape_str(c.tokens(), c.hidden) + ", got " +
                     shape_str(tokens_in.rows(), tokens_in.cols()));
  const LayerParams& lp = model.backbone.layers[static_cast<std::size_t>(layer - 1)];
  const Mat& prompt = model.prompts[static_cast<std::size_t>(layer - 1)].tokens.value;
  const int d = c.hidden;
  const int dh = c.head_dim();

  Mat x = insert_prompts(tokens_in, prompt);
  LayerNormCache<double> ln1;
  Mat a = layer_norm(x, lp.ln1_gamma.value, lp.ln1_beta.value, c.ln_eps, &ln1);
  Mat qkv = add_row(matmul(a, lp.qkv_weight.value), lp.qkv_bias.value);
  Mat concat(x.rows(), d);
  std::vector<AttentionCache<double>> heads(static_cast<std::size_t>(c.n_heads));
  for (int h = 0; h < c.n_heads; ++h) {
    Mat q = qkv.middleCols(h * dh, dh);
    Mat k = qkv.middleCols(d + h * dh, dh);
    Mat v = qkv.middleCols(2 * d + h * dh, dh);
    concat.middleCols(h * dh, dh) = attention(q, k, v, &heads[static_cast<std::size_t>(h)]);
  }
  Mat residual = x + add_row(matmul(concat, lp.out_weight.value), lp.out_bias.value);
  LayerNormCache<double> ln2;
  Mat b = layer_norm(residual, lp.ln2_gamma.value, lp.ln2_beta.value, c.ln_eps, &ln2);
  Mat pre = add_row(matmul(b, lp.fc1_weight.value), lp.fc1_bias.value);
  Mat act = gelu(pre);
  Mat out = residual + add_row(matmul(act, lp.fc2_weight.value), lp.fc2_bias.value);

  if (cache) {
    cache->input = std::move(x);
    cache->ln1 = std::move(ln1);
    cache->ln1_out = std::move(a);
    cache->heads = std::move(heads);
    cache->attn_concat = std::move(concat);
    cache->residual = std::move(residual);
    cache->ln2 = std::move(ln2);
    cache->ln2_out = std::move(b);
    cache->fc1_pre = std::move(pre);
    cache->fc1_act = std::move(act);
  }
  return drop_prompts(out, c.prompt_len);
}

Mat layer_backward(SplitModel& model, int layer, const LayerCache& cache, const Mat& dtokens_out,
                   bool need_input_grad) {
  check_layer(model, layer);
  const ModelConfig& c = model.config;
  LayerParams& lp = model.backbone.layers[static_cast<std::size_t>(layer - 1)];
  ParamD& prompt = model.prompts[static_cast<std::size_t>(layer - 1)].tokens;
  const int d = c.hidden;
  const int dh = c.head_dim();
  const int p = c.prompt_len;

  // Prompt output rows were discarded, so their upstream gradient is zero.
  Mat dout = insert_prompts(dtokens_out, Mat::Zero(p, d));

  // MLP branch.
  if (!lp.fc2_weight.frozen) lp.fc2_weight.accumulate(matmul_tn(cache.fc1_act, dout));
  lp.fc2_bias.accumulate(col_sum(dout));
  Mat dact = matmul_nt(dout, lp.fc2_weight.value);
  Mat dpre = gelu_backward(cache.fc1_pre, dact);
  if (!lp.fc1_weight.frozen) lp.fc1_weight.accumulate(matmul_tn(cache.ln2_out, dpre));
  lp.fc1_bias.accumulate(col_sum(dpre));
  Mat db = matmul_nt(dpre, lp.fc1_weight.value);
  Mat dresidual =
      dout + layer_norm_backward(cache.ln2, lp.ln2_gamma.value, db,
                                 lp.ln2_gamma.frozen ? nullptr : &lp.ln2_gamma.grad,
                                 lp.ln2_beta.frozen ? nullptr : &lp.ln2_beta.grad);

  // Attention branch.
  if (!lp.out_weight.frozen) lp.out_weight.accumulate(matmul_tn(cache.attn_concat, dresidual));
  lp.out_bias.accumulate(col_sum(dresidual));
  Mat dconcat = matmul_nt(dresidual, lp.out_weight.value);
  Mat dqkv(dconcat.rows(), 3 * d);
  for (int h = 0; h < c.n_heads; ++h) {
    AttentionGrads<double> g = attention_backward(cache.heads[static_cast<std::size_t>(h)],
                                                  Mat(dconcat.middleCols(h * dh, dh)));
    dqkv.middleCols(h * dh, dh) = g.dq;
    dqkv.middleCols(d + h * dh, dh) = g.dk;
    dqkv.middleCols(2 * d + h * dh, dh) = g.dv;
  }
  if (!lp.qkv_weight.frozen) lp.qkv_weight.accumulate(matmul_tn(cache.ln1_out, dqkv));
  lp.qkv_bias.accumulate(col_sum(dqkv));
  Mat da = matmul_nt(dqkv, lp.qkv_weight.value);
  Mat dx = dresidual + layer_norm_backward(cache.ln1, lp.ln1_gamma.value, da,
                                           lp.ln1_gamma.frozen ? nullptr : &lp.ln1_gamma.grad,
                                           lp.ln1_beta.frozen ? nullptr : &lp.ln1_beta.grad);

  if (p > 0) prompt.accumulate(dx.middleRows(1, p));
  if (!need_input_grad) return Mat();
  return drop_prompts(dx, p);
}

Mat head_forward(const SplitModel& model, const Mat& cls_row) {
  if (cls_row.rows() != 1 || cls_row.cols() != model.config.hidden)
    throw ShapeError("head_forward: expected " + shape_str(1, model.config.hidden));
  return add_row(matmul(cls_row, model.head.weight.value), model.head.bias.value);
}

Mat head_backward(SplitModel& model, const Mat& cls_row, const Mat& dlogits) {
  if (!model.head.weight.frozen) model.head.weight.accumulate(matmul_tn(cls_row, dlogits));
  model.head.bias.accumulate(dlogits);
  return matmul_nt(dlogits, model.head.weight.value);
}

int predict_class(const Mat& logits) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < logits.cols(); ++c)
    if (logits(0, c) > logits(0, best)) best = c;
  return static_cast<int>(best);
}

Mat forward_logits(const SplitModel& model, const Mat& features) {
  Mat tokens = embed(model, features);
  for (int i = 1; i <= model.config.n_layers; ++i) tokens = layer_forward(model, i, tokens);
  return head_forward(model, tokens.topRows(1));
}

double cross_entropy(const Mat& logits, int label, Mat* dlogits) {
  if (label < 0 || label >= logits.cols())
    throw std::out_of_range("label " + std::to_string(label) + " outside [0, " +
                            std::to_string(logits.cols()) + ")");
  Mat probs = row_softmax(logits);
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  if (dlogits) {
    *dlogits = probs;
    (*dlogits)(0, label) -= 1.0;
  }
  return lse - logits(0, label);
}

LossResult forward_loss(const SplitModel& model, std::span<const Sample> batch) {
  LossResult result;
  for (const Sample& s : batch) {
    Mat logits = forward_logits(model, s.features);
    result.loss += cross_entropy(logits, s.label);
    result.logits.push_back(std::move(logits));
  }
  if (!batch.empty()) result.loss /= static_cast<double>(batch.size());
  return result;
}

double compute_gradients(SplitModel& model, std::span<const Sample> batch) {
  model.zero_grad();
  if (batch.empty()) return 0.0;
  const int n = model.config.n_layers;
  const double scale = 1.0 / static_cast<double>(batch.size());
  const bool embed_trainable = !model.backbone.all_frozen();
  double loss = 0.0;
  for (const Sample& s : batch) {
    EmbedCache ecache;
    std::vector<LayerCache> caches(static_cast<std::size_t>(n));
    Mat tokens = embed(model, s.features, &ecache);
    for (int i = 1; i <= n; ++i)
      tokens = layer_forward(model, i, tokens, &caches[static_cast<std::size_t>(i - 1)]);
    const Mat cls = tokens.topRows(1);
    const Mat logits = head_forward(model, cls);
    Mat dlogits;
    loss += cross_entropy(logits, s.label, &dlogits);
    dlogits *= scale;

    Mat dtokens = Mat::Zero(tokens.rows(), tokens.cols());
    dtokens.topRows(1) = head_backward(model, cls, dlogits);
    for (int i = n; i >= 1; --i) {
      const bool need_input = i > 1 || embed_trainable;
      dtokens = layer_backward(model, i, caches[static_cast<std::size_t>(i - 1)], dtokens,
                               need_input);
    }
    if (embed_trainable) embed_backward(model, ecache, dtokens);
  }
  return loss * scale;
}

double backward_step(SplitModel& model, std::span<const Sample> batch, double lr) {
  if (lr < 0) throw std::invalid_argument("backward_step: lr must be non-negative");
  const double loss = compute_gradients(model, batch);
  for (ParamD* p : model.all_params()) p->sgd(lr);
  return loss;
}

double accuracy(const SplitModel& model, std::span<const Sample> samples) {
  if (samples.empty()) return 0.0;
  long correct = 0;
  for (const Sample& s : samples)
    if (predict_class(forward_logits(model, s.features)) == s.label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

ParamCounts count_params(const ModelConfig& config) {
  config.validate();
  const std::int64_t d = config.hidden;
  const std::int64_t h = config.mlp_hidden();
  const std::int64_t per_layer = 4 * d * d + 2 * d * h + 9 * d + h;
  ParamCounts counts;
  counts.backbone = config.patch_dim * d + d + config.n_patches * d + d + config.n_layers * per_layer;
  counts.tunable = static_cast<std::int64_t>(config.n_layers) * config.prompt_len * d +
                   d * config.n_classes + config.n_classes;
  counts.total = counts.backbone + counts.tunable;
  counts.ratio = static_cast<double>(counts.tunable) / static_cast<double>(counts.total);
  return counts;
}

std::vector<int> largest_remainder(int total, std::span<const double> weights) {
  if (weights.empty()) throw std::invalid_argument("largest_remainder: no weights");
  long double sum = 0;
  for (double w : weights) {
    if (!(w > 0)) throw std::invalid_argument("largest_remainder: weights must be positive");
    sum += w;
  }
  std::vector<int> seats(weights.size());
  std::vector<long double> remainder(weights.size());
  int given = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const long double quota = static_cast<long double>(total) * weights[i] / sum;
    seats[i] = static_cast<int>(std::floor(quota));
    remainder[i] = quota - seats[i];
    given += seats[i];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (int k = 0; given < total; ++k, ++given) ++seats[order[static_cast<std::size_t>(k)]];
  return seats;
}

std::vector<TunableBlock> split_tunable(const ModelConfig& config, int n_blocks,
                                        std::span<const double> proportions) {
  if (n_blocks < 1 || n_blocks > config.n_layers + 1)
    throw std::invalid_argument("split_tunable: n_blocks " + std::to_string(n_blocks) +
                                " outside [1, " + std::to_string(config.n_layers + 1) + "]");
  if (static_cast<int>(proportions.size()) != n_blocks)
    throw std::invalid_argument("split_tunable: need one proportion per block");
  const std::vector<int> sizes = largest_remainder(config.n_layers, proportions);
  std::vector<TunableBlock> blocks;
  int next = 1;
  for (int b = 0; b < n_blocks; ++b) {
    blocks.push_back({next, sizes[static_cast<std::size_t>(b)], b == n_blocks - 1});
    next += sizes[static_cast<std::size_t>(b)];
  }
  return blocks;
}

std::int64_t block_param_count(const ModelConfig& config, const TunableBlock& block) {
  std::int64_t n = static_cast<std::int64_t>(block.prompt_count) * config.prompt_len * config.hidden;
  if (block.has_head) n += static_cast<std::int64_t>(config.hidden) * config.n_classes + config.n_classes;
  return n;
}

}  // namespace gaisnet
