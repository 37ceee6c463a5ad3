#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gaisnet/param.hpp"
#include "gaisnet/tensor.hpp"

namespace gaisnet {

/// Shape of the prompt-tuned encoder. Layer indices in this API are 1-based.
struct ModelConfig {
  int n_layers = 2;      // Transformer encoder blocks
  int hidden = 8;        // token width d
  int n_heads = 1;
  int n_patches = 4;     // m
  int patch_dim = 8;     // raw feature width of one patch
  int prompt_len = 2;    // prompt tokens per layer
  int n_classes = 3;
  double mlp_ratio = 2.0;
  double ln_eps = 1e-5;

  int mlp_hidden() const;
  int head_dim() const { return hidden / n_heads; }
  /// Rows of the persistent token matrix [x, E].
  int tokens() const { return 1 + n_patches; }
  /// Rows seen inside a layer: [x, P, E].
  int layer_tokens() const { return 1 + prompt_len + n_patches; }

  /// Throws std::invalid_argument naming the first violated field.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerParams {
  ParamD ln1_gamma, ln1_beta;
  ParamD qkv_weight, qkv_bias;  // d x 3d, 1 x 3d
  ParamD out_weight, out_bias;  // d x d
  ParamD ln2_gamma, ln2_beta;
  ParamD fc1_weight, fc1_bias;  // d x h
  ParamD fc2_weight, fc2_bias;  // h x d

  std::vector<ParamD*> params();
  std::vector<const ParamD*> params() const;
};

/// Patch embedding, CLS seed and encoder layers. Frozen after pre-training.
struct Backbone {
  ParamD patch_weight;  // patch_dim x d
  ParamD patch_bias;    // 1 x d
  ParamD position;      // m x d
  ParamD cls;           // 1 x d
  std::vector<LayerParams> layers;

  std::vector<ParamD*> params();
  std::vector<const ParamD*> params() const;
  void set_frozen(bool frozen);
  bool all_frozen() const;
};

struct PromptModule {
  int layer_index = 1;  // 1..n_layers
  ParamD tokens;        // prompt_len x d
};

struct HeadModule {
  ParamD weight;  // d x n_classes
  ParamD bias;    // 1 x n_classes
};

struct SplitModel {
  ModelConfig config;
  Backbone backbone;
  std::vector<PromptModule> prompts;  // prompts[i-1] feeds layer i
  HeadModule head;

  std::vector<ParamD*> tunable_params();
  std::vector<ParamD*> all_params();
  void zero_grad();
};

struct Sample {
  Mat features;  // n_patches x patch_dim
  int label = 0;
};

/// Random backbone (frozen) plus freshly initialised prompts and head.
SplitModel init_model(const ModelConfig& config, std::uint64_t seed);

/// Re-draws prompt tokens and zeroes the head; backbone untouched.
void reset_tunable(SplitModel& model, std::uint64_t seed);

struct EmbedCache {
  Mat features;
};

/// o_s = [x0, E0]: row 0 is the CLS seed, rows 1..m the patch embeddings.
Mat embed(const SplitModel& model, const Mat& features, EmbedCache* cache = nullptr);

/// Accumulates backbone embedding grads (no-op when frozen).
void embed_backward(SplitModel& model, const EmbedCache& cache, const Mat& dtokens);

struct LayerCache {
  Mat input;  // [x, P, E]
  LayerNormCache<double> ln1, ln2;
  Mat ln1_out, attn_concat, residual, ln2_out, fc1_pre, fc1_act;
  std::vector<AttentionCache<double>> heads;
};

/// One encoder layer with deep-prompt insertion: the layer sees [x, P_i, E]
/// and the prompt output rows are dropped, so in and out have 1+m rows.
Mat layer_forward(const SplitModel& model, int layer, const Mat& tokens_in,
                  LayerCache* cache = nullptr);

/// Backward through layer `layer`. Accumulates prompt grads and, when the
/// backbone is trainable, weight grads. Returns d(tokens_in) when requested,
/// otherwise an empty matrix.
Mat layer_backward(SplitModel& model, int layer, const LayerCache& cache, const Mat& dtokens_out,
                   bool need_input_grad = true);

/// y = x W + b for the CLS row x (1 x d).
Mat head_forward(const SplitModel& model, const Mat& cls_row);

/// Accumulates head grads; returns d(cls_row).
Mat head_backward(SplitModel& model, const Mat& cls_row, const Mat& dlogits);

/// argmax with lowest-index tie-break.
int predict_class(const Mat& logits);

/// Full monolithic forward of one sample to logits.
Mat forward_logits(const SplitModel& model, const Mat& features);

/// Cross-entropy of one logits row; writes dloss/dlogits when requested.
double cross_entropy(const Mat& logits, int label, Mat* dlogits = nullptr);

struct LossResult {
  double loss = 0.0;  // mean over the batch
  std::vector<Mat> logits;
};

LossResult forward_loss(const SplitModel& model, std::span<const Sample> batch);

/// Zeroes and refills grads with d(mean batch loss). Returns the loss.
double compute_gradients(SplitModel& model, std::span<const Sample> batch);

/// One SGD step on every non-frozen param. Returns the pre-step loss.
double backward_step(SplitModel& model, std::span<const Sample> batch, double lr);

double accuracy(const SplitModel& model, std::span<const Sample> samples);

struct ParamCounts {
  std::int64_t total = 0;
  std::int64_t backbone = 0;
  std::int64_t tunable = 0;
  double ratio = 0.0;  // tunable / total
};

ParamCounts count_params(const ModelConfig& config);

/// Contiguous slice of the tunable part: prompt modules
/// [first_layer, first_layer + prompt_count) plus the head when has_head.
struct TunableBlock {
  int first_layer = 1;
  int prompt_count = 0;
  bool has_head = false;

  int last_layer() const { return first_layer + prompt_count - 1; }
  friend bool operator==(const TunableBlock&, const TunableBlock&) = default;
};

/// Largest-remainder apportionment of `total` seats; ties go to the lower index.
std::vector<int> largest_remainder(int total, std::span<const double> weights);

/// Splits P_1..P_N and the head into n_blocks ordered blocks sized by
/// largest-remainder apportionment of the prompt modules; the head always
/// lands in the last block.
std::vector<TunableBlock> split_tunable(const ModelConfig& config, int n_blocks,
                                        std::span<const double> proportions);

/// Number of parameters held by a block.
std::int64_t block_param_count(const ModelConfig& config, const TunableBlock& block);

}  // namespace gaisnet
