#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaisnet/model.hpp"

namespace gaisnet {

struct ChainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Traffic { forward_token, backward_gradient, result_feedback };

const char* to_string(Traffic t);

/// Size of the class index fed back from the end point to the start point.
inline constexpr std::int64_t kResultFeedbackBytes = 8;

struct SmashedRecord {
  Traffic direction = Traffic::forward_token;
  std::string from;
  std::string to;
  std::int64_t bytes = 0;
  int round = 0;

  friend bool operator==(const SmashedRecord&, const SmashedRecord&) = default;
};

using SmashedLog = std::vector<SmashedRecord>;

/// Bytes of one token/gradient payload: rows x d x 8.
std::int64_t token_payload_bytes(const ModelConfig& config);

struct ChainMember {
  std::string client;
  std::optional<TunableBlock> block;
};

/// Serial execution order. members.front() is the start point (holds data
/// and the embedding); members.back() is the end point (holds the head).
struct ClientChain {
  std::vector<ChainMember> members;

  const std::string& start_point() const { return members.front().client; }
  const std::string& end_point() const { return members.back().client; }
  std::size_t hops() const { return members.empty() ? 0 : members.size() - 1; }

  /// Throws ChainError unless the member blocks cover P_1..P_N in order with
  /// the head held by the end point.
  void validate(const ModelConfig& config) const;
};

/// One client holds everything; otherwise the start point only embeds and
/// clients[k] (k >= 1) holds blocks[k-1].
ClientChain make_chain(const std::vector<std::string>& clients,
                       const std::vector<TunableBlock>& blocks);

struct ForwardResult {
  Mat logits;
  SmashedLog log;
};

ForwardResult pipeline_forward(const ClientChain& chain, const SplitModel& model,
                               const Mat& features);

struct BackwardResult {
  double loss = 0.0;
  SmashedLog log;
};

/// Split fine-tuning step over a labelled batch: per-sample serial forward
/// and backward across the chain, then each member applies SGD to what it
/// owns. Gradient records are logged in reverse hop order; the hop into a
/// start point with nothing trainable is not sent.
BackwardResult pipeline_backward(const ClientChain& chain, SplitModel& model,
                                 std::span<const Sample> batch, double lr);

struct InferenceResult {
  int predicted = 0;
  Mat logits;
  SmashedLog log;
};

using LinkPredicate = std::function<bool(const std::string& from, const std::string& to)>;

/// Forward across the chain, then the end point feeds the class back to the
/// start point. When `linked` is given, a missing end->start link raises
/// ChainError.
InferenceResult inference_round(const ClientChain& chain, const SplitModel& model,
                                const Mat& features, const LinkPredicate& linked = {});

/// CSV with header `round,direction,from,to,bytes`.
void write_smashed_csv(std::ostream& out, const SmashedLog& log, bool header = true);

}  // namespace gaisnet
