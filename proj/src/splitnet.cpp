#include "gaisnet/splitnet.hpp"

#include <ostream>

namespace gaisnet {

const char* to_string(Traffic t) {
  switch (t) {
    case Traffic::forward_token: return "forward-token";
    case Traffic::backward_gradient: return "backward-gradient";
    case Traffic::result_feedback: return "result-feedback";
  }
  return "unknown";
}

std::int64_t token_payload_bytes(const ModelConfig& config) {
  return static_cast<std::int64_t>(config.tokens()) * config.hidden * 8;
}

void ClientChain::validate(const ModelConfig& config) const {
  if (members.empty()) throw ChainError("chain has no members");
  int next_layer = 1;
  bool head_seen = false;
  for (std::size_t k = 0; k < members.size(); ++k) {
    const auto& m = members[k];
    if (!m.block) {
      if (k != 0) throw ChainError("member " + m.client + " holds no block");
      continue;
    }
    if (head_seen) throw ChainError("block after the head at member " + m.client);
    if (m.block->prompt_count < 0 || (m.block->prompt_count > 0 && m.block->first_layer != next_layer))
      throw ChainError("member " + m.client + " breaks prompt-module order at layer " +
                       std::to_string(next_layer));
    next_layer += m.block->prompt_count;
    head_seen = m.block->has_head;
  }
  if (next_layer != config.n_layers + 1)
    throw ChainError("incomplete block coverage: prompt modules " + std::to_string(next_layer) +
                     ".." + std::to_string(config.n_layers) + " unassigned");
  if (!head_seen || !members.back().block || !members.back().block->has_head)
    throw ChainError("incomplete block coverage: head not held by the end point");
}

ClientChain make_chain(const std::vector<std::string>& clients,
                       const std::vector<TunableBlock>& blocks) {
  if (clients.empty()) throw ChainError("make_chain: no clients");
  ClientChain chain;
  if (clients.size() == 1) {
    if (blocks.size() != 1) throw ChainError("make_chain: a single client holds exactly one block");
    chain.members.push_back({clients[0], blocks[0]});
    return chain;
  }
  if (blocks.size() != clients.size() - 1)
    throw ChainError("make_chain: need one block per non-start client");
  chain.members.push_back({clients[0], std::nullopt});
  for (std::size_t k = 1; k < clients.size(); ++k) chain.members.push_back({clients[k], blocks[k - 1]});
  return chain;
}

namespace {

struct SampleState {
  EmbedCache embed;
  std::vector<LayerCache> layers;
  Mat cls;
};

// Runs the member's layers (and head) forward; returns the tokens it hands on.
Mat run_member_forward(const SplitModel& model, const ChainMember& member, Mat tokens,
                       std::vector<LayerCache>* caches, Mat* logits, Mat* cls) {
  if (!member.block) return tokens;
  for (int i = member.block->first_layer; i <= member.block->last_layer(); ++i)
    tokens = layer_forward(model, i, tokens,
                           caches ? &(*caches)[static_cast<std::size_t>(i - 1)] : nullptr);
  if (member.block->has_head) {
    if (cls) *cls = tokens.topRows(1);
    *logits = head_forward(model, tokens.topRows(1));
  }
  return tokens;
}

void member_sgd(SplitModel& model, const ChainMember& member, bool is_start, double lr) {
  if (is_start) {
    Backbone& bb = model.backbone;
    for (ParamD* p : {&bb.patch_weight, &bb.patch_bias, &bb.position, &bb.cls}) p->sgd(lr);
  }
  if (!member.block) return;
  for (int i = member.block->first_layer; i <= member.block->last_layer(); ++i) {
    for (ParamD* p : model.backbone.layers[static_cast<std::size_t>(i - 1)].params()) p->sgd(lr);
    model.prompts[static_cast<std::size_t>(i - 1)].tokens.sgd(lr);
  }
  if (member.block->has_head) {
    model.head.weight.sgd(lr);
    model.head.bias.sgd(lr);
  }
}

}  // namespace

ForwardResult pipeline_forward(const ClientChain& chain, const SplitModel& model,
                               const Mat& features) {
  chain.validate(model.config);
  const std::int64_t payload = token_payload_bytes(model.config);
  ForwardResult result;
  Mat tokens = embed(model, features);
  for (std::size_t k = 0; k < chain.members.size(); ++k) {
    if (k > 0)
      result.log.push_back({Traffic::forward_token, chain.members[k - 1].client,
                            chain.members[k].client, payload});
    tokens = run_member_forward(model, chain.members[k], std::move(tokens), nullptr,
                                &result.logits, nullptr);
  }
  return result;
}

BackwardResult pipeline_backward(const ClientChain& chain, SplitModel& model,
                                 std::span<const Sample> batch, double lr) {
  chain.validate(model.config);
  if (lr < 0) throw std::invalid_argument("pipeline_backward: lr must be non-negative");
  const ModelConfig& c = model.config;
  const std::int64_t payload = token_payload_bytes(c);
  const bool embed_trainable = !model.backbone.all_frozen();
  const bool start_trains = embed_trainable || chain.members.front().block.has_value();
  BackwardResult result;
  model.zero_grad();
  if (batch.empty()) return result;
  const double scale = 1.0 / static_cast<double>(batch.size());

  for (const Sample& s : batch) {
    SampleState st;
    st.layers.resize(static_cast<std::size_t>(c.n_layers));
    Mat logits;
    Mat tokens = embed(model, s.features, &st.embed);
    for (std::size_t k = 0; k < chain.members.size(); ++k) {
      if (k > 0)
        result.log.push_back({Traffic::forward_token, chain.members[k - 1].client,
                              chain.members[k].client, payload});
      tokens = run_member_forward(model, chain.members[k], std::move(tokens), &st.layers, &logits,
                                  &st.cls);
    }
    Mat dlogits;
    result.loss += cross_entropy(logits, s.label, &dlogits);
    dlogits *= scale;

    Mat dtokens = Mat::Zero(c.tokens(), c.hidden);
    for (std::size_t k = chain.members.size(); k-- > 0;) {
      const ChainMember& m = chain.members[k];
      if (m.block) {
        if (m.block->has_head) dtokens.topRows(1) = head_backward(model, st.cls, dlogits);
        for (int i = m.block->last_layer(); i >= m.block->first_layer; --i) {
          const bool need_input = i > 1 || embed_trainable;
          dtokens = layer_backward(model, i, st.layers[static_cast<std::size_t>(i - 1)], dtokens,
                                   need_input);
        }
      }
      if (k > 0 && (k > 1 || start_trains))
        result.log.push_back({Traffic::backward_gradient, m.client, chain.members[k - 1].client,
                              payload});
    }
    if (embed_trainable) embed_backward(model, st.embed, dtokens);
  }
  result.loss *= scale;
  for (std::size_t k = 0; k < chain.members.size(); ++k)
    member_sgd(model, chain.members[k], k == 0, lr);
  return result;
}

InferenceResult inference_round(const ClientChain& chain, const SplitModel& model,
                                const Mat& features, const LinkPredicate& linked) {
  chain.validate(model.config);
  if (linked && chain.members.size() > 1 && !linked(chain.end_point(), chain.start_point()))
    throw ChainError("infeasible chain: no link from end point " + chain.end_point() +
                     " back to start point " + chain.start_point());
  ForwardResult fwd = pipeline_forward(chain, model, features);
  InferenceResult result;
  result.predicted = predict_class(fwd.logits);
  result.logits = std::move(fwd.logits);
  result.log = std::move(fwd.log);
  result.log.push_back(
      {Traffic::result_feedback, chain.end_point(), chain.start_point(), kResultFeedbackBytes});
  return result;
}

void write_smashed_csv(std::ostream& out, const SmashedLog& log, bool header) {
  if (header) out << "round,direction,from,to,bytes\n";
  for (const auto& r : log)
    out << r.round << ',' << to_string(r.direction) << ',' << r.from << ',' << r.to << ','
        << r.bytes << '\n';
}

}  // namespace gaisnet
