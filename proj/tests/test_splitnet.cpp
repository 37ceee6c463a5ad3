#include <gtest/gtest.h>

#include <sstream>

#include "gaisnet/splitnet.hpp"
#include "support.hpp"

using namespace gaisnet;
using namespace gaisnet::testing;

namespace {

ModelConfig toy() {
  ModelConfig c;
  c.n_layers = 2;
  c.hidden = 8;
  c.n_heads = 1;
  c.n_patches = 4;
  c.patch_dim = 8;
  c.prompt_len = 2;
  c.n_classes = 3;
  return c;
}

ClientChain three_client_chain(const ModelConfig& c) {
  const std::vector<double> w{1, 1};
  return make_chain({"s", "a", "b"}, split_tunable(c, 2, w));
}

}  // namespace

TEST(Chain, SingleClientHoldsEverything) {
  const ModelConfig c = toy();
  const std::vector<double> w{1};
  ClientChain chain = make_chain({"solo"}, split_tunable(c, 1, w));
  EXPECT_EQ(chain.hops(), 0u);
  SplitModel m = init_model(c, 1);
  randomize_tunable(m, 2);
  auto s = random_samples(c, 1, 3);
  ForwardResult r = pipeline_forward(chain, m, s[0].features);
  EXPECT_TRUE(r.log.empty());
  EXPECT_EQ(r.logits, forward_logits(m, s[0].features));
}

TEST(Chain, ValidationCatchesGaps) {
  const ModelConfig c = toy();
  ClientChain chain = three_client_chain(c);
  EXPECT_NO_THROW(chain.validate(c));
  ClientChain missing = chain;
  missing.members.erase(missing.members.begin() + 1);
  EXPECT_THROW(missing.validate(c), ChainError);
  ClientChain no_head = chain;
  no_head.members.back().block->has_head = false;
  EXPECT_THROW(no_head.validate(c), ChainError);
  SplitModel m = init_model(c, 1);
  EXPECT_THROW(pipeline_forward(missing, m, Mat::Zero(4, 8)), ChainError);
}

TEST(Forward, HopBytes) {
  const ModelConfig c = toy();
  EXPECT_EQ(token_payload_bytes(c), 320);
  ClientChain chain = three_client_chain(c);
  SplitModel m = init_model(c, 1);
  auto s = random_samples(c, 1, 2);
  ForwardResult r = pipeline_forward(chain, m, s[0].features);
  ASSERT_EQ(r.log.size(), 2u);
  for (const auto& rec : r.log) {
    EXPECT_EQ(rec.direction, Traffic::forward_token);
    EXPECT_EQ(rec.bytes, 320);
  }
  EXPECT_EQ(r.log[0].from, "s");
  EXPECT_EQ(r.log[1].to, "b");
  EXPECT_EQ(r.logits, forward_logits(m, s[0].features));
}

TEST(Backward, ThreeClientsMatchMonolithic) {
  const ModelConfig c = toy();
  ClientChain chain = three_client_chain(c);
  SplitModel split = init_model(c, 4);
  randomize_tunable(split, 5);
  SplitModel mono = split;
  auto batch = random_samples(c, 5, 6);
  BackwardResult r = pipeline_backward(chain, split, batch, 0.1);
  const double loss = backward_step(mono, batch, 0.1);
  EXPECT_EQ(r.loss, loss);
  EXPECT_LE(max_param_diff(split, mono), 1e-12);
  // Start point only embeds under a frozen backbone: 5 forward + 5 gradient hops (b->a only).
  int fwd = 0, grad = 0;
  for (const auto& rec : r.log) (rec.direction == Traffic::forward_token ? fwd : grad)++;
  EXPECT_EQ(fwd, 10);
  EXPECT_EQ(grad, 5);
}

TEST(Backward, GradientRecordsInReverseHopOrder) {
  ModelConfig c = toy();
  c.n_layers = 3;
  const std::vector<double> w{1, 1, 1};
  ClientChain chain = make_chain({"s", "a", "b", "e"}, split_tunable(c, 3, w));
  SplitModel m = init_model(c, 1);
  auto batch = random_samples(c, 1, 2);
  BackwardResult r = pipeline_backward(chain, m, batch, 0.0);
  std::vector<std::string> grads;
  for (const auto& rec : r.log)
    if (rec.direction == Traffic::backward_gradient) grads.push_back(rec.from + ">" + rec.to);
  EXPECT_EQ(grads, (std::vector<std::string>{"e>b", "b>a"}));
}

TEST(Backward, ZeroLearningRateKeepsParams) {
  const ModelConfig c = toy();
  ClientChain chain = three_client_chain(c);
  SplitModel m = init_model(c, 7);
  randomize_tunable(m, 8);
  SplitModel before = m;
  BackwardResult r = pipeline_backward(chain, m, random_samples(c, 3, 9), 0.0);
  EXPECT_EQ(max_param_diff(m, before), 0.0);
  EXPECT_FALSE(r.log.empty());
}

TEST(Backward, SingleClientEqualsBackwardStep) {
  const ModelConfig c = toy();
  const std::vector<double> w{1};
  ClientChain chain = make_chain({"solo"}, split_tunable(c, 1, w));
  SplitModel a = init_model(c, 3);
  randomize_tunable(a, 4);
  SplitModel b = a;
  auto batch = random_samples(c, 4, 5);
  pipeline_backward(chain, a, batch, 0.05);
  backward_step(b, batch, 0.05);
  EXPECT_EQ(max_param_diff(a, b), 0.0);
}

TEST(Equivalence, RandomConfigs) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    RandomSplitCase rc = random_split_case(rng);
    SplitModel split = init_model(rc.config, 100 + trial);
    randomize_tunable(split, 200 + trial);
    SplitModel mono = split;
    auto batch = random_samples(rc.config, 3, 300 + trial);
    for (const auto& s : batch)
      EXPECT_LE(max_abs_diff(pipeline_forward(rc.chain, split, s.features).logits,
                             forward_logits(mono, s.features)), 1e-9);
    pipeline_backward(rc.chain, split, batch, 0.1);
    backward_step(mono, batch, 0.1);
    EXPECT_LE(max_param_diff(split, mono), 1e-9) << "trial " << trial;
  }
}

TEST(Inference, MatchesMonolithicClassWithOneFeedback) {
  std::mt19937_64 rng(77);
  RandomSplitCase rc = random_split_case(rng);
  SplitModel m = init_model(rc.config, 1);
  randomize_tunable(m, 2);
  for (const auto& s : random_samples(rc.config, 100, 3)) {
    InferenceResult r = inference_round(rc.chain, m, s.features);
    EXPECT_EQ(r.predicted, predict_class(forward_logits(m, s.features)));
    int feedback = 0;
    for (const auto& rec : r.log) feedback += rec.direction == Traffic::result_feedback;
    EXPECT_EQ(feedback, 1);
    EXPECT_EQ(r.log.back().direction, Traffic::result_feedback);
    EXPECT_EQ(r.log.back().bytes, kResultFeedbackBytes);
    EXPECT_EQ(r.log.back().from, rc.chain.end_point());
    EXPECT_EQ(r.log.back().to, rc.chain.start_point());
  }
}

TEST(Inference, MissingFeedbackLinkIsInfeasible) {
  const ModelConfig c = toy();
  ClientChain chain = three_client_chain(c);
  SplitModel m = init_model(c, 1);
  auto linked = [](const std::string& a, const std::string& b) { return !(a == "b" && b == "s"); };
  EXPECT_THROW(inference_round(chain, m, Mat::Zero(4, 8), linked), ChainError);
}

TEST(Smashed, CsvFormat) {
  SmashedLog log{{Traffic::forward_token, "a", "b", 320, 1}, {Traffic::result_feedback, "b", "a", 8, 1}};
  std::ostringstream out;
  write_smashed_csv(out, log);
  EXPECT_EQ(out.str(), "round,direction,from,to,bytes\n1,forward-token,a,b,320\n1,result-feedback,b,a,8\n");
}
