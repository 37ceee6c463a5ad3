#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gaisnet::sched {

/// Devices a, b, c produce goods A, B, C. Upgrading a device is fine-tuning
/// an edge model; serving a request is running inference with it.
inline constexpr int kDevices = 3;

struct Economy {
  double base_profit = 50;
  double upgrade_cost = 50;
  double upgrade_increment = 25;
  int max_level = 2;

  void validate() const;
};

struct IllegalAction : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

using Levels = std::array<int, kDevices>;

struct ScheduleState {
  int round = 1;  // 1-based, next round to play
  Levels levels{};
  std::vector<int> requests;  // r_1..r_H as device indices
  double profit = 0;

  int horizon() const { return static_cast<int>(requests.size()); }
  bool done() const { return round > horizon(); }
  int current_request() const { return requests.at(static_cast<std::size_t>(round - 1)); }
};

struct Action {
  enum class Kind { serve, upgrade } kind = Kind::serve;
  int device = 0;  // upgrade target; ignored for serve

  static Action serve() { return {Kind::serve, 0}; }
  static Action upgrade(int d) { return {Kind::upgrade, d}; }
  friend bool operator==(const Action&, const Action&) = default;
};

/// "A".."C" for serve (of the round's request), "a".."c" for upgrades.
std::string action_label(const Action& a, int request);

/// Parses "AABCCCCCCC" (or lower case) into device indices.
std::vector<int> parse_stream(const std::string& text);
std::string stream_string(const std::vector<int>& stream);

/// Legal actions in preference order: serve, then upgrades a < b < c below the cap.
std::vector<Action> legal_actions(const Levels& levels, const Economy& economy);

double immediate_reward(const Levels& levels, int request, const Action& a, const Economy& economy);

struct StepResult {
  ScheduleState state;
  double reward = 0;
};

/// Serve earns base + increment * level(request); upgrade costs upgrade_cost
/// and raises the level for later rounds. Throws IllegalAction at the cap or
/// after the horizon.
StepResult step(const ScheduleState& state, const Action& action, const Economy& economy);

using Policy = std::function<Action(const ScheduleState&)>;

/// Myopic argmax of immediate reward; ties prefer serve, then lower device.
Action policy_msip(const ScheduleState& state, const Economy& economy);

/// Uniform over legal actions.
Action policy_rs(const ScheduleState& state, const Economy& economy, std::mt19937_64& rng);

struct Plan {
  std::vector<Action> actions;
  double total = 0;
};

/// Exact finite-horizon DP over (round, levels) with a known request stream.
/// Among optimal plans the earliest differing round prefers serve, then the
/// lower device.
Plan policy_mlcp(const std::vector<int>& stream, const Economy& economy);

/// Expected total profit of uniform random play, by DP over (round, levels).
double rs_expected_total(const std::vector<int>& stream, const Economy& economy);

/// DP when only the current request is observed and future requests are
/// i.i.d. with the given probabilities. The returned policy is optimal in
/// expectation.
class DistributionalMlcp {
 public:
  DistributionalMlcp(std::vector<double> request_probs, int horizon, Economy economy);
  Action operator()(const ScheduleState& state) const;
  double expected_total() const;

 private:
  double value(int round, const Levels& levels) const;  // before the request is revealed
  std::size_t index(int round, const Levels& levels) const;

  std::vector<double> probs_;
  int horizon_;
  Economy economy_;
  std::vector<double> values_;
};

struct RoundRecord {
  int round = 0;
  int request = 0;
  Action action;
  double reward = 0;
  double cumulative = 0;
};

struct Episode {
  std::vector<RoundRecord> rounds;
  double total() const { return rounds.empty() ? 0.0 : rounds.back().cumulative; }
};

Episode run_episode(const Policy& policy, const std::vector<int>& stream, const Economy& economy);

/// Replays a fixed action sequence.
Policy replay(std::vector<Action> actions);

/// CSV with header `round,request,action,reward,cumulative`.
void write_trace_csv(std::ostream& out, const Episode& episode, const std::string& prefix_cols = {},
                     bool header = true, const std::string& prefix_header = {});

}  // namespace gaisnet::sched
