#include "gaisnet/scheduler.hpp"

#include <cctype>
#include <cmath>
#include <limits>
#include <ostream>

#include <fmt/format.h>

namespace gaisnet::sched {

void Economy::validate() const {
  if (!std::isfinite(base_profit))
    throw std::invalid_argument("economy: base_profit must be finite");
  if (!(upgrade_cost >= 0) || !(upgrade_increment >= 0) || max_level < 0)
    throw std::invalid_argument("economy: upgrade_cost, upgrade_increment and max_level must be non-negative");
}

std::string action_label(const Action& a, int request) {
  if (a.kind == Action::Kind::serve) return std::string(1, static_cast<char>('A' + request));
  return std::string(1, static_cast<char>('a' + a.device));
}

std::vector<int> parse_stream(const std::string& text) {
  std::vector<int> out;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch)) || ch == ',') continue;
    const int d = std::toupper(static_cast<unsigned char>(ch)) - 'A';
    if (d < 0 || d >= kDevices)
      throw std::invalid_argument(std::string("request stream: unknown good '") + ch + "'");
    out.push_back(d);
  }
  return out;
}

std::string stream_string(const std::vector<int>& stream) {
  std::string s;
  for (int r : stream) s.push_back(static_cast<char>('A' + r));
  return s;
}

std::vector<Action> legal_actions(const Levels& levels, const Economy& economy) {
  std::vector<Action> out{Action::serve()};
  for (int d = 0; d < kDevices; ++d)
    if (levels[static_cast<std::size_t>(d)] < economy.max_level) out.push_back(Action::upgrade(d));
  return out;
}

double immediate_reward(const Levels& levels, int request, const Action& a, const Economy& e) {
  if (a.kind == Action::Kind::serve)
    return e.base_profit + e.upgrade_increment * levels[static_cast<std::size_t>(request)];
  return -e.upgrade_cost;
}

StepResult step(const ScheduleState& state, const Action& action, const Economy& economy) {
  if (state.done()) throw IllegalAction("step: horizon already reached");
  if (action.kind == Action::Kind::upgrade) {
    if (action.device < 0 || action.device >= kDevices)
      throw IllegalAction("step: unknown device " + std::to_string(action.device));
    if (state.levels[static_cast<std::size_t>(action.device)] >= economy.max_level)
      throw IllegalAction(fmt::format("step: device {} already at max level {}",
                                      static_cast<char>('a' + action.device), economy.max_level));
  }
  StepResult r{state, immediate_reward(state.levels, state.current_request(), action, economy)};
  if (action.kind == Action::Kind::upgrade) ++r.state.levels[static_cast<std::size_t>(action.device)];
  r.state.profit += r.reward;
  ++r.state.round;
  return r;
}

Action policy_msip(const ScheduleState& state, const Economy& economy) {
  const auto actions = legal_actions(state.levels, economy);
  Action best = actions.front();
  double best_r = immediate_reward(state.levels, state.current_request(), best, economy);
  for (const auto& a : actions) {
    const double r = immediate_reward(state.levels, state.current_request(), a, economy);
    if (r > best_r) {
      best = a;
      best_r = r;
    }
  }
  return best;
}

Action policy_rs(const ScheduleState& state, const Economy& economy, std::mt19937_64& rng) {
  const auto actions = legal_actions(state.levels, economy);
  std::uniform_int_distribution<std::size_t> pick(0, actions.size() - 1);
  return actions[pick(rng)];
}

namespace {

// Dense table over (round, levels) for round in [1, horizon + 1].
class LevelTable {
 public:
  LevelTable(int horizon, int max_level)
      : side_(max_level + 1), per_round_(side_ * side_ * side_),
        values_(static_cast<std::size_t>((horizon + 1) * per_round_), 0.0) {}

  double& at(int round, const Levels& l) { return values_[index(round, l)]; }
  double at(int round, const Levels& l) const { return values_[index(round, l)]; }

  template <typename F>
  void for_each_levels(F&& f) const {
    Levels l{};
    for (l[0] = 0; l[0] < side_; ++l[0])
      for (l[1] = 0; l[1] < side_; ++l[1])
        for (l[2] = 0; l[2] < side_; ++l[2]) f(l);
  }

 private:
  std::size_t index(int round, const Levels& l) const {
    return static_cast<std::size_t>((round - 1) * per_round_ + (l[0] * side_ + l[1]) * side_ + l[2]);
  }
  int side_;
  int per_round_;
  std::vector<double> values_;
};

Levels after(const Levels& l, const Action& a) {
  Levels out = l;
  if (a.kind == Action::Kind::upgrade) ++out[static_cast<std::size_t>(a.device)];
  return out;
}

}  // namespace

Plan policy_mlcp(const std::vector<int>& stream, const Economy& economy) {
  economy.validate();
  const int horizon = static_cast<int>(stream.size());
  LevelTable value(horizon, economy.max_level);
  auto q = [&](int t, const Levels& l, const Action& a) {
    return immediate_reward(l, stream[static_cast<std::size_t>(t - 1)], a, economy) +
           value.at(t + 1, after(l, a));
  };
  for (int t = horizon; t >= 1; --t) {
    value.for_each_levels([&](const Levels& l) {
      double best = -std::numeric_limits<double>::infinity();
      for (const auto& a : legal_actions(l, economy)) best = std::max(best, q(t, l, a));
      value.at(t, l) = best;
    });
  }
  Plan plan;
  Levels l{};
  for (int t = 1; t <= horizon; ++t) {
    for (const auto& a : legal_actions(l, economy)) {
      if (q(t, l, a) == value.at(t, l)) {
        plan.actions.push_back(a);
        plan.total += immediate_reward(l, stream[static_cast<std::size_t>(t - 1)], a, economy);
        l = after(l, a);
        break;
      }
    }
  }
  return plan;
}

double rs_expected_total(const std::vector<int>& stream, const Economy& economy) {
  economy.validate();
  const int horizon = static_cast<int>(stream.size());
  LevelTable value(horizon, economy.max_level);
  for (int t = horizon; t >= 1; --t) {
    value.for_each_levels([&](const Levels& l) {
      const auto actions = legal_actions(l, economy);
      double sum = 0;
      for (const auto& a : actions)
        sum += immediate_reward(l, stream[static_cast<std::size_t>(t - 1)], a, economy) +
               value.at(t + 1, after(l, a));
      value.at(t, l) = sum / static_cast<double>(actions.size());
    });
  }
  return value.at(1, Levels{});
}

DistributionalMlcp::DistributionalMlcp(std::vector<double> request_probs, int horizon, Economy economy)
    : probs_(std::move(request_probs)), horizon_(horizon), economy_(economy) {
  economy_.validate();
  if (probs_.size() != static_cast<std::size_t>(kDevices))
    throw std::invalid_argument("distributional MLCP: need one probability per good");
  double total = 0;
  for (double p : probs_) {
    if (!(p >= 0)) throw std::invalid_argument("distributional MLCP: negative probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("distributional MLCP: probabilities must sum to 1");
  const int side = economy_.max_level + 1;
  values_.assign(static_cast<std::size_t>((horizon_ + 1) * side * side * side), 0.0);
  for (int t = horizon_; t >= 1; --t) {
    Levels l{};
    for (l[0] = 0; l[0] < side; ++l[0])
      for (l[1] = 0; l[1] < side; ++l[1])
        for (l[2] = 0; l[2] < side; ++l[2]) {
          double expected = 0;
          for (int r = 0; r < kDevices; ++r) {
            double best = -std::numeric_limits<double>::infinity();
            for (const auto& a : legal_actions(l, economy_))
              best = std::max(best, immediate_reward(l, r, a, economy_) + value(t + 1, after(l, a)));
            expected += probs_[static_cast<std::size_t>(r)] * best;
          }
          values_[index(t, l)] = expected;
        }
  }
}

std::size_t DistributionalMlcp::index(int round, const Levels& l) const {
  const int side = economy_.max_level + 1;
  return static_cast<std::size_t>(((round - 1) * side * side * side) + (l[0] * side + l[1]) * side + l[2]);
}

double DistributionalMlcp::value(int round, const Levels& levels) const {
  if (round > horizon_) return 0.0;
  return values_[index(round, levels)];
}

Action DistributionalMlcp::operator()(const ScheduleState& state) const {
  const int r = state.current_request();
  Action best = Action::serve();
  double best_q = -std::numeric_limits<double>::infinity();
  for (const auto& a : legal_actions(state.levels, economy_)) {
    const double q = immediate_reward(state.levels, r, a, economy_) + value(state.round + 1, after(state.levels, a));
    if (q > best_q) {
      best = a;
      best_q = q;
    }
  }
  return best;
}

double DistributionalMlcp::expected_total() const { return value(1, Levels{}); }

Episode run_episode(const Policy& policy, const std::vector<int>& stream, const Economy& economy) {
  economy.validate();
  Episode ep;
  ScheduleState state;
  state.requests = stream;
  while (!state.done()) {
    const Action a = policy(state);
    const int request = state.current_request();
    StepResult r = step(state, a, economy);
    ep.rounds.push_back({state.round, request, a, r.reward, r.state.profit});
    state = std::move(r.state);
  }
  return ep;
}

Policy replay(std::vector<Action> actions) {
  return [actions = std::move(actions)](const ScheduleState& s) {
    if (s.round < 1 || s.round > static_cast<int>(actions.size()))
      throw IllegalAction("replay: no action recorded for round " + std::to_string(s.round));
    return actions[static_cast<std::size_t>(s.round - 1)];
  };
}

void write_trace_csv(std::ostream& out, const Episode& episode, const std::string& prefix_cols,
                     bool header, const std::string& prefix_header) {
  if (header) out << prefix_header << "round,request,action,reward,cumulative\n";
  for (const auto& r : episode.rounds)
    out << prefix_cols << r.round << ',' << static_cast<char>('A' + r.request) << ','
        << action_label(r.action, r.request) << ',' << fmt::format("{}", r.reward) << ','
        << fmt::format("{}", r.cumulative) << '\n';
}

}  // namespace gaisnet::sched
