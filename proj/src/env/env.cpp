#include "dtr/env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "dtr/errors.hpp"

namespace dtr {

bool TabularMdp::Ends(int s, int a) const {
  int n = next[s][a];
  return n == kTerminal || terminal[n];
}

std::string TabularMdp::StateName(int s) const {
  if (s >= 0 && s < static_cast<int>(state_names.size())) return state_names[s];
  return "s" + std::to_string(s);
}

void TabularMdp::Validate() const {
  if (num_states <= 0 || num_actions <= 0) {
    throw InvalidArgument("mdp " + name + ": state and action counts must be positive");
  }
  auto ns = static_cast<std::size_t>(num_states);
  if (next.size() != ns || reward.size() != ns || terminal.size() != ns) {
    throw InvalidArgument("mdp " + name + ": tables must have one row per state");
  }
  for (int s = 0; s < num_states; ++s) {
    if (next[s].size() != static_cast<std::size_t>(num_actions) ||
        reward[s].size() != static_cast<std::size_t>(num_actions)) {
      throw InvalidArgument("mdp " + name + ": row " + std::to_string(s) +
                            " has the wrong number of actions");
    }
    for (int a = 0; a < num_actions; ++a) {
      int n = next[s][a];
      if (n != kTerminal && (n < 0 || n >= num_states)) {
        throw InvalidArgument("mdp " + name + ": transition (" + std::to_string(s) + ", " +
                              std::to_string(a) + ") targets invalid state " +
                              std::to_string(n));
      }
      if (!std::isfinite(reward[s][a])) {
        throw InvalidArgument("mdp " + name + ": non-finite reward");
      }
    }
  }
  if (initial_states.empty()) throw InvalidArgument("mdp " + name + ": no initial state");
  for (int s : initial_states) {
    if (s < 0 || s >= num_states || terminal[s]) {
      throw InvalidArgument("mdp " + name + ": invalid initial state " + std::to_string(s));
    }
  }
  if (horizon <= 0) throw InvalidArgument("mdp " + name + ": horizon must be positive");
}

nlohmann::json TabularMdp::ToJson() const {
  nlohmann::json j;
  j["name"] = name;
  j["states"] = num_states;
  j["actions"] = num_actions;
  j["transitions"] = next;
  j["rewards"] = reward;
  j["terminal"] = terminal;
  j["initial_states"] = initial_states;
  j["horizon"] = horizon;
  if (!state_names.empty()) j["state_names"] = state_names;
  return j;
}

TabularMdp TabularMdp::FromJson(const nlohmann::json& j) {
  TabularMdp mdp;
  try {
    mdp.name = j.at("name").get<std::string>();
    mdp.num_states = j.at("states").get<int>();
    mdp.num_actions = j.at("actions").get<int>();
    mdp.next = j.at("transitions").get<std::vector<std::vector<int>>>();
    mdp.reward = j.at("rewards").get<std::vector<std::vector<double>>>();
    mdp.terminal = j.at("terminal").get<std::vector<bool>>();
    mdp.initial_states = j.at("initial_states").get<std::vector<int>>();
    mdp.horizon = j.at("horizon").get<int>();
    if (j.contains("state_names")) {
      mdp.state_names = j.at("state_names").get<std::vector<std::string>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed mdp description: ") + e.what());
  }
  mdp.Validate();
  return mdp;
}

TabularMdp BuildFigure1Mdp() {
  using namespace figure1;
  TabularMdp mdp;
  mdp.name = "figure1";
  mdp.num_states = 6;
  mdp.num_actions = 2;
  mdp.state_names = {"s1", "s2", "s3", "s4", "s5", "s6"};
  mdp.next = {{kS3, kS4}, {kS4, kS4}, {kS5, kS5}, {kS5, kS6},
              {kTerminal, kTerminal}, {kTerminal, kTerminal}};
  // Only r45 = 2 is fixed by the construction; the rest satisfy
  //   green (s2,s4,s5) > red (s1,s3,s5) > yellow (s1,s4,s6), red > purple,
  //   GT stitch (s1,s4,s5) < red < biased stitch.
  const double r13 = 1.0, r35 = 2.5, r14 = 1.0, r46 = 0.5, r24 = 2.0, r45 = 2.0;
  mdp.reward = {{r13, r14}, {r24, r24}, {r35, r35}, {r45, r46}, {0.0, 0.0}, {0.0, 0.0}};
  mdp.terminal = {false, false, false, false, true, true};
  mdp.initial_states = {kS1, kS2};
  mdp.horizon = 2;
  return mdp;
}

namespace figure1 {

TabularMdp WithBiasedReward(const TabularMdp& mdp) {
  TabularMdp biased = mdp;
  biased.name = mdp.name + "-biased";
  biased.reward[kS4][0] = kBiasedR45;
  return biased;
}

std::vector<ColoredTrajectory> DatasetTrajectories() {
  return {{"red", kS1, {0, 0}},
          {"yellow", kS1, {1, 1}},
          {"green", kS2, {0, 0}},
          {"purple", kS2, {0, 1}}};
}

}  // namespace figure1

TabularMdp BuildGridworld(const GridworldSpec& spec) {
  if (spec.width <= 0 || spec.height <= 0 || spec.width * spec.height > 4096) {
    throw InvalidArgument("gridworld needs 1 <= width*height <= 4096");
  }
  int cells = spec.width * spec.height;
  auto inside = [&](int c) { return c >= 0 && c < cells; };
  if (!inside(spec.goal)) throw InvalidArgument("gridworld goal lies outside the grid");
  std::set<int> traps(spec.traps.begin(), spec.traps.end());
  for (int t : traps) {
    if (!inside(t)) throw InvalidArgument("gridworld trap lies outside the grid");
  }
  if (traps.count(spec.goal)) throw InvalidArgument("gridworld goal is also a trap");

  TabularMdp mdp;
  mdp.name = "gridworld-" + std::to_string(spec.width) + "x" + std::to_string(spec.height);
  mdp.num_states = cells;
  mdp.num_actions = 4;
  mdp.next.assign(cells, std::vector<int>(4));
  mdp.reward.assign(cells, std::vector<double>(4));
  mdp.terminal.assign(cells, false);
  mdp.terminal[spec.goal] = true;
  for (int t : traps) mdp.terminal[t] = true;
  const int dx[4] = {0, 1, 0, -1};
  const int dy[4] = {-1, 0, 1, 0};
  for (int c = 0; c < cells; ++c) {
    int x = c % spec.width;
    int y = c / spec.width;
    for (int a = 0; a < 4; ++a) {
      if (mdp.terminal[c]) {
        mdp.next[c][a] = kTerminal;
        mdp.reward[c][a] = 0.0;
        continue;
      }
      int nx = std::clamp(x + dx[a], 0, spec.width - 1);
      int ny = std::clamp(y + dy[a], 0, spec.height - 1);
      int n = ny * spec.width + nx;
      mdp.next[c][a] = n;
      if (n == spec.goal) {
        mdp.reward[c][a] = 1.0;
      } else if (traps.count(n)) {
        mdp.reward[c][a] = -1.0;
      } else {
        mdp.reward[c][a] = spec.step_penalty;
      }
    }
  }
  mdp.initial_states = spec.starts;
  mdp.horizon = spec.horizon;
  mdp.Validate();
  return mdp;
}

TabularMdp PlantRewards(const TabularMdp& mdp, int width, std::uint64_t seed) {
  if (width <= 0 || mdp.num_states % width != 0) {
    throw InvalidArgument("planted rewards need the grid width to divide the state count");
  }
  Rng rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  double px = phase(rng), py = phase(rng), pxy = phase(rng);
  int height = mdp.num_states / width;
  TabularMdp planted = mdp;
  planted.name = mdp.name + "-planted";
  for (int s = 0; s < mdp.num_states; ++s) {
    double fx = static_cast<double>(s % width) / std::max(1, width - 1);
    double fy = static_cast<double>(s / width) / std::max(1, height - 1);
    double field = (std::sin(2.0 * fx + px) + std::sin(2.5 * fy + py) +
                    std::sin(1.5 * (fx + fy) + pxy)) / 3.0;
    for (int a = 0; a < mdp.num_actions; ++a) {
      double noise = unit(rng);
      planted.reward[s][a] = mdp.terminal[s] ? 0.0 : 0.6 * field + 0.4 * noise;
    }
  }
  return planted;
}

ContinuousWrapper::ContinuousWrapper(const TabularMdp& mdp, double noise)
    : num_states_(mdp.num_states), num_actions_(mdp.num_actions), noise_(noise) {
  // Argmax decoding is exact while the jitter cannot close the unit gap.
  if (!(noise >= 0.0 && noise < 0.5)) {
    throw InvalidArgument("state noise must lie in [0, 0.5)");
  }
}

std::vector<double> ContinuousWrapper::EncodeState(int s, Rng& rng) const {
  std::vector<double> x(num_states_, 0.0);
  x[s] = 1.0;
  if (noise_ > 0.0) {
    std::uniform_real_distribution<double> jitter(-noise_, noise_);
    for (double& v : x) v += jitter(rng);
  }
  return x;
}

namespace {
int Argmax(const std::vector<double>& x) {
  return static_cast<int>(std::max_element(x.begin(), x.end()) - x.begin());
}
}  // namespace

int ContinuousWrapper::DecodeState(const std::vector<double>& x) const {
  if (x.size() != state_dim()) throw ShapeError("state vector has the wrong dimension");
  return Argmax(x);
}

std::vector<double> ContinuousWrapper::EncodeAction(int a) const {
  std::vector<double> x(num_actions_, 0.0);
  x[a] = 1.0;
  return x;
}

int ContinuousWrapper::DecodeAction(const std::vector<double>& x) const {
  if (x.size() != action_dim()) throw ShapeError("action vector has the wrong dimension");
  return Argmax(x);
}

BehaviorPolicy BehaviorPolicy::Uniform() { return {}; }

BehaviorPolicy BehaviorPolicy::EpsilonGreedy(std::vector<int> greedy, double epsilon) {
  BehaviorPolicy p;
  p.kind = Kind::kEpsilonOptimal;
  p.greedy = std::move(greedy);
  p.epsilon = epsilon;
  return p;
}

BehaviorPolicy BehaviorPolicy::Scripted(std::vector<ScriptedTrajectory> script) {
  BehaviorPolicy p;
  p.kind = Kind::kScripted;
  p.script = std::move(script);
  return p;
}

void BehaviorPolicy::Validate(const TabularMdp& mdp) const {
  switch (kind) {
    case Kind::kUniform:
      return;
    case Kind::kEpsilonOptimal:
      if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
        throw InvalidArgument("epsilon must lie in [0, 1]");
      }
      if (greedy.size() != static_cast<std::size_t>(mdp.num_states)) {
        throw InvalidArgument("greedy table needs one action per state");
      }
      for (int a : greedy) {
        if (a < 0 || a >= mdp.num_actions) throw InvalidArgument("greedy action out of range");
      }
      return;
    case Kind::kScripted:
      if (script.empty()) throw InvalidArgument("scripted policy has no trajectories");
      for (const auto& entry : script) {
        if (entry.start < 0 || entry.start >= mdp.num_states || mdp.terminal[entry.start]) {
          throw InvalidArgument("scripted trajectory has an invalid start state");
        }
        if (entry.actions.empty()) throw InvalidArgument("scripted trajectory is empty");
        int s = entry.start;
        for (std::size_t t = 0; t < entry.actions.size(); ++t) {
          int a = entry.actions[t];
          if (a < 0 || a >= mdp.num_actions) {
            throw InvalidArgument("scripted action out of range");
          }
          bool last = t + 1 == entry.actions.size();
          if (mdp.Ends(s, a) != last) {
            throw InvalidArgument("scripted trajectory does not end where the mdp ends");
          }
          s = mdp.Next(s, a);
        }
      }
      return;
  }
}

std::vector<Trajectory> Rollout(const TabularMdp& mdp, const BehaviorPolicy& policy,
                                std::uint64_t seed, int count,
                                const ContinuousWrapper& wrapper,
                                const std::string& id_prefix) {
  if (count < 1) throw InvalidArgument("rollout count must be at least 1");
  mdp.Validate();
  policy.Validate(mdp);
  Rng rng(seed);
  std::uniform_int_distribution<int> pick_start(
      0, static_cast<int>(mdp.initial_states.size()) - 1);
  std::uniform_int_distribution<int> pick_action(0, mdp.num_actions - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  std::vector<Trajectory> out;
  out.reserve(count);
  for (int episode = 0; episode < count; ++episode) {
    const ScriptedTrajectory* scripted = nullptr;
    int s;
    if (policy.kind == BehaviorPolicy::Kind::kScripted) {
      scripted = &policy.script[episode % policy.script.size()];
      s = scripted->start;
    } else {
      s = mdp.initial_states[pick_start(rng)];
    }
    Trajectory traj;
    traj.id = id_prefix + std::to_string(episode);
    for (int t = 0; t < mdp.horizon; ++t) {
      int a;
      switch (policy.kind) {
        case BehaviorPolicy::Kind::kUniform:
          a = pick_action(rng);
          break;
        case BehaviorPolicy::Kind::kEpsilonOptimal:
          a = coin(rng) < policy.epsilon ? pick_action(rng) : policy.greedy[s];
          break;
        case BehaviorPolicy::Kind::kScripted:
          a = scripted->actions[t];
          break;
      }
      traj.state_ids.push_back(s);
      traj.action_ids.push_back(a);
      traj.states.push_back(wrapper.EncodeState(s, rng));
      traj.actions.push_back(wrapper.EncodeAction(a));
      traj.rewards.push_back(mdp.reward[s][a]);
      bool ends = mdp.Ends(s, a);
      traj.terminals.push_back(ends);
      if (ends) break;
      s = mdp.Next(s, a);
      if (scripted && t + 1 == static_cast<int>(scripted->actions.size())) break;
    }
    traj.RefreshRtg();
    out.push_back(std::move(traj));
  }
  return out;
}

bool IsReplayable(const TabularMdp& mdp, const Trajectory& trajectory) {
  if (trajectory.state_ids.empty() ||
      trajectory.state_ids.size() != trajectory.action_ids.size()) {
    return false;
  }
  int s = trajectory.state_ids.front();
  for (std::size_t t = 0; t < trajectory.size(); ++t) {
    if (trajectory.state_ids[t] != s) return false;
    int a = trajectory.action_ids[t];
    if (a < 0 || a >= mdp.num_actions) return false;
    bool last = t + 1 == trajectory.size();
    if (mdp.Ends(s, a) && !last) return false;
    s = mdp.Next(s, a);
  }
  return true;
}

std::vector<int> StatePath(const TabularMdp& mdp, const Trajectory& trajectory) {
  std::vector<int> path = trajectory.state_ids;
  if (!path.empty()) {
    int last = mdp.Next(path.back(), trajectory.action_ids.back());
    if (last != kTerminal) path.push_back(last);
  }
  return path;
}

}  // namespace dtr
