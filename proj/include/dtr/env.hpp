#pragma once

// Deterministic tabular environments, a continuous encoding for the network
// stack, and behavior policies that generate offline data.

#include <cstdint>
#include <string>
#include <vector>

#include "dtr/trajectory.hpp"
#include "json.hpp"

namespace dtr {

// Transition target meaning "the episode ends without a next state".
inline constexpr int kTerminal = -1;

struct TabularMdp {
  std::string name;
  int num_states = 0;
  int num_actions = 0;
  // next[s][a] is a state index or kTerminal.
  std::vector<std::vector<int>> next;
  std::vector<std::vector<double>> reward;
  // Entering a terminal state ends the episode; terminal states never act.
  std::vector<bool> terminal;
  std::vector<int> initial_states;
  int horizon = 0;
  std::vector<std::string> state_names;  // optional

  // Next state after (s, a), or kTerminal when the episode ends there.
  // Entering a terminal state also ends the episode; use Ends() to test.
  int Next(int s, int a) const { return next[s][a]; }
  bool Ends(int s, int a) const;
  std::string StateName(int s) const;

  // Throws InvalidArgument when a table entry is out of range or the tables
  // disagree in shape.
  void Validate() const;

  nlohmann::json ToJson() const;
  static TabularMdp FromJson(const nlohmann::json& j);
};

// The figure1 stitching MDP. States s1..s6 are indices 0..5. Action 0 goes to
// the first listed successor and action 1 to the second; states with one
// successor map both actions to it.
//   s1 -> {s3, s4}   s2 -> {s4}   s3 -> {s5}   s4 -> {s5, s6}
// s5 and s6 are terminal. Initial states are s1 and s2.
TabularMdp BuildFigure1Mdp();

namespace figure1 {
inline constexpr int kS1 = 0, kS2 = 1, kS3 = 2, kS4 = 3, kS5 = 4, kS6 = 5;
// The biased estimate of r(s4 -> s5) used in the stitching experiment.
inline constexpr double kBiasedR45 = 3.0;

// Same MDP with r(s4 -> s5) raised to kBiasedR45.
TabularMdp WithBiasedReward(const TabularMdp& mdp);

struct ColoredTrajectory {
  std::string color;
  int start;
  std::vector<int> actions;
};
// red (s1,s3,s5), yellow (s1,s4,s6), green (s2,s4,s5), purple (s2,s4,s6).
std::vector<ColoredTrajectory> DatasetTrajectories();
}  // namespace figure1

struct GridworldSpec {
  int width = 8;
  int height = 8;
  int goal = 63;
  std::vector<int> traps;
  double step_penalty = -0.01;
  std::vector<int> starts = {0};
  int horizon = 64;
};

// Cells are indexed y * width + x. Actions: 0 up, 1 right, 2 down, 3 left;
// moving into a wall leaves the agent in place. Entering the goal pays +1,
// entering a trap pays -1, both end the episode. Every other move pays
// step_penalty.
TabularMdp BuildGridworld(const GridworldSpec& spec);

// Replaces the reward of every non-terminal (s, a) with a dense planted
// reward: a smooth potential over the grid plus a per-action term, drawn
// from `seed`. Values lie in [-1, 1].
TabularMdp PlantRewards(const TabularMdp& mdp, int width, std::uint64_t seed);

// One-hot state encoding with additive U(-noise, noise) jitter, decoded by
// argmax. Actions are one-hot vectors; any vector decodes to its argmax.
class ContinuousWrapper {
 public:
  explicit ContinuousWrapper(const TabularMdp& mdp, double noise = 0.01);

  std::size_t state_dim() const { return static_cast<std::size_t>(num_states_); }
  std::size_t action_dim() const { return static_cast<std::size_t>(num_actions_); }
  double noise() const { return noise_; }

  std::vector<double> EncodeState(int s, Rng& rng) const;
  int DecodeState(const std::vector<double>& x) const;
  std::vector<double> EncodeAction(int a) const;
  // Lowest index wins ties.
  int DecodeAction(const std::vector<double>& x) const;

 private:
  int num_states_;
  int num_actions_;
  double noise_;
};

struct ScriptedTrajectory {
  int start = 0;
  std::vector<int> actions;
};

struct BehaviorPolicy {
  enum class Kind { kUniform, kEpsilonOptimal, kScripted };

  Kind kind = Kind::kUniform;
  double epsilon = 0.0;
  // Greedy action per state for kEpsilonOptimal.
  std::vector<int> greedy;
  // Replayed in order (cycling) for kScripted.
  std::vector<ScriptedTrajectory> script;

  static BehaviorPolicy Uniform();
  static BehaviorPolicy EpsilonGreedy(std::vector<int> greedy, double epsilon);
  static BehaviorPolicy Scripted(std::vector<ScriptedTrajectory> script);

  void Validate(const TabularMdp& mdp) const;
};

// Generates `count` episodes. Start states are drawn uniformly from the
// initial-state set (scripted episodes use their own start). Episodes end on
// termination or after mdp.horizon steps. Ids are "<prefix><index>".
std::vector<Trajectory> Rollout(const TabularMdp& mdp, const BehaviorPolicy& policy,
                                std::uint64_t seed, int count,
                                const ContinuousWrapper& wrapper,
                                const std::string& id_prefix = "traj-");

// True when replaying the trajectory's actions from its first state through
// the transition table visits exactly its recorded states.
bool IsReplayable(const TabularMdp& mdp, const Trajectory& trajectory);

// Visited states including the state the episode ends in (if any).
std::vector<int> StatePath(const TabularMdp& mdp, const Trajectory& trajectory);

}  // namespace dtr
