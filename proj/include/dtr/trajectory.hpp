#pragma once

#include <string>
#include <vector>

#include "dtr/tensor.hpp"

namespace dtr {

// One episode. Per-step vectors have equal length; rtg is derived from
// rewards. Tabular ids are kept when the episode comes from a tabular
// environment so that oracles can reason about it exactly.
struct Trajectory {
  std::string id;
  std::vector<std::vector<double>> states;
  std::vector<std::vector<double>> actions;
  std::vector<double> rewards;
  std::vector<bool> terminals;
  std::vector<double> rtg;
  std::vector<int> state_ids;   // empty for non-tabular data
  std::vector<int> action_ids;  // empty for non-tabular data

  std::size_t size() const { return rewards.size(); }
  double Return() const { return rtg.empty() ? 0.0 : rtg.front(); }
  // True when the last step entered a terminal condition (not a timeout).
  bool Terminated() const { return !terminals.empty() && terminals.back(); }

  // Recomputes rtg from rewards.
  void RefreshRtg();
  // Throws InvalidArgument when lengths disagree or rtg is stale.
  void Validate() const;

  bool operator==(const Trajectory&) const = default;
};

// Suffix sums R_t = sum_{t' >= t} r_t'. Throws InvalidArgument on empty input
// and NumericalError on non-finite input.
std::vector<double> ComputeRtg(const std::vector<double>& rewards);

}  // namespace dtr
