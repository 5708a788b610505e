#pragma once

// Offline trajectory datasets, preference pairs and their JSON-lines storage.
//
// Dataset file: one header line
//   {"env", "seed", "reward_provenance", "return_max", "count", "config_hash"?}
// followed by one trajectory record per line
//   {"id", "states", "actions", "rewards", "terminals", "state_ids"?, "action_ids"?}.
// Preference file: one header line {"kind": "preferences", "mode", "seed",
// "count", "config_hash"?} followed by one record per line
//   {"seg0": {"traj", "start", "len"}, "seg1": {...}, "y"}.
// "count" lets the reader detect files truncated at a line boundary.
// y is the probability that seg1 is preferred over seg0.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dtr/trajectory.hpp"

namespace dtr {

struct DatasetMetadata {
  std::string env;
  std::uint64_t seed = 0;
  std::string reward_provenance = "gt";  // gt | relabeled
  std::string config_hash;

  bool operator==(const DatasetMetadata&) const = default;
};

class OfflineDataset {
 public:
  OfflineDataset() = default;
  // Throws InvalidArgument on duplicate ids or invalid trajectories.
  OfflineDataset(std::vector<Trajectory> trajectories, DatasetMetadata metadata);

  const std::vector<Trajectory>& trajectories() const { return trajectories_; }
  const DatasetMetadata& metadata() const { return metadata_; }
  DatasetMetadata& mutable_metadata() { return metadata_; }
  std::size_t size() const { return trajectories_.size(); }
  std::size_t num_steps() const;
  // Maximum of rtg[0] over trajectories.
  double return_max() const { return return_max_; }

  const Trajectory& at(std::size_t i) const { return trajectories_.at(i); }
  // Throws InvalidArgument for an unknown id.
  std::size_t IndexOf(const std::string& id) const;

  // Copy with rewards replaced (and rtg recomputed) by `rewards[i][t]`.
  OfflineDataset WithRewards(const std::vector<std::vector<double>>& rewards,
                             const std::string& provenance) const;

  bool operator==(const OfflineDataset& other) const {
    return trajectories_ == other.trajectories_ && metadata_ == other.metadata_ &&
           return_max_ == other.return_max_;
  }

 private:
  std::vector<Trajectory> trajectories_;
  DatasetMetadata metadata_;
  double return_max_ = 0.0;
};

// Per-dimension state standardization fitted on a dataset.
struct StateNormalizer {
  std::vector<double> mean;
  std::vector<double> std;

  std::vector<double> Apply(const std::vector<double>& state) const;
  bool empty() const { return mean.empty(); }
};

// Mean and population std over every state in `dataset`; std is floored at
// `std_floor` so that constant dimensions stay finite.
StateNormalizer FitStateNormalizer(const OfflineDataset& dataset, double std_floor = 0.1);

struct Segment {
  std::size_t trajectory = 0;  // index into the dataset
  std::size_t start = 0;
  std::size_t length = 0;

  bool operator==(const Segment&) const = default;
};

struct PreferencePair {
  Segment seg0;
  Segment seg1;
  double y = 0.5;

  bool operator==(const PreferencePair&) const = default;
};

struct PreferenceSet {
  std::vector<PreferencePair> pairs;
  std::string mode = "deterministic";  // deterministic | stochastic
  std::uint64_t seed = 0;
  std::string config_hash;

  bool operator==(const PreferenceSet&) const = default;
};

// Uniform draws over all valid (trajectory, start) pairs. With `truncate`,
// trajectories shorter than `length` contribute one whole-trajectory segment;
// without it they are skipped, and an error is thrown when none qualifies.
std::vector<Segment> SampleSegments(const OfflineDataset& dataset, std::size_t length,
                                    std::size_t count, std::uint64_t seed,
                                    bool truncate = false);

// Sum of dataset rewards over the segment.
double SegmentReturn(const OfflineDataset& dataset, const Segment& segment);

// Bradley-Terry probability that seg1 is preferred, given segment returns.
double PreferenceProbability(double return0, double return1);

enum class AnnotationMode { kDeterministic, kStochastic };

// Labels a pair using the rewards stored in `dataset` as ground truth.
// Deterministic: 1 if seg1 has the larger return, 0 if smaller, 0.5 if equal.
// Stochastic: Bernoulli(PreferenceProbability) drawn from `rng`.
double Annotate(const OfflineDataset& dataset, const Segment& seg0, const Segment& seg1,
                AnnotationMode mode, Rng& rng);

// Samples 2 * count segments, pairs them in order and labels each pair.
PreferenceSet MakePreferences(const OfflineDataset& dataset, std::size_t length,
                              std::size_t count, AnnotationMode mode, std::uint64_t seed,
                              bool truncate = false);

// Validates segment ranges and labels against `dataset`.
void ValidatePreferences(const OfflineDataset& dataset, const PreferenceSet& prefs);

void SaveDataset(const OfflineDataset& dataset, const std::filesystem::path& path);
// Throws ParseError (with line number) on malformed content.
OfflineDataset LoadDataset(const std::filesystem::path& path);

void SavePreferences(const OfflineDataset& dataset, const PreferenceSet& prefs,
                     const std::filesystem::path& path);
PreferenceSet LoadPreferences(const OfflineDataset& dataset,
                              const std::filesystem::path& path);

}  // namespace dtr
