#include "dtr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_map>

#include "dtr/errors.hpp"
#include "json.hpp"

namespace dtr {

using nlohmann::json;

std::vector<double> ComputeRtg(const std::vector<double>& rewards) {
  if (rewards.empty()) throw InvalidArgument("cannot compute return-to-go of an empty sequence");
  std::vector<double> rtg(rewards.size());
  double running = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    if (!std::isfinite(rewards[t])) throw NumericalError("non-finite reward");
    running = rewards[t] + running;
    rtg[t] = running;
  }
  return rtg;
}

void Trajectory::RefreshRtg() { rtg = ComputeRtg(rewards); }

void Trajectory::Validate() const {
  std::size_t n = rewards.size();
  if (n == 0) throw InvalidArgument("trajectory " + id + " is empty");
  if (states.size() != n || actions.size() != n || terminals.size() != n || rtg.size() != n) {
    throw InvalidArgument("trajectory " + id + " has per-step fields of unequal length");
  }
  if (!state_ids.empty() && (state_ids.size() != n || action_ids.size() != n)) {
    throw InvalidArgument("trajectory " + id + " has tabular ids of the wrong length");
  }
  for (std::size_t t = 0; t < n; ++t) {
    if (states[t].size() != states[0].size() || actions[t].size() != actions[0].size()) {
      throw InvalidArgument("trajectory " + id + " mixes vector dimensions");
    }
    if (t + 1 < n && terminals[t]) {
      throw InvalidArgument("trajectory " + id + " continues after a terminal step");
    }
  }
  if (rtg != ComputeRtg(rewards)) {
    throw InvalidArgument("trajectory " + id + " has a stale return-to-go");
  }
}

OfflineDataset::OfflineDataset(std::vector<Trajectory> trajectories, DatasetMetadata metadata)
    : trajectories_(std::move(trajectories)), metadata_(std::move(metadata)) {
  std::unordered_map<std::string, std::size_t> seen;
  return_max_ = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < trajectories_.size(); ++i) {
    const auto& traj = trajectories_[i];
    traj.Validate();
    if (!seen.emplace(traj.id, i).second) {
      throw InvalidArgument("duplicate trajectory id " + traj.id);
    }
    if (traj.states[0].size() != trajectories_[0].states[0].size() ||
        traj.actions[0].size() != trajectories_[0].actions[0].size()) {
      throw InvalidArgument("trajectory " + traj.id + " has different vector dimensions");
    }
    return_max_ = std::max(return_max_, traj.Return());
  }
  if (trajectories_.empty()) return_max_ = 0.0;
}

std::size_t OfflineDataset::num_steps() const {
  std::size_t n = 0;
  for (const auto& t : trajectories_) n += t.size();
  return n;
}

std::size_t OfflineDataset::IndexOf(const std::string& id) const {
  for (std::size_t i = 0; i < trajectories_.size(); ++i) {
    if (trajectories_[i].id == id) return i;
  }
  throw InvalidArgument("unknown trajectory id " + id);
}

OfflineDataset OfflineDataset::WithRewards(const std::vector<std::vector<double>>& rewards,
                                           const std::string& provenance) const {
  if (rewards.size() != trajectories_.size()) {
    throw ShapeError("relabeling needs one reward sequence per trajectory");
  }
  std::vector<Trajectory> out = trajectories_;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (rewards[i].size() != out[i].size()) {
      throw ShapeError("relabeled reward sequence for " + out[i].id + " has the wrong length");
    }
    out[i].rewards = rewards[i];
    out[i].RefreshRtg();
  }
  DatasetMetadata meta = metadata_;
  meta.reward_provenance = provenance;
  return OfflineDataset(std::move(out), std::move(meta));
}

std::vector<double> StateNormalizer::Apply(const std::vector<double>& state) const {
  if (empty()) return state;
  if (state.size() != mean.size()) throw ShapeError("state has the wrong dimension");
  std::vector<double> out(state.size());
  for (std::size_t i = 0; i < state.size(); ++i) out[i] = (state[i] - mean[i]) / std[i];
  return out;
}

StateNormalizer FitStateNormalizer(const OfflineDataset& dataset, double std_floor) {
  if (dataset.size() == 0) throw InvalidArgument("cannot fit a normalizer on an empty dataset");
  std::size_t dim = dataset.at(0).states[0].size();
  StateNormalizer norm;
  norm.mean.assign(dim, 0.0);
  norm.std.assign(dim, 0.0);
  double n = static_cast<double>(dataset.num_steps());
  for (const auto& t : dataset.trajectories()) {
    for (const auto& s : t.states) {
      for (std::size_t i = 0; i < dim; ++i) norm.mean[i] += s[i];
    }
  }
  for (double& m : norm.mean) m /= n;
  for (const auto& t : dataset.trajectories()) {
    for (const auto& s : t.states) {
      for (std::size_t i = 0; i < dim; ++i) {
        norm.std[i] += (s[i] - norm.mean[i]) * (s[i] - norm.mean[i]);
      }
    }
  }
  for (double& v : norm.std) v = std::max(std::sqrt(v / n), std_floor);
  return norm;
}

std::vector<Segment> SampleSegments(const OfflineDataset& dataset, std::size_t length,
                                    std::size_t count, std::uint64_t seed, bool truncate) {
  if (length == 0) throw InvalidArgument("segment length must be at least 1");
  // Cumulative count of valid starts, so that a single uniform draw selects
  // a (trajectory, start) pair uniformly.
  std::vector<std::size_t> cumulative;
  std::size_t total = 0;
  for (const auto& traj : dataset.trajectories()) {
    if (traj.size() >= length) {
      total += traj.size() - length + 1;
    } else if (truncate) {
      total += 1;
    }
    cumulative.push_back(total);
  }
  if (total == 0) {
    throw InvalidArgument("no trajectory is at least " + std::to_string(length) +
                          " steps long and truncation is disabled");
  }
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  std::vector<Segment> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::size_t draw = pick(rng);
    std::size_t i = std::upper_bound(cumulative.begin(), cumulative.end(), draw) -
                    cumulative.begin();
    std::size_t before = i == 0 ? 0 : cumulative[i - 1];
    std::size_t n = dataset.at(i).size();
    if (n >= length) {
      out.push_back({i, draw - before, length});
    } else {
      out.push_back({i, 0, n});
    }
  }
  return out;
}

namespace {

void CheckSegment(const OfflineDataset& dataset, const Segment& s) {
  if (s.trajectory >= dataset.size() || s.length == 0 ||
      s.start + s.length > dataset.at(s.trajectory).size()) {
    throw InvalidArgument("segment does not resolve against the dataset");
  }
}

}  // namespace

double SegmentReturn(const OfflineDataset& dataset, const Segment& segment) {
  CheckSegment(dataset, segment);
  const auto& r = dataset.at(segment.trajectory).rewards;
  double total = 0.0;
  for (std::size_t t = segment.start; t < segment.start + segment.length; ++t) total += r[t];
  return total;
}

double PreferenceProbability(double return0, double return1) {
  // exp(R1) / (exp(R0) + exp(R1)) written to avoid overflow.
  double d = return1 - return0;
  if (d >= 0.0) return 1.0 / (1.0 + std::exp(-d));
  double e = std::exp(d);
  return e / (1.0 + e);
}

double Annotate(const OfflineDataset& dataset, const Segment& seg0, const Segment& seg1,
                AnnotationMode mode, Rng& rng) {
  double r0 = SegmentReturn(dataset, seg0);
  double r1 = SegmentReturn(dataset, seg1);
  if (mode == AnnotationMode::kDeterministic) {
    if (r1 > r0) return 1.0;
    if (r1 < r0) return 0.0;
    return 0.5;
  }
  std::bernoulli_distribution label(PreferenceProbability(r0, r1));
  return label(rng) ? 1.0 : 0.0;
}

PreferenceSet MakePreferences(const OfflineDataset& dataset, std::size_t length,
                              std::size_t count, AnnotationMode mode, std::uint64_t seed,
                              bool truncate) {
  PreferenceSet prefs;
  prefs.mode = mode == AnnotationMode::kDeterministic ? "deterministic" : "stochastic";
  prefs.seed = seed;
  if (count == 0) return prefs;
  auto segments = SampleSegments(dataset, length, 2 * count, seed, truncate);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  prefs.pairs.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const Segment& a = segments[2 * k];
    const Segment& b = segments[2 * k + 1];
    prefs.pairs.push_back({a, b, Annotate(dataset, a, b, mode, rng)});
  }
  return prefs;
}

void ValidatePreferences(const OfflineDataset& dataset, const PreferenceSet& prefs) {
  for (const auto& p : prefs.pairs) {
    CheckSegment(dataset, p.seg0);
    CheckSegment(dataset, p.seg1);
    if (p.y != 0.0 && p.y != 0.5 && p.y != 1.0) {
      throw InvalidArgument("preference label must be 0, 0.5 or 1");
    }
  }
}

// ---------------------------------------------------------------------------
// Storage

namespace {

std::ofstream OpenForWrite(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ArtifactError("cannot open " + path.string() + " for writing");
  return out;
}

json TrajectoryToJson(const Trajectory& t) {
  json j;
  j["id"] = t.id;
  j["states"] = t.states;
  j["actions"] = t.actions;
  j["rewards"] = t.rewards;
  j["terminals"] = t.terminals;
  if (!t.state_ids.empty()) {
    j["state_ids"] = t.state_ids;
    j["action_ids"] = t.action_ids;
  }
  return j;
}

Trajectory TrajectoryFromJson(const json& j) {
  Trajectory t;
  t.id = j.at("id").get<std::string>();
  t.states = j.at("states").get<std::vector<std::vector<double>>>();
  t.actions = j.at("actions").get<std::vector<std::vector<double>>>();
  t.rewards = j.at("rewards").get<std::vector<double>>();
  t.terminals = j.at("terminals").get<std::vector<bool>>();
  if (j.contains("state_ids")) {
    t.state_ids = j.at("state_ids").get<std::vector<int>>();
    t.action_ids = j.at("action_ids").get<std::vector<int>>();
  }
  t.RefreshRtg();
  return t;
}

json SegmentToJson(const OfflineDataset& dataset, const Segment& s) {
  return {{"traj", dataset.at(s.trajectory).id}, {"start", s.start}, {"len", s.length}};
}

// Reads a JSON-lines file, calling `fn(json, line_number)` for each non-empty line.
template <typename Fn>
void ForEachLine(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("cannot open " + path.string());
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": malformed JSON: " + e.what(), number);
    }
    try {
      fn(j, number);
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": bad record: " + e.what(), number);
    } catch (const InvalidArgument& e) {
      throw ParseError(path.string() + ": " + e.what(), number);
    } catch (const NumericalError& e) {
      throw ParseError(path.string() + ": " + e.what(), number);
    }
  }
}

}  // namespace

void SaveDataset(const OfflineDataset& dataset, const std::filesystem::path& path) {
  auto out = OpenForWrite(path);
  const auto& m = dataset.metadata();
  json header = {{"env", m.env},
                 {"seed", m.seed},
                 {"reward_provenance", m.reward_provenance},
                 {"return_max", dataset.return_max()},
                 {"count", dataset.size()}};
  if (!m.config_hash.empty()) header["config_hash"] = m.config_hash;
  out << header.dump() << '\n';
  for (const auto& t : dataset.trajectories()) out << TrajectoryToJson(t).dump() << '\n';
  if (!out) throw ArtifactError("failed writing " + path.string());
}

OfflineDataset LoadDataset(const std::filesystem::path& path) {
  DatasetMetadata meta;
  std::size_t expected = 0;
  double return_max = 0.0;
  bool have_header = false;
  std::size_t last_line = 0;
  std::vector<Trajectory> trajectories;
  ForEachLine(path, [&](const json& j, std::size_t line) {
    last_line = line;
    if (!have_header) {
      meta.env = j.at("env").get<std::string>();
      meta.seed = j.at("seed").get<std::uint64_t>();
      meta.reward_provenance = j.at("reward_provenance").get<std::string>();
      if (j.contains("config_hash")) meta.config_hash = j.at("config_hash").get<std::string>();
      return_max = j.at("return_max").get<double>();
      expected = j.at("count").get<std::size_t>();
      have_header = true;
      return;
    }
    Trajectory t = TrajectoryFromJson(j);
    t.Validate();
    trajectories.push_back(std::move(t));
  });
  if (!have_header) throw ParseError(path.string() + ": missing header line", 1);
  if (trajectories.size() != expected) {
    throw ParseError(path.string() + ": header announces " + std::to_string(expected) +
                         " trajectories, found " + std::to_string(trajectories.size()),
                     last_line);
  }
  OfflineDataset dataset;
  try {
    dataset = OfflineDataset(std::move(trajectories), std::move(meta));
  } catch (const InvalidArgument& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
  if (dataset.size() > 0 && dataset.return_max() != return_max) {
    throw ParseError(path.string() + ": header return_max disagrees with the trajectories", 1);
  }
  return dataset;
}

void SavePreferences(const OfflineDataset& dataset, const PreferenceSet& prefs,
                     const std::filesystem::path& path) {
  ValidatePreferences(dataset, prefs);
  auto out = OpenForWrite(path);
  json header = {{"kind", "preferences"},
                 {"mode", prefs.mode},
                 {"seed", prefs.seed},
                 {"count", prefs.pairs.size()}};
  if (!prefs.config_hash.empty()) header["config_hash"] = prefs.config_hash;
  out << header.dump() << '\n';
  for (const auto& p : prefs.pairs) {
    json record = {{"seg0", SegmentToJson(dataset, p.seg0)},
                   {"seg1", SegmentToJson(dataset, p.seg1)},
                   {"y", p.y}};
    out << record.dump() << '\n';
  }
  if (!out) throw ArtifactError("failed writing " + path.string());
}

PreferenceSet LoadPreferences(const OfflineDataset& dataset,
                              const std::filesystem::path& path) {
  PreferenceSet prefs;
  bool have_header = false;
  std::size_t expected = 0;
  std::size_t last_line = 0;
  auto segment = [&](const json& j) {
    Segment s{dataset.IndexOf(j.at("traj").get<std::string>()), j.at("start").get<std::size_t>(),
              j.at("len").get<std::size_t>()};
    CheckSegment(dataset, s);
    return s;
  };
  ForEachLine(path, [&](const json& j, std::size_t line) {
    last_line = line;
    if (!have_header) {
      if (j.at("kind").get<std::string>() != "preferences") {
        throw InvalidArgument("not a preference file");
      }
      prefs.mode = j.at("mode").get<std::string>();
      prefs.seed = j.at("seed").get<std::uint64_t>();
      expected = j.at("count").get<std::size_t>();
      if (j.contains("config_hash")) prefs.config_hash = j.at("config_hash").get<std::string>();
      have_header = true;
      return;
    }
    PreferencePair p{segment(j.at("seg0")), segment(j.at("seg1")), j.at("y").get<double>()};
    if (p.y != 0.0 && p.y != 0.5 && p.y != 1.0) {
      throw InvalidArgument("preference label must be 0, 0.5 or 1");
    }
    prefs.pairs.push_back(p);
  });
  if (!have_header) throw ParseError(path.string() + ": missing header line", 1);
  if (prefs.pairs.size() != expected) {
    throw ParseError(path.string() + ": header announces " + std::to_string(expected) +
                         " records, found " + std::to_string(prefs.pairs.size()),
                     last_line);
  }
  return prefs;
}

}  // namespace dtr
