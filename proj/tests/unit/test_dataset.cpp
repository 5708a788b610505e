#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "dtr/dataset.hpp"
#include "dtr/env.hpp"
#include "dtr/errors.hpp"

using namespace dtr;

namespace {

std::filesystem::path TempDir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("dtr_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

OfflineDataset Figure1Dataset() {
  TabularMdp mdp = BuildFigure1Mdp();
  ContinuousWrapper wrapper(mdp);
  std::vector<ScriptedTrajectory> script;
  for (const auto& c : figure1::DatasetTrajectories()) script.push_back({c.start, c.actions});
  auto trajs = Rollout(mdp, BehaviorPolicy::Scripted(script), 3, 4, wrapper);
  for (std::size_t i = 0; i < 4; ++i) trajs[i].id = figure1::DatasetTrajectories()[i].color;
  return OfflineDataset(std::move(trajs), {"figure1", 3, "gt", ""});
}

OfflineDataset GridDataset(int episodes, std::uint64_t seed) {
  GridworldSpec spec;
  spec.traps = {27, 28};
  TabularMdp mdp = BuildGridworld(spec);
  ContinuousWrapper wrapper(mdp);
  return OfflineDataset(Rollout(mdp, BehaviorPolicy::Uniform(), seed, episodes, wrapper),
                        {mdp.name, seed, "gt", ""});
}

// Brute-force suffix sums, independent of ComputeRtg's running total.
std::vector<double> SuffixSums(const std::vector<double>& r) {
  std::vector<double> out;
  for (std::size_t t = 0; t < r.size(); ++t) {
    double total = 0.0;
    for (std::size_t k = r.size(); k-- > t;) total += r[k];
    out.push_back(total);
  }
  return out;
}

}  // namespace

TEST_CASE("return-to-go examples") {
  CHECK(ComputeRtg({1, 1, 1}) == std::vector<double>{3, 2, 1});
  CHECK(ComputeRtg({5}) == std::vector<double>{5});
  CHECK_THROWS_AS(ComputeRtg({}), InvalidArgument);
  OfflineDataset d = Figure1Dataset();
  const auto& red = d.at(0);
  CHECK(red.rtg == SuffixSums(red.rewards));
  CHECK(red.rtg == std::vector<double>{3.5, 2.5});
}

TEST_CASE("rtg recursion holds exactly on generated data") {
  OfflineDataset d = GridDataset(50, 1);
  for (const auto& t : d.trajectories()) {
    CHECK(t.rtg == ComputeRtg(t.rewards));
    CHECK(t.rtg.back() == t.rewards.back());
    for (std::size_t i = 0; i + 1 < t.size(); ++i) CHECK(t.rtg[i] == t.rewards[i] + t.rtg[i + 1]);
  }
}

TEST_CASE("dataset metadata and invariants") {
  OfflineDataset d = Figure1Dataset();
  CHECK(d.size() == 4);
  CHECK(d.return_max() == 4.0);  // green
  CHECK(d.IndexOf("purple") == 3);
  CHECK_THROWS_AS(d.IndexOf("blue"), InvalidArgument);
  auto trajs = d.trajectories();
  trajs[1].id = trajs[0].id;
  CHECK_THROWS_AS(OfflineDataset(trajs, d.metadata()), InvalidArgument);
  trajs = d.trajectories();
  trajs[0].rtg[0] += 1.0;
  CHECK_THROWS_AS(OfflineDataset(trajs, d.metadata()), InvalidArgument);

  OfflineDataset relabeled = d.WithRewards({{0, 1}, {0, 0}, {2, 2}, {1, 1}}, "relabeled");
  CHECK(relabeled.metadata().reward_provenance == "relabeled");
  CHECK(relabeled.return_max() == 4.0);
  CHECK(relabeled.at(0).rtg == std::vector<double>{1, 1});
}

TEST_CASE("segment sampling") {
  SUBCASE("single trajectory of exactly the segment length") {
    OfflineDataset d = Figure1Dataset();
    OfflineDataset one({d.at(0)}, d.metadata());
    for (const auto& s : SampleSegments(one, 2, 20, 1)) CHECK(s == Segment{0, 0, 2});
  }
  SUBCASE("determinism and ranges") {
    OfflineDataset d = GridDataset(40, 2);
    auto a = SampleSegments(d, 5, 2000, 9, true);
    CHECK(a.size() == 2000);
    CHECK(a == SampleSegments(d, 5, 2000, 9, true));
    for (const auto& s : a) {
      CHECK(s.start + s.length <= d.at(s.trajectory).size());
      CHECK(s.length >= 1);
    }
  }
  SUBCASE("too long without truncation") {
    OfflineDataset d = Figure1Dataset();
    CHECK_THROWS_AS(SampleSegments(d, 3, 1, 0), InvalidArgument);
    for (const auto& s : SampleSegments(d, 3, 10, 0, true)) CHECK(s.length == 2);
  }
  SUBCASE("starts are uniform over valid pairs") {
    // Two trajectories of lengths 2 and 2 with H=1 give four equally likely pairs.
    OfflineDataset d = Figure1Dataset();
    OfflineDataset two({d.at(0), d.at(1)}, d.metadata());
    std::map<std::pair<std::size_t, std::size_t>, int> counts;
    for (const auto& s : SampleSegments(two, 1, 40000, 4)) counts[{s.trajectory, s.start}]++;
    CHECK(counts.size() == 4);
    for (auto& [key, n] : counts) CHECK(std::abs(n / 40000.0 - 0.25) < 0.01);
  }
}

TEST_CASE("deterministic annotation") {
  OfflineDataset d = Figure1Dataset();
  Rng rng(0);
  Segment red{0, 0, 2}, yellow{1, 0, 2}, green{2, 0, 2}, purple{3, 0, 2};
  auto label = [&](Segment a, Segment b) {
    return Annotate(d, a, b, AnnotationMode::kDeterministic, rng);
  };
  CHECK(label(red, red) == 0.5);
  CHECK(label(yellow, red) == 1.0);
  CHECK(label(red, yellow) == 0.0);
  CHECK(label(red, green) == 1.0);
  CHECK(label(purple, red) == 1.0);
  // Antisymmetry over all pairs of a random dataset.
  OfflineDataset g = GridDataset(30, 3);
  auto segs = SampleSegments(g, 3, 200, 5, true);
  for (std::size_t i = 0; i + 1 < segs.size(); i += 2) {
    double ab = Annotate(g, segs[i], segs[i + 1], AnnotationMode::kDeterministic, rng);
    double ba = Annotate(g, segs[i + 1], segs[i], AnnotationMode::kDeterministic, rng);
    if (SegmentReturn(g, segs[i]) == SegmentReturn(g, segs[i + 1])) {
      CHECK(ab == 0.5);
      CHECK(ba == 0.5);
    } else {
      CHECK(ab == 1.0 - ba);
    }
  }
}

TEST_CASE("stochastic annotation matches the logistic probability") {
  // Two one-step trajectories whose returns differ by ln 3.
  auto make = [](const std::string& id, double r) {
    Trajectory t;
    t.id = id;
    t.states = {{0.0}};
    t.actions = {{0.0}};
    t.rewards = {r};
    t.terminals = {true};
    t.RefreshRtg();
    return t;
  };
  OfflineDataset d({make("low", 0.0), make("high", std::log(3.0))}, {});
  CHECK(PreferenceProbability(0.0, std::log(3.0)) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(PreferenceProbability(0.0, -800.0) >= 0.0);
  CHECK(PreferenceProbability(0.0, 800.0) == 1.0);
  Rng rng(17);
  int ones = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    ones += Annotate(d, {0, 0, 1}, {1, 0, 1}, AnnotationMode::kStochastic, rng) == 1.0;
  }
  CHECK(std::abs(ones / static_cast<double>(draws) - 0.75) <= 0.02);
}

TEST_CASE("dataset save and load round trip") {
  auto dir = TempDir("dataset");
  OfflineDataset d = Figure1Dataset();
  d.mutable_metadata().config_hash = "abc123";
  SaveDataset(d, dir / "fig1.jsonl");
  OfflineDataset back = LoadDataset(dir / "fig1.jsonl");
  CHECK(back == d);

  OfflineDataset g = GridDataset(25, 8);
  SaveDataset(g, dir / "grid.jsonl");
  CHECK(LoadDataset(dir / "grid.jsonl") == g);
  std::filesystem::remove_all(dir);
}

TEST_CASE("malformed dataset files report the line") {
  auto dir = TempDir("dataset_bad");
  OfflineDataset d = Figure1Dataset();
  SaveDataset(d, dir / "good.jsonl");
  std::ifstream in(dir / "good.jsonl");
  std::stringstream buffer;
  buffer << in.rdbuf();
  std::string text = buffer.str();

  // Cut in the middle of the third line.
  std::size_t first = text.find('\n');
  std::size_t second = text.find('\n', first + 1);
  {
    std::ofstream out(dir / "cut.jsonl");
    out << text.substr(0, second + 10);
  }
  try {
    LoadDataset(dir / "cut.jsonl");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  // Cut at a line boundary: the record count exposes it.
  {
    std::ofstream out(dir / "short.jsonl");
    out << text.substr(0, second + 1);
  }
  CHECK_THROWS_AS(LoadDataset(dir / "short.jsonl"), ParseError);
  // Wrong field type.
  {
    std::ofstream out(dir / "type.jsonl");
    out << text.substr(0, first + 1) << "{\"id\": 3}\n";
  }
  try {
    LoadDataset(dir / "type.jsonl");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(LoadDataset(dir / "missing.jsonl"), ArtifactError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("preference files") {
  auto dir = TempDir("prefs");
  OfflineDataset g = GridDataset(60, 11);
  PreferenceSet prefs =
      MakePreferences(g, 4, 2000, AnnotationMode::kStochastic, 21, true);
  CHECK(prefs.pairs.size() == 2000);
  CHECK(prefs == MakePreferences(g, 4, 2000, AnnotationMode::kStochastic, 21, true));
  SavePreferences(g, prefs, dir / "prefs.jsonl");

  std::ifstream in(dir / "prefs.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 2001);  // header plus one record per pair

  CHECK(LoadPreferences(g, dir / "prefs.jsonl") == prefs);

  PreferenceSet none = MakePreferences(g, 4, 0, AnnotationMode::kDeterministic, 1, true);
  CHECK(none.pairs.empty());
  SavePreferences(g, none, dir / "none.jsonl");
  CHECK(LoadPreferences(g, dir / "none.jsonl").pairs.empty());

  PreferenceSet bad = prefs;
  bad.pairs[0].y = 0.3;
  CHECK_THROWS_AS(ValidatePreferences(g, bad), InvalidArgument);
  std::filesystem::remove_all(dir);
}
