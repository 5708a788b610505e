#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "dtr/errors.hpp"
#include "dtr/pipeline.hpp"
#include "json.hpp"

using namespace dtr;
namespace fs = std::filesystem;

namespace {

RunContext Context(const std::string& name, const std::string& preset = "figure1") {
  RunContext ctx;
  if (!preset.empty()) ctx.config.MergePreset(preset);
  ctx.out = fs::temp_directory_path() / ("dtr_pipeline_" + name);
  fs::remove_all(ctx.out);
  return ctx;
}

std::string ReadText(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

nlohmann::json ReadJson(const fs::path& path) { return nlohmann::json::parse(ReadText(path)); }

}  // namespace

TEST_CASE("gen-data on the figure1 preset is deterministic") {
  RunContext a = Context("gen_a");
  RunContext b = Context("gen_b");
  CmdGenData(a);
  CmdGenData(b);
  CHECK(LoadDataset(a.out / "dataset.jsonl").size() == 4);
  CHECK(ReadText(a.out / "dataset.jsonl") == ReadText(b.out / "dataset.jsonl"));
  std::string first = ReadText(a.out / "dataset.jsonl");
  CmdGenData(a);
  CHECK(ReadText(a.out / "dataset.jsonl") == first);
  CHECK(fs::exists(a.out / "config.txt"));
}

TEST_CASE("gridworld gen-data and annotation counts") {
  RunContext ctx = Context("grid", "");
  ctx.config.Merge("env = gridworld\ndata.mixture = 1:500\npref.length = 10\n", "t", {});
  CmdGenData(ctx);
  OfflineDataset d = LoadDataset(ctx.out / "dataset.jsonl");
  CHECK(d.size() == 500);
  CmdAnnotate(ctx);
  CHECK(LoadPreferences(d, ctx.out / "preferences.jsonl").pairs.size() == 2000);

  std::ostringstream log;
  ctx.log = &log;
  ctx.config.Set("pref.count", "0");
  CmdAnnotate(ctx);
  CHECK(LoadPreferences(d, ctx.out / "preferences.jsonl").pairs.empty());
  CHECK(log.str().find("warning") != std::string::npos);
}

TEST_CASE("figure1 pipeline, eval episodes and manifest") {
  RunContext ctx = Context("full");
  ctx.config.Set("eval.episodes", "10");
  RunPipeline(ctx);
  nlohmann::json eval = ReadJson(ctx.out / "eval.json");
  CHECK(eval.at("returns").size() == 10);
  CHECK(eval.at("episodes").get<int>() == 10);
  CHECK(eval.at("config_hash").get<std::string>() == ctx.config.Hash(Stage::kEval));
  CHECK(VerifyManifest(ctx.out).empty());

  std::vector<ManifestEntry> entries = ReadManifest(ctx.out);
  REQUIRE(entries.size() >= 5);
  CHECK(entries.front().stage == "gen-data");
  CHECK(entries.back().stage == "report");
  for (const auto& e : entries) CHECK(e.config_hash.size() == 64);
}

TEST_CASE("hash-chain violations refuse to run") {
  RunContext ctx = Context("chain");
  CHECK_THROWS_AS(CmdRelabel(ctx), ArtifactError);  // nothing generated yet
  CmdGenData(ctx);
  CmdRelabel(ctx);

  RunContext other = ctx;
  other.config.Set("seed", "3");
  CHECK_THROWS_AS(CmdRelabel(other), ArtifactError);

  {
    std::ofstream out(ctx.out / "dataset.jsonl", std::ios::app);
    out << "\n";
  }
  CHECK_THROWS_AS(CmdRelabel(ctx), ArtifactError);
  CHECK_FALSE(VerifyManifest(ctx.out).empty());
}

TEST_CASE("report over three seeds") {
  std::vector<std::string> dirs;
  std::vector<double> means;
  for (int seed = 0; seed < 3; ++seed) {
    RunContext ctx = Context("report_s" + std::to_string(seed));
    ctx.config.Set("seed", std::to_string(seed));
    ctx.config.Set("train.iterations", "2");
    RunPipeline(ctx);
    dirs.push_back(ctx.out.string());
    means.push_back(ReadJson(ctx.out / "eval.json").at("mean").get<double>());
  }
  RunContext report = Context("report");
  std::string joined;
  for (const auto& d : dirs) joined += (joined.empty() ? "" : ",") + d;
  report.config.Set("report.runs", joined);
  CmdReport(report);
  nlohmann::json summary = ReadJson(report.out / "report.json");
  CHECK(summary.at("runs").size() == 3);
  double mean = (means[0] + means[1] + means[2]) / 3.0;
  CHECK(summary.at("eval_mean").get<double>() == doctest::Approx(mean).epsilon(1e-12));
  CHECK(summary.at("eval_std").get<double>() >= 0.0);
  std::string curve = ReadText(report.out / "report_curve.csv");
  CHECK(curve.rfind("iteration,mean,std,runs\n", 0) == 0);
  CHECK(ReadText(report.out / "report_scaling.csv").find("\n40,") != std::string::npos);
}
