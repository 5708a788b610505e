#pragma once

// The subcommands of the command-line tool. Every stage reads its inputs
// from and writes its outputs to one run directory, and appends a line to
// <out>/manifest.jsonl:
//   {"stage", "config_hash", "inputs": {file: sha256}, "outputs": {file: sha256}}
// A stage refuses to run (ArtifactError) when an input was produced under a
// different upstream config hash or has changed since it was recorded.
//
// Files: dataset.jsonl, preferences.jsonl, reward.ckpt, relabeled.jsonl,
// policy.ckpt, critic.ckpt, metrics.csv, eval.json, report.json,
// report_curve.csv, report_scaling.csv, config.txt.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "dtr/config.hpp"
#include "dtr/env.hpp"
#include "dtr/inference.hpp"
#include "dtr/reward.hpp"
#include "dtr/trainer.hpp"

namespace dtr {

struct RunContext {
  ExperimentConfig config;
  std::filesystem::path out;
  std::ostream* log = nullptr;  // progress and summaries; may be null
};

TabularMdp BuildEnvironment(const ExperimentConfig& config);
ContinuousWrapper BuildWrapper(const ExperimentConfig& config, const TabularMdp& mdp);
OfflineDataset GenerateDataset(const ExperimentConfig& config, const TabularMdp& mdp);
RewardConfig RewardConfigFrom(const ExperimentConfig& config);
TrainConfig TrainConfigFrom(const ExperimentConfig& config);
EvalOptions EvalOptionsFrom(const ExperimentConfig& config);
// Per-stage generator seed derived from the master seed.
std::uint64_t StageSeed(const ExperimentConfig& config, Stage stage);

void CmdGenData(const RunContext& ctx);
void CmdAnnotate(const RunContext& ctx);
void CmdTrainReward(const RunContext& ctx);
void CmdRelabel(const RunContext& ctx);
void CmdTrainPolicy(const RunContext& ctx);
void CmdEval(const RunContext& ctx);
void CmdReport(const RunContext& ctx);

// Runs every stage in order.
void RunPipeline(const RunContext& ctx);

struct ManifestEntry {
  std::string stage;
  std::string config_hash;
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
};

std::vector<ManifestEntry> ReadManifest(const std::filesystem::path& out);

// Checks that every recorded input matches an earlier recorded output and
// that the files on disk still match their latest record. Returns an empty
// string when the chain is intact, otherwise the first problem found.
std::string VerifyManifest(const std::filesystem::path& out);

}  // namespace dtr
