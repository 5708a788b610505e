#include "dtr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "dtr/errors.hpp"
#include "dtr/oracle.hpp"
#include "json.hpp"

namespace dtr {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifest = "manifest.jsonl";
constexpr const char* kDataset = "dataset.jsonl";
constexpr const char* kPreferences = "preferences.jsonl";
constexpr const char* kReward = "reward.ckpt";
constexpr const char* kRelabeled = "relabeled.jsonl";
constexpr const char* kPolicy = "policy.ckpt";
constexpr const char* kCritic = "critic.ckpt";
constexpr const char* kMetrics = "metrics.csv";
constexpr const char* kEval = "eval.json";

std::ostream& Log(const RunContext& ctx) {
  static std::ostream null(nullptr);
  return ctx.log ? *ctx.log : null;
}

void Prepare(const RunContext& ctx) {
  fs::create_directories(ctx.out);
  std::ofstream out(ctx.out / "config.txt", std::ios::trunc);
  if (!out) throw ArtifactError("cannot write to " + ctx.out.string());
  out << ctx.config.Canonical();
}

// Throws ArtifactError unless `file` exists, was recorded by `producer` under
// the hash the current config gives that stage, and is unchanged since.
void RequireInput(const RunContext& ctx, const std::string& file, Stage producer) {
  fs::path p = ctx.out / file;
  if (!fs::exists(p)) {
    throw ArtifactError("missing " + p.string() + "; run '" + StageName(producer) + "' first");
  }
  const ManifestEntry* last = nullptr;
  auto entries = ReadManifest(ctx.out);
  for (const auto& e : entries) {
    if (e.outputs.count(file)) last = &e;
  }
  if (!last) throw ArtifactError("no manifest record for " + p.string());
  std::string expected = ctx.config.Hash(producer);
  if (last->config_hash != expected) {
    throw ArtifactError("hash-chain mismatch: " + file + " was produced under config " +
                        last->config_hash.substr(0, 12) + " but the current config gives '" +
                        StageName(producer) + "' the hash " + expected.substr(0, 12));
  }
  if (FileSha256(p) != last->outputs.at(file)) {
    throw ArtifactError(file + " changed since the manifest recorded it");
  }
}

void Record(const RunContext& ctx, Stage stage, const std::vector<std::string>& inputs,
            const std::vector<std::string>& outputs) {
  nlohmann::json line;
  line["stage"] = StageName(stage);
  line["config_hash"] = ctx.config.Hash(stage);
  line["inputs"] = nlohmann::json::object();
  line["outputs"] = nlohmann::json::object();
  for (const auto& f : inputs) line["inputs"][f] = FileSha256(ctx.out / f);
  for (const auto& f : outputs) line["outputs"][f] = FileSha256(ctx.out / f);
  std::ofstream out(ctx.out / kManifest, std::ios::app);
  if (!out) throw ArtifactError("cannot append to the manifest in " + ctx.out.string());
  out << line.dump() << '\n';
}

std::string ReadText(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArtifactError("cannot write " + path.string());
  out << text;
}

nlohmann::json ReadJson(const fs::path& path) {
  try {
    return nlohmann::json::parse(ReadText(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
}

std::pair<double, double> MeanStd(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double n = static_cast<double>(xs.size());
  double mean = 0.0, var = 0.0;
  for (double x : xs) mean += x / n;
  for (double x : xs) var += (x - mean) * (x - mean) / n;
  return {mean, std::sqrt(var)};
}

std::string Fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", x);
  return buf;
}

struct LoadedPolicy {
  DtPolicy policy;
  StateNormalizer normalizer;
  double rtg_scale = 1.0;
  double return_max = 1.0;
};

LoadedPolicy LoadTrainedPolicy(const fs::path& path) {
  auto [policy, side] = LoadPolicy(path);
  try {
    StateNormalizer n{side.at("normalizer").at("mean").get<std::vector<double>>(),
                      side.at("normalizer").at("std").get<std::vector<double>>()};
    return {std::move(policy), std::move(n), side.at("rtg_scale").get<double>(),
            side.at("return_max").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ".json: " + e.what(), 0);
  }
}

}  // namespace

std::uint64_t StageSeed(const ExperimentConfig& config, Stage stage) {
  return DeriveSeed(config.GetSeed("seed"), 100 + static_cast<std::uint64_t>(stage));
}

TabularMdp BuildEnvironment(const ExperimentConfig& c) {
  const std::string& env = c.Get("env");
  if (env == "figure1") return BuildFigure1Mdp();
  if (env != "gridworld") throw ConfigError("env must be figure1 or gridworld, got '" + env + "'");
  GridworldSpec spec;
  spec.width = static_cast<int>(c.GetInt("grid.width"));
  spec.height = static_cast<int>(c.GetInt("grid.height"));
  int goal = static_cast<int>(c.GetInt("grid.goal"));
  spec.goal = goal < 0 ? spec.width * spec.height - 1 : goal;
  spec.traps = c.GetInts("grid.traps");
  spec.step_penalty = c.GetDouble("grid.step_penalty");
  spec.starts = c.GetInts("grid.starts");
  spec.horizon = static_cast<int>(c.GetInt("grid.horizon"));
  TabularMdp mdp = BuildGridworld(spec);
  if (c.GetBool("grid.planted")) mdp = PlantRewards(mdp, spec.width, c.GetSeed("grid.planted_seed"));
  return mdp;
}

ContinuousWrapper BuildWrapper(const ExperimentConfig& c, const TabularMdp& mdp) {
  return ContinuousWrapper(mdp, c.GetDouble("env.noise"));
}

OfflineDataset GenerateDataset(const ExperimentConfig& c, const TabularMdp& mdp) {
  std::uint64_t seed = StageSeed(c, Stage::kGenData);
  if (c.Get("env") == "figure1") return MakeFigure1Dataset(mdp, seed);
  ContinuousWrapper wrapper = BuildWrapper(c, mdp);
  double gamma = c.GetDouble("data.gamma");
  std::vector<Trajectory> all;
  std::size_t component = 0;
  for (const auto& item : c.GetStrings("data.mixture")) {
    auto colon = item.find(':');
    if (colon == std::string::npos) {
      throw ConfigError("data.mixture entries look like epsilon:episodes, got '" + item + "'");
    }
    double epsilon = 0.0;
    int count = 0;
    try {
      epsilon = std::stod(item.substr(0, colon));
      count = std::stoi(item.substr(colon + 1));
    } catch (const std::exception&) {
      throw ConfigError("malformed data.mixture entry '" + item + "'");
    }
    if (epsilon < 0.0 || epsilon > 1.0 || count < 0) {
      throw ConfigError("data.mixture entry out of range: '" + item + "'");
    }
    auto part = Rollout(mdp, EpsilonOptimalPolicy(mdp, epsilon, gamma),
                        DeriveSeed(seed, component), count, wrapper,
                        "mix" + std::to_string(component) + "-");
    all.insert(all.end(), std::make_move_iterator(part.begin()),
               std::make_move_iterator(part.end()));
    ++component;
  }
  if (all.empty()) throw ConfigError("data.mixture produced no trajectories");
  return OfflineDataset(std::move(all), {mdp.name, seed, "gt", ""});
}

RewardConfig RewardConfigFrom(const ExperimentConfig& c) {
  RewardConfig r;
  r.ensemble_size = c.GetSize("reward.ensemble_size");
  r.batch_size = c.GetSize("reward.batch_size");
  r.epochs = c.GetSize("reward.epochs");
  r.hidden_dim = c.GetSize("reward.hidden_dim");
  r.hidden_layers = c.GetSize("reward.hidden_layers");
  r.learning_rate = c.GetDouble("reward.lr");
  r.weight_decay = c.GetDouble("reward.weight_decay");
  r.early_stop_accuracy = c.GetDouble("reward.early_stop");
  const std::string& norm = c.Get("reward.normalization");
  if (norm == "minmax") {
    r.normalization = RewardNormalization::kMinMax;
  } else if (norm == "zscore") {
    r.normalization = RewardNormalization::kZScore;
  } else {
    throw ConfigError("reward.normalization must be minmax or zscore");
  }
  r.permissive = c.GetBool("reward.permissive");
  return r;
}

TrainConfig TrainConfigFrom(const ExperimentConfig& c) {
  TrainConfig t;
  const std::string& objective = c.Get("train.objective");
  if (objective == "dtr") {
    t.objective = Objective::kDtr;
  } else if (objective == "pbdt") {
    t.objective = Objective::kPbDt;
  } else {
    throw ConfigError("train.objective must be dtr or pbdt");
  }
  t.batch_size = c.GetSize("train.batch_size");
  t.steps_per_iteration = c.GetSize("train.steps_per_iteration");
  t.iterations = c.GetSize("train.iterations");
  t.eta_max = c.GetDouble("train.eta_max");
  const std::string& mode = c.Get("train.eta_mode");
  if (mode == "dynamic") {
    t.eta_mode = EtaMode::kDynamic;
  } else if (mode == "constant") {
    t.eta_mode = EtaMode::kConstant;
  } else {
    throw ConfigError("train.eta_mode must be dynamic or constant");
  }
  t.policy_lr = c.GetDouble("train.policy_lr");
  t.critic_lr = c.GetDouble("train.critic_lr");
  t.weight_decay = c.GetDouble("train.weight_decay");
  t.warmup_steps = c.GetSize("train.warmup_steps");
  t.normalize_states = c.GetBool("train.normalize_states");
  t.rtg_scale = c.GetDouble("train.rtg_scale");
  const std::string& q = c.Get("train.policy_q");
  if (q == "q1") {
    t.policy_q = PolicyQ::kQ1;
  } else if (q == "min") {
    t.policy_q = PolicyQ::kMin;
  } else {
    throw ConfigError("train.policy_q must be q1 or min");
  }
  t.eval_episodes = c.GetSize("train.eval_episodes");
  t.seed = StageSeed(c, Stage::kTrainPolicy);
  t.policy.context = c.GetSize("policy.context");
  t.policy.embed_dim = c.GetSize("policy.embed_dim");
  t.policy.layers = c.GetSize("policy.layers");
  t.policy.heads = c.GetSize("policy.heads");
  t.policy.dropout = c.GetDouble("policy.dropout");
  t.policy.mlp_ratio = c.GetSize("policy.mlp_ratio");
  t.policy.max_timestep = c.GetSize("policy.max_timestep");
  t.critic.hidden_dim = c.GetSize("critic.hidden_dim");
  t.critic.hidden_layers = c.GetSize("critic.hidden_layers");
  t.critic.gamma = c.GetDouble("critic.gamma");
  t.critic.tau = c.GetDouble("critic.tau");
  const std::string& boot = c.Get("critic.bootstrap");
  if (boot == "target") {
    t.critic.bootstrap_policy = BootstrapPolicy::kTarget;
  } else if (boot == "online") {
    t.critic.bootstrap_policy = BootstrapPolicy::kOnline;
  } else {
    throw ConfigError("critic.bootstrap must be target or online");
  }
  try {
    t.Validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return t;
}

EvalOptions EvalOptionsFrom(const ExperimentConfig& c) {
  EvalOptions o;
  o.multipliers = c.GetDoubles("eval.multipliers");
  if (o.multipliers.empty()) throw ConfigError("eval.multipliers is empty");
  const std::string& update = c.Get("eval.update");
  if (update == "fixed") {
    o.update = RtgUpdate::kFixedDecrement;
  } else if (update == "learned") {
    o.update = RtgUpdate::kLearnedReward;
  } else {
    throw ConfigError("eval.update must be fixed or learned");
  }
  o.policy_q = c.Get("train.policy_q") == "min" ? PolicyQ::kMin : PolicyQ::kQ1;
  std::int64_t start = c.GetInt("eval.start");
  if (start >= 0) o.start = static_cast<int>(start);
  o.max_timestep = c.GetSize("eval.max_timestep");
  return o;
}

void CmdGenData(const RunContext& ctx) {
  Prepare(ctx);
  TabularMdp mdp = BuildEnvironment(ctx.config);
  OfflineDataset data = GenerateDataset(ctx.config, mdp);
  data.mutable_metadata().config_hash = ctx.config.Hash(Stage::kGenData);
  SaveDataset(data, ctx.out / kDataset);
  Record(ctx, Stage::kGenData, {}, {kDataset});
  Log(ctx) << "trajectories " << data.size() << ", steps " << data.num_steps() << ", return_max "
           << Fmt(data.return_max()) << '\n';
}

void CmdAnnotate(const RunContext& ctx) {
  Prepare(ctx);
  RequireInput(ctx, kDataset, Stage::kGenData);
  OfflineDataset data = LoadDataset(ctx.out / kDataset);
  const std::string& mode = ctx.config.Get("pref.mode");
  if (mode != "deterministic" && mode != "stochastic") {
    throw ConfigError("pref.mode must be deterministic or stochastic");
  }
  std::size_t count = ctx.config.GetSize("pref.count");
  PreferenceSet prefs = MakePreferences(
      data, ctx.config.GetSize("pref.length"), count,
      mode == "deterministic" ? AnnotationMode::kDeterministic : AnnotationMode::kStochastic,
      StageSeed(ctx.config, Stage::kAnnotate), ctx.config.GetBool("pref.truncate"));
  prefs.config_hash = ctx.config.Hash(Stage::kAnnotate);
  SavePreferences(data, prefs, ctx.out / kPreferences);
  Record(ctx, Stage::kAnnotate, {kDataset}, {kPreferences});
  if (count == 0) Log(ctx) << "warning: zero queries requested, wrote an empty preference file\n";
  Log(ctx) << "preference pairs " << prefs.pairs.size() << " (" << mode << ")\n";
}

void CmdTrainReward(const RunContext& ctx) {
  Prepare(ctx);
  RequireInput(ctx, kDataset, Stage::kGenData);
  RequireInput(ctx, kPreferences, Stage::kAnnotate);
  OfflineDataset data = LoadDataset(ctx.out / kDataset);
  PreferenceSet prefs = LoadPreferences(data, ctx.out / kPreferences);
  if (prefs.pairs.empty()) throw ArtifactError("no preference pairs to train on");
  std::size_t sd = data.at(0).states[0].size(), ad = data.at(0).actions[0].size();
  RewardEnsemble ensemble(sd, ad, RewardConfigFrom(ctx.config),
                          StageSeed(ctx.config, Stage::kTrainReward));
  ensemble.Train(data, prefs);
  ensemble.Save(ctx.out / kReward, ctx.config.Hash(Stage::kTrainReward));
  Record(ctx, Stage::kTrainReward, {kDataset, kPreferences},
         {kReward, std::string(kReward) + ".json"});
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    const MemberTrace& t = ensemble.traces()[i];
    Log(ctx) << "member " << i << ": epochs " << t.epochs_run << ", accuracy "
             << Fmt(t.epoch_accuracy.empty() ? 0.0 : t.epoch_accuracy.back())
             << (t.reached_threshold ? " (early stop)" : "") << '\n';
  }
}

void CmdRelabel(const RunContext& ctx) {
  Prepare(ctx);
  RequireInput(ctx, kDataset, Stage::kGenData);
  OfflineDataset data = LoadDataset(ctx.out / kDataset);
  const std::string& source = ctx.config.Get("relabel.source");
  std::vector<std::string> inputs = {kDataset};
  OfflineDataset out;
  if (source == "ensemble") {
    RequireInput(ctx, kReward, Stage::kTrainReward);
    std::size_t sd = data.at(0).states[0].size(), ad = data.at(0).actions[0].size();
    RewardEnsemble ensemble(sd, ad, RewardConfigFrom(ctx.config),
                            StageSeed(ctx.config, Stage::kTrainReward));
    ensemble.Load(ctx.out / kReward);
    out = ensemble.Relabel(data);
    inputs.push_back(kReward);
  } else if (source == "gt") {
    std::vector<std::vector<double>> rewards;
    for (const auto& t : data.trajectories()) rewards.push_back(t.rewards);
    out = data.WithRewards(rewards, "gt");
  } else if (source == "biased") {
    if (ctx.config.Get("env") != "figure1") {
      throw ConfigError("relabel.source = biased is only defined for env = figure1");
    }
    TabularMdp biased = figure1::WithBiasedReward(BuildEnvironment(ctx.config));
    out = WithTableRewards(data, biased.reward, "biased");
  } else {
    throw ConfigError("relabel.source must be ensemble, gt or biased");
  }
  out.mutable_metadata().config_hash = ctx.config.Hash(Stage::kRelabel);
  SaveDataset(out, ctx.out / kRelabeled);
  Record(ctx, Stage::kRelabel, inputs, {kRelabeled});
  Log(ctx) << "relabeled " << out.num_steps() << " steps from " << source << ", return_max "
           << Fmt(out.return_max()) << '\n';
}

void CmdTrainPolicy(const RunContext& ctx) {
  Prepare(ctx);
  RequireInput(ctx, kRelabeled, Stage::kRelabel);
  OfflineDataset data = LoadDataset(ctx.out / kRelabeled);
  TrainConfig tc = TrainConfigFrom(ctx.config);
  TabularMdp mdp = BuildEnvironment(ctx.config);
  ContinuousWrapper wrapper = BuildWrapper(ctx.config, mdp);
  EvalEnv env{&mdp, &wrapper, EvalOptionsFrom(ctx.config), StageSeed(ctx.config, Stage::kEval)};
  env.options.update = RtgUpdate::kFixedDecrement;
  fs::remove(ctx.out / kMetrics);
  std::ostream& log = Log(ctx);
  TrainResult result = Train(tc, data, tc.eval_episodes > 0 ? &env : nullptr,
                             ctx.out / "diagnostic", [&](const MetricsRow& row) {
                               AppendMetrics(ctx.out / kMetrics, {row});
                               log << "iteration " << row.iteration << ": l_dt "
                                   << Fmt(row.l_dt) << ", q_loss " << Fmt(row.q_loss)
                                   << ", lambda " << Fmt(row.lambda) << ", eval "
                                   << Fmt(row.eval_return_mean) << '\n';
                             });
  nlohmann::json side = {
      {"config_hash", ctx.config.Hash(Stage::kTrainPolicy)},
      {"normalizer", {{"mean", result.normalizer.mean}, {"std", result.normalizer.std}}},
      {"rtg_scale", result.rtg_scale},
      {"return_max", result.return_max}};
  SavePolicy(result.policy, ctx.out / kPolicy, side);
  SaveCritic(result.critic, ctx.out / kCritic);
  Record(ctx, Stage::kTrainPolicy, {kRelabeled},
         {kPolicy, std::string(kPolicy) + ".json", kCritic, kMetrics});
}

void CmdEval(const RunContext& ctx) {
  Prepare(ctx);
  RequireInput(ctx, kPolicy, Stage::kTrainPolicy);
  RequireInput(ctx, kCritic, Stage::kTrainPolicy);
  LoadedPolicy loaded = LoadTrainedPolicy(ctx.out / kPolicy);
  TrainConfig tc = TrainConfigFrom(ctx.config);
  TabularMdp mdp = BuildEnvironment(ctx.config);
  ContinuousWrapper wrapper = BuildWrapper(ctx.config, mdp);
  Rng unused(0);
  TwinCritic critic(wrapper.state_dim(), wrapper.action_dim(), tc.critic, unused);
  LoadCritic(critic, ctx.out / kCritic);

  EvalOptions options = EvalOptionsFrom(ctx.config);
  options.return_max = loaded.return_max > 0.0 ? loaded.return_max : loaded.rtg_scale;
  options.rtg_scale = loaded.rtg_scale;
  std::vector<std::string> inputs = {kPolicy, std::string(kPolicy) + ".json", kCritic};
  std::optional<RewardEnsemble> ensemble;
  if (options.update == RtgUpdate::kLearnedReward) {
    RequireInput(ctx, kReward, Stage::kTrainReward);
    RequireInput(ctx, kDataset, Stage::kGenData);
    OfflineDataset data = LoadDataset(ctx.out / kDataset);
    ensemble.emplace(wrapper.state_dim(), wrapper.action_dim(), RewardConfigFrom(ctx.config),
                     StageSeed(ctx.config, Stage::kTrainReward));
    ensemble->Load(ctx.out / kReward);
    ensemble->Relabel(data);
    options.reward = &*ensemble;
    inputs.push_back(kReward);
    inputs.push_back(kDataset);
  }
  std::size_t episodes = ctx.config.GetSize("eval.episodes");
  EvalReport report = Evaluate(loaded.policy, critic, mdp, wrapper, loaded.normalizer, options,
                               episodes, StageSeed(ctx.config, Stage::kEval));
  nlohmann::json j = report.ToJson();
  j["config_hash"] = ctx.config.Hash(Stage::kEval);
  j["checkpoint_path"] = kPolicy;
  j["paths"] = report.paths;
  WriteText(ctx.out / kEval, j.dump(2) + "\n");
  Record(ctx, Stage::kEval, inputs, {kEval});
  Log(ctx) << "eval over " << episodes << " episodes: mean " << Fmt(report.mean) << ", std "
           << Fmt(report.std) << '\n';
}

void CmdReport(const RunContext& ctx) {
  Prepare(ctx);
  std::vector<std::string> dirs = ctx.config.GetStrings("report.runs");
  std::vector<fs::path> runs;
  if (dirs.empty()) {
    runs.push_back(ctx.out);
  } else {
    for (const auto& d : dirs) runs.push_back(d);
  }
  nlohmann::json summary;
  summary["config_hash"] = ctx.config.Hash(Stage::kReport);
  summary["runs"] = nlohmann::json::array();
  std::vector<double> finals;
  std::map<std::size_t, std::vector<double>> curve;
  std::map<std::size_t, std::vector<double>> scaling;
  for (const auto& run : runs) {
    std::string problem = VerifyManifest(run);
    if (!problem.empty()) throw ArtifactError(run.string() + ": " + problem);
    ExperimentConfig rc;
    rc.MergeFile(run / "config.txt");
    nlohmann::json eval = ReadJson(run / kEval);
    double mean = eval.at("mean").get<double>();
    finals.push_back(mean);
    std::size_t pref_count = rc.GetSize("pref.count");
    scaling[pref_count].push_back(mean);
    std::istringstream metrics(ReadText(run / kMetrics));
    std::string line;
    std::getline(metrics, line);
    while (std::getline(metrics, line)) {
      std::vector<std::string> cols;
      std::istringstream cells(line);
      std::string cell;
      while (std::getline(cells, cell, ',')) cols.push_back(cell);
      if (cols.size() != 11) throw ParseError(run.string() + "/metrics.csv: bad row", 0);
      curve[std::stoul(cols[0])].push_back(std::stod(cols[8]));
    }
    summary["runs"].push_back({{"dir", run.string()},
                               {"seed", rc.Get("seed")},
                               {"objective", rc.Get("train.objective")},
                               {"pref_count", pref_count},
                               {"eval_mean", mean},
                               {"eval_std", eval.at("std").get<double>()},
                               {"eval_config_hash", eval.at("config_hash")}});
  }
  auto [mean, sd] = MeanStd(finals);
  summary["eval_mean"] = mean;
  summary["eval_std"] = sd;
  WriteText(ctx.out / "report.json", summary.dump(2) + "\n");

  std::string curve_csv = "iteration,mean,std,runs\n";
  for (const auto& [it, xs] : curve) {
    auto [m, s] = MeanStd(xs);
    curve_csv += std::to_string(it) + "," + Fmt(m) + "," + Fmt(s) + "," +
                 std::to_string(xs.size()) + "\n";
  }
  WriteText(ctx.out / "report_curve.csv", curve_csv);
  std::string scaling_csv = "pref_count,mean,std,runs\n";
  for (const auto& [n, xs] : scaling) {
    auto [m, s] = MeanStd(xs);
    scaling_csv += std::to_string(n) + "," + Fmt(m) + "," + Fmt(s) + "," +
                   std::to_string(xs.size()) + "\n";
  }
  WriteText(ctx.out / "report_scaling.csv", scaling_csv);
  Record(ctx, Stage::kReport, {}, {"report.json", "report_curve.csv", "report_scaling.csv"});
  Log(ctx) << "report over " << runs.size() << " runs: mean " << Fmt(mean) << " +- " << Fmt(sd)
           << '\n';
}

void RunPipeline(const RunContext& ctx) {
  CmdGenData(ctx);
  if (ctx.config.Get("relabel.source") == "ensemble" || ctx.config.Get("eval.update") == "learned") {
    CmdAnnotate(ctx);
    CmdTrainReward(ctx);
  }
  CmdRelabel(ctx);
  CmdTrainPolicy(ctx);
  CmdEval(ctx);
  CmdReport(ctx);
}

std::vector<ManifestEntry> ReadManifest(const fs::path& out) {
  std::vector<ManifestEntry> entries;
  std::ifstream in(out / kManifest);
  if (!in) return entries;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      entries.push_back({j.at("stage").get<std::string>(), j.at("config_hash").get<std::string>(),
                         j.at("inputs").get<std::map<std::string, std::string>>(),
                         j.at("outputs").get<std::map<std::string, std::string>>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("manifest: ") + e.what(), number);
    }
  }
  return entries;
}

std::string VerifyManifest(const fs::path& out) {
  auto entries = ReadManifest(out);
  if (entries.empty()) return "empty manifest";
  std::map<std::string, std::vector<std::string>> produced;  // file -> recorded hashes
  std::map<std::string, std::string> latest;
  for (const auto& e : entries) {
    for (const auto& [file, sha] : e.inputs) {
      auto it = produced.find(file);
      if (it == produced.end() || std::find(it->second.begin(), it->second.end(), sha) == it->second.end()) {
        return "stage '" + e.stage + "' read " + file + " in a version no earlier stage produced";
      }
    }
    for (const auto& [file, sha] : e.outputs) {
      produced[file].push_back(sha);
      latest[file] = sha;
    }
  }
  for (const auto& [file, sha] : latest) {
    if (!fs::exists(out / file)) return file + " is missing";
    if (FileSha256(out / file) != sha) return file + " differs from its manifest record";
  }
  return "";
}

}  // namespace dtr
