#include "dtr/config.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dtr/errors.hpp"

namespace dtr {

const std::vector<ConfigKey>& ConfigKeys() {
  static const std::vector<ConfigKey> keys = {
      {"seed", "0", "master seed; every stage derives its own generator from it"},
      {"env", "figure1", "figure1 | gridworld"},
      {"env.noise", "0.01", "half-width of the uniform jitter on one-hot states"},
      {"grid.width", "8", "gridworld width"},
      {"grid.height", "8", "gridworld height"},
      {"grid.goal", "-1", "goal cell, -1 for the last cell"},
      {"grid.traps", "", "comma-separated trap cells"},
      {"grid.step_penalty", "-0.01", "reward of every non-terminal move"},
      {"grid.starts", "0", "comma-separated start cells"},
      {"grid.horizon", "64", "episode length limit"},
      {"grid.planted", "false", "replace rewards by a dense planted table"},
      {"grid.planted_seed", "0", "seed of the planted table"},
      {"data.mixture", "1:500", "comma-separated epsilon:episodes behavior components"},
      {"data.gamma", "0.99", "discount used to find the greedy behavior action"},
      {"pref.count", "2000", "number of preference queries"},
      {"pref.length", "200", "segment length"},
      {"pref.mode", "stochastic", "deterministic | stochastic"},
      {"pref.truncate", "true", "allow whole short trajectories as segments"},
      {"reward.ensemble_size", "3", "ensemble members"},
      {"reward.batch_size", "64", "pairs per step"},
      {"reward.epochs", "100", "epoch limit per member"},
      {"reward.hidden_dim", "256", "hidden width"},
      {"reward.hidden_layers", "3", "hidden layers"},
      {"reward.lr", "0.0003", "Adam learning rate"},
      {"reward.weight_decay", "0", "Adam weight decay"},
      {"reward.early_stop", "0.968", "stop a member once its training accuracy exceeds this"},
      {"reward.normalization", "minmax", "minmax | zscore"},
      {"reward.permissive", "false", "map degenerate members to 0 instead of failing"},
      {"relabel.source", "ensemble", "ensemble | gt | biased (figure1 only)"},
      {"train.objective", "dtr", "dtr | pbdt"},
      {"train.batch_size", "256", "windows per step"},
      {"train.steps_per_iteration", "1000", "steps between evaluations"},
      {"train.iterations", "50", "number of iterations"},
      {"train.eta_max", "1", "largest Q coefficient"},
      {"train.eta_mode", "dynamic", "dynamic | constant"},
      {"train.policy_lr", "0.0003", "policy learning rate"},
      {"train.critic_lr", "0.0003", "critic learning rate"},
      {"train.weight_decay", "0.0001", "policy weight decay"},
      {"train.warmup_steps", "10000", "linear learning-rate warmup for the policy"},
      {"train.normalize_states", "true", "z-score states with dataset statistics"},
      {"train.rtg_scale", "0", "divisor of return-to-go tokens, 0 for return_max"},
      {"train.policy_q", "q1", "q1 | min, critic used by the policy loss and inference"},
      {"train.eval_episodes", "10", "evaluation episodes per iteration, 0 to skip"},
      {"policy.context", "20", "window length"},
      {"policy.embed_dim", "256", "token width"},
      {"policy.layers", "4", "transformer blocks"},
      {"policy.heads", "4", "attention heads"},
      {"policy.dropout", "0.1", "dropout rate"},
      {"policy.mlp_ratio", "4", "block MLP width over token width"},
      {"policy.max_timestep", "1000", "timestep embedding size"},
      {"critic.hidden_dim", "256", "hidden width"},
      {"critic.hidden_layers", "3", "hidden layers"},
      {"critic.gamma", "0.99", "discount"},
      {"critic.tau", "0.005", "target update rate"},
      {"critic.bootstrap", "target", "target | online policy for bootstrap actions"},
      {"eval.episodes", "10", "episodes of the eval subcommand"},
      {"eval.update", "fixed", "fixed | learned return-to-go update"},
      {"eval.multipliers", "0.5,0.75,1,1.5,2", "initial return-to-go multipliers"},
      {"eval.start", "-1", "start state, -1 for uniform over initial states"},
      {"eval.max_timestep", "0", "steps over which the target decays, 0 for the horizon"},
      {"report.runs", "", "comma-separated run directories, empty for the output directory"},
  };
  return keys;
}

namespace {

const std::map<std::string, std::string>& Presets() {
  static const std::map<std::string, std::string> presets = {
      {"figure1",
       "env = figure1\n"
       "relabel.source = biased\n"
       "pref.count = 40\n"
       "pref.length = 1\n"
       "pref.mode = deterministic\n"
       "reward.ensemble_size = 3\n"
       "reward.hidden_dim = 32\n"
       "reward.hidden_layers = 2\n"
       "reward.epochs = 200\n"
       "reward.batch_size = 16\n"
       "reward.lr = 0.003\n"
       "reward.permissive = true\n"
       "train.batch_size = 16\n"
       "train.steps_per_iteration = 100\n"
       "train.iterations = 5\n"
       "train.policy_lr = 0.001\n"
       "train.critic_lr = 0.001\n"
       "train.warmup_steps = 0\n"
       "train.eval_episodes = 2\n"
       "policy.context = 3\n"
       "policy.embed_dim = 16\n"
       "policy.layers = 1\n"
       "policy.heads = 2\n"
       "policy.dropout = 0\n"
       "policy.mlp_ratio = 2\n"
       "policy.max_timestep = 8\n"
       "critic.hidden_dim = 32\n"
       "critic.hidden_layers = 2\n"
       "critic.gamma = 1\n"
       "critic.tau = 0.05\n"
       "eval.start = 0\n"},
      {"gridworld-medium",
       "env = gridworld\n"
       "grid.width = 8\n"
       "grid.height = 8\n"
       "grid.planted = true\n"
       "grid.planted_seed = 7\n"
       "grid.horizon = 30\n"
       "data.mixture = 0.5:300\n"
       "pref.count = 2000\n"
       "pref.length = 10\n"
       "pref.mode = stochastic\n"
       "reward.hidden_dim = 64\n"
       "reward.hidden_layers = 2\n"
       "reward.lr = 0.001\n"
       "reward.epochs = 30\n"
       "train.batch_size = 32\n"
       "train.steps_per_iteration = 100\n"
       "train.iterations = 10\n"
       "train.policy_lr = 0.001\n"
       "train.critic_lr = 0.001\n"
       "train.warmup_steps = 100\n"
       "train.eval_episodes = 5\n"
       "policy.context = 5\n"
       "policy.embed_dim = 32\n"
       "policy.layers = 2\n"
       "policy.heads = 2\n"
       "policy.dropout = 0.1\n"
       "policy.mlp_ratio = 2\n"
       "policy.max_timestep = 64\n"
       "critic.hidden_dim = 64\n"
       "critic.hidden_layers = 2\n"
       "critic.tau = 0.01\n"},
      {"gridworld-medium-replay",
       "include preset:gridworld-medium\n"
       "data.mixture = 1:150,0.7:100,0.5:50\n"},
      {"gridworld-medium-expert",
       "include preset:gridworld-medium\n"
       "data.mixture = 0.5:150,0:150\n"},
  };
  return presets;
}

std::string Trim(const std::string& s) {
  auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

// Keys each stage reads, cumulative over upstream stages.
const std::vector<std::string>& StagePrefixes(Stage stage) {
  static const std::vector<std::vector<std::string>> own = {
      {"seed", "env", "grid.", "data."}, {"pref."}, {"reward."}, {"relabel."},
      {"train.", "policy.", "critic."},  {"eval."}, {"report."}};
  static const std::vector<std::vector<std::string>> cumulative = [] {
    std::vector<std::vector<std::string>> out;
    std::vector<std::string> acc;
    for (const auto& p : own) {
      acc.insert(acc.end(), p.begin(), p.end());
      out.push_back(acc);
    }
    return out;
  }();
  return cumulative.at(static_cast<std::size_t>(stage));
}

bool Matches(const std::string& key, const std::vector<std::string>& prefixes) {
  for (const auto& p : prefixes) {
    if (key == p || key.rfind(p.back() == '.' ? p : p + ".", 0) == 0) return true;
  }
  return false;
}

}  // namespace

std::vector<std::string> PresetNames() {
  std::vector<std::string> names;
  for (const auto& [name, text] : Presets()) names.push_back(name);
  return names;
}

const std::string& PresetText(const std::string& name) {
  auto it = Presets().find(name);
  if (it == Presets().end()) throw ConfigError("unknown preset '" + name + "'");
  return it->second;
}

const char* StageName(Stage stage) {
  switch (stage) {
    case Stage::kGenData: return "gen-data";
    case Stage::kAnnotate: return "annotate";
    case Stage::kTrainReward: return "train-reward";
    case Stage::kRelabel: return "relabel";
    case Stage::kTrainPolicy: return "train-policy";
    case Stage::kEval: return "eval";
    case Stage::kReport: return "report";
  }
  return "?";
}

ExperimentConfig::ExperimentConfig() {
  for (const auto& k : ConfigKeys()) values_[k.name] = k.default_value;
}

void ExperimentConfig::Merge(const std::string& text, const std::string& source,
                             const std::filesystem::path& base_dir) {
  MergeImpl(text, source, base_dir, 0);
}

void ExperimentConfig::MergeFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  Merge(buf.str(), path.string(), path.parent_path());
}

void ExperimentConfig::MergePreset(const std::string& name) {
  Merge(PresetText(name), "preset:" + name, {});
}

void ExperimentConfig::MergeImpl(const std::string& text, const std::string& source,
                                 const std::filesystem::path& base_dir, int depth) {
  if (depth > 16) throw ConfigError(source + ": include nesting too deep");
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string where = source + ":" + std::to_string(line);
    std::string s = Trim(raw.substr(0, raw.find('#')));
    if (s.empty()) continue;
    if (s.rfind("include ", 0) == 0) {
      std::string target = Trim(s.substr(8));
      if (target.rfind("preset:", 0) == 0) {
        std::string name = target.substr(7);
        auto it = Presets().find(name);
        if (it == Presets().end()) throw ConfigError(where + ": unknown preset '" + name + "'");
        MergeImpl(it->second, target, {}, depth + 1);
      } else {
        std::filesystem::path p = base_dir / target;
        std::ifstream f(p);
        if (!f) throw ConfigError(where + ": cannot read included file " + p.string());
        std::stringstream buf;
        buf << f.rdbuf();
        MergeImpl(buf.str(), p.string(), p.parent_path(), depth + 1);
      }
      continue;
    }
    auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    std::string key = Trim(s.substr(0, eq));
    if (!values_.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    values_[key] = Trim(s.substr(eq + 1));
  }
}

void ExperimentConfig::Set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) throw ConfigError("unknown key '" + key + "'");
  values_[key] = value;
}

const std::string& ExperimentConfig::Get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second;
}

double ExperimentConfig::GetDouble(const std::string& key) const {
  const std::string& v = Get(key);
  char* end = nullptr;
  errno = 0;
  double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno != 0) {
    throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
  }
  return d;
}

std::int64_t ExperimentConfig::GetInt(const std::string& key) const {
  const std::string& v = Get(key);
  char* end = nullptr;
  errno = 0;
  long long i = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || errno != 0) {
    throw ConfigError("key '" + key + "' expects an integer, got '" + v + "'");
  }
  return i;
}

std::size_t ExperimentConfig::GetSize(const std::string& key) const {
  std::int64_t i = GetInt(key);
  if (i < 0) throw ConfigError("key '" + key + "' must be non-negative");
  return static_cast<std::size_t>(i);
}

std::uint64_t ExperimentConfig::GetSeed(const std::string& key) const {
  const std::string& v = Get(key);
  char* end = nullptr;
  errno = 0;
  unsigned long long u = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || v[0] == '-' || *end != '\0' || errno != 0) {
    throw ConfigError("key '" + key + "' expects an unsigned integer, got '" + v + "'");
  }
  return u;
}

bool ExperimentConfig::GetBool(const std::string& key) const {
  const std::string& v = Get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "' expects true or false, got '" + v + "'");
}

std::vector<std::string> ExperimentConfig::GetStrings(const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream in(Get(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = Trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> ExperimentConfig::GetDoubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : GetStrings(key)) {
    char* end = nullptr;
    double d = std::strtod(item.c_str(), &end);
    if (*end != '\0') throw ConfigError("key '" + key + "' expects numbers, got '" + item + "'");
    out.push_back(d);
  }
  return out;
}

std::vector<int> ExperimentConfig::GetInts(const std::string& key) const {
  std::vector<int> out;
  for (const auto& item : GetStrings(key)) {
    char* end = nullptr;
    long i = std::strtol(item.c_str(), &end, 10);
    if (*end != '\0') throw ConfigError("key '" + key + "' expects integers, got '" + item + "'");
    out.push_back(static_cast<int>(i));
  }
  return out;
}

std::string ExperimentConfig::Canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string ExperimentConfig::Canonical(Stage stage) const {
  const auto& prefixes = StagePrefixes(stage);
  std::string out;
  for (const auto& [k, v] : values_) {
    if (Matches(k, prefixes)) out += k + " = " + v + "\n";
  }
  return out;
}

std::string ExperimentConfig::Hash(Stage stage) const { return Sha256Hex(Canonical(stage)); }

std::string Sha256Hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string FileSha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return Sha256Hex(buf.str());
}

}  // namespace dtr
