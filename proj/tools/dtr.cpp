// Command-line entry point for the preference-learning pipeline.
//
// Exit codes: 0 success, 2 config error, 3 upstream-artifact error,
// 4 numerical failure, 1 anything else.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dtr/errors.hpp"
#include "dtr/pipeline.hpp"

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kArtifact = 3, kNumerical = 4 };

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline preference-based RL with a return-conditioned transformer and twin critics"};
  app.require_subcommand(1);

  std::string config_path, preset, out = "run";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "flat key = value config file");
  app.add_option("--preset", preset, "built-in preset applied before --config");
  app.add_option("--seed", seed, "overrides the seed key");
  app.add_option("--out", out, "run directory")->capture_default_str();
  app.add_option("--set", overrides, "key=value override, repeatable");

  struct Command {
    const char* name;
    const char* help;
    void (*run)(const dtr::RunContext&);
  };
  const std::vector<Command> commands = {
      {"gen-data", "generate the offline dataset", dtr::CmdGenData},
      {"annotate", "label preference pairs from ground-truth rewards", dtr::CmdAnnotate},
      {"train-reward", "train the reward ensemble", dtr::CmdTrainReward},
      {"relabel", "replace dataset rewards", dtr::CmdRelabel},
      {"train-policy", "train policy and critics", dtr::CmdTrainPolicy},
      {"eval", "evaluate the trained policy", dtr::CmdEval},
      {"report", "aggregate eval results and metrics", dtr::CmdReport},
      {"all", "run every stage in order", dtr::RunPipeline},
  };
  std::vector<CLI::App*> subs;
  for (const auto& c : commands) subs.push_back(app.add_subcommand(c.name, c.help));
  CLI::App* keys = app.add_subcommand("keys", "list every config key with its default");
  CLI::App* presets = app.add_subcommand("presets", "list built-in presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  if (keys->parsed()) {
    for (const auto& k : dtr::ConfigKeys()) {
      std::cout << k.name << " = " << k.default_value << "    # " << k.help << '\n';
    }
    return kOk;
  }
  if (presets->parsed()) {
    for (const auto& name : dtr::PresetNames()) std::cout << name << '\n';
    return kOk;
  }

  try {
    dtr::RunContext ctx;
    if (!preset.empty()) ctx.config.MergePreset(preset);
    if (!config_path.empty()) ctx.config.MergeFile(config_path);
    for (const auto& kv : overrides) {
      auto eq = kv.find('=');
      if (eq == std::string::npos) throw dtr::ConfigError("--set expects key=value, got " + kv);
      ctx.config.Set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed) ctx.config.Set("seed", std::to_string(*seed));
    ctx.out = out;
    ctx.log = &std::cout;
    for (std::size_t i = 0; i < commands.size(); ++i) {
      if (subs[i]->parsed()) commands[i].run(ctx);
    }
    return kOk;
  } catch (const dtr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const dtr::InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const dtr::ArtifactError& e) {
    std::cerr << "artifact error: " << e.what() << '\n';
    return kArtifact;
  } catch (const dtr::ParseError& e) {
    std::cerr << "artifact error: " << e.what() << '\n';
    return kArtifact;
  } catch (const dtr::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
}
