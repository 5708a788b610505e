#pragma once

// Flat key-value experiment configuration.
//
//   # comment
//   key = value
//   include preset:figure1      (a built-in preset)
//   include other.cfg           (a file, relative to the including file)
//
// Later assignments override earlier ones. Every key must be one of the
// documented keys; anything else is a ConfigError.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dtr {

struct ConfigKey {
  const char* name;
  const char* default_value;
  const char* help;
};

// Every accepted key with its default, in documentation order.
const std::vector<ConfigKey>& ConfigKeys();

std::vector<std::string> PresetNames();
// Throws ConfigError for an unknown preset.
const std::string& PresetText(const std::string& name);

enum class Stage { kGenData, kAnnotate, kTrainReward, kRelabel, kTrainPolicy, kEval, kReport };

const char* StageName(Stage stage);

class ExperimentConfig {
 public:
  // All keys at their defaults.
  ExperimentConfig();

  // `source` names the text in error messages; includes of files resolve
  // against `base_dir`.
  void Merge(const std::string& text, const std::string& source,
             const std::filesystem::path& base_dir);
  void MergeFile(const std::filesystem::path& path);
  void MergePreset(const std::string& name);
  void Set(const std::string& key, const std::string& value);

  const std::string& Get(const std::string& key) const;
  double GetDouble(const std::string& key) const;
  std::int64_t GetInt(const std::string& key) const;
  std::size_t GetSize(const std::string& key) const;
  std::uint64_t GetSeed(const std::string& key) const;
  bool GetBool(const std::string& key) const;
  std::vector<double> GetDoubles(const std::string& key) const;
  std::vector<int> GetInts(const std::string& key) const;
  std::vector<std::string> GetStrings(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }

  // Sorted "key = value" lines, optionally restricted to the keys a stage
  // depends on (its own and every upstream stage's).
  std::string Canonical() const;
  std::string Canonical(Stage stage) const;
  // SHA-256 of Canonical(stage), lowercase hex.
  std::string Hash(Stage stage) const;

 private:
  void MergeImpl(const std::string& text, const std::string& source,
                 const std::filesystem::path& base_dir, int depth);

  std::map<std::string, std::string> values_;
};

std::string Sha256Hex(const std::string& bytes);
// Throws ArtifactError when the file cannot be read.
std::string FileSha256(const std::filesystem::path& path);

}  // namespace dtr
