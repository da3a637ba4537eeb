#pragma once

// Experiment harness: flat key=value configuration, world construction
// (feature space, tasks, codebook) and the five pipeline commands. The CLI in
// tools/ is a thin wrapper over these functions.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "slmicl/checkpoint.hpp"
#include "slmicl/eval.hpp"
#include "slmicl/train.hpp"

namespace slmicl {

class RunConfig {
 public:
  /// Every known key with its default value.
  RunConfig();

  /// Reads `key = value` lines; '#' starts a comment. Unknown or repeated keys
  /// are config errors, an unreadable file is an I/O error.
  static RunConfig from_file(const std::string& path);

  /// Overrides one key; unknown keys are config errors.
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  const std::string& str(const std::string& key) const;
  long integer(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;

  /// Sorted `key=value` lines; parsing this text yields the same config.
  std::string to_text() const;

  const std::map<std::string, std::string>& values() const { return values_; }
  /// File the config was read from, if any.
  const std::string& source() const { return source_; }

 private:
  std::map<std::string, std::string> values_;
  std::string source_;
};

/// Everything derived deterministically from the config seed. The codebook is
/// fitted by pretrain and afterwards always taken from the checkpoint.
struct World {
  FeatureSpace space;
  MotifPool pool;
  Difficulty difficulty;
  std::vector<TaskSpec> train_tasks, test_tasks;
  Codebook codebook;
  Vocab vocab;
  LmConfig lm;
};

World build_world(const RunConfig& cfg);

/// Fits the codebook on feature frames drawn from the train tasks.
Codebook fit_world_codebook(const RunConfig& cfg, const World& w);

/// Episode context for a given utterance length; L = 0 keeps natural lengths.
EpisodeContext make_context(const RunConfig& cfg, const World& w, int L);

/// The "L" key: a positive integer or "none".
int parse_length(const std::string& s);

PretrainConfig pretrain_config(const RunConfig& cfg);
WarmupConfig warmup_config(const RunConfig& cfg);
EvalSpec eval_spec(const RunConfig& cfg, const std::string& split);

/// Collects the files a command writes and emits the resolved config,
/// input checksums and manifest.
class OutputDir {
 public:
  OutputDir(const std::string& dir, const std::string& command);
  std::string path(const std::string& name) const;
  /// Registers a written file for the manifest.
  void wrote(const std::string& name);
  void add_input(const std::string& role, const std::string& file);
  /// Writes config.txt, inputs.sha256 and manifest.json.
  void finish(const RunConfig& cfg);

 private:
  std::string dir_, command_;
  std::vector<std::string> files_;
  std::vector<std::pair<std::string, std::string>> inputs_;
};

void cmd_pretrain(const RunConfig& cfg);
void cmd_warmup(const RunConfig& cfg);
void cmd_eval(const RunConfig& cfg);
void cmd_attention(const RunConfig& cfg);
void cmd_ablate_length(const RunConfig& cfg);

/// Runs a command by name; unknown names are config errors.
void run_command(const std::string& name, const RunConfig& cfg);

/// 0 success, 2 config, 3 I/O, 4 invariant.
int exit_code_for(ErrorCode code);

}  // namespace slmicl
