#pragma once

#include <functional>
#include <string>
#include <vector>

#include "slmicl/episodes.hpp"
#include "slmicl/lm.hpp"
#include "slmicl/optim.hpp"

namespace slmicl {

struct LossTraceRow {
  long step = 0;
  double mean_ce = 0.0;
  double grad_norm = 0.0;  // before clipping
  std::string mode;
};

void write_loss_trace_csv(const std::vector<LossTraceRow>& rows, const std::string& path);

/// Deterministic corpus: sequence `index` of the stream.
using CorpusFn = std::function<std::vector<TokenId>(std::uint64_t index)>;

struct PretrainConfig {
  long steps = 3000;
  int batch_size = 16;
  AdamConfig adam{3e-4, 0.9, 0.999, 1e-8, 100, 1.0};
  int log_every = 1;
  // Targets in [weighted_begin, weighted_end) count `target_weight` times in
  // the loss; the mean is taken over total weight.
  double target_weight = 1.0;
  TokenId weighted_begin = 0, weighted_end = 0;
};

/// Next-token cross entropy over every position of each sequence; sequence i
/// of step s is corpus(s * batch_size + i).
std::vector<LossTraceRow> pretrain(ModelParams<float>& model, const CorpusFn& corpus, const PretrainConfig& cfg);

enum class WarmupMode { prompt_tuning, fine_tuning };
std::string to_string(WarmupMode m);
WarmupMode warmup_mode_from_string(const std::string& s);

struct WarmupConfig {
  WarmupMode mode = WarmupMode::prompt_tuning;
  int prompt_len = 5;
  long steps = 2000;
  int batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int eval_every = 0;  // 0 disables the periodic callback
  bool duplicate_target = true;
  int lr_warmup_steps = 100;
  double clip_norm = 1.0;
};

/// Episode j of step s: task j % |tasks| (so batches are balanced whenever the
/// batch size is a multiple of the task count), fresh verbalizer, stream
/// derive_seed(seed, s, j). Without duplication the target is drawn as in
/// ICL episodes.
Episode sample_training_episode(const EpisodeContext& ctx, const std::vector<TaskSpec>& tasks,
                                const WarmupConfig& cfg, long step, int j);

using EvalCallback = std::function<void(long step)>;

struct PromptWarmupResult {
  PromptBank<float> prompts;
  std::vector<LossTraceRow> trace;
};

/// Trains only the prompt bank (and separation embedding); the model is taken
/// by const reference and is never written.
PromptWarmupResult warmup_train(const ModelParams<float>& model, const EpisodeContext& ctx,
                                const std::vector<TaskSpec>& tasks, const WarmupConfig& cfg,
                                const EvalCallback& on_eval = {}, const PromptBank<float>* init = nullptr);

struct FinetuneResult {
  ModelParams<float> model;
  std::vector<LossTraceRow> trace;
};

/// Same loop with gradients flowing into every model parameter.
FinetuneResult finetune_warmup(const ModelParams<float>& model, const EpisodeContext& ctx,
                               const std::vector<TaskSpec>& tasks, const WarmupConfig& cfg,
                               const EvalCallback& on_eval = {});

}  // namespace slmicl
