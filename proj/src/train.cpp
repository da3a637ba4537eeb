#include "slmicl/train.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

namespace slmicl {

void write_loss_trace_csv(const std::vector<LossTraceRow>& rows, const std::string& path) {
  std::ofstream f(path);
  if (!f) fail(ErrorCode::io, "cannot open '" + path + "' for writing");
  f << "step,mean_ce,grad_norm,mode\n" << std::setprecision(9);
  for (const auto& r : rows) f << r.step << ',' << r.mean_ce << ',' << r.grad_norm << ',' << r.mode << '\n';
  if (!f) fail(ErrorCode::io, "write to '" + path + "' failed");
}

std::string to_string(WarmupMode m) { return m == WarmupMode::prompt_tuning ? "prompt_tuning" : "fine_tuning"; }

WarmupMode warmup_mode_from_string(const std::string& s) {
  if (s == "prompt_tuning") return WarmupMode::prompt_tuning;
  if (s == "fine_tuning") return WarmupMode::fine_tuning;
  fail(ErrorCode::config, "unknown warmup mode '" + s + "'");
}

std::vector<LossTraceRow> pretrain(ModelParams<float>& model, const CorpusFn& corpus, const PretrainConfig& cfg) {
  if (cfg.steps < 0) fail(ErrorCode::invalid_argument, "pretrain: steps must be >= 0");
  if (cfg.steps > 0 && !corpus) fail(ErrorCode::invalid_argument, "pretrain: empty corpus");
  require(cfg.batch_size >= 1, "pretrain: batch_size must be >= 1");
  require(cfg.target_weight > 0.0, "pretrain: target_weight must be positive");
  Adam<float> opt(model.params, cfg.adam);
  std::vector<LossTraceRow> trace;
  for (long step = 0; step < cfg.steps; ++step) {
    std::vector<ParamSet<float>> parts;
    double loss = 0.0;
    double total_weight = 0.0;
    for (int i = 0; i < cfg.batch_size; ++i) {
      const auto seq = corpus(static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(cfg.batch_size) +
                              static_cast<std::uint64_t>(i));
      if (seq.size() < 2) fail(ErrorCode::invalid_argument, "pretrain: corpus produced a sequence shorter than 2");
      std::vector<LossTerm> terms;
      for (std::size_t p = 0; p + 1 < seq.size(); ++p) {
        const TokenId t = seq[p + 1];
        const double w = t >= cfg.weighted_begin && t < cfg.weighted_end ? cfg.target_weight : 1.0;
        terms.push_back({static_cast<int>(p), t, w});
        total_weight += w;
      }
      const std::span<const TokenId> input(seq.data(), seq.size() - 1);
      auto lg = backward(model, input, static_cast<const PromptBank<float>*>(nullptr),
                         std::span<const LossTerm>(terms), GradTarget::full_model);
      loss += lg.loss;
      parts.push_back(std::move(lg.grads));
    }
    ParamSet<float> grads = pairwise_sum(std::move(parts));
    const float inv = static_cast<float>(1.0 / total_weight);
    for (auto& t : grads)
      for (auto& v : t.data) v *= inv;
    const double norm = clip_grad_norm(grads, cfg.adam.clip_norm);
    if (!std::isfinite(norm)) fail(ErrorCode::invariant, "pretrain: non-finite gradient at step " + std::to_string(step));
    opt.step(model.params, grads);
    if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) {
      trace.push_back({step, loss / total_weight, norm, "pretrain"});
    }
  }
  return trace;
}

Episode sample_training_episode(const EpisodeContext& ctx, const std::vector<TaskSpec>& tasks,
                                const WarmupConfig& cfg, long step, int j) {
  const TaskSpec& task = tasks[static_cast<std::size_t>(j) % tasks.size()];
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(j)));
  const Verbalizer verb = build_verbalizer(task, ctx.vocab, rng.next_u64());
  return cfg.duplicate_target ? sample_warmup_episode(ctx, task, verb, rng) : sample_icl_episode(ctx, task, verb, rng);
}

namespace {

void check_warmup_inputs(const std::vector<TaskSpec>& tasks, const WarmupConfig& cfg) {
  if (tasks.empty()) fail(ErrorCode::invalid_argument, "warmup: empty task set");
  if (cfg.steps < 0) fail(ErrorCode::invalid_argument, "warmup: steps must be >= 0");
  require(cfg.batch_size >= 1, "warmup: batch_size must be >= 1");
}

AdamConfig warmup_adam(const WarmupConfig& cfg) {
  AdamConfig a;
  a.lr = cfg.lr;
  a.warmup_steps = cfg.lr_warmup_steps;
  a.clip_norm = cfg.clip_norm;
  return a;
}

// Runs the shared episode loop; `grad_of` returns (loss, grads) for one
// episode layout and `apply` consumes the averaged, clipped gradient.
template <typename GradFn, typename ApplyFn>
std::vector<LossTraceRow> episode_loop(const EpisodeContext& ctx, const std::vector<TaskSpec>& tasks,
                                       const WarmupConfig& cfg, const EvalCallback& on_eval, GradFn grad_of,
                                       ApplyFn apply) {
  std::vector<LossTraceRow> trace;
  for (long step = 0; step < cfg.steps; ++step) {
    std::vector<ParamSet<float>> parts;
    double loss = 0.0;
    for (int j = 0; j < cfg.batch_size; ++j) {
      const Episode e = sample_training_episode(ctx, tasks, cfg, step, j);
      const Layout layout = assemble(e, ctx.vocab.sep(), ctx.L > 0);
      auto lg = grad_of(layout.tokens, e.target_label_token);
      loss += lg.loss;
      parts.push_back(std::move(lg.grads));
    }
    ParamSet<float> grads = pairwise_sum(std::move(parts));
    const float inv = 1.0f / static_cast<float>(cfg.batch_size);
    for (auto& t : grads)
      for (auto& v : t.data) v *= inv;
    const double norm = clip_grad_norm(grads, cfg.clip_norm);
    if (!std::isfinite(norm)) fail(ErrorCode::invariant, "warmup: non-finite gradient at step " + std::to_string(step));
    apply(grads);
    trace.push_back({step, loss / cfg.batch_size, norm, to_string(cfg.mode)});
    if (on_eval && cfg.eval_every > 0 && ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps)) on_eval(step + 1);
  }
  return trace;
}

}  // namespace

PromptWarmupResult warmup_train(const ModelParams<float>& model, const EpisodeContext& ctx,
                                const std::vector<TaskSpec>& tasks, const WarmupConfig& cfg,
                                const EvalCallback& on_eval, const PromptBank<float>* init) {
  check_warmup_inputs(tasks, cfg);
  if (cfg.mode != WarmupMode::prompt_tuning) fail(ErrorCode::config, "warmup_train requires mode=prompt_tuning");
  PromptWarmupResult out{init ? *init : init_prompts(model, cfg.prompt_len, ctx.vocab.sep(), derive_seed(cfg.seed, 0x9B1)),
                         {}};
  Adam<float> opt(out.prompts.params, warmup_adam(cfg));
  out.trace = episode_loop(
      ctx, tasks, cfg, on_eval,
      [&](const std::vector<TokenId>& toks, TokenId target) {
        return backward(model, std::span<const TokenId>(toks), &out.prompts, static_cast<int>(toks.size()) - 1,
                        target, GradTarget::prompts_only);
      },
      [&](const ParamSet<float>& g) { opt.step(out.prompts.params, g); });
  return out;
}

FinetuneResult finetune_warmup(const ModelParams<float>& model, const EpisodeContext& ctx,
                               const std::vector<TaskSpec>& tasks, const WarmupConfig& cfg,
                               const EvalCallback& on_eval) {
  check_warmup_inputs(tasks, cfg);
  if (cfg.mode != WarmupMode::fine_tuning) fail(ErrorCode::config, "finetune_warmup requires mode=fine_tuning");
  FinetuneResult out{model, {}};
  Adam<float> opt(out.model.params, warmup_adam(cfg));
  out.trace = episode_loop(
      ctx, tasks, cfg, on_eval,
      [&](const std::vector<TokenId>& toks, TokenId target) {
        return backward(out.model, std::span<const TokenId>(toks), static_cast<const PromptBank<float>*>(nullptr),
                        static_cast<int>(toks.size()) - 1, target, GradTarget::full_model);
      },
      [&](const ParamSet<float>& g) { opt.step(out.model.params, g); });
  return out;
}

}  // namespace slmicl
