#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "slmicl/checkpoint.hpp"
#include "slmicl/train.hpp"

using namespace slmicl;

namespace {

struct TrainWorld {
  FeatureSpace space = make_feature_space(8, 4, 1);
  MotifPool pool = make_motif_pool(8, 3, 64, 1);
  Codebook cb;
  std::vector<TaskSpec> tasks;
  EpisodeContext ctx;
  LmConfig cfg;

  TrainWorld() {
    Rng rng(2);
    std::vector<double> pts;
    for (int s = 0; s < 8; ++s)
      for (int i = 0; i < 10; ++i)
        for (int c = 0; c < 4; ++c) pts.push_back(space.prototype(s)[c] + rng.normal(0.0, 0.05));
    cb = kmeans_fit(pts, 4, 8, 50, 3).codebook;
    for (int i = 0; i < 3; ++i)
      tasks.push_back(gen_task_spec(i, 2, Difficulty{}, TaskGroup::train, pool, 8, "t" + std::to_string(i)));
    ctx.space = &space;
    ctx.codebook = &cb;
    ctx.vocab.units = 8;
    ctx.n = 2;
    ctx.L = 4;
    ctx.utt_len_min = ctx.utt_len_max = 4;
    cfg.vocab_size = ctx.vocab.size();
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.max_seq_len = 32;
  }
};

CorpusFn cyclic_corpus() {
  return [](std::uint64_t i) {
    std::vector<TokenId> s;
    for (int t = 0; t < 17; ++t) s.push_back(static_cast<TokenId>((t + i) % 5));
    return s;
  };
}

}  // namespace

TEST(Adam, ScheduleAndClipping) {
  AdamConfig a;
  a.lr = 1.0;
  a.warmup_steps = 4;
  EXPECT_DOUBLE_EQ(scheduled_lr(a, 0), 0.25);
  EXPECT_DOUBLE_EQ(scheduled_lr(a, 3), 1.0);
  EXPECT_DOUBLE_EQ(scheduled_lr(a, 10), 1.0);
  ParamSet<float> g;
  g[g.add("x", {2})].data = {3.0f, 4.0f};
  EXPECT_NEAR(clip_grad_norm(g, 1.0), 5.0, 1e-6);
  EXPECT_NEAR(std::sqrt(g.squared_norm()), 1.0, 1e-6);
}

TEST(Adam, FirstStepMovesBySignedLearningRate) {
  ParamSet<double> p, g;
  p.add("w", {2});
  g[g.add("w", {2})].data = {0.5, -2.0};
  AdamConfig a;
  a.lr = 0.1;
  a.warmup_steps = 0;
  Adam<double> opt(p, a);
  opt.step(p, g);
  EXPECT_NEAR(p[0].data[0], -0.1, 1e-6);
  EXPECT_NEAR(p[0].data[1], 0.1, 1e-6);
}

TEST(Pretrain, ZeroStepsLeavesParamsUnchanged) {
  TrainWorld w;
  auto m = init_model<float>(w.cfg, 1);
  const auto h = backbone_hash(m);
  PretrainConfig pc;
  pc.steps = 0;
  EXPECT_TRUE(pretrain(m, cyclic_corpus(), pc).empty());
  EXPECT_EQ(backbone_hash(m), h);
  pc.steps = 1;
  EXPECT_THROW(pretrain(m, CorpusFn{}, pc), Error);
}

TEST(Pretrain, LossDropsBelowUniformAndIsDeterministic) {
  TrainWorld w;
  auto a = init_model<float>(w.cfg, 1);
  auto b = init_model<float>(w.cfg, 1);
  PretrainConfig pc;
  pc.steps = 150;
  pc.batch_size = 4;
  pc.adam.lr = 3e-3;
  pc.adam.warmup_steps = 10;
  auto ta = pretrain(a, cyclic_corpus(), pc);
  auto tb = pretrain(b, cyclic_corpus(), pc);
  EXPECT_LT(ta.back().mean_ce, std::log(static_cast<double>(w.cfg.vocab_size)));
  EXPECT_LT(ta.back().mean_ce, 0.5 * ta.front().mean_ce);
  EXPECT_EQ(backbone_hash(a), backbone_hash(b));
  EXPECT_EQ(ta.back().mean_ce, tb.back().mean_ce);
}

TEST(Warmup, BalancedBatches) {
  TrainWorld w;
  WarmupConfig wc;
  std::vector<int> counts(3, 0);
  for (int j = 0; j < 33; ++j) {
    auto e = sample_training_episode(w.ctx, w.tasks, wc, 0, j);
    for (int t = 0; t < 3; ++t) counts[t] += e.task_id == w.tasks[t].task_id;
  }
  EXPECT_EQ(counts, (std::vector<int>{11, 11, 11}));
}

TEST(Warmup, ZeroStepsReturnsInitialBank) {
  TrainWorld w;
  auto m = init_model<float>(w.cfg, 1);
  WarmupConfig wc;
  wc.steps = 0;
  auto r = warmup_train(m, w.ctx, w.tasks, wc);
  auto init = init_prompts(m, wc.prompt_len, w.ctx.vocab.sep(), derive_seed(wc.seed, 0x9B1));
  for (std::size_t i = 0; i < init.params.size(); ++i) EXPECT_EQ(r.prompts.params[i].data, init.params[i].data);
  EXPECT_THROW(warmup_train(m, w.ctx, {}, wc), Error);
}

TEST(Warmup, BackboneFrozenAndSingleEpisodeOverfits) {
  TrainWorld w;
  auto m = init_model<float>(w.cfg, 2);
  // Untrained tied embeddings give near-uniform logits; widen them so a prompt
  // alone can move the prediction.
  for (auto& v : m.params[m.tok_embed].data) v *= 50.0f;
  const auto h = backbone_hash(m);
  std::vector<TaskSpec> one{w.tasks[0]};
  WarmupConfig wc;
  wc.steps = 500;
  wc.batch_size = 1;
  wc.lr = 1e-2;
  wc.lr_warmup_steps = 10;
  // Freeze the episode by sampling it once and training on it repeatedly.
  const Episode e = sample_training_episode(w.ctx, one, wc, 0, 0);
  const Layout lay = assemble(e, w.ctx.vocab.sep());
  auto bank = init_prompts(m, 5, w.ctx.vocab.sep(), 1);
  AdamConfig ac;
  ac.lr = wc.lr;
  ac.warmup_steps = 10;
  Adam<float> opt(bank.params, ac);
  double loss = 0;
  for (int s = 0; s < 500; ++s) {
    auto lg = backward(m, std::span<const TokenId>(lay.tokens), &bank, static_cast<int>(lay.tokens.size()) - 1,
                       e.target_label_token, GradTarget::prompts_only);
    loss = lg.loss;
    clip_grad_norm(lg.grads, 1.0);
    opt.step(bank.params, lg.grads);
  }
  EXPECT_LT(loss, 0.1);
  EXPECT_EQ(predict_label(m, &bank, std::span<const TokenId>(lay.tokens), w.ctx.vocab.sep()), e.target_label_token);

  wc.steps = 20;
  wc.batch_size = 6;
  auto r = warmup_train(m, w.ctx, w.tasks, wc);
  EXPECT_EQ(backbone_hash(m), h);
  EXPECT_EQ(r.trace.size(), 20u);
}

TEST(Warmup, DeterministicTrace) {
  TrainWorld w;
  auto m = init_model<float>(w.cfg, 2);
  WarmupConfig wc;
  wc.steps = 5;
  wc.batch_size = 6;
  auto a = warmup_train(m, w.ctx, w.tasks, wc);
  auto b = warmup_train(m, w.ctx, w.tasks, wc);
  for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace[i].mean_ce, b.trace[i].mean_ce);
  for (std::size_t i = 0; i < a.prompts.params.size(); ++i) EXPECT_EQ(a.prompts.params[i].data, b.prompts.params[i].data);
}

TEST(Finetune, ZeroStepsUnchangedAndStepsChangeWeights) {
  TrainWorld w;
  auto m = init_model<float>(w.cfg, 2);
  WarmupConfig wc;
  wc.mode = WarmupMode::fine_tuning;
  wc.steps = 0;
  EXPECT_EQ(backbone_hash(finetune_warmup(m, w.ctx, w.tasks, wc).model), backbone_hash(m));
  wc.steps = 3;
  wc.batch_size = 3;
  auto r = finetune_warmup(m, w.ctx, w.tasks, wc);
  EXPECT_NE(backbone_hash(r.model), backbone_hash(m));
  EXPECT_EQ(r.trace.front().mode, "fine_tuning");
  wc.mode = WarmupMode::prompt_tuning;
  EXPECT_THROW(finetune_warmup(m, w.ctx, w.tasks, wc), Error);
}

TEST(LossTrace, CsvHeader) {
  const std::string path = ::testing::TempDir() + "/trace.csv";
  write_loss_trace_csv({{0, 1.5, 0.2, "prompt_tuning"}}, path);
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "step,mean_ce,grad_norm,mode");
  EXPECT_EQ(row, "0,1.5,0.2,prompt_tuning");
}
