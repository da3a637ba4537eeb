#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "slmicl/episodes.hpp"

using namespace slmicl;

namespace {

struct Fixture {
  FeatureSpace space = make_feature_space(32, 8, 1);
  MotifPool pool = make_motif_pool(32, 3, 256, 1);
  Codebook cb;
  TaskSpec task;
  EpisodeContext ctx;

  explicit Fixture(int classes = 4) {
    Rng rng(2);
    std::vector<double> pts;
    for (int s = 0; s < 32; ++s)
      for (int i = 0; i < 10; ++i)
        for (int c = 0; c < 8; ++c) pts.push_back(space.prototype(s)[c] + rng.normal(0.0, 0.05));
    cb = kmeans_fit(pts, 8, 32, 50, 3).codebook;
    task = gen_task_spec(5, classes, Difficulty{}, TaskGroup::train, pool, 32, "t0");
    ctx.space = &space;
    ctx.codebook = &cb;
  }
};

}  // namespace

TEST(Verbalizer, InjectiveInsideLabelRegion) {
  Fixture f;
  Vocab v;
  v.label_tokens = 10;
  auto verb = build_verbalizer(f.task, v, 3);
  std::set<TokenId> ids(verb.mapping.begin(), verb.mapping.end());
  EXPECT_EQ(ids.size(), 4u);
  for (TokenId t : ids) EXPECT_TRUE(v.is_label(t));
}

TEST(Verbalizer, DeterministicUnderSeed) {
  Fixture f;
  EXPECT_EQ(build_verbalizer(f.task, Vocab{}, 9).mapping, build_verbalizer(f.task, Vocab{}, 9).mapping);
}

TEST(Verbalizer, TooManyClassesRejected) {
  Fixture f;
  TaskSpec big = f.task;
  big.num_classes = 11;
  Vocab v;
  v.label_tokens = 10;
  EXPECT_THROW(build_verbalizer(big, v, 1), Error);
}

TEST(FitLength, PadsTruncatesAndKeepsExact) {
  EXPECT_EQ(fit_length({1, 2, 3}, 5, 110), (UnitSequence{1, 2, 3, 110, 110}));
  EXPECT_EQ(fit_length({1, 2, 3, 4, 5, 6, 7}, 5, 110), (UnitSequence{1, 2, 3, 4, 5}));
  EXPECT_EQ(fit_length({9}, 1, 110), (UnitSequence{9}));
  EXPECT_THROW(fit_length({1}, 0, 110), Error);
}

TEST(Assemble, InterleavesDemosLabelsAndTarget) {
  Episode e;
  e.demos = {{{7, 3}, 12, 0}, {{9, 9}, 44, 1}};
  e.target_utterance = {7, 3};
  auto lay = assemble(e, 99);
  EXPECT_EQ(lay.tokens, (std::vector<TokenId>{7, 3, 99, 12, 99, 9, 9, 99, 44, 99, 7, 3, 99}));
  ASSERT_EQ(lay.groups.size(), lay.tokens.size());
  EXPECT_EQ(lay.groups[3], PositionGroup::demo_label);
  EXPECT_EQ(lay.groups[10], PositionGroup::target);
  EXPECT_EQ(lay.groups.back(), PositionGroup::separator);
}

TEST(Assemble, SingleDemo) {
  Episode e;
  e.demos = {{{5}, 12, 0}};
  e.target_utterance = {5};
  EXPECT_EQ(assemble(e, 99).tokens, (std::vector<TokenId>{5, 99, 12, 99, 5, 99}));
}

TEST(Assemble, RejectsMismatchedLengthsAndEmptyDemos) {
  Episode e;
  e.demos = {{{1, 2}, 12, 0}, {{3}, 13, 1}};
  e.target_utterance = {1, 2};
  EXPECT_THROW(assemble(e, 99), Error);
  EXPECT_NO_THROW(assemble(e, 99, false));
  Episode empty;
  empty.target_utterance = {1};
  EXPECT_THROW(assemble(empty, 99), Error);
}

TEST(WarmupEpisode, TargetDuplicatesADemo) {
  Fixture f;
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    auto verb = build_verbalizer(f.task, f.ctx.vocab, i);
    auto e = sample_warmup_episode(f.ctx, f.task, verb, rng);
    bool found = false;
    for (const auto& d : e.demos) found |= d.utterance == e.target_utterance && d.label_token == e.target_label_token;
    EXPECT_TRUE(found);
  }
}

TEST(WarmupEpisode, SingleDemoIsTheTarget) {
  Fixture f;
  f.ctx.n = 1;
  Rng rng(4);
  auto e = sample_warmup_episode(f.ctx, f.task, build_verbalizer(f.task, f.ctx.vocab, 1), rng);
  EXPECT_EQ(e.target_utterance, e.demos[0].utterance);
  EXPECT_EQ(e.target_label_token, e.demos[0].label_token);
}

TEST(WarmupEpisode, DemoClassesAreUniform) {
  Fixture f;
  Rng rng(8);
  auto verb = build_verbalizer(f.task, f.ctx.vocab, 1);
  std::vector<int> counts(4, 0);
  const int N = 10000;
  f.ctx.n = 1;
  for (int i = 0; i < N; ++i) ++counts[sample_warmup_episode(f.ctx, f.task, verb, rng).demos[0].class_idx];
  const double sigma = std::sqrt(N * 0.25 * 0.75);
  for (int c : counts) EXPECT_LT(std::abs(c - N * 0.25), 4 * sigma);
}

TEST(IclEpisode, TargetExcludedAndLabelIncluded) {
  Fixture f;
  Rng rng(6);
  for (int i = 0; i < 300; ++i) {
    auto verb = build_verbalizer(f.task, f.ctx.vocab, i);
    auto e = sample_icl_episode(f.ctx, f.task, verb, rng);
    bool label_present = false;
    for (const auto& d : e.demos) {
      EXPECT_NE(d.utterance, e.target_utterance);
      label_present |= d.label_token == e.target_label_token;
    }
    EXPECT_TRUE(label_present);
  }
}

TEST(IclEpisode, TargetClassUniformWhenDemosCoverAllClasses) {
  Fixture f;
  Rng rng(12);
  auto verb = build_verbalizer(f.task, f.ctx.vocab, 2);
  std::vector<int> counts(4, 0);
  int N = 0;
  while (N < 10000) {
    auto e = sample_icl_episode(f.ctx, f.task, verb, rng);
    std::set<int> cls;
    for (const auto& d : e.demos) cls.insert(d.class_idx);
    if (cls.size() != 4) continue;
    ++counts[e.target_class];
    ++N;
  }
  const double sigma = std::sqrt(N * 0.25 * 0.75);
  for (int c : counts) EXPECT_LT(std::abs(c - N * 0.25), 4 * sigma);
}

TEST(IclEpisode, DegenerateClassHitsCollisionBound) {
  Fixture f(2);
  f.task.difficulty.noise_rate = 0.0;
  f.ctx.L = 3;
  f.ctx.utt_len_min = f.ctx.utt_len_max = 3;  // utterance is exactly the motif
  f.ctx.n = 4;
  Rng rng(1);
  auto verb = build_verbalizer(f.task, f.ctx.vocab, 1);
  try {
    sample_icl_episode(f.ctx, f.task, verb, rng);
    FAIL() << "expected collision error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("cannot avoid collision"), std::string::npos);
  }
}

TEST(Dataset, BalancedAndDeterministic) {
  Fixture f;
  std::vector<TaskSpec> tasks;
  for (int i = 0; i < 5; ++i) tasks.push_back(gen_task_spec(i, 4, Difficulty{}, TaskGroup::train, f.pool, 32, "t" + std::to_string(i)));
  auto a = build_balanced_dataset(f.ctx, tasks, 100, EpisodeMode::warmup, 3);
  for (const auto& [id, n] : a.per_task_counts) EXPECT_EQ(n, 20) << id;
  auto b = build_balanced_dataset(f.ctx, tasks, 100, EpisodeMode::warmup, 3);
  for (std::size_t i = 0; i < a.episodes.size(); ++i) {
    EXPECT_EQ(assemble(a.episodes[i], 48).tokens, assemble(b.episodes[i], 48).tokens);
  }
  EXPECT_THROW(build_balanced_dataset(f.ctx, std::vector<TaskSpec>(tasks.begin(), tasks.begin() + 3), 10,
                                      EpisodeMode::warmup, 3),
               Error);
}

TEST(Dataset, NdjsonHasExpectedFields) {
  Fixture f;
  auto ds = build_balanced_dataset(f.ctx, {f.task}, 3, EpisodeMode::icl, 1);
  const std::string path = ::testing::TempDir() + "/episodes.ndjson";
  write_dataset_ndjson(ds, f.ctx, path);
  std::ifstream in(path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    for (const char* key : {"task_id", "mode", "demo_units", "demo_labels", "target_units", "target_label", "layout"})
      EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_EQ(j["layout"].size(), layout_length(4, 20));
    ++lines;
  }
  EXPECT_EQ(lines, 3);
}
