#include "slmicl/episodes.hpp"

#include <algorithm>
#include <fstream>

namespace slmicl {

Verbalizer build_verbalizer(const TaskSpec& task, const Vocab& vocab, std::uint64_t seed) {
  if (task.num_classes > vocab.label_tokens) {
    fail(ErrorCode::invalid_argument, "verbalizer: " + std::to_string(task.num_classes) +
                                          " classes do not fit a label region of " +
                                          std::to_string(vocab.label_tokens) + " tokens");
  }
  Rng rng(derive_seed(seed, 0x7E4B));
  Verbalizer v;
  v.task_id = task.task_id;
  v.seed = seed;
  for (int idx : rng.sample_without_replacement(vocab.label_tokens, task.num_classes)) {
    v.mapping.push_back(vocab.label_begin() + idx);
  }
  return v;
}

UnitSequence fit_length(const UnitSequence& seq, int L, TokenId pad_token) {
  if (L < 1) fail(ErrorCode::invalid_argument, "fit_length: L must be >= 1, got " + std::to_string(L));
  UnitSequence out(seq.begin(), seq.begin() + std::min<std::ptrdiff_t>(L, static_cast<std::ptrdiff_t>(seq.size())));
  out.resize(static_cast<std::size_t>(L), pad_token);
  return out;
}

std::string to_string(EpisodeMode m) { return m == EpisodeMode::warmup ? "warmup" : "icl"; }

EpisodeMode episode_mode_from_string(const std::string& s) {
  if (s == "warmup") return EpisodeMode::warmup;
  if (s == "icl") return EpisodeMode::icl;
  fail(ErrorCode::config, "unknown episode mode '" + s + "'");
}

std::string to_string(PositionGroup g) {
  switch (g) {
    case PositionGroup::demo_utterance: return "demo_utterance";
    case PositionGroup::demo_label: return "demo_label";
    case PositionGroup::separator: return "separator";
    case PositionGroup::target: return "target";
  }
  return "?";
}

Layout assemble(const Episode& episode, TokenId sep_token, bool fixed_length) {
  if (episode.demos.empty()) fail(ErrorCode::invalid_argument, "assemble: episode has no demonstrations");
  const std::size_t L = episode.target_utterance.size();
  if (fixed_length) {
    for (const auto& d : episode.demos) {
      if (d.utterance.size() != L) {
        fail(ErrorCode::invalid_argument, "assemble: utterance length " + std::to_string(d.utterance.size()) +
                                              " differs from target length " + std::to_string(L));
      }
    }
  }
  Layout out;
  auto push = [&](TokenId t, PositionGroup g) {
    out.tokens.push_back(t);
    out.groups.push_back(g);
  };
  for (const auto& d : episode.demos) {
    for (TokenId t : d.utterance) push(t, PositionGroup::demo_utterance);
    push(sep_token, PositionGroup::separator);
    push(d.label_token, PositionGroup::demo_label);
    push(sep_token, PositionGroup::separator);
  }
  for (TokenId t : episode.target_utterance) push(t, PositionGroup::target);
  push(sep_token, PositionGroup::separator);
  return out;
}

UnitSequence EpisodeContext::draw_utterance(const TaskSpec& task, int class_idx, Rng& rng) const {
  require(space && codebook, "episode context lacks a feature space or codebook");
  const int len = utt_len_min == utt_len_max ? utt_len_min : rng.uniform_int(utt_len_min, utt_len_max);
  UnitSequence u = sample_utterance(*space, task, class_idx, len, *codebook, rng);
  return L > 0 ? fit_length(u, L, vocab.pad()) : u;
}

namespace {

std::vector<Demonstration> draw_demos(const EpisodeContext& ctx, const TaskSpec& task, const Verbalizer& verb,
                                      Rng& rng) {
  require(ctx.n >= 1, "episodes need n >= 1 demonstrations");
  std::vector<Demonstration> demos;
  for (int i = 0; i < ctx.n; ++i) {
    Demonstration d;
    d.class_idx = rng.uniform_int(task.num_classes);
    d.utterance = ctx.draw_utterance(task, d.class_idx, rng);
    d.label_token = verb(d.class_idx);
    demos.push_back(std::move(d));
  }
  return demos;
}

}  // namespace

Episode sample_warmup_episode(const EpisodeContext& ctx, const TaskSpec& task, const Verbalizer& verb, Rng& rng) {
  Episode e;
  e.task_id = task.task_id;
  e.mode = EpisodeMode::warmup;
  e.class_labels = verb.mapping;
  e.demos = draw_demos(ctx, task, verb, rng);
  const auto& pick = e.demos[static_cast<std::size_t>(rng.uniform_int(ctx.n))];
  e.target_utterance = pick.utterance;
  e.target_label_token = pick.label_token;
  e.target_class = pick.class_idx;
  return e;
}

Episode sample_icl_episode(const EpisodeContext& ctx, const TaskSpec& task, const Verbalizer& verb, Rng& rng) {
  Episode e;
  e.task_id = task.task_id;
  e.mode = EpisodeMode::icl;
  e.class_labels = verb.mapping;
  e.demos = draw_demos(ctx, task, verb, rng);
  std::vector<int> present;
  for (const auto& d : e.demos) present.push_back(d.class_idx);
  std::sort(present.begin(), present.end());
  present.erase(std::unique(present.begin(), present.end()), present.end());
  e.target_class = present[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(present.size())))];
  e.target_label_token = verb(e.target_class);
  for (int attempt = 0; attempt < ctx.max_collision_attempts; ++attempt) {
    UnitSequence cand = ctx.draw_utterance(task, e.target_class, rng);
    const bool collides = std::any_of(e.demos.begin(), e.demos.end(),
                                      [&](const Demonstration& d) { return d.utterance == cand; });
    if (!collides) {
      e.target_utterance = std::move(cand);
      return e;
    }
  }
  fail(ErrorCode::invariant, "cannot avoid collision: target utterance matched a demonstration in " +
                                 std::to_string(ctx.max_collision_attempts) + " attempts");
}

Dataset build_balanced_dataset(const EpisodeContext& ctx, const std::vector<TaskSpec>& tasks, int total,
                               EpisodeMode mode, std::uint64_t seed) {
  if (tasks.empty()) fail(ErrorCode::invalid_argument, "build_balanced_dataset: no tasks");
  const int T = static_cast<int>(tasks.size());
  if (total < 0 || total % T != 0) {
    fail(ErrorCode::invalid_argument, "build_balanced_dataset: total " + std::to_string(total) +
                                          " is not divisible by " + std::to_string(T) + " tasks");
  }
  Dataset ds;
  for (const auto& t : tasks) ds.per_task_counts[t.task_id] = 0;
  for (int i = 0; i < total; ++i) {
    const TaskSpec& task = tasks[static_cast<std::size_t>(i % T)];
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const Verbalizer verb = build_verbalizer(task, ctx.vocab, rng.next_u64());
    ds.episodes.push_back(mode == EpisodeMode::warmup ? sample_warmup_episode(ctx, task, verb, rng)
                                                      : sample_icl_episode(ctx, task, verb, rng));
    ++ds.per_task_counts[task.task_id];
  }
  return ds;
}

nlohmann::json episode_to_json(const Episode& e, const Layout& layout) {
  nlohmann::json demo_units = nlohmann::json::array();
  nlohmann::json demo_labels = nlohmann::json::array();
  for (const auto& d : e.demos) {
    demo_units.push_back(d.utterance);
    demo_labels.push_back(d.label_token);
  }
  return {{"task_id", e.task_id},
          {"mode", to_string(e.mode)},
          {"demo_units", demo_units},
          {"demo_labels", demo_labels},
          {"target_units", e.target_utterance},
          {"target_label", e.target_label_token},
          {"layout", layout.tokens}};
}

void write_dataset_ndjson(const Dataset& ds, const EpisodeContext& ctx, const std::string& path) {
  std::ofstream f(path);
  if (!f) fail(ErrorCode::io, "cannot open '" + path + "' for writing");
  for (const auto& e : ds.episodes) {
    f << episode_to_json(e, assemble(e, ctx.vocab.sep(), ctx.L > 0)).dump() << '\n';
  }
  if (!f) fail(ErrorCode::io, "write to '" + path + "' failed");
}

}  // namespace slmicl
