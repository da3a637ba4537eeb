#pragma once

// Few-shot episode construction: verbalizers, utterance length fitting, the
// interleaved demo/label layout, and balanced multi-task datasets.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "slmicl/error.hpp"
#include "slmicl/tasks.hpp"
#include "slmicl/vocab.hpp"

namespace slmicl {

struct Verbalizer {
  std::string task_id;
  std::uint64_t seed = 0;
  std::vector<TokenId> mapping;  // class index -> label token

  TokenId operator()(int class_idx) const { return mapping.at(static_cast<std::size_t>(class_idx)); }
};

/// Injective random map from the task's classes into the label-token region.
Verbalizer build_verbalizer(const TaskSpec& task, const Vocab& vocab, std::uint64_t seed);

/// Truncates (keeping the prefix) or right-pads with `pad_token` to length L.
UnitSequence fit_length(const UnitSequence& seq, int L, TokenId pad_token);

enum class EpisodeMode { warmup, icl };
std::string to_string(EpisodeMode m);
EpisodeMode episode_mode_from_string(const std::string& s);

struct Demonstration {
  UnitSequence utterance;
  TokenId label_token = 0;
  int class_idx = 0;
};

struct Episode {
  std::string task_id;
  EpisodeMode mode = EpisodeMode::icl;
  std::vector<Demonstration> demos;
  UnitSequence target_utterance;
  TokenId target_label_token = 0;
  int target_class = 0;
  std::vector<TokenId> class_labels;  // the verbalizer's full mapping
};

enum class PositionGroup { demo_utterance, demo_label, separator, target };
std::string to_string(PositionGroup g);

struct Layout {
  std::vector<TokenId> tokens;
  std::vector<PositionGroup> groups;  // one entry per token
};

/// [x1, s, y1, s, ..., xn, s, yn, s, xt, s]. With `fixed_length` every
/// utterance must share one length L and the layout has n(L+3)+L+1 tokens.
Layout assemble(const Episode& episode, TokenId sep_token, bool fixed_length = true);

inline std::size_t layout_length(int n, int L) {
  return static_cast<std::size_t>(n) * static_cast<std::size_t>(L + 3) + static_cast<std::size_t>(L) + 1;
}

/// Everything needed to draw utterances and turn them into episodes.
struct EpisodeContext {
  const FeatureSpace* space = nullptr;
  const Codebook* codebook = nullptr;
  Vocab vocab;
  int n = 4;
  int L = 20;             // 0 keeps natural utterance lengths
  int utt_len_min = 20;   // natural (pre-fitting) utterance length range
  int utt_len_max = 20;
  int max_collision_attempts = 100;

  UnitSequence draw_utterance(const TaskSpec& task, int class_idx, Rng& rng) const;
};

/// Demo classes uniform with replacement; the target duplicates a uniformly
/// chosen demo.
Episode sample_warmup_episode(const EpisodeContext& ctx, const TaskSpec& task, const Verbalizer& verb,
                              Rng& rng);

/// Demo classes uniform with replacement; the target class is uniform over the
/// distinct demo classes and its utterance is redrawn until it differs from
/// every demo.
Episode sample_icl_episode(const EpisodeContext& ctx, const TaskSpec& task, const Verbalizer& verb,
                           Rng& rng);

struct Dataset {
  std::vector<Episode> episodes;
  std::map<std::string, int> per_task_counts;
};

/// total / |tasks| episodes per task, interleaved task by task. Episode i uses
/// its own stream derive_seed(seed, i) and a verbalizer drawn from that
/// stream, so label mappings differ across episodes.
Dataset build_balanced_dataset(const EpisodeContext& ctx, const std::vector<TaskSpec>& tasks, int total,
                               EpisodeMode mode, std::uint64_t seed);

/// One episode per line: task_id, mode, demo_units, demo_labels,
/// target_units, target_label, layout.
nlohmann::json episode_to_json(const Episode& e, const Layout& layout);
void write_dataset_ndjson(const Dataset& ds, const EpisodeContext& ctx, const std::string& path);

}  // namespace slmicl
