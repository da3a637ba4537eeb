#pragma once

// Unit-token corpus for next-token pretraining. Each sequence is a short
// "session" drawn from a fresh random task: utterances followed by a tag token
// from the label region, delimited by pad, so that predicting a tag rewards
// recalling the tag of an earlier utterance of the same class. A fraction of
// sequences are plain repeats of a random token string, which makes
// copy-from-context circuits form early.

#include <cstdint>

#include "slmicl/episodes.hpp"
#include "slmicl/train.hpp"

namespace slmicl {

struct CorpusConfig {
  int seq_len = 115;        // tokens per training sequence (input + 1 target)
  int classes = 2;          // classes per session
  double repeat_frac = 0.3; // share of plain-repeat sequences
  int repeat_min = 8;       // repeated string length range
  int repeat_max = 24;
};

/// Sequence i is generated from derive_seed(seed, i) alone. Session tasks draw
/// motifs from the train half of `pool` only. `pool` and the context's
/// space and codebook must outlive the returned function.
CorpusFn make_pretrain_corpus(const EpisodeContext& ctx, const MotifPool& pool, const Difficulty& difficulty,
                              const CorpusConfig& cfg, std::uint64_t seed);

}  // namespace slmicl
