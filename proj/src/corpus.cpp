#include "slmicl/corpus.hpp"

namespace slmicl {

CorpusFn make_pretrain_corpus(const EpisodeContext& ctx, const MotifPool& pool, const Difficulty& difficulty,
                              const CorpusConfig& cfg, std::uint64_t seed) {
  if (cfg.seq_len < 2) fail(ErrorCode::config, "corpus: seq_len must be >= 2");
  if (cfg.classes < 1 || cfg.classes > ctx.vocab.label_tokens) fail(ErrorCode::config, "corpus: bad class count");
  if (cfg.repeat_frac < 0.0 || cfg.repeat_frac > 1.0) fail(ErrorCode::config, "corpus: repeat_frac outside [0,1]");
  if (cfg.repeat_min < 1 || cfg.repeat_max < cfg.repeat_min) fail(ErrorCode::config, "corpus: bad repeat range");
  require(ctx.space && ctx.codebook, "corpus: context lacks feature space or codebook");

  return [ctx, &pool, difficulty, cfg, seed](std::uint64_t index) {
    Rng rng(derive_seed(seed, index));
    const auto len = static_cast<std::size_t>(cfg.seq_len);
    std::vector<TokenId> seq;
    seq.reserve(len + 24);

    if (rng.uniform() < cfg.repeat_frac) {
      const int m = rng.uniform_int(cfg.repeat_min, cfg.repeat_max);
      std::vector<TokenId> word(static_cast<std::size_t>(m));
      for (auto& t : word) t = rng.uniform_int(ctx.vocab.label_end());
      while (seq.size() < len) seq.insert(seq.end(), word.begin(), word.end());
      seq.resize(len);
      return seq;
    }

    const TaskSpec task = gen_task_spec(rng.next_u64(), cfg.classes, difficulty, TaskGroup::train, pool,
                                        ctx.space->num_symbols);
    const auto tags = rng.sample_without_replacement(ctx.vocab.label_tokens, cfg.classes);
    const TokenId pad = ctx.vocab.pad();
    while (seq.size() < len) {
      const int c = rng.uniform_int(cfg.classes);
      const UnitSequence u = ctx.draw_utterance(task, c, rng);
      seq.insert(seq.end(), u.begin(), u.end());
      seq.push_back(pad);
      seq.push_back(ctx.vocab.label_begin() + tags[static_cast<std::size_t>(c)]);
      seq.push_back(pad);
    }
    seq.resize(len);
    return seq;
  };
}

}  // namespace slmicl
