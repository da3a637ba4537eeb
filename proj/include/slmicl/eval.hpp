#pragma once

#include <array>
#include <string>
#include <vector>

#include "slmicl/episodes.hpp"
#include "slmicl/lm.hpp"

namespace slmicl {

enum class EvalMethod { with_warmup, without_warmup, random, linear_clf };
std::string to_string(EvalMethod m);

struct EvalReport {
  std::string group;
  std::string task_id;
  std::string split;  // "train_tasks" or "test_tasks"
  EvalMethod method = EvalMethod::with_warmup;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;  // population std across repeats
  double guessing_rate = 0.0;
  int n_repeats = 0;
  int n_episodes = 0;  // per repeat
  // Accuracy when decoding is restricted to the episode's verbalizer tokens.
  double constrained_accuracy = 0.0;
};

void write_eval_csv(const std::vector<EvalReport>& rows, const std::string& path);
/// Guessing rates of the LM methods only: group, task_id, split, method, guessing_rate.
void write_guessing_csv(const std::vector<EvalReport>& rows, const std::string& path);

/// Fraction of predictions that fall in their episode's set of demo labels.
double guessing_rate(const std::vector<TokenId>& predictions, const std::vector<Episode>& episodes);

/// Uniform draw from each episode's multiset of demo labels.
double random_baseline(const std::vector<Episode>& episodes, Rng& rng);

/// L1-normalized unit histogram.
std::vector<double> histogram_features(const UnitSequence& seq, int k);

struct LinearClassifier {
  int dim = 0;
  std::vector<TokenId> labels;           // one binary classifier per label, ascending
  std::vector<std::vector<double>> w;    // per label, length dim
  std::vector<double> b;

  double margin(std::size_t c, const std::vector<double>& x) const;
};

struct LinearClfConfig {
  int epochs = 200;
  double lr = 0.1;
  double lambda = 1e-3;
  std::uint64_t seed = 0;
};

/// One-vs-rest linear SVM on histogram features, subgradient descent on
/// lambda/2 |w|^2 + mean hinge.
LinearClassifier linear_clf_fit(const std::vector<std::pair<UnitSequence, TokenId>>& demos, int k,
                                const LinearClfConfig& cfg = {});
TokenId linear_clf_predict(const LinearClassifier& clf, const UnitSequence& seq);
/// Regularized objective of binary classifier `c` on the training set.
double linear_clf_objective(const LinearClassifier& clf, std::size_t c,
                            const std::vector<std::pair<UnitSequence, TokenId>>& demos, double lambda);

struct EvalSpec {
  std::string group = "desk";
  std::string split = "train_tasks";
  int n_episodes = 200;  // per task and repeat
  int n_repeats = 5;
  std::uint64_t seed = 0;
};

/// ICL episodes for (task t, repeat r, index i) come from
/// derive_seed(derive_seed(seed, r), t, i), so every method sees the same
/// episodes.
std::vector<Episode> eval_episodes(const EpisodeContext& ctx, const TaskSpec& task, std::size_t task_index,
                                   const EvalSpec& spec, int repeat);

/// One row per task plus an "all" row averaging the tasks. With prompts the
/// method is with_warmup, otherwise without_warmup.
std::vector<EvalReport> eval_accuracy(const ModelParams<float>& model, const PromptBank<float>* prompts,
                                      const EpisodeContext& ctx, const std::vector<TaskSpec>& tasks,
                                      const EvalSpec& spec);

std::vector<EvalReport> eval_random(const EpisodeContext& ctx, const std::vector<TaskSpec>& tasks,
                                    const EvalSpec& spec);
std::vector<EvalReport> eval_linear_clf(const EpisodeContext& ctx, const std::vector<TaskSpec>& tasks,
                                        const EvalSpec& spec);

struct AttentionProfile {
  static constexpr int kGroups = 5;  // prompt, demo_utterance, demo_label, separator, target
  std::vector<std::array<double, kGroups>> layers;
};

AttentionProfile attention_profile(const ModelParams<float>& model, const PromptBank<float>* prompts,
                                   const std::vector<Layout>& layouts);
void write_attention_csv(const AttentionProfile& p, const std::string& path);
/// Layers x groups greyscale image, 0..255 linear in mass, each cell scaled
/// up to a visible block.
void write_attention_pgm(const AttentionProfile& p, const std::string& path, int cell = 16);

}  // namespace slmicl
