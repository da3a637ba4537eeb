#include "slmicl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>

namespace slmicl {

std::string to_string(EvalMethod m) {
  switch (m) {
    case EvalMethod::with_warmup: return "with_warmup";
    case EvalMethod::without_warmup: return "without_warmup";
    case EvalMethod::random: return "random";
    case EvalMethod::linear_clf: return "linear_clf";
  }
  return "?";
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) fail(ErrorCode::io, "cannot open '" + path + "' for writing");
  f << std::setprecision(9);
  return f;
}

bool in_demo_labels(TokenId t, const Episode& e) {
  return std::any_of(e.demos.begin(), e.demos.end(), [&](const Demonstration& d) { return d.label_token == t; });
}

struct Stats {
  double mean = 0.0, stddev = 0.0;
};

Stats population_stats(const std::vector<double>& xs) {
  Stats s;
  if (xs.empty()) return s;
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(xs.size()));
  return s;
}

// Per-episode outcome of one method.
struct Outcome {
  bool correct = false;
  bool in_set = false;
  bool constrained_correct = false;
};

// Runs `score` on every (task, repeat) episode set and folds the outcomes into
// per-task rows and an "all" row.
template <typename ScoreFn>
std::vector<EvalReport> run_method(const EpisodeContext& ctx, const std::vector<TaskSpec>& tasks,
                                   const EvalSpec& spec, EvalMethod method, ScoreFn score) {
  if (tasks.empty()) fail(ErrorCode::invalid_argument, "eval: empty task set");
  require(spec.n_repeats >= 1, "eval: n_repeats must be >= 1");
  require(spec.n_episodes >= 1, "eval: n_episodes must be >= 1");
  const std::size_t T = tasks.size();
  const auto R = static_cast<std::size_t>(spec.n_repeats);
  std::vector<std::vector<double>> acc(T + 1, std::vector<double>(R)), guess = acc, cacc = acc;
  for (std::size_t r = 0; r < R; ++r) {
    double all_acc = 0, all_guess = 0, all_cacc = 0;
    for (std::size_t t = 0; t < T; ++t) {
      const auto eps = eval_episodes(ctx, tasks[t], t, spec, static_cast<int>(r));
      Rng rng(derive_seed(spec.seed ^ 0x5EED5EEDull, r, t));
      double a = 0, g = 0, c = 0;
      for (const auto& e : eps) {
        const Outcome o = score(e, rng);
        a += o.correct;
        g += o.in_set;
        c += o.constrained_correct;
      }
      const double n = static_cast<double>(eps.size());
      acc[t][r] = a / n;
      guess[t][r] = g / n;
      cacc[t][r] = c / n;
      all_acc += a / n;
      all_guess += g / n;
      all_cacc += c / n;
    }
    acc[T][r] = all_acc / static_cast<double>(T);
    guess[T][r] = all_guess / static_cast<double>(T);
    cacc[T][r] = all_cacc / static_cast<double>(T);
  }
  std::vector<EvalReport> rows;
  for (std::size_t t = 0; t <= T; ++t) {
    EvalReport rep;
    rep.group = spec.group;
    rep.task_id = t < T ? tasks[t].task_id : "all";
    rep.split = spec.split;
    rep.method = method;
    const Stats s = population_stats(acc[t]);
    rep.accuracy_mean = s.mean;
    rep.accuracy_std = s.stddev;
    rep.guessing_rate = population_stats(guess[t]).mean;
    rep.constrained_accuracy = population_stats(cacc[t]).mean;
    rep.n_repeats = spec.n_repeats;
    rep.n_episodes = spec.n_episodes * (t < T ? 1 : static_cast<int>(T));
    rows.push_back(rep);
  }
  return rows;
}

}  // namespace

void write_eval_csv(const std::vector<EvalReport>& rows, const std::string& path) {
  auto f = open_out(path);
  f << "group,task_id,split,method,accuracy_mean,accuracy_std,guessing_rate,n_repeats,n_episodes,"
       "constrained_accuracy\n";
  for (const auto& r : rows) {
    f << r.group << ',' << r.task_id << ',' << r.split << ',' << to_string(r.method) << ',' << r.accuracy_mean << ','
      << r.accuracy_std << ',' << r.guessing_rate << ',' << r.n_repeats << ',' << r.n_episodes << ','
      << r.constrained_accuracy << '\n';
  }
  if (!f) fail(ErrorCode::io, "write to '" + path + "' failed");
}

void write_guessing_csv(const std::vector<EvalReport>& rows, const std::string& path) {
  auto f = open_out(path);
  f << "group,task_id,split,method,guessing_rate\n";
  for (const auto& r : rows) {
    if (r.method != EvalMethod::with_warmup && r.method != EvalMethod::without_warmup) continue;
    f << r.group << ',' << r.task_id << ',' << r.split << ',' << to_string(r.method) << ',' << r.guessing_rate << '\n';
  }
  if (!f) fail(ErrorCode::io, "write to '" + path + "' failed");
}

double guessing_rate(const std::vector<TokenId>& predictions, const std::vector<Episode>& episodes) {
  if (predictions.size() != episodes.size()) {
    fail(ErrorCode::invalid_argument, "guessing_rate: " + std::to_string(predictions.size()) + " predictions for " +
                                          std::to_string(episodes.size()) + " episodes");
  }
  if (episodes.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < episodes.size(); ++i) hits += in_demo_labels(predictions[i], episodes[i]);
  return static_cast<double>(hits) / static_cast<double>(episodes.size());
}

double random_baseline(const std::vector<Episode>& episodes, Rng& rng) {
  if (episodes.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& e : episodes) {
    const auto& d = e.demos[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(e.demos.size())))];
    hits += d.label_token == e.target_label_token;
  }
  return static_cast<double>(hits) / static_cast<double>(episodes.size());
}

std::vector<double> histogram_features(const UnitSequence& seq, int k) {
  if (seq.empty()) fail(ErrorCode::invalid_argument, "histogram_features: empty sequence");
  std::vector<double> h(static_cast<std::size_t>(k), 0.0);
  for (TokenId u : seq) {
    if (u < 0 || u >= k) fail(ErrorCode::invalid_argument, "histogram_features: unit " + std::to_string(u) + " >= k");
    h[static_cast<std::size_t>(u)] += 1.0;
  }
  for (auto& v : h) v /= static_cast<double>(seq.size());
  return h;
}

double LinearClassifier::margin(std::size_t c, const std::vector<double>& x) const {
  double m = b[c];
  for (int i = 0; i < dim; ++i) m += w[c][static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
  return m;
}

namespace {

// Pads are not units; they are dropped before the histogram.
std::vector<double> clf_features(const UnitSequence& seq, int k) {
  UnitSequence units;
  for (TokenId t : seq)
    if (t >= 0 && t < k) units.push_back(t);
  if (units.empty()) return std::vector<double>(static_cast<std::size_t>(k), 0.0);
  return histogram_features(units, k);
}

}  // namespace

LinearClassifier linear_clf_fit(const std::vector<std::pair<UnitSequence, TokenId>>& demos, int k,
                                const LinearClfConfig& cfg) {
  if (demos.empty()) fail(ErrorCode::invalid_argument, "linear_clf_fit: no demonstrations");
  LinearClassifier clf;
  clf.dim = k;
  std::set<TokenId> labels;
  for (const auto& d : demos) labels.insert(d.second);
  clf.labels.assign(labels.begin(), labels.end());
  std::vector<std::vector<double>> xs;
  for (const auto& d : demos) xs.push_back(clf_features(d.first, k));
  const std::size_t N = demos.size();
  Rng rng(cfg.seed);
  for (std::size_t c = 0; c < clf.labels.size(); ++c) {
    std::vector<double> w(static_cast<std::size_t>(k), 0.0);
    double b = 0.0;
    std::vector<int> order(N);
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      for (std::size_t i = N; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i)))]);
      for (int idx : order) {
        const auto& x = xs[static_cast<std::size_t>(idx)];
        const double y = demos[static_cast<std::size_t>(idx)].second == clf.labels[c] ? 1.0 : -1.0;
        double m = b;
        for (std::size_t j = 0; j < w.size(); ++j) m += w[j] * x[j];
        const bool active = y * m < 1.0;
        for (std::size_t j = 0; j < w.size(); ++j) w[j] -= cfg.lr * (cfg.lambda * w[j] - (active ? y * x[j] : 0.0));
        if (active) b += cfg.lr * y;
      }
    }
    clf.w.push_back(std::move(w));
    clf.b.push_back(b);
  }
  return clf;
}

TokenId linear_clf_predict(const LinearClassifier& clf, const UnitSequence& seq) {
  require(!clf.labels.empty(), "linear_clf_predict: classifier is not fitted");
  const auto x = clf_features(seq, clf.dim);
  std::size_t best = 0;
  double best_m = clf.margin(0, x);
  for (std::size_t c = 1; c < clf.labels.size(); ++c) {
    const double m = clf.margin(c, x);
    if (m > best_m) {
      best_m = m;
      best = c;
    }
  }
  return clf.labels[best];
}

double linear_clf_objective(const LinearClassifier& clf, std::size_t c,
                            const std::vector<std::pair<UnitSequence, TokenId>>& demos, double lambda) {
  double reg = 0.0;
  for (double v : clf.w[c]) reg += v * v;
  double hinge = 0.0;
  for (const auto& d : demos) {
    const double y = d.second == clf.labels[c] ? 1.0 : -1.0;
    hinge += std::max(0.0, 1.0 - y * clf.margin(c, clf_features(d.first, clf.dim)));
  }
  return 0.5 * lambda * reg + hinge / static_cast<double>(demos.size());
}

std::vector<Episode> eval_episodes(const EpisodeContext& ctx, const TaskSpec& task, std::size_t task_index,
                                   const EvalSpec& spec, int repeat) {
  std::vector<Episode> out;
  const std::uint64_t base = derive_seed(spec.seed, static_cast<std::uint64_t>(repeat));
  for (int i = 0; i < spec.n_episodes; ++i) {
    Rng rng(derive_seed(base, task_index, static_cast<std::uint64_t>(i)));
    const Verbalizer verb = build_verbalizer(task, ctx.vocab, rng.next_u64());
    out.push_back(sample_icl_episode(ctx, task, verb, rng));
  }
  return out;
}

std::vector<EvalReport> eval_accuracy(const ModelParams<float>& model, const PromptBank<float>* prompts,
                                      const EpisodeContext& ctx, const std::vector<TaskSpec>& tasks,
                                      const EvalSpec& spec) {
  ForwardOptions opts;
  opts.record_attention = false;
  opts.all_logits = false;
  const bool fixed = ctx.L > 0;
  return run_method(ctx, tasks, spec, prompts ? EvalMethod::with_warmup : EvalMethod::without_warmup,
                    [&](const Episode& e, Rng&) {
                      const Layout layout = assemble(e, ctx.vocab.sep(), fixed);
                      const auto trace = forward(model, std::span<const TokenId>(layout.tokens), prompts, opts);
                      const auto row = trace.logits_row(trace.seq_len - 1);
                      const TokenId pred = argmax_token(row);
                      TokenId best = e.class_labels.front();
                      for (TokenId t : e.class_labels)
                        if (row[static_cast<std::size_t>(t)] > row[static_cast<std::size_t>(best)] ||
                            (row[static_cast<std::size_t>(t)] == row[static_cast<std::size_t>(best)] && t < best))
                          best = t;
                      return Outcome{pred == e.target_label_token, in_demo_labels(pred, e), best == e.target_label_token};
                    });
}

std::vector<EvalReport> eval_random(const EpisodeContext& ctx, const std::vector<TaskSpec>& tasks,
                                    const EvalSpec& spec) {
  return run_method(ctx, tasks, spec, EvalMethod::random, [&](const Episode& e, Rng& rng) {
    const auto& d = e.demos[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(e.demos.size())))];
    const bool ok = d.label_token == e.target_label_token;
    return Outcome{ok, true, ok};
  });
}

std::vector<EvalReport> eval_linear_clf(const EpisodeContext& ctx, const std::vector<TaskSpec>& tasks,
                                        const EvalSpec& spec) {
  return run_method(ctx, tasks, spec, EvalMethod::linear_clf, [&](const Episode& e, Rng& rng) {
    std::vector<std::pair<UnitSequence, TokenId>> demos;
    for (const auto& d : e.demos) demos.emplace_back(d.utterance, d.label_token);
    LinearClfConfig cfg;
    cfg.seed = rng.next_u64();
    const TokenId pred = linear_clf_predict(linear_clf_fit(demos, ctx.vocab.units, cfg), e.target_utterance);
    const bool ok = pred == e.target_label_token;
    return Outcome{ok, true, ok};
  });
}

AttentionProfile attention_profile(const ModelParams<float>& model, const PromptBank<float>* prompts,
                                   const std::vector<Layout>& layouts) {
  require(!layouts.empty(), "attention_profile: no episodes");
  AttentionProfile p;
  p.layers.assign(static_cast<std::size_t>(model.config.n_layers), {});
  ForwardOptions opts;
  opts.all_logits = false;
  for (const auto& lay : layouts) {
    if (lay.groups.size() != lay.tokens.size()) fail(ErrorCode::invalid_argument, "attention_profile: missing position groups");
    const auto tr = forward(model, std::span<const TokenId>(lay.tokens), prompts, opts);
    const int q = tr.seq_len - 1;
    for (int l = 0; l < tr.n_layers; ++l) {
      std::array<double, AttentionProfile::kGroups> mass{};
      for (int h = 0; h < tr.n_heads; ++h) {
        const auto row = tr.attention_row(l, h, q);
        for (int j = 0; j < tr.key_len(); ++j) {
          const std::size_t g = j < tr.prompt_len
                                    ? 0
                                    : 1 + static_cast<std::size_t>(lay.groups[static_cast<std::size_t>(j - tr.prompt_len)]);
          mass[g] += row[static_cast<std::size_t>(j)];
        }
      }
      for (int g = 0; g < AttentionProfile::kGroups; ++g) {
        p.layers[static_cast<std::size_t>(l)][static_cast<std::size_t>(g)] +=
            mass[static_cast<std::size_t>(g)] / (tr.n_heads * static_cast<double>(layouts.size()));
      }
    }
  }
  return p;
}

void write_attention_csv(const AttentionProfile& p, const std::string& path) {
  auto f = open_out(path);
  f << "layer,prompt,demo_utterance,demo_label,separator,target\n";
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    f << l;
    for (double v : p.layers[l]) f << ',' << v;
    f << '\n';
  }
  if (!f) fail(ErrorCode::io, "write to '" + path + "' failed");
}

void write_attention_pgm(const AttentionProfile& p, const std::string& path, int cell) {
  require(cell >= 1, "write_attention_pgm: cell must be >= 1");
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::io, "cannot open '" + path + "' for writing");
  const int w = AttentionProfile::kGroups * cell;
  const int h = static_cast<int>(p.layers.size()) * cell;
  f << "P5\n" << w << ' ' << h << "\n255\n";
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = p.layers[static_cast<std::size_t>(y / cell)][static_cast<std::size_t>(x / cell)];
      f.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
    }
  }
  if (!f) fail(ErrorCode::io, "write to '" + path + "' failed");
}

}  // namespace slmicl
