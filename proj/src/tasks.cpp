#include "slmicl/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "slmicl/error.hpp"

namespace slmicl {

std::string to_string(TaskGroup group) { return group == TaskGroup::train ? "train" : "test"; }

TaskGroup task_group_from_string(const std::string& s) {
  if (s == "train") return TaskGroup::train;
  if (s == "test") return TaskGroup::test;
  fail(ErrorCode::invalid_argument, "unknown task group '" + s + "'");
}

void to_json(nlohmann::json& j, const TaskSpec& t) {
  nlohmann::json gens = nlohmann::json::array();
  for (const auto& g : t.class_gens) {
    gens.push_back({{"motif", g.motif},
                    {"unigram_bias", g.unigram_bias},
                    {"transition_temp", g.transition_temp}});
  }
  j = {{"task_id", t.task_id},
       {"num_classes", t.num_classes},
       {"class_gens", gens},
       {"difficulty",
        {{"noise_rate", t.difficulty.noise_rate},
         {"motif_len", t.difficulty.motif_len},
         {"bias_alpha", t.difficulty.bias_alpha}}},
       {"group", to_string(t.group)}};
}

void from_json(const nlohmann::json& j, TaskSpec& t) {
  t.task_id = j.at("task_id").get<std::string>();
  t.num_classes = j.at("num_classes").get<int>();
  t.class_gens.clear();
  for (const auto& g : j.at("class_gens")) {
    ClassGen cg;
    cg.motif = g.at("motif").get<std::vector<int>>();
    cg.unigram_bias = g.at("unigram_bias").get<std::vector<double>>();
    cg.transition_temp = g.at("transition_temp").get<double>();
    t.class_gens.push_back(std::move(cg));
  }
  const auto& d = j.at("difficulty");
  t.difficulty.noise_rate = d.at("noise_rate").get<double>();
  t.difficulty.motif_len = d.at("motif_len").get<int>();
  t.difficulty.bias_alpha = d.value("bias_alpha", 0.3);
  t.group = task_group_from_string(j.at("group").get<std::string>());
}

FeatureSpace make_feature_space(int num_symbols, int d_feat, std::uint64_t seed, double jitter) {
  require(num_symbols >= 1 && d_feat >= 1, "feature space needs num_symbols >= 1 and d_feat >= 1");
  FeatureSpace space;
  space.num_symbols = num_symbols;
  space.d_feat = d_feat;
  space.jitter = jitter;
  space.prototypes.resize(static_cast<std::size_t>(num_symbols) * static_cast<std::size_t>(d_feat));
  Rng rng(derive_seed(seed, 0xFEA7));
  // Rejection keeps prototypes at least 0.5 apart so jittered frames never
  // cross a Voronoi boundary.
  constexpr double kMinSeparation = 0.5;
  for (int s = 0; s < num_symbols; ++s) {
    double* p = space.prototypes.data() + static_cast<std::size_t>(s) * static_cast<std::size_t>(d_feat);
    for (int attempt = 0;; ++attempt) {
      for (int c = 0; c < d_feat; ++c) p[c] = rng.normal();
      bool ok = true;
      for (int o = 0; o < s && ok; ++o) {
        const double* q = space.prototype(o);
        double dist2 = 0.0;
        for (int c = 0; c < d_feat; ++c) dist2 += (p[c] - q[c]) * (p[c] - q[c]);
        ok = dist2 >= kMinSeparation * kMinSeparation;
      }
      if (ok) break;
      if (attempt > 10000) fail(ErrorCode::invalid_argument, "cannot place symbol prototypes; d_feat too small");
    }
  }
  return space;
}

MotifPool make_motif_pool(int num_symbols, int motif_len, int pool_size, std::uint64_t seed) {
  require(motif_len >= 2, "motif_len must be >= 2");
  require(pool_size >= 2, "motif pool needs at least 2 entries");
  const double capacity = std::pow(static_cast<double>(num_symbols), motif_len);
  require(capacity >= pool_size, "motif pool larger than the number of distinct motifs");
  MotifPool pool;
  pool.motif_len = motif_len;
  std::set<std::vector<int>> seen;
  Rng rng(derive_seed(seed, 0x3071F));
  while (static_cast<int>(pool.motifs.size()) < pool_size) {
    std::vector<int> m(static_cast<std::size_t>(motif_len));
    for (auto& u : m) u = rng.uniform_int(num_symbols);
    if (seen.insert(m).second) pool.motifs.push_back(std::move(m));
  }
  return pool;
}

TaskSpec gen_task_spec(std::uint64_t seed, int num_classes, const Difficulty& difficulty,
                       TaskGroup group, const MotifPool& pool, int num_symbols,
                       const std::string& task_id) {
  require(difficulty.motif_len >= 2, "motif_len must be >= 2");
  require(difficulty.motif_len == pool.motif_len, "difficulty.motif_len does not match the motif pool");
  require(difficulty.noise_rate >= 0.0 && difficulty.noise_rate <= 1.0, "noise_rate must be in [0,1]");
  if (num_classes > static_cast<int>(pool.group_size())) {
    fail(ErrorCode::invalid_argument,
         "motif pool exhausted: " + std::to_string(num_classes) + " classes requested, " +
             std::to_string(pool.group_size()) + " motifs reserved for group " + to_string(group));
  }
  require(num_classes >= 2 && num_classes <= 8, "num_classes must be in [2, 8]");

  TaskSpec task;
  task.task_id = task_id.empty() ? to_string(group) + "-" + std::to_string(seed) : task_id;
  task.num_classes = num_classes;
  task.difficulty = difficulty;
  task.group = group;

  Rng rng(derive_seed(seed, 0x7A5C));
  const auto picks = rng.sample_without_replacement(static_cast<int>(pool.group_size()), num_classes);
  for (int c = 0; c < num_classes; ++c) {
    ClassGen gen;
    gen.motif = pool.motifs[pool.group_offset(group) + static_cast<std::size_t>(picks[static_cast<std::size_t>(c)])];
    gen.unigram_bias = rng.dirichlet(num_symbols, difficulty.bias_alpha);
    gen.transition_temp = rng.uniform(0.5, 1.0);
    task.class_gens.push_back(std::move(gen));
  }
  return task;
}

std::vector<int> sample_symbols(const TaskSpec& task, int class_idx, int length, Rng& rng) {
  require(class_idx >= 0 && class_idx < task.num_classes, "class_idx out of range");
  const ClassGen& gen = task.class_gens[static_cast<std::size_t>(class_idx)];
  const int motif_len = static_cast<int>(gen.motif.size());
  require(length >= motif_len, "utterance length " + std::to_string(length) +
                                   " shorter than motif length " + std::to_string(motif_len));
  const int num_symbols = static_cast<int>(gen.unigram_bias.size());

  std::vector<int> out(static_cast<std::size_t>(length));
  std::vector<double> weights(gen.unigram_bias);
  const double stick = std::exp(1.0 / gen.transition_temp);
  int prev = rng.categorical(gen.unigram_bias);
  for (int t = 0; t < length; ++t) {
    // Markov background: unigram bias with a self-transition boost.
    weights[static_cast<std::size_t>(prev)] *= stick;
    const int s = rng.categorical(weights);
    weights[static_cast<std::size_t>(prev)] = gen.unigram_bias[static_cast<std::size_t>(prev)];
    out[static_cast<std::size_t>(t)] = s;
    prev = s;
  }
  const int offset = rng.uniform_int(0, length - motif_len);
  for (int j = 0; j < motif_len; ++j) {
    int sym = gen.motif[static_cast<std::size_t>(j)];
    if (rng.uniform() < task.difficulty.noise_rate) sym = rng.uniform_int(num_symbols);
    out[static_cast<std::size_t>(offset + j)] = sym;
  }
  return out;
}

FeatureSequence sample_features(const FeatureSpace& space, const TaskSpec& task, int class_idx,
                                int length, Rng& rng) {
  const auto symbols = sample_symbols(task, class_idx, length, rng);
  FeatureSequence seq;
  seq.d_feat = space.d_feat;
  seq.frames.resize(symbols.size() * static_cast<std::size_t>(space.d_feat));
  for (std::size_t t = 0; t < symbols.size(); ++t) {
    require(symbols[t] < space.num_symbols, "task uses more base symbols than the feature space has");
    const double* proto = space.prototype(symbols[t]);
    for (int c = 0; c < space.d_feat; ++c) {
      seq.frames[t * static_cast<std::size_t>(space.d_feat) + static_cast<std::size_t>(c)] =
          proto[c] + rng.normal(0.0, space.jitter);
    }
  }
  return seq;
}

namespace {

double squared_distance(const double* a, const double* b, int d) {
  double acc = 0.0;
  for (int c = 0; c < d; ++c) {
    const double diff = a[c] - b[c];
    acc += diff * diff;
  }
  return acc;
}

}  // namespace

int nearest_centroid(const Codebook& codebook, const double* frame) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < codebook.k; ++i) {
    const double d = squared_distance(frame, codebook.centroid(i), codebook.d_feat);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

KMeansResult kmeans_fit(const std::vector<double>& points, int d, int k, int max_iters,
                        std::uint64_t seed) {
  require(d >= 1, "kmeans: dimension must be >= 1");
  require(k >= 1, "kmeans: k must be >= 1");
  require(max_iters >= 1, "kmeans: max_iters must be >= 1");
  require(points.size() % static_cast<std::size_t>(d) == 0, "kmeans: point buffer not a multiple of d");
  const std::size_t n = points.size() / static_cast<std::size_t>(d);
  const auto pt = [&](std::size_t i) { return points.data() + i * static_cast<std::size_t>(d); };

  {
    std::set<std::vector<double>> distinct;
    for (std::size_t i = 0; i < n && static_cast<int>(distinct.size()) < k; ++i) {
      distinct.emplace(pt(i), pt(i) + d);
    }
    if (static_cast<int>(distinct.size()) < k) {
      fail(ErrorCode::invalid_argument,
           "kmeans: fewer distinct points than k (" + std::to_string(distinct.size()) + " < " +
               std::to_string(k) + ")");
    }
  }

  KMeansResult result;
  Codebook& cb = result.codebook;
  cb.k = k;
  cb.d_feat = d;
  cb.centroids.assign(static_cast<std::size_t>(k) * static_cast<std::size_t>(d), 0.0);
  auto set_centroid = [&](int c, const double* src) {
    std::copy(src, src + d, cb.centroids.begin() + static_cast<std::ptrdiff_t>(c) * d);
  };

  // k-means++ seeding.
  Rng rng(derive_seed(seed, 0x5EED));
  std::vector<double> min_d2(n);
  {
    const std::size_t first = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(n)));
    set_centroid(0, pt(first));
    for (std::size_t i = 0; i < n; ++i) min_d2[i] = squared_distance(pt(i), cb.centroid(0), d);
    for (int c = 1; c < k; ++c) {
      const std::size_t pick = static_cast<std::size_t>(rng.categorical(min_d2));
      set_centroid(c, pt(pick));
      for (std::size_t i = 0; i < n; ++i) {
        min_d2[i] = std::min(min_d2[i], squared_distance(pt(i), cb.centroid(c), d));
      }
    }
  }

  result.assignment.assign(n, -1);
  std::vector<double> sums(cb.centroids.size());
  std::vector<std::size_t> counts(static_cast<std::size_t>(k));
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const int a = nearest_centroid(cb, pt(i));
      if (a != result.assignment[i]) changed = true;
      result.assignment[i] = a;
      min_d2[i] = squared_distance(pt(i), cb.centroid(a), d);
      inertia += min_d2[i];
    }
    result.inertia_history.push_back(inertia);
    result.iterations = iter + 1;
    if (!changed) break;

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = static_cast<std::size_t>(result.assignment[i]);
      ++counts[a];
      for (int c = 0; c < d; ++c) sums[a * static_cast<std::size_t>(d) + static_cast<std::size_t>(c)] += pt(i)[c];
    }
    for (int c = 0; c < k; ++c) {
      const auto cu = static_cast<std::size_t>(c);
      if (counts[cu] == 0) {
        // Empty cluster: re-seed at the point farthest from its centroid.
        std::size_t far = 0;
        for (std::size_t i = 1; i < n; ++i) {
          if (min_d2[i] > min_d2[far]) far = i;
        }
        set_centroid(c, pt(far));
        min_d2[far] = 0.0;
        continue;
      }
      for (int j = 0; j < d; ++j) {
        cb.centroids[cu * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)] =
            sums[cu * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)] / static_cast<double>(counts[cu]);
      }
    }
  }
  return result;
}

UnitSequence quantize(const Codebook& codebook, const FeatureSequence& features) {
  if (features.d_feat != codebook.d_feat) {
    fail(ErrorCode::invalid_argument, "quantize: feature dimension " + std::to_string(features.d_feat) +
                                          " does not match codebook dimension " +
                                          std::to_string(codebook.d_feat));
  }
  UnitSequence units(features.length());
  for (std::size_t t = 0; t < units.size(); ++t) units[t] = nearest_centroid(codebook, features.frame(t));
  return units;
}

UnitSequence sample_utterance(const FeatureSpace& space, const TaskSpec& task, int class_idx,
                              int length, const Codebook& codebook, Rng& rng) {
  return quantize(codebook, sample_features(space, task, class_idx, length, rng));
}

}  // namespace slmicl
