#pragma once

// Synthetic "speech-like" classification tasks: class-conditioned feature
// streams over a fixed set of base symbols, quantized to discrete units with a
// k-means codebook.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "slmicl/rng.hpp"

namespace slmicl {

using TokenId = std::int32_t;
using UnitSequence = std::vector<TokenId>;

enum class TaskGroup { train, test };

std::string to_string(TaskGroup group);
TaskGroup task_group_from_string(const std::string& s);

struct Difficulty {
  double noise_rate = 0.1;
  int motif_len = 3;
  // Dirichlet concentration for per-class unigram biases. Smaller values give
  // peakier class backgrounds and easier tasks.
  double bias_alpha = 0.3;
};

struct ClassGen {
  std::vector<int> motif;            // base-symbol indices, length motif_len
  std::vector<double> unigram_bias;  // probability vector over base symbols
  double transition_temp = 1.0;      // > 0; lower means stickier background
};

struct TaskSpec {
  std::string task_id;
  int num_classes = 0;
  std::vector<ClassGen> class_gens;
  Difficulty difficulty;
  TaskGroup group = TaskGroup::train;
};

void to_json(nlohmann::json& j, const TaskSpec& t);
void from_json(const nlohmann::json& j, TaskSpec& t);

/// Base-symbol prototypes in feature space plus per-frame jitter. Every task
/// of a run shares one space; it plays the role of the SSL feature extractor.
struct FeatureSpace {
  int num_symbols = 32;
  int d_feat = 8;
  double jitter = 0.05;
  std::vector<double> prototypes;  // num_symbols x d_feat, row-major

  const double* prototype(int symbol) const {
    return prototypes.data() + static_cast<std::size_t>(symbol) * static_cast<std::size_t>(d_feat);
  }
};

FeatureSpace make_feature_space(int num_symbols, int d_feat, std::uint64_t seed,
                                double jitter = 0.05);

/// Globally shared pool of distinct motifs. The first half is reserved for
/// train-group tasks and the second half for test-group tasks, so test tasks
/// never reuse a motif seen in warmup.
struct MotifPool {
  int motif_len = 3;
  std::vector<std::vector<int>> motifs;

  std::size_t group_size() const { return motifs.size() / 2; }
  std::size_t group_offset(TaskGroup g) const {
    return g == TaskGroup::train ? 0 : group_size();
  }
};

MotifPool make_motif_pool(int num_symbols, int motif_len, int pool_size, std::uint64_t seed);

TaskSpec gen_task_spec(std::uint64_t seed, int num_classes, const Difficulty& difficulty,
                       TaskGroup group, const MotifPool& pool, int num_symbols,
                       const std::string& task_id = {});

struct FeatureSequence {
  int d_feat = 0;
  std::vector<double> frames;  // length x d_feat, row-major

  std::size_t length() const {
    return d_feat == 0 ? 0 : frames.size() / static_cast<std::size_t>(d_feat);
  }
  const double* frame(std::size_t i) const { return frames.data() + i * static_cast<std::size_t>(d_feat); }
};

/// Base-symbol stream of one utterance (background Markov chain with the
/// class motif written at a random offset). Exposed for tests and for
/// feature-free corpus generation.
std::vector<int> sample_symbols(const TaskSpec& task, int class_idx, int length, Rng& rng);

FeatureSequence sample_features(const FeatureSpace& space, const TaskSpec& task, int class_idx,
                                int length, Rng& rng);

struct Codebook {
  int k = 0;
  int d_feat = 0;
  std::vector<double> centroids;  // k x d_feat, row-major

  const double* centroid(int i) const {
    return centroids.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(d_feat);
  }
};

struct KMeansResult {
  Codebook codebook;
  std::vector<double> inertia_history;  // one entry per assignment step
  std::vector<int> assignment;
  int iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding. `points` is n x d row-major.
KMeansResult kmeans_fit(const std::vector<double>& points, int d, int k, int max_iters,
                        std::uint64_t seed);

/// Nearest centroid by squared Euclidean distance; ties go to the lower index.
int nearest_centroid(const Codebook& codebook, const double* frame);

UnitSequence quantize(const Codebook& codebook, const FeatureSequence& features);

UnitSequence sample_utterance(const FeatureSpace& space, const TaskSpec& task, int class_idx,
                              int length, const Codebook& codebook, Rng& rng);

}  // namespace slmicl
