#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "slmicl/error.hpp"
#include "slmicl/tasks.hpp"

using namespace slmicl;

namespace {

struct World {
  FeatureSpace space = make_feature_space(32, 8, 7);
  MotifPool pool = make_motif_pool(32, 3, 256, 7);
};

std::vector<double> frames_from_space(const FeatureSpace& space, int per_symbol, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> pts;
  for (int s = 0; s < space.num_symbols; ++s)
    for (int i = 0; i < per_symbol; ++i)
      for (int c = 0; c < space.d_feat; ++c) pts.push_back(space.prototype(s)[c] + rng.normal(0.0, space.jitter));
  return pts;
}

int brute_nearest(const Codebook& cb, const double* x) {
  int best = 0;
  double best_d = 1e300;
  for (int i = 0; i < cb.k; ++i) {
    double d = 0;
    for (int c = 0; c < cb.d_feat; ++c) d += (x[c] - cb.centroid(i)[c]) * (x[c] - cb.centroid(i)[c]);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

}  // namespace

TEST(TaskSpec, TwoClassesGetDistinctMotifs) {
  World w;
  auto t = gen_task_spec(1, 2, Difficulty{}, TaskGroup::train, w.pool, 32);
  ASSERT_EQ(t.class_gens.size(), 2u);
  EXPECT_EQ(t.class_gens[0].motif.size(), 3u);
  EXPECT_NE(t.class_gens[0].motif, t.class_gens[1].motif);
}

TEST(TaskSpec, SameSeedSameSpec) {
  World w;
  auto a = gen_task_spec(1, 4, Difficulty{}, TaskGroup::train, w.pool, 32, "a");
  auto b = gen_task_spec(1, 4, Difficulty{}, TaskGroup::train, w.pool, 32, "a");
  EXPECT_EQ(nlohmann::json(a).dump(), nlohmann::json(b).dump());
}

TEST(TaskSpec, PoolExhaustionIsReported) {
  World w;
  try {
    gen_task_spec(2, 300, Difficulty{}, TaskGroup::train, w.pool, 32);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("motif pool exhausted"), std::string::npos);
  }
}

TEST(TaskSpec, ClassCountOutsideRangeRejected) {
  World w;
  EXPECT_THROW(gen_task_spec(1, 1, Difficulty{}, TaskGroup::train, w.pool, 32), Error);
  EXPECT_THROW(gen_task_spec(1, 9, Difficulty{}, TaskGroup::train, w.pool, 32), Error);
}

TEST(TaskSpec, TestGroupMotifsDisjointFromTrainGroup) {
  World w;
  std::set<std::vector<int>> train, test;
  for (int s = 0; s < 20; ++s) {
    for (const auto& g : gen_task_spec(s, 8, Difficulty{}, TaskGroup::train, w.pool, 32).class_gens) train.insert(g.motif);
    for (const auto& g : gen_task_spec(s, 8, Difficulty{}, TaskGroup::test, w.pool, 32).class_gens) test.insert(g.motif);
  }
  for (const auto& m : test) EXPECT_EQ(train.count(m), 0u);
}

TEST(TaskSpec, JsonRoundTrip) {
  World w;
  auto t = gen_task_spec(3, 5, Difficulty{0.2, 3, 0.5}, TaskGroup::test, w.pool, 32, "x");
  TaskSpec back = nlohmann::json(t).get<TaskSpec>();
  EXPECT_EQ(nlohmann::json(back).dump(), nlohmann::json(t).dump());
}

TEST(Features, ShortLengthRejected) {
  World w;
  auto t = gen_task_spec(1, 2, Difficulty{}, TaskGroup::train, w.pool, 32);
  Rng rng(1);
  EXPECT_THROW(sample_features(w.space, t, 0, 2, rng), Error);
}

TEST(Features, SameSeedSameFrames) {
  World w;
  auto t = gen_task_spec(1, 2, Difficulty{}, TaskGroup::train, w.pool, 32);
  Rng a(5), b(5);
  EXPECT_EQ(sample_features(w.space, t, 1, 20, a).frames, sample_features(w.space, t, 1, 20, b).frames);
}

TEST(Features, NoiselessMotifSurvivesQuantization) {
  World w;
  Difficulty d;
  d.noise_rate = 0.0;
  auto t = gen_task_spec(4, 3, d, TaskGroup::train, w.pool, 32);
  auto cb = kmeans_fit(frames_from_space(w.space, 20, 9), 8, 32, 100, 3).codebook;
  for (int c = 0; c < 3; ++c) {
    UnitSequence motif_units;
    for (int s : t.class_gens[c].motif) motif_units.push_back(nearest_centroid(cb, w.space.prototype(s)));
    Rng rng(100 + c);
    auto u = sample_utterance(w.space, t, c, 20, cb, rng);
    EXPECT_NE(std::search(u.begin(), u.end(), motif_units.begin(), motif_units.end()), u.end());
    Rng rng2(200 + c);
    EXPECT_EQ(sample_utterance(w.space, t, c, 3, cb, rng2), motif_units);
  }
}

TEST(KMeans, SingleClusterIsTheMean) {
  std::vector<double> pts{0, 0, 2, 0, 4, 6};
  auto r = kmeans_fit(pts, 2, 1, 10, 1);
  EXPECT_DOUBLE_EQ(r.codebook.centroids[0], 2.0);
  EXPECT_DOUBLE_EQ(r.codebook.centroids[1], 2.0);
}

TEST(KMeans, DistinctPointsAreTheirOwnCentroids) {
  std::vector<double> pts{0, 0, 5, 5, -3, 1, 8, -2};
  auto r = kmeans_fit(pts, 2, 4, 10, 2);
  EXPECT_NEAR(r.inertia_history.back(), 0.0, 1e-12);
  std::multiset<std::pair<double, double>> want{{0, 0}, {5, 5}, {-3, 1}, {8, -2}}, got;
  for (int i = 0; i < 4; ++i) got.insert({r.codebook.centroid(i)[0], r.codebook.centroid(i)[1]});
  EXPECT_EQ(got, want);
}

TEST(KMeans, TooFewDistinctPointsRejected) {
  std::vector<double> pts{1, 1, 1, 1, 2, 2};
  EXPECT_THROW(kmeans_fit(pts, 2, 3, 10, 1), Error);
}

TEST(KMeans, BlobInertiaMonotoneAndAssignmentsNearest) {
  Rng rng(11);
  std::vector<double> pts;
  const double centers[3][2] = {{0, 0}, {4, 1}, {1, 5}};
  for (int i = 0; i < 300; ++i) {
    pts.push_back(centers[i % 3][0] + rng.normal());
    pts.push_back(centers[i % 3][1] + rng.normal());
  }
  auto r = kmeans_fit(pts, 2, 3, 100, 5);
  for (std::size_t i = 1; i < r.inertia_history.size(); ++i)
    EXPECT_LE(r.inertia_history[i], r.inertia_history[i - 1] + 1e-9);
  for (std::size_t i = 0; i < 300; ++i) EXPECT_EQ(r.assignment[i], brute_nearest(r.codebook, &pts[2 * i]));
}

TEST(Quantize, ExactCentroidAndTies) {
  Codebook cb{6, 1, {0, 10, 4, 20, 30, 8}};
  double x = 8;
  EXPECT_EQ(nearest_centroid(cb, &x), 5);
  double tie = 6;  // equidistant from centroids 2 (4) and 5 (8)
  EXPECT_EQ(nearest_centroid(cb, &tie), 2);
}

TEST(Quantize, CentroidsMapToThemselves) {
  World w;
  auto cb = kmeans_fit(frames_from_space(w.space, 10, 3), 8, 32, 50, 1).codebook;
  FeatureSequence f{8, cb.centroids};
  auto u = quantize(cb, f);
  for (int i = 0; i < 32; ++i) EXPECT_EQ(u[i], i);
}

TEST(Quantize, DimensionMismatchRejected) {
  Codebook cb{1, 2, {0, 0}};
  FeatureSequence f{3, {1, 2, 3}};
  EXPECT_THROW(quantize(cb, f), Error);
}

TEST(Utterance, HistogramClassifierSeparatesClasses) {
  World w;
  auto t = gen_task_spec(6, 4, Difficulty{}, TaskGroup::train, w.pool, 32);
  auto cb = kmeans_fit(frames_from_space(w.space, 20, 9), 8, 32, 100, 3).codebook;
  // Class centroids from 200 samples each, then classify fresh samples.
  std::vector<std::vector<double>> mean(4, std::vector<double>(32, 0.0));
  Rng rng(21);
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 200; ++i)
      for (TokenId u : sample_utterance(w.space, t, c, 20, cb, rng)) mean[c][u] += 1.0 / (200 * 20);
  int correct = 0, total = 0;
  for (int c = 0; c < 4; ++c) {
    for (int i = 0; i < 200; ++i) {
      std::vector<double> h(32, 0.0);
      for (TokenId u : sample_utterance(w.space, t, c, 20, cb, rng)) h[u] += 1.0 / 20;
      int best = 0;
      double best_d = 1e300;
      for (int k = 0; k < 4; ++k) {
        double d = 0;
        for (int j = 0; j < 32; ++j) d += (h[j] - mean[k][j]) * (h[j] - mean[k][j]);
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      correct += best == c;
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(correct) / total, 0.9);
}
