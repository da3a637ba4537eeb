#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "slmicl/lm.hpp"

using namespace slmicl;

namespace {

LmConfig tiny_config() {
  LmConfig c;
  c.vocab_size = 11;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_seq_len = 16;
  c.dtype = DType::f64;
  return c;
}

// Perturbs every entry of `set`, re-evaluating the loss with a central
// difference, and compares with the analytic gradient.
template <typename F>
void check_set(ParamSet<double>& set, const ParamSet<double>& grads, F loss, double tol) {
  const double h = 1e-6;
  for (auto& t : set) {
    if (!grads.contains(t.name)) continue;
    const auto& g = grads.at(t.name);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double saved = t.data[i];
      t.data[i] = saved + h;
      const double lp = loss();
      t.data[i] = saved - h;
      const double lm = loss();
      t.data[i] = saved;
      const double fd = (lp - lm) / (2 * h);
      const double err = std::abs(fd - g.data[i]) / std::max(1.0, std::abs(fd) + std::abs(g.data[i]));
      ASSERT_LT(err, tol) << t.name << "[" << i << "] fd=" << fd << " an=" << g.data[i];
    }
  }
}

}  // namespace

TEST(LmForward, CausalMaskAndRowsSumToOne) {
  auto m = init_model<double>(tiny_config(), 1);
  auto p = init_prompts(m, 3, 9, 2);
  std::vector<TokenId> toks{1, 2, 3, 9, 4, 5};
  auto tr = forward(m, std::span<const TokenId>(toks), &p);
  for (int l = 0; l < 2; ++l)
    for (int h = 0; h < 2; ++h)
      for (int q = 0; q < 6; ++q) {
        auto row = tr.attention_row(l, h, q);
        double s = 0;
        for (std::size_t j = 0; j < row.size(); ++j) {
          s += row[j];
          if (static_cast<int>(j) > 3 + q) {
            EXPECT_EQ(row[j], 0.0);
          }
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
}

TEST(LmForward, PrefixDoesNotDependOnLaterTokens) {
  auto m = init_model<double>(tiny_config(), 1);
  std::vector<TokenId> a{1, 2, 3, 4}, b{1, 2, 3, 7};
  auto ta = forward(m, std::span<const TokenId>(a));
  auto tb = forward(m, std::span<const TokenId>(b));
  for (int pos = 0; pos < 3; ++pos)
    for (int v = 0; v < 11; ++v) EXPECT_DOUBLE_EQ(ta.logits_row(pos)[v], tb.logits_row(pos)[v]);
}

TEST(LmBackward, FullModelMatchesFiniteDifferences) {
  auto m = init_model<double>(tiny_config(), 3);
  for (auto& t : m.params)
    for (auto& v : t.data) v += 0.05 * std::sin(static_cast<double>(&v - t.data.data()) + t.name.size());
  auto p = init_prompts(m, 2, 9, 4);
  std::vector<TokenId> toks{1, 9, 3, 9, 4, 9};
  std::vector<LossTerm> terms{{5, 7, 1.0}, {3, 2, 0.5}};
  auto lg = backward(m, std::span<const TokenId>(toks), &p, std::span<const LossTerm>(terms), GradTarget::full_model);
  auto loss = [&] {
    auto tr = forward(m, std::span<const TokenId>(toks), &p);
    return loss_ce(tr, 5, 7) + 0.5 * loss_ce(tr, 3, 2);
  };
  EXPECT_NEAR(lg.loss, loss(), 1e-10);
  check_set(m.params, lg.grads, loss, 1e-6);
  check_set(p.params, lg.grads, loss, 1e-6);
}

TEST(LmBackward, PromptsOnlyMatchesFiniteDifferences) {
  auto m = init_model<double>(tiny_config(), 5);
  auto p = init_prompts(m, 3, 9, 6);
  std::vector<TokenId> toks{2, 3, 9, 10, 9, 2, 3, 9};
  auto lg = backward(m, std::span<const TokenId>(toks), &p, 7, 10, GradTarget::prompts_only);
  EXPECT_EQ(lg.grads.size(), p.params.size());
  auto loss = [&] {
    auto tr = forward(m, std::span<const TokenId>(toks), &p);
    return loss_ce(tr, 7, 10);
  };
  check_set(p.params, lg.grads, loss, 1e-6);
}
