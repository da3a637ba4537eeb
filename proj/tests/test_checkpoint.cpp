#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <iterator>

#include "slmicl/checkpoint.hpp"

using namespace slmicl;

namespace {

LmConfig small_config() {
  LmConfig c;
  c.vocab_size = 20;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_seq_len = 24;
  return c;
}

std::string read_all(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void write_all(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ErrorCode load_error(const std::string& path) {
  try {
    load_checkpoint(path);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "load succeeded";
  return ErrorCode::invalid_argument;
}

struct Saved {
  ModelParams<float> model = init_model<float>(small_config(), 3);
  PromptBank<float> prompts = init_prompts(model, 4, 18, 5);
  Codebook cb{3, 2, {0.1, 0.2, 1.0 / 3.0, 4, 5, 6}};
  std::string path = ::testing::TempDir() + "/model.ckpt";

  Saved() { save_checkpoint(model, &cb, &prompts, path); }
};

}  // namespace

TEST(Checkpoint, RoundTripGivesIdenticalForward) {
  Saved s;
  auto b = load_checkpoint(s.path);
  ASSERT_TRUE(b.prompts.has_value());
  ASSERT_TRUE(b.codebook.has_value());
  std::vector<TokenId> toks{1, 2, 18, 3, 18, 4, 5, 18};
  auto x = forward(s.model, std::span<const TokenId>(toks), &s.prompts);
  auto y = forward(b.model, std::span<const TokenId>(toks), &*b.prompts);
  EXPECT_EQ(x.logits, y.logits);
  EXPECT_EQ(x.attentions, y.attentions);
  EXPECT_EQ(b.codebook->centroids, round_codebook(s.cb).centroids);
  EXPECT_EQ(backbone_hash(s.model), backbone_hash(b.model));
}

TEST(Checkpoint, ModelOnlyHasNoPrompts) {
  auto m = init_model<float>(small_config(), 1);
  const std::string path = ::testing::TempDir() + "/bare.ckpt";
  save_checkpoint(m, nullptr, nullptr, path);
  auto b = load_checkpoint(path);
  EXPECT_FALSE(b.prompts.has_value());
  EXPECT_FALSE(b.codebook.has_value());
}

TEST(Checkpoint, SaveIsByteStable) {
  Saved s;
  const std::string other = ::testing::TempDir() + "/again.ckpt";
  save_checkpoint(s.model, &s.cb, &s.prompts, other);
  EXPECT_EQ(read_all(s.path), read_all(other));
}

TEST(Checkpoint, CorruptMagic) {
  Saved s;
  auto bytes = read_all(s.path);
  bytes[0] = 'X';
  write_all(s.path, bytes);
  EXPECT_EQ(load_error(s.path), ErrorCode::bad_magic);
}

TEST(Checkpoint, WrongVersion) {
  Saved s;
  auto bytes = read_all(s.path);
  bytes[8] = 2;
  write_all(s.path, bytes);
  EXPECT_EQ(load_error(s.path), ErrorCode::version_mismatch);
}

TEST(Checkpoint, TruncatedMidTensor) {
  Saved s;
  auto bytes = read_all(s.path);
  write_all(s.path, bytes.substr(0, bytes.size() / 2));
  EXPECT_EQ(load_error(s.path), ErrorCode::truncated_file);
  write_all(s.path, bytes.substr(0, 10));
  EXPECT_EQ(load_error(s.path), ErrorCode::truncated_file);
}

TEST(Checkpoint, MissingFileIsIoError) {
  EXPECT_EQ(load_error(::testing::TempDir() + "/does-not-exist.ckpt"), ErrorCode::io);
}

TEST(BackboneHash, SensitiveToAnyWeight) {
  auto m = init_model<float>(small_config(), 1);
  const auto h = backbone_hash(m);
  m.params[3].data[0] += 1e-6f;
  EXPECT_NE(backbone_hash(m), h);
}
