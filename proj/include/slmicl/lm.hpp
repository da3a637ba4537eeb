#pragma once

// Miniature pre-LayerNorm causal transformer over discrete tokens with exact
// backpropagation, per-layer key/value prefixes (deep prompts) and attention
// extraction.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "slmicl/tensor.hpp"
#include "slmicl/vocab.hpp"

namespace slmicl {

enum class DType { f32, f64 };

struct LmConfig {
  int vocab_size = 50;
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int d_ff = 512;
  int max_seq_len = 512;
  DType dtype = DType::f32;
  bool tie_embeddings = true;

  int head_dim() const { return d_model / n_heads; }

  /// Throws ErrorCode::config on an inconsistent shape.
  void validate() const;
};

void to_json(nlohmann::json& j, const LmConfig& c);
void from_json(const nlohmann::json& j, LmConfig& c);

struct LayerSlots {
  std::size_t ln1_gain, ln1_bias;
  std::size_t qkv_weight, qkv_bias;    // [d, 3d], [3d]
  std::size_t proj_weight, proj_bias;  // [d, d], [d]
  std::size_t ln2_gain, ln2_bias;
  std::size_t fc_weight, fc_bias;      // [d, ff], [ff]
  std::size_t fc2_weight, fc2_bias;    // [ff, d], [d]
};

template <typename T>
struct ModelParams {
  LmConfig config;
  ParamSet<T> params;

  std::size_t tok_embed = 0;  // [vocab, d]
  std::size_t pos_embed = 0;  // [max_seq_len, d]
  std::size_t lnf_gain = 0, lnf_bias = 0;
  std::size_t lm_head = 0;    // == tok_embed when embeddings are tied
  std::vector<LayerSlots> layers;

  /// Re-resolves slot indices from tensor names (after load or copy).
  void bind();

  std::size_t num_parameters() const { return params.numel(); }
};

/// Builds the tensor layout of `config` with zeroed values.
template <typename T>
ModelParams<T> make_model_layout(const LmConfig& config);

/// Normal(0, 0.02) weights, residual output projections scaled by
/// 1/sqrt(2 n_layers), zero biases, unit LayerNorm gains.
template <typename T>
ModelParams<T> init_model(const LmConfig& config, std::uint64_t seed);

template <typename To, typename From>
ModelParams<To> cast_model(const ModelParams<From>& m);

/// Trainable deep prompt: per-layer key and value prefixes (prompt_len x
/// d_model, split across heads like ordinary keys/values) plus the embedding
/// that replaces the separation token's input row.
template <typename T>
struct PromptBank {
  int prompt_len = 0;
  TokenId sep_token = -1;
  ParamSet<T> params;
  std::vector<std::size_t> keys, values;
  std::size_t sep = 0;

  void bind(int n_layers);
  std::size_t num_parameters() const { return params.numel(); }
};

template <typename T>
PromptBank<T> make_prompt_layout(const LmConfig& config, int prompt_len, TokenId sep_token);

/// Normal(0, 0.02) prefixes; the separation embedding starts from the model's
/// own row for `sep_token`.
template <typename T>
PromptBank<T> init_prompts(const ModelParams<T>& model, int prompt_len, TokenId sep_token,
                           std::uint64_t seed);

template <typename To, typename From>
PromptBank<To> cast_prompts(const PromptBank<From>& p);

template <typename T>
struct ForwardTrace {
  int seq_len = 0;
  int vocab_size = 0;
  int n_layers = 0;
  int n_heads = 0;
  int prompt_len = 0;
  std::vector<T> logits;      // seq_len x vocab_size
  std::vector<T> attentions;  // n_layers x n_heads x seq_len x key_len

  int key_len() const { return prompt_len + seq_len; }
  std::span<const T> logits_row(int pos) const {
    return {logits.data() + static_cast<std::size_t>(pos) * static_cast<std::size_t>(vocab_size),
            static_cast<std::size_t>(vocab_size)};
  }
  /// Attention row of (layer, head, query); key index 0..prompt_len-1 are the
  /// prompt prefix, prompt_len + j is token j.
  std::span<const T> attention_row(int layer, int head, int query) const {
    const std::size_t kl = static_cast<std::size_t>(key_len());
    const std::size_t off =
        ((static_cast<std::size_t>(layer) * static_cast<std::size_t>(n_heads) + static_cast<std::size_t>(head)) *
             static_cast<std::size_t>(seq_len) +
         static_cast<std::size_t>(query)) *
        kl;
    return {attentions.data() + off, kl};
  }
};

struct ForwardOptions {
  bool record_attention = true;
  bool all_logits = true;  // false: only the final position's logits row is filled
};

template <typename T>
ForwardTrace<T> forward(const ModelParams<T>& model, std::span<const TokenId> tokens,
                        const PromptBank<T>* prompts = nullptr, ForwardOptions opts = {});

/// -log softmax(logits[position])[target], evaluated in double precision.
template <typename T>
double loss_ce(const ForwardTrace<T>& trace, int position, TokenId target);

enum class GradTarget { prompts_only, full_model };

struct LossTerm {
  int position = 0;
  TokenId target = 0;
  double weight = 1.0;
};

template <typename T>
struct LossAndGrad {
  double loss = 0.0;   // sum_i weight_i * CE_i
  ParamSet<T> grads;   // prompt tensors only, or model tensors (+ prompt tensors if supplied)
};

template <typename T>
LossAndGrad<T> backward(const ModelParams<T>& model, std::span<const TokenId> tokens,
                        const PromptBank<T>* prompts, std::span<const LossTerm> terms,
                        GradTarget wrt);

template <typename T>
LossAndGrad<T> backward(const ModelParams<T>& model, std::span<const TokenId> tokens,
                        const PromptBank<T>* prompts, int position, TokenId target,
                        GradTarget wrt) {
  const LossTerm term{position, target, 1.0};
  return backward(model, tokens, prompts, std::span<const LossTerm>(&term, 1), wrt);
}

/// Argmax over the full vocabulary at the final position (ties to the lowest
/// id). `tokens` must be an episode layout ending in `sep_token`.
template <typename T>
TokenId predict_label(const ModelParams<T>& model, const PromptBank<T>* prompts,
                      std::span<const TokenId> tokens, TokenId sep_token);

/// Lowest-index argmax of a logits row, optionally restricted to [begin, end).
template <typename T>
TokenId argmax_token(std::span<const T> row, TokenId begin = 0, TokenId end = -1);

}  // namespace slmicl
