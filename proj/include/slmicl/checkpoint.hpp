#pragma once

#include <optional>
#include <string>

#include "slmicl/lm.hpp"
#include "slmicl/tasks.hpp"

namespace slmicl {

inline constexpr char kCheckpointMagic[8] = {'S', 'L', 'M', 'I', 'C', 'L', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointBundle {
  ModelParams<float> model;
  std::optional<Codebook> codebook;
  std::optional<PromptBank<float>> prompts;
};

/// Layout: magic, u32 version, u32-prefixed JSON LmConfig, then tensors
/// (u32 name length, name, u32 rank, u32 dims..., little-endian f32 data).
/// The codebook is stored as "codebook.centroids" and is rounded to f32.
void save_checkpoint(const ModelParams<float>& model, const Codebook* codebook,
                     const PromptBank<float>* prompts, const std::string& path);

/// Throws Error with ErrorCode::bad_magic, version_mismatch, truncated_file or
/// io as appropriate.
CheckpointBundle load_checkpoint(const std::string& path);

/// Rounds centroids through f32 so in-memory codebooks match reloaded ones.
Codebook round_codebook(const Codebook& cb);

/// Hex SHA-256 over names, shapes and values of the transformer weights.
std::string backbone_hash(const ModelParams<float>& model);

/// Hex SHA-256 of a file's bytes.
std::string file_sha256(const std::string& path);

}  // namespace slmicl
