#pragma once

#include "slmicl/tasks.hpp"

namespace slmicl {

/// Token-id layout shared by the LM, the episode builder and evaluation:
///   [0, units)                      discrete units
///   [units, units + label_tokens)   reserved label-token region
///   units + label_tokens            separation token
///   units + label_tokens + 1        pad token
struct Vocab {
  int units = 32;
  int label_tokens = 16;

  TokenId label_begin() const { return units; }
  TokenId label_end() const { return units + label_tokens; }
  TokenId sep() const { return units + label_tokens; }
  TokenId pad() const { return units + label_tokens + 1; }
  int size() const { return units + label_tokens + 2; }

  bool is_label(TokenId t) const { return t >= label_begin() && t < label_end(); }
  bool is_unit(TokenId t) const { return t >= 0 && t < units; }
};

}  // namespace slmicl
