#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "knnssd/model.hpp"

namespace knnssd {

enum class DraftMode { kFixed, kAdaptive };

struct DraftConfig {
  // Upper bound on draft tokens per round (gamma).
  int max_draft_len = 8;
  // Adaptive mode: a draft position whose top probability is below this is
  // not drafted. The first position is always drafted.
  double confidence_threshold = 0.4;
  DraftMode mode = DraftMode::kAdaptive;

  void validate() const;
};

struct DecodeStats {
  std::int64_t drafted_tokens = 0;
  std::int64_t accepted_tokens = 0;
  std::int64_t target_forward_passes = 0;
  std::int64_t emitted_tokens = 0;
  double draft_ms = 0.0;
  double verify_ms = 0.0;

  // M: tokens emitted per target pass.
  double mean_accepted_length() const;
  // alpha: accepted / drafted; bonus tokens are not counted.
  double acceptance_rate() const;

  DecodeStats& operator+=(const DecodeStats& other);
};

struct SpecResult {
  std::vector<Token> tokens;
  DecodeStats stats;
};

struct VerifyResult {
  int accepted_prefix_len = 0;
  Token next_token = 0;
};

// Masked-model argmax continuation of the context, at most max_draft_len
// tokens, ending early after an end-of-sequence token.
std::vector<Token> draft(const Model& model, std::span<const Token> context,
                         const SkipMask& mask, const DraftConfig& cfg);

// One full-model pass over context + draft tokens.
VerifyResult verify(const Model& model, std::span<const Token> context,
                    std::span<const Token> draft_tokens);

// Draft/verify loop. The result is token-for-token identical to
// greedy_decode(model, prompt, max_new).
SpecResult speculative_generate(const Model& model, std::span<const Token> prompt,
                                const SkipMask& mask, const DraftConfig& cfg, int max_new);

}  // namespace knnssd
