#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "knnssd/model.hpp"
#include "knnssd/spec_engine.hpp"

namespace knnssd {

// c = 1 - s. Throws for s outside [0, 1).
double cost_coefficient_simple(double skip_ratio);

// c = ((1 - s_mlp) + (1 - s_attn) * beta) / (1 + beta)
double cost_coefficient_weighted(double mlp_skip_ratio, double attention_skip_ratio, double beta);

double cost_coefficient(const SkipMask& mask, double beta);

// E(speedup) = M * alpha / ((M - 1) * c + alpha)
double expected_speedup(double mean_accepted_len, double acceptance_rate, double cost_coefficient);

// One decoded prompt, paired with its vanilla (full-model greedy) run.
struct RunRecord {
  std::string prompt_id;
  DomainId domain = 0;
  std::string mask_id;
  std::string mode;
  double mix_ratio = 0.0;
  std::uint64_t seed = 0;
  int position = 0;
  DecodeStats stats;
  double vanilla_ms = 0.0;
  // Analytic cost per emitted token of this run and of the vanilla run.
  double analytic_cost = 0.0;
  double vanilla_cost = 0.0;
  double cost_coefficient = 1.0;
};

struct SpeedupRow {
  std::string label;
  int records = 0;
  std::int64_t drafted = 0;
  std::int64_t accepted = 0;
  std::int64_t passes = 0;
  std::int64_t emitted = 0;
  double mean_accepted_len = 0.0;
  double acceptance_rate = 0.0;
  double cost_coefficient = 1.0;
  double expected_speedup = 1.0;
  double tokens_per_sec = 0.0;
  double vanilla_tokens_per_sec = 0.0;
  // vanilla wallclock / method wallclock
  double measured_speedup = 0.0;
  // vanilla analytic cost / method analytic cost
  double analytic_speedup = 0.0;
  double draft_ms = 0.0;
  double verify_ms = 0.0;
  double vanilla_ms = 0.0;
};

struct SpeedupReport {
  SpeedupRow overall;
  std::vector<SpeedupRow> per_domain;
};

// Pooled counters: alpha = sum accepted / sum drafted, M = sum emitted /
// sum passes. Rows with no accepted draft fall back to
// M / (1 + c * drafted / passes) for the expected speedup.
SpeedupReport aggregate(std::span<const RunRecord> records);

// Top-2 principal components of the mean-centered data. Each component is
// flipped so its largest-magnitude coordinate is positive; components with
// no variance are zero.
std::vector<std::array<double, 2>> project_2d(const std::vector<std::vector<double>>& vectors);

}  // namespace knnssd
