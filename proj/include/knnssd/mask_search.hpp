#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "knnssd/gaussian_process.hpp"
#include "knnssd/model.hpp"
#include "knnssd/spec_engine.hpp"

namespace knnssd {

enum class ObjectiveMode { kWallclock, kAnalytic };
enum class Acquisition { kExpectedImprovement, kUpperConfidenceBound };

std::string_view to_string(ObjectiveMode mode);
ObjectiveMode objective_mode_from_string(std::string_view name);

// Average inference cost per verified token on a set of anchor prompts.
struct ObjectiveSpec {
  ObjectiveMode mode = ObjectiveMode::kAnalytic;
  std::vector<std::vector<Token>> anchor_samples;
  DraftConfig draft_cfg;
  int max_new = 32;
  // Attention / MLP latency ratio for the analytic cost model.
  double beta = 1.0;
  // Wallclock mode: decode each sample this many times.
  int repeats = 1;
  // Analytic mode only: samples are decoded on this many threads.
  int workers = 1;
};

// Cost of one forward pass of the masked model: retained attention
// sublayers weigh beta, retained MLP sublayers weigh 1.
double draft_forward_cost(const SkipMask& mask, double beta);
double verify_forward_cost(int num_blocks, double beta);
// (draft_cost * drafted + verify_cost * passes) / emitted
double analytic_cost_per_token(const DecodeStats& stats, const SkipMask& mask, double beta);

double evaluate_objective(const Model& model, const SkipMask& mask, const ObjectiveSpec& spec);

struct BOConfig {
  // Total objective evaluations, including the random initial design.
  int iterations = 200;
  int init_random_points = 20;
  // <= 0 selects 0.35 * sqrt(L).
  double kernel_lengthscale = 0.0;
  double noise_variance = 1e-6;
  Acquisition acquisition = Acquisition::kExpectedImprovement;
  double ucb_kappa = 2.0;
  double binarize_threshold = 0.5;
  std::uint64_t seed = 0;
  // Random relaxed points per proposal; one-bit flips of the incumbent are
  // always added on top.
  int candidate_pool_size = 256;

  void validate() const;
  double lengthscale_for(std::size_t num_sublayers) const;
};

struct TraceEntry {
  int iteration = 0;
  std::vector<double> point;
  SkipMask mask;
  double objective = 0.0;
  double best_so_far = 0.0;
};

using SearchTrace = std::vector<TraceEntry>;

struct SearchResult {
  SkipMask best_mask;
  double best_objective = 0.0;
  SearchTrace trace;
};

// Bit i is set iff point[i] >= threshold.
SkipMask binarize(std::span<const double> point, double threshold = 0.5);

struct Candidate {
  std::vector<double> point;
  double score = 0.0;
};

// Candidate pool for the next proposal, best acquisition first. The
// acquisition is scored at each candidate's binarized corner, since that
// is where the objective is evaluated. Deterministic in (state, cfg).
std::vector<Candidate> rank_candidates(const GPState& state, const BOConfig& cfg);

// Highest-scoring candidate of rank_candidates.
std::vector<double> propose(const GPState& state, const BOConfig& cfg);

using MaskObjective = std::function<double(const SkipMask&)>;

// GP/EI search over {0,1}^num_sublayers. Never evaluates a mask twice.
SearchResult search(std::size_t num_sublayers, const MaskObjective& objective,
                    const BOConfig& cfg);
SearchResult search(const Model& model, const ObjectiveSpec& spec, const BOConfig& cfg);

// Uniform random masks with the same budget and duplicate rule.
SearchResult random_search(std::size_t num_sublayers, const MaskObjective& objective,
                           int budget, std::uint64_t seed);

}  // namespace knnssd
