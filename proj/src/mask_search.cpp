#include "knnssd/mask_search.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <map>
#include <numeric>

#include "knnssd/rng.hpp"

namespace knnssd {

namespace {

std::vector<double> corner(const SkipMask& mask) {
  std::vector<double> p(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) p[i] = mask.skips(i) ? 1.0 : 0.0;
  return p;
}

// A relaxed point whose binarization sets each bit with a density drawn
// per point. Uniform points almost never binarize to sparse or dense masks.
std::vector<double> random_point(std::size_t dim, double threshold, Rng& rng) {
  const double density = rng.uniform();
  std::vector<double> p(dim);
  for (double& v : p) {
    const double u = rng.uniform();
    v = rng.bernoulli(density) ? threshold + (1.0 - threshold) * u : threshold * u;
  }
  return p;
}

double mask_space_size(std::size_t num_sublayers) {
  return std::ldexp(1.0, static_cast<int>(std::min<std::size_t>(num_sublayers, 1000)));
}

DecodeStats decode_samples(const Model& model, const SkipMask& mask, const ObjectiveSpec& spec) {
  const std::size_t n = spec.anchor_samples.size();
  std::vector<DecodeStats> per_sample(n);
  const auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      per_sample[i] =
          speculative_generate(model, spec.anchor_samples[i], mask, spec.draft_cfg, spec.max_new)
              .stats;
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(spec.workers), 1, n);
  if (workers == 1) {
    run(0, n);
  } else {
    std::vector<std::future<void>> jobs;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t begin = 0; begin < n; begin += chunk) {
      jobs.push_back(std::async(std::launch::async, run, begin, std::min(n, begin + chunk)));
    }
    for (auto& j : jobs) j.get();
  }
  // Ordered reduction keeps the sum independent of scheduling.
  DecodeStats total;
  for (const DecodeStats& s : per_sample) total += s;
  return total;
}

}  // namespace

std::string_view to_string(ObjectiveMode mode) {
  return mode == ObjectiveMode::kWallclock ? "wallclock" : "analytic";
}

ObjectiveMode objective_mode_from_string(std::string_view name) {
  if (name == "wallclock") return ObjectiveMode::kWallclock;
  if (name == "analytic") return ObjectiveMode::kAnalytic;
  throw ValidationError("unknown objective mode: " + std::string(name));
}

double draft_forward_cost(const SkipMask& mask, double beta) {
  const double attn = static_cast<double>(mask.num_blocks() - mask.skipped_attention());
  const double mlp = static_cast<double>(mask.num_blocks() - mask.skipped_mlp());
  return attn * beta + mlp;
}

double verify_forward_cost(int num_blocks, double beta) {
  return static_cast<double>(num_blocks) * (beta + 1.0);
}

double analytic_cost_per_token(const DecodeStats& stats, const SkipMask& mask, double beta) {
  if (!(beta > 0.0)) throw ValidationError("beta must be > 0");
  if (stats.emitted_tokens == 0) throw ValidationError("no tokens emitted");
  const double draft = draft_forward_cost(mask, beta) * static_cast<double>(stats.drafted_tokens);
  const double target = verify_forward_cost(static_cast<int>(mask.num_blocks()), beta) *
                        static_cast<double>(stats.target_forward_passes);
  return (draft + target) / static_cast<double>(stats.emitted_tokens);
}

double evaluate_objective(const Model& model, const SkipMask& mask, const ObjectiveSpec& spec) {
  if (spec.anchor_samples.empty()) throw ValidationError("objective needs anchor samples");
  if (spec.max_new < 1) throw ValidationError("objective needs max_new >= 1");
  if (mask.size() != model.num_sublayers()) {
    throw ValidationError("skip mask length does not match the model");
  }
  if (spec.mode == ObjectiveMode::kAnalytic) {
    return analytic_cost_per_token(decode_samples(model, mask, spec), mask, spec.beta);
  }

  // Timing runs stay on the calling thread.
  const int repeats = std::max(1, spec.repeats);
  std::int64_t emitted = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < repeats; ++r) {
    for (const auto& sample : spec.anchor_samples) {
      emitted += speculative_generate(model, sample, mask, spec.draft_cfg, spec.max_new)
                     .stats.emitted_tokens;
    }
  }
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  if (emitted == 0) throw ValidationError("no tokens emitted");
  return ms / static_cast<double>(emitted);
}

void BOConfig::validate() const {
  if (iterations < 1) throw ValidationError("iterations must be >= 1");
  if (init_random_points < 1) throw ValidationError("init_random_points must be >= 1");
  if (!(binarize_threshold > 0.0 && binarize_threshold < 1.0)) {
    throw ValidationError("binarize_threshold must be in (0, 1)");
  }
  if (noise_variance < 0.0) throw ValidationError("noise_variance must be >= 0");
  if (candidate_pool_size < 0) throw ValidationError("candidate_pool_size must be >= 0");
}

double BOConfig::lengthscale_for(std::size_t num_sublayers) const {
  return kernel_lengthscale > 0.0 ? kernel_lengthscale
                                  : 0.35 * std::sqrt(static_cast<double>(num_sublayers));
}

SkipMask binarize(std::span<const double> point, double threshold) {
  std::vector<std::uint8_t> bits(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) bits[i] = point[i] >= threshold ? 1 : 0;
  return SkipMask(std::move(bits));
}

std::vector<Candidate> rank_candidates(const GPState& state, const BOConfig& cfg) {
  if (state.points.empty()) throw ValidationError("rank_candidates needs observations");
  const std::size_t dim = state.points.front().size();
  const std::size_t n = state.points.size();
  const auto best_it = std::min_element(state.values.begin(), state.values.end());
  const double best = *best_it;
  const auto& incumbent = state.points[static_cast<std::size_t>(best_it - state.values.begin())];

  Rng rng(derive_seed(cfg.seed, 5000 + n));
  std::vector<Candidate> pool;
  pool.reserve(static_cast<std::size_t>(cfg.candidate_pool_size) + dim);
  for (int i = 0; i < cfg.candidate_pool_size; ++i) pool.push_back({random_point(dim, cfg.binarize_threshold, rng), 0.0});
  for (std::size_t i = 0; i < dim; ++i) {
    Candidate c{incumbent, 0.0};
    c.point[i] = 1.0 - c.point[i];
    pool.push_back(std::move(c));
  }

  for (Candidate& c : pool) {
    const std::vector<double> snapped = corner(binarize(c.point, cfg.binarize_threshold));
    const Posterior p = gp_posterior(state, snapped);
    c.score = cfg.acquisition == Acquisition::kExpectedImprovement
                  ? expected_improvement(p, best)
                  : confidence_bound_score(p, cfg.ucb_kappa);
  }
  std::stable_sort(pool.begin(), pool.end(),
                   [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
  return pool;
}

std::vector<double> propose(const GPState& state, const BOConfig& cfg) {
  return rank_candidates(state, cfg).front().point;
}

SearchResult search(std::size_t num_sublayers, const MaskObjective& objective,
                    const BOConfig& cfg) {
  cfg.validate();
  if (num_sublayers == 0 || num_sublayers % 2 != 0) {
    throw ValidationError("search needs a positive, even sublayer count");
  }
  const double space = mask_space_size(num_sublayers);
  Rng rng(derive_seed(cfg.seed, 11));
  std::map<SkipMask, double> seen;
  SearchResult result;
  result.best_objective = INFINITY;

  const auto record = [&](std::vector<double> point, const SkipMask& mask) {
    const double value = objective(mask);
    if (!std::isfinite(value)) throw ValidationError("objective returned a non-finite value");
    seen.emplace(mask, value);
    if (value < result.best_objective) {
      result.best_objective = value;
      result.best_mask = mask;
    }
    result.trace.push_back({static_cast<int>(result.trace.size()), std::move(point), mask, value,
                            result.best_objective});
  };
  const auto fresh_random = [&]() -> std::optional<std::vector<double>> {
    for (int attempt = 0; attempt < 256; ++attempt) {
      auto p = random_point(num_sublayers, cfg.binarize_threshold, rng);
      if (!seen.contains(binarize(p, cfg.binarize_threshold))) return p;
    }
    return std::nullopt;
  };

  const int init = std::min(cfg.init_random_points, cfg.iterations);
  for (int i = 0; i < init && static_cast<double>(seen.size()) < space; ++i) {
    auto p = fresh_random();
    if (!p) break;
    const SkipMask m = binarize(*p, cfg.binarize_threshold);
    record(std::move(*p), m);
  }

  const double lengthscale = cfg.lengthscale_for(num_sublayers);
  while (static_cast<int>(result.trace.size()) < cfg.iterations &&
         static_cast<double>(seen.size()) < space) {
    // GP on log-objective, standardized; costs are positive and heavy-tailed.
    GPState state;
    state.hyper.lengthscale = lengthscale;
    state.hyper.noise_variance = cfg.noise_variance;
    for (const TraceEntry& e : result.trace) {
      state.points.push_back(corner(e.mask));
      state.values.push_back(e.objective > 0.0 ? std::log(e.objective) : e.objective);
    }
    const double n = static_cast<double>(state.values.size());
    const double mean = std::accumulate(state.values.begin(), state.values.end(), 0.0) / n;
    double var = 0.0;
    for (double v : state.values) var += (v - mean) * (v - mean);
    var /= n;
    state.hyper.prior_mean = mean;
    state.hyper.signal_variance = var > 1e-12 ? var : 1.0;
    state = gp_fit(std::move(state));

    std::optional<std::vector<double>> chosen;
    for (Candidate& c : rank_candidates(state, cfg)) {
      if (!seen.contains(binarize(c.point, cfg.binarize_threshold))) {
        chosen = std::move(c.point);
        break;
      }
    }
    if (!chosen) chosen = fresh_random();
    if (!chosen) break;
    const SkipMask m = binarize(*chosen, cfg.binarize_threshold);
    record(std::move(*chosen), m);
  }
  return result;
}

SearchResult search(const Model& model, const ObjectiveSpec& spec, const BOConfig& cfg) {
  if (spec.anchor_samples.empty()) throw ValidationError("objective needs anchor samples");
  return search(
      model.num_sublayers(),
      [&](const SkipMask& m) { return evaluate_objective(model, m, spec); }, cfg);
}

SearchResult random_search(std::size_t num_sublayers, const MaskObjective& objective, int budget,
                           std::uint64_t seed) {
  if (budget < 1) throw ValidationError("budget must be >= 1");
  Rng rng(derive_seed(seed, 13));
  const double space = mask_space_size(num_sublayers);
  std::map<SkipMask, double> seen;
  SearchResult result;
  result.best_objective = INFINITY;
  while (static_cast<int>(result.trace.size()) < budget &&
         static_cast<double>(seen.size()) < space) {
    std::vector<double> p(num_sublayers);
    for (double& v : p) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    SkipMask m = binarize(p);
    if (seen.contains(m)) continue;
    const double value = objective(m);
    seen.emplace(m, value);
    if (value < result.best_objective) {
      result.best_objective = value;
      result.best_mask = m;
    }
    result.trace.push_back({static_cast<int>(result.trace.size()), std::move(p), m, value,
                            result.best_objective});
  }
  return result;
}

}  // namespace knnssd
