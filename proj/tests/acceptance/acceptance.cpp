// One PASS/FAIL line per acceptance criterion. Exit status is the number
// of failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "../unit/fixtures.hpp"
#include "../unit/oracles.hpp"
#include "knnssd/cli.hpp"
#include "knnssd/corpus.hpp"
#include "knnssd/gaussian_process.hpp"
#include "knnssd/mask_search.hpp"
#include "knnssd/metrics.hpp"
#include "knnssd/router.hpp"
#include "knnssd/spec_engine.hpp"
#include "knnssd/stream.hpp"

using namespace knnssd;
using namespace knnssd::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(int n, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  std::printf("%s criterion %d: %s\n", o.pass ? "PASS" : "FAIL", n, o.detail.c_str());
  std::fflush(stdout);
  failures += o.pass ? 0 : 1;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// The planted model used by the optimizer and stream criteria: 8 blocks,
// so L = 16.
ModelSpec stream_spec() {
  ModelSpec s;
  s.backend = Backend::kPlanted;
  s.num_blocks = 8;
  s.hidden_dim = 64;
  s.num_domains = 5;
  s.seed = 7;
  s.planted_gates = default_planted_gates(8, 5, 7);
  return s;
}

DraftConfig fixed_gamma(int gamma) {
  DraftConfig c;
  c.mode = DraftMode::kFixed;
  c.max_draft_len = gamma;
  return c;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

bool accounting_holds(const DecodeStats& s) {
  return s.emitted_tokens == s.accepted_tokens + s.target_forward_passes;
}

Outcome losslessness() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  int mismatches = 0, cases = 0;
  for (int c = 0; c < 200; ++c) {
    const bool planted = c % 2 == 1;
    ModelSpec spec = planted ? planted_spec(32, 5, 7 + c % 3) : tiny_spec(2 + c % 3, 32, 3 + c % 4);
    if (c % 10 == 0) spec.eos_token = static_cast<Token>(rng.uniform_index(256));
    const Model m(spec);
    const int len = 1 + static_cast<int>(rng.uniform_index(12));
    std::vector<Token> prompt;
    if (planted && c % 4 == 1) {
      prompt = synth_corpus(spec.layout(), c % 5, 1, static_cast<std::uint64_t>(c))[0].tokens;
    } else {
      prompt = random_prompt(spec, len, rng);
    }
    const SkipMask mask = random_mask(m.num_sublayers(), rng, rng.uniform());
    DraftConfig cfg;
    cfg.max_draft_len = 1 + static_cast<int>(rng.uniform_index(8));
    cfg.confidence_threshold = rng.uniform();
    cfg.mode = rng.bernoulli(0.5) ? DraftMode::kAdaptive : DraftMode::kFixed;
    const int max_new = static_cast<int>(rng.uniform_index(33));
    const auto spec_out = speculative_generate(m, prompt, mask, cfg, max_new).tokens;
    mismatches += spec_out != greedy_decode(m, prompt, max_new);
    ++cases;
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 60.0,
          fmt("%d/%d pairs identical across tiny-transformer and planted, %.1fs (limit 60s)",
              cases - mismatches, cases, secs)};
}

Outcome cost_coefficients() {
  const double weighted = cost_coefficient_weighted(0.42, 0.48, 2.3);
  const double simple = cost_coefficient_simple(0.45);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double s = i / 100.0;
    worst = std::max(worst, std::abs(cost_coefficient_weighted(s, s, 1.0) - (1.0 - s)));
  }
  return {std::abs(weighted - 0.538) <= 0.001 && simple == 0.55 && worst <= 1e-12,
          fmt("weighted(0.42,0.48,2.3)=%.6f simple(0.45)=%.17g beta=1 max dev %.1e", weighted,
              simple, worst)};
}

Outcome speedup_formula() {
  bool ok = true;
  for (int a = 1; a <= 10; ++a) {
    for (int c = 1; c <= 10; ++c) ok &= expected_speedup(1.0, a / 10.0, c / 10.0) == 1.0;
  }
  bool mono = true;
  for (double m : {1.5, 2.0, 3.12, 6.0}) {
    for (double c : {0.2, 0.55, 0.9}) {
      double prev = 0.0;
      for (int a = 1; a <= 50; ++a) {
        const double s = expected_speedup(m, a / 50.0, c);
        mono &= s > prev;
        prev = s;
      }
    }
    for (double a : {0.3, 0.88, 1.0}) {
      double prev = INFINITY;
      for (int c = 1; c <= 50; ++c) {
        const double s = expected_speedup(m, a, c / 50.0);
        mono &= s < prev;
        prev = s;
      }
    }
  }
  const double first = expected_speedup(3.12, 0.88, 0.55);
  double spread = 0.0;
  for (int i = 0; i < 5; ++i) spread = std::max(spread, std::abs(expected_speedup(3.12, 0.88, 0.55) - first));
  const bool point = std::isfinite(first) && spread <= 1e-9 && std::abs(first - 1.342) < 0.0005;
  return {ok && mono && point,
          fmt("M=1 grid %s, monotonicity %s, E(3.12,0.88,c=0.55)=%.6f (repeat spread %.1e)",
              ok ? "ok" : "broken", mono ? "ok" : "broken", first, spread)};
}

Outcome router_accuracy() {
  const auto t0 = Clock::now();
  const Model m(stream_spec());
  std::vector<Corpus> train;
  for (int d = 0; d < 5; ++d) train.push_back(synth_corpus(m.spec().layout(), d, 100, derive_seed(1, d)));
  FitOptions fo;
  fo.run_search = false;
  fo.seed = 3;
  const FitResult fit = fit_router(m, train, fo);
  int correct = 0, total = 0;
  for (int d = 0; d < 5; ++d) {
    for (const Prompt& p : synth_corpus(m.spec().layout(), d, 200, derive_seed(500, d))) {
      correct += classify(fit.router, extract_last_hidden(m, p.tokens)) == d;
      ++total;
    }
  }

  ModelSpec seven = stream_spec();
  seven.num_domains = 7;
  seven.planted_gates = default_planted_gates(8, 7, 7);
  const Model m7(seven);
  Corpus mixed;
  for (int d = 0; d < 7; ++d) {
    for (Prompt& p : synth_corpus(seven.layout(), d, 60, derive_seed(9, d))) mixed.push_back(std::move(p));
  }
  FitOptions f7;
  f7.run_search = false;
  f7.k_clusters = 7;
  const FitResult fit7 = fit_router(m7, {mixed}, f7);
  const double purity = *std::min_element(fit7.cluster_purity.begin(), fit7.cluster_purity.end());
  const double secs = seconds_since(t0);
  return {correct == total && purity == 1.0 && fit7.cluster_purity.size() == 7 && secs < 30.0,
          fmt("held-out accuracy %d/%d, 7-band k-means min purity %.3f, %.1fs (limit 30s)", correct,
              total, purity, secs)};
}

Outcome stream_statistics() {
  std::vector<Corpus> corpora(5);
  for (int d = 0; d < 5; ++d) corpora[static_cast<std::size_t>(d)].push_back({"p" + std::to_string(d), d, {d}});
  double worst = 0.0, worst_z = 0.0;
  for (double r : {0.0, 0.3, 0.7, 1.0}) {
    StreamConfig cfg;
    cfg.mix_ratio = r;
    cfg.num_domains = 5;
    cfg.length = 10001;
    cfg.seed = 17;
    const auto items = generate_stream(cfg, corpora);
    std::vector<std::vector<double>> counts(5, std::vector<double>(5, 0.0));
    for (std::size_t i = 1; i < items.size(); ++i) {
      counts[static_cast<std::size_t>(items[i - 1].domain)][static_cast<std::size_t>(items[i].domain)] += 1.0;
    }
    for (int k = 0; k < 5; ++k) {
      double row = 0.0;
      for (double c : counts[static_cast<std::size_t>(k)]) row += c;
      if (row == 0.0) continue;  // r = 0 never leaves its start
      for (int j = 0; j < 5; ++j) {
        const double expect = j == k ? 1.0 - r : r / 4.0;
        const double dev = std::abs(counts[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] / row - expect);
        worst = std::max(worst, dev);
        if (expect > 0.0 && expect < 1.0) worst_z = std::max(worst_z, dev / std::sqrt(expect * (1.0 - expect) / row));
      }
    }
  }
  // Rows see about 2000 transitions each, so 0.02 is roughly two binomial
  // standard errors; the z-score shows how far outside the noise we are.
  return {worst <= 0.02,
          fmt("max |empirical - expected| transition probability %.4f over 10^4 steps (limit 0.02), "
              "max binomial z-score %.2f",
              worst, worst_z)};
}

Outcome optimizer_quality() {
  const auto t0 = Clock::now();
  const Model m(stream_spec());
  ObjectiveSpec os;
  os.draft_cfg = fixed_gamma(4);
  os.max_new = 16;
  for (const Prompt& p : synth_corpus(m.spec().layout(), 0, 4, 1)) os.anchor_samples.push_back(p.tokens);
  // Both searches share one memo; the objective is deterministic.
  std::map<SkipMask, double> memo;
  const MaskObjective obj = [&](const SkipMask& k) {
    const auto it = memo.find(k);
    return it != memo.end() ? it->second : memo[k] = evaluate_objective(m, k, os);
  };
  const double opt = obj(planted_optimal_mask(m, 0));
  int within = 0;
  std::vector<double> bo, rnd;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    BOConfig cfg;
    cfg.iterations = 200;
    cfg.seed = seed;
    bo.push_back(search(16, obj, cfg).best_objective);
    rnd.push_back(random_search(16, obj, 200, seed).best_objective);
    within += bo.back() <= 1.05 * opt;
  }
  const double secs = seconds_since(t0);
  return {within >= 9 && median(bo) <= median(rnd) && secs < 300.0,
          fmt("%d/10 seeds within 5%% of planted optimum %.3f, median BO %.3f vs random %.3f, %.1fs "
              "(limit 300s)",
              within, opt, median(bo), median(rnd), secs)};
}

std::vector<RunRecord> stream_records;

Outcome stream_ordering() {
  const Model m(stream_spec());
  std::vector<Corpus> corpora;
  for (int d = 0; d < 5; ++d) corpora.push_back(synth_corpus(m.spec().layout(), d, 60, derive_seed(1, d)));
  FitOptions fo;
  fo.k_anchors = 10;
  fo.search_samples = 4;
  fo.seed = 1;
  fo.objective.draft_cfg = fixed_gamma(4);
  fo.objective.max_new = 16;
  const FitResult fit = fit_router(m, corpora, fo);

  const auto run = [&](StreamMode mode, double r) {
    StreamRunOptions o;
    o.mode = mode;
    o.stream.mix_ratio = r;
    o.stream.num_domains = 5;
    o.stream.length = 40;
    o.stream.seed = 3;
    o.draft = fixed_gamma(4);
    o.max_new = 16;
    o.search_samples = 4;
    o.bo.seed = 5;
    o.timing = false;
    StreamRunResult res = run_stream(m, fit.registry, fit.router, corpora, o);
    stream_records.insert(stream_records.end(), res.records.begin(), res.records.end());
    return res.report.overall.analytic_speedup;
  };
  const double fixed = run(StreamMode::kSsdFixed, 1.0);
  const double mixed = run(StreamMode::kSsdMixed, 1.0);
  std::vector<double> knn;
  for (double r : {0.0, 0.3, 0.7, 1.0}) knn.push_back(run(StreamMode::kKnnSsd, r));
  const auto [lo, hi] = std::minmax_element(knn.begin(), knn.end());
  double mean = 0.0;
  for (double k : knn) mean += k / static_cast<double>(knn.size());
  const double variation = (*hi - *lo) / mean;
  return {knn.back() > mixed && mixed > fixed && variation < 0.05,
          fmt("r=1 analytic speedup knn-ssd %.3f > ssd-mixed %.3f > ssd-fixed %.3f; knn-ssd over r "
              "in {0,0.3,0.7,1}: %.3f..%.3f (%.1f%% spread)",
              knn.back(), mixed, fixed, *lo, *hi, 100.0 * variation)};
}

Outcome anchor_oracle() {
  Rng rng(88);
  int exact = 0;
  for (int inst = 0; inst < 50; ++inst) {
    const int n = 2 + static_cast<int>(rng.uniform_index(11));
    const int k = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n)));
    const int dim = 1 + static_cast<int>(rng.uniform_index(6));
    std::vector<HiddenVector> cluster;
    std::vector<std::vector<double>> raw;
    std::vector<std::string> ids;
    for (int i = 0; i < n; ++i) {
      std::vector<double> v(static_cast<std::size_t>(dim));
      for (double& x : v) x = rng.normal();
      ids.push_back(fmt("q%02d", i));
      cluster.push_back({v, ids.back()});
      raw.push_back(v);
    }
    std::vector<double> centroid(static_cast<std::size_t>(dim), 0.0);
    for (const auto& v : raw) {
      for (int c = 0; c < dim; ++c) centroid[static_cast<std::size_t>(c)] += v[static_cast<std::size_t>(c)] / n;
    }
    std::vector<std::string> got;
    for (const Anchor& a : select_anchors(cluster, centroid, k, 0)) got.push_back(a.vector.source_prompt_id);
    std::sort(got.begin(), got.end());
    exact += got == brute_force_anchor_ids(raw, ids, centroid, k);
  }
  return {exact == 50, fmt("%d/50 instances match exhaustive subset minimization", exact)};
}

Outcome bookkeeping() {
  bool exact = true;
  int runs = 0;
  Rng rng(5);
  for (const ModelSpec& spec : {tiny_spec(4, 32, 3), stream_spec()}) {
    const Model m(spec);
    for (int i = 0; i < 10; ++i) {
      const auto p = random_prompt(spec, 3 + i, rng);
      const auto s = speculative_generate(m, p, SkipMask::none(m.num_sublayers()), fixed_gamma(4), 40).stats;
      exact &= s.acceptance_rate() == 1.0 && s.mean_accepted_length() == 5.0 && accounting_holds(s);
      ++runs;
    }
  }
  int bad = 0;
  for (const RunRecord& r : stream_records) bad += !accounting_holds(r.stats);
  return {exact && bad == 0 && !stream_records.empty(),
          fmt("all-zeros mask alpha=1, M=5 on %d runs: %s; accounting identity broken on %d of %zu "
              "stream records",
              runs, exact ? "yes" : "no", bad, stream_records.size())};
}

Outcome gp_oracle() {
  Rng rng(61);
  double worst = 0.0;
  for (int f = 0; f < 5; ++f) {
    GPState s;
    s.hyper = {0.4 + 0.3 * f, 0.5 + f, f % 2 ? 1e-3 : 1e-5, 0.2 * f - 0.4};
    const int n = 6 + 3 * f, dim = 2 + f;
    for (int i = 0; i < n; ++i) {
      std::vector<double> p(static_cast<std::size_t>(dim));
      for (double& x : p) x = rng.uniform();
      s.points.push_back(p);
      s.values.push_back(std::sin(3.0 * p[0]) + rng.normal() * 0.1);
    }
    s = gp_fit(s);
    const DenseGP ref{s.hyper.lengthscale, s.hyper.signal_variance,
                      s.hyper.noise_variance + s.jitter, s.hyper.prior_mean};
    for (int t = 0; t < 5; ++t) {
      std::vector<double> x(static_cast<std::size_t>(dim));
      for (double& v : x) v = rng.uniform();
      const auto [mean, var] = ref.posterior(s.points, s.values, x);
      const Posterior p = gp_posterior(s, x);
      worst = std::max({worst, std::abs(p.mean - mean), std::abs(p.variance - var)});
    }
  }

  // EI of the acquisition's own top candidates.
  GPState s;
  s.hyper.lengthscale = 1.4;
  for (int i = 0; i < 12; ++i) {
    std::vector<double> p(16);
    for (double& x : p) x = rng.bernoulli(0.5) ? 1.0 : 0.0;
    s.points.push_back(p);
    s.values.push_back(rng.normal());
  }
  s = gp_fit(s);
  const double best = *std::min_element(s.values.begin(), s.values.end());
  BOConfig cfg;
  cfg.seed = 4;
  const auto ranked = rank_candidates(s, cfg);
  double worst_rel = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    const SkipMask mask = binarize(ranked[i].point);
    std::vector<double> corner(16);
    for (std::size_t j = 0; j < 16; ++j) corner[j] = mask.skips(j) ? 1.0 : 0.0;
    const Posterior p = gp_posterior(s, corner);
    const double mc = mc_expected_improvement(p.mean, p.variance, best, 100000, 100 + static_cast<unsigned>(i));
    worst_rel = std::max(worst_rel, std::abs(ranked[i].score - mc) / mc);
  }
  return {worst <= 1e-8 && worst_rel <= 0.02,
          fmt("posterior vs dense solve max error %.2e on 5 fixtures; EI vs 10^5-draw Monte Carlo max "
              "relative error %.2f%%",
              worst, 100.0 * worst_rel)};
}

}  // namespace

int main() {
  report(1, losslessness);
  report(2, cost_coefficients);
  report(3, speedup_formula);
  report(4, router_accuracy);
  report(5, stream_statistics);
  report(6, optimizer_quality);
  report(7, stream_ordering);
  report(8, anchor_oracle);
  report(9, bookkeeping);
  report(10, gp_oracle);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures;
}
