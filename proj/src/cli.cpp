#include "knnssd/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <future>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include <CLI11.hpp>

#include "knnssd/corpus.hpp"
#include "knnssd/io.hpp"

namespace knnssd {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Exceptions surface in
// index order.
template <typename Fn>
void for_each_index(std::size_t n, int jobs, Fn fn) {
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1,
                                                      std::max<std::size_t>(n, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::future<void>> futures;
  for (std::size_t w = 0; w < workers; ++w) {
    futures.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    }));
  }
  for (auto& f : futures) f.get();
}

std::unordered_map<std::string, const Prompt*> index_prompts(const std::vector<Corpus>& corpora) {
  std::unordered_map<std::string, const Prompt*> by_id;
  for (const Corpus& c : corpora) {
    for (const Prompt& p : c) by_id.emplace(p.id, &p);
  }
  return by_id;
}

}  // namespace

std::string_view to_string(StreamMode mode) {
  switch (mode) {
    case StreamMode::kVanilla: return "vanilla";
    case StreamMode::kSsdFixed: return "ssd-fixed";
    case StreamMode::kSsdMixed: return "ssd-mixed";
    case StreamMode::kKnnSsd: return "knn-ssd";
  }
  return "?";
}

StreamMode stream_mode_from_string(std::string_view name) {
  if (name == "vanilla") return StreamMode::kVanilla;
  if (name == "ssd-fixed") return StreamMode::kSsdFixed;
  if (name == "ssd-mixed") return StreamMode::kSsdMixed;
  if (name == "knn-ssd") return StreamMode::kKnnSsd;
  throw ValidationError("unknown mode: " + std::string(name));
}

StreamRunResult run_stream(const Model& model, const Registry& registry,
                           const RouterModel& router, const std::vector<Corpus>& corpora,
                           const StreamRunOptions& options) {
  options.draft.validate();
  if (options.max_new < 1) throw ValidationError("max_new must be >= 1");
  if (!(options.beta > 0.0)) throw ValidationError("beta must be > 0");
  const bool vanilla = options.mode == StreamMode::kVanilla;
  if (!vanilla) {
    if (registry.fingerprint != model_fingerprint(model.spec())) {
      throw ValidationError("registry was built for a different model (fingerprint " +
                            registry.fingerprint + ", model " + model_fingerprint(model.spec()) +
                            ")");
    }
    router.validate();
  }

  StreamRunResult res;
  res.items = generate_stream(options.stream, corpora);
  const std::size_t n = res.items.size();
  if (n == 0) throw ValidationError("stream is empty");
  const bool timing = options.timing && options.jobs <= 1;

  res.hidden.resize(n);
  res.routed.assign(n, -1);
  for_each_index(n, options.jobs, [&](std::size_t i) {
    const Prompt& p = res.items[i].prompt;
    res.hidden[i] = extract_last_hidden(model, p.tokens, p.id);
    if (!vanilla) res.routed[i] = classify(router, res.hidden[i]);
  });

  std::vector<SkipMask> masks(n, SkipMask::none(model.num_sublayers()));
  switch (options.mode) {
    case StreamMode::kVanilla:
      break;
    case StreamMode::kKnnSsd:
      for (std::size_t i = 0; i < n; ++i) masks[i] = route(registry, router, res.hidden[i], model);
      break;
    case StreamMode::kSsdFixed: {
      const SkipMask first = route(registry, router, res.hidden[0], model);
      std::fill(masks.begin(), masks.end(), first);
      break;
    }
    case StreamMode::kSsdMixed: {
      const auto by_id = index_prompts(corpora);
      const std::set<DomainId> present(res.routed.begin(), res.routed.end());
      ObjectiveSpec objective;
      objective.mode = options.objective;
      objective.draft_cfg = options.draft;
      objective.max_new = options.max_new;
      objective.beta = options.beta;
      objective.workers = options.jobs;
      for (DomainId d : present) {
        int taken = 0;
        for (const Anchor& a : router.anchors) {
          if (a.domain != d || taken >= options.search_samples) continue;
          const auto it = by_id.find(a.vector.source_prompt_id);
          if (it == by_id.end()) {
            throw ValidationError("anchor prompt " + a.vector.source_prompt_id +
                                  " not found in the corpora");
          }
          objective.anchor_samples.push_back(it->second->tokens);
          ++taken;
        }
      }
      SearchResult sr = search(model, objective, options.bo);
      std::fill(masks.begin(), masks.end(), sr.best_mask);
      res.mixed_search = std::move(sr);
      break;
    }
  }

  res.records.resize(n);
  res.outputs.resize(n);
  std::vector<char> diverged(n, 0);
  const double verify_cost = verify_forward_cost(model.spec().num_blocks, options.beta);
  for_each_index(n, options.jobs, [&](std::size_t i) {
    const StreamItem& item = res.items[i];
    RunRecord& r = res.records[i];
    r.prompt_id = item.prompt.id;
    r.domain = item.domain;
    r.mode = std::string(to_string(options.mode));
    r.mix_ratio = options.stream.mix_ratio;
    r.seed = options.stream.seed;
    r.position = item.position;
    r.vanilla_cost = verify_cost;

    auto t0 = Clock::now();
    std::vector<Token> reference = greedy_decode(model, item.prompt.tokens, options.max_new);
    r.vanilla_ms = ms_since(t0);
    if (vanilla) {
      r.mask_id = "vanilla";
      r.stats.emitted_tokens = static_cast<std::int64_t>(reference.size());
      r.stats.target_forward_passes = r.stats.emitted_tokens;
      r.stats.verify_ms = r.vanilla_ms;
      r.analytic_cost = verify_cost;
      r.cost_coefficient = 1.0;
      res.outputs[i] = std::move(reference);
    } else {
      SpecResult sr =
          speculative_generate(model, item.prompt.tokens, masks[i], options.draft, options.max_new);
      diverged[i] = sr.tokens != reference;
      r.mask_id = masks[i].to_bitstring();
      r.stats = sr.stats;
      r.analytic_cost = analytic_cost_per_token(sr.stats, masks[i], options.beta);
      r.cost_coefficient = cost_coefficient(masks[i], options.beta);
      res.outputs[i] = std::move(sr.tokens);
    }
    if (!timing) {
      r.vanilla_ms = 0.0;
      r.stats.draft_ms = 0.0;
      r.stats.verify_ms = 0.0;
    }
  });
  for (std::size_t i = 0; i < n; ++i) {
    if (diverged[i]) {
      throw LosslessnessError("item " + std::to_string(res.items[i].position) + " (" +
                              res.items[i].prompt.id + "): speculative output differs from vanilla");
    }
  }
  res.report = aggregate(res.records);
  return res;
}

namespace {

struct Common {
  std::uint64_t seed = 0;
  std::string out_dir;
};

void write_manifest(const fs::path& dir, const std::string& command, std::uint64_t seed,
                    const json& args, const json& inputs, const std::vector<std::string>& outputs) {
  json m;
  m["command"] = command;
  m["seed"] = seed;
  m["args"] = args;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ValidationError(std::string("--") + what + " is required");
  if (!fs::exists(path)) throw ValidationError(std::string(what) + " not found: " + path);
}

// Draft and objective flags shared by search and run-stream.
struct DecodeFlags {
  int gamma = 8;
  double tau = 0.4;
  std::string draft_mode = "adaptive";
  int max_new = 32;
  double beta = 1.0;
  std::string objective = "analytic";
  int iterations = 200;
  int init_points = 20;
  int search_samples = 8;
  int jobs = 1;

  void add(CLI::App& app) {
    app.add_option("--gamma", gamma, "Max draft tokens per round")->check(CLI::PositiveNumber);
    app.add_option("--tau", tau, "Draft confidence threshold")->check(CLI::Range(0.0, 1.0));
    app.add_option("--draft-mode", draft_mode)->check(CLI::IsMember({"adaptive", "fixed"}));
    app.add_option("--max-new", max_new, "Tokens generated per prompt")->check(CLI::PositiveNumber);
    app.add_option("--beta", beta, "Attention/MLP latency ratio")->check(CLI::PositiveNumber);
    app.add_option("--objective", objective)->check(CLI::IsMember({"wallclock", "analytic"}));
    app.add_option("--iterations", iterations, "Objective evaluations per search")
        ->check(CLI::PositiveNumber);
    app.add_option("--init-points", init_points)->check(CLI::PositiveNumber);
    app.add_option("--search-samples", search_samples, "Anchor prompts per search")
        ->check(CLI::PositiveNumber);
    app.add_option("--jobs", jobs, "Worker threads; > 1 disables timing")->check(CLI::PositiveNumber);
  }

  DraftConfig draft() const {
    DraftConfig cfg;
    cfg.max_draft_len = gamma;
    cfg.confidence_threshold = tau;
    cfg.mode = draft_mode == "fixed" ? DraftMode::kFixed : DraftMode::kAdaptive;
    return cfg;
  }

  BOConfig bo(std::uint64_t seed) const {
    BOConfig cfg;
    cfg.iterations = iterations;
    cfg.init_random_points = init_points;
    cfg.seed = seed;
    return cfg;
  }

  json to_json() const {
    return {{"gamma", gamma},       {"tau", tau},
            {"draft_mode", draft_mode}, {"max_new", max_new},
            {"beta", beta},         {"objective", objective},
            {"iterations", iterations}, {"init_points", init_points},
            {"search_samples", search_samples}, {"jobs", jobs}};
  }
};

struct SynthArgs {
  std::string model_spec;
  int domains = 5;
  int per_domain = 200;
  std::string backend = "planted";
  int num_blocks = 8;
  int hidden_dim = 64;
  int vocab = 256;
  int min_len = 8;
  int max_len = 16;
};

void cmd_synth(const SynthArgs& a, bool domains_given, const Common& c) {
  ModelSpec spec;
  const fs::path out(c.out_dir);
  std::vector<std::string> outputs;
  if (!a.model_spec.empty()) {
    require_file(a.model_spec, "model-spec");
    spec = load_model_spec(a.model_spec);
    if (domains_given && a.domains != spec.num_domains) {
      throw ValidationError("--domains disagrees with the model spec");
    }
  } else {
    if (a.domains < 1) throw ValidationError("--domains must be >= 1");
    spec.backend = backend_from_string(a.backend);
    spec.num_blocks = a.num_blocks;
    spec.hidden_dim = a.hidden_dim;
    spec.vocab_size = a.vocab;
    spec.num_domains = a.domains;
    spec.seed = c.seed;
    if (spec.backend == Backend::kPlanted) {
      spec.planted_gates = default_planted_gates(spec.num_blocks, spec.num_domains, c.seed);
    }
    spec.validate();
    save_model_spec(out / "model_spec.json", spec);
    outputs.push_back("model_spec.json");
  }
  if (a.per_domain < 1) throw ValidationError("--per-domain must be >= 1");
  CorpusOptions opts;
  opts.min_length = a.min_len;
  opts.max_length = a.max_len;
  const VocabLayout layout = spec.layout();
  for (int d = 0; d < spec.num_domains; ++d) {
    const std::string name = "corpora/domain_" + std::to_string(d) + ".jsonl";
    save_corpus_jsonl(out / name,
                      synth_corpus(layout, d, a.per_domain, derive_seed(c.seed, static_cast<std::uint64_t>(d)), opts));
    outputs.push_back(name);
  }
  outputs.push_back("manifest.json");
  write_manifest(out, "synth", c.seed,
                 {{"domains", spec.num_domains},
                  {"per_domain", a.per_domain},
                  {"min_len", a.min_len},
                  {"max_len", a.max_len}},
                 {{"model_spec", a.model_spec}}, outputs);
  std::printf("wrote %d corpora x %d prompts to %s\n", spec.num_domains, a.per_domain,
              (out / "corpora").string().c_str());
}

struct SearchArgs {
  std::string model_spec;
  std::string corpora_dir;
  int k_anchors = 10;
  int clusters = 0;
};

void cmd_search(const SearchArgs& a, const DecodeFlags& f, const Common& c) {
  require_file(a.model_spec, "model-spec");
  require_file(a.corpora_dir, "corpora-dir");
  const Model model(load_model_spec(a.model_spec));
  const std::vector<Corpus> corpora = load_corpora_dir(a.corpora_dir);

  FitOptions opts;
  opts.k_clusters = a.clusters;
  opts.k_anchors = a.k_anchors;
  opts.search_samples = f.search_samples;
  opts.seed = c.seed;
  opts.bo = f.bo(c.seed);
  opts.objective.mode = objective_mode_from_string(f.objective);
  opts.objective.draft_cfg = f.draft();
  opts.objective.max_new = f.max_new;
  opts.objective.beta = f.beta;
  opts.objective.workers = f.jobs;
  const FitResult fit = fit_router(model, corpora, opts);

  const fs::path out(c.out_dir);
  Registry registry = fit.registry;
  registry.anchor_file = "anchors.jsonl";
  save_registry(out / "registry.json", registry);
  save_anchors_jsonl(out / "anchors.jsonl", fit.router);
  std::vector<std::string> outputs{"registry.json", "anchors.jsonl"};
  for (const auto& [id, sr] : fit.searches) {
    const std::string name = "traces/domain_" + std::to_string(id) + ".csv";
    save_trace_csv(out / name, sr.trace);
    outputs.push_back(name);
  }
  outputs.push_back("manifest.json");
  json args = f.to_json();
  args["k_anchors"] = a.k_anchors;
  args["clusters"] = a.clusters;
  write_manifest(out, "search", c.seed, args,
                 {{"model_spec", a.model_spec}, {"corpora_dir", a.corpora_dir}}, outputs);

  for (std::size_t i = 0; i < registry.domains.size(); ++i) {
    const RegistryEntry& e = registry.domains[i];
    const auto it = fit.searches.find(e.id);
    std::printf("%-12s purity %.3f mask %s objective %s\n", e.name.c_str(), fit.cluster_purity[i],
                e.mask.to_bitstring().c_str(),
                it == fit.searches.end() ? "-" : std::to_string(it->second.best_objective).c_str());
  }
  for (const std::string& w : fit.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
}

struct StreamArgs {
  std::string model_spec;
  std::string corpora_dir;
  std::string registry;
  std::string anchors;
  std::string mode = "knn-ssd";
  double mix_ratio = 0.0;
  int stream_len = 20;
  bool no_timing = false;
};

void cmd_run_stream(const StreamArgs& a, const DecodeFlags& f, const Common& c) {
  require_file(a.model_spec, "model-spec");
  require_file(a.corpora_dir, "corpora-dir");
  const Model model(load_model_spec(a.model_spec));
  const std::vector<Corpus> corpora = load_corpora_dir(a.corpora_dir);

  StreamRunOptions opts;
  opts.mode = stream_mode_from_string(a.mode);
  opts.stream.mix_ratio = a.mix_ratio;
  opts.stream.num_domains = static_cast<int>(corpora.size());
  opts.stream.length = a.stream_len;
  opts.stream.seed = c.seed;
  opts.draft = f.draft();
  opts.max_new = f.max_new;
  opts.beta = f.beta;
  opts.objective = objective_mode_from_string(f.objective);
  opts.bo = f.bo(derive_seed(c.seed, 77));
  opts.search_samples = f.search_samples;
  opts.jobs = f.jobs;
  opts.timing = !a.no_timing;

  Registry registry;
  RouterModel router;
  std::string anchors_path;
  if (opts.mode != StreamMode::kVanilla) {
    require_file(a.registry, "registry");
    registry = load_registry(a.registry);
    anchors_path = !a.anchors.empty() ? a.anchors
                                      : (fs::path(a.registry).parent_path() / registry.anchor_file).string();
    require_file(anchors_path, "anchors");
    router = load_anchors_jsonl(anchors_path);
  }

  const StreamRunResult res = run_stream(model, registry, router, corpora, opts);

  const fs::path out(c.out_dir);
  save_run_records_jsonl(out / "stats.jsonl", res.records);
  save_stream_manifest(out / "stream.jsonl", res.items);
  std::string hidden;
  for (std::size_t i = 0; i < res.items.size(); ++i) {
    json row{{"prompt_id", res.items[i].prompt.id},
             {"domain", res.items[i].domain},
             {"routed", res.routed[i]},
             {"vector", res.hidden[i].values}};
    hidden += row.dump() + "\n";
  }
  write_text(out / "hidden.jsonl", hidden);
  write_text(out / "report.json", to_json(res.report).dump(2) + "\n");
  write_text(out / "report.csv", report_csv(res.report));
  std::vector<std::string> outputs{"stats.jsonl", "stream.jsonl", "hidden.jsonl", "report.json",
                                   "report.csv"};
  if (res.mixed_search) {
    save_trace_csv(out / "mixed_trace.csv", res.mixed_search->trace);
    outputs.push_back("mixed_trace.csv");
  }
  outputs.push_back("manifest.json");
  json args = f.to_json();
  args["mode"] = a.mode;
  args["mix_ratio"] = a.mix_ratio;
  args["stream_len"] = a.stream_len;
  args["timing"] = opts.timing && opts.jobs <= 1;
  write_manifest(out, "run-stream", c.seed, args,
                 {{"model_spec", a.model_spec},
                  {"corpora_dir", a.corpora_dir},
                  {"registry", a.registry},
                  {"anchors", anchors_path},
                  {"fingerprint", model_fingerprint(model.spec())}},
                 outputs);

  const SpeedupRow& o = res.report.overall;
  std::printf("%s r=%.2f items=%zu M=%.3f alpha=%.3f c=%.3f expected=%.3f analytic=%.3f measured=%.3f\n",
              a.mode.c_str(), a.mix_ratio, res.items.size(), o.mean_accepted_len,
              o.acceptance_rate, o.cost_coefficient, o.expected_speedup, o.analytic_speedup,
              o.measured_speedup);
}

struct Stat {
  double mean = 0.0;
  double stddev = 0.0;
};

// Sample standard deviation; zero for a single value.
Stat summarize(const std::vector<double>& xs) {
  Stat s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void cmd_report(const std::vector<std::string>& inputs, const Common& c) {
  std::vector<fs::path> stats_files, hidden_files;
  for (const std::string& in : inputs) {
    if (!fs::is_directory(in)) throw ValidationError("not a directory: " + in);
    for (const auto& e : fs::recursive_directory_iterator(in)) {
      if (!e.is_regular_file()) continue;
      if (e.path().filename() == "stats.jsonl") stats_files.push_back(e.path());
      if (e.path().filename() == "hidden.jsonl") hidden_files.push_back(e.path());
    }
  }
  std::sort(stats_files.begin(), stats_files.end());
  std::sort(hidden_files.begin(), hidden_files.end());

  std::vector<RunRecord> records;
  for (const fs::path& p : stats_files) {
    for (RunRecord& r : load_run_records_jsonl(p)) records.push_back(std::move(r));
  }
  if (records.empty()) throw ValidationError("no run records found");

  // (mode, mix ratio) -> seed -> records
  std::map<std::pair<std::string, double>, std::map<std::uint64_t, std::vector<RunRecord>>> groups;
  for (const RunRecord& r : records) groups[{r.mode, r.mix_ratio}][r.seed].push_back(r);

  const char* metrics[] = {"M", "alpha", "expected_speedup", "analytic_speedup", "measured_speedup"};
  std::string csv = "mode,mix_ratio,runs,records";
  for (const char* m : metrics) csv += std::string(",") + m + "_mean," + m + "_std";
  csv += "\n";
  json rows = json::array();
  for (const auto& [key, by_seed] : groups) {
    std::vector<std::vector<double>> values(std::size(metrics));
    int count = 0;
    json seeds = json::array();
    for (const auto& [seed, recs] : by_seed) {
      const SpeedupRow o = aggregate(recs).overall;
      const double v[] = {o.mean_accepted_len, o.acceptance_rate, o.expected_speedup,
                          o.analytic_speedup, o.measured_speedup};
      for (std::size_t m = 0; m < std::size(metrics); ++m) values[m].push_back(v[m]);
      count += static_cast<int>(recs.size());
      seeds.push_back(seed);
    }
    json row{{"mode", key.first}, {"mix_ratio", key.second}, {"runs", by_seed.size()},
             {"records", count}, {"seeds", seeds}};
    csv += key.first + "," + fmt(key.second) + "," + std::to_string(by_seed.size()) + "," +
           std::to_string(count);
    for (std::size_t m = 0; m < std::size(metrics); ++m) {
      const Stat s = summarize(values[m]);
      row[metrics[m]] = {{"mean", s.mean}, {"std", s.stddev}};
      csv += "," + fmt(s.mean) + "," + fmt(s.stddev);
    }
    csv += "\n";
    rows.push_back(std::move(row));
  }

  const fs::path out(c.out_dir);
  write_text(out / "summary.csv", csv);
  write_text(out / "summary.json", json{{"groups", rows}}.dump(2) + "\n");
  std::vector<std::string> outputs{"summary.csv", "summary.json"};

  // Projection of every distinct prompt's hidden vector.
  std::vector<std::vector<double>> vectors;
  std::vector<DomainId> domains;
  std::set<std::string> seen;
  for (const fs::path& p : hidden_files) {
    std::istringstream lines(read_text(p));
    std::string line;
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      if (!seen.insert(j.at("prompt_id").get<std::string>()).second) continue;
      vectors.push_back(j.at("vector").get<std::vector<double>>());
      domains.push_back(j.at("domain").get<DomainId>());
    }
  }
  if (vectors.size() >= 2) {
    save_projection_csv(out / "projection.csv", project_2d(vectors), domains);
    outputs.push_back("projection.csv");
  }
  outputs.push_back("manifest.json");
  std::vector<std::string> sources;
  for (const fs::path& p : stats_files) sources.push_back(p.string());
  write_manifest(out, "report", c.seed, {{"inputs", inputs}}, {{"stats_files", sources}}, outputs);
  std::printf("%zu records in %zu groups -> %s\n", records.size(), groups.size(),
              (out / "summary.csv").string().c_str());
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"knnssd: self-speculative decoding with nearest-neighbor mask routing"};
  app.require_subcommand(1);

  Common common;
  const auto add_common = [&](CLI::App* sub, bool out_required) {
    sub->add_option("--seed", common.seed, "Random seed");
    auto* o = sub->add_option("--out-dir", common.out_dir, "Output directory");
    if (out_required) o->required();
  };

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write a model spec and planted corpora");
  add_common(synth_cmd, true);
  synth_cmd->add_option("--model-spec", synth.model_spec, "Existing model spec to synthesize for");
  auto* domains_opt = synth_cmd->add_option("--domains", synth.domains, "Number of domains");
  synth_cmd->add_option("--per-domain", synth.per_domain, "Prompts per domain");
  synth_cmd->add_option("--backend", synth.backend)->check(CLI::IsMember({"planted", "tiny-transformer"}));
  synth_cmd->add_option("--num-blocks", synth.num_blocks);
  synth_cmd->add_option("--hidden-dim", synth.hidden_dim);
  synth_cmd->add_option("--vocab", synth.vocab);
  synth_cmd->add_option("--min-len", synth.min_len);
  synth_cmd->add_option("--max-len", synth.max_len);

  SearchArgs search_args;
  DecodeFlags search_flags;
  auto* search_cmd = app.add_subcommand("search", "Fit the router and search one mask per cluster");
  add_common(search_cmd, true);
  search_cmd->add_option("--model-spec", search_args.model_spec)->required();
  search_cmd->add_option("--corpora-dir", search_args.corpora_dir)->required();
  search_cmd->add_option("--k-anchors", search_args.k_anchors)->check(CLI::PositiveNumber);
  search_cmd->add_option("--clusters", search_args.clusters, "k-means k (default: one per corpus)");
  search_flags.add(*search_cmd);

  StreamArgs stream_args;
  DecodeFlags stream_flags;
  auto* stream_cmd = app.add_subcommand("run-stream", "Decode a mixed-domain stream");
  add_common(stream_cmd, true);
  stream_cmd->add_option("--model-spec", stream_args.model_spec)->required();
  stream_cmd->add_option("--corpora-dir", stream_args.corpora_dir)->required();
  stream_cmd->add_option("--registry", stream_args.registry);
  stream_cmd->add_option("--anchors", stream_args.anchors, "Defaults to the registry's anchor file");
  stream_cmd->add_option("--mode", stream_args.mode)
      ->check(CLI::IsMember({"vanilla", "ssd-fixed", "ssd-mixed", "knn-ssd"}));
  stream_cmd->add_option("--mix-ratio", stream_args.mix_ratio)->check(CLI::Range(0.0, 1.0));
  stream_cmd->add_option("--stream-len", stream_args.stream_len)->check(CLI::PositiveNumber);
  stream_cmd->add_flag("--no-timing", stream_args.no_timing, "Zero all wallclock fields");
  stream_flags.add(*stream_cmd);

  std::vector<std::string> report_inputs;
  auto* report_cmd = app.add_subcommand("report", "Merge run-stream outputs");
  add_common(report_cmd, true);
  report_cmd->add_option("--in", report_inputs, "Directories searched for stats.jsonl")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth_cmd) cmd_synth(synth, domains_opt->count() > 0, common);
    if (*search_cmd) cmd_search(search_args, search_flags, common);
    if (*stream_cmd) cmd_run_stream(stream_args, stream_flags, common);
    if (*report_cmd) cmd_report(report_inputs, common);
  } catch (const LosslessnessError& e) {
    std::cerr << "losslessness violation: " << e.what() << "\n";
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace knnssd
