#include "knnssd/io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace knnssd {

namespace {

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<json> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

void write_jsonl(const fs::path& path, const std::vector<json>& rows) {
  std::string out;
  for (const json& r : rows) {
    out += r.dump();
    out += '\n';
  }
  write_text(path, out);
}

json parse_file(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

template <typename T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw ValidationError(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad field '") + key + "': " + e.what());
  }
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << content;
}

json to_json(const ModelSpec& spec) {
  json j;
  j["backend"] = std::string(to_string(spec.backend));
  j["num_blocks"] = spec.num_blocks;
  j["hidden_dim"] = spec.hidden_dim;
  j["vocab_size"] = spec.vocab_size;
  j["seed"] = spec.seed;
  j["num_domains"] = spec.num_domains;
  j["shared_band"] = spec.shared_band;
  j["max_positions"] = spec.max_positions;
  j["eos_token"] = spec.eos_token ? json(*spec.eos_token) : json(nullptr);
  json gates = json::object();
  for (const auto& [d, sublayers] : spec.planted_gates) gates[std::to_string(d)] = sublayers;
  j["planted_gates"] = gates;
  j["sublayer_order"] = "even=attention,odd=mlp";
  return j;
}

ModelSpec model_spec_from_json(const json& j) {
  ModelSpec s;
  s.backend = backend_from_string(field<std::string>(j, "backend"));
  s.num_blocks = field<int>(j, "num_blocks");
  s.hidden_dim = field<int>(j, "hidden_dim");
  s.vocab_size = field<int>(j, "vocab_size");
  s.seed = field<std::uint64_t>(j, "seed");
  if (j.contains("num_domains")) s.num_domains = field<int>(j, "num_domains");
  if (j.contains("shared_band")) s.shared_band = field<int>(j, "shared_band");
  if (j.contains("max_positions")) s.max_positions = field<int>(j, "max_positions");
  if (j.contains("eos_token") && !j["eos_token"].is_null()) s.eos_token = field<Token>(j, "eos_token");
  if (j.contains("planted_gates")) {
    for (const auto& [key, value] : j["planted_gates"].items()) {
      DomainId d = 0;
      try {
        d = std::stoi(key);
      } catch (const std::exception&) {
        throw ValidationError("planted_gates key is not a domain index: " + key);
      }
      s.planted_gates[d] = value.get<std::vector<int>>();
    }
  }
  s.validate();
  return s;
}

void save_model_spec(const fs::path& path, const ModelSpec& spec) {
  write_text(path, to_json(spec).dump(2) + "\n");
}

ModelSpec load_model_spec(const fs::path& path) { return model_spec_from_json(parse_file(path)); }

void save_corpus_jsonl(const fs::path& path, const Corpus& corpus) {
  std::vector<json> rows;
  rows.reserve(corpus.size());
  for (const Prompt& p : corpus) {
    rows.push_back({{"prompt_id", p.id}, {"domain", p.domain}, {"tokens", p.tokens}});
  }
  write_jsonl(path, rows);
}

Corpus load_corpus_jsonl(const fs::path& path) {
  Corpus corpus;
  for (const json& r : read_jsonl(path)) {
    Prompt p;
    p.id = field<std::string>(r, "prompt_id");
    p.domain = field<DomainId>(r, "domain");
    p.tokens = field<std::vector<Token>>(r, "tokens");
    if (p.tokens.empty()) throw ValidationError("prompt " + p.id + " has no tokens");
    if (p.domain < 0) throw ValidationError("prompt " + p.id + " has a negative domain");
    corpus.push_back(std::move(p));
  }
  return corpus;
}

std::vector<Corpus> load_corpora_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ValidationError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Corpus> corpora;
  for (const fs::path& f : files) {
    for (Prompt& p : load_corpus_jsonl(f)) {
      const auto d = static_cast<std::size_t>(p.domain);
      if (corpora.size() <= d) corpora.resize(d + 1);
      corpora[d].push_back(std::move(p));
    }
  }
  if (corpora.empty()) throw ValidationError("no corpus files in " + dir.string());
  return corpora;
}

json to_json(const Registry& registry) {
  json j;
  j["fingerprint"] = registry.fingerprint;
  j["anchor_file"] = registry.anchor_file;
  json domains = json::array();
  for (const RegistryEntry& e : registry.domains) {
    domains.push_back({{"id", e.id},
                       {"name", e.name},
                       {"mask_bits", e.mask.to_bitstring()},
                       {"k_anchors", e.k_anchors}});
  }
  j["domains"] = domains;
  return j;
}

Registry registry_from_json(const json& j) {
  Registry r;
  r.fingerprint = field<std::string>(j, "fingerprint");
  if (j.contains("anchor_file")) r.anchor_file = field<std::string>(j, "anchor_file");
  for (const json& e : field<json>(j, "domains")) {
    RegistryEntry entry;
    entry.id = field<DomainId>(e, "id");
    entry.name = field<std::string>(e, "name");
    entry.mask = SkipMask::from_bitstring(field<std::string>(e, "mask_bits"));
    entry.k_anchors = field<int>(e, "k_anchors");
    r.domains.push_back(std::move(entry));
  }
  return r;
}

void save_registry(const fs::path& path, const Registry& registry) {
  write_text(path, to_json(registry).dump(2) + "\n");
}

Registry load_registry(const fs::path& path) { return registry_from_json(parse_file(path)); }

void save_anchors_jsonl(const fs::path& path, const RouterModel& router) {
  std::vector<json> rows;
  for (const Anchor& a : router.anchors) {
    rows.push_back({{"domain", a.domain},
                    {"prompt_id", a.vector.source_prompt_id},
                    {"vector", a.vector.values},
                    {"distance", a.distance}});
  }
  write_jsonl(path, rows);
}

RouterModel load_anchors_jsonl(const fs::path& path) {
  RouterModel router;
  for (const json& r : read_jsonl(path)) {
    Anchor a;
    a.domain = field<DomainId>(r, "domain");
    a.vector.source_prompt_id = field<std::string>(r, "prompt_id");
    a.vector.values = field<std::vector<double>>(r, "vector");
    if (r.contains("distance")) a.distance = field<double>(r, "distance");
    router.anchors.push_back(std::move(a));
  }
  router.validate();
  return router;
}

json to_json(const RunRecord& r) {
  return {{"prompt_id", r.prompt_id},
          {"domain", r.domain},
          {"mask_id", r.mask_id},
          {"M", r.stats.mean_accepted_length()},
          {"alpha", r.stats.acceptance_rate()},
          {"drafted", r.stats.drafted_tokens},
          {"accepted", r.stats.accepted_tokens},
          {"passes", r.stats.target_forward_passes},
          {"draft_ms", r.stats.draft_ms},
          {"verify_ms", r.stats.verify_ms},
          {"emitted", r.stats.emitted_tokens},
          {"vanilla_ms", r.vanilla_ms},
          {"analytic_cost", r.analytic_cost},
          {"vanilla_cost", r.vanilla_cost},
          {"cost_coefficient", r.cost_coefficient},
          {"mode", r.mode},
          {"mix_ratio", r.mix_ratio},
          {"seed", r.seed},
          {"position", r.position}};
}

RunRecord run_record_from_json(const json& j) {
  RunRecord r;
  r.prompt_id = field<std::string>(j, "prompt_id");
  r.domain = field<DomainId>(j, "domain");
  r.mask_id = field<std::string>(j, "mask_id");
  r.stats.drafted_tokens = field<std::int64_t>(j, "drafted");
  r.stats.accepted_tokens = field<std::int64_t>(j, "accepted");
  r.stats.target_forward_passes = field<std::int64_t>(j, "passes");
  r.stats.draft_ms = field<double>(j, "draft_ms");
  r.stats.verify_ms = field<double>(j, "verify_ms");
  r.stats.emitted_tokens = j.contains("emitted")
                               ? field<std::int64_t>(j, "emitted")
                               : r.stats.accepted_tokens + r.stats.target_forward_passes;
  if (j.contains("vanilla_ms")) r.vanilla_ms = field<double>(j, "vanilla_ms");
  if (j.contains("analytic_cost")) r.analytic_cost = field<double>(j, "analytic_cost");
  if (j.contains("vanilla_cost")) r.vanilla_cost = field<double>(j, "vanilla_cost");
  if (j.contains("cost_coefficient")) r.cost_coefficient = field<double>(j, "cost_coefficient");
  if (j.contains("mode")) r.mode = field<std::string>(j, "mode");
  if (j.contains("mix_ratio")) r.mix_ratio = field<double>(j, "mix_ratio");
  if (j.contains("seed")) r.seed = field<std::uint64_t>(j, "seed");
  if (j.contains("position")) r.position = field<int>(j, "position");
  return r;
}

void save_run_records_jsonl(const fs::path& path, const std::vector<RunRecord>& records) {
  std::vector<json> rows;
  rows.reserve(records.size());
  for (const RunRecord& r : records) rows.push_back(to_json(r));
  write_jsonl(path, rows);
}

std::vector<RunRecord> load_run_records_jsonl(const fs::path& path) {
  std::vector<RunRecord> records;
  for (const json& j : read_jsonl(path)) records.push_back(run_record_from_json(j));
  return records;
}

void save_trace_csv(const fs::path& path, const SearchTrace& trace) {
  std::string out = "iteration,objective,best,mask\n";
  for (const TraceEntry& e : trace) {
    out += std::to_string(e.iteration) + "," + fmt_double(e.objective) + "," +
           fmt_double(e.best_so_far) + "," + e.mask.to_bitstring() + "\n";
  }
  write_text(path, out);
}

void save_stream_manifest(const fs::path& path, const std::vector<StreamItem>& items) {
  std::vector<json> rows;
  rows.reserve(items.size());
  for (const StreamItem& it : items) {
    rows.push_back({{"position", it.position}, {"domain", it.domain}, {"prompt_id", it.prompt.id}});
  }
  write_jsonl(path, rows);
}

json to_json(const SpeedupRow& row) {
  return {{"label", row.label},
          {"records", row.records},
          {"drafted", row.drafted},
          {"accepted", row.accepted},
          {"passes", row.passes},
          {"emitted", row.emitted},
          {"M", row.mean_accepted_len},
          {"alpha", row.acceptance_rate},
          {"cost_coefficient", row.cost_coefficient},
          {"expected_speedup", row.expected_speedup},
          {"tokens_per_sec", row.tokens_per_sec},
          {"vanilla_tokens_per_sec", row.vanilla_tokens_per_sec},
          {"measured_speedup", row.measured_speedup},
          {"analytic_speedup", row.analytic_speedup},
          {"draft_ms", row.draft_ms},
          {"verify_ms", row.verify_ms},
          {"vanilla_ms", row.vanilla_ms}};
}

json to_json(const SpeedupReport& report) {
  json per_domain = json::array();
  for (const SpeedupRow& r : report.per_domain) per_domain.push_back(to_json(r));
  return {{"overall", to_json(report.overall)}, {"per_domain", per_domain}};
}

std::string report_csv(const SpeedupReport& report) {
  std::string out =
      "label,records,M,alpha,cost_coefficient,expected_speedup,tokens_per_sec,"
      "measured_speedup,analytic_speedup,draft_ms,verify_ms,vanilla_ms\n";
  const auto line = [&](const SpeedupRow& r) {
    out += r.label + "," + std::to_string(r.records) + "," + fmt_double(r.mean_accepted_len) + "," +
           fmt_double(r.acceptance_rate) + "," + fmt_double(r.cost_coefficient) + "," +
           fmt_double(r.expected_speedup) + "," + fmt_double(r.tokens_per_sec) + "," +
           fmt_double(r.measured_speedup) + "," + fmt_double(r.analytic_speedup) + "," +
           fmt_double(r.draft_ms) + "," + fmt_double(r.verify_ms) + "," + fmt_double(r.vanilla_ms) +
           "\n";
  };
  line(report.overall);
  for (const SpeedupRow& r : report.per_domain) line(r);
  return out;
}

void save_projection_csv(const fs::path& path, const std::vector<std::array<double, 2>>& coords,
                         const std::vector<DomainId>& domains) {
  if (coords.size() != domains.size()) throw ValidationError("projection/domain size mismatch");
  std::string out = "x,y,domain\n";
  for (std::size_t i = 0; i < coords.size(); ++i) {
    out += fmt_double(coords[i][0]) + "," + fmt_double(coords[i][1]) + "," +
           std::to_string(domains[i]) + "\n";
  }
  write_text(path, out);
}

}  // namespace knnssd
