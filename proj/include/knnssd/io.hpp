#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "knnssd/mask_search.hpp"
#include "knnssd/metrics.hpp"
#include "knnssd/model.hpp"
#include "knnssd/router.hpp"
#include "knnssd/stream.hpp"

namespace knnssd {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string read_text(const fs::path& path);
// Creates parent directories.
void write_text(const fs::path& path, const std::string& content);

json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const json& j);
void save_model_spec(const fs::path& path, const ModelSpec& spec);
ModelSpec load_model_spec(const fs::path& path);

// One {prompt_id, domain, tokens} object per line.
void save_corpus_jsonl(const fs::path& path, const Corpus& corpus);
Corpus load_corpus_jsonl(const fs::path& path);
// Reads every *.jsonl in the directory; result[d] holds domain d's prompts.
std::vector<Corpus> load_corpora_dir(const fs::path& dir);

json to_json(const Registry& registry);
Registry registry_from_json(const json& j);
void save_registry(const fs::path& path, const Registry& registry);
Registry load_registry(const fs::path& path);

// One {domain, prompt_id, vector, distance} object per line.
void save_anchors_jsonl(const fs::path& path, const RouterModel& router);
RouterModel load_anchors_jsonl(const fs::path& path);

json to_json(const RunRecord& record);
RunRecord run_record_from_json(const json& j);
void save_run_records_jsonl(const fs::path& path, const std::vector<RunRecord>& records);
std::vector<RunRecord> load_run_records_jsonl(const fs::path& path);

// iteration,objective,best,mask
void save_trace_csv(const fs::path& path, const SearchTrace& trace);

// One {position, domain, prompt_id} object per line.
void save_stream_manifest(const fs::path& path, const std::vector<StreamItem>& items);

json to_json(const SpeedupRow& row);
json to_json(const SpeedupReport& report);
std::string report_csv(const SpeedupReport& report);

// x,y,domain
void save_projection_csv(const fs::path& path, const std::vector<std::array<double, 2>>& coords,
                         const std::vector<DomainId>& domains);

}  // namespace knnssd
