#pragma once

#include <optional>
#include <string>
#include <vector>

#include "knnssd/mask_search.hpp"
#include "knnssd/metrics.hpp"
#include "knnssd/model.hpp"
#include "knnssd/router.hpp"
#include "knnssd/stream.hpp"

namespace knnssd {

enum class StreamMode { kVanilla, kSsdFixed, kSsdMixed, kKnnSsd };

std::string_view to_string(StreamMode mode);
StreamMode stream_mode_from_string(std::string_view name);

struct StreamRunOptions {
  StreamMode mode = StreamMode::kKnnSsd;
  StreamConfig stream;
  DraftConfig draft;
  int max_new = 32;
  double beta = 1.0;
  // ssd-mixed only: the pooled search.
  ObjectiveMode objective = ObjectiveMode::kAnalytic;
  BOConfig bo;
  // Anchor prompts per domain in the pooled search.
  int search_samples = 8;
  // > 1 shards items over threads and turns timing off.
  int jobs = 1;
  bool timing = true;
};

struct StreamRunResult {
  std::vector<StreamItem> items;
  std::vector<RunRecord> records;
  // Full-model last hidden vector of each item's prompt.
  std::vector<HiddenVector> hidden;
  std::vector<DomainId> routed;
  std::vector<std::vector<Token>> outputs;
  std::optional<SearchResult> mixed_search;
  SpeedupReport report;
};

// Stream -> per-item mask -> speculative decode -> paired vanilla decode.
// Throws LosslessnessError when any item's output differs from vanilla.
StreamRunResult run_stream(const Model& model, const Registry& registry,
                           const RouterModel& router, const std::vector<Corpus>& corpora,
                           const StreamRunOptions& options);

// Entry point of the knnssd tool. Returns the process exit code:
// 0 ok, 2 bad input, 3 losslessness violation.
int run_cli(int argc, char** argv);

}  // namespace knnssd
