#pragma once

#include <cstdint>

#include "knnssd/model.hpp"
#include "knnssd/types.hpp"

namespace knnssd {

struct CorpusOptions {
  int min_length = 8;
  int max_length = 16;
  // Probability that a non-final token comes from the shared band.
  double shared_fraction = 0.2;
};

// n prompts over the domain's band plus the shared band. The final token
// is always from the domain's own band. Prompt ids are "d<domain>-<index>".
Corpus synth_corpus(const VocabLayout& layout, DomainId domain, int n, std::uint64_t seed,
                    const CorpusOptions& options = {});

}  // namespace knnssd
