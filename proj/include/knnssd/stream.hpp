#pragma once

#include <cstdint>
#include <vector>

#include "knnssd/rng.hpp"
#include "knnssd/types.hpp"

namespace knnssd {

enum class InitialDomain { kUniform, kFixed };

struct StreamConfig {
  // Probability that the next item comes from a different domain.
  double mix_ratio = 0.0;
  int num_domains = 1;
  int length = 0;
  std::uint64_t seed = 0;
  InitialDomain initial = InitialDomain::kUniform;
  DomainId fixed_initial = 0;
  // Throw when a visited domain has an empty corpus instead of skipping.
  bool strict = false;

  void validate() const;
};

struct StreamItem {
  int position = 0;
  DomainId domain = 0;
  Prompt prompt;
};

// Stays with probability 1 - r, otherwise moves uniformly to one of the
// other N - 1 domains.
DomainId next_domain(DomainId current, const StreamConfig& cfg, Rng& rng);

// corpora[d] holds domain d's prompts. Within a domain prompts are drawn
// without replacement until exhausted, then with replacement.
std::vector<StreamItem> generate_stream(const StreamConfig& cfg, const std::vector<Corpus>& corpora);

}  // namespace knnssd
