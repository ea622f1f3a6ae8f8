#include "knnssd/corpus.hpp"

#include <cstdio>

#include "knnssd/rng.hpp"

namespace knnssd {

Corpus synth_corpus(const VocabLayout& layout, DomainId domain, int n, std::uint64_t seed,
                    const CorpusOptions& options) {
  if (n < 1) throw ValidationError("synth_corpus needs n >= 1");
  if (options.min_length < 1 || options.max_length < options.min_length) {
    throw ValidationError("invalid prompt length range");
  }
  const auto [first, last] = layout.domain_band(domain);
  if (last <= first) throw ValidationError("domain band is empty");

  Rng rng(derive_seed(seed, 1000 + static_cast<std::uint64_t>(domain)));
  const auto span = static_cast<std::uint64_t>(options.max_length - options.min_length + 1);
  Corpus corpus;
  corpus.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Prompt p;
    char id[32];
    std::snprintf(id, sizeof id, "d%d-%05d", domain, i);
    p.id = id;
    p.domain = domain;
    const int length = options.min_length + static_cast<int>(rng.uniform_index(span));
    p.tokens.reserve(static_cast<std::size_t>(length));
    for (int t = 0; t < length; ++t) {
      const bool shared = t + 1 < length && layout.shared_band > 0 &&
                          rng.bernoulli(options.shared_fraction);
      if (shared) {
        p.tokens.push_back(static_cast<Token>(
            rng.uniform_index(static_cast<std::uint64_t>(layout.shared_band))));
      } else {
        p.tokens.push_back(first + static_cast<Token>(
                                       rng.uniform_index(static_cast<std::uint64_t>(last - first))));
      }
    }
    corpus.push_back(std::move(p));
  }
  return corpus;
}

}  // namespace knnssd
