#include "knnssd/stream.hpp"

#include <string>

namespace knnssd {

void StreamConfig::validate() const {
  if (!(mix_ratio >= 0.0 && mix_ratio <= 1.0)) throw ValidationError("mix_ratio must be in [0, 1]");
  if (num_domains < 1) throw ValidationError("num_domains must be >= 1");
  if (num_domains == 1 && mix_ratio > 0.0) {
    throw ValidationError("mix_ratio > 0 needs at least two domains");
  }
  if (length < 0) throw ValidationError("stream length must be >= 0");
  if (initial == InitialDomain::kFixed && (fixed_initial < 0 || fixed_initial >= num_domains)) {
    throw ValidationError("fixed initial domain out of range");
  }
}

DomainId next_domain(DomainId current, const StreamConfig& cfg, Rng& rng) {
  if (cfg.num_domains == 1 && cfg.mix_ratio > 0.0) {
    throw ValidationError("no other domain to switch to");
  }
  if (current < 0 || current >= cfg.num_domains) throw ValidationError("current domain out of range");
  if (!rng.bernoulli(cfg.mix_ratio)) return current;
  const auto offset = static_cast<DomainId>(
      rng.uniform_index(static_cast<std::uint64_t>(cfg.num_domains - 1)));
  return offset < current ? offset : offset + 1;
}

std::vector<StreamItem> generate_stream(const StreamConfig& cfg, const std::vector<Corpus>& corpora) {
  cfg.validate();
  if (corpora.size() < static_cast<std::size_t>(cfg.num_domains)) {
    throw ValidationError("corpora do not cover all stream domains");
  }
  std::vector<StreamItem> items;
  if (cfg.length == 0) return items;

  Rng rng(derive_seed(cfg.seed, 31));
  // Per-domain shuffled draw order; the cursor walks it once.
  std::vector<std::vector<std::size_t>> order(corpora.size());
  std::vector<std::size_t> cursor(corpora.size(), 0);
  for (std::size_t d = 0; d < corpora.size(); ++d) {
    order[d].resize(corpora[d].size());
    for (std::size_t i = 0; i < order[d].size(); ++i) order[d][i] = i;
    for (std::size_t i = order[d].size(); i > 1; --i) {
      std::swap(order[d][i - 1], order[d][rng.uniform_index(i)]);
    }
  }

  DomainId domain = cfg.initial == InitialDomain::kFixed
                        ? cfg.fixed_initial
                        : static_cast<DomainId>(rng.uniform_index(static_cast<std::uint64_t>(cfg.num_domains)));
  items.reserve(static_cast<std::size_t>(cfg.length));
  for (int pos = 0; pos < cfg.length; ++pos) {
    if (pos > 0) domain = next_domain(domain, cfg, rng);
    const auto d = static_cast<std::size_t>(domain);
    const Corpus& corpus = corpora[d];
    if (corpus.empty()) {
      if (cfg.strict) throw ValidationError("empty corpus for domain " + std::to_string(domain));
      continue;
    }
    std::size_t pick;
    if (cursor[d] < order[d].size()) {
      pick = order[d][cursor[d]++];
    } else {
      pick = rng.uniform_index(corpus.size());
    }
    items.push_back({pos, domain, corpus[pick]});
  }
  return items;
}

}  // namespace knnssd
