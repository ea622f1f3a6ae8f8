#include "knnssd/router.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "knnssd/rng.hpp"

namespace knnssd {

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

int nearest_centroid(std::span<const double> v, const std::vector<std::vector<double>>& centroids,
                     double& dist) {
  int best = 0;
  dist = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = squared_distance(v, centroids[c]);
    if (d < dist) {
      dist = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

void RouterModel::validate() const {
  if (anchors.empty()) throw ValidationError("router has no anchors");
  const std::size_t dim = anchors.front().vector.values.size();
  for (const Anchor& a : anchors) {
    if (a.vector.values.size() != dim) throw ValidationError("anchor dimensions differ");
  }
  if (majority_vote && vote_k < 1) throw ValidationError("vote_k must be >= 1");
}

std::vector<DomainId> RouterModel::domains() const {
  std::set<DomainId> ids;
  for (const Anchor& a : anchors) ids.insert(a.domain);
  return {ids.begin(), ids.end()};
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("cosine_similarity: dimension mismatch");
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw ValidationError("cosine_similarity: zero-norm vector");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return dot / (na * nb);
}

DomainId classify(const RouterModel& router, const HiddenVector& v) {
  router.validate();
  if (v.values.size() != router.anchors.front().vector.values.size()) {
    throw ValidationError("query dimension does not match the anchors");
  }
  if (norm(v.values) == 0.0) throw ValidationError("cannot classify a zero-norm vector");

  struct Scored {
    double sim;
    DomainId domain;
    std::size_t index;
  };
  std::vector<Scored> scored;
  scored.reserve(router.anchors.size());
  for (std::size_t i = 0; i < router.anchors.size(); ++i) {
    const Anchor& a = router.anchors[i];
    scored.push_back({cosine_similarity(v.values, a.vector.values), a.domain, i});
  }
  const auto better = [](const Scored& a, const Scored& b) {
    if (a.sim != b.sim) return a.sim > b.sim;
    if (a.domain != b.domain) return a.domain < b.domain;
    return a.index < b.index;
  };
  if (!router.majority_vote) {
    return std::min_element(scored.begin(), scored.end(), better)->domain;
  }
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(router.vote_k), scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                    better);
  // Votes, then the best-ranked member, decide.
  std::map<DomainId, std::pair<int, std::size_t>> votes;
  for (std::size_t r = 0; r < k; ++r) {
    auto [it, inserted] = votes.try_emplace(scored[r].domain, 0, r);
    ++it->second.first;
  }
  const auto winner = std::max_element(votes.begin(), votes.end(), [](const auto& a, const auto& b) {
    if (a.second.first != b.second.first) return a.second.first < b.second.first;
    return a.second.second > b.second.second;
  });
  return winner->first;
}

namespace {

KMeansResult kmeans_once(const std::vector<std::vector<double>>& vectors, int k, Rng& rng,
                         int max_iters) {
  const std::size_t dim = vectors.front().size();
  const std::size_t n = vectors.size();
  KMeansResult result;
  result.centroids.push_back(vectors[rng.uniform_index(n)]);
  std::vector<double> d2(n);
  while (result.centroids.size() < static_cast<std::size_t>(k)) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest_centroid(vectors[i], result.centroids, d2[i]);
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      for (pick = 0; pick + 1 < n; ++pick) {
        r -= d2[pick];
        if (r < 0.0) break;
      }
      // Guard against rounding landing on an existing centroid.
      while (d2[pick] == 0.0 && pick > 0) --pick;
    } else {
      pick = rng.uniform_index(n);
    }
    result.centroids.push_back(vectors[pick]);
  }

  result.assignments.assign(n, -1);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
      const int c = nearest_centroid(vectors[i], result.centroids, dist[i]);
      inertia += dist[i];
      if (c != result.assignments[i]) {
        result.assignments[i] = c;
        changed = true;
      }
    }
    result.inertia_history.push_back(inertia);
    result.iterations = iter + 1;
    if (!changed) break;

    std::vector<std::vector<double>> sums(static_cast<std::size_t>(k), std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(result.assignments[i]);
      ++counts[c];
      for (std::size_t j = 0; j < dim; ++j) sums[c][j] += vectors[i][j];
    }
    for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
      if (counts[c] == 0) {
        // Re-seed an empty cluster at the worst-served point.
        const auto far = static_cast<std::size_t>(
            std::max_element(dist.begin(), dist.end()) - dist.begin());
        result.centroids[c] = vectors[far];
        dist[far] = 0.0;
        continue;
      }
      for (std::size_t j = 0; j < dim; ++j) {
        result.centroids[c][j] = sums[c][j] / static_cast<double>(counts[c]);
      }
    }
  }
  return result;
}

}  // namespace

KMeansResult kmeans(const std::vector<std::vector<double>>& vectors, int k, std::uint64_t seed,
                    int max_iters, int restarts) {
  if (k < 1) throw ValidationError("kmeans needs k >= 1");
  if (vectors.size() < static_cast<std::size_t>(k)) {
    throw ValidationError("kmeans: fewer vectors than clusters");
  }
  if (max_iters < 1) throw ValidationError("kmeans needs max_iters >= 1");
  if (restarts < 1) throw ValidationError("kmeans needs restarts >= 1");
  const std::size_t dim = vectors.front().size();
  for (const auto& v : vectors) {
    if (v.size() != dim) throw ValidationError("kmeans: vector dimensions differ");
  }
  KMeansResult best;
  for (int r = 0; r < restarts; ++r) {
    Rng rng(derive_seed(seed, 21 + static_cast<std::uint64_t>(r)));
    KMeansResult run = kmeans_once(vectors, k, rng, max_iters);
    if (r == 0 || run.inertia_history.back() < best.inertia_history.back()) best = std::move(run);
  }
  return best;
}

std::vector<Anchor> select_anchors(std::span<const HiddenVector> cluster,
                                   std::span<const double> centroid, int k, DomainId domain) {
  if (k < 1) throw ValidationError("select_anchors needs k >= 1");
  if (cluster.size() < static_cast<std::size_t>(k)) {
    throw ValidationError("cluster has fewer members than requested anchors");
  }
  std::vector<Anchor> all;
  all.reserve(cluster.size());
  for (const HiddenVector& v : cluster) {
    if (v.values.size() != centroid.size()) {
      throw ValidationError("select_anchors: dimension mismatch");
    }
    all.push_back({v, domain, std::sqrt(squared_distance(v.values, centroid))});
  }
  std::stable_sort(all.begin(), all.end(), [](const Anchor& a, const Anchor& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.vector.source_prompt_id < b.vector.source_prompt_id;
  });
  all.resize(static_cast<std::size_t>(k));
  return all;
}

const RegistryEntry* Registry::find(DomainId id) const {
  for (const RegistryEntry& e : domains) {
    if (e.id == id) return &e;
  }
  return nullptr;
}

std::string model_fingerprint(const ModelSpec& spec) {
  std::ostringstream canon;
  canon << to_string(spec.backend) << ';' << spec.num_blocks << ';' << spec.hidden_dim << ';'
        << spec.vocab_size << ';' << spec.seed << ';' << spec.num_domains << ';'
        << spec.shared_band << ';' << spec.max_positions << ';'
        << (spec.eos_token ? std::to_string(*spec.eos_token) : "none") << ';';
  for (const auto& [d, sublayers] : spec.planted_gates) {
    canon << d << ':';
    for (int s : sublayers) canon << s << ',';
    canon << '|';
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%016llx-L%d",
                static_cast<unsigned long long>(fnv1a(canon.str())), spec.num_sublayers());
  return buf;
}

SkipMask route(const Registry& registry, const RouterModel& router, const HiddenVector& v,
               const Model& serving_model) {
  if (registry.fingerprint != model_fingerprint(serving_model.spec())) {
    throw ValidationError("registry fingerprint does not match the serving model");
  }
  const DomainId domain = classify(router, v);
  const RegistryEntry* entry = registry.find(domain);
  if (!entry) throw ValidationError("domain " + std::to_string(domain) + " is not registered");
  if (entry->mask.size() != serving_model.num_sublayers()) {
    throw ValidationError("registry fingerprint mismatch: mask length " +
                          std::to_string(entry->mask.size()) + " for a model with " +
                          std::to_string(serving_model.num_sublayers()) + " sublayers");
  }
  return entry->mask;
}

FitResult fit_router(const Model& model, const std::vector<Corpus>& corpora,
                     const FitOptions& options) {
  std::vector<const Prompt*> prompts;
  for (const Corpus& c : corpora) {
    for (const Prompt& p : c) prompts.push_back(&p);
  }
  if (corpora.empty() || prompts.empty()) throw ValidationError("fit_router needs a nonempty corpus");
  std::unordered_map<std::string, const Prompt*> by_id;
  for (const Prompt* p : prompts) {
    if (!by_id.emplace(p->id, p).second) throw ValidationError("duplicate prompt id " + p->id);
  }
  const int k = options.k_clusters > 0 ? options.k_clusters : static_cast<int>(corpora.size());

  std::vector<HiddenVector> hidden;
  std::vector<std::vector<double>> raw;
  hidden.reserve(prompts.size());
  for (const Prompt* p : prompts) {
    hidden.push_back(extract_last_hidden(model, p->tokens, p->id));
    raw.push_back(hidden.back().values);
  }
  const KMeansResult km =
      kmeans(raw, k, options.seed, options.kmeans_max_iters, options.kmeans_restarts);

  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    members[static_cast<std::size_t>(km.assignments[i])].push_back(i);
  }
  std::vector<DomainId> majority(static_cast<std::size_t>(k));
  std::vector<double> purity(static_cast<std::size_t>(k));
  std::set<DomainId> labels;
  for (const Prompt* p : prompts) labels.insert(p->domain);
  for (std::size_t c = 0; c < members.size(); ++c) {
    if (members[c].empty()) throw ValidationError("k-means produced an empty cluster");
    std::map<DomainId, int> counts;
    for (std::size_t i : members[c]) ++counts[prompts[i]->domain];
    const auto top = std::max_element(counts.begin(), counts.end(), [](const auto& a, const auto& b) {
      return a.second < b.second;
    });
    majority[c] = top->first;
    purity[c] = static_cast<double>(top->second) / static_cast<double>(members[c].size());
  }
  const bool bijective = std::set<DomainId>(majority.begin(), majority.end()).size() ==
                             majority.size() &&
                         labels.size() == majority.size();

  FitResult result;
  result.registry.fingerprint = model_fingerprint(model.spec());
  std::vector<std::size_t> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  const auto id_of = [&](std::size_t c) {
    return bijective ? majority[c] : static_cast<DomainId>(c);
  };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return id_of(a) < id_of(b); });

  for (std::size_t c : order) {
    const DomainId id = id_of(c);
    const DomainId label = majority[c];
    std::string name = static_cast<std::size_t>(label) < options.domain_names.size() && label >= 0
                           ? options.domain_names[static_cast<std::size_t>(label)]
                           : "domain-" + std::to_string(label);
    if (!bijective) name += "/c" + std::to_string(c);
    if (purity[c] < 1.0) {
      result.warnings.push_back("cluster " + std::to_string(c) + " (" + name + ") purity " +
                                std::to_string(purity[c]));
    }

    std::vector<HiddenVector> cluster;
    for (std::size_t i : members[c]) cluster.push_back(hidden[i]);
    int k_anchors = options.k_anchors;
    if (static_cast<int>(cluster.size()) < k_anchors) {
      result.warnings.push_back("cluster " + std::to_string(c) + " has only " +
                                std::to_string(cluster.size()) + " members");
      k_anchors = static_cast<int>(cluster.size());
    }
    std::vector<Anchor> anchors = select_anchors(cluster, km.centroids[c], k_anchors, id);

    SkipMask mask = SkipMask::none(model.num_sublayers());
    if (options.run_search) {
      ObjectiveSpec objective = options.objective;
      objective.anchor_samples.clear();
      const std::size_t samples =
          std::min(anchors.size(), static_cast<std::size_t>(std::max(1, options.search_samples)));
      for (std::size_t a = 0; a < samples; ++a) {
        objective.anchor_samples.push_back(by_id.at(anchors[a].vector.source_prompt_id)->tokens);
      }
      BOConfig bo = options.bo;
      bo.seed = derive_seed(options.bo.seed, static_cast<std::uint64_t>(id));
      SearchResult sr = search(model, objective, bo);
      mask = sr.best_mask;
      result.searches.emplace(id, std::move(sr));
    }

    result.registry.domains.push_back({id, name, std::move(mask), k_anchors});
    result.cluster_purity.push_back(purity[c]);
    for (Anchor& a : anchors) result.router.anchors.push_back(std::move(a));
  }
  return result;
}

}  // namespace knnssd
