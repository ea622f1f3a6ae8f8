#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "knnssd/mask_search.hpp"
#include "knnssd/model.hpp"

namespace knnssd {

struct Anchor {
  HiddenVector vector;  // carries the source prompt id
  DomainId domain = 0;
  // Euclidean distance to the cluster centroid at selection time.
  double distance = 0.0;
};

// Labeled anchor set. Classification is 1-NN by cosine similarity over
// the pooled anchors unless majority_vote is on.
struct RouterModel {
  std::vector<Anchor> anchors;
  bool majority_vote = false;
  int vote_k = 3;

  // Throws ValidationError for an empty set or mixed dimensions.
  void validate() const;
  std::vector<DomainId> domains() const;
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Anchor with the highest cosine similarity; ties go to the smaller
// (domain, anchor index). Throws on a zero-norm query.
DomainId classify(const RouterModel& router, const HiddenVector& v);

struct KMeansResult {
  std::vector<int> assignments;
  std::vector<std::vector<double>> centroids;
  // Inertia after each assignment step.
  std::vector<double> inertia_history;
  int iterations = 0;
};

// k-means++ seeding followed by Lloyd iterations (Euclidean) until the
// assignment is a fixpoint or max_iters is reached. With restarts > 1 the
// run with the lowest final inertia wins (earliest on ties).
KMeansResult kmeans(const std::vector<std::vector<double>>& vectors, int k, std::uint64_t seed,
                    int max_iters = 100, int restarts = 1);

// The k members nearest to the centroid, ties by source prompt id.
std::vector<Anchor> select_anchors(std::span<const HiddenVector> cluster,
                                   std::span<const double> centroid, int k, DomainId domain);

struct RegistryEntry {
  DomainId id = 0;
  std::string name;
  SkipMask mask;
  int k_anchors = 0;
};

struct Registry {
  std::string fingerprint;
  std::vector<RegistryEntry> domains;
  std::string anchor_file;

  const RegistryEntry* find(DomainId id) const;
};

// Hash of the model spec plus its sublayer count.
std::string model_fingerprint(const ModelSpec& spec);

// Mask stored for classify(router, v). Throws ValidationError on a
// fingerprint mismatch, a wrong-length mask or an unregistered domain.
SkipMask route(const Registry& registry, const RouterModel& router, const HiddenVector& v,
               const Model& serving_model);

struct FitOptions {
  // <= 0 means one cluster per corpus.
  int k_clusters = 0;
  int k_anchors = 10;
  // Anchor prompts (nearest to the centroid first) used by the mask search.
  int search_samples = 8;
  int kmeans_max_iters = 100;
  int kmeans_restarts = 10;
  std::uint64_t seed = 0;
  bool run_search = true;
  BOConfig bo;
  // Template; anchor_samples is filled per cluster.
  ObjectiveSpec objective;
  // Optional display names per corpus.
  std::vector<std::string> domain_names;
};

struct FitResult {
  RouterModel router;
  Registry registry;
  std::map<DomainId, SearchResult> searches;
  // Per registry entry, in registry order.
  std::vector<double> cluster_purity;
  std::vector<std::string> warnings;
};

// Hidden vectors -> k-means -> majority labels -> anchors -> per-cluster
// mask search. Registry ids equal corpus indices when clusters map one to
// one onto corpora, otherwise they are cluster indices.
FitResult fit_router(const Model& model, const std::vector<Corpus>& corpora,
                     const FitOptions& options);

}  // namespace knnssd
