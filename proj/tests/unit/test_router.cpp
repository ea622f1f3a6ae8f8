#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "fixtures.hpp"
#include "knnssd/corpus.hpp"
#include "knnssd/router.hpp"
#include "oracles.hpp"

using namespace knnssd;
using namespace knnssd::testing;

namespace {

Anchor anchor(std::vector<double> v, DomainId d, std::string id = {}) {
  return {{std::move(v), std::move(id)}, d, 0.0};
}

std::vector<Corpus> planted_corpora(const ModelSpec& spec, int per_domain, std::uint64_t seed,
                                    int domains = -1) {
  std::vector<Corpus> out;
  for (int d = 0; d < (domains < 0 ? spec.num_domains : domains); ++d) {
    out.push_back(synth_corpus(spec.layout(), d, per_domain, derive_seed(seed, d)));
  }
  return out;
}

// Fraction of members sharing the cluster's majority label, worst cluster.
double min_purity(const std::vector<int>& assign, const std::vector<int>& labels, int k) {
  double worst = 1.0;
  for (int c = 0; c < k; ++c) {
    std::map<int, int> counts;
    int n = 0;
    for (std::size_t i = 0; i < assign.size(); ++i) {
      if (assign[i] == c) {
        ++counts[labels[i]];
        ++n;
      }
    }
    int top = 0;
    for (const auto& [l, cnt] : counts) top = std::max(top, cnt);
    if (n > 0) worst = std::min(worst, static_cast<double>(top) / n);
  }
  return worst;
}

}  // namespace

TEST(Cosine, Basics) {
  const std::vector<double> a{1, 0}, b{0, 2}, c{3, 0};
  EXPECT_DOUBLE_EQ(cosine_similarity(a, b), 0.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(a, c), 1.0);
}

TEST(Classify, ExactAndScaledAnchors) {
  RouterModel r;
  r.anchors = {anchor({1, 0.2, 0}, 0), anchor({0, 1, 0.3}, 1), anchor({0.1, 0, 1}, 2)};
  for (const Anchor& a : r.anchors) {
    EXPECT_EQ(classify(r, a.vector), a.domain);
    HiddenVector twice = a.vector;
    for (double& x : twice.values) x *= 2.0;
    EXPECT_EQ(classify(r, twice), a.domain);
  }
}

TEST(Classify, TiesGoToSmallerDomain) {
  RouterModel r;
  r.anchors = {anchor({0, 1}, 3), anchor({1, 0}, 1), anchor({1, 0}, 0)};
  EXPECT_EQ(classify(r, {{1, 1}, ""}), 0);
}

TEST(Classify, MajorityVote) {
  RouterModel r;
  r.anchors = {anchor({1, 0}, 0), anchor({0.9, 0.5}, 1), anchor({0.9, 0.55}, 1)};
  EXPECT_EQ(classify(r, {{1, 0.05}, ""}), 0);
  r.majority_vote = true;
  EXPECT_EQ(classify(r, {{1, 0.05}, ""}), 1);
}

TEST(Classify, Errors) {
  RouterModel r;
  EXPECT_THROW(classify(r, {{1, 0}, ""}), ValidationError);
  r.anchors = {anchor({1, 0}, 0)};
  EXPECT_THROW(classify(r, {{0, 0}, ""}), ValidationError);
  EXPECT_THROW(classify(r, {{1, 0, 0}, ""}), ValidationError);
  r.anchors.push_back(anchor({1, 0, 0}, 1));
  EXPECT_THROW(r.validate(), ValidationError);
}

TEST(KMeans, TwoPairs) {
  const std::vector<std::vector<double>> v{{0, 0}, {0, 1}, {10, 0}, {10, 1}};
  const auto r = kmeans(v, 2, 1);
  EXPECT_EQ(r.assignments[0], r.assignments[1]);
  EXPECT_EQ(r.assignments[2], r.assignments[3]);
  EXPECT_NE(r.assignments[0], r.assignments[2]);
  const auto& c0 = r.centroids[static_cast<std::size_t>(r.assignments[0])];
  const auto& c1 = r.centroids[static_cast<std::size_t>(r.assignments[2])];
  EXPECT_EQ(c0, (std::vector<double>{0, 0.5}));
  EXPECT_EQ(c1, (std::vector<double>{10, 0.5}));
}

TEST(KMeans, InertiaNonIncreasingAndDeterministic) {
  Rng rng(2);
  std::vector<std::vector<double>> v(200, std::vector<double>(5));
  for (auto& x : v) {
    for (double& e : x) e = rng.normal();
  }
  const auto a = kmeans(v, 6, 3);
  for (std::size_t i = 1; i < a.inertia_history.size(); ++i) {
    EXPECT_LE(a.inertia_history[i], a.inertia_history[i - 1] + 1e-9);
  }
  const auto b = kmeans(v, 6, 3);
  EXPECT_EQ(a.assignments, b.assignments);
  const auto multi = kmeans(v, 6, 3, 100, 5);
  EXPECT_LE(multi.inertia_history.back(), a.inertia_history.back() + 1e-9);
}

TEST(KMeans, Errors) {
  const std::vector<std::vector<double>> v{{0}, {1}};
  EXPECT_THROW(kmeans(v, 3, 0), ValidationError);
  EXPECT_THROW(kmeans(v, 0, 0), ValidationError);
  EXPECT_THROW(kmeans(v, 1, 0, 100, 0), ValidationError);
}

TEST(KMeans, PlantedDomainsArePure) {
  const Model m(planted_spec());
  std::vector<std::vector<double>> v;
  std::vector<int> labels;
  for (const Corpus& c : planted_corpora(m.spec(), 200, 5)) {
    for (const Prompt& p : c) {
      v.push_back(extract_last_hidden(m, p.tokens).values);
      labels.push_back(p.domain);
    }
  }
  const auto r = kmeans(v, 5, 1, 100, 10);
  EXPECT_EQ(min_purity(r.assignments, labels, 5), 1.0);
}

TEST(KMeans, SevenBandCorpusIsPure) {
  ModelSpec spec = planted_spec(64, 7);
  const Model m(spec);
  std::vector<std::vector<double>> v;
  std::vector<int> labels;
  for (const Corpus& c : planted_corpora(spec, 60, 8)) {
    for (const Prompt& p : c) {
      v.push_back(extract_last_hidden(m, p.tokens).values);
      labels.push_back(p.domain);
    }
  }
  const auto r = kmeans(v, 7, 2, 100, 10);
  EXPECT_EQ(min_purity(r.assignments, labels, 7), 1.0);
}

TEST(SelectAnchors, MatchesExhaustiveSubsets) {
  Rng rng(3);
  for (int inst = 0; inst < 20; ++inst) {
    const int n = 3 + static_cast<int>(rng.uniform_index(8));
    const int k = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n)));
    std::vector<HiddenVector> cluster;
    std::vector<std::vector<double>> raw;
    std::vector<std::string> ids;
    for (int i = 0; i < n; ++i) {
      std::vector<double> x(3);
      for (double& e : x) e = rng.normal();
      ids.push_back("p" + std::to_string(i));
      cluster.push_back({x, ids.back()});
      raw.push_back(x);
    }
    const std::vector<double> centroid{rng.normal(), rng.normal(), rng.normal()};
    const auto got = select_anchors(cluster, centroid, k, 4);
    std::vector<std::string> got_ids;
    for (const Anchor& a : got) {
      EXPECT_EQ(a.domain, 4);
      got_ids.push_back(a.vector.source_prompt_id);
    }
    std::sort(got_ids.begin(), got_ids.end());
    EXPECT_EQ(got_ids, brute_force_anchor_ids(raw, ids, centroid, k));
  }
}

TEST(SelectAnchors, WholeClusterAndTies) {
  const std::vector<HiddenVector> cluster{{{1, 0}, "c"}, {{0, 1}, "a"}, {{-1, 0}, "b"}, {{0, 3}, "d"}};
  const std::vector<double> centroid{0, 0};
  const auto all = select_anchors(cluster, centroid, 4, 0);
  EXPECT_EQ(all.size(), 4u);
  EXPECT_EQ(all.back().vector.source_prompt_id, "d");
  const auto two = select_anchors(cluster, centroid, 2, 0);
  EXPECT_EQ(two[0].vector.source_prompt_id, "a");
  EXPECT_EQ(two[1].vector.source_prompt_id, "b");
  EXPECT_DOUBLE_EQ(two[0].distance, 1.0);
  EXPECT_THROW(select_anchors(cluster, centroid, 5, 0), ValidationError);
}

TEST(Router, HeldOutPlantedVectorsAllCorrect) {
  const Model m(planted_spec());
  FitOptions fo;
  fo.run_search = false;
  fo.seed = 4;
  const FitResult fit = fit_router(m, planted_corpora(m.spec(), 100, 1), fo);
  int wrong = 0;
  for (const Corpus& c : planted_corpora(m.spec(), 200, 99)) {
    for (const Prompt& p : c) wrong += classify(fit.router, extract_last_hidden(m, p.tokens)) != p.domain;
  }
  EXPECT_EQ(wrong, 0);
}

TEST(FitRouter, RegistryAndRouting) {
  const Model m(planted_spec(32));
  FitOptions fo;
  fo.k_anchors = 5;
  fo.search_samples = 2;
  fo.bo.iterations = 12;
  fo.bo.init_random_points = 6;
  fo.objective.max_new = 6;
  fo.domain_names = {"alpha", "beta", "gamma"};
  const auto corpora = planted_corpora(m.spec(), 30, 2, 3);
  const FitResult fit = fit_router(m, corpora, fo);
  ASSERT_EQ(fit.registry.domains.size(), 3u);
  EXPECT_EQ(fit.registry.fingerprint, model_fingerprint(m.spec()));
  for (int d = 0; d < 3; ++d) {
    const RegistryEntry& e = fit.registry.domains[static_cast<std::size_t>(d)];
    EXPECT_EQ(e.id, d);
    EXPECT_EQ(e.name, fo.domain_names[static_cast<std::size_t>(d)]);
    EXPECT_EQ(e.k_anchors, 5);
    EXPECT_EQ(e.mask, fit.searches.at(d).best_mask);
    EXPECT_EQ(fit.cluster_purity[static_cast<std::size_t>(d)], 1.0);
    const auto v = extract_last_hidden(m, corpora[static_cast<std::size_t>(d)][3].tokens);
    EXPECT_EQ(route(fit.registry, fit.router, v, m), e.mask);
  }
  EXPECT_EQ(fit.router.anchors.size(), 15u);
  EXPECT_TRUE(fit.warnings.empty());

  // A band never seen while fitting still routes somewhere.
  for (const Prompt& p : synth_corpus(m.spec().layout(), 4, 10, 7)) {
    const SkipMask mask = route(fit.registry, fit.router, extract_last_hidden(m, p.tokens), m);
    EXPECT_NE(fit.registry.find(classify(fit.router, extract_last_hidden(m, p.tokens))), nullptr);
    EXPECT_EQ(mask.size(), 16u);
  }
}

TEST(FitRouter, SingleDomainRoutesConstantly) {
  const Model m(planted_spec(32));
  FitOptions fo;
  fo.run_search = false;
  const auto corpora = planted_corpora(m.spec(), 20, 3, 1);
  const FitResult fit = fit_router(m, corpora, fo);
  ASSERT_EQ(fit.registry.domains.size(), 1u);
  for (const Prompt& p : synth_corpus(m.spec().layout(), 3, 5, 1)) {
    EXPECT_EQ(route(fit.registry, fit.router, extract_last_hidden(m, p.tokens), m),
              SkipMask::none(16));
  }
}

TEST(FitRouter, MoreClustersThanCorporaUseClusterIds) {
  const Model m(planted_spec(32));
  FitOptions fo;
  fo.run_search = false;
  fo.k_clusters = 4;
  fo.k_anchors = 3;
  const FitResult fit = fit_router(m, planted_corpora(m.spec(), 20, 4, 2), fo);
  ASSERT_EQ(fit.registry.domains.size(), 4u);
  for (int c = 0; c < 4; ++c) EXPECT_EQ(fit.registry.domains[static_cast<std::size_t>(c)].id, c);
}

TEST(FitRouter, Errors) {
  const Model m(planted_spec(32));
  FitOptions fo;
  EXPECT_THROW(fit_router(m, {}, fo), ValidationError);
  auto corpora = planted_corpora(m.spec(), 5, 1, 2);
  corpora[1][0].id = corpora[0][0].id;
  fo.run_search = false;
  EXPECT_THROW(fit_router(m, corpora, fo), ValidationError);
}

TEST(Route, Mismatches) {
  const Model m(planted_spec(32));
  FitOptions fo;
  fo.run_search = false;
  const auto corpora = planted_corpora(m.spec(), 10, 1, 2);
  FitResult fit = fit_router(m, corpora, fo);
  const auto v = extract_last_hidden(m, corpora[0][0].tokens);

  const Model other(planted_spec(32, 5, 8));
  EXPECT_THROW(route(fit.registry, fit.router, v, other), ValidationError);

  Registry bad = fit.registry;
  bad.domains[0].mask = SkipMask::none(12);
  EXPECT_THROW(route(bad, fit.router, v, m), ValidationError);

  bad = fit.registry;
  bad.domains.erase(bad.domains.begin());
  EXPECT_THROW(route(bad, fit.router, v, m), ValidationError);
}

TEST(Fingerprint, SensitiveToSpec) {
  ModelSpec a = planted_spec(32);
  ModelSpec b = a;
  EXPECT_EQ(model_fingerprint(a), model_fingerprint(b));
  b.planted_gates[0].push_back(15);
  EXPECT_NE(model_fingerprint(a), model_fingerprint(b));
  b = a;
  b.num_blocks = 6;
  EXPECT_NE(model_fingerprint(a), model_fingerprint(b));
}
