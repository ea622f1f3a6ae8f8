#pragma once

#include <cmath>
#include <set>
#include <vector>

#include "knnssd/corpus.hpp"
#include "knnssd/model.hpp"
#include "knnssd/rng.hpp"

namespace knnssd::testing {

inline ModelSpec planted_spec(int hidden = 64, int domains = 5, std::uint64_t seed = 7) {
  ModelSpec s;
  s.backend = Backend::kPlanted;
  s.num_blocks = 8;
  s.hidden_dim = hidden;
  s.num_domains = domains;
  s.seed = seed;
  s.planted_gates = default_planted_gates(s.num_blocks, domains, seed);
  return s;
}

inline ModelSpec tiny_spec(int blocks = 4, int hidden = 32, std::uint64_t seed = 3) {
  ModelSpec s;
  s.backend = Backend::kTinyTransformer;
  s.num_blocks = blocks;
  s.hidden_dim = hidden;
  s.seed = seed;
  return s;
}

inline SkipMask random_mask(std::size_t n, Rng& rng, double p = 0.5) {
  std::vector<std::uint8_t> bits(n);
  for (auto& b : bits) b = rng.bernoulli(p) ? 1 : 0;
  return SkipMask(std::move(bits));
}

inline std::vector<Token> random_prompt(const ModelSpec& spec, int len, Rng& rng) {
  std::vector<Token> t(static_cast<std::size_t>(len));
  for (auto& x : t) x = static_cast<Token>(rng.uniform_index(static_cast<std::uint64_t>(spec.vocab_size)));
  return t;
}

struct Reference {
  std::vector<std::vector<double>> logits;
  std::vector<std::vector<double>> hidden;  // per position
};

// Straight full-sequence forward with no cache and no skipping. Written
// from the model's description, not from its code: pre-RMSNorm over content
// channels, single-head causal attention, tanh-GELU MLP, planted gates read
// from the indicator channels, band bonus on the logits.
inline Reference reference_forward(const Model& model, const std::vector<Token>& tokens) {
  const ModelSpec& spec = model.spec();
  const ModelWeights& w = model.weights();
  const int ind = spec.indicator_dim();
  const int dc = spec.content_dim();
  const int dm = spec.mlp_dim();
  const std::size_t n = tokens.size();
  const double scale = 32.0;

  std::vector<std::vector<double>> x(n, std::vector<double>(static_cast<std::size_t>(spec.hidden_dim)));
  for (std::size_t p = 0; p < n; ++p) {
    for (int c = 0; c < spec.hidden_dim; ++c) {
      x[p][static_cast<std::size_t>(c)] = w.embed(tokens[p], c) + w.positional(static_cast<int>(p), c);
    }
  }
  const auto rms = [&](const std::vector<double>& v) {
    std::vector<double> out(static_cast<std::size_t>(dc));
    double ss = 0.0;
    for (int c = 0; c < dc; ++c) ss += v[static_cast<std::size_t>(ind + c)] * v[static_cast<std::size_t>(ind + c)];
    const double inv = 1.0 / std::sqrt(ss / dc + 1e-6);
    for (int c = 0; c < dc; ++c) out[static_cast<std::size_t>(c)] = v[static_cast<std::size_t>(ind + c)] * inv;
    return out;
  };
  const auto mul = [](const Matrix& m, const std::vector<double>& v) {
    std::vector<double> out(static_cast<std::size_t>(m.rows), 0.0);
    for (int r = 0; r < m.rows; ++r) {
      for (int c = 0; c < m.cols; ++c) out[static_cast<std::size_t>(r)] += m(r, c) * v[static_cast<std::size_t>(c)];
    }
    return out;
  };
  const auto gate = [&](int sublayer, const std::vector<double>& v) {
    std::set<int> gated;
    for (const auto& [d, subs] : spec.planted_gates) {
      for (int s : subs) {
        if (s == sublayer) gated.insert(d);
      }
    }
    if (gated.empty()) return 1.0;
    double g = 0.0;
    for (int d = 0; d < spec.num_domains; ++d) {
      if (!gated.count(d)) g += v[static_cast<std::size_t>(d)] / scale;
    }
    return g;
  };

  for (int b = 0; b < spec.num_blocks; ++b) {
    const BlockWeights& bw = w.blocks[static_cast<std::size_t>(b)];
    std::vector<std::vector<double>> q(n), k(n), v(n);
    for (std::size_t p = 0; p < n; ++p) {
      const auto h = rms(x[p]);
      q[p] = mul(bw.wq, h);
      k[p] = mul(bw.wk, h);
      v[p] = mul(bw.wv, h);
    }
    for (std::size_t p = 0; p < n; ++p) {
      std::vector<double> s(p + 1);
      double mx = -INFINITY;
      for (std::size_t j = 0; j <= p; ++j) {
        double dot = 0.0;
        for (int c = 0; c < dc; ++c) dot += q[p][static_cast<std::size_t>(c)] * k[j][static_cast<std::size_t>(c)];
        s[j] = dot / std::sqrt(static_cast<double>(dc));
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (double& e : s) z += (e = std::exp(e - mx));
      std::vector<double> mixed(static_cast<std::size_t>(dc), 0.0);
      for (std::size_t j = 0; j <= p; ++j) {
        for (int c = 0; c < dc; ++c) mixed[static_cast<std::size_t>(c)] += s[j] / z * v[j][static_cast<std::size_t>(c)];
      }
      const auto delta = mul(bw.wo, mixed);
      const double g = gate(2 * b, x[p]);
      for (int c = 0; c < dc; ++c) x[p][static_cast<std::size_t>(ind + c)] += g * delta[static_cast<std::size_t>(c)];
    }
    for (std::size_t p = 0; p < n; ++p) {
      auto hid = mul(bw.w1, rms(x[p]));
      for (int i = 0; i < dm; ++i) {
        const double a = hid[static_cast<std::size_t>(i)] + bw.b1[static_cast<std::size_t>(i)];
        hid[static_cast<std::size_t>(i)] =
            0.5 * a * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (a + 0.044715 * a * a * a)));
      }
      const auto delta = mul(bw.w2, hid);
      const double g = gate(2 * b + 1, x[p]);
      for (int c = 0; c < dc; ++c) x[p][static_cast<std::size_t>(ind + c)] += g * delta[static_cast<std::size_t>(c)];
    }
  }

  Reference ref;
  const VocabLayout layout = spec.layout();
  for (std::size_t p = 0; p < n; ++p) {
    auto l = mul(w.unembed, rms(x[p]));
    if (ind > 0) {
      for (Token t = 0; t < spec.vocab_size; ++t) {
        const int band = layout.band_of(t);
        if (band >= 0) l[static_cast<std::size_t>(t)] += 64.0 * x[p][static_cast<std::size_t>(band)] / scale;
      }
    }
    ref.logits.push_back(std::move(l));
    ref.hidden.push_back(x[p]);
  }
  return ref;
}

}  // namespace knnssd::testing
