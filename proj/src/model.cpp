#include "knnssd/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "knnssd/rng.hpp"

namespace knnssd {

namespace {

// Indicator channels hold exactly this value for the token's own band; a
// power of two keeps the gate arithmetic exact.
constexpr double kIndicatorScale = 32.0;
// Logit bonus for tokens in the band of the current position's indicator.
constexpr double kBandBias = 64.0;
constexpr double kRmsEps = 1e-6;

void rms_normalize(std::span<const double> in, std::vector<double>& out) {
  double sum_sq = 0.0;
  for (double v : in) sum_sq += v * v;
  const double inv = 1.0 / std::sqrt(sum_sq / static_cast<double>(in.size()) + kRmsEps);
  out.resize(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * inv;
}

// out = m * v
void matvec(const Matrix& m, std::span<const double> v, std::vector<double>& out) {
  out.assign(static_cast<std::size_t>(m.rows), 0.0);
  for (int r = 0; r < m.rows; ++r) {
    const double* row = m.row(r);
    // Four partial sums; fixed order, so results do not depend on batching.
    double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
    int c = 0;
    for (; c + 4 <= m.cols; c += 4) {
      a0 += row[c] * v[static_cast<std::size_t>(c)];
      a1 += row[c + 1] * v[static_cast<std::size_t>(c + 1)];
      a2 += row[c + 2] * v[static_cast<std::size_t>(c + 2)];
      a3 += row[c + 3] * v[static_cast<std::size_t>(c + 3)];
    }
    for (; c < m.cols; ++c) a0 += row[c] * v[static_cast<std::size_t>(c)];
    out[static_cast<std::size_t>(r)] = (a0 + a1) + (a2 + a3);
  }
}

double gelu(double x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(kC * (x + 0.044715 * x * x * x)));
}

void fill_normal(Matrix& m, Rng& rng, double stddev) {
  for (double& v : m.data) v = rng.normal() * stddev;
}

ModelWeights init_weights(const ModelSpec& spec) {
  const int hidden = spec.hidden_dim;
  const int ind = spec.indicator_dim();
  const int content = spec.content_dim();
  const int mlp = spec.mlp_dim();
  const VocabLayout layout = spec.layout();

  ModelWeights w;
  Rng embed_rng(derive_seed(spec.seed, 1));

  // Each domain band shares a content direction so prompts cluster by band.
  Matrix centers(spec.num_domains, content);
  fill_normal(centers, embed_rng, 0.3);
  w.embed = Matrix(spec.vocab_size, hidden);
  for (Token t = 0; t < spec.vocab_size; ++t) {
    const DomainId band = layout.band_of(t);
    double* row = w.embed.row(t);
    for (int c = 0; c < content; ++c) {
      const double noise = embed_rng.normal();
      row[ind + c] = band >= 0 ? centers(band, c) + noise : noise;
    }
    if (ind > 0 && band >= 0) row[band] = kIndicatorScale;
  }

  Rng pos_rng(derive_seed(spec.seed, 2));
  w.positional = Matrix(spec.max_positions, hidden);
  for (int p = 0; p < spec.max_positions; ++p) {
    for (int c = 0; c < content; ++c) w.positional(p, ind + c) = pos_rng.normal();
  }

  const double proj = 1.0 / std::sqrt(static_cast<double>(content));
  const double down = 1.0 / std::sqrt(static_cast<double>(mlp));
  w.blocks.resize(static_cast<std::size_t>(spec.num_blocks));
  for (int b = 0; b < spec.num_blocks; ++b) {
    Rng rng(derive_seed(spec.seed, 100 + static_cast<std::uint64_t>(b)));
    BlockWeights& bw = w.blocks[static_cast<std::size_t>(b)];
    bw.wq = Matrix(content, content);
    bw.wk = Matrix(content, content);
    bw.wv = Matrix(content, content);
    bw.wo = Matrix(content, content);
    bw.w1 = Matrix(mlp, content);
    bw.w2 = Matrix(content, mlp);
    fill_normal(bw.wq, rng, 2.0 * proj);
    fill_normal(bw.wk, rng, 2.0 * proj);
    fill_normal(bw.wv, rng, proj);
    fill_normal(bw.wo, rng, proj);
    fill_normal(bw.w1, rng, proj);
    bw.b1.resize(static_cast<std::size_t>(mlp));
    for (double& v : bw.b1) v = 0.1 * rng.normal();
    fill_normal(bw.w2, rng, 1.4 * down);
  }

  Rng out_rng(derive_seed(spec.seed, 3));
  w.unembed = Matrix(spec.vocab_size, content);
  fill_normal(w.unembed, out_rng, 3.0 * proj);
  return w;
}

void check_weights(const ModelSpec& spec, const ModelWeights& w) {
  const int content = spec.content_dim();
  const auto shape_ok = [](const Matrix& m, int r, int c) {
    return m.rows == r && m.cols == c && m.data.size() == static_cast<std::size_t>(r) * c;
  };
  bool ok = shape_ok(w.embed, spec.vocab_size, spec.hidden_dim) &&
            shape_ok(w.positional, spec.max_positions, spec.hidden_dim) &&
            shape_ok(w.unembed, spec.vocab_size, content) &&
            w.blocks.size() == static_cast<std::size_t>(spec.num_blocks);
  for (const BlockWeights& b : w.blocks) {
    ok = ok && shape_ok(b.wq, content, content) && shape_ok(b.wk, content, content) &&
         shape_ok(b.wv, content, content) && shape_ok(b.wo, content, content) &&
         shape_ok(b.w1, spec.mlp_dim(), content) && shape_ok(b.w2, content, spec.mlp_dim()) &&
         b.b1.size() == static_cast<std::size_t>(spec.mlp_dim());
  }
  if (!ok) throw ValidationError("model weights do not match the model spec");
}

}  // namespace

std::string_view to_string(Backend backend) {
  return backend == Backend::kPlanted ? "planted" : "tiny-transformer";
}

Backend backend_from_string(std::string_view name) {
  if (name == "planted") return Backend::kPlanted;
  if (name == "tiny-transformer") return Backend::kTinyTransformer;
  throw ValidationError("unknown backend: " + std::string(name));
}

std::pair<Token, Token> VocabLayout::domain_band(DomainId domain) const {
  if (domain < 0 || domain >= num_domains) {
    throw ValidationError("domain " + std::to_string(domain) + " outside vocabulary layout");
  }
  const Token first = shared_band + domain * band_width();
  return {first, first + band_width()};
}

DomainId VocabLayout::band_of(Token token) const {
  if (token < shared_band) return -1;
  const int band = (token - shared_band) / band_width();
  return band < num_domains ? band : -1;
}

void ModelSpec::validate() const {
  if (num_blocks < 1) throw ValidationError("num_blocks must be >= 1");
  if (num_domains < 1) throw ValidationError("num_domains must be >= 1");
  if (shared_band < 0) throw ValidationError("shared_band must be >= 0");
  if (vocab_size < shared_band + num_domains) {
    throw ValidationError("vocab_size too small for the band layout");
  }
  if (max_positions < 1) throw ValidationError("max_positions must be >= 1");
  if (content_dim() < 2) throw ValidationError("hidden_dim too small");
  if (eos_token && (*eos_token < 0 || *eos_token >= vocab_size)) {
    throw ValidationError("eos_token outside vocabulary");
  }
  if (backend == Backend::kTinyTransformer && !planted_gates.empty()) {
    throw ValidationError("planted_gates require the planted backend");
  }
  for (const auto& [domain, sublayers] : planted_gates) {
    if (domain < 0 || domain >= num_domains) {
      throw ValidationError("planted_gates references unknown domain " + std::to_string(domain));
    }
    for (int s : sublayers) {
      if (s < 0 || s >= num_sublayers()) {
        throw ValidationError("planted_gates references out-of-range sublayer " +
                              std::to_string(s));
      }
    }
  }
}

std::map<DomainId, std::vector<int>> default_planted_gates(int num_blocks, int num_domains,
                                                           std::uint64_t seed) {
  const int total = 2 * num_blocks;
  std::vector<int> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 7));
  const auto shuffle = [&rng](std::vector<int>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.uniform_index(i)]);
  };
  shuffle(order);
  // A quarter of the sublayers is gated for every domain, another quarter
  // per domain out of the rest. Per-domain sets may overlap but differ.
  const int common = std::max(1, total / 4);
  const std::vector<int> rest(order.begin() + std::min(common, total), order.end());
  const int specific = std::min(static_cast<int>(rest.size()), std::max(1, total / 4));

  std::map<DomainId, std::vector<int>> gates;
  std::set<std::vector<int>> used;
  for (DomainId d = 0; d < num_domains; ++d) {
    std::vector<int> set;
    for (int attempt = 0; attempt < 64; ++attempt) {
      std::vector<int> pool = rest;
      shuffle(pool);
      set.assign(order.begin(), order.begin() + std::min(common, total));
      set.insert(set.end(), pool.begin(), pool.begin() + specific);
      std::sort(set.begin(), set.end());
      if (!used.contains(set)) break;
    }
    used.insert(set);
    gates[d] = std::move(set);
  }
  return gates;
}

SkipMask::SkipMask(std::size_t num_sublayers) : bits_(num_sublayers, 0) {
  if (num_sublayers % 2 != 0) throw ValidationError("skip mask length must be even");
}

SkipMask::SkipMask(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  if (bits_.size() % 2 != 0) throw ValidationError("skip mask length must be even");
  for (auto& b : bits_) b = b ? 1 : 0;
}

SkipMask SkipMask::all(std::size_t num_sublayers) {
  SkipMask m(num_sublayers);
  for (auto& b : m.bits_) b = 1;
  return m;
}

SkipMask SkipMask::from_bitstring(std::string_view bits) {
  std::vector<std::uint8_t> out;
  out.reserve(bits.size());
  for (char c : bits) {
    if (c != '0' && c != '1') throw ValidationError("mask bitstring must contain only 0/1");
    out.push_back(c == '1' ? 1 : 0);
  }
  return SkipMask(std::move(out));
}

std::string SkipMask::to_bitstring() const {
  std::string s;
  s.reserve(bits_.size());
  for (auto b : bits_) s.push_back(b ? '1' : '0');
  return s;
}

std::size_t SkipMask::popcount() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1));
}

std::size_t SkipMask::skipped_attention() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < bits_.size(); i += 2) n += bits_[i];
  return n;
}

std::size_t SkipMask::skipped_mlp() const { return popcount() - skipped_attention(); }

double SkipMask::skip_ratio() const {
  return bits_.empty() ? 0.0 : static_cast<double>(popcount()) / static_cast<double>(size());
}

double SkipMask::attention_skip_ratio() const {
  return bits_.empty() ? 0.0
                       : static_cast<double>(skipped_attention()) / static_cast<double>(num_blocks());
}

double SkipMask::mlp_skip_ratio() const {
  return bits_.empty() ? 0.0
                       : static_cast<double>(skipped_mlp()) / static_cast<double>(num_blocks());
}

void KVCache::truncate(std::size_t new_length) {
  if (new_length >= tokens_.size()) return;
  tokens_.resize(new_length);
  const std::size_t width = new_length * static_cast<std::size_t>(content_dim_);
  for (auto& k : keys_) {
    if (!k.empty()) k.resize(width);
  }
  for (auto& v : values_) {
    if (!v.empty()) v.resize(width);
  }
}

void KVCache::clear() {
  bound_mask_.reset();
  tokens_.clear();
  keys_.clear();
  values_.clear();
}

Model::Model(ModelSpec spec) : Model(spec, (spec.validate(), init_weights(spec))) {}

Model::Model(ModelSpec spec, ModelWeights weights)
    : spec_(std::move(spec)), weights_(std::move(weights)) {
  spec_.validate();
  check_weights(spec_, weights_);
  identity_domains_.assign(num_sublayers(), {});
  for (const auto& [domain, sublayers] : spec_.planted_gates) {
    for (int s : sublayers) {
      auto& flags = identity_domains_[static_cast<std::size_t>(s)];
      if (flags.empty()) flags.assign(static_cast<std::size_t>(spec_.num_domains), 0);
      flags[static_cast<std::size_t>(domain)] = 1;
    }
  }
}

double Model::gate(std::size_t sublayer, std::span<const double> x) const {
  const auto& flags = identity_domains_[sublayer];
  if (flags.empty()) return 1.0;
  double g = 0.0;
  for (std::size_t d = 0; d < flags.size(); ++d) {
    if (!flags[d]) g += x[d] / kIndicatorScale;
  }
  return g;
}

ForwardOutput Model::forward(std::span<const Token> tokens, const SkipMask& mask,
                             KVCache& cache) const {
  if (mask.size() != num_sublayers()) {
    throw ValidationError("skip mask has length " + std::to_string(mask.size()) + ", model has " +
                          std::to_string(num_sublayers()) + " sublayers");
  }
  if (cache.bound_mask_ && *cache.bound_mask_ != mask) {
    throw ValidationError("KV cache was filled under a different skip mask");
  }
  const std::size_t cached = cache.length();
  if (tokens.size() <= cached) {
    throw ValidationError("forward needs at least one token beyond the cached prefix");
  }
  if (!std::equal(cache.tokens_.begin(), cache.tokens_.end(), tokens.begin())) {
    throw ValidationError("KV cache does not match the token prefix");
  }
  if (tokens.size() > static_cast<std::size_t>(spec_.max_positions)) {
    throw ValidationError("sequence exceeds max_positions");
  }
  for (std::size_t i = cached; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= spec_.vocab_size) {
      throw ValidationError("token id " + std::to_string(tokens[i]) + " outside vocabulary");
    }
  }

  if (!cache.bound_mask_) {
    cache.bound_mask_ = mask;
    cache.content_dim_ = spec_.content_dim();
    cache.keys_.assign(static_cast<std::size_t>(spec_.num_blocks), {});
    cache.values_.assign(static_cast<std::size_t>(spec_.num_blocks), {});
  }
  const std::size_t width = static_cast<std::size_t>(spec_.content_dim());
  for (std::size_t b = 0; b < cache.keys_.size(); ++b) {
    if (!mask.skips(2 * b) && cache.keys_[b].size() != cached * width) {
      throw ValidationError("KV cache length disagrees with its token prefix");
    }
  }

  ForwardOutput out;
  out.logits.reserve(tokens.size() - cached);
  std::vector<double> x;
  for (std::size_t p = cached; p < tokens.size(); ++p) {
    process_position(tokens[p], p, mask, cache, x);
    out.logits.push_back(readout(x));
  }
  out.last_hidden.values = std::move(x);
  return out;
}

void Model::process_position(Token token, std::size_t position, const SkipMask& mask,
                             KVCache& cache, std::vector<double>& x) const {
  const int hidden = spec_.hidden_dim;
  const std::size_t ind = static_cast<std::size_t>(spec_.indicator_dim());
  const std::size_t content = static_cast<std::size_t>(spec_.content_dim());

  x.assign(static_cast<std::size_t>(hidden), 0.0);
  const double* e = weights_.embed.row(token);
  const double* pe = weights_.positional.row(static_cast<int>(position));
  for (int c = 0; c < hidden; ++c) x[static_cast<std::size_t>(c)] = e[c] + pe[c];

  std::vector<double> normed, q, k, v, mixed, delta, hidden_act;
  std::vector<double> scores;
  const double scale = 1.0 / std::sqrt(static_cast<double>(content));

  for (std::size_t b = 0; b < static_cast<std::size_t>(spec_.num_blocks); ++b) {
    const BlockWeights& bw = weights_.blocks[b];
    const std::size_t attn = 2 * b;
    const std::size_t mlp = 2 * b + 1;

    if (!mask.skips(attn)) {
      std::span<const double> residual(x.data() + ind, content);
      rms_normalize(residual, normed);
      matvec(bw.wq, normed, q);
      matvec(bw.wk, normed, k);
      matvec(bw.wv, normed, v);
      auto& keys = cache.keys_[b];
      auto& values = cache.values_[b];
      keys.insert(keys.end(), k.begin(), k.end());
      values.insert(values.end(), v.begin(), v.end());

      const std::size_t n = position + 1;
      scores.resize(n);
      double max_score = -INFINITY;
      for (std::size_t j = 0; j < n; ++j) {
        const double* kj = keys.data() + j * content;
        double dot = 0.0;
        for (std::size_t c = 0; c < content; ++c) dot += q[c] * kj[c];
        scores[j] = dot * scale;
        max_score = std::max(max_score, scores[j]);
      }
      double denom = 0.0;
      for (double& s : scores) {
        s = std::exp(s - max_score);
        denom += s;
      }
      mixed.assign(content, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const double w = scores[j] / denom;
        const double* vj = values.data() + j * content;
        for (std::size_t c = 0; c < content; ++c) mixed[c] += w * vj[c];
      }
      matvec(bw.wo, mixed, delta);
      const double g = gate(attn, x);
      if (g != 0.0) {
        for (std::size_t c = 0; c < content; ++c) x[ind + c] += g * delta[c];
      }
    }

    if (!mask.skips(mlp)) {
      std::span<const double> residual(x.data() + ind, content);
      rms_normalize(residual, normed);
      matvec(bw.w1, normed, hidden_act);
      for (std::size_t i = 0; i < hidden_act.size(); ++i) {
        hidden_act[i] = gelu(hidden_act[i] + bw.b1[i]);
      }
      matvec(bw.w2, hidden_act, delta);
      const double g = gate(mlp, x);
      if (g != 0.0) {
        for (std::size_t c = 0; c < content; ++c) x[ind + c] += g * delta[c];
      }
    }
  }
  cache.tokens_.push_back(token);
}

std::vector<double> Model::readout(std::span<const double> x) const {
  const std::size_t ind = static_cast<std::size_t>(spec_.indicator_dim());
  const std::size_t content = static_cast<std::size_t>(spec_.content_dim());
  std::vector<double> normed;
  rms_normalize(x.subspan(ind, content), normed);
  std::vector<double> logits;
  matvec(weights_.unembed, normed, logits);
  if (ind > 0) {
    const VocabLayout layout = spec_.layout();
    for (Token t = 0; t < spec_.vocab_size; ++t) {
      const DomainId band = layout.band_of(t);
      if (band >= 0) logits[static_cast<std::size_t>(t)] += kBandBias * x[band] / kIndicatorScale;
    }
  }
  return logits;
}

Model build_model(const ModelSpec& spec) { return Model(spec); }

Token argmax(std::span<const double> logits) {
  if (logits.empty()) throw ValidationError("argmax of empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<Token>(best);
}

double top_probability(std::span<const double> logits) {
  const double max_logit = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double l : logits) denom += std::exp(l - max_logit);
  return 1.0 / denom;
}

std::vector<Token> greedy_decode(const Model& model, std::span<const Token> prompt,
                                 int max_new) {
  if (prompt.empty()) throw ValidationError("greedy_decode needs a nonempty prompt");
  if (max_new < 0) throw ValidationError("max_new must be >= 0");
  const SkipMask full = SkipMask::none(model.num_sublayers());
  const auto eos = model.spec().eos_token;

  std::vector<Token> sequence(prompt.begin(), prompt.end());
  std::vector<Token> continuation;
  KVCache cache;
  while (static_cast<int>(continuation.size()) < max_new) {
    const ForwardOutput out = model.forward(sequence, full, cache);
    const Token next = argmax(out.logits.back());
    continuation.push_back(next);
    sequence.push_back(next);
    if (eos && next == *eos) break;
  }
  return continuation;
}

HiddenVector extract_last_hidden(const Model& model, std::span<const Token> prompt,
                                 std::string source_prompt_id) {
  if (prompt.empty()) throw ValidationError("extract_last_hidden needs a nonempty prompt");
  KVCache cache;
  ForwardOutput out = model.forward(prompt, SkipMask::none(model.num_sublayers()), cache);
  out.last_hidden.source_prompt_id = std::move(source_prompt_id);
  return std::move(out.last_hidden);
}

SkipMask planted_optimal_mask(const Model& model, DomainId domain) {
  const ModelSpec& spec = model.spec();
  if (spec.backend != Backend::kPlanted) {
    throw ValidationError("planted_optimal_mask requires the planted backend");
  }
  if (domain < 0 || domain >= spec.num_domains) {
    throw ValidationError("unknown domain " + std::to_string(domain));
  }
  SkipMask mask = SkipMask::none(model.num_sublayers());
  const auto it = spec.planted_gates.find(domain);
  if (it != spec.planted_gates.end()) {
    for (int s : it->second) mask.set(static_cast<std::size_t>(s), true);
  }
  return mask;
}

}  // namespace knnssd
