#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "knnssd/types.hpp"

namespace knnssd {

enum class Backend { kTinyTransformer, kPlanted };

std::string_view to_string(Backend backend);
Backend backend_from_string(std::string_view name);

// Token id layout shared by the corpora and the planted backend:
// [0, shared_band) is common to every domain, the rest is split into
// num_domains equal, disjoint bands.
struct VocabLayout {
  int vocab_size = 256;
  int num_domains = 5;
  int shared_band = 16;

  int band_width() const { return (vocab_size - shared_band) / num_domains; }
  // Half-open [first, last) range of the domain's own band.
  std::pair<Token, Token> domain_band(DomainId domain) const;
  // Domain owning the token, or -1 for shared and leftover tokens.
  DomainId band_of(Token token) const;
};

struct ModelSpec {
  Backend backend = Backend::kTinyTransformer;
  int num_blocks = 8;
  int hidden_dim = 64;
  int vocab_size = 256;
  std::uint64_t seed = 0;
  int num_domains = 5;
  int shared_band = 16;
  int max_positions = 512;
  std::optional<Token> eos_token;
  // domain -> sublayers that are exact identity maps on that domain's
  // tokens (planted backend only).
  std::map<DomainId, std::vector<int>> planted_gates;

  int num_sublayers() const { return 2 * num_blocks; }
  VocabLayout layout() const { return {vocab_size, num_domains, shared_band}; }
  // Residual channels reserved for domain indicators (planted only).
  int indicator_dim() const { return backend == Backend::kPlanted ? num_domains : 0; }
  int content_dim() const { return hidden_dim - indicator_dim(); }
  int mlp_dim() const { return 2 * content_dim(); }

  // Throws ValidationError.
  void validate() const;

  bool operator==(const ModelSpec&) const = default;
};

// Gate assignment used by the tooling when no explicit gates are given:
// a set gated for every domain plus a distinct, possibly overlapping,
// set per domain.
std::map<DomainId, std::vector<int>> default_planted_gates(int num_blocks, int num_domains,
                                                           std::uint64_t seed);

// Binary vector over sublayers. Index 2b is the attention sublayer of
// block b, index 2b+1 its MLP sublayer. A set bit means "skip".
class SkipMask {
 public:
  SkipMask() = default;
  explicit SkipMask(std::size_t num_sublayers);
  explicit SkipMask(std::vector<std::uint8_t> bits);

  static SkipMask none(std::size_t num_sublayers) { return SkipMask(num_sublayers); }
  static SkipMask all(std::size_t num_sublayers);
  // Parses "0101..." in index order.
  static SkipMask from_bitstring(std::string_view bits);

  std::string to_bitstring() const;

  std::size_t size() const { return bits_.size(); }
  std::size_t num_blocks() const { return bits_.size() / 2; }
  bool skips(std::size_t sublayer) const { return bits_.at(sublayer) != 0; }
  void set(std::size_t sublayer, bool skip) { bits_.at(sublayer) = skip ? 1 : 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  static bool is_attention(std::size_t sublayer) { return sublayer % 2 == 0; }

  std::size_t popcount() const;
  std::size_t skipped_attention() const;
  std::size_t skipped_mlp() const;
  double skip_ratio() const;
  double attention_skip_ratio() const;
  double mlp_skip_ratio() const;

  auto operator<=>(const SkipMask&) const = default;

 private:
  std::vector<std::uint8_t> bits_;
};

struct HiddenVector {
  std::vector<double> values;
  std::string source_prompt_id;
};

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
  double& operator()(int r, int c) { return row(r)[c]; }
  double operator()(int r, int c) const { return row(r)[c]; }
};

struct BlockWeights {
  // Attention projections act on content channels only.
  Matrix wq, wk, wv, wo;
  // MLP: content -> mlp_dim -> content.
  Matrix w1;
  std::vector<double> b1;
  Matrix w2;
};

struct ModelWeights {
  Matrix embed;       // vocab x hidden
  Matrix positional;  // max_positions x hidden (zero on indicator channels)
  std::vector<BlockWeights> blocks;
  Matrix unembed;  // vocab x content
};

// Per-session key/value store. A cache is bound to the skip mask of its
// first forward call; skipped attention sublayers keep no entries.
class KVCache {
 public:
  std::size_t length() const { return tokens_.size(); }
  std::span<const Token> tokens() const { return tokens_; }
  const std::optional<SkipMask>& bound_mask() const { return bound_mask_; }

  // Drops every position at or after new_length.
  void truncate(std::size_t new_length);
  void clear();

 private:
  friend class Model;

  std::optional<SkipMask> bound_mask_;
  int content_dim_ = 0;
  std::vector<Token> tokens_;
  std::vector<std::vector<double>> keys_;
  std::vector<std::vector<double>> values_;
};

struct ForwardOutput {
  // One row of vocab_size logits per newly processed position.
  std::vector<std::vector<double>> logits;
  HiddenVector last_hidden;
};

// Decoder-only model whose attention and MLP sublayers can be skipped
// individually. Immutable after construction; share freely across threads.
class Model {
 public:
  explicit Model(ModelSpec spec);
  Model(ModelSpec spec, ModelWeights weights);

  const ModelSpec& spec() const { return spec_; }
  const ModelWeights& weights() const { return weights_; }
  std::size_t num_sublayers() const { return static_cast<std::size_t>(spec_.num_sublayers()); }

  // Processes tokens[cache.length():] given that the cache already holds
  // tokens[:cache.length()]. Throws ValidationError on mask length mismatch,
  // a cache bound to a different mask, or a cache that is not a prefix of
  // tokens.
  ForwardOutput forward(std::span<const Token> tokens, const SkipMask& mask,
                        KVCache& cache) const;

  // Multiplier applied to a sublayer's output at a position with residual
  // stream x: 0 where the planted gate makes it an identity map, else 1.
  double gate(std::size_t sublayer, std::span<const double> x) const;

 private:
  void process_position(Token token, std::size_t position, const SkipMask& mask,
                        KVCache& cache, std::vector<double>& x) const;
  std::vector<double> readout(std::span<const double> x) const;

  ModelSpec spec_;
  ModelWeights weights_;
  // sublayer -> per-domain flag: 1 if the sublayer is an identity on that
  // domain. Empty inner vector for ungated sublayers.
  std::vector<std::vector<std::uint8_t>> identity_domains_;
};

Model build_model(const ModelSpec& spec);

// Lowest index wins ties.
Token argmax(std::span<const double> logits);
double top_probability(std::span<const double> logits);

// Full-model argmax continuation, stopping after an end-of-sequence token.
std::vector<Token> greedy_decode(const Model& model, std::span<const Token> prompt,
                                 int max_new);

// Final-layer residual stream at the last prompt token, full model.
HiddenVector extract_last_hidden(const Model& model, std::span<const Token> prompt,
                                 std::string source_prompt_id = {});

SkipMask planted_optimal_mask(const Model& model, DomainId domain);

}  // namespace knnssd
