#include "knnssd/spec_engine.hpp"

#include <algorithm>
#include <chrono>

namespace knnssd {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

// A KV cache under a fixed mask that reuses the longest cached prefix of
// each requested sequence and rolls back everything after it.
class Session {
 public:
  Session(const Model& model, SkipMask mask) : model_(model), mask_(std::move(mask)) {}

  // Logits for positions [first, seq.size()), where first is the reused
  // prefix length, capped at max_reuse.
  std::vector<std::vector<double>> advance(std::span<const Token> seq, std::size_t max_reuse,
                                           std::size_t& first) {
    const auto cached = cache_.tokens();
    std::size_t lcp = 0;
    const std::size_t limit = std::min({cached.size(), seq.size() - 1, max_reuse});
    while (lcp < limit && cached[lcp] == seq[lcp]) ++lcp;
    cache_.truncate(lcp);
    first = lcp;
    return model_.forward(seq, mask_, cache_).logits;
  }

  std::vector<double> next_logits(std::span<const Token> seq) {
    std::size_t first = 0;
    auto rows = advance(seq, seq.size(), first);
    return std::move(rows.back());
  }

 private:
  const Model& model_;
  SkipMask mask_;
  KVCache cache_;
};

std::vector<Token> run_draft(Session& session, std::vector<Token> seq, int budget,
                             const DraftConfig& cfg, std::optional<Token> eos) {
  std::vector<Token> drafts;
  if (budget <= 0) return drafts;
  std::vector<double> logits = session.next_logits(seq);
  for (int i = 0; i < budget; ++i) {
    if (i > 0 && cfg.mode == DraftMode::kAdaptive &&
        top_probability(logits) < cfg.confidence_threshold) {
      break;
    }
    const Token tok = argmax(logits);
    drafts.push_back(tok);
    seq.push_back(tok);
    if (eos && tok == *eos) break;
    if (i + 1 < budget) logits = session.next_logits(seq);
  }
  return drafts;
}

VerifyResult run_verify(Session& target, std::span<const Token> context,
                        std::span<const Token> drafts) {
  std::vector<Token> seq(context.begin(), context.end());
  seq.insert(seq.end(), drafts.begin(), drafts.end());
  std::size_t first = 0;
  const auto rows = target.advance(seq, context.size() - 1, first);
  // rows[k] predicts seq[first + k + 1]; the draft starts at context.size().
  const std::size_t base = context.size() - 1 - first;
  VerifyResult r;
  while (static_cast<std::size_t>(r.accepted_prefix_len) < drafts.size() &&
         argmax(rows[base + static_cast<std::size_t>(r.accepted_prefix_len)]) ==
             drafts[static_cast<std::size_t>(r.accepted_prefix_len)]) {
    ++r.accepted_prefix_len;
  }
  r.next_token = argmax(rows[base + static_cast<std::size_t>(r.accepted_prefix_len)]);
  return r;
}

void check_mask(const Model& model, const SkipMask& mask) {
  if (mask.size() != model.num_sublayers()) {
    throw ValidationError("skip mask length does not match the model");
  }
}

}  // namespace

void DraftConfig::validate() const {
  if (max_draft_len < 1) throw ValidationError("max_draft_len must be >= 1");
  if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0)) {
    throw ValidationError("confidence_threshold must be in [0, 1]");
  }
}

double DecodeStats::mean_accepted_length() const {
  return target_forward_passes == 0
             ? 0.0
             : static_cast<double>(emitted_tokens) / static_cast<double>(target_forward_passes);
}

double DecodeStats::acceptance_rate() const {
  return drafted_tokens == 0
             ? 0.0
             : static_cast<double>(accepted_tokens) / static_cast<double>(drafted_tokens);
}

DecodeStats& DecodeStats::operator+=(const DecodeStats& other) {
  drafted_tokens += other.drafted_tokens;
  accepted_tokens += other.accepted_tokens;
  target_forward_passes += other.target_forward_passes;
  emitted_tokens += other.emitted_tokens;
  draft_ms += other.draft_ms;
  verify_ms += other.verify_ms;
  return *this;
}

std::vector<Token> draft(const Model& model, std::span<const Token> context,
                         const SkipMask& mask, const DraftConfig& cfg) {
  if (context.empty()) throw ValidationError("draft needs a nonempty context");
  check_mask(model, mask);
  cfg.validate();
  Session session(model, mask);
  return run_draft(session, std::vector<Token>(context.begin(), context.end()),
                   cfg.max_draft_len, cfg, model.spec().eos_token);
}

VerifyResult verify(const Model& model, std::span<const Token> context,
                    std::span<const Token> draft_tokens) {
  if (context.empty()) throw ValidationError("verify needs a nonempty context");
  if (draft_tokens.empty()) throw ValidationError("verify needs a nonempty draft");
  Session target(model, SkipMask::none(model.num_sublayers()));
  return run_verify(target, context, draft_tokens);
}

SpecResult speculative_generate(const Model& model, std::span<const Token> prompt,
                                const SkipMask& mask, const DraftConfig& cfg, int max_new) {
  if (prompt.empty()) throw ValidationError("speculative_generate needs a nonempty prompt");
  if (max_new < 0) throw ValidationError("max_new must be >= 0");
  check_mask(model, mask);
  cfg.validate();

  const auto eos = model.spec().eos_token;
  Session drafter(model, mask);
  Session target(model, SkipMask::none(model.num_sublayers()));

  SpecResult result;
  DecodeStats& st = result.stats;
  std::vector<Token> context(prompt.begin(), prompt.end());
  bool done = false;
  while (!done && st.emitted_tokens < max_new) {
    const int remaining = max_new - static_cast<int>(st.emitted_tokens);
    // Leave room for the token the verification pass always contributes.
    const int budget = std::min(cfg.max_draft_len, remaining - 1);

    auto t0 = Clock::now();
    const std::vector<Token> drafts = run_draft(drafter, context, budget, cfg, eos);
    st.draft_ms += elapsed_ms(t0);

    t0 = Clock::now();
    const VerifyResult v = run_verify(target, context, drafts);
    st.verify_ms += elapsed_ms(t0);

    st.drafted_tokens += static_cast<std::int64_t>(drafts.size());
    st.target_forward_passes += 1;

    const auto accepted_end = drafts.begin() + v.accepted_prefix_len;
    const auto eos_it = eos ? std::find(drafts.begin(), accepted_end, *eos) : accepted_end;
    if (eos_it != accepted_end) {
      // Tokens after an accepted end-of-sequence are dropped; the EOS itself
      // stands in for the pass's own token.
      const auto kept = static_cast<std::int64_t>(eos_it - drafts.begin());
      result.tokens.insert(result.tokens.end(), drafts.begin(), eos_it + 1);
      st.accepted_tokens += kept;
      st.emitted_tokens += kept + 1;
      done = true;
    } else {
      result.tokens.insert(result.tokens.end(), drafts.begin(), accepted_end);
      result.tokens.push_back(v.next_token);
      st.accepted_tokens += v.accepted_prefix_len;
      st.emitted_tokens += v.accepted_prefix_len + 1;
      done = eos && v.next_token == *eos;
    }
    context.insert(context.end(), drafts.begin(), accepted_end);
    context.push_back(v.next_token);
  }
  return result;
}

}  // namespace knnssd
