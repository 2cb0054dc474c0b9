#include "differ/masking.hpp"

#include <algorithm>

namespace differ {

std::string_view to_string(MaskMode m) {
  return m == MaskMode::token ? "token" : "whole-entity";
}

MaskMode parse_mask_mode(std::string_view s) {
  if (s == "token") return MaskMode::token;
  if (s == "whole-entity" || s == "whole_entity") return MaskMode::whole_entity;
  throw UsageError("unknown mask mode: '" + std::string(s) + "' (expected token|whole-entity)");
}

void MaskSpec::validate() const {
  if (!(noise_level > 0.0 && noise_level <= 1.0)) {
    throw UsageError("noise level must lie in (0, 1]");
  }
}

std::size_t MaskVector::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

std::string MaskVector::to_string() const {
  std::string s;
  s.reserve(bits.size());
  for (auto b : bits) s.push_back(b ? '1' : '0');
  return s;
}

std::vector<TokenSpan> resolve_spans(std::vector<TokenSpan> spans) {
  // Leftmost first; on equal start the longer span wins.
  std::sort(spans.begin(), spans.end(), [](const TokenSpan& a, const TokenSpan& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.last > b.last;
  });
  std::vector<TokenSpan> out;
  for (TokenSpan s : spans) {
    if (!out.empty()) {
      const TokenSpan& prev = out.back();
      if (s.last <= prev.last) continue;             // nested or duplicate
      if (s.first <= prev.last) s.first = prev.last + 1;  // partial overlap: truncate right
    }
    out.push_back(s);
  }
  return out;
}

std::vector<std::uint8_t> maskable_positions(const AnnotatedSequence& seq, const MaskSpec& spec) {
  const std::size_t n = seq.ids.size();
  std::vector<std::uint8_t> ok(n, 1);
  if (spec.respect_prompt) {
    std::fill(ok.begin(), ok.begin() + static_cast<std::ptrdiff_t>(std::min(seq.prompt_len, n)), 0);
  }
  if (!spec.restrict_to.empty()) {
    std::vector<std::uint8_t> inside(n, 0);
    for (const auto& s : spec.restrict_to) {
      for (auto k = s.first; k <= s.last; ++k) inside[static_cast<std::size_t>(k)] = 1;
    }
    for (std::size_t k = 0; k < n; ++k) ok[k] &= inside[k];
  }
  return ok;
}

MaskVector sample_base_mask(const AnnotatedSequence& seq, const MaskSpec& spec, Rng& rng) {
  spec.validate();
  const auto ok = maskable_positions(seq, spec);
  MaskVector m{std::vector<std::uint8_t>(seq.ids.size(), 0), spec.noise_level};
  for (std::size_t k = 0; k < ok.size(); ++k) {
    if (!ok[k]) continue;
    // Draw for every maskable position, so the stream does not depend on t.
    const double u = rng.uniform();
    m.bits[k] = u < spec.noise_level ? 1 : 0;
  }
  return m;
}

void apply_wem(std::span<const TokenSpan> spans, const MaskVector& provisional, MaskVector& out) {
  out.bits.assign(provisional.bits.begin(), provisional.bits.end());
  out.noise_level = provisional.noise_level;
  for (const auto& s : spans) {
    const auto first = static_cast<std::size_t>(s.first);
    const auto last = static_cast<std::size_t>(s.last);
    bool any = false;
    for (std::size_t k = first; k <= last; ++k) any = any || provisional.bits[k] != 0;
    if (any) std::fill(out.bits.begin() + static_cast<std::ptrdiff_t>(first),
                       out.bits.begin() + static_cast<std::ptrdiff_t>(last) + 1, std::uint8_t{1});
  }
}

MaskVector apply_wem(std::span<const TokenSpan> spans, const MaskVector& provisional) {
  MaskVector out;
  apply_wem(spans, provisional, out);
  return out;
}

MaskVector apply_wem(const AnnotatedSequence& seq, const MaskVector& provisional) {
  return apply_wem(seq.entity_spans, provisional);
}

namespace {

CorruptedSequence substitute(const AnnotatedSequence& seq, MaskVector mask) {
  CorruptedSequence c;
  c.clean_ids = seq.ids;
  c.ids = seq.ids;
  for (std::size_t k = 0; k < c.ids.size(); ++k) {
    if (mask.bits[k]) c.ids[k] = Vocabulary::kMask;
  }
  c.mask = std::move(mask);
  return c;
}

// Entity spans after nesting resolution; spans wholly outside the maskable
// region are irrelevant to contagion and are kept as-is.
std::vector<TokenSpan> contagion_spans(const AnnotatedSequence& seq) {
  return resolve_spans(seq.entity_spans);
}

}  // namespace

CorruptedSequence corrupt(const AnnotatedSequence& seq, const MaskSpec& spec, Rng& rng) {
  MaskVector m = sample_base_mask(seq, spec, rng);
  if (spec.mode == MaskMode::whole_entity) m = apply_wem(contagion_spans(seq), m);
  return substitute(seq, std::move(m));
}

CorruptedSequence corrupt_for_training(const AnnotatedSequence& seq, MaskMode mode,
                                       bool respect_prompt,
                                       std::span<const TokenSpan> restrict_to, Rng& rng) {
  MaskSpec spec;
  spec.noise_level = rng.uniform_open_closed(kNoiseEpsilon, 1.0);
  spec.mode = mode;
  spec.respect_prompt = respect_prompt;
  spec.restrict_to.assign(restrict_to.begin(), restrict_to.end());
  const auto ok = maskable_positions(seq, spec);
  std::vector<std::size_t> candidates;
  for (std::size_t k = 0; k < ok.size(); ++k) {
    if (ok[k]) candidates.push_back(k);
  }
  if (candidates.empty()) throw DataError("sequence has no maskable position");
  MaskVector m = sample_base_mask(seq, spec, rng);
  if (m.count() == 0) m.bits[candidates[rng.below(candidates.size())]] = 1;
  if (mode == MaskMode::whole_entity) m = apply_wem(contagion_spans(seq), m);
  return substitute(seq, std::move(m));
}

std::size_t count_partial_spans(std::span<const TokenSpan> spans, const MaskVector& mask) {
  std::size_t n = 0;
  for (const auto& s : spans) {
    bool any = false;
    bool all = true;
    for (auto k = s.first; k <= s.last; ++k) {
      const bool b = mask.bits[static_cast<std::size_t>(k)] != 0;
      any = any || b;
      all = all && b;
    }
    if (any && !all) ++n;
  }
  return n;
}

}  // namespace differ
