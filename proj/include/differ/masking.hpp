#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "differ/common.hpp"
#include "differ/vocab.hpp"

namespace differ {

enum class MaskMode { token, whole_entity };

std::string_view to_string(MaskMode m);
MaskMode parse_mask_mode(std::string_view s);  // "token" | "whole-entity"

// Lower end of the noise schedule t ~ Uniform(eps, 1].
inline constexpr double kNoiseEpsilon = 1e-3;

struct MaskSpec {
  double noise_level = 1.0;  // in (0, 1]
  MaskMode mode = MaskMode::token;
  bool respect_prompt = false;
  // When non-empty, only these spans may be masked (loss restricted to them).
  std::vector<TokenSpan> restrict_to;

  void validate() const;
};

struct MaskVector {
  std::vector<std::uint8_t> bits;
  double noise_level = 0.0;

  std::size_t count() const;
  // Debug form: one '0' / '1' per position.
  std::string to_string() const;
};

struct CorruptedSequence {
  std::vector<TokenId> ids;
  MaskVector mask;
  std::vector<TokenId> clean_ids;
};

// Longest-match-first resolution. Nested spans are dropped in favour of the
// span containing them; for partial overlaps the leftmost span (longest on a
// tie of start) is kept whole and the right neighbour is truncated to start
// after it. Output is disjoint and sorted by start.
std::vector<TokenSpan> resolve_spans(std::vector<TokenSpan> spans);

// Positions that may be masked under `spec`.
std::vector<std::uint8_t> maskable_positions(const AnnotatedSequence& seq, const MaskSpec& spec);

// Independent Bernoulli(noise_level) over maskable positions.
MaskVector sample_base_mask(const AnnotatedSequence& seq, const MaskSpec& spec, Rng& rng);

// Entity-level contagion: a span with any provisional bit set is masked
// whole; positions outside every span keep their provisional bit.
// Spans must already be disjoint.
MaskVector apply_wem(std::span<const TokenSpan> spans, const MaskVector& provisional);
// Same, writing into `out` (reuses its storage).
void apply_wem(std::span<const TokenSpan> spans, const MaskVector& provisional, MaskVector& out);
MaskVector apply_wem(const AnnotatedSequence& seq, const MaskVector& provisional);

// Base mask, then contagion in whole-entity mode, then MASK substitution.
CorruptedSequence corrupt(const AnnotatedSequence& seq, const MaskSpec& spec, Rng& rng);

// Training-time corruption: draws t ~ Uniform(eps, 1] and guarantees at
// least one masked position by masking one maskable position uniformly at
// random when the draw masks none. Throws DataError if nothing is maskable.
CorruptedSequence corrupt_for_training(const AnnotatedSequence& seq, MaskMode mode,
                                       bool respect_prompt,
                                       std::span<const TokenSpan> restrict_to, Rng& rng);

// Number of entity spans that are neither fully masked nor fully visible.
std::size_t count_partial_spans(std::span<const TokenSpan> spans, const MaskVector& mask);

}  // namespace differ
