#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "differ/denoiser.hpp"
#include "differ/vocab.hpp"

namespace differ {

enum class DecodeStrategy { confidence, left_to_right };
std::string_view to_string(DecodeStrategy s);
DecodeStrategy parse_decode_strategy(std::string_view s);

struct DecodeConfig {
  int steps = 0;  // 0 means one step per response position
  DecodeStrategy strategy = DecodeStrategy::confidence;
  std::size_t response_len = 8;
  double temperature = 0.0;  // 0 is greedy
  std::uint64_t seed = 0;    // used only when temperature > 0

  int effective_steps() const { return steps > 0 ? steps : static_cast<int>(response_len); }
  void validate() const;  // throws UsageError
};

struct TraceEntry {
  std::size_t position = 0;  // absolute index in the full sequence
  TokenId token = 0;
  double confidence = 0.0;
};

struct Decoded {
  std::string text;                           // detokenized response region
  std::vector<std::vector<TraceEntry>> trace;  // commits per step
  std::vector<TokenId> final_ids;             // prompt + response
};

// Fills an all-MASK response region after the prompt. The prompt is
// prompt.ids[0, prompt_len) (or all ids when prompt_len is 0).
Decoded decode(const Denoiser<float>& model, const Vocabulary& vocab,
               const AnnotatedSequence& prompt, const DecodeConfig& cfg);

// Answer string from a decoded response: cut at the first [EOS], drop
// [PAD], strip terminal punctuation, collapse whitespace. Case is kept.
std::string extract_answer(std::string_view response);
inline std::string extract_answer(const Decoded& d) { return extract_answer(d.text); }

// Prompt text to ids; unknown tokens are a DataError.
AnnotatedSequence encode_prompt(std::string_view text, const Vocabulary& vocab);

}  // namespace differ
