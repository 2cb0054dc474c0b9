#include "differ/infer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>

namespace differ {

std::string_view to_string(DecodeStrategy s) {
  return s == DecodeStrategy::confidence ? "confidence" : "left_to_right";
}

DecodeStrategy parse_decode_strategy(std::string_view s) {
  if (s == "confidence") return DecodeStrategy::confidence;
  if (s == "left_to_right" || s == "left-to-right") return DecodeStrategy::left_to_right;
  throw UsageError("unknown decode strategy: '" + std::string(s) + "'");
}

void DecodeConfig::validate() const {
  if (steps < 0) throw UsageError("decode steps must be at least 1 (or 0 for the default)");
  if (response_len < 1) throw UsageError("response_len must be at least 1");
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw UsageError("temperature must be non-negative");
  }
}

AnnotatedSequence encode_prompt(std::string_view text, const Vocabulary& vocab) {
  AnnotatedSequence seq;
  for (const auto& t : split_tokens(text)) seq.ids.push_back(vocab.id_of(t));
  seq.prompt_len = seq.ids.size();
  return seq;
}

namespace {

struct Candidate {
  std::size_t position;
  TokenId token;
  double confidence;
};

// Prediction for one masked row. Special tokens other than EOS are never
// produced: MASK would undo the step, PAD and BOS have no place in answers.
Candidate predict(std::span<const float> row, std::size_t position, double temperature,
                  Rng& rng) {
  const std::size_t V = row.size();
  auto allowed = [](std::size_t v) {
    return v != static_cast<std::size_t>(Vocabulary::kMask) &&
           v != static_cast<std::size_t>(Vocabulary::kPad) &&
           v != static_cast<std::size_t>(Vocabulary::kBos);
  };
  const double inv_temp = temperature > 0.0 ? 1.0 / temperature : 1.0;
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < V; ++v) {
    if (allowed(v)) mx = std::max(mx, static_cast<double>(row[v]) * inv_temp);
  }
  double sum = 0.0;
  std::size_t best = V;
  double best_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < V; ++v) {
    if (!allowed(v)) continue;
    const double z = static_cast<double>(row[v]) * inv_temp;
    sum += std::exp(z - mx);
    if (z > best_logit) {
      best_logit = z;
      best = v;
    }
  }
  std::size_t chosen = best;
  if (temperature > 0.0) {
    double u = rng.uniform() * sum;
    for (std::size_t v = 0; v < V; ++v) {
      if (!allowed(v)) continue;
      chosen = v;
      u -= std::exp(static_cast<double>(row[v]) * inv_temp - mx);
      if (u < 0.0) break;
    }
  }
  const double p = std::exp(static_cast<double>(row[chosen]) * inv_temp - mx) / sum;
  return {position, static_cast<TokenId>(chosen), p};
}

}  // namespace

Decoded decode(const Denoiser<float>& model, const Vocabulary& vocab,
               const AnnotatedSequence& prompt, const DecodeConfig& cfg) {
  cfg.validate();
  const std::size_t plen = prompt.prompt_len > 0 ? prompt.prompt_len : prompt.ids.size();
  if (plen > prompt.ids.size()) throw DataError("prompt_len exceeds the prompt sequence");
  const std::size_t n = plen + cfg.response_len;
  if (n > static_cast<std::size_t>(model.config().max_len)) {
    throw UsageError("prompt plus response (" + std::to_string(n) + " tokens) exceeds max_len " +
                     std::to_string(model.config().max_len));
  }
  std::vector<TokenId> ids(prompt.ids.begin(), prompt.ids.begin() + static_cast<long>(plen));
  ids.resize(n, Vocabulary::kMask);

  Rng rng(derive_seed(cfg.seed, "decode"));
  const auto V = static_cast<std::size_t>(model.config().vocab_size);
  const int steps = cfg.effective_steps();
  Decoded out;
  std::size_t remaining = cfg.response_len;
  for (int s = 0; s < steps && remaining > 0; ++s) {
    const std::size_t steps_left = static_cast<std::size_t>(steps - s);
    const std::size_t k = (remaining + steps_left - 1) / steps_left;
    const auto logits = model.forward(ids);
    std::vector<Candidate> cands;
    for (std::size_t p = plen; p < n; ++p) {
      if (ids[p] != Vocabulary::kMask) continue;
      cands.push_back(
          predict(std::span<const float>(logits).subspan(p * V, V), p, cfg.temperature, rng));
    }
    if (cfg.strategy == DecodeStrategy::confidence) {
      // Candidates are in position order, so a stable sort breaks ties leftmost.
      std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        return a.confidence > b.confidence;
      });
    }
    cands.resize(std::min(k, cands.size()));
    std::sort(cands.begin(), cands.end(),
              [](const Candidate& a, const Candidate& b) { return a.position < b.position; });
    std::vector<TraceEntry> step;
    for (const auto& c : cands) {
      ids[c.position] = c.token;
      step.push_back({c.position, c.token, c.confidence});
    }
    remaining -= cands.size();
    out.trace.push_back(std::move(step));
  }
  out.text = detokenize(std::span<const TokenId>(ids).subspan(plen), vocab);
  out.final_ids = std::move(ids);
  return out;
}

std::string extract_answer(std::string_view response) {
  std::string s(response.substr(0, response.find(Vocabulary::kEosText)));
  for (std::size_t pos; (pos = s.find(Vocabulary::kPadText)) != std::string::npos;) {
    s.replace(pos, Vocabulary::kPadText.size(), " ");
  }
  std::string collapsed;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!collapsed.empty() && collapsed.back() != ' ') collapsed.push_back(' ');
    } else {
      collapsed.push_back(c);
    }
  }
  auto terminal = [](char c) { return c == ' ' || c == '.' || c == '?' || c == '!' || c == ',' ||
                                      c == ';' || c == ':'; };
  while (!collapsed.empty() && terminal(collapsed.back())) collapsed.pop_back();
  return collapsed;
}

}  // namespace differ
