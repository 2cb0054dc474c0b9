#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <vector>

#include "differ/denoiser.hpp"
#include "differ/masking.hpp"

namespace differ::testing {

// Every parameter drawn away from its structured initialization, so no
// gradient is trivially zero.
template <class T>
void randomize(Denoiser<T>& model, Rng& rng, double scale = 0.3) {
  for (const auto& e : model.entries()) {
    auto p = model.params().subspan(e.offset, e.size);
    const bool gain = e.name.ends_with(".g");
    for (auto& v : p) v = static_cast<T>((gain ? 1.0 : 0.0) + scale * rng.normal());
  }
}

// Loss through forward() and masked_cross_entropy, a path independent of
// the fused backward in accumulate_example.
inline double reference_loss(const Denoiser<double>& model, const CorruptedSequence& ex) {
  const auto logits = model.forward(ex.ids);
  return masked_cross_entropy<double>(logits, static_cast<std::size_t>(model.config().vocab_size),
                                      ex.clean_ids, ex.mask.bits);
}

inline CorruptedSequence random_example(std::size_t n, std::size_t vocab, Rng& rng) {
  CorruptedSequence ex;
  ex.clean_ids.resize(n);
  for (auto& t : ex.clean_ids) {
    t = static_cast<TokenId>(Vocabulary::kNumSpecial + rng.below(vocab - Vocabulary::kNumSpecial));
  }
  ex.mask.bits.assign(n, 0);
  ex.mask.noise_level = 0.5;
  for (auto& b : ex.mask.bits) b = rng.bernoulli(0.4) ? 1 : 0;
  ex.mask.bits[rng.below(n)] = 1;
  ex.ids = ex.clean_ids;
  for (std::size_t k = 0; k < n; ++k) {
    if (ex.mask.bits[k]) ex.ids[k] = Vocabulary::kMask;
  }
  return ex;
}

// Denominator floor for relative gradient error. Central differences at
// h = 1e-5 on an O(10) loss carry about 2e-10 of rounding noise, which is
// all that remains for parameters whose true gradient is exactly zero
// (attention key biases, for one); below the floor the check is absolute.
inline constexpr double kGradFloor = 1e-3;

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Central differences with step h for the listed parameter indices.
// Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheck check_gradients(Denoiser<double>& model, const CorruptedSequence& ex,
                                 const std::vector<std::size_t>& indices, double h,
                                 double floor) {
  std::vector<double> grads(model.params().size(), 0.0);
  model.accumulate_example(ex, 1.0, grads);
  GradCheck out;
  auto params = model.params();
  for (std::size_t i : indices) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = reference_loss(model, ex);
    params[i] = saved - h;
    const double down = reference_loss(model, ex);
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(numeric), std::abs(grads[i]), floor});
    const double rel = std::abs(numeric - grads[i]) / denom;
    if (rel > out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst_index = i;
      out.worst_analytic = grads[i];
      out.worst_numeric = numeric;
    }
    ++out.checked;
  }
  return out;
}

}  // namespace differ::testing
