#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "differ/common.hpp"
#include "differ/masking.hpp"
#include "differ/vocab.hpp"

namespace differ {

struct DenoiserConfig {
  int d_model = 128;
  int n_heads = 4;
  int n_layers = 4;
  int max_len = 64;
  int vocab_size = 0;
  // Tied: logits use the token embedding matrix. Untied: a separate output
  // matrix, zero-initialized so the initial prediction is uniform.
  bool tie_embeddings = true;
  double init_std = 0.02;

  void validate() const;  // throws UsageError
  std::string to_json() const;
  static DenoiserConfig from_json(std::string_view text);
  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

enum class LossWeighting { uniform, inverse_t };
std::string_view to_string(LossWeighting w);
LossWeighting parse_loss_weighting(std::string_view s);

// All parameters live in one flat buffer; entries name slices of it.
struct ParamEntry {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
  bool decay = false;  // weight decay applies to matrices only
};

template <class T>
class Denoiser {
 public:
  explicit Denoiser(DenoiserConfig config, std::uint64_t seed = 0);

  const DenoiserConfig& config() const { return config_; }
  std::span<const ParamEntry> entries() const { return entries_; }
  const ParamEntry& entry(std::string_view name) const;

  std::span<T> params() { return params_; }
  std::span<const T> params() const { return params_; }
  std::span<T> param(std::string_view name);
  std::span<const T> param(std::string_view name) const;

  std::int64_t step = 0;

  // Logits for every position, row-major [ids.size() x vocab_size]. Full
  // self-attention, no causal mask. Throws UsageError on overlong input.
  std::vector<T> forward(std::span<const TokenId> ids) const;

  // Loss for one corrupted sequence: sum over masked positions of
  // -log p(clean token), times `scale`. Gradients (also times `scale`) are
  // accumulated into `grads` (same layout as params()). Returns the unscaled
  // masked-position loss sum.
  double accumulate_example(const CorruptedSequence& example, T scale, std::span<T> grads) const;

  bool all_finite() const;

  template <class U>
  Denoiser<U> cast() const;

 private:
  template <class U> friend class Denoiser;
  struct Workspace;

  void build_entries();
  void run_forward(std::span<const TokenId> ids, Workspace& ws) const;

  DenoiserConfig config_;
  std::vector<ParamEntry> entries_;
  std::vector<T> params_;
};

// Cross-entropy of row-major logits [n x vocab] against targets at positions
// with mask bit set. Rows with mask bit 0 are never read. When `dlogits` is
// non-empty it receives d(loss)/d(logits), zero on unmasked rows.
template <class T>
double masked_cross_entropy(std::span<const T> logits, std::size_t vocab,
                            std::span<const TokenId> targets,
                            std::span<const std::uint8_t> mask, std::span<T> dlogits = {});

struct LossAndGrads {
  double loss = 0.0;
  std::size_t masked_positions = 0;
};

// Mean over the batch of per-example masked losses (optionally weighted by
// 1/t). `grads` is overwritten. Throws DataError if any example has no masked
// position or the batch is empty.
template <class T>
LossAndGrads loss_and_grads(const Denoiser<T>& model, std::span<const CorruptedSequence> batch,
                            LossWeighting weighting, std::vector<T>& grads);

// Checkpoint: "DFER", u32 version, u32-length config JSON (includes the
// vocabulary hash), u32 tensor count, then per tensor: u32 name length, name,
// u32 rank, u32 dims, little-endian float32 values.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Denoiser<float>& model, const std::string& vocab_hash,
                     const std::string& path);
std::string serialize_checkpoint(const Denoiser<float>& model, const std::string& vocab_hash);

struct LoadedCheckpoint {
  Denoiser<float> model;
  std::string vocab_hash;
};
LoadedCheckpoint parse_checkpoint(std::string_view bytes);
// Refuses checkpoints whose vocabulary hash differs from `expected_vocab_hash`
// (when non-empty).
LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const std::string& expected_vocab_hash = {});

}  // namespace differ
