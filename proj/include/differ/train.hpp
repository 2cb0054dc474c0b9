#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "differ/corpus.hpp"
#include "differ/denoiser.hpp"
#include "differ/masking.hpp"

namespace differ {

enum class Stage { pretrain, sft };
std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);

// Response region length for prompt-conditioned records; shorter answers are
// padded with EOS.
inline constexpr std::size_t kDefaultResponseLen = 8;

struct TrainConfig {
  Stage stage = Stage::pretrain;
  int epochs = 30;
  double learning_rate = 3e-4;
  double warmup_ratio = 0.03;
  double weight_decay = 0.01;
  int batch_size = 32;
  std::uint64_t seed = 0;
  MaskMode mask_mode = MaskMode::token;
  // SFT source weights keyed by qa_train / sym / rel. Empty means
  // proportional to the split sizes.
  std::map<SplitKind, double> mix_weights;
  LossWeighting loss_weighting = LossWeighting::uniform;
  double grad_clip = 1.0;  // global-norm clip; 0 disables
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t response_len = kDefaultResponseLen;

  static TrainConfig defaults(Stage stage);
  void validate() const;  // throws UsageError
  std::string to_json() const;
  // Missing keys keep the values already in `base`.
  static TrainConfig from_json(std::string_view text, TrainConfig base);
};

// Learning rate for a step in [0, total_steps]: linear ramp from 0 over the
// first warmup_ratio * total_steps steps, then constant.
double lr_schedule(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg);

// Decoupled weight decay, applied only to entries flagged `decay`.
template <class T>
class AdamW {
 public:
  AdamW(std::span<const ParamEntry> entries, std::size_t n_params, double beta1, double beta2,
        double eps, double weight_decay);

  void step(std::span<T> params, std::span<const T> grads, double lr);
  std::int64_t steps_taken() const { return t_; }

 private:
  std::vector<ParamEntry> entries_;
  std::vector<T> m_, v_;
  double beta1_, beta2_, eps_, weight_decay_;
  std::int64_t t_ = 0;
};

// Scales `grads` in place so its L2 norm is at most `max_norm` (0 disables).
// Returns the norm before clipping.
double clip_grad_norm(std::span<float> grads, double max_norm);

struct StepLog {
  std::int64_t step = 0;
  Stage stage = Stage::pretrain;
  std::string split_kind;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  std::size_t partial_entities = 0;  // entity spans partly masked in this batch
  std::size_t masked_positions = 0;
};

struct EpochAudit {
  int epoch = 0;
  std::size_t qa_items = 0;
  std::size_t sym_items = 0;
  std::size_t rel_items = 0;
  std::size_t sym_forward = 0;   // A -> B supervision from D_sym
  std::size_t sym_backward = 0;  // B -> A supervision from D_sym
  std::size_t rel_outside_loss_bits = 0;  // mask bits outside relation spans; must be 0
};

struct TrainLog {
  std::vector<StepLog> steps;
  std::vector<EpochAudit> epochs;

  std::string steps_csv() const;
  std::string audit_csv() const;
};

// Encodes a record for training. QA records get their response padded with
// EOS to exactly `response_len` tokens (DataError if longer), matching the
// fixed response region used at decode time. Other records keep their length.
AnnotatedSequence encode_for_training(const DataRecord& record, const Vocabulary& vocab,
                                      std::size_t response_len);

// One item of the SFT stream: which source and which record.
struct StreamItem {
  SplitKind kind = SplitKind::qa_train;
  std::size_t index = 0;
};

// Builds one epoch's item order. Each source contributes
// round(total * w / sum(w)) items, drawn by cycling a seeded permutation.
// D_sym items are permuted as (forward, backward) pairs that stay adjacent,
// so the per-epoch direction counts differ by at most one. Batches are
// homogeneous in source and shuffled among themselves.
std::vector<std::vector<StreamItem>> build_sft_epoch(const DatasetSplit& qa,
                                                     const DatasetSplit& sym,
                                                     const DatasetSplit& rel,
                                                     const std::map<SplitKind, double>& weights,
                                                     int batch_size, Rng& rng);

// Whether a D_sym record supervises A -> B (forward) rather than B -> A.
bool is_forward_supervision(const DataRecord& record);

// Raised when a step produces a non-finite loss or gradient. Carries the log
// up to and including the failing step for the diagnostic manifest.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, TrainLog log)
      : NumericError(what), log_(std::move(log)) {}
  const TrainLog& log() const { return log_; }

 private:
  TrainLog log_;
};

// Stage 1: full-sequence corruption of D_base records. Throws
// TrainingDiverged on a non-finite loss.
TrainLog pretrain(Denoiser<float>& model, const Vocabulary& vocab, const DatasetSplit& base,
                  const TrainConfig& cfg);

// Stage 2: prompt-conditioned SFT over QA, D_sym and D_rel. Empty splits
// (or zero weights) disable a source.
TrainLog sft(Denoiser<float>& model, const Vocabulary& vocab, const DatasetSplit& qa_train,
             const DatasetSplit& sym, const DatasetSplit& rel, const TrainConfig& cfg);

}  // namespace differ
