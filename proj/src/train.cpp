#include "differ/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "differ/kernels.hpp"
#include "json.hpp"

namespace differ {

std::string_view to_string(Stage s) { return s == Stage::pretrain ? "pretrain" : "sft"; }

Stage parse_stage(std::string_view s) {
  if (s == "pretrain") return Stage::pretrain;
  if (s == "sft") return Stage::sft;
  throw UsageError("unknown stage: '" + std::string(s) + "'");
}

TrainConfig TrainConfig::defaults(Stage stage) {
  TrainConfig c;
  c.stage = stage;
  c.epochs = stage == Stage::pretrain ? 30 : 50;
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw UsageError("epochs must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw UsageError("learning_rate must be positive");
  }
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
    throw UsageError("warmup_ratio must lie in [0, 1)");
  }
  if (weight_decay < 0.0) throw UsageError("weight_decay must be non-negative");
  if (batch_size < 1) throw UsageError("batch_size must be at least 1");
  if (grad_clip < 0.0) throw UsageError("grad_clip must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw UsageError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw UsageError("adam_eps must be positive");
  if (response_len < 1) throw UsageError("response_len must be at least 1");
  if (!mix_weights.empty()) {
    double total = 0.0;
    for (const auto& [kind, w] : mix_weights) {
      if (kind != SplitKind::qa_train && kind != SplitKind::sym && kind != SplitKind::rel) {
        throw UsageError("mix_weights accepts qa_train, sym and rel only");
      }
      if (!(w >= 0.0) || !std::isfinite(w)) throw UsageError("mix_weights must be non-negative");
      total += w;
    }
    if (total <= 0.0) throw UsageError("mix_weights must not all be zero");
  }
}

std::string TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["stage"] = std::string(to_string(stage));
  j["epochs"] = epochs;
  j["learning_rate"] = learning_rate;
  j["warmup_ratio"] = warmup_ratio;
  j["weight_decay"] = weight_decay;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["mask_mode"] = std::string(to_string(mask_mode));
  nlohmann::ordered_json w = nlohmann::ordered_json::object();
  for (const auto& [kind, v] : mix_weights) w[std::string(to_string(kind))] = v;
  j["mix_weights"] = w;
  j["loss_weighting"] = std::string(to_string(loss_weighting));
  j["grad_clip"] = grad_clip;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_eps"] = adam_eps;
  j["response_len"] = response_len;
  return j.dump();
}

TrainConfig TrainConfig::from_json(std::string_view text, TrainConfig base) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (!j.is_object()) throw UsageError("train config must be a JSON object");
    TrainConfig c = base;
    if (j.contains("stage")) c.stage = parse_stage(j["stage"].get<std::string>());
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.warmup_ratio = j.value("warmup_ratio", c.warmup_ratio);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    if (j.contains("mask_mode")) c.mask_mode = parse_mask_mode(j["mask_mode"].get<std::string>());
    if (j.contains("mix_weights")) {
      c.mix_weights.clear();
      for (const auto& [k, v] : j["mix_weights"].items()) {
        c.mix_weights[parse_split_kind(k == "qa" ? "qa_train" : k)] = v.get<double>();
      }
    }
    if (j.contains("loss_weighting")) {
      c.loss_weighting = parse_loss_weighting(j["loss_weighting"].get<std::string>());
    }
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.response_len = j.value("response_len", c.response_len);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad train config: ") + e.what());
  } catch (const DataError& e) {
    throw UsageError(std::string("bad train config: ") + e.what());
  }
}

double lr_schedule(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg) {
  if (step < 0 || step > total_steps) throw UsageError("lr_schedule: step out of range");
  const double warmup = cfg.warmup_ratio * static_cast<double>(total_steps);
  if (warmup <= 0.0 || static_cast<double>(step) >= warmup) return cfg.learning_rate;
  return cfg.learning_rate * static_cast<double>(step) / warmup;
}

template <class T>
AdamW<T>::AdamW(std::span<const ParamEntry> entries, std::size_t n_params, double beta1,
                double beta2, double eps, double weight_decay)
    : entries_(entries.begin(), entries.end()),
      m_(n_params, T(0)),
      v_(n_params, T(0)),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      weight_decay_(weight_decay) {}

template <class T>
void AdamW<T>::step(std::span<T> params, std::span<const T> grads, double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw DataError("optimizer: parameter/gradient size mismatch");
  }
  ++t_;
  kernels::AdamWParams<T> p{};
  p.lr = static_cast<T>(lr);
  p.beta1 = static_cast<T>(beta1_);
  p.beta2 = static_cast<T>(beta2_);
  p.eps = static_cast<T>(eps_);
  p.bias_correction1 = static_cast<T>(1.0 - std::pow(beta1_, static_cast<double>(t_)));
  p.bias_correction2 = static_cast<T>(1.0 - std::pow(beta2_, static_cast<double>(t_)));
  for (const auto& e : entries_) {
    p.weight_decay = e.decay ? static_cast<T>(weight_decay_) : T(0);
    kernels::adamw<T>(params.subspan(e.offset, e.size), grads.subspan(e.offset, e.size),
                      std::span<T>(m_).subspan(e.offset, e.size),
                      std::span<T>(v_).subspan(e.offset, e.size), p);
  }
}

template class AdamW<float>;
template class AdamW<double>;

double clip_grad_norm(std::span<float> grads, double max_norm) {
  double sq = 0.0;
  for (float g : grads) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const auto s = static_cast<float>(max_norm / norm);
    for (float& g : grads) g *= s;
  }
  return norm;
}

std::string TrainLog::steps_csv() const {
  std::string out = "step,stage,split_kind,loss,lr,grad_norm,partial_entities,masked_positions\n";
  char buf[256];
  for (const auto& s : steps) {
    std::snprintf(buf, sizeof buf, "%lld,%s,%s,%.9g,%.9g,%.9g,%zu,%zu\n",
                  static_cast<long long>(s.step), std::string(to_string(s.stage)).c_str(),
                  s.split_kind.c_str(), s.loss, s.lr, s.grad_norm, s.partial_entities,
                  s.masked_positions);
    out += buf;
  }
  return out;
}

std::string TrainLog::audit_csv() const {
  std::string out =
      "epoch,qa_items,sym_items,rel_items,sym_forward,sym_backward,rel_outside_loss_bits\n";
  char buf[256];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "%d,%zu,%zu,%zu,%zu,%zu,%zu\n", e.epoch, e.qa_items,
                  e.sym_items, e.rel_items, e.sym_forward, e.sym_backward,
                  e.rel_outside_loss_bits);
    out += buf;
  }
  return out;
}

AnnotatedSequence encode_for_training(const DataRecord& record, const Vocabulary& vocab,
                                      std::size_t response_len) {
  AnnotatedSequence seq = encode(record, vocab);
  if (!record.template_id.starts_with("qa-")) return seq;
  const std::size_t response = seq.size() - seq.prompt_len;
  if (response > response_len) {
    throw DataError("answer of " + std::to_string(response) + " tokens exceeds response_len " +
                    std::to_string(response_len) + ": " + record.text);
  }
  seq.ids.resize(seq.prompt_len + response_len, Vocabulary::kEos);
  return seq;
}

bool is_forward_supervision(const DataRecord& record) {
  return record.direction == Direction::forward || record.direction == Direction::paraphrase;
}

namespace {

// Cycles through seeded permutations of `units`, emitting whole units until
// at least `count` items are out, then truncates to `count`.
std::vector<std::size_t> draw_items(const std::vector<std::vector<std::size_t>>& units,
                                    std::size_t count, Rng& rng) {
  std::vector<std::size_t> out;
  if (units.empty() || count == 0) return out;
  std::vector<std::size_t> order(units.size());
  while (out.size() < count) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    for (std::size_t u : order) {
      for (std::size_t i : units[u]) out.push_back(i);
      if (out.size() >= count) break;
    }
  }
  out.resize(count);
  return out;
}

// D_sym units: each forward record paired with the backward record of the
// same fact and kind (declarative or QA). Leftovers become singleton units.
std::vector<std::vector<std::size_t>> sym_units(const DatasetSplit& sym) {
  std::vector<std::vector<std::size_t>> units;
  std::vector<bool> used(sym.records.size(), false);
  for (std::size_t i = 0; i < sym.records.size(); ++i) {
    if (used[i] || !is_forward_supervision(sym.records[i])) continue;
    const auto& a = sym.records[i];
    const bool a_qa = a.template_id.starts_with("qa-");
    for (std::size_t j = 0; j < sym.records.size(); ++j) {
      const auto& b = sym.records[j];
      if (used[j] || is_forward_supervision(b) || b.triple_ref != a.triple_ref ||
          b.template_id.starts_with("qa-") != a_qa) {
        continue;
      }
      units.push_back({i, j});
      used[i] = used[j] = true;
      break;
    }
  }
  for (std::size_t i = 0; i < sym.records.size(); ++i) {
    if (!used[i]) units.push_back({i});
  }
  return units;
}

std::vector<std::vector<std::size_t>> singleton_units(std::size_t n) {
  std::vector<std::vector<std::size_t>> units(n);
  for (std::size_t i = 0; i < n; ++i) units[i] = {i};
  return units;
}

}  // namespace

std::vector<std::vector<StreamItem>> build_sft_epoch(const DatasetSplit& qa,
                                                     const DatasetSplit& sym,
                                                     const DatasetSplit& rel,
                                                     const std::map<SplitKind, double>& weights,
                                                     int batch_size, Rng& rng) {
  if (batch_size < 1) throw UsageError("batch_size must be at least 1");
  const std::array<std::pair<SplitKind, const DatasetSplit*>, 3> sources = {
      {{SplitKind::qa_train, &qa}, {SplitKind::sym, &sym}, {SplitKind::rel, &rel}}};

  std::array<double, 3> w{};
  std::size_t total = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t n = sources[s].second->records.size();
    if (n == 0) continue;
    total += n;
    if (weights.empty()) {
      w[s] = static_cast<double>(n);
    } else if (auto it = weights.find(sources[s].first); it != weights.end()) {
      w[s] = it->second;
    }
  }
  const double wsum = w[0] + w[1] + w[2];
  if (total == 0 || wsum <= 0.0) throw DataError("SFT stream has no enabled source");

  std::vector<std::vector<StreamItem>> batches;
  for (std::size_t s = 0; s < 3; ++s) {
    if (w[s] <= 0.0) continue;
    const auto count =
        static_cast<std::size_t>(std::llround(static_cast<double>(total) * w[s] / wsum));
    const auto& split = *sources[s].second;
    const auto units = sources[s].first == SplitKind::sym ? sym_units(split)
                                                         : singleton_units(split.records.size());
    const auto items = draw_items(units, count, rng);
    for (std::size_t i = 0; i < items.size(); i += static_cast<std::size_t>(batch_size)) {
      std::vector<StreamItem> b;
      const std::size_t end = std::min(items.size(), i + static_cast<std::size_t>(batch_size));
      for (std::size_t k = i; k < end; ++k) b.push_back({sources[s].first, items[k]});
      batches.push_back(std::move(b));
    }
  }
  rng.shuffle(batches);
  return batches;
}

namespace {

struct Example {
  AnnotatedSequence seq;
  std::vector<TokenSpan> resolved_entities;
};

std::vector<Example> prepare(const DatasetSplit& split, const Vocabulary& vocab,
                             std::size_t response_len, std::size_t max_len) {
  std::vector<Example> out;
  out.reserve(split.records.size());
  for (const auto& r : split.records) {
    Example e{encode_for_training(r, vocab, response_len), {}};
    if (e.seq.size() > max_len) {
      throw DataError("record longer than the model's max_len (" + std::to_string(max_len) +
                      "): " + r.text);
    }
    e.resolved_entities = resolve_spans(e.seq.entity_spans);
    out.push_back(std::move(e));
  }
  return out;
}

class Trainer {
 public:
  Trainer(Denoiser<float>& model, const TrainConfig& cfg, std::int64_t total_steps)
      : model_(model),
        cfg_(cfg),
        total_steps_(total_steps),
        opt_(model.entries(), model.params().size(), cfg.beta1, cfg.beta2, cfg.adam_eps,
             cfg.weight_decay) {}

  // One optimizer update on an already-corrupted batch.
  void update(std::span<const CorruptedSequence> batch, std::string split_kind,
              std::size_t partial_entities) {
    const auto lg = loss_and_grads(model_, batch, cfg_.loss_weighting, grads_);
    ++local_step_;
    StepLog s;
    s.step = model_.step + 1;
    s.stage = cfg_.stage;
    s.split_kind = std::move(split_kind);
    s.loss = lg.loss;
    s.lr = lr_schedule(local_step_, total_steps_, cfg_);
    s.masked_positions = lg.masked_positions;
    s.partial_entities = partial_entities;
    s.grad_norm = clip_grad_norm(grads_, cfg_.grad_clip);
    log_.steps.push_back(s);
    if (!std::isfinite(s.loss) || !std::isfinite(s.grad_norm)) {
      throw TrainingDiverged("non-finite loss at step " + std::to_string(s.step) + " (" +
                                 std::string(to_string(cfg_.stage)) + ", " + s.split_kind + ")",
                             log_);
    }
    opt_.step(model_.params(), grads_, s.lr);
    ++model_.step;
    if (!model_.all_finite()) {
      throw TrainingDiverged("non-finite parameters after step " + std::to_string(s.step), log_);
    }
  }

  TrainLog& log() { return log_; }

 private:
  Denoiser<float>& model_;
  const TrainConfig& cfg_;
  std::int64_t total_steps_;
  std::int64_t local_step_ = 0;
  AdamW<float> opt_;
  std::vector<float> grads_;
  TrainLog log_;
};

std::int64_t batches_per_epoch(std::size_t n, int batch_size) {
  return static_cast<std::int64_t>((n + static_cast<std::size_t>(batch_size) - 1) /
                                   static_cast<std::size_t>(batch_size));
}

}  // namespace

TrainLog pretrain(Denoiser<float>& model, const Vocabulary& vocab, const DatasetSplit& base,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.stage != Stage::pretrain) throw UsageError("pretrain needs a pretrain-stage config");
  if (base.records.empty()) throw DataError("pretraining split is empty");
  if (model.config().vocab_size != static_cast<int>(vocab.size())) {
    throw DataError("model vocabulary size does not match the vocabulary file");
  }
  const auto examples =
      prepare(base, vocab, cfg.response_len, static_cast<std::size_t>(model.config().max_len));
  const std::int64_t total = batches_per_epoch(examples.size(), cfg.batch_size) * cfg.epochs;
  Trainer trainer(model, cfg, total);
  Rng order_rng(derive_seed(cfg.seed, "pretrain-order"));
  Rng mask_rng(derive_seed(cfg.seed, "pretrain-mask"));

  std::vector<std::size_t> order(examples.size());
  std::vector<CorruptedSequence> batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    order_rng.shuffle(order);
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg.batch_size)) {
      batch.clear();
      std::size_t partial = 0;
      const std::size_t end = std::min(order.size(), i + static_cast<std::size_t>(cfg.batch_size));
      for (std::size_t k = i; k < end; ++k) {
        // Stage 1 sees whole sequences: prompt_len is forced to 0.
        AnnotatedSequence seq = examples[order[k]].seq;
        seq.prompt_len = 0;
        batch.push_back(corrupt_for_training(seq, cfg.mask_mode, false, {}, mask_rng));
        partial += count_partial_spans(examples[order[k]].resolved_entities, batch.back().mask);
      }
      trainer.update(batch, "base", partial);
    }
    EpochAudit a;
    a.epoch = epoch + 1;
    trainer.log().epochs.push_back(a);
  }
  return std::move(trainer.log());
}

TrainLog sft(Denoiser<float>& model, const Vocabulary& vocab, const DatasetSplit& qa_train,
             const DatasetSplit& sym, const DatasetSplit& rel, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.stage != Stage::sft) throw UsageError("sft needs an sft-stage config");
  if (model.config().vocab_size != static_cast<int>(vocab.size())) {
    throw DataError("model vocabulary size does not match the vocabulary file");
  }
  for (const auto& r : rel.records) {
    if (r.relation_spans.empty()) {
      throw DataError("D_rel record without relation spans: " + r.text);
    }
  }
  const auto max_len = static_cast<std::size_t>(model.config().max_len);
  const auto qa_ex = prepare(qa_train, vocab, cfg.response_len, max_len);
  const auto sym_ex = prepare(sym, vocab, cfg.response_len, max_len);
  const auto rel_ex = prepare(rel, vocab, cfg.response_len, max_len);

  Rng stream_rng(derive_seed(cfg.seed, "sft-stream"));
  Rng mask_rng(derive_seed(cfg.seed, "sft-mask"));

  // Every epoch has the same number of batches, so the schedule length is
  // known up front from a throwaway draw.
  std::int64_t per_epoch = 0;
  {
    Rng probe(derive_seed(cfg.seed, "sft-stream"));
    per_epoch = static_cast<std::int64_t>(
        build_sft_epoch(qa_train, sym, rel, cfg.mix_weights, cfg.batch_size, probe).size());
  }
  Trainer trainer(model, cfg, per_epoch * cfg.epochs);

  std::vector<CorruptedSequence> batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches =
        build_sft_epoch(qa_train, sym, rel, cfg.mix_weights, cfg.batch_size, stream_rng);
    EpochAudit audit;
    audit.epoch = epoch + 1;
    for (const auto& items : batches) {
      batch.clear();
      std::size_t partial = 0;
      for (const auto& item : items) {
        const Example* ex = nullptr;
        std::span<const TokenSpan> restrict_to;
        switch (item.kind) {
          case SplitKind::qa_train:
            ex = &qa_ex[item.index];
            ++audit.qa_items;
            break;
          case SplitKind::sym:
            ex = &sym_ex[item.index];
            ++audit.sym_items;
            ++(is_forward_supervision(sym.records[item.index]) ? audit.sym_forward
                                                                : audit.sym_backward);
            break;
          case SplitKind::rel:
            ex = &rel_ex[item.index];
            restrict_to = ex->seq.relation_spans;
            ++audit.rel_items;
            break;
          default:
            throw DataError("unexpected split kind in SFT stream");
        }
        batch.push_back(corrupt_for_training(ex->seq, cfg.mask_mode, true, restrict_to, mask_rng));
        partial += count_partial_spans(ex->resolved_entities, batch.back().mask);
        if (item.kind == SplitKind::rel) {
          for (std::size_t p = 0; p < batch.back().mask.bits.size(); ++p) {
            if (!batch.back().mask.bits[p]) continue;
            const bool inside = std::any_of(restrict_to.begin(), restrict_to.end(),
                                            [&](const TokenSpan& s) { return s.contains(static_cast<std::int32_t>(p)); });
            if (!inside) ++audit.rel_outside_loss_bits;
          }
        }
      }
      trainer.update(batch, std::string(to_string(items.front().kind)), partial);
    }
    trainer.log().epochs.push_back(audit);
  }
  return std::move(trainer.log());
}

}  // namespace differ
