#pragma once

// Command-level orchestration shared by the CLI and the acceptance suite.
// Every command writes a manifest listing its inputs and outputs with
// content hashes.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "differ/corpus.hpp"
#include "differ/denoiser.hpp"
#include "differ/eval.hpp"
#include "differ/infer.hpp"
#include "differ/train.hpp"
#include "json.hpp"

namespace differ {

inline constexpr std::string_view kArtifactVersion = "differ 1.0.0";

class Manifest {
 public:
  Manifest(std::string command, std::string base_dir);

  void set_config(nlohmann::ordered_json config) { config_ = std::move(config); }
  void add_seed(const std::string& name, std::uint64_t seed) { seeds_[name] = seed; }
  void add_input(const std::string& path);
  void add_output(const std::string& path);
  void set_field(const std::string& key, nlohmann::ordered_json value) {
    extra_[key] = std::move(value);
  }
  void set_wall_clock(double seconds) { wall_clock_ = seconds; }

  // Paths are stored relative to base_dir. wall_clock_seconds is the only
  // field that varies between identical runs.
  nlohmann::ordered_json to_json(bool include_wall_clock = true) const;
  void save(const std::string& path) const;

 private:
  std::string relative(const std::string& path) const;

  std::string command_;
  std::string base_dir_;
  nlohmann::ordered_json config_ = nlohmann::ordered_json::object();
  std::map<std::string, std::uint64_t> seeds_;
  std::vector<std::pair<std::string, std::string>> inputs_;
  std::vector<std::pair<std::string, std::string>> outputs_;
  nlohmann::ordered_json extra_ = nlohmann::ordered_json::object();
  double wall_clock_ = 0.0;
};

// Manifest text with the wall-clock field removed, for run comparisons.
std::string manifest_fingerprint(const std::string& manifest_path);

// ---------------------------------------------------------------------------
// Dataset directories

struct GenDataOptions {
  std::string out;
  std::size_t n_facts = 1513;
  std::size_t n_sym = 200;
  std::size_t n_rel = 200;
  std::string relation = "parent";
  std::uint64_t seed = 0;
  bool force = false;
  bool sym_qa = true;  // include the two QA records per D_sym fact
};

// Writes facts.jsonl, base.jsonl, sym.jsonl, rel.jsonl,
// qa_train_<template>.jsonl (four), qa_eval.jsonl, vocab.txt and
// manifest.json. Refuses a non-empty directory unless `force`.
void gen_data(const GenDataOptions& opts);

struct Dataset {
  std::string dir;
  Vocabulary vocab;
  std::vector<FactTriple> facts;
  DatasetSplit base, sym, rel, qa_eval;
  std::map<Direction, DatasetSplit> qa_train;

  std::string path(const std::string& name) const;
};
Dataset load_dataset(const std::string& dir);

std::string qa_train_file(Direction d);

// ---------------------------------------------------------------------------
// Configuration file: {"model": {...}, "train": {...}, "sft": {...},
// "decode": {...}}. Every section and key is optional; flags given on the
// command line override file values.

struct RunConfig {
  DenoiserConfig model;
  TrainConfig pretrain = TrainConfig::defaults(Stage::pretrain);
  TrainConfig sft = TrainConfig::defaults(Stage::sft);
  DecodeConfig decode;

  static RunConfig load(const std::string& path);  // empty path -> defaults
  static RunConfig parse(std::string_view text);
  nlohmann::ordered_json to_json() const;
};

// ---------------------------------------------------------------------------
// Commands. Each returns the paths it wrote; the manifest is the last one.

struct PretrainOptions {
  std::string data;
  std::string config;
  std::optional<MaskMode> mask_mode;
  std::string out;  // checkpoint path; logs and manifest are written beside it
  std::optional<std::uint64_t> seed;
};
std::vector<std::string> cmd_pretrain(const PretrainOptions& opts);

struct SftOptions {
  std::string ckpt;
  std::string data;
  std::string config;
  Direction train_template = Direction::forward;
  bool use_sym = false;
  bool use_rel = false;
  std::optional<MaskMode> mask_mode;
  std::string out;
  std::optional<std::uint64_t> seed;
};
std::vector<std::string> cmd_sft(const SftOptions& opts);

// Checkpoint file expected per train template inside --ckpt-dir.
std::string sft_checkpoint_name(Direction d);

struct EvalOptions {
  std::string ckpt_dir;
  std::string data;
  std::string config;
  std::optional<int> decode_steps;
  std::string report;
  // Train templates to evaluate; all four unless restricted.
  std::vector<Direction> rows = {kDirections.begin(), kDirections.end()};
};
std::vector<std::string> cmd_eval(const EvalOptions& opts);

struct ErrorAnalysisOptions {
  std::string cases;
  std::string out;
};
std::vector<std::string> cmd_error_analysis(const ErrorAnalysisOptions& opts);

// Breakdowns written by error-analysis: "all", then one per query template.
std::vector<ErrorBreakdown> standard_breakdowns(std::span<const CaseRecord> cases);

// ---------------------------------------------------------------------------
// Full pipeline: gen-data, pretrain and SFT for the baseline and the DiffER
// variant, eval, error analysis and the reversal-curse summary.

struct ReproOptions {
  std::string out;
  std::string config;
  std::uint64_t seed = 0;
  std::size_t n_facts = 200;
  std::size_t n_sym = 50;
  std::size_t n_rel = 50;
  bool full_matrix = false;  // train all four templates instead of forward only
  bool force = false;
};

struct VariantSummary {
  double forward = 0.0;             // forward-template exact match, %
  double reverse = 0.0;             // reverse-template exact match, %
  double reverse_covered = 0.0;     // reverse on facts covered by D_sym
  double reverse_uncovered = 0.0;   // reverse on the remaining facts
};

struct ReproSummary {
  std::uint64_t seed = 0;
  VariantSummary baseline;
  VariantSummary differ;
  bool baseline_forward_ok = false;    // >= 90
  bool baseline_reverse_ok = false;    // <= 25
  bool differ_covered_ok = false;      // >= 80
  bool differ_uncovered_ok = false;    // >= baseline reverse on the same facts
  bool differ_forward_ok = false;      // within 2 points of baseline
  bool pass() const {
    return baseline_forward_ok && baseline_reverse_ok && differ_covered_ok &&
           differ_uncovered_ok && differ_forward_ok;
  }
  std::string to_text() const;
};

ReproSummary summarize(std::uint64_t seed, std::span<const CaseRecord> baseline,
                       std::span<const CaseRecord> differ,
                       const std::vector<std::int64_t>& covered_fact_ids);

ReproSummary cmd_repro(const ReproOptions& opts);

}  // namespace differ
