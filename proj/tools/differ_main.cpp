// differ: data generation, training, evaluation and the full reproduction
// pipeline as subcommands of one binary.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "differ/pipeline.hpp"

namespace {

using namespace differ;

std::optional<MaskMode> mask_mode_flag(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return parse_mask_mode(s);
}

std::optional<std::uint64_t> seed_flag(const CLI::Option* opt, std::uint64_t value) {
  if (opt->count() == 0) return std::nullopt;
  return value;
}

int run(int argc, char** argv) {
  CLI::App app{"Whole-entity masking and symmetric augmentation for masked diffusion LMs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kArtifactVersion));

  // gen-data
  GenDataOptions gd;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic fact corpus");
  gen->add_option("--out", gd.out, "Output directory")->required();
  gen->add_option("--n-facts", gd.n_facts, "Number of base facts")->capture_default_str();
  gen->add_option("--n-sym", gd.n_sym, "Facts in the symmetric augmentation split")
      ->capture_default_str();
  gen->add_option("--n-rel", gd.n_rel, "Facts in the inverse-relation chain split")
      ->capture_default_str();
  gen->add_option("--relation", gd.relation, "parent | ceo")
      ->check(CLI::IsMember({"parent", "ceo"}))
      ->capture_default_str();
  gen->add_option("--seed", gd.seed, "Seed")->capture_default_str();
  gen->add_option("--sym-qa", gd.sym_qa, "Include QA pairs in the symmetric split")
      ->capture_default_str();
  gen->add_flag("--force", gd.force, "Overwrite a non-empty output directory");

  // pretrain
  PretrainOptions po;
  std::string po_mask;
  std::uint64_t po_seed = 0;
  auto* pre = app.add_subcommand("pretrain", "Stage 1: continued pretraining on base facts");
  pre->add_option("--data", po.data, "Dataset directory")->required();
  pre->add_option("--config", po.config, "JSON config file");
  pre->add_option("--mask-mode", po_mask, "token | whole-entity")
      ->check(CLI::IsMember({"token", "whole-entity"}));
  pre->add_option("--out", po.out, "Checkpoint to write")->required();
  auto* po_seed_opt = pre->add_option("--seed", po_seed, "Seed (overrides the config)");

  // sft
  SftOptions so;
  std::string so_mask;
  std::string so_template = "forward";
  std::uint64_t so_seed = 0;
  auto* sftc = app.add_subcommand("sft", "Stage 2: prompt-conditioned fine-tuning");
  sftc->add_option("--ckpt", so.ckpt, "Input checkpoint")->required();
  sftc->add_option("--data", so.data, "Dataset directory")->required();
  sftc->add_option("--config", so.config, "JSON config file");
  sftc->add_option("--train-template", so_template,
                   "forward | paraphrase | rev-paraphrase | reverse")
      ->check(CLI::IsMember({"forward", "paraphrase", "rev-paraphrase", "reverse"}))
      ->capture_default_str();
  sftc->add_option("--use-sym", so.use_sym, "Mix in the symmetric split")->capture_default_str();
  sftc->add_option("--use-rel", so.use_rel, "Mix in the inverse-relation split")
      ->capture_default_str();
  sftc->add_option("--mask-mode", so_mask, "token | whole-entity")
      ->check(CLI::IsMember({"token", "whole-entity"}));
  sftc->add_option("--out", so.out, "Checkpoint to write")->required();
  auto* so_seed_opt = sftc->add_option("--seed", so_seed, "Seed (overrides the config)");

  // eval
  EvalOptions eo;
  int decode_steps = 0;
  std::vector<std::string> eo_rows;
  auto* ev = app.add_subcommand("eval", "Instruction matrix over four SFT checkpoints");
  ev->add_option("--ckpt-dir", eo.ckpt_dir, "Directory with sft_<template>.dfer files")
      ->required();
  ev->add_option("--data", eo.data, "Dataset directory")->required();
  ev->add_option("--config", eo.config, "JSON config file");
  auto* steps_opt = ev->add_option("--decode-steps", decode_steps, "Denoising steps");
  ev->add_option("--report", eo.report, "Report directory")->required();
  ev->add_option("--rows", eo_rows, "Evaluate only these train templates")
      ->check(CLI::IsMember({"forward", "paraphrase", "rev-paraphrase", "reverse"}));

  // error-analysis
  ErrorAnalysisOptions ea;
  auto* err = app.add_subcommand("error-analysis", "Error taxonomy from per-case results");
  err->add_option("--cases", ea.cases, "Per-case JSONL from eval")->required();
  err->add_option("--out", ea.out, "Breakdown CSV to write")->required();

  // repro
  ReproOptions ro;
  auto* rep = app.add_subcommand("repro", "Full pipeline for one seed with the summary report");
  rep->add_option("--out", ro.out, "Output directory")->required();
  rep->add_option("--config", ro.config, "JSON config file");
  rep->add_option("--seed", ro.seed, "Seed")->capture_default_str();
  rep->add_option("--n-facts", ro.n_facts, "Number of facts")->capture_default_str();
  rep->add_option("--n-sym", ro.n_sym, "Symmetric split size")->capture_default_str();
  rep->add_option("--n-rel", ro.n_rel, "Chain split size")->capture_default_str();
  rep->add_flag("--full-matrix", ro.full_matrix, "Train and evaluate all four templates");
  rep->add_flag("--force", ro.force, "Reuse a non-empty output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (*gen) {
    gen_data(gd);
  } else if (*pre) {
    po.mask_mode = mask_mode_flag(po_mask);
    po.seed = seed_flag(po_seed_opt, po_seed);
    cmd_pretrain(po);
  } else if (*sftc) {
    so.mask_mode = mask_mode_flag(so_mask);
    so.seed = seed_flag(so_seed_opt, so_seed);
    so.train_template = parse_direction(so_template);
    cmd_sft(so);
  } else if (*ev) {
    if (steps_opt->count() > 0) eo.decode_steps = decode_steps;
    if (!eo_rows.empty()) {
      eo.rows.clear();
      for (const auto& r : eo_rows) eo.rows.push_back(parse_direction(r));
    }
    cmd_eval(eo);
  } else if (*err) {
    cmd_error_analysis(ea);
  } else if (*rep) {
    const ReproSummary s = cmd_repro(ro);
    std::cout << s.to_text();
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const differ::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return differ::kExitUsage;
  } catch (const differ::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return differ::kExitNumeric;
  } catch (const differ::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return differ::kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return differ::kExitData;
  }
}
