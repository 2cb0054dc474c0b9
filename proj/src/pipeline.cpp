#include "differ/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>

namespace differ {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string join(const fs::path& dir, const std::string& name) { return (dir / name).string(); }

// "<dir>/<stem>" for files written next to a checkpoint.
std::string sibling(const std::string& ckpt, const std::string& suffix) {
  fs::path p(ckpt);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) throw DataError("cannot create directory " + parent.string() + ": " + ec.message());
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Manifest

Manifest::Manifest(std::string command, std::string base_dir)
    : command_(std::move(command)), base_dir_(std::move(base_dir)) {}

std::string Manifest::relative(const std::string& path) const {
  std::error_code ec;
  auto rel = fs::relative(fs::absolute(path), fs::absolute(base_dir_), ec);
  return ec || rel.empty() ? path : rel.generic_string();
}

// Nested manifests are hashed without their wall-clock field so the
// enclosing manifest stays reproducible.
static std::string content_hash(const std::string& path) {
  if (path.ends_with("manifest.json")) return sha256_hex(manifest_fingerprint(path));
  return sha256_file(path);
}

void Manifest::add_input(const std::string& path) {
  inputs_.emplace_back(relative(path), content_hash(path));
}

void Manifest::add_output(const std::string& path) {
  outputs_.emplace_back(relative(path), content_hash(path));
}

ordered_json Manifest::to_json(bool include_wall_clock) const {
  ordered_json j;
  j["artifact_version"] = std::string(kArtifactVersion);
  j["command"] = command_;
  j["config"] = config_;
  ordered_json seeds = ordered_json::object();
  for (const auto& [k, v] : seeds_) seeds[k] = v;
  j["seeds"] = seeds;
  auto files = [](const std::vector<std::pair<std::string, std::string>>& list) {
    ordered_json arr = ordered_json::array();
    for (const auto& [path, hash] : list) arr.push_back({{"path", path}, {"sha256", hash}});
    return arr;
  };
  j["inputs"] = files(inputs_);
  j["outputs"] = files(outputs_);
  for (const auto& [k, v] : extra_.items()) j[k] = v;
  if (include_wall_clock) j["wall_clock_seconds"] = wall_clock_;
  return j;
}

void Manifest::save(const std::string& path) const {
  ensure_parent(path);
  write_file(path, to_json().dump(2) + "\n");
}

std::string manifest_fingerprint(const std::string& manifest_path) {
  try {
    auto j = ordered_json::parse(read_file(manifest_path));
    j.erase("wall_clock_seconds");
    return j.dump();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad manifest " + manifest_path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Datasets

std::string qa_train_file(Direction d) {
  return "qa_train_" + std::string(to_string(d)) + ".jsonl";
}

std::string Dataset::path(const std::string& name) const { return join(dir, name); }

void gen_data(const GenDataOptions& opts) {
  Stopwatch clock;
  if (opts.out.empty()) throw UsageError("--out is required");
  if (opts.n_facts < 1) throw UsageError("--n-facts must be at least 1");
  if (opts.n_sym > opts.n_facts || opts.n_rel > opts.n_facts) {
    throw DataError("augmentation subset larger than the fact list");
  }
  if (find_relation(opts.relation) == nullptr) {
    throw UsageError("unknown relation: '" + opts.relation + "'");
  }
  const fs::path dir(opts.out);
  if (fs::exists(dir) && !fs::is_empty(dir) && !opts.force) {
    throw UsageError("output directory " + opts.out + " is not empty (use --force)");
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + opts.out + ": " + ec.message());

  const TemplateSet templates = TemplateSet::for_relation(opts.relation);
  const auto facts = generate_facts(opts.n_facts, opts.relation, derive_seed(opts.seed, "facts"));
  // D_sym and D_rel share one seeded draw, so with equal sizes they cover
  // the same facts.
  const std::uint64_t aug_seed = derive_seed(opts.seed, "augment");
  const auto sym_facts = sample_facts(facts, opts.n_sym, aug_seed);
  const auto rel_facts = sample_facts(facts, opts.n_rel, aug_seed);

  std::vector<DatasetSplit> all;
  all.push_back(build_base_split(facts, templates));
  all.push_back(build_sym_split(sym_facts, templates, opts.sym_qa));
  all.push_back(build_rel_split(rel_facts, templates));
  std::vector<std::pair<std::string, std::size_t>> files = {
      {"base.jsonl", 0}, {"sym.jsonl", 1}, {"rel.jsonl", 2}};
  for (Direction d : kDirections) {
    auto qa = build_qa_splits(facts, templates, d);
    files.emplace_back(qa_train_file(d), all.size());
    all.push_back(std::move(qa.train));
    if (d == Direction::forward) {
      files.emplace_back("qa_eval.jsonl", all.size());
      all.push_back(std::move(qa.eval));
    }
  }
  const Vocabulary vocab = build_vocab(all);

  Manifest m("gen-data", opts.out);
  ordered_json cfg;
  cfg["n_facts"] = opts.n_facts;
  cfg["n_sym"] = opts.n_sym;
  cfg["n_rel"] = opts.n_rel;
  cfg["relation"] = opts.relation;
  cfg["sym_qa"] = opts.sym_qa;
  m.set_config(cfg);
  m.add_seed("seed", opts.seed);

  const std::string facts_path = join(dir, "facts.jsonl");
  write_file(facts_path, facts_to_jsonl(facts));
  m.add_output(facts_path);
  for (const auto& [name, idx] : files) {
    const std::string p = join(dir, name);
    save_split(all[idx], p);
    m.add_output(p);
  }
  const std::string vocab_path = join(dir, "vocab.txt");
  vocab.save(vocab_path);
  m.add_output(vocab_path);
  m.set_field("vocab_size", vocab.size());
  m.set_field("vocab_hash", vocab.hash());
  m.set_wall_clock(clock.seconds());
  m.save(join(dir, "manifest.json"));
}

Dataset load_dataset(const std::string& dir) {
  if (dir.empty()) throw UsageError("--data is required");
  if (!fs::is_directory(dir)) throw DataError("no dataset directory at " + dir);
  Dataset d{dir, Vocabulary::load(join(dir, "vocab.txt")), {}, {}, {}, {}, {}, {}};
  d.facts = facts_from_jsonl(read_file(join(dir, "facts.jsonl")));
  d.base = load_split(join(dir, "base.jsonl"), SplitKind::base);
  d.sym = load_split(join(dir, "sym.jsonl"), SplitKind::sym);
  d.rel = load_split(join(dir, "rel.jsonl"), SplitKind::rel);
  d.qa_eval = load_split(join(dir, "qa_eval.jsonl"), SplitKind::qa_eval);
  for (Direction t : kDirections) {
    d.qa_train[t] = load_split(join(dir, qa_train_file(t)), SplitKind::qa_train);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

DecodeConfig decode_from_json(const nlohmann::json& j, DecodeConfig c) {
  c.steps = j.value("steps", c.steps);
  if (j.contains("strategy")) c.strategy = parse_decode_strategy(j["strategy"].get<std::string>());
  c.response_len = j.value("response_len", c.response_len);
  c.temperature = j.value("temperature", c.temperature);
  c.seed = j.value("seed", c.seed);
  return c;
}

}  // namespace

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    if (!j.is_object()) throw UsageError("config must be a JSON object");
    for (const auto& [key, _] : j.items()) {
      if (key != "model" && key != "train" && key != "sft" && key != "decode") {
        throw UsageError("unknown config section '" + key + "'");
      }
    }
    if (j.contains("model")) {
      c.model = DenoiserConfig::from_json(j["model"].dump());
    }
    if (j.contains("train")) c.pretrain = TrainConfig::from_json(j["train"].dump(), c.pretrain);
    if (j.contains("sft")) c.sft = TrainConfig::from_json(j["sft"].dump(), c.sft);
    if (j.contains("decode")) c.decode = decode_from_json(j["decode"], c.decode);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad config: ") + e.what());
  } catch (const DataError& e) {
    throw UsageError(std::string("bad config: ") + e.what());
  }
  c.pretrain.stage = Stage::pretrain;
  c.sft.stage = Stage::sft;
  c.decode.response_len = c.sft.response_len;
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return parse(read_file(path));
}

ordered_json RunConfig::to_json() const {
  ordered_json j;
  j["model"] = ordered_json::parse(model.to_json());
  j["train"] = ordered_json::parse(pretrain.to_json());
  j["sft"] = ordered_json::parse(sft.to_json());
  ordered_json d;
  d["steps"] = decode.steps;
  d["strategy"] = std::string(to_string(decode.strategy));
  d["response_len"] = decode.response_len;
  d["temperature"] = decode.temperature;
  d["seed"] = decode.seed;
  j["decode"] = d;
  return j;
}

// ---------------------------------------------------------------------------
// pretrain / sft

namespace {

// Writes the step log, the audit log and the manifest next to `ckpt`.
std::vector<std::string> write_training_outputs(Manifest& m, const std::string& ckpt,
                                                const TrainLog& log, bool wrote_ckpt,
                                                const Stopwatch& clock) {
  std::vector<std::string> out;
  if (wrote_ckpt) {
    m.add_output(ckpt);
    out.push_back(ckpt);
  }
  const std::string steps = sibling(ckpt, ".steps.csv");
  const std::string audit = sibling(ckpt, ".audit.csv");
  write_file(steps, log.steps_csv());
  write_file(audit, log.audit_csv());
  m.add_output(steps);
  m.add_output(audit);
  out.push_back(steps);
  out.push_back(audit);
  const std::string manifest = sibling(ckpt, ".manifest.json");
  m.set_wall_clock(clock.seconds());
  m.save(manifest);
  out.push_back(manifest);
  return out;
}

// Runs `train`; on divergence the partial log and a manifest marked
// "diverged" are written before the error propagates.
template <class Fn>
std::vector<std::string> run_training(Manifest& m, const std::string& ckpt,
                                      const Denoiser<float>& model, const Vocabulary& vocab,
                                      const Stopwatch& clock, Fn&& train) {
  TrainLog log;
  try {
    log = train();
  } catch (const TrainingDiverged& e) {
    m.set_field("status", "diverged");
    m.set_field("error", e.what());
    write_training_outputs(m, ckpt, e.log(), false, clock);
    throw;
  }
  m.set_field("status", "ok");
  m.set_field("steps", model.step);
  save_checkpoint(model, vocab.hash(), ckpt);
  return write_training_outputs(m, ckpt, log, true, clock);
}

void add_dataset_inputs(Manifest& m, const Dataset& d, std::initializer_list<std::string> files) {
  m.add_input(d.path("vocab.txt"));
  for (const auto& f : files) m.add_input(d.path(f));
}

}  // namespace

std::vector<std::string> cmd_pretrain(const PretrainOptions& opts) {
  Stopwatch clock;
  if (opts.out.empty()) throw UsageError("--out is required");
  RunConfig rc = RunConfig::load(opts.config);
  if (opts.mask_mode) rc.pretrain.mask_mode = *opts.mask_mode;
  if (opts.seed) rc.pretrain.seed = *opts.seed;
  const Dataset data = load_dataset(opts.data);
  rc.model.vocab_size = static_cast<int>(data.vocab.size());
  rc.model.validate();
  rc.pretrain.validate();
  ensure_parent(opts.out);

  Denoiser<float> model(rc.model, derive_seed(rc.pretrain.seed, "model"));
  Manifest m("pretrain", fs::path(opts.out).parent_path().string());
  ordered_json cfg;
  cfg["model"] = ordered_json::parse(rc.model.to_json());
  cfg["train"] = ordered_json::parse(rc.pretrain.to_json());
  m.set_config(cfg);
  m.add_seed("seed", rc.pretrain.seed);
  m.set_field("vocab_hash", data.vocab.hash());
  add_dataset_inputs(m, data, {"base.jsonl"});
  return run_training(m, opts.out, model, data.vocab, clock,
                      [&] { return pretrain(model, data.vocab, data.base, rc.pretrain); });
}

std::vector<std::string> cmd_sft(const SftOptions& opts) {
  Stopwatch clock;
  if (opts.out.empty()) throw UsageError("--out is required");
  if (opts.ckpt.empty()) throw UsageError("--ckpt is required");
  RunConfig rc = RunConfig::load(opts.config);
  if (opts.mask_mode) rc.sft.mask_mode = *opts.mask_mode;
  if (opts.seed) rc.sft.seed = *opts.seed;
  rc.sft.validate();
  const Dataset data = load_dataset(opts.data);
  LoadedCheckpoint loaded = load_checkpoint(opts.ckpt, data.vocab.hash());
  Denoiser<float>& model = loaded.model;
  ensure_parent(opts.out);

  const DatasetSplit empty_sym{SplitKind::sym, {}};
  const DatasetSplit empty_rel{SplitKind::rel, {}};
  const DatasetSplit& qa = data.qa_train.at(opts.train_template);
  const DatasetSplit& sym = opts.use_sym ? data.sym : empty_sym;
  const DatasetSplit& rel = opts.use_rel ? data.rel : empty_rel;

  Manifest m("sft", fs::path(opts.out).parent_path().string());
  ordered_json cfg;
  cfg["model"] = ordered_json::parse(model.config().to_json());
  cfg["sft"] = ordered_json::parse(rc.sft.to_json());
  cfg["train_template"] = std::string(to_string(opts.train_template));
  cfg["use_sym"] = opts.use_sym;
  cfg["use_rel"] = opts.use_rel;
  m.set_config(cfg);
  m.add_seed("seed", rc.sft.seed);
  m.set_field("vocab_hash", data.vocab.hash());
  m.add_input(opts.ckpt);
  std::vector<std::string> inputs = {qa_train_file(opts.train_template)};
  if (opts.use_sym) inputs.push_back("sym.jsonl");
  if (opts.use_rel) inputs.push_back("rel.jsonl");
  m.add_input(data.path("vocab.txt"));
  for (const auto& f : inputs) m.add_input(data.path(f));
  return run_training(m, opts.out, model, data.vocab, clock,
                      [&] { return sft(model, data.vocab, qa, sym, rel, rc.sft); });
}

// ---------------------------------------------------------------------------
// eval / error-analysis

std::string sft_checkpoint_name(Direction d) { return "sft_" + std::string(to_string(d)) + ".dfer"; }

std::vector<ErrorBreakdown> standard_breakdowns(std::span<const CaseRecord> cases) {
  std::vector<ErrorBreakdown> out;
  out.push_back(breakdown("all", cases));
  for (Direction q : kDirections) {
    std::vector<CaseRecord> sub;
    std::copy_if(cases.begin(), cases.end(), std::back_inserter(sub),
                 [&](const CaseRecord& c) { return c.query_template == q; });
    if (!sub.empty()) out.push_back(breakdown(std::string(to_string(q)), sub));
  }
  return out;
}

std::vector<std::string> cmd_eval(const EvalOptions& opts) {
  Stopwatch clock;
  if (opts.report.empty()) throw UsageError("--report is required");
  if (opts.ckpt_dir.empty()) throw UsageError("--ckpt-dir is required");
  RunConfig rc = RunConfig::load(opts.config);
  if (opts.decode_steps) {
    if (*opts.decode_steps < 1) throw UsageError("--decode-steps must be at least 1");
    rc.decode.steps = *opts.decode_steps;
  }
  rc.decode.validate();
  const Dataset data = load_dataset(opts.data);

  Manifest m("eval", opts.report);
  std::vector<LoadedCheckpoint> models;
  for (Direction t : opts.rows) {
    const std::string p = join(opts.ckpt_dir, sft_checkpoint_name(t));
    if (!fs::exists(p)) {
      throw DataError("no checkpoint for train template '" + std::string(to_string(t)) +
                      "' (expected " + p + ")");
    }
    models.push_back(load_checkpoint(p, data.vocab.hash()));
    m.add_input(p);
  }
  m.add_input(data.path("qa_eval.jsonl"));

  std::vector<CaseRecord> cases;
  for (std::size_t i = 0; i < opts.rows.size(); ++i) {
    DenoiserAnswerModel am(models[i].model, data.vocab, rc.decode);
    auto row = evaluate_row(am, opts.rows[i], data.qa_eval);
    cases.insert(cases.end(), row.begin(), row.end());
  }
  const EvalMatrix matrix = aggregate(cases);
  const auto breakdowns = standard_breakdowns(cases);
  auto written = report(matrix, breakdowns, opts.report);
  const std::string cases_path = join(opts.report, "cases.jsonl");
  write_file(cases_path, cases_to_jsonl(cases));
  written.push_back(cases_path);

  ordered_json cfg;
  ordered_json d = rc.to_json()["decode"];
  cfg["decode"] = d;
  ordered_json rows = ordered_json::array();
  for (Direction t : opts.rows) rows.push_back(std::string(to_string(t)));
  cfg["rows"] = rows;
  m.set_config(cfg);
  m.add_seed("decode_seed", rc.decode.seed);
  for (const auto& p : written) m.add_output(p);
  m.set_wall_clock(clock.seconds());
  const std::string manifest = join(opts.report, "manifest.json");
  m.save(manifest);
  written.push_back(manifest);
  return written;
}

std::vector<std::string> cmd_error_analysis(const ErrorAnalysisOptions& opts) {
  Stopwatch clock;
  if (opts.cases.empty() || opts.out.empty()) throw UsageError("--cases and --out are required");
  auto cases = cases_from_jsonl(read_file(opts.cases));
  // Labels are recomputed so the breakdown never trusts a stale file.
  for (auto& c : cases) {
    c.correct = exact_match(c.prediction, c.gold);
    c.error_type = c.correct ? ErrorType::none : classify_error(c.prediction, c.gold, c.query);
  }
  const auto breakdowns = standard_breakdowns(cases);
  ensure_parent(opts.out);
  write_file(opts.out, breakdowns_csv(breakdowns));
  std::vector<std::string> written = {opts.out};
  for (const auto& b : breakdowns) {
    const std::string svg = sibling(opts.out, "_" + b.name + ".svg");
    write_file(svg, breakdown_svg(b));
    written.push_back(svg);
  }
  Manifest m("error-analysis", fs::path(opts.out).parent_path().string());
  m.add_input(opts.cases);
  for (const auto& p : written) m.add_output(p);
  m.set_wall_clock(clock.seconds());
  const std::string manifest = sibling(opts.out, ".manifest.json");
  m.save(manifest);
  written.push_back(manifest);
  return written;
}

// ---------------------------------------------------------------------------
// repro

namespace {

double accuracy_where(std::span<const CaseRecord> cases, Direction query,
                      const std::function<bool(std::int64_t)>& keep) {
  std::size_t n = 0;
  std::size_t hit = 0;
  for (const auto& c : cases) {
    if (c.train_template != Direction::forward || c.query_template != query ||
        !keep(c.fact_id)) {
      continue;
    }
    ++n;
    hit += c.correct ? 1 : 0;
  }
  return n == 0 ? 0.0 : 100.0 * static_cast<double>(hit) / static_cast<double>(n);
}

VariantSummary summarize_variant(std::span<const CaseRecord> cases,
                                 const std::set<std::int64_t>& covered) {
  auto all = [](std::int64_t) { return true; };
  auto in = [&](std::int64_t id) { return covered.contains(id); };
  auto out = [&](std::int64_t id) { return !covered.contains(id); };
  return {accuracy_where(cases, Direction::forward, all),
          accuracy_where(cases, Direction::reverse, all),
          accuracy_where(cases, Direction::reverse, in),
          accuracy_where(cases, Direction::reverse, out)};
}

}  // namespace

ReproSummary summarize(std::uint64_t seed, std::span<const CaseRecord> baseline,
                       std::span<const CaseRecord> differ,
                       const std::vector<std::int64_t>& covered_fact_ids) {
  const std::set<std::int64_t> covered(covered_fact_ids.begin(), covered_fact_ids.end());
  ReproSummary s;
  s.seed = seed;
  s.baseline = summarize_variant(baseline, covered);
  s.differ = summarize_variant(differ, covered);
  s.baseline_forward_ok = s.baseline.forward >= 90.0;
  s.baseline_reverse_ok = s.baseline.reverse <= 25.0;
  s.differ_covered_ok = s.differ.reverse_covered >= 80.0;
  s.differ_uncovered_ok = s.differ.reverse_uncovered >= s.baseline.reverse_uncovered;
  s.differ_forward_ok = s.differ.forward >= s.baseline.forward - 2.0;
  return s;
}

std::string ReproSummary::to_text() const {
  auto mark = [](bool ok) { return ok ? "ok" : "FAILED"; };
  std::string s = "seed " + std::to_string(seed) + "\n";
  s += "  baseline forward          " + fixed2(baseline.forward) + "  (>= 90.00) " +
       mark(baseline_forward_ok) + "\n";
  s += "  baseline reverse          " + fixed2(baseline.reverse) + "  (<= 25.00) " +
       mark(baseline_reverse_ok) + "\n";
  s += "  differ reverse, covered   " + fixed2(differ.reverse_covered) + "  (>= 80.00) " +
       mark(differ_covered_ok) + "\n";
  s += "  differ reverse, uncovered " + fixed2(differ.reverse_uncovered) + "  (>= baseline " +
       fixed2(baseline.reverse_uncovered) + ") " + mark(differ_uncovered_ok) + "\n";
  s += "  differ forward            " + fixed2(differ.forward) + "  (>= baseline - 2 = " +
       fixed2(baseline.forward - 2.0) + ") " + mark(differ_forward_ok) + "\n";
  s += std::string("  overall ") + (pass() ? "PASS" : "FAIL") + "\n";
  return s;
}

ReproSummary cmd_repro(const ReproOptions& opts) {
  Stopwatch clock;
  if (opts.out.empty()) throw UsageError("--out is required");
  const fs::path root(opts.out);
  if (fs::exists(root) && !fs::is_empty(root) && !opts.force) {
    throw UsageError("output directory " + opts.out + " is not empty (use --force)");
  }
  const std::string data_dir = join(root, "data");
  GenDataOptions g;
  g.out = data_dir;
  g.n_facts = opts.n_facts;
  g.n_sym = opts.n_sym;
  g.n_rel = opts.n_rel;
  g.seed = opts.seed;
  g.force = true;
  gen_data(g);

  std::vector<Direction> rows = {Direction::forward};
  if (opts.full_matrix) rows.assign(kDirections.begin(), kDirections.end());

  struct Variant {
    std::string name;
    MaskMode mode;
    bool augment;
  };
  const Variant variants[] = {{"baseline", MaskMode::token, false},
                              {"differ", MaskMode::whole_entity, true}};
  Manifest m("repro", opts.out);
  std::map<std::string, std::vector<CaseRecord>> cases;
  for (const auto& v : variants) {
    const fs::path vdir = root / v.name;
    const std::string pre = join(vdir, "pretrain.dfer");
    std::cerr << "[repro] " << v.name << ": pretrain\n";
    PretrainOptions po{data_dir, opts.config, v.mode, pre, opts.seed};
    for (const auto& p : cmd_pretrain(po)) m.add_output(p);
    for (Direction t : rows) {
      std::cerr << "[repro] " << v.name << ": sft " << to_string(t) << "\n";
      SftOptions so{pre, data_dir, opts.config, t, v.augment, v.augment, v.mode,
                    join(vdir, sft_checkpoint_name(t)), opts.seed};
      for (const auto& p : cmd_sft(so)) m.add_output(p);
    }
    std::cerr << "[repro] " << v.name << ": eval\n";
    EvalOptions eo;
    eo.ckpt_dir = vdir.string();
    eo.data = data_dir;
    eo.config = opts.config;
    eo.report = join(vdir, "eval");
    eo.rows = rows;
    for (const auto& p : cmd_eval(eo)) m.add_output(p);
    const std::string cases_path = join(vdir / "eval", "cases.jsonl");
    for (const auto& p : cmd_error_analysis({cases_path, join(vdir, "error_analysis.csv")})) {
      m.add_output(p);
    }
    cases[v.name] = cases_from_jsonl(read_file(cases_path));
  }

  const Dataset data = load_dataset(data_dir);
  std::vector<std::int64_t> covered;
  for (const auto& r : data.sym.records) covered.push_back(r.triple_ref);
  const ReproSummary s = summarize(opts.seed, cases["baseline"], cases["differ"], covered);
  const std::string summary = join(root, "summary.txt");
  write_file(summary, s.to_text());
  m.add_output(summary);

  ordered_json cfg;
  cfg["n_facts"] = opts.n_facts;
  cfg["n_sym"] = opts.n_sym;
  cfg["n_rel"] = opts.n_rel;
  cfg["full_matrix"] = opts.full_matrix;
  cfg["run"] = RunConfig::load(opts.config).to_json();
  m.set_config(cfg);
  m.add_seed("seed", opts.seed);
  m.set_field("pass", s.pass());
  m.set_wall_clock(clock.seconds());
  m.save(join(root, "manifest.json"));
  return s;
}

}  // namespace differ
