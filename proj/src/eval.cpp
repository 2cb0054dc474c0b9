#include "differ/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "json.hpp"

namespace differ {

namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::string> words(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in(lower(extract_answer(text)));
  for (std::string w; in >> w;) out.push_back(std::move(w));
  return out;
}

bool contains_sequence(const std::vector<std::string>& hay, const std::vector<std::string>& needle) {
  if (needle.empty()) return false;
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

constexpr std::array<ErrorType, 4> kCategories = {ErrorType::fragmentation, ErrorType::asymmetry,
                                                  ErrorType::sparsity, ErrorType::other};

}  // namespace

bool exact_match(std::string_view prediction, std::string_view gold) {
  return lower(extract_answer(prediction)) == lower(extract_answer(gold));
}

std::string_view to_string(ErrorType e) {
  switch (e) {
    case ErrorType::none: return "none";
    case ErrorType::fragmentation: return "fragmentation";
    case ErrorType::asymmetry: return "asymmetry";
    case ErrorType::sparsity: return "sparsity";
    case ErrorType::other: return "other";
  }
  return "?";
}

ErrorType parse_error_type(std::string_view s) {
  for (ErrorType e : {ErrorType::none, ErrorType::fragmentation, ErrorType::asymmetry,
                      ErrorType::sparsity, ErrorType::other}) {
    if (to_string(e) == s) return e;
  }
  throw DataError("unknown error type: '" + std::string(s) + "'");
}

ErrorType classify_error(std::string_view prediction, std::string_view gold,
                         std::string_view query) {
  auto pred = words(prediction);
  auto gw = words(gold);
  const auto qw = words(query);

  // Sub-multiset test on sorted copies; equality is excluded because an
  // exact match is not an error.
  auto ps = pred;
  auto gs = gw;
  std::sort(ps.begin(), ps.end());
  std::sort(gs.begin(), gs.end());
  if (!ps.empty() && ps.size() < gs.size() &&
      std::includes(gs.begin(), gs.end(), ps.begin(), ps.end())) {
    return ErrorType::fragmentation;
  }
  if (pred.size() == gw.size() && pred.size() >= 2) {
    std::size_t diff = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) diff += pred[i] != gw[i];
    if (diff == 1) return ErrorType::fragmentation;
  }
  if (contains_sequence(pred, qw)) return ErrorType::asymmetry;
  auto shares = [&](const std::vector<std::string>& ref) {
    return std::any_of(pred.begin(), pred.end(), [&](const std::string& w) {
      return std::find(ref.begin(), ref.end(), w) != ref.end();
    });
  };
  if (!shares(qw) && !shares(gw)) return ErrorType::sparsity;
  return ErrorType::other;
}

std::string DenoiserAnswerModel::answer(const DataRecord& query) {
  const AnnotatedSequence prompt = encode_prompt(prompt_text(query), vocab_);
  return extract_answer(decode(model_, vocab_, prompt, cfg_));
}

std::pair<std::string, std::string> qa_entities(const DataRecord& record) {
  if (record.prompt_len == 0) throw DataError("not a QA record: " + record.text);
  const auto toks = split_tokens(record.text);
  std::string query;
  for (const auto& s : record.entity_spans) {
    if (static_cast<std::size_t>(s.start) < record.prompt_len) {
      query = join_tokens(std::span<const std::string>(toks).subspan(
          static_cast<std::size_t>(s.start), static_cast<std::size_t>(s.end - s.start + 1)));
      break;
    }
  }
  if (query.empty()) throw DataError("QA record without a prompt entity: " + record.text);
  return {query, extract_answer(response_text(record))};
}

std::optional<double> EvalMatrix::at(Direction train, Direction query) const {
  auto it = cells.find({train, query});
  if (it == cells.end()) return std::nullopt;
  return it->second;
}

std::string EvalMatrix::to_csv() const {
  std::string out = "train_template";
  for (Direction q : kDirections) out += "," + std::string(to_string(q));
  out += "\n";
  for (Direction t : kDirections) {
    const bool any = std::any_of(kDirections.begin(), kDirections.end(),
                                 [&](Direction q) { return at(t, q).has_value(); });
    if (!any) continue;
    out += std::string(to_string(t));
    for (Direction q : kDirections) {
      out += ",";
      if (auto v = at(t, q)) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", *v);
        out += buf;
      }
    }
    out += "\n";
  }
  return out;
}

EvalMatrix aggregate(std::span<const CaseRecord> cases) {
  std::map<std::pair<Direction, Direction>, std::size_t> hits;
  EvalMatrix m;
  for (const auto& c : cases) {
    const auto key = std::make_pair(c.train_template, c.query_template);
    ++m.n_per_cell[key];
    hits[key] += c.correct ? 1 : 0;
  }
  for (const auto& [key, n] : m.n_per_cell) {
    m.cells[key] = 100.0 * static_cast<double>(hits[key]) / static_cast<double>(n);
  }
  return m;
}

std::vector<CaseRecord> evaluate_row(AnswerModel& model, Direction train_template,
                                     const DatasetSplit& qa_eval) {
  std::vector<CaseRecord> out;
  out.reserve(qa_eval.records.size());
  for (const auto& r : qa_eval.records) {
    CaseRecord c;
    c.fact_id = r.triple_ref;
    c.train_template = train_template;
    c.query_template = r.direction;
    std::tie(c.query, c.gold) = qa_entities(r);
    c.prediction = model.answer(r);
    c.correct = exact_match(c.prediction, c.gold);
    c.error_type = c.correct ? ErrorType::none : classify_error(c.prediction, c.gold, c.query);
    out.push_back(std::move(c));
  }
  return out;
}

MatrixRun run_matrix(const std::map<Direction, AnswerModel*>& models,
                     const DatasetSplit& qa_eval) {
  for (Direction t : kDirections) {
    auto it = models.find(t);
    if (it == models.end() || it->second == nullptr) {
      throw DataError("no checkpoint for train template '" + std::string(to_string(t)) + "'");
    }
  }
  MatrixRun run;
  for (Direction t : kDirections) {
    auto row = evaluate_row(*models.at(t), t, qa_eval);
    run.cases.insert(run.cases.end(), std::make_move_iterator(row.begin()),
                     std::make_move_iterator(row.end()));
  }
  run.matrix = aggregate(run.cases);
  return run;
}

ErrorBreakdown breakdown(std::string name, std::span<const CaseRecord> cases) {
  ErrorBreakdown b;
  b.name = std::move(name);
  b.n_cases = cases.size();
  for (const auto& c : cases) {
    if (c.correct) continue;
    ++b.n_errors;
    const auto it = std::find(kCategories.begin(), kCategories.end(), c.error_type);
    if (it == kCategories.end()) throw DataError("wrong prediction without an error label");
    ++b.counts[static_cast<std::size_t>(it - kCategories.begin())];
  }
  if (b.n_cases == 0) return b;

  // Work in hundredths of a percent so the rounded parts add up exactly.
  const std::uint64_t n = b.n_cases;
  const std::uint64_t total_units = (2 * b.n_errors * 10000 + n) / (2 * n);
  std::array<std::uint64_t, 4> units{};
  std::array<std::uint64_t, 4> rem{};
  std::uint64_t assigned = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    units[i] = b.counts[i] * 10000 / n;
    rem[i] = b.counts[i] * 10000 % n;
    assigned += units[i];
  }
  std::array<std::size_t, 4> order = {0, 1, 2, 3};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t c) { return rem[a] > rem[c]; });
  for (std::size_t k = 0; assigned < total_units; k = (k + 1) % 4) {
    ++units[order[k]];
    ++assigned;
  }
  b.total_error_rate = static_cast<double>(total_units) / 100.0;
  for (std::size_t i = 0; i < 4; ++i) b.percent[i] = static_cast<double>(units[i]) / 100.0;
  return b;
}

std::string cases_to_jsonl(std::span<const CaseRecord> cases) {
  std::string out;
  for (const auto& c : cases) {
    nlohmann::ordered_json j;
    j["fact_id"] = c.fact_id;
    j["train_template"] = std::string(to_string(c.train_template));
    j["query_template"] = std::string(to_string(c.query_template));
    j["query"] = c.query;
    j["prediction"] = c.prediction;
    j["gold"] = c.gold;
    j["correct"] = c.correct;
    j["error_type"] = std::string(to_string(c.error_type));
    out += j.dump();
    out += "\n";
  }
  return out;
}

std::vector<CaseRecord> cases_from_jsonl(std::string_view text) {
  std::vector<CaseRecord> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CaseRecord c;
      c.fact_id = j.at("fact_id").get<std::int64_t>();
      c.train_template = parse_direction(j.at("train_template").get<std::string>());
      c.query_template = parse_direction(j.at("query_template").get<std::string>());
      c.query = j.at("query").get<std::string>();
      c.prediction = j.at("prediction").get<std::string>();
      c.gold = j.at("gold").get<std::string>();
      c.correct = j.at("correct").get<bool>();
      c.error_type = parse_error_type(j.value("error_type", std::string("none")));
      out.push_back(std::move(c));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("cases line " + std::to_string(line_no) + ": " + e.what());
    } catch (const UsageError& e) {
      throw DataError("cases line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string breakdowns_csv(std::span<const ErrorBreakdown> breakdowns) {
  std::string out =
      "name,n_cases,n_errors,total_error_rate,fragmentation,asymmetry,sparsity,other\n";
  char buf[256];
  for (const auto& b : breakdowns) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%.2f,%.2f,%.2f,%.2f,%.2f\n", b.name.c_str(),
                  b.n_cases, b.n_errors, b.total_error_rate, b.percent[0], b.percent[1],
                  b.percent[2], b.percent[3]);
    out += buf;
  }
  return out;
}

std::string breakdown_svg(const ErrorBreakdown& b) {
  constexpr int kWidth = 420;
  constexpr int kHeight = 260;
  constexpr int kBase = 220;
  constexpr int kPlot = 180;
  std::string out;
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
                "viewBox=\"0 0 %d %d\" font-family=\"sans-serif\" font-size=\"11\">\n",
                kWidth, kHeight, kWidth, kHeight);
  out += buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"10\" y=\"16\">%s: error rate %.2f%% of %zu cases</text>\n",
                b.name.c_str(), b.total_error_rate, b.n_cases);
  out += buf;
  std::snprintf(buf, sizeof buf,
                "<line x1=\"30\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", kBase,
                kWidth - 10, kBase);
  out += buf;
  static constexpr const char* kColors[4] = {"#c0504d", "#4f81bd", "#9bbb59", "#8064a2"};
  for (std::size_t i = 0; i < 4; ++i) {
    const double h = b.percent[i] / 100.0 * kPlot;
    const int x = 40 + static_cast<int>(i) * 95;
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%d\" y=\"%.2f\" width=\"70\" height=\"%.2f\" fill=\"%s\"/>\n"
                  "<text x=\"%d\" y=\"%.2f\">%.2f%%</text>\n"
                  "<text x=\"%d\" y=\"%d\">%s</text>\n",
                  x, kBase - h, h, kColors[i], x, kBase - h - 4, b.percent[i], x, kBase + 16,
                  std::string(to_string(kCategories[i])).c_str());
    out += buf;
  }
  out += "</svg>\n";
  return out;
}

std::vector<std::string> report(const EvalMatrix& matrix,
                                std::span<const ErrorBreakdown> breakdowns,
                                const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create report directory " + out_dir + ": " + ec.message());
  std::vector<std::string> written;
  auto put = [&](const std::string& name, const std::string& body) {
    const std::string path = (std::filesystem::path(out_dir) / name).string();
    write_file(path, body);
    written.push_back(path);
  };
  put("matrix.csv", matrix.to_csv());
  put("breakdown.csv", breakdowns_csv(breakdowns));
  for (const auto& b : breakdowns) put("breakdown_" + b.name + ".svg", breakdown_svg(b));
  return written;
}

}  // namespace differ
