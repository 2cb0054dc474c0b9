#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "differ/corpus.hpp"
#include "differ/denoiser.hpp"
#include "differ/infer.hpp"

namespace differ {

// Case-insensitive equality after extract_answer normalization.
bool exact_match(std::string_view prediction, std::string_view gold);

enum class ErrorType { none, fragmentation, asymmetry, sparsity, other };
std::string_view to_string(ErrorType e);
ErrorType parse_error_type(std::string_view s);

// Label for a wrong prediction, first matching rule wins:
//   fragmentation  prediction words are a nonempty proper sub-multiset of the
//                  gold words, or the word counts match (at least two) and
//                  exactly one word differs
//   asymmetry      prediction contains the query entity surface
//   sparsity       prediction shares no word with the query or gold entity
//   other          anything else
// Words are whitespace-separated after normalization, compared
// case-insensitively.
ErrorType classify_error(std::string_view prediction, std::string_view gold,
                         std::string_view query);

// Something that answers QA prompts; the matrix runner only sees this.
class AnswerModel {
 public:
  virtual ~AnswerModel() = default;
  virtual std::string answer(const DataRecord& query) = 0;
};

class DenoiserAnswerModel : public AnswerModel {
 public:
  DenoiserAnswerModel(const Denoiser<float>& model, const Vocabulary& vocab, DecodeConfig cfg)
      : model_(model), vocab_(vocab), cfg_(cfg) {}
  std::string answer(const DataRecord& query) override;

 private:
  const Denoiser<float>& model_;
  const Vocabulary& vocab_;
  DecodeConfig cfg_;
};

struct CaseRecord {
  std::int64_t fact_id = 0;
  Direction train_template = Direction::forward;
  Direction query_template = Direction::forward;
  std::string query;  // entity surface named in the prompt
  std::string prediction;
  std::string gold;
  bool correct = false;
  ErrorType error_type = ErrorType::none;
  friend bool operator==(const CaseRecord&, const CaseRecord&) = default;
};

// Entity surfaces of a QA record: (query named in the prompt, gold answer).
std::pair<std::string, std::string> qa_entities(const DataRecord& record);

struct EvalMatrix {
  // Percent accuracy; absent cells were not evaluated.
  std::map<std::pair<Direction, Direction>, double> cells;
  std::map<std::pair<Direction, Direction>, std::size_t> n_per_cell;

  std::optional<double> at(Direction train, Direction query) const;
  std::string to_csv() const;
};

// Rebuilds the matrix from per-case records.
EvalMatrix aggregate(std::span<const CaseRecord> cases);

// One matrix row: every qa_eval record answered by `model`.
std::vector<CaseRecord> evaluate_row(AnswerModel& model, Direction train_template,
                                     const DatasetSplit& qa_eval);

struct MatrixRun {
  EvalMatrix matrix;
  std::vector<CaseRecord> cases;
};

// All four rows. Throws DataError naming the first missing train template.
MatrixRun run_matrix(const std::map<Direction, AnswerModel*>& models,
                     const DatasetSplit& qa_eval);

struct ErrorBreakdown {
  std::string name;
  std::size_t n_cases = 0;
  std::size_t n_errors = 0;
  std::array<std::size_t, 4> counts{};  // fragmentation, asymmetry, sparsity, other
  // Percent of all cases, 2 decimals; the four categories sum exactly to
  // total_error_rate (largest-remainder rounding).
  double total_error_rate = 0.0;
  std::array<double, 4> percent{};
};

ErrorBreakdown breakdown(std::string name, std::span<const CaseRecord> cases);

std::string cases_to_jsonl(std::span<const CaseRecord> cases);
std::vector<CaseRecord> cases_from_jsonl(std::string_view text);

std::string breakdowns_csv(std::span<const ErrorBreakdown> breakdowns);
std::string breakdown_svg(const ErrorBreakdown& b);

// Writes matrix.csv, breakdown.csv and one breakdown_<name>.svg per
// breakdown into `out_dir` (created if missing). Returns the written paths.
std::vector<std::string> report(const EvalMatrix& matrix,
                                std::span<const ErrorBreakdown> breakdowns,
                                const std::string& out_dir);

}  // namespace differ
