#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "differ/vocab.hpp"

namespace differ {

struct EntityName {
  std::string surface;
  std::vector<std::string> components;
};

enum class EntityKind { person, company };

// Deterministic synthetic names, pairwise distinct. At most a quarter of the
// entities are single-component. Throws DataError when `count` exceeds the
// number of distinct names the pools can form.
std::vector<EntityName> generate_entities(std::size_t count, std::uint64_t seed,
                                          EntityKind kind = EntityKind::person);
std::size_t entity_capacity(EntityKind kind);

// Closed registry of relations and their inverses.
struct RelationInfo {
  std::string_view name;
  std::string_view inverse;
  EntityKind subject_kind;
  EntityKind object_kind;
};
std::span<const RelationInfo> relation_registry();
const RelationInfo* find_relation(std::string_view name);

struct FactTriple {
  std::string subject;
  std::string relation;
  std::string object;
  std::string inverse_relation;
  std::int64_t fact_id = 0;
};

// `count` facts over 2*count distinct entities; fact_id = index.
std::vector<FactTriple> generate_facts(std::size_t count, std::string_view relation,
                                       std::uint64_t seed);

// Seeded sample without replacement, returned in original order.
std::vector<FactTriple> sample_facts(std::span<const FactTriple> facts, std::size_t count,
                                     std::uint64_t seed);

// Query directions, one per column of the train/eval instruction matrix.
enum class Direction { forward, paraphrase, rev_paraphrase, reverse };
inline constexpr std::array<Direction, 4> kDirections = {
    Direction::forward, Direction::paraphrase, Direction::rev_paraphrase, Direction::reverse};

std::string_view to_string(Direction d);
Direction parse_direction(std::string_view label);  // throws UsageError

struct QaTemplate {
  Direction direction;
  std::string prompt;  // contains exactly one of {A} / {B}
  char answer_slot;    // 'A' or 'B'
};

struct TemplateSet {
  std::string relation;
  std::string inverse_relation;
  std::string declarative;           // "{A}'s parent is {B}."
  std::string reversed_declarative;  // "{B} is {A}'s parent."
  std::string chain;                 // "{A}'s parent is {B}. Therefore, {A} is {B}'s {R}."
  std::array<QaTemplate, 4> qa;      // indexed like kDirections

  static TemplateSet for_relation(std::string_view relation);
  const QaTemplate& qa_for(Direction d) const;
  void validate() const;  // throws DataError on malformed format strings
};

enum class SplitKind { base, sym, rel, qa_train, qa_eval };
std::string_view to_string(SplitKind k);
SplitKind parse_split_kind(std::string_view s);

enum class EntityRole { subject, object };

struct EntitySpan {
  std::int32_t start = 0;  // inclusive token index
  std::int32_t end = 0;    // inclusive token index
  std::int64_t fact_id = 0;
  EntityRole role = EntityRole::subject;
  friend bool operator==(const EntitySpan&, const EntitySpan&) = default;
};

struct DataRecord {
  std::string text;
  std::size_t prompt_len = 0;
  std::vector<EntitySpan> entity_spans;
  std::vector<TokenSpan> relation_spans;
  std::int64_t triple_ref = 0;
  std::string template_id;
  Direction direction = Direction::forward;
  friend bool operator==(const DataRecord&, const DataRecord&) = default;
};

struct DatasetSplit {
  SplitKind kind = SplitKind::base;
  std::vector<DataRecord> records;
};

DatasetSplit build_base_split(std::span<const FactTriple> facts, const TemplateSet& templates);

// Both the forward and the object-fronted declarative for every fact, plus
// the forward and reverse QA pairs when `with_qa` is set.
DatasetSplit build_sym_split(std::span<const FactTriple> facts, const TemplateSet& templates,
                             bool with_qa = true);

// Inverse-relation implication chains. Loss is meant to fall only on the
// relation span, so prompt_len covers everything before it.
DatasetSplit build_rel_split(std::span<const FactTriple> facts, const TemplateSet& templates);

struct QaSplits {
  DatasetSplit train;
  DatasetSplit eval;
};
QaSplits build_qa_splits(std::span<const FactTriple> facts, const TemplateSet& templates,
                         Direction train_template);

// Single records, exposed for callers that assemble custom splits.
DataRecord make_declarative(const FactTriple& fact, const TemplateSet& templates,
                            bool reversed);
DataRecord make_qa(const FactTriple& fact, const TemplateSet& templates, Direction d);
DataRecord make_chain(const FactTriple& fact, const TemplateSet& templates);

// Record text split into prompt and response (both normalized).
std::string prompt_text(const DataRecord& record);
std::string response_text(const DataRecord& record);

// JSONL, one record per line, keys in fixed order.
std::string to_jsonl(const DatasetSplit& split);
DatasetSplit from_jsonl(std::string_view text, SplitKind kind);
void save_split(const DatasetSplit& split, const std::string& path);
DatasetSplit load_split(const std::string& path, SplitKind kind);

std::string facts_to_jsonl(std::span<const FactTriple> facts);
std::vector<FactTriple> facts_from_jsonl(std::string_view text);

// Tokenizes a record with the token spans it already carries.
AnnotatedSequence encode(const DataRecord& record, const Vocabulary& vocab);

Vocabulary build_vocab(std::span<const DatasetSplit> splits);

}  // namespace differ
