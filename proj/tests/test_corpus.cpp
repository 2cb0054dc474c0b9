#include <algorithm>
#include <map>
#include <set>
#include <string>

#include "differ/common.hpp"
#include "differ/corpus.hpp"
#include "doctest.h"

using namespace differ;

namespace {

std::string span_text(const DataRecord& r, std::int32_t first, std::int32_t last) {
  const auto toks = split_tokens(r.text);
  std::vector<std::string> sub(toks.begin() + first, toks.begin() + last + 1);
  return join_tokens(sub);
}

}  // namespace

TEST_CASE("entities are distinct, mostly multi-token and deterministic") {
  const auto names = generate_entities(400, 7);
  std::set<std::string> uniq;
  std::size_t single_component = 0, multi_token = 0;
  for (const auto& e : names) {
    uniq.insert(e.surface);
    if (e.components.size() == 1) ++single_component;
    if (split_tokens(e.surface).size() >= 2) ++multi_token;
    CHECK(join_tokens(split_tokens(e.surface)) == e.surface);
  }
  CHECK(uniq.size() == names.size());
  CHECK(single_component * 4 <= names.size());
  CHECK(multi_token * 2 >= names.size());

  const auto again = generate_entities(400, 7);
  for (std::size_t i = 0; i < names.size(); ++i) CHECK(again[i].surface == names[i].surface);
  const auto other = generate_entities(400, 8);
  std::size_t same = 0;
  for (std::size_t i = 0; i < names.size(); ++i) same += other[i].surface == names[i].surface;
  CHECK(same < names.size());

  CHECK_THROWS_AS(generate_entities(entity_capacity(EntityKind::person) + 1, 0), DataError);
}

TEST_CASE("facts use distinct entities and registered inverses") {
  for (const auto& rel : relation_registry()) {
    const auto facts = generate_facts(100, rel.name, 3);
    REQUIRE(facts.size() == 100);
    std::set<std::string> ents;
    for (std::size_t i = 0; i < facts.size(); ++i) {
      CHECK(facts[i].fact_id == static_cast<std::int64_t>(i));
      CHECK(facts[i].relation == rel.name);
      CHECK(facts[i].inverse_relation == rel.inverse);
      ents.insert(facts[i].subject);
      ents.insert(facts[i].object);
    }
    CHECK(ents.size() == 200);
  }
  CHECK_THROWS_AS(generate_facts(10, "sibling", 0), DataError);
}

TEST_CASE("templates for the parent relation") {
  const auto t = TemplateSet::for_relation("parent");
  const FactTriple f{"Iris Kettering", "parent", "Al Bo", "child", 0};
  CHECK(make_declarative(f, t, false).text == "Iris Kettering's parent is Al Bo.");
  CHECK(make_declarative(f, t, true).text == "Al Bo is Iris Kettering's parent.");
  CHECK(make_qa(f, t, Direction::forward).text == "Iris Kettering's parent is whom? Al Bo");
  CHECK(make_qa(f, t, Direction::paraphrase).text == "Iris Kettering is whose child? Al Bo");
  CHECK(make_qa(f, t, Direction::rev_paraphrase).text == "Al Bo's child is whom? Iris Kettering");
  CHECK(make_qa(f, t, Direction::reverse).text == "Al Bo is whose parent? Iris Kettering");

  const auto qa = make_qa(f, t, Direction::reverse);
  CHECK(prompt_text(qa) == "Al Bo is whose parent?");
  CHECK(response_text(qa) == "Iris Kettering");

  TemplateSet broken = t;
  broken.qa[0].prompt = "{A} {B}?";
  CHECK_THROWS_AS(broken.validate(), DataError);
  CHECK_THROWS_AS(parse_direction("sideways"), UsageError);
}

TEST_CASE("base split holds only forward declaratives") {
  const auto facts = generate_facts(150, "parent", 1);
  const auto t = TemplateSet::for_relation("parent");
  const auto base = build_base_split(facts, t);
  REQUIRE(base.records.size() == facts.size());
  for (std::size_t i = 0; i < facts.size(); ++i) {
    const auto& r = base.records[i];
    CHECK(r.prompt_len == 0);
    CHECK(r.template_id == "declarative");
    CHECK(r.text.find("child") == std::string::npos);
    CHECK(r.text.find('?') == std::string::npos);
    // subject precedes object
    REQUIRE(r.entity_spans.size() == 2);
    CHECK(r.entity_spans[0].role == EntityRole::subject);
    CHECK(r.entity_spans[0].end < r.entity_spans[1].start);
    CHECK(span_text(r, r.entity_spans[0].start, r.entity_spans[0].end) == facts[i].subject);
    CHECK(span_text(r, r.entity_spans[1].start, r.entity_spans[1].end) == facts[i].object);
  }
}

TEST_CASE("sym split states each fact in both orders") {
  const auto facts = generate_facts(60, "ceo", 2);
  const auto t = TemplateSet::for_relation("ceo");
  const auto sym = build_sym_split(facts, t, true);
  REQUIRE(sym.records.size() == 4 * facts.size());
  std::map<std::int64_t, std::vector<const DataRecord*>> by_fact;
  for (const auto& r : sym.records) by_fact[r.triple_ref].push_back(&r);
  for (const auto& f : facts) {
    const auto& rs = by_fact[f.fact_id];
    REQUIRE(rs.size() == 4);
    std::set<std::string> ids;
    for (const auto* r : rs) ids.insert(r->template_id);
    CHECK(ids == std::set<std::string>{"declarative", "reversed-declarative", "qa-forward",
                                       "qa-reverse"});
    for (const auto* r : rs) {
      // The object-first forms put the object span before the subject span.
      const auto& s = r->entity_spans;
      REQUIRE(s.size() == 2);
      const auto& subj = s[0].role == EntityRole::subject ? s[0] : s[1];
      const auto& obj = s[0].role == EntityRole::subject ? s[1] : s[0];
      const bool object_first = r->template_id == "reversed-declarative" || r->template_id == "qa-reverse";
      CHECK((obj.start < subj.start) == object_first);
      CHECK(span_text(*r, subj.start, subj.end) == f.subject);
      CHECK(span_text(*r, obj.start, obj.end) == f.object);
    }
  }
  CHECK(build_sym_split(facts, t, false).records.size() == 2 * facts.size());
}

TEST_CASE("chain records carry the inverse relation span as the only response") {
  const auto facts = generate_facts(80, "parent", 4);
  const auto t = TemplateSet::for_relation("parent");
  const auto rel = build_rel_split(facts, t);
  REQUIRE(rel.records.size() == facts.size());
  for (std::size_t i = 0; i < facts.size(); ++i) {
    const auto& r = rel.records[i];
    REQUIRE(r.relation_spans.size() == 1);
    const auto rs = r.relation_spans[0];
    CHECK(span_text(r, rs.first, rs.last) == "child");
    CHECK(r.prompt_len == static_cast<std::size_t>(rs.first));
    CHECK(r.text == facts[i].subject + "'s parent is " + facts[i].object + ". Therefore, " +
                        facts[i].subject + " is " + facts[i].object + "'s child.");
    for (const auto& e : r.entity_spans) {
      CHECK((e.end < rs.first || e.start > rs.last));
    }
  }
}

TEST_CASE("qa splits: one train record and four eval records per fact") {
  const auto facts = generate_facts(30, "parent", 5);
  const auto t = TemplateSet::for_relation("parent");
  for (Direction d : kDirections) {
    const auto qa = build_qa_splits(facts, t, d);
    CHECK(qa.train.records.size() == facts.size());
    CHECK(qa.eval.records.size() == 4 * facts.size());
    for (const auto& r : qa.train.records) {
      CHECK(r.direction == d);
      // The answer is exactly the response and an entity span of its own.
      const auto& ans = r.entity_spans.back();
      CHECK(static_cast<std::size_t>(ans.start) == r.prompt_len);
      CHECK(static_cast<std::size_t>(ans.end) + 1 == split_tokens(r.text).size());
    }
  }
}

TEST_CASE("sample_facts is a seeded subset in original order") {
  const auto facts = generate_facts(100, "parent", 0);
  const auto a = sample_facts(facts, 30, 11);
  const auto b = sample_facts(facts, 30, 11);
  REQUIRE(a.size() == 30);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].fact_id == b[i].fact_id);
  for (std::size_t i = 1; i < a.size(); ++i) CHECK(a[i - 1].fact_id < a[i].fact_id);
  CHECK_THROWS_AS(sample_facts(facts, 101, 0), DataError);
}

TEST_CASE("jsonl round trip and encode") {
  const auto facts = generate_facts(20, "parent", 6);
  const auto t = TemplateSet::for_relation("parent");
  const auto sym = build_sym_split(facts, t, true);
  const auto back = from_jsonl(to_jsonl(sym), SplitKind::sym);
  CHECK(back.records == sym.records);
  CHECK(facts_from_jsonl(facts_to_jsonl(facts)).size() == facts.size());
  CHECK_THROWS_AS(from_jsonl("{\"text\": 3}\n", SplitKind::base), DataError);

  const std::vector<DatasetSplit> splits = {sym};
  const auto vocab = build_vocab(splits);
  for (const auto& r : sym.records) {
    const auto seq = encode(r, vocab);
    CHECK(seq.prompt_len == r.prompt_len);
    CHECK(seq.entity_spans.size() == r.entity_spans.size());
    CHECK(detokenize(seq.ids, vocab) == r.text);
  }
}

TEST_CASE("split kinds round trip through their names") {
  for (SplitKind k : {SplitKind::base, SplitKind::sym, SplitKind::rel, SplitKind::qa_train,
                      SplitKind::qa_eval}) {
    CHECK(parse_split_kind(to_string(k)) == k);
  }
}
