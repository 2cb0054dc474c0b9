#include "differ/corpus.hpp"

#include <algorithm>
#include <iostream>
#include <set>
#include <unordered_set>

#include "differ/common.hpp"
#include "json.hpp"

namespace differ {
namespace {

using nlohmann::ordered_json;

constexpr std::array<std::string_view, 64> kFirstNames = {
    "Mara",     "Silas",    "Ada",       "Jonah",     "Iris",      "Felix",    "Nora",
    "Otto",     "Lena",     "Hugo",      "Clara",     "Emil",      "Tessa",    "Rafe",
    "Wren",     "Basil",    "Cora",      "Dane",      "Elsa",      "Gideon",   "Hazel",
    "Ivo",      "Juno",     "Kit",       "Lionel",    "Mabel",     "Nestor",   "Olive",
    "Percival", "Quinn",    "Rosalind",  "Soren",     "Thea",      "Ulric",    "Vera",
    "Wallace",  "Xenia",    "Yves",      "Zelda",     "Alastair",  "Beatrix",  "Cornelius",
    "Delphine", "Evander",  "Florence",  "Gwendolyn", "Horatio",   "Isadora",  "Josephine",
    "Leopold",  "Marguerite", "Nathaniel", "Octavia", "Philippa",  "Reginald", "Seraphina",
    "Theodore", "Valentina", "Winifred", "Augustin",  "Bernadette", "Cassius", "Dorothea",
    "Ezekiel"};

constexpr std::array<std::string_view, 64> kLastNames = {
    "Venn",       "Holt",       "Marsh",      "Quill",       "Stroud",     "Ashby",
    "Blythe",     "Crane",      "Dunmore",    "Ellery",      "Fairweather", "Galloway",
    "Hartwell",   "Ingram",     "Jessop",     "Kettering",   "Lockhart",   "Merriweather",
    "Northcott",  "Oakley",     "Pembrook",   "Ravensworth", "Schermerhorn", "Thistlewood",
    "Underhill",  "Vantongeren", "Whitlock",  "Yardley",     "Abernathy",  "Blackwood",
    "Cavendish",  "Drummond",   "Everhart",   "Fitzgerald",  "Greenleaf",  "Hollister",
    "Kingsley",   "Livingston", "Montgomery", "Pemberton",   "Rutherford", "Sterling",
    "Thornbury",  "Winterbourne", "Ashcombe", "Bellingham",  "Castellano", "Delacroix",
    "Kowalczyk",  "Lindqvist",  "Moreau",     "Nakamura",    "Okonkwo",    "Petrakis",
    "Quintero",   "Rasmussen",  "Sandoval",   "Takahashi",   "Vasquez",    "Wojcik",
    "Yilmaz",     "Zielinski",  "Brandt",     "Cole"};

constexpr std::array<std::string_view, 48> kCompanyWords = {
    "Velox",   "Aster",    "Brightline", "Cobalt",   "Dynamo",    "Ember",     "Fathom",
    "Granite", "Helios",   "Ironwood",   "Juniper",  "Keystone",  "Lumen",     "Meridian",
    "Nimbus",  "Orchard",  "Pinnacle",   "Quarry",   "Redwood",   "Summit",    "Tidewater",
    "Umbra",   "Vanguard", "Westgate",   "Zephyr",   "Alder",     "Beacon",    "Cascade",
    "Driftwood", "Evergreen", "Foxglove", "Harbor",  "Kestrel",   "Larkspur",  "Monarch",
    "Northwind", "Obsidian", "Paragon",  "Riverbend", "Sapphire", "Thornfield", "Upland",
    "Verdant", "Willow",   "Yarrow",     "Quasar",   "Halcyon",   "Sundial"};

constexpr std::array<std::string_view, 16> kCompanySuffixes = {
    "Dynamics", "Holdings", "Systems",  "Labs",      "Group",     "Partners",
    "Works",    "Industries", "Capital", "Networks", "Logistics", "Foods",
    "Energy",   "Robotics", "Media",    "Analytics"};

struct Pools {
  std::span<const std::string_view> head;    // single or leading component
  std::span<const std::string_view> middle;  // second-to-last of 3-part names
  std::span<const std::string_view> tail;    // final component of 2/3-part names
};

Pools pools_for(EntityKind kind) {
  if (kind == EntityKind::company) return {kCompanyWords, kCompanyWords, kCompanySuffixes};
  return {kFirstNames, kFirstNames, kLastNames};
}

std::array<std::size_t, 3> class_capacity(const Pools& p) {
  return {p.head.size(), p.head.size() * p.tail.size(),
          p.head.size() * (p.middle.size() - 1) * p.tail.size()};
}

EntityName compose(const Pools& p, int components, std::uint64_t index) {
  EntityName e;
  if (components == 1) {
    e.components = {std::string(p.head[index])};
  } else if (components == 2) {
    e.components = {std::string(p.head[index / p.tail.size()]),
                    std::string(p.tail[index % p.tail.size()])};
  } else {
    const std::size_t tail = index % p.tail.size();
    index /= p.tail.size();
    std::size_t mid = index % (p.middle.size() - 1);
    const std::size_t head = index / (p.middle.size() - 1);
    if (mid >= head) ++mid;  // middle never repeats the head
    e.components = {std::string(p.head[head]), std::string(p.middle[mid]),
                    std::string(p.tail[tail])};
  }
  for (const auto& c : e.components) {
    if (!e.surface.empty()) e.surface.push_back(' ');
    e.surface += c;
  }
  return e;
}

struct Instance {
  std::string text;
  std::vector<std::pair<CharSpan, EntityRole>> entities;
  std::vector<CharSpan> relations;
};

// Substitutes {A}, {B} and {R} (the inverse relation word), recording the
// character extent of every substitution.
Instance instantiate(std::string_view format, const FactTriple& fact) {
  Instance out;
  std::size_t i = 0;
  while (i < format.size()) {
    if (format[i] == '{' && i + 2 < format.size() && format[i + 2] == '}') {
      const char slot = format[i + 1];
      const std::string* value = nullptr;
      if (slot == 'A') value = &fact.subject;
      if (slot == 'B') value = &fact.object;
      if (slot == 'R') value = &fact.inverse_relation;
      if (value == nullptr) throw DataError("unknown template slot in: " + std::string(format));
      if (value->empty()) throw DataError("empty value for template slot {" + std::string(1, slot) + "}");
      CharSpan span{out.text.size(), out.text.size() + value->size()};
      out.text += *value;
      if (slot == 'R') {
        out.relations.push_back(span);
      } else {
        out.entities.emplace_back(span, slot == 'A' ? EntityRole::subject : EntityRole::object);
      }
      i += 3;
    } else {
      out.text.push_back(format[i]);
      ++i;
    }
  }
  return out;
}

std::size_t count_slot(std::string_view format, std::string_view slot) {
  std::size_t n = 0;
  for (std::size_t pos = format.find(slot); pos != std::string_view::npos;
       pos = format.find(slot, pos + 1)) {
    ++n;
  }
  return n;
}

DataRecord to_record(const Instance& inst, std::size_t prompt_chars, const FactTriple& fact,
                     std::string template_id, Direction direction) {
  const auto pieces = split_pieces(inst.text);
  DataRecord r;
  r.text = inst.text;
  r.triple_ref = fact.fact_id;
  r.template_id = std::move(template_id);
  r.direction = direction;
  r.prompt_len = static_cast<std::size_t>(
      std::count_if(pieces.begin(), pieces.end(),
                    [&](const Piece& p) { return p.end <= prompt_chars; }));
  for (const auto& [span, role] : inst.entities) {
    const TokenSpan t = to_token_span(pieces, span);
    const bool crosses = static_cast<std::size_t>(t.first) < r.prompt_len &&
                         static_cast<std::size_t>(t.last) >= r.prompt_len;
    if (crosses) throw DataError("entity span crosses the prompt/response boundary");
    r.entity_spans.push_back({t.first, t.last, fact.fact_id, role});
  }
  for (const auto& span : inst.relations) r.relation_spans.push_back(to_token_span(pieces, span));
  return r;
}

void check_fact(const FactTriple& fact, const TemplateSet& templates) {
  if (fact.subject.empty() || fact.object.empty()) throw DataError("fact with empty entity");
  if (fact.subject == fact.object) throw DataError("fact subject equals object");
  if (fact.relation != templates.relation) {
    throw DataError("fact relation '" + fact.relation + "' does not match templates for '" +
                    templates.relation + "'");
  }
  const RelationInfo* info = find_relation(fact.relation);
  if (info == nullptr || info->inverse != fact.inverse_relation) {
    throw DataError("relation '" + fact.relation + "' has no registered inverse '" +
                    fact.inverse_relation + "'");
  }
}

}  // namespace

std::size_t entity_capacity(EntityKind kind) {
  const auto caps = class_capacity(pools_for(kind));
  return caps[0] + caps[1] + caps[2];
}

std::vector<EntityName> generate_entities(std::size_t count, std::uint64_t seed,
                                          EntityKind kind) {
  if (count < 1) throw DataError("entity count must be at least 1");
  const Pools pools = pools_for(kind);
  const auto caps = class_capacity(pools);
  if (count > caps[0] + caps[1] + caps[2]) {
    throw DataError("entity pools exhausted: requested " + std::to_string(count) +
                    " names, capacity is " + std::to_string(caps[0] + caps[1] + caps[2]));
  }
  std::array<std::size_t, 3> quota = {std::min(count / 4, caps[0]), 0,
                                      std::min(count / 4, caps[2])};
  quota[1] = count - quota[0] - quota[2];
  if (quota[1] > caps[1]) {
    quota[2] += quota[1] - caps[1];
    quota[1] = caps[1];
  }

  Rng rng(derive_seed(seed, "entities"));
  std::vector<int> classes;
  classes.reserve(count);
  for (int c = 0; c < 3; ++c) classes.insert(classes.end(), quota[static_cast<std::size_t>(c)], c + 1);
  rng.shuffle(classes.begin(), classes.end());

  std::array<std::unordered_set<std::uint64_t>, 3> used;
  std::vector<EntityName> out;
  out.reserve(count);
  for (int components : classes) {
    const auto c = static_cast<std::size_t>(components - 1);
    std::uint64_t index = rng.below(caps[c]);
    while (!used[c].insert(index).second) index = rng.below(caps[c]);
    out.push_back(compose(pools, components, index));
  }
  return out;
}

std::span<const RelationInfo> relation_registry() {
  static constexpr std::array<RelationInfo, 4> kRegistry = {{
      {"parent", "child", EntityKind::person, EntityKind::person},
      {"child", "parent", EntityKind::person, EntityKind::person},
      {"ceo", "company", EntityKind::company, EntityKind::person},
      {"company", "ceo", EntityKind::person, EntityKind::company},
  }};
  return kRegistry;
}

const RelationInfo* find_relation(std::string_view name) {
  for (const auto& r : relation_registry()) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

std::vector<FactTriple> generate_facts(std::size_t count, std::string_view relation,
                                       std::uint64_t seed) {
  const RelationInfo* info = find_relation(relation);
  if (info == nullptr) throw DataError("unregistered relation: " + std::string(relation));
  if (count < 1) throw DataError("fact count must be at least 1");
  std::vector<EntityName> subjects;
  std::vector<EntityName> objects;
  if (info->subject_kind == info->object_kind) {
    auto all = generate_entities(2 * count, derive_seed(seed, "facts"), info->subject_kind);
    for (std::size_t i = 0; i < count; ++i) {
      subjects.push_back(std::move(all[2 * i]));
      objects.push_back(std::move(all[2 * i + 1]));
    }
  } else {
    subjects = generate_entities(count, derive_seed(seed, "subjects"), info->subject_kind);
    objects = generate_entities(count, derive_seed(seed, "objects"), info->object_kind);
  }
  std::vector<FactTriple> facts;
  facts.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    facts.push_back({subjects[i].surface, std::string(info->name), objects[i].surface,
                     std::string(info->inverse), static_cast<std::int64_t>(i)});
  }
  return facts;
}

std::vector<FactTriple> sample_facts(std::span<const FactTriple> facts, std::size_t count,
                                     std::uint64_t seed) {
  if (count > facts.size()) {
    throw DataError("cannot sample " + std::to_string(count) + " facts from " +
                    std::to_string(facts.size()));
  }
  std::vector<std::size_t> idx(facts.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx.begin(), idx.end());
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  std::vector<FactTriple> out;
  out.reserve(count);
  for (auto i : idx) out.push_back(facts[i]);
  return out;
}

std::string_view to_string(Direction d) {
  switch (d) {
    case Direction::forward: return "forward";
    case Direction::paraphrase: return "paraphrase";
    case Direction::rev_paraphrase: return "rev-paraphrase";
    case Direction::reverse: return "reverse";
  }
  return "?";
}

Direction parse_direction(std::string_view label) {
  for (Direction d : kDirections) {
    if (to_string(d) == label) return d;
  }
  throw UsageError("unknown template id: '" + std::string(label) +
                   "' (expected forward|paraphrase|rev-paraphrase|reverse)");
}

TemplateSet TemplateSet::for_relation(std::string_view relation) {
  const RelationInfo* info = find_relation(relation);
  if (info == nullptr) throw DataError("unregistered relation: " + std::string(relation));
  const std::string r(info->name);
  const std::string inv(info->inverse);
  // "whom" asks for a person, "what" for a company.
  const std::string ask_object = info->object_kind == EntityKind::person ? "whom" : "what";
  const std::string ask_subject = info->subject_kind == EntityKind::person ? "whom" : "what";
  TemplateSet t;
  t.relation = r;
  t.inverse_relation = inv;
  t.declarative = "{A}'s " + r + " is {B}.";
  t.reversed_declarative = "{B} is {A}'s " + r + ".";
  t.chain = "{A}'s " + r + " is {B}. Therefore, {A} is {B}'s {R}.";
  t.qa = {{
      {Direction::forward, "{A}'s " + r + " is " + ask_object + "?", 'B'},
      {Direction::paraphrase, "{A} is whose " + inv + "?", 'B'},
      {Direction::rev_paraphrase, "{B}'s " + inv + " is " + ask_subject + "?", 'A'},
      {Direction::reverse, "{B} is whose " + r + "?", 'A'},
  }};
  t.validate();
  return t;
}

const QaTemplate& TemplateSet::qa_for(Direction d) const {
  for (const auto& q : qa) {
    if (q.direction == d) return q;
  }
  throw DataError("template set lacks direction " + std::string(to_string(d)));
}

void TemplateSet::validate() const {
  auto exactly_once = [](std::string_view f, std::string_view slot) {
    if (count_slot(f, slot) != 1) {
      throw DataError("template '" + std::string(f) + "' must contain " + std::string(slot) +
                      " exactly once");
    }
  };
  for (std::string_view f : {std::string_view(declarative), std::string_view(reversed_declarative)}) {
    exactly_once(f, "{A}");
    exactly_once(f, "{B}");
  }
  exactly_once(chain, "{R}");
  std::set<std::string> distinct;
  for (const auto& q : qa) {
    if (q.answer_slot != 'A' && q.answer_slot != 'B') throw DataError("bad answer slot");
    const std::string query_slot = q.answer_slot == 'A' ? "{B}" : "{A}";
    const std::string answer_slot = q.answer_slot == 'A' ? "{A}" : "{B}";
    exactly_once(q.prompt, query_slot);
    if (count_slot(q.prompt, answer_slot) != 0) {
      throw DataError("QA prompt '" + q.prompt + "' leaks the answer slot");
    }
    distinct.insert(q.prompt);
  }
  if (distinct.size() != qa.size()) throw DataError("QA templates must be pairwise distinct");
}

std::string_view to_string(SplitKind k) {
  switch (k) {
    case SplitKind::base: return "base";
    case SplitKind::sym: return "sym";
    case SplitKind::rel: return "rel";
    case SplitKind::qa_train: return "qa_train";
    case SplitKind::qa_eval: return "qa_eval";
  }
  return "?";
}

SplitKind parse_split_kind(std::string_view s) {
  for (SplitKind k : {SplitKind::base, SplitKind::sym, SplitKind::rel, SplitKind::qa_train,
                      SplitKind::qa_eval}) {
    if (to_string(k) == s) return k;
  }
  throw DataError("unknown split kind: " + std::string(s));
}

DataRecord make_declarative(const FactTriple& fact, const TemplateSet& templates,
                            bool reversed) {
  check_fact(fact, templates);
  const auto& format = reversed ? templates.reversed_declarative : templates.declarative;
  return to_record(instantiate(format, fact), 0, fact,
                   reversed ? "reversed-declarative" : "declarative",
                   reversed ? Direction::reverse : Direction::forward);
}

DataRecord make_qa(const FactTriple& fact, const TemplateSet& templates, Direction d) {
  check_fact(fact, templates);
  const QaTemplate& q = templates.qa_for(d);
  const std::string format = q.prompt + (q.answer_slot == 'A' ? " {A}" : " {B}");
  const std::size_t prompt_chars = instantiate(q.prompt, fact).text.size();
  return to_record(instantiate(format, fact), prompt_chars, fact,
                   "qa-" + std::string(to_string(d)), d);
}

DataRecord make_chain(const FactTriple& fact, const TemplateSet& templates) {
  check_fact(fact, templates);
  Instance inst = instantiate(templates.chain, fact);
  // Everything before the inverse relation word is prompt.
  const std::size_t prompt_chars = inst.relations.front().begin;
  std::size_t trimmed = prompt_chars;
  while (trimmed > 0 && inst.text[trimmed - 1] == ' ') --trimmed;
  // The final clause "A is B's r^-1" answers the paraphrase question.
  return to_record(inst, trimmed, fact, "chain", Direction::paraphrase);
}

DatasetSplit build_base_split(std::span<const FactTriple> facts, const TemplateSet& templates) {
  if (facts.empty()) throw DataError("base split needs at least one fact");
  DatasetSplit s{SplitKind::base, {}};
  for (const auto& f : facts) s.records.push_back(make_declarative(f, templates, false));
  return s;
}

DatasetSplit build_sym_split(std::span<const FactTriple> facts, const TemplateSet& templates,
                             bool with_qa) {
  DatasetSplit s{SplitKind::sym, {}};
  std::unordered_set<std::string> forward_texts;
  for (const auto& f : facts) forward_texts.insert(instantiate(templates.declarative, f).text);
  std::size_t collisions = 0;
  for (const auto& f : facts) {
    s.records.push_back(make_declarative(f, templates, false));
    s.records.push_back(make_declarative(f, templates, true));
    if (forward_texts.contains(s.records.back().text)) ++collisions;
    if (with_qa) {
      s.records.push_back(make_qa(f, templates, Direction::forward));
      s.records.push_back(make_qa(f, templates, Direction::reverse));
    }
  }
  if (collisions > 0) {
    std::cerr << "sym split: " << collisions
              << " reversed declaratives duplicate a forward text (kept)\n";
  }
  return s;
}

DatasetSplit build_rel_split(std::span<const FactTriple> facts, const TemplateSet& templates) {
  DatasetSplit s{SplitKind::rel, {}};
  for (const auto& f : facts) s.records.push_back(make_chain(f, templates));
  return s;
}

QaSplits build_qa_splits(std::span<const FactTriple> facts, const TemplateSet& templates,
                         Direction train_template) {
  QaSplits out{{SplitKind::qa_train, {}}, {SplitKind::qa_eval, {}}};
  for (const auto& f : facts) {
    out.train.records.push_back(make_qa(f, templates, train_template));
    for (Direction d : kDirections) out.eval.records.push_back(make_qa(f, templates, d));
  }
  return out;
}

std::string prompt_text(const DataRecord& record) {
  auto toks = split_tokens(record.text);
  toks.resize(std::min(toks.size(), record.prompt_len));
  return join_tokens(toks);
}

std::string response_text(const DataRecord& record) {
  auto toks = split_tokens(record.text);
  const auto from = std::min(toks.size(), record.prompt_len);
  return join_tokens(std::span<const std::string>(toks).subspan(from));
}

namespace {

ordered_json record_json(const DataRecord& r) {
  ordered_json j;
  j["text"] = r.text;
  j["prompt_len"] = r.prompt_len;
  ordered_json es = ordered_json::array();
  for (const auto& e : r.entity_spans) {
    es.push_back({{"start", e.start},
                  {"end", e.end},
                  {"fact_id", e.fact_id},
                  {"role", e.role == EntityRole::subject ? "subject" : "object"}});
  }
  j["entity_spans"] = std::move(es);
  ordered_json rs = ordered_json::array();
  for (const auto& s : r.relation_spans) rs.push_back({{"start", s.first}, {"end", s.last}});
  j["relation_spans"] = std::move(rs);
  j["triple_ref"] = r.triple_ref;
  j["template_id"] = r.template_id;
  j["direction"] = std::string(to_string(r.direction));
  return j;
}

DataRecord record_from_json(const ordered_json& j) {
  DataRecord r;
  r.text = j.at("text").get<std::string>();
  r.prompt_len = j.at("prompt_len").get<std::size_t>();
  for (const auto& e : j.at("entity_spans")) {
    const auto role = e.at("role").get<std::string>();
    if (role != "subject" && role != "object") throw DataError("bad entity role: " + role);
    r.entity_spans.push_back({e.at("start").get<std::int32_t>(), e.at("end").get<std::int32_t>(),
                              e.at("fact_id").get<std::int64_t>(),
                              role == "subject" ? EntityRole::subject : EntityRole::object});
  }
  for (const auto& s : j.at("relation_spans")) {
    r.relation_spans.push_back({s.at("start").get<std::int32_t>(), s.at("end").get<std::int32_t>()});
  }
  r.triple_ref = j.at("triple_ref").get<std::int64_t>();
  r.template_id = j.at("template_id").get<std::string>();
  try {
    r.direction = parse_direction(j.at("direction").get<std::string>());
  } catch (const UsageError& e) {
    throw DataError(e.what());
  }
  return r;
}

template <class F>
void for_each_line(std::string_view text, F&& f) {
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    ++line_no;
    auto line = text.substr(pos, nl - pos);
    if (!line.empty()) f(line, line_no);
    pos = nl + 1;
  }
}

}  // namespace

std::string to_jsonl(const DatasetSplit& split) {
  std::string out;
  for (const auto& r : split.records) {
    out += record_json(r).dump();
    out.push_back('\n');
  }
  return out;
}

DatasetSplit from_jsonl(std::string_view text, SplitKind kind) {
  DatasetSplit s{kind, {}};
  for_each_line(text, [&](std::string_view line, std::size_t line_no) {
    try {
      s.records.push_back(record_from_json(ordered_json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
  });
  return s;
}

void save_split(const DatasetSplit& split, const std::string& path) {
  write_file(path, to_jsonl(split));
}

DatasetSplit load_split(const std::string& path, SplitKind kind) {
  return from_jsonl(read_file(path), kind);
}

std::string facts_to_jsonl(std::span<const FactTriple> facts) {
  std::string out;
  for (const auto& f : facts) {
    ordered_json j;
    j["fact_id"] = f.fact_id;
    j["subject"] = f.subject;
    j["relation"] = f.relation;
    j["object"] = f.object;
    j["inverse_relation"] = f.inverse_relation;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

std::vector<FactTriple> facts_from_jsonl(std::string_view text) {
  std::vector<FactTriple> out;
  for_each_line(text, [&](std::string_view line, std::size_t line_no) {
    try {
      auto j = ordered_json::parse(line);
      out.push_back({j.at("subject").get<std::string>(), j.at("relation").get<std::string>(),
                     j.at("object").get<std::string>(),
                     j.at("inverse_relation").get<std::string>(),
                     j.at("fact_id").get<std::int64_t>()});
    } catch (const nlohmann::json::exception& e) {
      throw DataError("facts line " + std::to_string(line_no) + ": " + e.what());
    }
  });
  return out;
}

AnnotatedSequence encode(const DataRecord& record, const Vocabulary& vocab) {
  const auto pieces = split_pieces(record.text);
  AnnotatedSequence seq;
  seq.ids.reserve(pieces.size());
  for (const auto& p : pieces) seq.ids.push_back(vocab.id_of(p.text));
  seq.prompt_len = record.prompt_len;
  for (const auto& e : record.entity_spans) seq.entity_spans.push_back({e.start, e.end});
  seq.relation_spans = record.relation_spans;
  validate(seq);
  for (const auto& s : seq.entity_spans) {
    if (static_cast<std::size_t>(s.first) < seq.prompt_len &&
        static_cast<std::size_t>(s.last) >= seq.prompt_len) {
      throw DataError("entity span crosses the prompt/response boundary");
    }
  }
  return seq;
}

Vocabulary build_vocab(std::span<const DatasetSplit> splits) {
  if (splits.empty()) throw DataError("build_vocab needs at least one split");
  std::set<std::string> tokens;
  for (const auto& s : splits) {
    for (const auto& r : s.records) {
      for (auto& t : split_tokens(r.text)) tokens.insert(std::move(t));
    }
  }
  return Vocabulary::from_tokens({tokens.begin(), tokens.end()});
}

}  // namespace differ
