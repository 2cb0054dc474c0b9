#include <cctype>
#include <string>
#include <vector>

#include "differ/common.hpp"
#include "differ/vocab.hpp"
#include "doctest.h"

using namespace differ;

namespace {

const std::vector<std::string> kWords = {"New", "York", "is", "a", "city", "Kettering",
                                         "Iris", "Bartholomew", "parent", "of", "Al",
                                         "Therefore", "child", "Zo", "Montgomery"};
const std::vector<std::string> kPunct = {".", ",", "?", "!", ";", ":"};

// Random sentence built from words, possessives and punctuation, with
// irregular whitespace.
std::string random_text(Rng& rng) {
  std::string out;
  const std::size_t n = 1 + rng.below(10);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t gaps = rng.below(3);
    if (!out.empty() || gaps > 0) out.append(gaps == 0 ? 1 : gaps, rng.bernoulli(0.2) ? '\t' : ' ');
    out += kWords[rng.below(kWords.size())];
    if (rng.bernoulli(0.2)) out += "'s";
    if (rng.bernoulli(0.25)) out += kPunct[rng.below(kPunct.size())];
  }
  if (rng.bernoulli(0.3)) out += "  ";
  return out;
}

Vocabulary vocab_for(const std::vector<std::string>& texts) {
  std::vector<std::string> toks;
  for (const auto& t : texts) {
    for (auto& s : split_tokens(t)) toks.push_back(std::move(s));
  }
  return Vocabulary::from_tokens(std::move(toks));
}

}  // namespace

TEST_CASE("splitting examples") {
  CHECK(split_tokens("New York's mayor.") ==
        std::vector<std::string>{"New", "York", "'s", "mayor", "."});
  // Seven letters and up split into head + continuation.
  CHECK(split_tokens("Kettering") == std::vector<std::string>{"Kette", "##ring"});
  CHECK(split_tokens("Sixlet") == std::vector<std::string>{"Sixlet"});
  CHECK(split_tokens("Seventh") == std::vector<std::string>{"Seve", "##nth"});
  CHECK(join_tokens(split_tokens("Who is Iris Kettering's parent?")) ==
        "Who is Iris Kettering's parent?");
  CHECK(normalize_spacing("  a\t b ,  c . ") == "a b, c.");
}

TEST_CASE("vocabulary layout and file round trip") {
  const auto v = Vocabulary::from_tokens({"b", "a", "b", "York"});
  REQUIRE(v.size() == 7);
  CHECK(v.token_of(Vocabulary::kMask) == "[MASK]");
  CHECK(v.token_of(Vocabulary::kPad) == "[PAD]");
  CHECK(v.token_of(Vocabulary::kBos) == "[BOS]");
  CHECK(v.token_of(Vocabulary::kEos) == "[EOS]");
  // byte order: uppercase before lowercase
  CHECK(v.id_of("York") == 4);
  CHECK(v.id_of("a") == 5);
  CHECK(v.id_of("b") == 6);
  CHECK_THROWS_AS(v.id_of("zzz"), DataError);
  CHECK_THROWS_AS(v.id_of("[MASK]"), DataError);
  CHECK_THROWS_AS(v.token_of(7), DataError);

  const auto back = Vocabulary::parse(v.serialize());
  CHECK(back.hash() == v.hash());
  CHECK(back.size() == v.size());

  std::string tampered = v.serialize();
  tampered.replace(tampered.find("York"), 4, "Yorx");
  CHECK_THROWS_AS(Vocabulary::parse(tampered), DataError);
  CHECK_THROWS_AS(Vocabulary::from_tokens({"[EOS]"}), DataError);
}

TEST_CASE("New York spans map to token spans") {
  const std::string text = "New York is a city.";
  const auto v = vocab_for({text});
  const CharSpan ent[] = {{0, 8}};
  const auto seq = tokenize(text, v, ent);
  REQUIRE(seq.entity_spans.size() == 1);
  CHECK(seq.entity_spans[0] == TokenSpan{0, 1});
  CHECK(detokenize(seq.ids, v) == text);

  // A span ending mid-token is rejected.
  const CharSpan bad[] = {{0, 6}};
  CHECK_THROWS_AS(tokenize(text, v, bad), DataError);
}

TEST_CASE("split entity keeps both pieces in its span") {
  const std::string text = "Iris Kettering is here.";
  const auto v = vocab_for({text});
  const CharSpan ent[] = {{0, 14}};
  const auto seq = tokenize(text, v, ent);
  CHECK(seq.entity_spans[0] == TokenSpan{0, 2});
  CHECK(v.token_of(seq.ids[2]) == "##ring");
}

TEST_CASE("property: detokenize(tokenize(x)) is the normal form of x") {
  Rng rng(17);
  std::vector<std::string> texts;
  for (int i = 0; i < 500; ++i) texts.push_back(random_text(rng));
  const auto v = vocab_for(texts);
  for (const auto& t : texts) {
    CAPTURE(t);
    const auto seq = tokenize(t, v);
    const auto round = detokenize(seq.ids, v);
    CHECK(round == normalize_spacing(t));
    // normal form is a fixed point
    CHECK(normalize_spacing(round) == round);
    CHECK(tokenize(round, v).ids == seq.ids);
  }
}

TEST_CASE("property: any piece-aligned char span covers exactly its pieces") {
  Rng rng(23);
  for (int trial = 0; trial < 500; ++trial) {
    const std::string t = random_text(rng);
    const auto pieces = split_pieces(t);
    if (pieces.empty()) continue;
    const std::size_t a = rng.below(pieces.size());
    const std::size_t b = a + rng.below(pieces.size() - a);
    const CharSpan cs{pieces[a].begin, pieces[b].end};
    const auto ts = to_token_span(pieces, cs);
    CHECK(ts.first == static_cast<std::int32_t>(a));
    CHECK(ts.last == static_cast<std::int32_t>(b));
    // Every piece's extent is a substring of the source and the pieces tile
    // the non-space characters in order.
    std::size_t prev_end = 0;
    for (const auto& p : pieces) {
      CHECK(p.begin >= prev_end);
      CHECK(p.end > p.begin);
      const std::string raw = t.substr(p.begin, p.end - p.begin);
      CHECK(raw == (p.text.starts_with("##") ? p.text.substr(2) : p.text));
      for (std::size_t k = prev_end; k < p.begin; ++k) CHECK(std::isspace(static_cast<unsigned char>(t[k])));
      prev_end = p.end;
    }
  }
}

TEST_CASE("validate rejects malformed annotations") {
  AnnotatedSequence s;
  s.ids = {4, 5, 6, 7};
  s.entity_spans = {{0, 1}, {1, 2}};
  CHECK_THROWS_AS(validate(s), DataError);
  s.entity_spans = {{0, 3}, {1, 2}};  // nesting is allowed
  CHECK_NOTHROW(validate(s));
  s.entity_spans = {{2, 4}};
  CHECK_THROWS_AS(validate(s), DataError);
  s.entity_spans = {};
  s.prompt_len = 5;
  CHECK_THROWS_AS(validate(s), DataError);
}

TEST_CASE("detokenize refuses MASK and PAD") {
  const auto v = Vocabulary::from_tokens({"a"});
  const TokenId ids[] = {Vocabulary::kBos, 4, Vocabulary::kEos};
  CHECK(detokenize(ids, v) == "[BOS] a [EOS]");
  const TokenId bad[] = {4, Vocabulary::kMask};
  CHECK_THROWS_AS(detokenize(bad, v), DataError);
}
