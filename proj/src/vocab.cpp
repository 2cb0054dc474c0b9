#include "differ/vocab.hpp"

#include <algorithm>
#include <set>

#include "differ/common.hpp"

namespace differ {
namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

bool is_punct(char c) {
  return c == '.' || c == ',' || c == '?' || c == '!' || c == ';' || c == ':';
}

bool attaches(std::string_view tok) {
  if (tok.size() == 1 && is_punct(tok[0])) return true;
  return tok == "'s" || tok.starts_with("##");
}

void push_word(std::string_view text, std::size_t begin, std::size_t end,
               std::vector<Piece>& out) {
  if (begin >= end) return;
  std::string_view word = text.substr(begin, end - begin);
  // Possessive suffix is its own token.
  if (word.size() > 2 && word.ends_with("'s")) {
    push_word(text, begin, end - 2, out);
    out.push_back({"'s", end - 2, end});
    return;
  }
  if (word.size() >= kSplitLength) {
    const std::size_t head = (word.size() + 1) / 2;
    out.push_back({std::string(word.substr(0, head)), begin, begin + head});
    out.push_back({"##" + std::string(word.substr(head)), begin + head, end});
    return;
  }
  out.push_back({std::string(word), begin, end});
}

}  // namespace

std::vector<Piece> split_pieces(std::string_view text) {
  std::vector<Piece> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (is_space(text[i])) {
      ++i;
      continue;
    }
    std::size_t word_begin = i;
    while (i < text.size() && !is_space(text[i])) {
      if (is_punct(text[i])) {
        push_word(text, word_begin, i, out);
        out.push_back({std::string(1, text[i]), i, i + 1});
        word_begin = i + 1;
      }
      ++i;
    }
    push_word(text, word_begin, i, out);
  }
  return out;
}

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  for (auto& p : split_pieces(text)) out.push_back(std::move(p.text));
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (const auto& tok : tokens) {
    if (tok.starts_with("##")) {
      out.append(tok, 2);
    } else {
      if (!out.empty() && !attaches(tok)) out.push_back(' ');
      out += tok;
    }
  }
  return out;
}

std::string normalize_spacing(std::string_view text) {
  return join_tokens(split_tokens(text));
}

Vocabulary::Vocabulary() {
  tokens_ = {std::string(kMaskText), std::string(kPadText), std::string(kBosText),
             std::string(kEosText)};
  index();
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  std::set<std::string> uniq(std::make_move_iterator(tokens.begin()),
                             std::make_move_iterator(tokens.end()));
  Vocabulary v;
  for (const auto& t : uniq) {
    if (t.empty() || t == kMaskText || t == kPadText || t == kBosText || t == kEosText ||
        t.find('\n') != std::string::npos || t.starts_with("# ")) {
      throw DataError("token not admissible in vocabulary: '" + t + "'");
    }
    v.tokens_.push_back(t);
  }
  v.index();
  return v;
}

void Vocabulary::index() {
  id_of_.clear();
  std::string lines;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!id_of_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw DataError("duplicate vocabulary token: " + tokens_[i]);
    }
    lines += tokens_[i];
    lines.push_back('\n');
  }
  hash_ = sha256_hex(lines);
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out.push_back('\n');
  }
  out += "# sha256 " + hash_ + "\n";
  return out;
}

Vocabulary Vocabulary::parse(std::string_view file_text) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < file_text.size()) {
    std::size_t nl = file_text.find('\n', pos);
    if (nl == std::string_view::npos) nl = file_text.size();
    lines.emplace_back(file_text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  if (lines.size() < kNumSpecial + 1 || !lines.back().starts_with("# sha256 ")) {
    throw DataError("vocabulary file missing hash line");
  }
  const std::string declared = lines.back().substr(9);
  lines.pop_back();
  Vocabulary v;
  for (TokenId i = 0; i < kNumSpecial; ++i) {
    if (lines[static_cast<std::size_t>(i)] != v.tokens_[static_cast<std::size_t>(i)]) {
      throw DataError("vocabulary file has wrong special tokens");
    }
  }
  v.tokens_ = std::move(lines);
  v.index();
  if (v.hash_ != declared) throw DataError("vocabulary hash mismatch");
  return v;
}

Vocabulary Vocabulary::load(const std::string& path) { return parse(read_file(path)); }

void Vocabulary::save(const std::string& path) const { write_file(path, serialize()); }

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = id_of_.find(std::string(token));
  if (it == id_of_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id_of(std::string_view token) const {
  auto id = find(token);
  if (!id || is_special(*id)) throw DataError("unknown token: '" + std::string(token) + "'");
  return *id;
}

const std::string& Vocabulary::token_of(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError("token id out of range: " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

void validate(const AnnotatedSequence& seq) {
  const auto n = static_cast<std::int32_t>(seq.ids.size());
  if (seq.prompt_len > seq.ids.size()) throw DataError("prompt_len exceeds sequence length");
  auto check = [&](const std::vector<TokenSpan>& spans, const char* what) {
    for (const auto& s : spans) {
      if (s.first < 0 || s.first > s.last || s.last >= n) {
        throw DataError(std::string(what) + " span out of range");
      }
    }
    for (std::size_t a = 0; a < spans.size(); ++a) {
      for (std::size_t b = a + 1; b < spans.size(); ++b) {
        const auto& x = spans[a];
        const auto& y = spans[b];
        const bool disjoint = x.last < y.first || y.last < x.first;
        const bool nested = (x.first <= y.first && y.last <= x.last) ||
                            (y.first <= x.first && x.last <= y.last);
        if (!disjoint && !nested) {
          throw DataError(std::string(what) + " spans partially overlap");
        }
      }
    }
  };
  check(seq.entity_spans, "entity");
  check(seq.relation_spans, "relation");
}

TokenSpan to_token_span(std::span<const Piece> pieces, CharSpan span) {
  std::int32_t first = -1;
  std::int32_t last = -1;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    if (pieces[i].begin == span.begin) first = static_cast<std::int32_t>(i);
    if (pieces[i].end == span.end) last = static_cast<std::int32_t>(i);
  }
  if (first < 0 || last < 0 || last < first) {
    throw DataError("character span [" + std::to_string(span.begin) + "," +
                    std::to_string(span.end) + ") is not aligned to token boundaries");
  }
  return {first, last};
}

AnnotatedSequence tokenize(std::string_view text, const Vocabulary& vocab,
                           std::span<const CharSpan> entity_chars,
                           std::span<const CharSpan> relation_chars) {
  const auto pieces = split_pieces(text);
  AnnotatedSequence seq;
  seq.ids.reserve(pieces.size());
  for (const auto& p : pieces) seq.ids.push_back(vocab.id_of(p.text));
  for (const auto& c : entity_chars) seq.entity_spans.push_back(to_token_span(pieces, c));
  for (const auto& c : relation_chars) seq.relation_spans.push_back(to_token_span(pieces, c));
  validate(seq);
  return seq;
}

std::string detokenize(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::vector<std::string> toks;
  toks.reserve(ids.size());
  for (TokenId id : ids) {
    if (id == Vocabulary::kMask || id == Vocabulary::kPad) {
      throw DataError("cannot detokenize MASK or PAD");
    }
    toks.push_back(vocab.token_of(id));
  }
  return join_tokens(toks);
}

}  // namespace differ
