#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace differ {

using TokenId = std::int32_t;

// Inclusive token span [first, last].
struct TokenSpan {
  std::int32_t first = 0;
  std::int32_t last = 0;

  std::int32_t length() const { return last - first + 1; }
  bool contains(std::int32_t k) const { return first <= k && k <= last; }
  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
  friend auto operator<=>(const TokenSpan&, const TokenSpan&) = default;
};

// Half-open character range [begin, end) into a text.
struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
};

// One surface token with its character extent in the source text. A piece
// produced by splitting a long word carries the "##" continuation prefix in
// `text` but its extent covers only the original characters.
struct Piece {
  std::string text;
  std::size_t begin = 0;
  std::size_t end = 0;
};

// Words at least this long are split into two pieces.
inline constexpr std::size_t kSplitLength = 7;

// Whitespace/punctuation splitting with possessive "'s" and punctuation
// (. , ? ! ; :) as standalone tokens. Long words become "head" + "##tail".
std::vector<Piece> split_pieces(std::string_view text);

// Surface tokens only.
std::vector<std::string> split_tokens(std::string_view text);

// Joins surface tokens back into text: punctuation, "'s" and "##" pieces
// attach to the previous token, everything else is separated by one space.
std::string join_tokens(std::span<const std::string> tokens);

// The text normal form preserved by split/join: whitespace runs collapse to
// one space, no space before attaching tokens, no leading/trailing space.
std::string normalize_spacing(std::string_view text);

class Vocabulary {
 public:
  static constexpr TokenId kMask = 0;
  static constexpr TokenId kPad = 1;
  static constexpr TokenId kBos = 2;
  static constexpr TokenId kEos = 3;
  static constexpr TokenId kNumSpecial = 4;

  static constexpr std::string_view kMaskText = "[MASK]";
  static constexpr std::string_view kPadText = "[PAD]";
  static constexpr std::string_view kBosText = "[BOS]";
  static constexpr std::string_view kEosText = "[EOS]";

  Vocabulary();

  // Specials first, then the given tokens in lexicographic byte order.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  // Vocabulary file: one token per line (line index = id), specials first,
  // then a trailing "# sha256 <hex>" line over the token lines.
  static Vocabulary parse(std::string_view file_text);
  static Vocabulary load(const std::string& path);
  std::string serialize() const;
  void save(const std::string& path) const;

  std::optional<TokenId> find(std::string_view token) const;
  TokenId id_of(std::string_view token) const;  // throws DataError if unknown
  const std::string& token_of(TokenId id) const;
  std::size_t size() const { return tokens_.size(); }
  bool is_special(TokenId id) const { return id >= 0 && id < kNumSpecial; }

  // SHA-256 over the token lines; identifies the vocabulary in checkpoints
  // and manifests.
  const std::string& hash() const { return hash_; }

 private:
  void index();

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> id_of_;
  std::string hash_;
};

struct AnnotatedSequence {
  std::vector<TokenId> ids;
  std::vector<TokenSpan> entity_spans;
  std::vector<TokenSpan> relation_spans;
  std::size_t prompt_len = 0;

  std::size_t size() const { return ids.size(); }
};

// Throws DataError if any span is out of range, spans partially overlap, or
// prompt_len exceeds the sequence.
void validate(const AnnotatedSequence& seq);

// Converts a character span into the token span covering exactly the same
// characters. Throws DataError if the span does not start and end on token
// boundaries.
TokenSpan to_token_span(std::span<const Piece> pieces, CharSpan span);

AnnotatedSequence tokenize(std::string_view text, const Vocabulary& vocab,
                           std::span<const CharSpan> entity_chars = {},
                           std::span<const CharSpan> relation_chars = {});

// Inverse of tokenize. BOS/EOS render as their bracketed names; MASK and PAD
// are rejected.
std::string detokenize(std::span<const TokenId> ids, const Vocabulary& vocab);

}  // namespace differ
