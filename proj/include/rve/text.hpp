#pragma once

#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "rve/errors.hpp"

namespace rve {
namespace text {

// Unicode codepoints with the White_Space property.
inline bool is_space_codepoint(std::uint32_t cp) {
  switch (cp) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D:
    case 0x20: case 0x85: case 0xA0: case 0x1680:
    case 0x2000: case 0x2001: case 0x2002: case 0x2003: case 0x2004:
    case 0x2005: case 0x2006: case 0x2007: case 0x2008: case 0x2009:
    case 0x200A: case 0x2028: case 0x2029: case 0x202F: case 0x205F:
    case 0x3000:
      return true;
    default:
      return false;
  }
}

// Decodes one UTF-8 codepoint at `pos`, advancing `pos`. Malformed bytes are
// consumed one at a time and returned verbatim so tokenization never stalls.
inline std::uint32_t decode_utf8(std::string_view s, std::size_t& pos) {
  unsigned char c0 = static_cast<unsigned char>(s[pos]);
  if (c0 < 0x80) {
    ++pos;
    return c0;
  }
  int len = 0;
  std::uint32_t cp = 0;
  if ((c0 & 0xE0) == 0xC0) {
    len = 2;
    cp = c0 & 0x1F;
  } else if ((c0 & 0xF0) == 0xE0) {
    len = 3;
    cp = c0 & 0x0F;
  } else if ((c0 & 0xF8) == 0xF0) {
    len = 4;
    cp = c0 & 0x07;
  } else {
    ++pos;
    return c0;
  }
  if (pos + len > s.size()) {
    ++pos;
    return c0;
  }
  for (int i = 1; i < len; ++i) {
    unsigned char ci = static_cast<unsigned char>(s[pos + i]);
    if ((ci & 0xC0) != 0x80) {
      ++pos;
      return c0;
    }
    cp = (cp << 6) | (ci & 0x3F);
  }
  pos += len;
  return cp;
}

struct TokenSpan {
  std::size_t begin = 0;  // byte offset
  std::size_t end = 0;    // one past the last byte

  std::string_view view(std::string_view s) const { return s.substr(begin, end - begin); }
};

// Splits on Unicode whitespace; a token is a maximal run of non-space bytes.
inline std::vector<TokenSpan> token_spans(std::string_view s) {
  std::vector<TokenSpan> out;
  std::size_t pos = 0;
  bool in_token = false;
  std::size_t token_begin = 0;
  while (pos < s.size()) {
    std::size_t cp_begin = pos;
    std::uint32_t cp = decode_utf8(s, pos);
    if (is_space_codepoint(cp)) {
      if (in_token) {
        out.push_back({token_begin, cp_begin});
        in_token = false;
      }
    } else if (!in_token) {
      in_token = true;
      token_begin = cp_begin;
    }
  }
  if (in_token) out.push_back({token_begin, s.size()});
  return out;
}

inline std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> out;
  for (const TokenSpan& t : token_spans(s)) out.emplace_back(t.view(s));
  return out;
}

inline std::size_t count_tokens(std::string_view s) { return token_spans(s).size(); }

// Keeps the first `limit` tokens. The result is a literal prefix of the input
// (cut at the end of the limit-th token), which makes the operation idempotent.
inline std::string truncate_tokens(std::string_view s, std::size_t limit) {
  std::vector<TokenSpan> spans = token_spans(s);
  if (spans.size() <= limit) return std::string(s);
  return std::string(s.substr(0, spans[limit - 1].end));
}

inline bool is_ascii_punct(char c) {
  return std::ispunct(static_cast<unsigned char>(c)) != 0;
}

inline char ascii_lower(char c) {
  return static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
}

// Collapse whitespace runs to single spaces and trim; case is preserved.
inline std::string normalize_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (const TokenSpan& t : token_spans(s)) {
    if (!out.empty()) out.push_back(' ');
    out.append(t.view(s));
  }
  return out;
}

// Case-fold + collapse whitespace runs to single spaces + trim. The identity
// used for entity-name comparison.
inline std::string normalize_name(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (const TokenSpan& t : token_spans(s)) {
    if (!out.empty()) out.push_back(' ');
    for (char c : t.view(s)) out.push_back(ascii_lower(c));
  }
  return out;
}

inline bool names_equal(std::string_view a, std::string_view b) {
  return normalize_name(a) == normalize_name(b);
}

// normalize_name plus stripping leading/trailing punctuation. The identity
// used for answer and prediction matching.
inline std::string normalize_match(std::string_view s) {
  std::string norm = normalize_name(s);
  std::size_t begin = 0;
  std::size_t end = norm.size();
  while (begin < end && is_ascii_punct(norm[begin])) ++begin;
  while (end > begin && is_ascii_punct(norm[end - 1])) --end;
  std::string out = norm.substr(begin, end - begin);
  // stripping punctuation can expose surrounding spaces
  std::size_t first = out.find_first_not_of(' ');
  if (first == std::string::npos) return "";
  std::size_t last = out.find_last_not_of(' ');
  return out.substr(first, last - first + 1);
}

// Scoring term: case-folded token with punctuation stripped from both ends.
// Empty results (pure-punctuation tokens) are dropped by callers.
inline std::string scoring_term(std::string_view token) {
  std::size_t begin = 0;
  std::size_t end = token.size();
  while (begin < end && is_ascii_punct(token[begin])) ++begin;
  while (end > begin && is_ascii_punct(token[end - 1])) --end;
  std::string out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(ascii_lower(token[i]));
  return out;
}

inline std::vector<std::string> scoring_terms(std::string_view s) {
  std::vector<std::string> out;
  for (const TokenSpan& t : token_spans(s)) {
    std::string term = scoring_term(t.view(s));
    if (!term.empty()) out.push_back(std::move(term));
  }
  return out;
}

}  // namespace text
}  // namespace rve
