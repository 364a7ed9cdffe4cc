#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "headliner/common.hpp"

namespace headliner {

inline bool is_space_char(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

inline std::string_view trim(std::string_view s) {
  std::size_t b = 0;
  while (b < s.size() && is_space_char(s[b])) ++b;
  std::size_t e = s.size();
  while (e > b && is_space_char(s[e - 1])) --e;
  return s.substr(b, e - b);
}

/// Maximal nonblank runs.
inline std::vector<std::string_view> split_words(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space_char(s[i])) ++i;
    std::size_t j = i;
    while (j < s.size() && !is_space_char(s[j])) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::size_t word_count(std::string_view s) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : s) {
    bool sp = is_space_char(c);
    if (!sp && !in_word) ++n;
    in_word = !sp;
  }
  return n;
}

/// One maximal run of either word or whitespace characters.
struct TextSegment {
  std::string text;
  bool is_space = false;
};

inline std::vector<TextSegment> segment_whitespace(std::string_view s) {
  std::vector<TextSegment> out;
  std::size_t i = 0;
  while (i < s.size()) {
    bool sp = is_space_char(s[i]);
    std::size_t j = i;
    while (j < s.size() && is_space_char(s[j]) == sp) ++j;
    out.push_back({std::string(s.substr(i, j - i)), sp});
    i = j;
  }
  return out;
}

/// Length in bytes of the UTF-8 sequence starting at `lead`; 1 for invalid
/// lead bytes so malformed input degrades to byte-at-a-time handling.
inline std::size_t utf8_seq_len(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xe) return 3;
  if ((lead >> 3) == 0x1e) return 4;
  return 1;
}

/// Splits a string into UTF-8 character substrings.
inline std::vector<std::string> utf8_chars(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t n = utf8_seq_len(static_cast<unsigned char>(s[i]));
    if (i + n > s.size()) n = 1;
    out.emplace_back(s.substr(i, n));
    i += n;
  }
  return out;
}

inline char32_t utf8_decode_at(std::string_view s, std::size_t i,
                               std::size_t n) {
  unsigned char c0 = static_cast<unsigned char>(s[i]);
  if (n == 1) return c0;
  char32_t cp = c0 & (0x7f >> n);
  for (std::size_t k = 1; k < n; ++k) {
    cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3f);
  }
  return cp;
}

inline void utf8_append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xc0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3f));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xe0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
    out += static_cast<char>(0x80 | (cp & 0x3f));
  } else {
    out += static_cast<char>(0xf0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3f));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
    out += static_cast<char>(0x80 | (cp & 0x3f));
  }
}

inline char32_t lowercase_codepoint(char32_t cp) {
  if (cp >= U'A' && cp <= U'Z') return cp + 0x20;
  // Latin-1 supplement letters, excluding the multiplication sign.
  if (cp >= 0xc0 && cp <= 0xde && cp != 0xd7) return cp + 0x20;
  // Cyrillic.
  if (cp >= 0x400 && cp <= 0x40f) return cp + 0x50;
  if (cp >= 0x410 && cp <= 0x42f) return cp + 0x20;
  return cp;
}

/// Lowercases ASCII, Latin-1 and Cyrillic letters; everything else passes
/// through unchanged, so already-lowercase text is a byte identity.
inline std::string utf8_lowercase(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t n = utf8_seq_len(static_cast<unsigned char>(s[i]));
    if (i + n > s.size()) n = 1;
    char32_t cp = utf8_decode_at(s, i, n);
    char32_t lo = lowercase_codepoint(cp);
    if (lo == cp) {
      out.append(s.substr(i, n));
    } else {
      utf8_append(out, lo);
    }
    i += n;
  }
  return out;
}

// Token strings in the vocab file are whitespace-separated, so whitespace
// and backslashes inside a token are escaped.
inline std::string escape_token(std::string_view tok) {
  std::string out;
  out.reserve(tok.size());
  std::size_t i = 0;
  while (i < tok.size()) {
    char c = tok[i];
    switch (c) {
      case '\\': out += "\\\\"; ++i; continue;
      case ' ': out += "\\s"; ++i; continue;
      case '\t': out += "\\t"; ++i; continue;
      case '\n': out += "\\n"; ++i; continue;
      case '\r': out += "\\r"; ++i; continue;
      default: break;
    }
    unsigned char uc = static_cast<unsigned char>(c);
    if (uc < 0x20 || uc == 0x7f) {
      char buf[8];
      std::snprintf(buf, sizeof(buf), "\\u%04x", uc);
      out += buf;
      ++i;
      continue;
    }
    out += c;
    ++i;
  }
  return out;
}

inline std::string unescape_token(std::string_view esc) {
  std::string out;
  out.reserve(esc.size());
  std::size_t i = 0;
  while (i < esc.size()) {
    char c = esc[i];
    if (c != '\\') {
      out += c;
      ++i;
      continue;
    }
    if (i + 1 >= esc.size()) throw InputError("dangling escape in token");
    char e = esc[i + 1];
    switch (e) {
      case '\\': out += '\\'; i += 2; continue;
      case 's': out += ' '; i += 2; continue;
      case 't': out += '\t'; i += 2; continue;
      case 'n': out += '\n'; i += 2; continue;
      case 'r': out += '\r'; i += 2; continue;
      case 'u': {
        if (i + 6 > esc.size()) throw InputError("truncated \\u escape");
        char32_t cp = 0;
        for (std::size_t k = i + 2; k < i + 6; ++k) {
          char h = esc[k];
          cp <<= 4;
          if (h >= '0' && h <= '9') cp |= static_cast<char32_t>(h - '0');
          else if (h >= 'a' && h <= 'f') cp |= static_cast<char32_t>(h - 'a' + 10);
          else if (h >= 'A' && h <= 'F') cp |= static_cast<char32_t>(h - 'A' + 10);
          else throw InputError("bad \\u escape digit");
        }
        utf8_append(out, cp);
        i += 6;
        continue;
      }
      default: throw InputError("unknown escape in token");
    }
  }
  return out;
}

}  // namespace headliner
