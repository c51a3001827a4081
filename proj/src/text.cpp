#include "regjudge/text.hpp"

#include <algorithm>
#include <cctype>

namespace regjudge::text {

namespace {

bool is_ascii_space(char32_t c) {
  return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\f' ||
         c == U'\v';
}

bool is_ascii_alnum(char32_t c) {
  return (c >= U'0' && c <= U'9') || (c >= U'a' && c <= U'z') ||
         (c >= U'A' && c <= U'Z');
}

// Non-ASCII code points that act as separators rather than word characters.
bool is_unicode_separator(char32_t c) {
  return (c >= 0x80 && c <= 0xBF) || (c >= 0x2000 && c <= 0x206F) ||
         (c >= 0x3000 && c <= 0x303F) || c == 0xFFFD;
}

bool is_word_cp(char32_t c) {
  if (c < 0x80) return is_ascii_alnum(c);
  return !is_unicode_separator(c);
}

char32_t lower_cp(char32_t c) {
  if (c >= U'A' && c <= U'Z') return c - U'A' + U'a';
  return c;
}

char32_t fold_cp(char32_t c) {
  if (c >= 0xFF01 && c <= 0xFF5E) return c - 0xFEE0;
  switch (c) {
    case 0x3000:
    case 0x00A0:
      return U' ';
    case 0x3001:
      return U',';
    case 0x3002:
    case 0x2026:
      return U'.';
    case 0x3008:
    case 0x300A:
      return U'<';
    case 0x3009:
    case 0x300B:
      return U'>';
    case 0x300C:
    case 0x300D:
    case 0x300E:
    case 0x300F:
    case 0x201C:
    case 0x201D:
      return U'"';
    case 0x3010:
      return U'[';
    case 0x3011:
      return U']';
    case 0x3014:
      return U'(';
    case 0x3015:
      return U')';
    case 0x2018:
    case 0x2019:
      return U'\'';
    case 0x2010:
    case 0x2011:
    case 0x2012:
    case 0x2013:
    case 0x2014:
    case 0x2212:
      return U'-';
    default:
      return c;
  }
}

std::vector<std::string> tokens_of(const std::vector<char32_t>& cps) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  };
  for (char32_t raw : cps) {
    const char32_t c = lower_cp(fold_cp(raw));
    if (c < 0x80) {
      if (is_ascii_alnum(c)) {
        current.push_back(static_cast<char>(c));
      } else {
        flush();
      }
    } else if (is_word_cp(c)) {
      flush();
      std::string single;
      append_utf8(single, c);
      out.push_back(std::move(single));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

}  // namespace

std::string trim(std::string_view s) {
  auto first = s.find_first_not_of(" \t\r\n\f\v");
  if (first == std::string_view::npos) return {};
  auto last = s.find_last_not_of(" \t\r\n\f\v");
  return std::string(s.substr(first, last - first + 1));
}

std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  return out;
}

std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.emplace_back(s.substr(start, i - start));
  }
  return out;
}

std::vector<char32_t> decode_utf8(std::string_view s) {
  std::vector<char32_t> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    int extra = 0;
    char32_t cp = 0;
    if (b0 < 0x80) {
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      cp = b0 & 0x1F;
      extra = 1;
    } else if ((b0 & 0xF0) == 0xE0) {
      cp = b0 & 0x0F;
      extra = 2;
    } else if ((b0 & 0xF8) == 0xF0) {
      cp = b0 & 0x07;
      extra = 3;
    } else {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    bool ok = true;
    for (int k = 1; k <= extra; ++k) {
      if (i + k >= s.size()) {
        ok = false;
        break;
      }
      const auto b = static_cast<unsigned char>(s[i + k]);
      if ((b & 0xC0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (b & 0x3F);
    }
    if (!ok) {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += extra + 1;
  }
  return out;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::string encode_utf8(const std::vector<char32_t>& cps) {
  std::string out;
  out.reserve(cps.size());
  for (char32_t cp : cps) append_utf8(out, cp);
  return out;
}

std::string fold_unicode(std::string_view s) {
  auto cps = decode_utf8(s);
  for (auto& c : cps) c = fold_cp(c);
  return encode_utf8(cps);
}

std::string standardize(std::string_view s) {
  auto cps = decode_utf8(s);
  for (auto& c : cps) c = lower_cp(fold_cp(c));

  std::vector<char32_t> kept;
  kept.reserve(cps.size());
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const char32_t c = cps[i];
    if (is_word_cp(c)) {
      kept.push_back(c);
      continue;
    }
    const bool between_words = !is_ascii_space(c) && c < 0x80 && i > 0 &&
                               i + 1 < cps.size() && is_word_cp(cps[i - 1]) &&
                               is_word_cp(cps[i + 1]);
    kept.push_back(between_words ? c : U' ');
  }

  std::string out;
  out.reserve(kept.size());
  bool pending_space = false;
  for (char32_t c : kept) {
    if (c == U' ') {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    append_utf8(out, c);
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view s) {
  return tokens_of(decode_utf8(s));
}

bool contains_word(std::string_view haystack, std::string_view phrase) {
  const auto needle = tokenize(phrase);
  if (needle.empty()) return false;
  const auto hay = tokenize(haystack);
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) !=
         hay.end();
}

}  // namespace regjudge::text
