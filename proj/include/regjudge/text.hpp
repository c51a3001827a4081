#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace regjudge::text {

std::string trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);

// Splits on ASCII whitespace, dropping empty pieces.
std::vector<std::string> split_whitespace(std::string_view s);

// Decodes UTF-8 into code points. Invalid bytes decode to U+FFFD.
std::vector<char32_t> decode_utf8(std::string_view s);
std::string encode_utf8(const std::vector<char32_t>& cps);
void append_utf8(std::string& out, char32_t cp);

// Compatibility folding for the scripts found in the corpus: full-width ASCII
// forms, the ideographic space, CJK punctuation and typographic quotes/dashes
// are mapped to their ASCII counterparts. Everything else passes through.
std::string fold_unicode(std::string_view s);

// Text fed to embedding providers: folded, lowercased, punctuation that is not
// wedged between two alphanumerics replaced by a space, whitespace collapsed.
// "glucose meter." and "glucose meter" standardize identically while
// "862.1345" and "0667-2008" keep their inner separators.
std::string standardize(std::string_view s);

// Word-level tokenizer: lowercase, split on non-alphanumerics, digit runs kept.
// Every non-ASCII code point (CJK ideographs in practice) is its own token.
std::vector<std::string> tokenize(std::string_view s);

// Case-insensitive whole-word search. `phrase` may contain several words;
// matching is done on token sequences so punctuation never blocks a hit.
bool contains_word(std::string_view haystack, std::string_view phrase);

}  // namespace regjudge::text
