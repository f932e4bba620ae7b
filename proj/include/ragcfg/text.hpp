#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace ragcfg::text {

// Lowercase whitespace tokenization. Punctuation stays attached to tokens.
std::vector<std::string> tokenize(std::string_view text);

// Splits on [.?!] followed by whitespace or end of text. Sentences keep their
// terminal punctuation; surrounding whitespace is trimmed.
std::vector<std::string> split_sentences(std::string_view text);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

// Token with leading/trailing punctuation stripped, for stopword lookup.
std::string strip_punct(std::string_view token);

// Built-in English stopword list.
const std::set<std::string>& default_stopwords();

// Loads one word per line; blank lines and lines starting with '#' skipped.
std::set<std::string> load_stopwords(const std::string& path);

// 64-bit FNV-1a, used for content hashes and seeded feature hashing.
std::uint64_t fnv1a64(std::string_view data,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

// Whole-file helpers; the write goes to a temp file that is then renamed.
std::string read_file(const std::string& path);
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace ragcfg::text
