#include "ragcfg/text.hpp"

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ragcfg/error.hpp"

namespace ragcfg {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kTransport: return "transport";
    case ErrorKind::kBackend: return "backend";
    case ErrorKind::kBudget: return "budget";
    case ErrorKind::kState: return "state";
  }
  return "unknown";
}

namespace text {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool is_terminal(char c) { return c == '.' || c == '?' || c == '!'; }

}  // namespace

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  size_t b = 0;
  size_t e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) tokens.push_back(to_lower(text.substr(start, i - start)));
  }
  return tokens;
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> sentences;
  size_t start = 0;
  for (size_t i = 0; i < text.size(); ++i) {
    if (!is_terminal(text[i])) continue;
    const bool at_boundary = i + 1 == text.size() || is_space(text[i + 1]);
    if (!at_boundary) continue;
    std::string s = trim(text.substr(start, i + 1 - start));
    if (!s.empty()) sentences.push_back(std::move(s));
    start = i + 1;
  }
  std::string tail = trim(text.substr(start));
  if (!tail.empty()) sentences.push_back(std::move(tail));
  return sentences;
}

std::string strip_punct(std::string_view token) {
  size_t b = 0;
  size_t e = token.size();
  auto punct = [](char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; };
  while (b < e && punct(token[b])) ++b;
  while (e > b && punct(token[e - 1])) --e;
  return std::string(token.substr(b, e - b));
}

const std::set<std::string>& default_stopwords() {
  static const std::set<std::string> words = {
      "a",     "about", "after", "all",   "also",  "am",    "an",    "and",
      "any",   "are",   "as",    "at",    "be",    "been",  "but",   "by",
      "can",   "could", "did",   "do",    "for",   "from",  "had",   "has",
      "have",  "he",    "her",   "his",   "i",     "if",    "in",    "into",
      "is",    "it",    "its",   "just",  "me",    "my",    "no",    "not",
      "of",    "on",    "or",    "our",   "she",   "so",    "that",  "the",
      "their", "them",  "then",  "there", "they",  "this",  "to",    "was",
      "we",    "were",  "what",  "when",  "which", "with",  "would", "you",
  };
  return words;
}

std::set<std::string> load_stopwords(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kValidation, "stopwords", "cannot open " + path);
  std::set<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    std::string w = to_lower(trim(line));
    if (w.empty() || w[0] == '#') continue;
    words.insert(std::move(w));
  }
  return words;
}

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kValidation, "io", "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kValidation, "io", "cannot write " + tmp);
    out << content;
    if (!out.flush()) throw Error(ErrorKind::kValidation, "io", "write failed for " + tmp);
  }
  std::filesystem::rename(tmp, target);
}

}  // namespace text
}  // namespace ragcfg
