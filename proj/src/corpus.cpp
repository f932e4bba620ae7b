#include "ragcfg/corpus.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>

#include "ragcfg/error.hpp"
#include "ragcfg/random.hpp"
#include "ragcfg/text.hpp"

namespace ragcfg {

using nlohmann::json;

const char* to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "TRAIN";
    case Split::kVal: return "VAL";
    case Split::kTest: return "TEST";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  const std::string s = text::to_lower(text::trim(name));
  if (s == "train") return Split::kTrain;
  if (s == "val" || s == "dev" || s == "development" || s == "validation") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw Error(ErrorKind::kValidation, "corpus", "unknown split '" + std::string(name) + "'");
}

Corpus::Corpus(std::vector<Transcript> items) : items_(std::move(items)) {
  for (size_t i = 0; i < items_.size(); ++i) {
    const Transcript& t = items_[i];
    if (t.id.empty()) throw Error(ErrorKind::kValidation, "corpus", "item with empty id");
    if (text::trim(t.text).empty()) {
      throw Error(ErrorKind::kValidation, "corpus", "item '" + t.id + "' has empty text");
    }
    if (!index_.emplace(t.id, i).second) {
      throw Error(ErrorKind::kValidation, "corpus", "duplicate id '" + t.id + "'");
    }
    if (t.label && *t.label != 0 && *t.label != 1) {
      throw Error(ErrorKind::kValidation, "corpus", "item '" + t.id + "' has non-binary label");
    }
    if (t.phq8_score && t.label && *t.label != label_from_phq8(*t.phq8_score)) {
      throw Error(ErrorKind::kValidation, "corpus",
                  "item '" + t.id + "' label disagrees with phq8_score");
    }
    if (!t.label && t.split != Split::kTest) {
      throw Error(ErrorKind::kValidation, "corpus",
                  "unlabeled " + std::string(to_string(t.split)) + " item '" + t.id + "'");
    }
    if (t.label) ++class_counts_[t.split][*t.label];
  }
}

const Transcript* Corpus::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &items_[it->second];
}

std::vector<const Transcript*> Corpus::split(Split s) const {
  std::vector<const Transcript*> out;
  for (const auto& t : items_) {
    if (t.split == s) out.push_back(&t);
  }
  return out;
}

std::vector<const Transcript*> Corpus::split_sorted(Split s) const {
  auto out = split(s);
  std::sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->id < b->id; });
  return out;
}

void Corpus::require_runnable() const {
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    if (split(s).empty()) {
      throw Error(ErrorKind::kValidation, "corpus",
                  std::string("split ") + to_string(s) + " is empty");
    }
  }
}

std::string Corpus::content_hash() const {
  std::vector<std::string> lines;
  lines.reserve(items_.size());
  for (const auto& t : items_) lines.push_back(to_json(t).dump());
  std::sort(lines.begin(), lines.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& l : lines) {
    h = text::fnv1a64(l, h);
    h = text::fnv1a64("\n", h);
  }
  return text::hex64(h);
}

Transcript transcript_from_json(const json& j, const LoadOptions& opts) {
  if (!j.is_object()) throw Error(ErrorKind::kParse, "corpus", "line is not a JSON object");
  for (const char* key : {"id", "text", "split"}) {
    if (!j.contains(key) || !j[key].is_string()) {
      throw Error(ErrorKind::kValidation, "corpus", std::string("missing string field '") + key + "'");
    }
  }
  Transcript t;
  t.id = j["id"].get<std::string>();
  t.text = j["text"].get<std::string>();
  t.split = parse_split(j["split"].get<std::string>());
  if (j.contains("phq8_score") && !j["phq8_score"].is_null()) {
    if (!j["phq8_score"].is_number_integer() || j["phq8_score"].get<int>() < 0) {
      throw Error(ErrorKind::kValidation, "corpus", "phq8_score must be a non-negative integer");
    }
    t.phq8_score = j["phq8_score"].get<int>();
  }
  if (t.phq8_score) {
    t.label = label_from_phq8(*t.phq8_score);
  } else if (j.contains("label") && !j["label"].is_null()) {
    if (!j["label"].is_number_integer()) {
      throw Error(ErrorKind::kValidation, "corpus", "label must be 0 or 1");
    }
    int raw = j["label"].get<int>();
    if (raw != 0 && raw != 1) throw Error(ErrorKind::kValidation, "corpus", "label must be 0 or 1");
    t.label = opts.label_flip ? 1 - raw : raw;
  }
  return t;
}

json to_json(const Transcript& t) {
  json j = {{"id", t.id}, {"text", t.text}, {"split", to_string(t.split)}};
  if (t.phq8_score) j["phq8_score"] = *t.phq8_score;
  if (t.label) j["label"] = *t.label;
  return j;
}

Corpus parse_jsonl(std::string_view content, const LoadOptions& opts) {
  std::vector<Transcript> items;
  size_t line_no = 0;
  size_t pos = 0;
  while (pos <= content.size()) {
    size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    ++line_no;
    std::string line = text::trim(content.substr(pos, end - pos));
    pos = end + 1;
    if (line.empty()) continue;
    try {
      items.push_back(transcript_from_json(json::parse(line), opts));
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::kParse, "corpus",
                  "line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.kind(), "corpus", "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return Corpus(std::move(items));
}

Corpus load_jsonl(const std::string& path, const LoadOptions& opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kValidation, "corpus", "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_jsonl(ss.str(), opts);
}

std::string serialize_jsonl(const Corpus& corpus) {
  std::string out;
  for (const auto& t : corpus.items()) {
    out += to_json(t).dump();
    out += '\n';
  }
  return out;
}

void save_jsonl(const Corpus& corpus, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kValidation, "corpus", "cannot write " + path);
    out << serialize_jsonl(corpus);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw Error(ErrorKind::kValidation, "corpus", "cannot rename into " + path);
  }
}

namespace {

constexpr std::array<const char*, 12> kNegativeVocab = {
    "work", "friends", "weekend", "enjoy", "hiking", "family",
    "music", "travel", "cooking", "movies", "garden", "plans"};
constexpr std::array<const char*, 12> kPositiveVocab = {
    "tired", "hopeless", "sleep", "alone", "sad", "worthless",
    "exhausted", "crying", "empty", "numb", "guilty", "appetite"};
constexpr std::array<const char*, 12> kSharedVocab = {
    "interview", "yeah", "okay", "um", "really", "day",
    "time", "thing", "people", "feel", "think", "know"};
constexpr std::array<const char*, 10> kFiller = {
    "i", "the", "and", "to", "my", "it", "was", "that", "so", "with"};

// Zipf-like pick: rank r has weight 1/(r+1).
template <size_t N>
const char* zipf_pick(const std::array<const char*, N>& vocab, SplitMix64& rng) {
  double total = 0.0;
  for (size_t r = 0; r < N; ++r) total += 1.0 / static_cast<double>(r + 1);
  double u = rng.uniform() * total;
  for (size_t r = 0; r < N; ++r) {
    u -= 1.0 / static_cast<double>(r + 1);
    if (u < 0.0) return vocab[r];
  }
  return vocab[N - 1];
}

std::string synth_text(Label label, double separation, SplitMix64& rng) {
  const int sentences = 4 + static_cast<int>(rng.below(3));
  std::string out;
  for (int s = 0; s < sentences; ++s) {
    const int words = 5 + static_cast<int>(rng.below(5));
    for (int w = 0; w < words; ++w) {
      const char* word;
      if (rng.uniform() < 0.25) {
        word = kFiller[rng.below(kFiller.size())];
      } else if (rng.uniform() < separation) {
        word = label == 1 ? zipf_pick(kPositiveVocab, rng) : zipf_pick(kNegativeVocab, rng);
      } else {
        word = zipf_pick(kSharedVocab, rng);
      }
      if (!out.empty() && out.back() != ' ') out += ' ';
      std::string tok = word;
      if (w == 0) tok[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(tok[0])));
      out += tok;
    }
    out += (rng.below(5) == 0) ? "?" : ".";
    if (s + 1 < sentences) out += ' ';
  }
  return out;
}

}  // namespace

Corpus generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_per_class < 1) {
    throw Error(ErrorKind::kValidation, "corpus", "n_per_class must be >= 1");
  }
  const double sep = std::clamp(spec.separation, 0.0, 1.0);
  SplitMix64 rng(mix_seed(spec.seed, 0x5eed));
  std::vector<Transcript> items;
  items.reserve(static_cast<size_t>(spec.n_per_class) * 2);
  for (int i = 0; i < spec.n_per_class; ++i) {
    for (Label label : {0, 1}) {
      Transcript t;
      char id[32];
      std::snprintf(id, sizeof(id), "syn-%d-%04d", label, i);
      t.id = id;
      t.text = synth_text(label, sep, rng);
      const int r = i % 5;
      t.split = r < 3 ? Split::kTrain : (r == 3 ? Split::kVal : Split::kTest);
      t.phq8_score = label == 1 ? 11 + static_cast<int>(rng.below(14))
                                : static_cast<int>(rng.below(11));
      t.label = label;
      items.push_back(std::move(t));
    }
  }
  return Corpus(std::move(items));
}

std::map<Label, double> class_balance(const Corpus& corpus, Split split) {
  auto it = corpus.class_counts().find(split);
  size_t total = 0;
  if (it != corpus.class_counts().end()) {
    for (const auto& [label, n] : it->second) total += n;
  }
  if (total == 0) {
    throw Error(ErrorKind::kValidation, "corpus",
                std::string("split ") + to_string(split) + " has no labeled items");
  }
  std::map<Label, double> out;
  for (const auto& [label, n] : it->second) {
    out[label] = static_cast<double>(n) / static_cast<double>(total);
  }
  return out;
}

}  // namespace ragcfg
