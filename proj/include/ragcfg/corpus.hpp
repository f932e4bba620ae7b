#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace ragcfg {

enum class Split { kTrain, kVal, kTest };

const char* to_string(Split split);
// Case-insensitive; "dev" and "development" alias VAL.
Split parse_split(std::string_view name);

// Binary screening label: 1 = depressed, 0 = not depressed.
using Label = int;

inline constexpr int kPhq8Cutoff = 10;

// PHQ-8 scores strictly above the cutoff are the positive class.
inline Label label_from_phq8(int score) { return score > kPhq8Cutoff ? 1 : 0; }

struct Transcript {
  std::string id;
  std::string text;
  Split split = Split::kTrain;
  std::optional<int> phq8_score;
  std::optional<Label> label;

  bool operator==(const Transcript&) const = default;
};

struct LoadOptions {
  // Input flags use 0 = depressed; re-map on ingest. Only consulted when no
  // PHQ-8 score is present, since the score always wins.
  bool label_flip = false;
};

class Corpus {
 public:
  Corpus() = default;
  // Validates ids, texts, labels; throws Error(kValidation) on violation.
  explicit Corpus(std::vector<Transcript> items);

  const std::vector<Transcript>& items() const { return items_; }
  const Transcript* find(std::string_view id) const;
  std::vector<const Transcript*> split(Split s) const;
  // Items of the split sorted by id.
  std::vector<const Transcript*> split_sorted(Split s) const;
  size_t size() const { return items_.size(); }

  // split -> label -> count, over labeled items.
  const std::map<Split, std::map<Label, size_t>>& class_counts() const { return class_counts_; }

  // Throws unless every split is non-empty.
  void require_runnable() const;

  // Order-independent content hash.
  std::string content_hash() const;

  bool operator==(const Corpus& other) const { return items_ == other.items_; }

 private:
  std::vector<Transcript> items_;
  std::map<std::string, size_t> index_;
  std::map<Split, std::map<Label, size_t>> class_counts_;
};

Transcript transcript_from_json(const nlohmann::json& j, const LoadOptions& opts = {});
nlohmann::json to_json(const Transcript& t);

Corpus parse_jsonl(std::string_view content, const LoadOptions& opts = {});
Corpus load_jsonl(const std::string& path, const LoadOptions& opts = {});
std::string serialize_jsonl(const Corpus& corpus);
void save_jsonl(const Corpus& corpus, const std::string& path);

struct SyntheticSpec {
  int n_per_class = 10;
  std::uint64_t seed = 0;
  // 1.0: every content word comes from the class vocabulary; 0.0: every
  // content word comes from the shared vocabulary.
  double separation = 0.9;

  bool operator==(const SyntheticSpec&) const = default;
};

// Deterministic two-cluster corpus. Item i of each class goes to TRAIN, VAL
// or TEST by i mod 5 (3:1:1).
Corpus generate_synthetic(const SyntheticSpec& spec);

// label -> proportion within the split. Throws on an empty split.
std::map<Label, double> class_balance(const Corpus& corpus, Split split);

}  // namespace ragcfg
