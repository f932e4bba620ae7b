#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <unistd.h>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ragcfg/corpus.hpp"
#include "ragcfg/embedding.hpp"
#include "ragcfg/judge.hpp"
#include "ragcfg/orchestrator.hpp"
#include "ragcfg/pipeline.hpp"
#include "ragcfg/random.hpp"
#include "ragcfg/retrieval.hpp"

namespace ragcfg::testing {

inline Vector unit(Vector v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

inline Vector basis(size_t dim, size_t i) {
  Vector v(dim, 0.0);
  v[i] = 1.0;
  return v;
}

inline Vector random_unit(SplitMix64& rng, size_t dim) {
  Vector v(dim);
  for (double& x : v) x = rng.normal();
  return unit(v);
}

// Case base straight from (id, vector, label) triples.
struct Item {
  std::string id;
  Vector vector;
  Label label = 0;
};

inline CaseBase make_base(const std::vector<Item>& items) {
  std::vector<EmbeddingRecord> recs;
  std::map<std::string, Label> labels;
  for (const auto& it : items) {
    recs.push_back({it.id, unit(it.vector), 1.0});
    labels[it.id] = it.label;
  }
  return CaseBase(recs, labels, TruncationSpec{}, "test");
}

// Base whose similarity to `query` = e0 equals the given value per item.
inline CaseBase base_with_sims(const std::vector<std::pair<std::string, double>>& sims, size_t dim = 16) {
  std::vector<Item> items;
  for (size_t i = 0; i < sims.size(); ++i) {
    Vector v(dim, 0.0);
    v[0] = sims[i].second;
    v[i + 1] = std::sqrt(1.0 - sims[i].second * sims[i].second);
    items.push_back({sims[i].first, v, static_cast<Label>(i % 2)});
  }
  return make_base(items);
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("ragcfg-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string str() const { return path.string(); }
};

// Corpus with a planted neighbor structure around every VAL query. Each
// query owns a private block of orthogonal directions; its TRAIN neighbors sit
// at prescribed similarities with labels correct (c) or wrong (w).
//   A: w.90 w.89 c.88 c.87 c.86      first correct at rank 3
//   B: w.80 c.77 c.76 w.50 w.49      needs tau 0.75 and dynamic selection
//   C: c.90 w.60 w.59 w.58 c.57      needs dynamic selection
//   D: c.95 c.94 c.93 w.70 w.69      c-items near-duplicates; MMR hurts
//   E: w.90 w.88 w.86 w.84 w.82      always wrong
//   F: w.92 w.91 w.90 c.60 w.59      always wrong; first correct at rank 4
// Under the echo judge the unique best point of the Steps 1-4 grid is K=5,
// tau=0.75, dynamic, MMR off.
struct Planted {
  Corpus corpus;
  std::map<std::string, Vector> vectors;
};

inline Planted planted_corpus(std::uint64_t seed, int reps = 4) {
  struct Spec {
    double sim;
    bool correct;
  };
  const std::vector<std::vector<Spec>> types = {
      {{.90, false}, {.89, false}, {.88, true}, {.87, true}, {.86, true}},
      {{.80, false}, {.77, true}, {.76, true}, {.50, false}, {.49, false}},
      {{.90, true}, {.60, false}, {.59, false}, {.58, false}, {.57, true}},
      {{.95, true}, {.94, true}, {.93, true}, {.70, false}, {.69, false}},
      {{.90, false}, {.88, false}, {.86, false}, {.84, false}, {.82, false}},
      {{.92, false}, {.91, false}, {.90, false}, {.60, true}, {.59, false}},
  };
  const int n_val = static_cast<int>(types.size()) * 2 * reps;
  const int n_test = 4;
  const size_t dim = static_cast<size_t>(n_val * 6 + n_test);
  SplitMix64 rng(seed * 0x9e3779b97f4a7c15ULL + 17);
  Planted p;
  std::vector<Transcript> items;
  char buf[32];
  for (int i = 0; i < n_val; ++i) {
    const size_t type = static_cast<size_t>(i) % types.size();
    const Label label = static_cast<Label>((i / static_cast<int>(types.size())) % 2);
    const size_t b = static_cast<size_t>(i) * 6;
    std::snprintf(buf, sizeof(buf), "v%03d", i);
    const std::string qid = buf;
    p.vectors[qid] = basis(dim, b);
    items.push_back({qid, "query " + qid + " words", Split::kVal, std::nullopt, label});
    for (size_t j = 0; j < types[type].size(); ++j) {
      const auto& s = types[type][j];
      // Seeded jitter well inside every decision margin.
      const double sim = s.sim + (rng.uniform() - 0.5) * 0.004;
      const bool dup = type == 3 && j < 3;
      Vector v(dim, 0.0);
      v[b] = sim;
      v[dup ? b + 1 : b + 1 + j] = std::sqrt(1.0 - sim * sim);
      std::snprintf(buf, sizeof(buf), "t%03d_%zu", i, j);
      const std::string nid = buf;
      p.vectors[nid] = v;
      const Label nl = s.correct ? label : static_cast<Label>(1 - label);
      items.push_back({nid, "case " + nid + " words", Split::kTrain, std::nullopt, nl});
    }
  }
  for (int i = 0; i < n_test; ++i) {
    std::snprintf(buf, sizeof(buf), "x%03d", i);
    p.vectors[buf] = basis(dim, static_cast<size_t>(n_val * 6 + i));
    items.push_back({buf, std::string("held out ") + buf, Split::kTest, std::nullopt, static_cast<Label>(i % 2)});
  }
  p.corpus = Corpus(items);
  return p;
}

// Wraps a judge and counts requests; can fail after a set number of calls.
class CountingBackend final : public JudgeBackend {
 public:
  explicit CountingBackend(JudgeBackend& inner, long long fail_after = -1)
      : inner_(inner), fail_after_(fail_after) {}
  std::string id() const override { return inner_.id(); }
  std::vector<std::string> complete(const ChatRequest& req) override {
    if (fail_after_ >= 0 && calls >= fail_after_) throw std::runtime_error("process killed");
    ++calls;
    return inner_.complete(req);
  }
  bool supports_n() const override { return inner_.supports_n(); }
  long long calls = 0;

 private:
  JudgeBackend& inner_;
  long long fail_after_;
};

}  // namespace ragcfg::testing

namespace ragcfg::testing {

inline std::shared_ptr<const EmbeddingStore> store_of(const Planted& p) {
  PrecomputedEmbedder e(p.vectors);
  return std::make_shared<const EmbeddingStore>(embed_corpus(p.corpus, TruncationSpec{}, e));
}

// Locked point of the planted grid: K=5, tau=0.75, dynamic, MMR off.
inline PipelineConfig planted_config() {
  PipelineConfig c;
  c.embedder_id = "precomputed";
  return c;
}

}  // namespace ragcfg::testing
