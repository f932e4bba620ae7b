#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>

#include "ragcfg/config.hpp"
#include "ragcfg/corpus.hpp"
#include "ragcfg/embedding.hpp"
#include "ragcfg/judge.hpp"
#include "ragcfg/retrieval.hpp"

namespace ragcfg {

// One configured instance of the online path: retrieval over the case base,
// optional PRF / MMR / post-filters, prompt building and judging. Immutable
// after construction; safe to share across threads.
class Pipeline {
 public:
  // `store` must hold vectors for every corpus item under config.truncation.
  // The case base is TRAIN, plus TEST when config.expansion is set.
  Pipeline(const Corpus& corpus, PipelineConfig config, std::shared_ptr<const EmbeddingStore> store,
           std::string instruction = default_system_instruction());

  const PipelineConfig& config() const { return config_; }
  const CaseBase& case_base() const { return base_; }
  const Corpus& corpus() const { return *corpus_; }
  const EmbeddingStore& store() const { return *store_; }

  RetrievalResult retrieve(std::span<const double> query, const std::string& query_id = {}) const;
  // Query vector taken from the embedding store.
  RetrievalResult retrieve_item(const std::string& id) const;

  // `order_seed` != 0 shuffles the example order (stability checks).
  PromptSpec prompt(const std::string& query_text, const RetrievalResult& neighbors,
                    std::uint64_t order_seed = 0) const;

  JudgeVerdict classify_item(const std::string& id, JudgeBackend& backend,
                             const JudgeOptions& options = {}, std::uint64_t order_seed = 0) const;

 private:
  const Corpus* corpus_;
  PipelineConfig config_;
  std::shared_ptr<const EmbeddingStore> store_;
  std::string instruction_;
  CaseBase base_;
};

}  // namespace ragcfg
