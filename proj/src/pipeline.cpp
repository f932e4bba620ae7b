#include "ragcfg/pipeline.hpp"

#include <algorithm>

#include "ragcfg/error.hpp"
#include "ragcfg/random.hpp"
#include "ragcfg/text.hpp"

namespace ragcfg {

Pipeline::Pipeline(const Corpus& corpus, PipelineConfig config,
                   std::shared_ptr<const EmbeddingStore> store, std::string instruction)
    : corpus_(&corpus),
      config_(std::move(config)),
      store_(std::move(store)),
      instruction_(std::move(instruction)) {
  config_.validate();
  if (!store_) throw Error(ErrorKind::kValidation, "pipeline", "no embedding store");
  if (store_->truncation != config_.truncation) {
    throw Error(ErrorKind::kValidation, "embedding cache",
                "store truncation " + to_string(store_->truncation) + " does not match config " +
                    to_string(config_.truncation));
  }
  std::set<Split> pool{Split::kTrain};
  if (config_.expansion) pool.insert(Split::kTest);
  base_ = build_case_base(corpus, pool, *store_);
  if (base_.empty()) throw Error(ErrorKind::kValidation, "case base", "retrieval pool is empty");
}

RetrievalResult Pipeline::retrieve(std::span<const double> query, const std::string& query_id) const {
  Vector q(query.begin(), query.end());
  if (config_.prf.enabled) {
    q = prf_expand(q, base_, config_.selection, config_.prf.alpha, config_.metric);
  }
  RetrievalResult result = select(q, base_, config_.selection, config_.metric);
  if (config_.mmr.enabled) {
    auto ranked = rank_all(q, base_, config_.metric);
    const size_t pool = std::min(ranked.size(), static_cast<size_t>(2 * config_.selection.k));
    ranked.resize(pool);
    const auto outcome = result.mode_used;
    result = mmr_rerank(q, ranked, base_, config_.mmr, static_cast<int>(result.neighbors.size()),
                        config_.metric);
    result.mode_used = outcome;
  }
  if (config_.filters.any()) {
    result = post_filter(result, config_.filters, vote_confidence(result), base_,
                         config_.selection.tau, query_id);
  }
  return result;
}

RetrievalResult Pipeline::retrieve_item(const std::string& id) const {
  return retrieve(store_->at(id).vector, id);
}

PromptSpec Pipeline::prompt(const std::string& query_text, const RetrievalResult& neighbors,
                            std::uint64_t order_seed) const {
  if (order_seed == 0) return build_prompt(query_text, neighbors, *corpus_, instruction_);
  RetrievalResult shuffled = neighbors;
  SplitMix64 rng(order_seed);
  auto& ns = shuffled.neighbors;
  for (size_t i = ns.size(); i > 1; --i) std::swap(ns[i - 1], ns[rng.below(i)]);
  return build_prompt(query_text, shuffled, *corpus_, instruction_);
}

JudgeVerdict Pipeline::classify_item(const std::string& id, JudgeBackend& backend,
                                     const JudgeOptions& options, std::uint64_t order_seed) const {
  const Transcript* t = corpus_->find(id);
  if (!t) throw Error(ErrorKind::kValidation, "pipeline", "unknown item '" + id + "'");
  const RetrievalResult r = retrieve_item(id);
  return judge(prompt(t->text, r, order_seed == 0 ? 0 : mix_seed(order_seed, text::fnv1a64(id))),
               config_.decoding, backend, options);
}

}  // namespace ragcfg
