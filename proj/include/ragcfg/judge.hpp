#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragcfg/corpus.hpp"
#include "ragcfg/embedding.hpp"
#include "ragcfg/retrieval.hpp"

namespace ragcfg {

struct DecodingParams {
  double temperature = 0.0;
  double top_p = 1.0;
  int n_samples = 1;

  void validate() const;
  bool operator==(const DecodingParams&) const = default;
};

// "(0.0, 1.0, 1)"
std::string to_string(const DecodingParams& d);

struct PromptExample {
  std::string text;
  Label label = 0;
  bool operator==(const PromptExample&) const = default;
};

struct PromptSpec {
  std::string system_instruction;
  std::vector<PromptExample> examples;
  std::string query_text;

  // User message: one "[EXAMPLE|<label>]\n<text>" block per example in
  // neighbor order, then the query block.
  std::string render_user() const;
  // System instruction followed by the user message.
  std::string render() const;
  bool operator==(const PromptSpec&) const = default;
};

const std::string& default_system_instruction();
std::string load_instruction(const std::string& path);

// Example texts are looked up in `corpus`. Throws Error(kValidation) for an
// empty neighbor list or a neighbor that is missing or unlabeled there.
PromptSpec build_prompt(const std::string& query_text, const RetrievalResult& neighbors,
                        const Corpus& corpus, const std::string& system_instruction);

// First standalone 0/1 digit wins; otherwise a standalone yes(1)/no(0).
// Throws Error(kParse) when neither is present.
Label parse_label(const std::string& raw);

struct ChatRequest {
  std::string system;
  std::string user;
  double temperature = 0.0;
  double top_p = 1.0;
  int n = 1;
};

class JudgeBackend {
 public:
  virtual ~JudgeBackend() = default;
  virtual std::string id() const = 0;
  // Returns `req.n` completions when supports_n(), otherwise one.
  virtual std::vector<std::string> complete(const ChatRequest& req) = 0;
  virtual bool supports_n() const { return true; }
};

enum class MockBehavior { kEchoNeighborMajority, kFixed, kNoisy };

struct MockJudgeSpec {
  MockBehavior behavior = MockBehavior::kEchoNeighborMajority;
  std::uint64_t seed = 0;
  double flip_probability = 0.0;  // kNoisy
  Label fixed_label = 1;          // kFixed
};

// Deterministic judge. Noise is a hash of (seed, prompt, sample index), so a
// given prompt always receives the same answer.
class MockJudge final : public JudgeBackend {
 public:
  explicit MockJudge(MockJudgeSpec spec);
  std::string id() const override;
  std::vector<std::string> complete(const ChatRequest& req) override;

  // Majority label of the [EXAMPLE|x] markers in a rendered prompt; ties
  // resolve to 1.
  static Label example_majority(const std::string& user_message);

 private:
  MockJudgeSpec spec_;
};

std::unique_ptr<JudgeBackend> mock_backend(std::uint64_t seed, MockBehavior behavior,
                                           double p = 0.0, Label fixed_label = 1);

struct JudgeEndpoint {
  std::string url;  // .../v1/chat/completions
  std::string model = "gpt-4o-mini";
  std::string api_key;
  bool supports_n = true;
  int timeout_s = 60;
};

// OpenAI-compatible chat completions. One request per complete() call; the
// retry loop lives in judge().
class HttpJudge final : public JudgeBackend {
 public:
  explicit HttpJudge(JudgeEndpoint endpoint);
  std::string id() const override { return "http:" + endpoint_.model; }
  std::vector<std::string> complete(const ChatRequest& req) override;
  bool supports_n() const override { return endpoint_.supports_n; }

  static nlohmann::json request_body(const std::string& model, const ChatRequest& req);

 private:
  JudgeEndpoint endpoint_;
};

struct JudgeVerdict {
  Label label = 0;
  std::vector<Label> votes;
  std::vector<std::string> raw;
  double confidence = 0.0;  // majority vote share

  bool operator==(const JudgeVerdict&) const = default;
};

// Majority vote; ties resolve to 1.
JudgeVerdict aggregate_votes(std::vector<Label> votes, std::vector<std::string> raw = {});

struct JudgeOptions {
  int max_attempts = 3;
  int backoff_ms = 0;  // doubled after each failed attempt
  // Called before every backend request; may throw BudgetExhausted.
  std::function<void()> on_call;
  // Called with (request, responses) after every successful request.
  std::function<void(const ChatRequest&, const std::vector<std::string>&)> on_trace;
};

JudgeVerdict judge(const PromptSpec& prompt, const DecodingParams& decoding,
                   JudgeBackend& backend, const JudgeOptions& options = {});

}  // namespace ragcfg
