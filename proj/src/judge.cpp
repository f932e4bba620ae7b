#include "ragcfg/judge.hpp"

#include <cctype>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "http_client.hpp"
#include "ragcfg/error.hpp"
#include "ragcfg/random.hpp"
#include "ragcfg/text.hpp"

namespace ragcfg {

using nlohmann::json;

void DecodingParams::validate() const {
  if (!(temperature >= 0.0)) throw Error(ErrorKind::kValidation, "judge", "temperature must be >= 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw Error(ErrorKind::kValidation, "judge", "top_p must be in (0,1]");
  if (n_samples < 1) throw Error(ErrorKind::kValidation, "judge", "n must be >= 1");
}

std::string to_string(const DecodingParams& d) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "(%.1f, %.1f, %d)", d.temperature, d.top_p, d.n_samples);
  return buf;
}

std::string PromptSpec::render_user() const {
  std::string out;
  for (const auto& ex : examples) {
    out += "[EXAMPLE|" + std::to_string(ex.label) + "]\n" + ex.text + "\n\n";
  }
  out += "[QUERY]\n" + query_text + "\n\nAnswer with a single digit: 1 or 0.";
  return out;
}

std::string PromptSpec::render() const { return system_instruction + "\n\n" + render_user(); }

const std::string& default_system_instruction() {
  static const std::string text =
      "You are assisting with a clinical screening study. Each example below is an interview "
      "transcript labeled 1 if the participant screened positive for depression (PHQ-8 score "
      "above 10) and 0 otherwise. Read the final transcript and answer with 1 (depressed) or 0 "
      "(not depressed).";
  return text;
}

std::string load_instruction(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kValidation, "judge", "cannot open instruction file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return text::trim(ss.str());
}

PromptSpec build_prompt(const std::string& query_text, const RetrievalResult& neighbors,
                        const Corpus& corpus, const std::string& system_instruction) {
  if (neighbors.neighbors.empty()) {
    throw Error(ErrorKind::kValidation, "prompt", "no neighbors to build examples from");
  }
  PromptSpec p;
  p.system_instruction = system_instruction;
  p.query_text = query_text;
  for (const auto& n : neighbors.neighbors) {
    const Transcript* t = corpus.find(n.id);
    if (!t) throw Error(ErrorKind::kValidation, "prompt", "neighbor '" + n.id + "' not in corpus");
    if (!t->label) throw Error(ErrorKind::kValidation, "prompt", "neighbor '" + n.id + "' is unlabeled");
    p.examples.push_back({t->text, n.label});
  }
  return p;
}

namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

}  // namespace

Label parse_label(const std::string& raw) {
  for (size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] != '0' && raw[i] != '1') continue;
    const bool left_ok = i == 0 || !is_word_char(raw[i - 1]);
    const bool right_ok = i + 1 == raw.size() || !is_word_char(raw[i + 1]);
    if (left_ok && right_ok) return raw[i] - '0';
  }
  for (const auto& tok : text::tokenize(raw)) {
    const std::string w = text::strip_punct(tok);
    if (w == "yes") return 1;
    if (w == "no") return 0;
  }
  throw Error(ErrorKind::kParse, "judge", "no label in response '" + raw.substr(0, 80) + "'");
}

MockJudge::MockJudge(MockJudgeSpec spec) : spec_(spec) {
  if (!(spec_.flip_probability >= 0.0 && spec_.flip_probability <= 1.0)) {
    throw Error(ErrorKind::kValidation, "judge", "noise probability must be in [0,1]");
  }
}

std::string MockJudge::id() const {
  switch (spec_.behavior) {
    case MockBehavior::kEchoNeighborMajority: return "mock:echo";
    case MockBehavior::kFixed: return "mock:fixed" + std::to_string(spec_.fixed_label);
    case MockBehavior::kNoisy: {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "mock:noisy%.3f:s%llu", spec_.flip_probability,
                    static_cast<unsigned long long>(spec_.seed));
      return buf;
    }
  }
  return "mock";
}

Label MockJudge::example_majority(const std::string& user_message) {
  static const std::string marker = "[EXAMPLE|";
  size_t ones = 0;
  size_t total = 0;
  for (size_t pos = user_message.find(marker); pos != std::string::npos;
       pos = user_message.find(marker, pos + 1)) {
    const size_t at = pos + marker.size();
    if (at < user_message.size() && (user_message[at] == '0' || user_message[at] == '1')) {
      ++total;
      ones += user_message[at] == '1' ? 1 : 0;
    }
  }
  return 2 * ones >= total ? 1 : 0;
}

std::vector<std::string> MockJudge::complete(const ChatRequest& req) {
  std::vector<std::string> out;
  const int n = std::max(1, req.n);
  for (int i = 0; i < n; ++i) {
    Label label = spec_.fixed_label;
    if (spec_.behavior != MockBehavior::kFixed) {
      label = example_majority(req.user);
      if (spec_.behavior == MockBehavior::kNoisy) {
        const std::uint64_t h =
            text::fnv1a64(req.user, mix_seed(spec_.seed, static_cast<std::uint64_t>(i)));
        SplitMix64 rng(h);
        if (rng.uniform() < spec_.flip_probability) label = 1 - label;
      }
    }
    out.push_back(std::to_string(label));
  }
  return out;
}

std::unique_ptr<JudgeBackend> mock_backend(std::uint64_t seed, MockBehavior behavior, double p,
                                           Label fixed_label) {
  return std::make_unique<MockJudge>(MockJudgeSpec{behavior, seed, p, fixed_label});
}

HttpJudge::HttpJudge(JudgeEndpoint endpoint) : endpoint_(std::move(endpoint)) {}

json HttpJudge::request_body(const std::string& model, const ChatRequest& req) {
  return {{"model", model},
          {"messages",
           json::array({{{"role", "system"}, {"content", req.system}},
                        {{"role", "user"}, {"content", req.user}}})},
          {"temperature", req.temperature},
          {"top_p", req.top_p},
          {"n", req.n}};
}

std::vector<std::string> HttpJudge::complete(const ChatRequest& req) {
  ChatRequest sent = req;
  if (!endpoint_.supports_n) sent.n = 1;
  detail::HttpRequest http{endpoint_.url, endpoint_.api_key, request_body(endpoint_.model, sent),
                           1, 0, endpoint_.timeout_s};
  json res = detail::post_json(http, "judge");
  std::vector<std::string> out;
  try {
    for (const auto& choice : res.at("choices")) {
      out.push_back(choice.at("message").at("content").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kBackend, "judge", std::string("malformed response: ") + e.what());
  }
  if (out.empty()) throw Error(ErrorKind::kBackend, "judge", "response has no choices");
  return out;
}

JudgeVerdict aggregate_votes(std::vector<Label> votes, std::vector<std::string> raw) {
  if (votes.empty()) throw Error(ErrorKind::kParse, "judge", "no parseable votes");
  size_t ones = 0;
  for (Label v : votes) ones += v == 1 ? 1 : 0;
  const size_t zeros = votes.size() - ones;
  JudgeVerdict v;
  v.label = ones >= zeros ? 1 : 0;
  v.confidence = static_cast<double>(std::max(ones, zeros)) / static_cast<double>(votes.size());
  v.votes = std::move(votes);
  v.raw = std::move(raw);
  return v;
}

namespace {

std::vector<std::string> call_with_retry(JudgeBackend& backend, const ChatRequest& req,
                                         const JudgeOptions& options) {
  const int attempts = std::max(1, options.max_attempts);
  int delay_ms = options.backoff_ms;
  std::string last_error;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    if (options.on_call) options.on_call();
    try {
      auto out = backend.complete(req);
      if (options.on_trace) options.on_trace(req, out);
      return out;
    } catch (const TransportError& e) {
      last_error = e.what();
    }
    if (attempt < attempts && delay_ms > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
      delay_ms *= 2;
    }
  }
  throw TransportError("judge", last_error + " (gave up after " + std::to_string(attempts) +
                                    " attempts)",
                       attempts);
}

}  // namespace

JudgeVerdict judge(const PromptSpec& prompt, const DecodingParams& decoding,
                   JudgeBackend& backend, const JudgeOptions& options) {
  decoding.validate();
  ChatRequest req{prompt.system_instruction, prompt.render_user(), decoding.temperature,
                  decoding.top_p, decoding.n_samples};
  std::vector<std::string> raw;
  if (backend.supports_n() || decoding.n_samples == 1) {
    raw = call_with_retry(backend, req, options);
  } else {
    req.n = 1;
    for (int i = 0; i < decoding.n_samples; ++i) {
      auto one = call_with_retry(backend, req, options);
      raw.insert(raw.end(), one.begin(), one.end());
    }
  }
  std::vector<Label> votes;
  std::vector<std::string> kept;
  for (auto& r : raw) {
    try {
      votes.push_back(parse_label(r));
      kept.push_back(std::move(r));
    } catch (const Error&) {
      // unparseable sample; dropped from the vote
    }
  }
  if (votes.empty()) {
    throw Error(ErrorKind::kParse, "judge", "all " + std::to_string(raw.size()) +
                                                " samples were unparseable");
  }
  return aggregate_votes(std::move(votes), std::move(kept));
}

}  // namespace ragcfg
