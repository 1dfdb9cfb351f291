#pragma once

// Endpoint-agnostic text generation. Concrete clients implement chat
// completion and total sequence log-probability scoring; decorators add
// retries and an in-flight request cap.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "revchain/corpus.hpp"
#include "revchain/error.hpp"
#include "revchain/jsonl.hpp"

namespace revchain {

struct ChatMessage {
  std::string role;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.8;
  double top_p = 0.95;
};

struct LogprobRequest {
  std::string model;
  std::string prompt;
  std::string completion;
};

struct Capabilities {
  bool chat_completion = true;
  bool sequence_logprob = false;
};

// Wire bodies for the generation endpoint.
inline Json to_wire(const ChatRequest& r) {
  Json messages = Json::array();
  for (const auto& m : r.messages) messages.push_back(Json{{"role", m.role}, {"content", m.content}});
  return Json{{"model", r.model}, {"messages", messages}, {"temperature", r.temperature}, {"top_p", r.top_p}};
}

inline Json to_wire(const LogprobRequest& r) {
  return Json{{"model", r.model}, {"prompt", r.prompt}, {"completion", r.completion}};
}

inline ChatRequest chat_request_from_wire(const Json& j) {
  ChatRequest r;
  r.model = j.value("model", std::string{});
  for (const auto& m : j.at("messages")) {
    r.messages.push_back({m.value("role", std::string{}), m.value("content", std::string{})});
  }
  r.temperature = j.value("temperature", 0.8);
  r.top_p = j.value("top_p", 0.95);
  return r;
}

class GenerationClient {
 public:
  virtual ~GenerationClient() = default;

  virtual Capabilities capabilities() const = 0;
  virtual std::string describe() const = 0;

  // Throws TransportError for endpoint failures.
  virtual std::string chat_completion(const ChatRequest& request) = 0;

  // Total log-probability of `completion` given `prompt`.
  virtual double sequence_logprob(const LogprobRequest& request) = 0;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  double backoff_factor = 2.0;
};

// Retries transport failures with exponential backoff. Any other error is
// surfaced immediately.
class RetryingClient final : public GenerationClient {
 public:
  RetryingClient(std::shared_ptr<GenerationClient> inner, RetryPolicy policy = {})
      : inner_(std::move(inner)), policy_(policy) {
    if (policy_.max_attempts < 1) throw Error(ErrorKind::config_error, "max_attempts must be >= 1");
  }

  Capabilities capabilities() const override { return inner_->capabilities(); }
  std::string describe() const override { return "retrying(" + inner_->describe() + ")"; }

  std::string chat_completion(const ChatRequest& request) override {
    return with_retries([&] { return inner_->chat_completion(request); });
  }
  double sequence_logprob(const LogprobRequest& request) override {
    return with_retries([&] { return inner_->sequence_logprob(request); });
  }

 private:
  template <typename F>
  auto with_retries(F&& call) -> decltype(call()) {
    auto backoff = policy_.initial_backoff;
    std::string last;
    for (int attempt = 1;; ++attempt) {
      try {
        return call();
      } catch (const TransportError& e) {
        last = e.what();
        if (attempt >= policy_.max_attempts) throw TransportError(last, attempt);
        std::this_thread::sleep_for(backoff);
        backoff = std::chrono::milliseconds(
            static_cast<std::int64_t>(static_cast<double>(backoff.count()) * policy_.backoff_factor));
      }
    }
  }

  std::shared_ptr<GenerationClient> inner_;
  RetryPolicy policy_;
};

// Caps concurrent requests to the wrapped client.
class ThrottledClient final : public GenerationClient {
 public:
  ThrottledClient(std::shared_ptr<GenerationClient> inner, int max_in_flight)
      : inner_(std::move(inner)), max_in_flight_(max_in_flight) {
    if (max_in_flight_ < 1) throw Error(ErrorKind::config_error, "max_in_flight must be >= 1");
  }

  Capabilities capabilities() const override { return inner_->capabilities(); }
  std::string describe() const override { return inner_->describe(); }

  std::string chat_completion(const ChatRequest& request) override {
    Slot slot(*this);
    return inner_->chat_completion(request);
  }
  double sequence_logprob(const LogprobRequest& request) override {
    Slot slot(*this);
    return inner_->sequence_logprob(request);
  }

  int peak_in_flight() const {
    std::lock_guard lock(mu_);
    return peak_;
  }

 private:
  struct Slot {
    explicit Slot(ThrottledClient& c) : c_(c) {
      std::unique_lock lock(c_.mu_);
      c_.cv_.wait(lock, [&] { return c_.in_flight_ < c_.max_in_flight_; });
      ++c_.in_flight_;
      c_.peak_ = std::max(c_.peak_, c_.in_flight_);
    }
    ~Slot() {
      {
        std::lock_guard lock(c_.mu_);
        --c_.in_flight_;
      }
      c_.cv_.notify_one();
    }
    Slot(const Slot&) = delete;
    Slot& operator=(const Slot&) = delete;
    ThrottledClient& c_;
  };

  std::shared_ptr<GenerationClient> inner_;
  int max_in_flight_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  int in_flight_ = 0;
  int peak_ = 0;
};

inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Deterministic in-process client for tests and offline runs. Without a
// handler, chat completions echo a hash of the request and log-probs are a
// hash-derived value in [-400, -1).
class MockClient final : public GenerationClient {
 public:
  using ChatHandler = std::function<std::string(const ChatRequest&, int call_index)>;
  using LogprobHandler = std::function<double(const LogprobRequest&)>;

  MockClient() = default;
  explicit MockClient(ChatHandler chat, LogprobHandler logprob = {})
      : chat_(std::move(chat)), logprob_(std::move(logprob)) {}

  Capabilities capabilities() const override { return {true, true}; }
  std::string describe() const override { return "mock"; }

  std::string chat_completion(const ChatRequest& request) override {
    int index = 0;
    {
      std::lock_guard lock(mu_);
      index = chat_calls_++;
      requests_.push_back(request);
    }
    if (chat_) return chat_(request, index);
    std::string key = request.model;
    for (const auto& m : request.messages) key += "\x1f" + m.role + "\x1e" + m.content;
    return "mock-completion-" + std::to_string(fnv1a64(key));
  }

  double sequence_logprob(const LogprobRequest& request) override {
    {
      std::lock_guard lock(mu_);
      ++logprob_calls_;
    }
    if (logprob_) return logprob_(request);
    const auto h = fnv1a64(request.model + "\x1f" + request.prompt + "\x1f" + request.completion);
    return -1.0 - static_cast<double>(h % 399000ULL) / 1000.0;
  }

  int chat_calls() const {
    std::lock_guard lock(mu_);
    return chat_calls_;
  }
  int logprob_calls() const {
    std::lock_guard lock(mu_);
    return logprob_calls_;
  }
  std::vector<ChatRequest> requests() const {
    std::lock_guard lock(mu_);
    return requests_;
  }

 private:
  ChatHandler chat_;
  LogprobHandler logprob_;
  mutable std::mutex mu_;
  int chat_calls_ = 0;
  int logprob_calls_ = 0;
  std::vector<ChatRequest> requests_;
};

// Draws `n` independent completions for one prompt. Each sample records the
// sampling configuration that was actually sent.
inline std::vector<ResponseSample> sample_responses(GenerationClient& client, const std::string& prompt,
                                                    int n, const SamplingConfig& cfg,
                                                    const std::string& model_tag,
                                                    const std::string& query_id = "") {
  if (n < 1) throw Error(ErrorKind::invalid_input, "n must be >= 1");
  cfg.validate();
  std::vector<ResponseSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    ChatRequest req;
    req.model = model_tag;
    req.messages = {{"user", prompt}};
    req.temperature = cfg.temperature;
    req.top_p = cfg.top_p;
    auto text = client.chat_completion(req);
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
      throw Error(ErrorKind::generation_error, "endpoint returned an empty completion for sample " +
                                                   std::to_string(i + 1));
    }
    ResponseSample s;
    s.id = (query_id.empty() ? std::string("r") : query_id + "-r") + std::to_string(i + 1);
    s.query_id = query_id;
    s.text = std::move(text);
    s.sampling = SamplingConfig{req.temperature, req.top_p};
    s.model_tag = model_tag;
    out.push_back(std::move(s));
  }
  return out;
}

// Five queries for one document, ids <document>-q1 .. -q5.
inline std::vector<Query> generate_queries(GenerationClient& client, const SourceDocument& doc,
                                           const std::string& model_tag, const SamplingConfig& cfg = {}) {
  ChatRequest req;
  req.model = model_tag;
  req.messages = {{"user", assemble_query_gen_prompt(doc)}};
  req.temperature = cfg.temperature;
  req.top_p = cfg.top_p;
  return parse_queries_json(client.chat_completion(req), doc.id);
}

}  // namespace revchain
