#pragma once

// HTTP generation client speaking a chat-completion style API:
//   POST <base>/v1/chat/completions  {model, messages, temperature, top_p}
//     -> {"choices": [{"message": {"content": "..."}}]}
//   POST <base>/v1/logprob           {model, prompt, completion}
//     -> {"logprob": <total completion log-probability>}

#include <chrono>
#include <string>
#include <string_view>

#include <httplib.h>

#include "revchain/generation_client.hpp"

namespace revchain {

struct HttpEndpoint {
  std::string base_url;  // scheme://host[:port][/prefix]
  std::string api_key;
  std::chrono::seconds timeout{120};
};

class HttpGenerationClient final : public GenerationClient {
 public:
  explicit HttpGenerationClient(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {
    const std::string_view url = endpoint_.base_url;
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string_view::npos) {
      throw Error(ErrorKind::config_error, "endpoint URL needs a scheme: " + endpoint_.base_url);
    }
    const auto path_start = url.find('/', scheme_end + 3);
    origin_ = std::string(url.substr(0, path_start));
    if (path_start != std::string_view::npos) prefix_ = std::string(url.substr(path_start));
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }

  Capabilities capabilities() const override { return {true, true}; }
  std::string describe() const override { return endpoint_.base_url; }

  std::string chat_completion(const ChatRequest& request) override {
    const Json body = post("/v1/chat/completions", to_wire(request));
    try {
      return body.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorKind::generation_error, "chat response lacks choices[0].message.content");
    }
  }

  double sequence_logprob(const LogprobRequest& request) override {
    const Json body = post("/v1/logprob", to_wire(request));
    if (!body.contains("logprob") || !body.at("logprob").is_number()) {
      throw Error(ErrorKind::generation_error, "logprob response lacks a numeric \"logprob\"");
    }
    return body.at("logprob").get<double>();
  }

 private:
  Json post(const std::string& path, const Json& payload) {
    httplib::Client cli(origin_);
    cli.set_connection_timeout(endpoint_.timeout);
    cli.set_read_timeout(endpoint_.timeout);
    httplib::Headers headers;
    if (!endpoint_.api_key.empty()) headers.emplace("Authorization", "Bearer " + endpoint_.api_key);
    auto res = cli.Post(prefix_ + path, headers, dump_line(payload), "application/json");
    if (!res) {
      throw TransportError("request to " + origin_ + prefix_ + path + " failed: " +
                               httplib::to_string(res.error()),
                           1);
    }
    if (res->status == 429 || res->status >= 500) {
      throw TransportError("endpoint returned HTTP " + std::to_string(res->status), 1);
    }
    if (res->status >= 400) {
      throw Error(ErrorKind::config_error,
                  "endpoint rejected request with HTTP " + std::to_string(res->status) + ": " + res->body);
    }
    try {
      return Json::parse(res->body);
    } catch (const nlohmann::json::parse_error&) {
      throw Error(ErrorKind::generation_error, "endpoint returned non-JSON body");
    }
  }

  HttpEndpoint endpoint_;
  std::string origin_;
  std::string prefix_;
};

}  // namespace revchain
