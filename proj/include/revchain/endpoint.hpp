#pragma once

// Builds a generation client from configuration: "mock" for the offline
// model, otherwise an HTTP endpoint wrapped in a concurrency cap and retries.

#include <cstdlib>
#include <memory>
#include <string>

#include "revchain/config.hpp"
#include "revchain/generation_client.hpp"
#include "revchain/http_client.hpp"
#include "revchain/mock_model.hpp"

namespace revchain {

struct EndpointConfig {
  std::string url = "mock";
  std::string api_key_env;
  int timeout_seconds = 120;
  int max_in_flight = 4;
  RetryPolicy retry;

  static EndpointConfig from_config(const Config& c) {
    EndpointConfig e;
    e.url = c.get<std::string>("endpoint.url", e.url);
    e.api_key_env = c.get<std::string>("endpoint.api_key_env", "");
    e.timeout_seconds = c.get<int>("endpoint.timeout_seconds", e.timeout_seconds);
    e.max_in_flight = c.get<int>("endpoint.max_in_flight", e.max_in_flight);
    e.retry.max_attempts = c.get<int>("endpoint.max_retries", e.retry.max_attempts);
    return e;
  }
};

inline std::shared_ptr<GenerationClient> make_client(const EndpointConfig& e) {
  if (e.url == "mock") return std::make_shared<MockModel>();
  HttpEndpoint ep;
  ep.base_url = e.url;
  ep.timeout = std::chrono::seconds(e.timeout_seconds);
  if (!e.api_key_env.empty()) {
    const char* key = std::getenv(e.api_key_env.c_str());
    if (key == nullptr) throw Error(ErrorKind::config_error, "environment variable " + e.api_key_env + " is not set");
    ep.api_key = key;
  }
  auto http = std::make_shared<HttpGenerationClient>(ep);
  auto throttled = std::make_shared<ThrottledClient>(http, e.max_in_flight);
  return std::make_shared<RetryingClient>(throttled, e.retry);
}

}  // namespace revchain
