#pragma once

#include <string>

#include "bayescoh/backend.hpp"

namespace bayescoh {

// Scores requests against an HTTP endpoint speaking the score protocol:
//
//   POST {endpoint}/v1/score
//   request body  {"context": "...", "continuation": "...", "temperature": 1.0}
//   200 response  {"tokens": ["..."], "token_logprobs": [-0.1, ...]}
//   error         4xx/5xx with {"error": "..."}
//
// An API key, when configured, travels as "Authorization: Bearer <key>".
//
// Failure policy: connection failures and 5xx responses are retried with
// exponential backoff up to max_attempts, then raise TransportError;
// 401/403 raise AuthError immediately; 422 raises TokenizationError; any
// other 4xx, or a 200 whose body violates the contract (unparseable,
// mismatched arrays, positive log-probability), raises ProtocolError.
class RemoteBackend : public ModelBackend {
 public:
  struct Options {
    int max_attempts = 3;
    int backoff_initial_ms = 200;  // doubles after every failed attempt
    // Whether the endpoint applies temperatures other than 1. When false,
    // such requests raise UnsupportedTemperature without touching the wire.
    bool temperature_scaling = false;
    int timeout_seconds = 120;
  };

  RemoteBackend(std::string endpoint, std::string backend_id, std::string api_key = "");
  RemoteBackend(std::string endpoint, std::string backend_id, std::string api_key,
                Options options);

  std::string id() const override { return backend_id_; }
  bool supports_temperature_scaling() const override { return options_.temperature_scaling; }
  ScoreResult score(const ScoreRequest& request) const override;

 private:
  std::string endpoint_;
  std::string backend_id_;
  std::string api_key_;
  Options options_;
};

}  // namespace bayescoh
