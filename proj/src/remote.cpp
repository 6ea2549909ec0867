#include "bayescoh/remote.hpp"

#include <chrono>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "bayescoh/errors.hpp"

namespace bayescoh {

namespace {

using nlohmann::json;

std::string error_detail(const httplib::Response& response) {
  try {
    json body = json::parse(response.body);
    if (body.is_object() && body.contains("error") && body["error"].is_string()) {
      return body["error"].get<std::string>();
    }
  } catch (const json::parse_error&) {
    // fall through to the raw body
  }
  if (response.body.empty()) return "(empty body)";
  if (response.body.size() > 200) return response.body.substr(0, 200) + "...";
  return response.body;
}

}  // namespace

RemoteBackend::RemoteBackend(std::string endpoint, std::string backend_id, std::string api_key)
    : RemoteBackend(std::move(endpoint), std::move(backend_id), std::move(api_key), Options()) {}

RemoteBackend::RemoteBackend(std::string endpoint, std::string backend_id, std::string api_key,
                             Options options)
    : endpoint_(std::move(endpoint)),
      backend_id_(std::move(backend_id)),
      api_key_(std::move(api_key)),
      options_(options) {
  if (endpoint_.empty()) throw ConstructionError("remote backend needs an endpoint URL");
  if (backend_id_.empty()) throw ConstructionError("remote backend needs a backend id");
  if (options_.max_attempts < 1) {
    throw ConstructionError("remote backend needs at least 1 attempt");
  }
}

ScoreResult RemoteBackend::score(const ScoreRequest& request) const {
  check_request(request);
  if (request.temperature != 1.0 && !options_.temperature_scaling) {
    throw UnsupportedTemperature("backend \"" + backend_id_ +
                                 "\" cannot rescale distributions to temperature " +
                                 std::to_string(request.temperature));
  }

  json body;
  body["context"] = request.context;
  body["continuation"] = request.continuation;
  body["temperature"] = request.temperature;
  const std::string payload = body.dump();

  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  std::string last_failure;
  int backoff_ms = options_.backoff_initial_ms;
  for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
    if (attempt > 1) {
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
      backoff_ms *= 2;
    }
    // A fresh client per call keeps score() safe to run concurrently.
    httplib::Client client(endpoint_);
    client.set_connection_timeout(options_.timeout_seconds, 0);
    client.set_read_timeout(options_.timeout_seconds, 0);

    httplib::Result result = client.Post("/v1/score", headers, payload, "application/json");
    if (!result) {
      last_failure = "connection failed (" + httplib::to_string(result.error()) + ")";
      continue;
    }

    int status = result->status;
    if (status >= 500) {
      last_failure = "server error " + std::to_string(status) + ": " + error_detail(*result);
      continue;
    }
    if (status == 401 || status == 403) {
      throw AuthError("endpoint " + endpoint_ + " rejected credentials (" +
                      std::to_string(status) + "): " + error_detail(*result));
    }
    if (status == 422) {
      throw TokenizationError("endpoint " + endpoint_ +
                              " could not tokenize the request: " + error_detail(*result));
    }
    if (status != 200) {
      throw ProtocolError("endpoint " + endpoint_ + " answered " + std::to_string(status) +
                          ": " + error_detail(*result));
    }

    json parsed;
    try {
      parsed = json::parse(result->body);
    } catch (const json::parse_error& e) {
      throw ProtocolError("endpoint " + endpoint_ + " returned unparseable JSON: " + e.what());
    }
    return score_result_from_json(parsed);
  }
  throw TransportError("endpoint " + endpoint_ + " unreachable after " +
                       std::to_string(options_.max_attempts) + " attempts; last failure: " +
                       last_failure);
}

}  // namespace bayescoh
