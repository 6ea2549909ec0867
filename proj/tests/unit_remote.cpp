#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <chrono>
#include <string>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "bayescoh/errors.hpp"
#include "bayescoh/remote.hpp"

using namespace bayescoh;
using json = nlohmann::json;

namespace {

// In-process HTTP server driving one test case. Handlers run on the server
// thread; tests communicate through atomics and captured copies.
struct TestServer {
  httplib::Server server;
  int port = 0;
  std::thread thread;

  void start() {
    port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    thread = std::thread([this] { server.listen_after_bind(); });
    while (!server.is_running()) {
      std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }

  ~TestServer() {
    server.stop();
    if (thread.joinable()) thread.join();
  }
};

RemoteBackend::Options fast_options() {
  RemoteBackend::Options options;
  options.backoff_initial_ms = 1;  // keep retry tests quick
  return options;
}

std::string ok_body(double lp1, double lp2) {
  json body;
  body["tokens"] = {" two", " tokens."};
  body["token_logprobs"] = {lp1, lp2};
  return body.dump();
}

}  // namespace

TEST_CASE("a successful score round-trips the wire format") {
  TestServer ts;
  std::atomic<int> hits{0};
  json seen_request;
  std::string seen_auth;
  ts.server.Post("/v1/score", [&](const httplib::Request& req, httplib::Response& res) {
    hits.fetch_add(1);
    seen_request = json::parse(req.body);
    seen_auth = req.get_header_value("Authorization");
    res.set_content(ok_body(-1.5, -0.25), "application/json");
  });
  ts.start();

  const RemoteBackend backend(ts.url(), "local-test", "secret-key", fast_options());
  CHECK(backend.id() == "local-test");
  CHECK(!backend.supports_temperature_scaling());

  const ScoreResult result = backend.score({"the context", " a continuation.", 1.0});
  CHECK(hits == 1);
  CHECK(result.cumulative == -1.75);
  REQUIRE(result.tokens.size() == 2);
  CHECK(result.tokens[1] == " tokens.");

  CHECK(seen_request.at("context") == "the context");
  CHECK(seen_request.at("continuation") == " a continuation.");
  CHECK(seen_request.at("temperature") == 1.0);
  CHECK(seen_auth == "Bearer secret-key");
}

TEST_CASE("no Authorization header is sent without an api key") {
  TestServer ts;
  std::string seen_auth = "unset";
  ts.server.Post("/v1/score", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.has_header("Authorization") ? req.get_header_value("Authorization") : "";
    res.set_content(ok_body(-1.0, -1.0), "application/json");
  });
  ts.start();

  const RemoteBackend backend(ts.url(), "local-test");
  (void)backend.score({"ctx", " x.", 1.0});
  CHECK(seen_auth.empty());
}

TEST_CASE("server errors are retried and eventually succeed") {
  TestServer ts;
  std::atomic<int> hits{0};
  ts.server.Post("/v1/score", [&](const httplib::Request&, httplib::Response& res) {
    if (hits.fetch_add(1) < 2) {
      res.status = 503;
      res.set_content(R"({"error": "warming up"})", "application/json");
    } else {
      res.set_content(ok_body(-2.0, -1.0), "application/json");
    }
  });
  ts.start();

  const RemoteBackend backend(ts.url(), "local-test", "", fast_options());
  const ScoreResult result = backend.score({"ctx", " x.", 1.0});
  CHECK(hits == 3);
  CHECK(result.cumulative == -3.0);
}

TEST_CASE("persistent server errors exhaust the retry budget") {
  TestServer ts;
  std::atomic<int> hits{0};
  ts.server.Post("/v1/score", [&](const httplib::Request&, httplib::Response& res) {
    hits.fetch_add(1);
    res.status = 500;
    res.set_content(R"({"error": "db down"})", "application/json");
  });
  ts.start();

  const RemoteBackend backend(ts.url(), "local-test", "", fast_options());
  try {
    (void)backend.score({"ctx", " x.", 1.0});
    FAIL("expected TransportError");
  } catch (const TransportError& e) {
    const std::string what = e.what();
    CHECK(what.find("3 attempts") != std::string::npos);
    CHECK(what.find("db down") != std::string::npos);
  }
  CHECK(hits == 3);
}

TEST_CASE("an unreachable endpoint raises TransportError after retries") {
  // Bind a port, then close the server so nothing is listening there.
  int dead_port = 0;
  {
    TestServer ts;
    ts.start();
    dead_port = ts.port;
  }
  const RemoteBackend backend("http://127.0.0.1:" + std::to_string(dead_port),
                              "local-test", "", fast_options());
  CHECK_THROWS_AS((void)backend.score({"ctx", " x.", 1.0}), TransportError);
}

TEST_CASE("authentication failures are not retried") {
  for (int status : {401, 403}) {
    CAPTURE(status);
    TestServer ts;
    std::atomic<int> hits{0};
    ts.server.Post("/v1/score", [&](const httplib::Request&, httplib::Response& res) {
      hits.fetch_add(1);
      res.status = status;
      res.set_content(R"({"error": "bad key"})", "application/json");
    });
    ts.start();

    const RemoteBackend backend(ts.url(), "local-test", "wrong", fast_options());
    try {
      (void)backend.score({"ctx", " x.", 1.0});
      FAIL("expected AuthError");
    } catch (const AuthError& e) {
      CHECK(std::string(e.what()).find("bad key") != std::string::npos);
    }
    CHECK(hits == 1);
  }
}

TEST_CASE("tokenization rejections surface as TokenizationError") {
  TestServer ts;
  ts.server.Post("/v1/score", [&](const httplib::Request&, httplib::Response& res) {
    res.status = 422;
    res.set_content(R"({"error": "continuation splits a token"})", "application/json");
  });
  ts.start();

  const RemoteBackend backend(ts.url(), "local-test", "", fast_options());
  CHECK_THROWS_AS((void)backend.score({"ctx", " x.", 1.0}), TokenizationError);
}

TEST_CASE("other client errors and malformed bodies are protocol errors") {
  SUBCASE("unexpected 4xx status") {
    TestServer ts;
    ts.server.Post("/v1/score", [&](const httplib::Request&, httplib::Response& res) {
      res.status = 400;
      res.set_content(R"({"error": "no such model"})", "application/json");
    });
    ts.start();
    const RemoteBackend backend(ts.url(), "local-test", "", fast_options());
    try {
      (void)backend.score({"ctx", " x.", 1.0});
      FAIL("expected ProtocolError");
    } catch (const ProtocolError& e) {
      CHECK(std::string(e.what()).find("no such model") != std::string::npos);
    }
  }
  SUBCASE("unparseable body") {
    TestServer ts;
    ts.server.Post("/v1/score", [&](const httplib::Request&, httplib::Response& res) {
      res.set_content("not json at all", "application/json");
    });
    ts.start();
    const RemoteBackend backend(ts.url(), "local-test", "", fast_options());
    CHECK_THROWS_AS((void)backend.score({"ctx", " x.", 1.0}), ProtocolError);
  }
  SUBCASE("missing fields") {
    TestServer ts;
    ts.server.Post("/v1/score", [&](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"tokens": [" x."]})", "application/json");
    });
    ts.start();
    const RemoteBackend backend(ts.url(), "local-test", "", fast_options());
    CHECK_THROWS_AS((void)backend.score({"ctx", " x.", 1.0}), ProtocolError);
  }
  SUBCASE("positive log-probability") {
    TestServer ts;
    ts.server.Post("/v1/score", [&](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"tokens": [" x."], "token_logprobs": [0.5]})",
                      "application/json");
    });
    ts.start();
    const RemoteBackend backend(ts.url(), "local-test", "", fast_options());
    CHECK_THROWS_AS((void)backend.score({"ctx", " x.", 1.0}), ProtocolError);
  }
}

TEST_CASE("temperature requests respect the declared capability") {
  TestServer ts;
  std::atomic<int> hits{0};
  json seen_request;
  ts.server.Post("/v1/score", [&](const httplib::Request& req, httplib::Response& res) {
    hits.fetch_add(1);
    seen_request = json::parse(req.body);
    res.set_content(ok_body(-1.0, -1.0), "application/json");
  });
  ts.start();

  // Without the capability: refused before any network traffic.
  const RemoteBackend fixed(ts.url(), "local-test", "", fast_options());
  CHECK_THROWS_AS((void)fixed.score({"ctx", " x.", 2.0}), UnsupportedTemperature);
  CHECK(hits == 0);

  // With it: the temperature rides along in the request body.
  RemoteBackend::Options options = fast_options();
  options.temperature_scaling = true;
  const RemoteBackend scaling(ts.url(), "local-test", "", options);
  CHECK(scaling.supports_temperature_scaling());
  (void)scaling.score({"ctx", " x.", 2.0});
  CHECK(hits == 1);
  CHECK(seen_request.at("temperature") == 2.0);
}

TEST_CASE("invalid requests and constructions fail fast") {
  const RemoteBackend backend("http://127.0.0.1:1", "local-test", "", fast_options());
  CHECK_THROWS_AS((void)backend.score({"ctx", "", 1.0}), std::invalid_argument);

  CHECK_THROWS_AS(RemoteBackend("", "id"), ConstructionError);
  CHECK_THROWS_AS(RemoteBackend("http://x", ""), ConstructionError);
  RemoteBackend::Options bad;
  bad.max_attempts = 0;
  CHECK_THROWS_AS(RemoteBackend("http://x", "id", "", bad), ConstructionError);
}
