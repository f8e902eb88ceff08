#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <thread>

#include "support.hpp"
#include "taxexp/http_backend.hpp"

using namespace taxexp;
using taxexp::fixtures::TempDir;

namespace {

// Local completions endpoint whose behaviour each test scripts.
class FakeServer {
 public:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&, int call)>;

  explicit FakeServer(Handler handler) : handler_(std::move(handler)) {
    server_.Post("/v1/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const int call = calls_.fetch_add(1);
      {
        std::lock_guard lock(mu_);
        bodies_.push_back(nlohmann::json::parse(req.body));
        auth_.push_back(req.get_header_value("Authorization"));
      }
      handler_(req, res, call);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~FakeServer() {
    server_.stop();
    thread_.join();
  }

  EndpointConfig endpoint() const {
    EndpointConfig c;
    c.base_url = "http://127.0.0.1:" + std::to_string(port_) + "/v1/";
    c.model = "test-model";
    c.api_key_env = "TAXEXP_TEST_API_KEY";
    c.backoff = std::chrono::milliseconds(1);
    c.timeout = std::chrono::milliseconds(2000);
    return c;
  }

  int calls() const { return calls_.load(); }
  nlohmann::json body(std::size_t i) {
    std::lock_guard lock(mu_);
    return bodies_.at(i);
  }
  std::string auth(std::size_t i) {
    std::lock_guard lock(mu_);
    return auth_.at(i);
  }

 private:
  Handler handler_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::atomic<int> calls_{0};
  std::mutex mu_;
  std::vector<nlohmann::json> bodies_;
  std::vector<std::string> auth_;
};

void reply_text(httplib::Response& res, const std::string& text) {
  res.set_content(nlohmann::json{{"choices", {{{"text", text}}}}}.dump(), "application/json");
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::kInvalidArgument;
}

CompletionRequest simple(std::string prompt) {
  CompletionRequest r;
  r.prompt = std::move(prompt);
  return r;
}

}  // namespace

TEST(HttpBackend, RetriesServerErrorsThenSucceeds) {
  FakeServer server([](const httplib::Request&, httplib::Response& res, int call) {
    if (call < 2) {
      res.status = 500;
      res.set_content("boom", "text/plain");
      return;
    }
    reply_text(res, "ocean");
  });
  HttpBackend backend(server.endpoint());
  EXPECT_EQ(complete(backend, simple("p")).text, "ocean");
  EXPECT_EQ(server.calls(), 3);
}

TEST(HttpBackend, RetriesRateLimits) {
  FakeServer server([](const httplib::Request&, httplib::Response& res, int call) {
    if (call == 0) {
      res.status = 429;
      return;
    }
    reply_text(res, "YES");
  });
  HttpBackend backend(server.endpoint());
  EXPECT_EQ(complete(backend, simple("p")).text, "YES");
  EXPECT_EQ(server.calls(), 2);
}

TEST(HttpBackend, ClientErrorsAreNotRetried) {
  FakeServer server([](const httplib::Request&, httplib::Response& res, int) { res.status = 400; });
  HttpBackend backend(server.endpoint());
  try {
    complete(backend, simple("p"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kHttpError);
    EXPECT_EQ(e.http_status(), 400);
  }
  EXPECT_EQ(server.calls(), 1);
}

TEST(HttpBackend, RetriesExhausted) {
  FakeServer server([](const httplib::Request&, httplib::Response& res, int) { res.status = 503; });
  auto cfg = server.endpoint();
  cfg.retries = 2;
  HttpBackend backend(cfg);
  EXPECT_EQ(code_of([&] { complete(backend, simple("p")); }), ErrorCode::kRetriesExhausted);
  EXPECT_EQ(server.calls(), 3);
}

TEST(HttpBackend, TimeoutWithoutRetries) {
  FakeServer server([](const httplib::Request&, httplib::Response& res, int) {
    std::this_thread::sleep_for(std::chrono::milliseconds(600));
    reply_text(res, "late");
  });
  auto cfg = server.endpoint();
  cfg.retries = 0;
  cfg.timeout = std::chrono::milliseconds(100);
  HttpBackend backend(cfg);
  EXPECT_EQ(code_of([&] { complete(backend, simple("p")); }), ErrorCode::kTimeout);
}

TEST(HttpBackend, RequestShapeAndStopTruncation) {
  FakeServer server([](const httplib::Request&, httplib::Response& res, int) { reply_text(res, "ocean\nbecause"); });
  HttpBackend backend(server.endpoint());
  auto req = simple("Answer:");
  req.max_tokens = 7;
  EXPECT_EQ(complete(backend, req).text, "ocean");
  const auto body = server.body(0);
  EXPECT_EQ(body.at("model"), "test-model");
  EXPECT_EQ(body.at("prompt"), "Answer:");
  EXPECT_EQ(body.at("max_tokens"), 7);
  EXPECT_EQ(body.at("temperature"), 0.0);
  EXPECT_EQ(body.at("stop"), nlohmann::json::array({"\n"}));
  EXPECT_FALSE(body.contains("logprobs"));
  EXPECT_FALSE(body.contains("echo"));
}

TEST(HttpBackend, EchoScoringSelectsContinuationTokens) {
  // Prompt "Q:" + continuation " a -> b"; the tokenizer splits "Q: a" across
  // the boundary so the first continuation token must be clipped.
  FakeServer server([](const httplib::Request& req, httplib::Response& res, int) {
    const auto body = nlohmann::json::parse(req.body);
    EXPECT_EQ(body.at("prompt"), "Q: a -> b");
    EXPECT_EQ(body.at("echo"), true);
    nlohmann::json lp{{"tokens", {"Q", ": a", " ->", " b", "!"}},
                      {"token_logprobs", {nullptr, -1.0, -2.0, -3.0, -9.0}},
                      {"text_offset", {0, 1, 4, 7, 9}}};
    res.set_content(nlohmann::json{{"choices", {{{"text", "Q: a -> b!"}, {"logprobs", lp}}}}}.dump(),
                    "application/json");
  });
  HttpBackend backend(server.endpoint());
  EXPECT_DOUBLE_EQ(average_logprob(backend, "Q:", " a -> b"), -2.0);
}

TEST(HttpBackend, EchoWithoutLogprobsIsReported) {
  FakeServer server([](const httplib::Request&, httplib::Response& res, int) { reply_text(res, "x"); });
  HttpBackend backend(server.endpoint());
  EXPECT_EQ(code_of([&] { average_logprob(backend, "Q:", " a"); }), ErrorCode::kBackendLacksLogprobs);
}

TEST(HttpBackend, MalformedBody) {
  FakeServer server([](const httplib::Request&, httplib::Response& res, int) {
    res.set_content("{\"choices\": []}", "application/json");
  });
  HttpBackend backend(server.endpoint());
  EXPECT_EQ(code_of([&] { complete(backend, simple("p")); }), ErrorCode::kMalformedResponse);
}

TEST(HttpBackend, KeyComesFromEnvironmentAndNeverReachesTheAuditLog) {
  TempDir dir;
  FakeServer server([](const httplib::Request&, httplib::Response& res, int call) {
    if (call == 0) {
      res.status = 500;
      return;
    }
    reply_text(res, "ok");
  });
  ::setenv("TAXEXP_TEST_API_KEY", "sk-very-secret-value", 1);
  auto cfg = server.endpoint();
  cfg.audit_log = dir / "audit.jsonl";
  HttpBackend backend(cfg);
  complete(backend, simple("hello"));
  ::unsetenv("TAXEXP_TEST_API_KEY");
  EXPECT_EQ(server.auth(0), "Bearer sk-very-secret-value");
  const auto log = fixtures::read_text(dir / "audit.jsonl");
  EXPECT_EQ(log.find("sk-very-secret-value"), std::string::npos);
  EXPECT_NE(log.find("hello"), std::string::npos);
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 2);

  complete(backend, simple("again"));
  EXPECT_EQ(server.auth(2), "");
}

TEST(HttpBackend, ConfigValidation) {
  EndpointConfig c;
  EXPECT_EQ(code_of([&] { HttpBackend b(c); }), ErrorCode::kConfigError);  // no model
  c.model = "m";
  c.base_url = "localhost:8000";
  EXPECT_EQ(code_of([&] { HttpBackend b(c); }), ErrorCode::kConfigError);
}

TEST(HttpBackend, ConcurrentRequestsAreBounded) {
  std::atomic<int> in_flight{0}, peak{0};
  FakeServer server([&](const httplib::Request&, httplib::Response& res, int) {
    const int now = ++in_flight;
    int p = peak.load();
    while (now > p && !peak.compare_exchange_weak(p, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(30));
    --in_flight;
    reply_text(res, "x");
  });
  auto cfg = server.endpoint();
  cfg.parallelism = 2;
  HttpBackend backend(cfg);
  std::vector<std::jthread> threads;
  for (int i = 0; i < 6; ++i) threads.emplace_back([&] { complete(backend, simple("p")); });
  threads.clear();
  EXPECT_EQ(server.calls(), 6);
  EXPECT_LE(peak.load(), 2);
}
