#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "taxexp/error.hpp"
#include "taxexp/llm.hpp"

namespace taxexp {

struct EndpointConfig {
  std::string base_url = "http://127.0.0.1:8000/v1";
  std::string model;
  std::string api_key_env = "OPENAI_API_KEY";  // name of the variable, never the key
  std::chrono::milliseconds timeout{60000};
  int retries = 3;
  std::size_t parallelism = 4;
  std::chrono::milliseconds backoff{250};
  std::optional<std::filesystem::path> audit_log;

  void validate() const {
    if (base_url.find("://") == std::string::npos) {
      throw Error(ErrorCode::kConfigError, "endpoint url needs a scheme: '" + base_url + "'");
    }
    if (model.empty()) throw Error(ErrorCode::kConfigError, "endpoint model is required");
    if (retries < 0) throw Error(ErrorCode::kConfigError, "retries must be >= 0");
    if (parallelism < 1 || parallelism > 256) throw Error(ErrorCode::kConfigError, "endpoint parallelism must be in [1, 256]");
    if (timeout.count() <= 0) throw Error(ErrorCode::kConfigError, "timeout must be positive");
  }
};

namespace detail {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path without trailing slash
};

inline SplitUrl split_url(std::string_view url) {
  const auto scheme_end = url.find("://");
  const auto path_start = url.find('/', scheme_end + 3);
  SplitUrl out;
  out.origin = std::string(url.substr(0, path_start));
  if (path_start != std::string_view::npos) out.prefix = std::string(url.substr(path_start));
  while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  return out;
}

// Picks the tokens covering [begin, begin + length) of the echoed text and
// clips the boundary tokens so their concatenation is exactly that span.
inline std::vector<TokenLogprob> tokens_in_span(const nlohmann::json& logprobs, std::size_t begin, std::size_t length) {
  const auto& tokens = logprobs.at("tokens");
  const auto& lps = logprobs.at("token_logprobs");
  if (!tokens.is_array() || !lps.is_array() || tokens.size() != lps.size()) {
    throw Error(ErrorCode::kMalformedResponse, "logprobs.tokens and token_logprobs differ in length");
  }
  std::vector<std::size_t> offsets;
  if (logprobs.contains("text_offset") && logprobs.at("text_offset").is_array() &&
      logprobs.at("text_offset").size() == tokens.size()) {
    for (const auto& o : logprobs.at("text_offset")) offsets.push_back(o.get<std::size_t>());
  } else {
    std::size_t pos = 0;
    for (const auto& tok : tokens) {
      offsets.push_back(pos);
      pos += tok.get<std::string>().size();
    }
  }
  const auto end = begin + length;
  std::vector<TokenLogprob> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto tok = tokens[i].get<std::string>();
    const auto tb = offsets[i];
    const auto te = tb + tok.size();
    if (te <= begin || tb >= end) continue;
    if (lps[i].is_null()) throw Error(ErrorCode::kMalformedResponse, "null log-probability inside the continuation");
    const auto from = std::max(tb, begin);
    const auto to = std::min(te, end);
    out.push_back({tok.substr(from - tb, to - from), lps[i].get<double>()});
  }
  return out;
}

}  // namespace detail

// POSTs to <base_url>/completions. Transport errors, 429 and 5xx are retried
// with exponential backoff; other statuses fail at once. The audit log records
// requests and responses but never headers.
class HttpBackend : public CompletionBackend {
 public:
  explicit HttpBackend(EndpointConfig config) : config_(std::move(config)), slots_(static_cast<std::ptrdiff_t>(config_.parallelism)) {
    config_.validate();
    url_ = detail::split_url(config_.base_url);
  }

  std::string id() const override { return "http:" + config_.model; }

  const EndpointConfig& config() const { return config_; }

 protected:
  CompletionResponse do_send(const CompletionRequest& req) override {
    slots_.acquire();
    struct Release {
      std::counting_semaphore<256>& s;
      ~Release() { s.release(); }
    } release{slots_};

    const auto body = request_body(req).dump();
    httplib::Headers headers;
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    ErrorCode last_code = ErrorCode::kHttpError;
    std::string last_message;
    int last_status = 0;
    const auto start = std::chrono::steady_clock::now();
    for (int attempt = 0; attempt <= config_.retries; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(config_.backoff * (1 << std::min(attempt - 1, 16)));
      httplib::Client client(url_.origin);
      const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
      const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
      client.set_connection_timeout(secs.count(), usecs.count());
      client.set_read_timeout(secs.count(), usecs.count());
      client.set_write_timeout(secs.count(), usecs.count());

      auto res = client.Post(url_.prefix + "/completions", headers, body, "application/json");
      if (!res) {
        const auto err = res.error();
        last_code = err == httplib::Error::Read || err == httplib::Error::Write || err == httplib::Error::ConnectionTimeout
                        ? ErrorCode::kTimeout
                        : ErrorCode::kHttpError;
        last_message = "transport error: " + httplib::to_string(err);
        last_status = 0;
        audit(req, attempt, 0, last_message);
        continue;
      }
      last_status = res->status;
      if (res->status == 200) {
        auto resp = parse(req, res->body);
        resp.latency = std::chrono::steady_clock::now() - start;
        audit(req, attempt, 200, resp.text);
        return resp;
      }
      last_message = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
      last_code = ErrorCode::kHttpError;
      audit(req, attempt, res->status, last_message);
      if (res->status != 429 && res->status < 500) throw Error(ErrorCode::kHttpError, last_message, res->status);
    }
    if (config_.retries == 0) throw Error(last_code, last_message, last_status);
    throw Error(ErrorCode::kRetriesExhausted,
                std::to_string(config_.retries + 1) + " attempts failed; last: " + last_message, last_status);
  }

 private:
  nlohmann::json request_body(const CompletionRequest& req) const {
    nlohmann::json j{{"model", config_.model}, {"temperature", req.temperature}};
    if (req.echo_continuation) {
      j["prompt"] = req.prompt + *req.echo_continuation;
      j["max_tokens"] = 1;
      j["echo"] = true;
      j["logprobs"] = 1;
    } else {
      j["prompt"] = req.prompt;
      j["max_tokens"] = req.max_tokens;
      j["stop"] = req.stop;
      if (req.want_logprobs) j["logprobs"] = 1;
    }
    return j;
  }

  CompletionResponse parse(const CompletionRequest& req, const std::string& body) const {
    CompletionResponse out;
    out.backend_id = id();
    try {
      const auto j = nlohmann::json::parse(body);
      const auto& choice = j.at("choices").at(0);
      const auto text = choice.at("text").get<std::string>();
      const bool has_logprobs = choice.contains("logprobs") && choice.at("logprobs").is_object();
      if (req.echo_continuation) {
        if (!has_logprobs) throw Error(ErrorCode::kBackendLacksLogprobs, id() + " returned no logprobs for echo scoring");
        out.text = *req.echo_continuation;
        out.tokens = detail::tokens_in_span(choice.at("logprobs"), req.prompt.size(), req.echo_continuation->size());
      } else {
        out.text = text;
        if (req.want_logprobs && has_logprobs) {
          out.tokens = detail::tokens_in_span(choice.at("logprobs"), 0, text.size());
        }
      }
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::kMalformedResponse, std::string("completion response: ") + ex.what());
    }
    return out;
  }

  void audit(const CompletionRequest& req, int attempt, int status, const std::string& outcome) {
    if (!config_.audit_log) return;
    nlohmann::ordered_json j{{"backend", id()},
                             {"attempt", attempt},
                             {"status", status},
                             {"prompt_hash", fnv1a(req.prompt)},
                             {"prompt", req.prompt},
                             {"continuation", req.echo_continuation ? nlohmann::ordered_json(*req.echo_continuation) : nullptr},
                             {"outcome", outcome}};
    std::lock_guard lock(audit_mutex_);
    std::filesystem::create_directories(config_.audit_log->parent_path().empty() ? "." : config_.audit_log->parent_path());
    std::ofstream f(*config_.audit_log, std::ios::app);
    f << j.dump() << '\n';
  }

  EndpointConfig config_;
  detail::SplitUrl url_;
  std::counting_semaphore<256> slots_;
  std::mutex audit_mutex_;
};

}  // namespace taxexp
