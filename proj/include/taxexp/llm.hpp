#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "taxexp/error.hpp"
#include "taxexp/taxonomy.hpp"
#include "taxexp/text.hpp"

namespace taxexp {

struct CompletionRequest {
  std::string prompt;
  int max_tokens = 32;
  double temperature = 0.0;
  std::vector<std::string> stop{"\n"};
  bool want_logprobs = false;
  // When set, the backend scores this continuation after `prompt` instead of
  // sampling, returning its per-token log-probabilities.
  std::optional<std::string> echo_continuation;

  void validate() const {
    if (max_tokens < 1) throw Error(ErrorCode::kInvalidArgument, "max_tokens must be >= 1");
    if (!(temperature >= 0)) throw Error(ErrorCode::kInvalidArgument, "temperature must be >= 0");
    if (echo_continuation && echo_continuation->empty()) {
      throw Error(ErrorCode::kInvalidArgument, "echo continuation must be non-empty");
    }
  }
};

struct TokenLogprob {
  std::string token;
  double logprob;
};

struct CompletionResponse {
  std::string text;
  std::vector<TokenLogprob> tokens;
  std::string backend_id;
  std::chrono::nanoseconds latency{0};
};

// Backends must tolerate concurrent send() calls.
class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;

  virtual std::string id() const = 0;
  virtual bool supports_logprobs() const { return true; }

  CompletionResponse send(const CompletionRequest& req) {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return do_send(req);
  }

  std::size_t call_count() const { return calls_.load(std::memory_order_relaxed); }

 protected:
  virtual CompletionResponse do_send(const CompletionRequest& req) = 0;

 private:
  std::atomic<std::size_t> calls_{0};
};

inline std::string truncate_at_stop(std::string_view text, const std::vector<std::string>& stops) {
  std::size_t cut = text.size();
  for (const auto& s : stops) {
    if (s.empty()) continue;
    cut = std::min(cut, text.find(s));
  }
  return std::string(text.substr(0, cut));
}

inline CompletionResponse complete(CompletionBackend& backend, const CompletionRequest& req) {
  req.validate();
  if (req.want_logprobs && !backend.supports_logprobs()) {
    throw Error(ErrorCode::kBackendLacksLogprobs, backend.id() + " does not report token log-probabilities");
  }
  const auto start = std::chrono::steady_clock::now();
  auto resp = backend.send(req);
  if (resp.latency == std::chrono::nanoseconds{0}) resp.latency = std::chrono::steady_clock::now() - start;
  if (resp.backend_id.empty()) resp.backend_id = backend.id();

  for (const auto& t : resp.tokens) {
    if (!std::isfinite(t.logprob) || t.logprob > 0.0) {
      throw Error(ErrorCode::kMalformedResponse, "token log-probability " + format_double(t.logprob) + " for '" +
                                                     t.token + "'");
    }
  }
  if (req.echo_continuation) {
    if (resp.tokens.empty()) {
      throw Error(ErrorCode::kBackendLacksLogprobs, backend.id() + " returned no log-probabilities");
    }
    std::string joined;
    for (const auto& t : resp.tokens) joined += t.token;
    if (joined != *req.echo_continuation) {
      throw Error(ErrorCode::kMalformedResponse, "scored tokens do not reconstruct the continuation");
    }
  } else {
    resp.text = truncate_at_stop(resp.text, req.stop);
    if (req.want_logprobs && resp.tokens.empty() && !resp.text.empty()) {
      throw Error(ErrorCode::kBackendLacksLogprobs, backend.id() + " returned no log-probabilities");
    }
  }
  return resp;
}

// Mean per-token log-probability of `continuation` given `prompt`.
inline double average_logprob(CompletionBackend& backend, std::string_view prompt, std::string_view continuation) {
  if (continuation.empty()) throw Error(ErrorCode::kInvalidArgument, "continuation must be non-empty");
  CompletionRequest req;
  req.prompt = std::string(prompt);
  req.max_tokens = 1;
  req.want_logprobs = true;
  req.echo_continuation = std::string(continuation);
  const auto resp = complete(backend, req);
  double sum = 0;
  for (const auto& t : resp.tokens) sum += t.logprob;
  return sum / static_cast<double>(resp.tokens.size());
}

// Splits at spaces, each piece keeping its leading space; concatenation is
// the input.
inline std::vector<std::string> whitespace_pieces(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ' && !cur.empty() && cur.back() != ' ') {
      out.push_back(std::move(cur));
      cur.clear();
    }
    cur.push_back(c);
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::vector<TokenLogprob> uniform_tokens(std::string_view continuation, double logprob) {
  std::vector<TokenLogprob> out;
  for (auto& piece : whitespace_pieces(continuation)) out.push_back({std::move(piece), logprob});
  return out;
}

// ---------------------------------------------------------------------------
// Scripted mock: responses keyed by a hash of the exact prompt (and, for
// scoring requests, the continuation).

class ScriptedBackend : public CompletionBackend {
 public:
  ScriptedBackend() = default;

  ScriptedBackend& on_prompt(std::string_view prompt, std::string text) {
    texts_[key(prompt)] = std::move(text);
    return *this;
  }

  ScriptedBackend& on_score(std::string_view prompt, std::string_view continuation, std::vector<TokenLogprob> tokens) {
    scores_[key(prompt, continuation)] = std::move(tokens);
    return *this;
  }

  ScriptedBackend& on_score(std::string_view prompt, std::string_view continuation, double logprob) {
    return on_score(prompt, continuation, uniform_tokens(continuation, logprob));
  }

  ScriptedBackend& default_text(std::string text) {
    default_text_ = std::move(text);
    return *this;
  }

  ScriptedBackend& default_logprob(double lp) {
    default_logprob_ = lp;
    return *this;
  }

  // [{"prompt": ..., "text": ...}, {"prompt": ..., "continuation": ..., "logprob": -0.5},
  //  {"prompt": ..., "continuation": ..., "tokens": [[tok, lp], ...]}, {"default_text": ...},
  //  {"default_logprob": ...}]
  ScriptedBackend& load_json(const nlohmann::json& j) {
    auto& b = *this;
    try {
      for (const auto& e : j) {
        if (e.contains("default_text")) b.default_text(e.at("default_text").get<std::string>());
        if (e.contains("default_logprob")) b.default_logprob(e.at("default_logprob").get<double>());
        if (!e.contains("prompt")) continue;
        const auto prompt = e.at("prompt").get<std::string>();
        if (e.contains("continuation")) {
          const auto cont = e.at("continuation").get<std::string>();
          if (e.contains("tokens")) {
            std::vector<TokenLogprob> toks;
            for (const auto& t : e.at("tokens")) toks.push_back({t.at(0).get<std::string>(), t.at(1).get<double>()});
            b.on_score(prompt, cont, std::move(toks));
          } else {
            b.on_score(prompt, cont, e.at("logprob").get<double>());
          }
        } else {
          b.on_prompt(prompt, e.at("text").get<std::string>());
        }
      }
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::kConfigError, std::string("malformed script: ") + ex.what());
    }
    return *this;
  }

  std::string id() const override { return "script-mock"; }

 protected:
  CompletionResponse do_send(const CompletionRequest& req) override {
    CompletionResponse resp;
    resp.backend_id = id();
    if (req.echo_continuation) {
      if (auto it = scores_.find(key(req.prompt, *req.echo_continuation)); it != scores_.end()) {
        resp.tokens = it->second;
      } else if (default_logprob_) {
        resp.tokens = uniform_tokens(*req.echo_continuation, *default_logprob_);
      } else {
        throw Error(ErrorCode::kMalformedResponse, "no scripted score for continuation '" + *req.echo_continuation + "'");
      }
      resp.text = *req.echo_continuation;
      return resp;
    }
    if (auto it = texts_.find(key(req.prompt)); it != texts_.end()) {
      resp.text = it->second;
    } else if (default_text_) {
      resp.text = *default_text_;
    } else {
      throw Error(ErrorCode::kMalformedResponse, "no scripted response for prompt (hash " +
                                                     std::to_string(key(req.prompt)) + ")");
    }
    return resp;
  }

 private:
  static std::uint64_t key(std::string_view prompt, std::optional<std::string_view> continuation = std::nullopt) {
    auto h = fnv1a(prompt);
    if (continuation) h = fnv1a(*continuation, fnv1a("\x1f", h));
    return h;
  }

  std::unordered_map<std::uint64_t, std::string> texts_;
  std::unordered_map<std::uint64_t, std::vector<TokenLogprob>> scores_;
  std::optional<std::string> default_text_;
  std::optional<double> default_logprob_;
};

// Handler-driven mock for scenario tests; the handler must be a pure function
// of the request.
class FunctionBackend : public CompletionBackend {
 public:
  using Handler = std::function<CompletionResponse(const CompletionRequest&)>;

  explicit FunctionBackend(Handler handler, bool logprobs = true, std::string name = "function-mock")
      : handler_(std::move(handler)), logprobs_(logprobs), name_(std::move(name)) {}

  std::string id() const override { return name_; }
  bool supports_logprobs() const override { return logprobs_; }

 protected:
  CompletionResponse do_send(const CompletionRequest& req) override { return handler_(req); }

 private:
  Handler handler_;
  bool logprobs_;
  std::string name_;
};

// ---------------------------------------------------------------------------
// Oracle mock: knows every query's gold parent and answers the default prompt
// templates consistently with it.
//   filter    YES iff the batch holds the gold parent or one of its ancestors
//             within `filter_ancestor_distance` hops;
//   retriever the gold parent when listed, else NOT FOUND (or the first
//             listed candidate with retrieve_top_when_absent);
//   verifier  -0.1 per token on the gold parent's path, -2.0 elsewhere.

struct OracleOptions {
  bool retrieve_top_when_absent = false;
  int filter_ancestor_distance = 2;
  double gold_logprob = -0.1;
  double other_logprob = -2.0;
};

class OracleBackend : public CompletionBackend {
 public:
  using Options = OracleOptions;

  OracleBackend(const Taxonomy& taxonomy, const std::vector<Query>& queries, Options options = {})
      : taxonomy_(taxonomy), options_(options) {
    for (const auto& q : queries) {
      if (q.gold_parent) gold_[normalize_name(q.name)] = normalize_name(*q.gold_parent);
    }
  }

  std::string id() const override { return "oracle-mock"; }

 protected:
  CompletionResponse do_send(const CompletionRequest& req) override {
    CompletionResponse resp;
    resp.backend_id = id();
    if (req.echo_continuation) {
      resp.text = *req.echo_continuation;
      resp.tokens = uniform_tokens(*req.echo_continuation, score_path(*req.echo_continuation));
      return resp;
    }
    const auto candidates = listed_candidates(req.prompt);
    if (req.prompt.starts_with("You are a semantic relevance expert")) {
      resp.text = filter_answer(between(req.prompt, "query term '", "' and '"), candidates) ? "YES" : "NO";
    } else if (req.prompt.starts_with("You are an expert in hypernymy")) {
      resp.text = retrieve_answer(between(req.prompt, "query node '", "' within"), candidates);
    } else {
      throw Error(ErrorCode::kMalformedResponse, "oracle mock does not recognise the prompt");
    }
    return resp;
  }

 private:
  static std::string between(std::string_view s, std::string_view open, std::string_view close) {
    auto a = s.find(open);
    if (a == std::string_view::npos) return {};
    a += open.size();
    auto b = s.find(close, a);
    return std::string(s.substr(a, b == std::string_view::npos ? std::string_view::npos : b - a));
  }

  static std::vector<std::string> listed_candidates(std::string_view prompt) {
    std::vector<std::string> out;
    constexpr std::string_view kHeader = "List of Candidate terms:\n";
    auto pos = prompt.find(kHeader);
    if (pos == std::string_view::npos) return out;
    for (auto line : split(prompt.substr(pos + kHeader.size()), '\n')) {
      if (!line.starts_with("- ")) break;
      out.push_back(normalize_name(line.substr(2)));
    }
    return out;
  }

  std::optional<std::string> gold_for(std::string_view query) const {
    if (auto it = gold_.find(normalize_name(query)); it != gold_.end()) return it->second;
    return std::nullopt;
  }

  bool filter_answer(std::string_view query, const std::vector<std::string>& candidates) const {
    auto gold = gold_for(query);
    if (!gold) return false;
    std::vector<std::string> accepted{*gold};
    if (auto id = taxonomy_.find(*gold)) {
      auto p = taxonomy_.parent(*id);
      for (int hop = 0; p && hop < options_.filter_ancestor_distance; ++hop, p = taxonomy_.parent(*p))
        accepted.push_back(taxonomy_.name(*p));
    }
    for (const auto& c : candidates)
      if (std::find(accepted.begin(), accepted.end(), c) != accepted.end()) return true;
    return false;
  }

  std::string retrieve_answer(std::string_view query, const std::vector<std::string>& candidates) const {
    auto gold = gold_for(query);
    if (gold && std::find(candidates.begin(), candidates.end(), *gold) != candidates.end()) return *gold;
    if (options_.retrieve_top_when_absent && !candidates.empty()) return candidates.front();
    return "NOT FOUND";
  }

  // Continuation is " <query> -> <candidate> -> ... -> <root>".
  double score_path(std::string_view continuation) const {
    const auto parts = split(trim(continuation), '>');
    if (parts.size() < 2) return options_.other_logprob;
    auto query = trim(parts[0]);
    if (query.ends_with(" -")) query.remove_suffix(2);
    auto candidate = trim(parts[1]);
    if (candidate.ends_with(" -")) candidate.remove_suffix(2);
    auto gold = gold_for(query);
    return (gold && normalize_name(candidate) == *gold) ? options_.gold_logprob : options_.other_logprob;
  }

  const Taxonomy& taxonomy_;
  Options options_;
  std::unordered_map<std::string, std::string> gold_;
};

}  // namespace taxexp
