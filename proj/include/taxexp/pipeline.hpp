#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "taxexp/error.hpp"
#include "taxexp/llm.hpp"
#include "taxexp/prompts.hpp"
#include "taxexp/ranker.hpp"
#include "taxexp/taxonomy.hpp"

namespace taxexp {

inline constexpr std::string_view kNotFound = "NOT_FOUND";

enum class VerifierMode { kLogprob, kOff };

inline std::string_view to_string(VerifierMode m) { return m == VerifierMode::kLogprob ? "logprob" : "off"; }

inline VerifierMode parse_verifier_mode(std::string_view s) {
  if (s == "logprob") return VerifierMode::kLogprob;
  if (s == "off") return VerifierMode::kOff;
  throw Error(ErrorCode::kConfigError, "verifier mode must be 'logprob' or 'off', got '" + std::string(s) + "'");
}

struct PipelineConfig {
  std::size_t chunk_size = 5;
  // 1 feeds each chunk alone; 3 merges three consecutive chunks per batch.
  std::size_t chunks_per_round = 1;
  int max_parse_retries = 1;
  VerifierMode verifier_mode = VerifierMode::kLogprob;
  std::size_t parallelism = 1;
  int max_tokens = 32;

  void validate() const {
    if (chunk_size < 2) throw Error(ErrorCode::kInvalidChunkSize, "chunk size must be >= 2");
    if (chunks_per_round < 1) throw Error(ErrorCode::kConfigError, "chunks per round must be >= 1");
    if (max_parse_retries < 0) throw Error(ErrorCode::kConfigError, "max parse retries must be >= 0");
    if (parallelism < 1) throw Error(ErrorCode::kConfigError, "parallelism must be >= 1");
    if (max_tokens < 1) throw Error(ErrorCode::kConfigError, "max tokens must be >= 1");
  }
};

enum class Stage { kFilter, kRetrieve, kVerify, kRemove, kAccept, kDiscard };

inline std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::kFilter:
      return "filter";
    case Stage::kRetrieve:
      return "retrieve";
    case Stage::kVerify:
      return "verify";
    case Stage::kRemove:
      return "remove";
    case Stage::kAccept:
      return "accept";
    case Stage::kDiscard:
      return "discard";
  }
  return "unknown";
}

struct TraceEvent {
  std::string query;
  Stage stage;
  std::optional<std::size_t> batch_index;
  nlohmann::ordered_json payload;
  std::string timestamp;
  std::size_t llm_calls = 0;  // requests issued by this step
};

enum class PredictionStatus { kAccepted, kExhausted, kFailed };

inline std::string_view to_string(PredictionStatus s) {
  switch (s) {
    case PredictionStatus::kAccepted:
      return "accepted";
    case PredictionStatus::kExhausted:
      return "exhausted";
    case PredictionStatus::kFailed:
      return "failed";
  }
  return "unknown";
}

inline PredictionStatus parse_prediction_status(std::string_view s) {
  if (s == "accepted") return PredictionStatus::kAccepted;
  if (s == "exhausted") return PredictionStatus::kExhausted;
  if (s == "failed") return PredictionStatus::kFailed;
  throw Error(ErrorCode::kInvalidArgument, "unknown prediction status '" + std::string(s) + "'");
}

struct Prediction {
  std::string query;
  std::optional<std::string> predicted;  // nullopt is NOT_FOUND
  std::optional<std::string> gold;
  PredictionStatus status = PredictionStatus::kExhausted;
  std::optional<std::size_t> chunk_index;
  std::size_t llm_calls = 0;
  std::string error;
};

struct FilterOutcome {
  bool passed = false;
  std::vector<std::string> responses;
  bool parsed = true;
};

struct RetrieveOutcome {
  std::optional<NodeId> candidate;
  std::vector<std::string> responses;
  bool parsed = true;
};

struct VerifyOutcome {
  NodeId best{};
  bool passed = false;
  std::vector<std::pair<NodeId, double>> scores;  // batch order
};

inline std::string utc_timestamp() {
  using namespace std::chrono;
  const auto now = system_clock::now();
  const auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t tt = system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

// First alphabetic token of the reply decides; anything else is unparseable.
inline std::optional<bool> parse_yes_no(std::string_view reply) {
  std::string word;
  for (char c : reply) {
    const bool alpha = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
    if (alpha) {
      word.push_back(ascii_lower(c));
    } else if (!word.empty()) {
      break;
    }
  }
  if (word == "yes") return true;
  if (word == "no") return false;
  return std::nullopt;
}

enum class RetrieverReply { kCandidate, kNotFound, kUnmatched };

// Matches a retriever reply against the batch after stripping quotes, a
// trailing period and normalizing case/whitespace.
inline std::pair<RetrieverReply, std::optional<NodeId>> match_retriever_reply(std::string_view reply,
                                                                             std::span<const NodeId> batch,
                                                                             const Taxonomy& t) {
  auto s = trim(reply);
  auto strip = [&] {
    bool changed = true;
    while (changed && !s.empty()) {
      changed = false;
      if (s.front() == '\'' || s.front() == '"' || s.front() == '-') {
        s.remove_prefix(1);
        changed = true;
      }
      if (!s.empty() && (s.back() == '\'' || s.back() == '"' || s.back() == '.')) {
        s.remove_suffix(1);
        changed = true;
      }
      s = trim(s);
    }
  };
  strip();
  const auto norm = normalize_name(s);
  if (norm == "not found" || norm == "not_found") return {RetrieverReply::kNotFound, std::nullopt};
  for (auto n : batch) {
    if (t.name(n) == norm) return {RetrieverReply::kCandidate, n};
  }
  return {RetrieverReply::kUnmatched, std::nullopt};
}

// One query's pass through the filter / retrieve / verify loop.
class QueryExpansion {
 public:
  QueryExpansion(Query query, const Taxonomy& taxonomy, CompletionBackend& backend, const PipelineConfig& config,
                 const PromptTemplates& templates)
      : query_(std::move(query)), t_(taxonomy), backend_(backend), config_(config), templates_(templates) {}

  FilterOutcome semantic_filter(std::span<const NodeId> batch, std::size_t batch_index) {
    const auto prompt = render_filter_prompt(query_.name, batch, t_, templates_);
    FilterOutcome out;
    std::optional<bool> verdict;
    std::size_t calls = 0;
    for (int attempt = 0; attempt <= config_.max_parse_retries && !verdict; ++attempt) {
      out.responses.push_back(ask(prompt.text));
      ++calls;
      verdict = parse_yes_no(out.responses.back());
    }
    out.parsed = verdict.has_value();
    out.passed = verdict.value_or(false);
    nlohmann::ordered_json payload{{"candidates", prompt.candidate_order},
                                   {"responses", out.responses},
                                   {"passed", out.passed}};
    if (!out.parsed) payload["warning"] = "unparseable filter reply, treated as NO";
    emit(Stage::kFilter, batch_index, std::move(payload), calls);
    return out;
  }

  RetrieveOutcome retrieve_parent(std::span<const NodeId> batch, std::size_t batch_index) {
    const auto prompt = render_retriever_prompt(query_.name, query_.definition, batch, t_, templates_);
    RetrieveOutcome out;
    std::size_t calls = 0;
    RetrieverReply kind = RetrieverReply::kUnmatched;
    for (int attempt = 0; attempt <= config_.max_parse_retries && kind == RetrieverReply::kUnmatched; ++attempt) {
      out.responses.push_back(ask(prompt.text));
      ++calls;
      auto [k, node] = match_retriever_reply(out.responses.back(), batch, t_);
      kind = k;
      out.candidate = node;
    }
    out.parsed = kind != RetrieverReply::kUnmatched;
    nlohmann::ordered_json payload{{"candidates", prompt.candidate_order},
                                   {"responses", out.responses},
                                   {"retrieved", out.candidate ? nlohmann::ordered_json(t_.name(*out.candidate))
                                                               : nlohmann::ordered_json(kNotFound)}};
    if (!out.parsed) payload["warning"] = "reply matched no candidate, treated as NOT FOUND";
    emit(Stage::kRetrieve, batch_index, std::move(payload), calls);
    return out;
  }

  VerifyOutcome verify_parent(NodeId retrieved, std::span<const NodeId> batch, std::size_t batch_index) {
    VerifyOutcome out;
    if (config_.verifier_mode == VerifierMode::kOff) {
      out.best = retrieved;
      out.passed = true;
      emit(Stage::kVerify, batch_index, {{"mode", "off"}, {"retrieved", t_.name(retrieved)}, {"passed", true}}, 0);
      return out;
    }
    const auto prompt = render_verifier_prompt(query_.name, query_.definition, retrieved, batch, t_, templates_);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      ++calls_;
      out.scores.emplace_back(batch[i], average_logprob(backend_, prompt.text, " " + prompt.path_strings[i]));
    }
    // Highest mean log-probability; ties go to the shorter path, then the name.
    auto better = [&](const std::pair<NodeId, double>& a, const std::pair<NodeId, double>& b) {
      if (a.second != b.second) return a.second > b.second;
      if (t_.depth(a.first) != t_.depth(b.first)) return t_.depth(a.first) < t_.depth(b.first);
      return t_.name(a.first) < t_.name(b.first);
    };
    out.best = std::min_element(out.scores.begin(), out.scores.end(), better)->first;
    out.passed = out.best == retrieved;
    nlohmann::ordered_json scores = nlohmann::ordered_json::array();
    for (const auto& [n, s] : out.scores) scores.push_back({{"candidate", t_.name(n)}, {"mean_logprob", s}});
    emit(Stage::kVerify, batch_index,
         {{"mode", "logprob"},
          {"retrieved", t_.name(retrieved)},
          {"best", t_.name(out.best)},
          {"scores", std::move(scores)},
          {"passed", out.passed}},
         batch.size());
    return out;
  }

  Prediction run(std::span<const RankedCandidate> ranked) {
    config_.validate();
    Prediction pred;
    pred.query = query_.name;
    pred.gold = query_.gold_parent;
    const auto chunks = chunk(ranked, config_.chunk_size, query_.name);
    const auto step = config_.chunks_per_round;
    for (std::size_t first = 0, window = 0; first < chunks.size(); first += step, ++window) {
      std::vector<NodeId> batch;
      for (std::size_t c = first; c < std::min(chunks.size(), first + step); ++c)
        batch.insert(batch.end(), chunks[c].members.begin(), chunks[c].members.end());
      if (batch.size() <= 1) {
        emit(Stage::kDiscard, window, {{"reason", "singleton batch"}, {"size", batch.size()}}, 0);
        continue;
      }
      if (!semantic_filter(batch, window).passed) {
        emit(Stage::kDiscard, window, {{"reason", "filter rejected"}}, 0);
        continue;
      }
      while (batch.size() > 1) {
        const auto r = retrieve_parent(batch, window);
        if (!r.candidate) {
          emit(Stage::kDiscard, window, {{"reason", "not found"}}, 0);
          break;
        }
        const auto v = verify_parent(*r.candidate, batch, window);
        if (v.passed) {
          pred.predicted = t_.name(*r.candidate);
          pred.status = PredictionStatus::kAccepted;
          pred.chunk_index = window;
          emit(Stage::kAccept, window, {{"parent", *pred.predicted}}, 0);
          pred.llm_calls = calls_;
          return pred;
        }
        batch.erase(std::find(batch.begin(), batch.end(), *r.candidate));
        emit(Stage::kRemove, window, {{"removed", t_.name(*r.candidate)}, {"remaining", batch.size()}}, 0);
      }
      if (batch.size() <= 1) emit(Stage::kDiscard, window, {{"reason", "batch exhausted"}}, 0);
    }
    pred.status = PredictionStatus::kExhausted;
    pred.llm_calls = calls_;
    emit(Stage::kDiscard, std::nullopt, {{"reason", "all batches exhausted"}, {"chunks", chunks.size()}}, 0);
    return pred;
  }

  const std::vector<TraceEvent>& trace() const { return trace_; }
  std::vector<TraceEvent> take_trace() { return std::move(trace_); }
  std::size_t llm_calls() const { return calls_; }

 private:
  std::string ask(const std::string& prompt) {
    CompletionRequest req;
    req.prompt = prompt;
    req.max_tokens = config_.max_tokens;
    ++calls_;
    return complete(backend_, req).text;
  }

  void emit(Stage stage, std::optional<std::size_t> batch_index, nlohmann::ordered_json payload, std::size_t calls) {
    trace_.push_back({query_.name, stage, batch_index, std::move(payload), utc_timestamp(), calls});
  }

  Query query_;
  const Taxonomy& t_;
  CompletionBackend& backend_;
  PipelineConfig config_;
  const PromptTemplates& templates_;
  std::vector<TraceEvent> trace_;
  std::size_t calls_ = 0;
};

struct ExpansionResult {
  std::vector<Prediction> predictions;  // input order
  std::vector<TraceEvent> trace;        // grouped by query, input order
  std::size_t failures = 0;
};

inline Prediction failed_prediction(const Query& q, std::string message, std::size_t calls) {
  Prediction p;
  p.query = q.name;
  p.gold = q.gold_parent;
  p.status = PredictionStatus::kFailed;
  p.llm_calls = calls;
  p.error = std::move(message);
  return p;
}

template <PathScorer Scorer>
Prediction expand_query(const Query& q, const Taxonomy& t, const Scorer& scorer, CompletionBackend& backend,
                        const PipelineConfig& config, const PromptTemplates& templates = {},
                        std::vector<TraceEvent>* trace = nullptr) {
  const auto ranked = rank_candidates(scorer, t, q);
  QueryExpansion run(q, t, backend, config, templates);
  auto pred = run.run(ranked);
  if (trace) {
    auto events = run.take_trace();
    trace->insert(trace->end(), std::make_move_iterator(events.begin()), std::make_move_iterator(events.end()));
  }
  return pred;
}

// Expands every query with up to config.parallelism workers. A backend or
// per-query error marks that query failed and leaves the rest untouched.
template <PathScorer Scorer>
ExpansionResult expand_all(const std::vector<Query>& queries, const Taxonomy& t, const Scorer& scorer,
                           CompletionBackend& backend, const PipelineConfig& config,
                           const PromptTemplates& templates = {}) {
  config.validate();
  const auto paths = candidate_paths(t);
  std::vector<Prediction> preds(queries.size());
  std::vector<std::vector<TraceEvent>> traces(queries.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < queries.size(); i = next.fetch_add(1)) {
      const auto& q = queries[i];
      QueryExpansion run(q, t, backend, config, templates);
      try {
        preds[i] = run.run(rank_candidates(scorer, t, paths, q));
        traces[i] = run.take_trace();
      } catch (const std::exception& ex) {
        preds[i] = failed_prediction(q, ex.what(), run.llm_calls());
        traces[i] = run.take_trace();
        traces[i].push_back(
            {q.name, Stage::kDiscard, std::nullopt, {{"reason", "query failed"}, {"error", ex.what()}}, utc_timestamp(), 0});
      }
    }
  };

  const auto workers = std::min(config.parallelism, std::max<std::size_t>(queries.size(), 1));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }

  ExpansionResult out;
  out.predictions = std::move(preds);
  for (auto& tr : traces) {
    out.trace.insert(out.trace.end(), std::make_move_iterator(tr.begin()), std::make_move_iterator(tr.end()));
  }
  out.failures = static_cast<std::size_t>(std::count_if(out.predictions.begin(), out.predictions.end(), [](const auto& p) {
    return p.status == PredictionStatus::kFailed;
  }));
  return out;
}

// ---------------------------------------------------------------------------
// JSONL serialization.

inline nlohmann::ordered_json to_json(const Prediction& p) {
  nlohmann::ordered_json j{{"query", p.query},
                           {"predicted", p.predicted ? *p.predicted : std::string(kNotFound)},
                           {"gold", p.gold ? nlohmann::ordered_json(*p.gold) : nlohmann::ordered_json(nullptr)},
                           {"status", to_string(p.status)},
                           {"chunk_index", p.chunk_index ? nlohmann::ordered_json(*p.chunk_index) : nullptr},
                           {"llm_calls", p.llm_calls}};
  if (!p.error.empty()) j["error"] = p.error;
  return j;
}

inline nlohmann::ordered_json to_json(const TraceEvent& e) {
  return {{"query", e.query},
          {"stage", to_string(e.stage)},
          {"batch_index", e.batch_index ? nlohmann::ordered_json(*e.batch_index) : nullptr},
          {"payload", e.payload},
          {"timestamp", e.timestamp},
          {"llm_calls", e.llm_calls}};
}

template <typename T>
std::string to_jsonl(std::span<const T> items) {
  std::string out;
  for (const auto& it : items) {
    out += to_json(it).dump();
    out.push_back('\n');
  }
  return out;
}

inline std::vector<Prediction> parse_predictions(std::string_view content, std::string_view source = "<predictions>") {
  std::vector<Prediction> out;
  std::size_t line_no = 0;
  for (auto line : split(content, '\n')) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Prediction p;
      p.query = j.at("query").get<std::string>();
      const auto predicted = j.at("predicted").is_null() ? std::string(kNotFound) : j.at("predicted").get<std::string>();
      if (predicted != kNotFound) p.predicted = predicted;
      if (j.contains("gold") && !j.at("gold").is_null()) p.gold = j.at("gold").get<std::string>();
      p.status = parse_prediction_status(j.value("status", std::string(p.predicted ? "accepted" : "exhausted")));
      if (j.contains("chunk_index") && !j.at("chunk_index").is_null()) p.chunk_index = j.at("chunk_index").get<std::size_t>();
      p.llm_calls = j.value("llm_calls", std::size_t{0});
      p.error = j.value("error", std::string{});
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::kIoError, std::string(source) + ":" + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return out;
}

}  // namespace taxexp
