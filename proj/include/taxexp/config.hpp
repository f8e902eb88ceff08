#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "taxexp/error.hpp"
#include "taxexp/http_backend.hpp"
#include "taxexp/pipeline.hpp"
#include "taxexp/ranker.hpp"
#include "taxexp/taxonomy.hpp"
#include "taxexp/text.hpp"

namespace taxexp {

struct ConfigKey {
  std::string_view name;
  std::string_view default_value;  // empty means unset
  std::string_view help;
};

// Every key a run config may set. Unknown keys are rejected.
inline constexpr ConfigKey kConfigKeys[] = {
    {"edges", "", "taxonomy edges TSV (child<TAB>parent)"},
    {"definitions", "", "definitions TSV (name<TAB>definition)"},
    {"queries", "", "queries TSV (name<TAB>gold parent<TAB>definition)"},
    {"model", "", "scorer model JSON"},
    {"rankings", "", "ranking TSV (query<TAB>rank<TAB>candidate<TAB>score)"},
    {"predictions", "", "predictions JSONL"},
    {"templates", "", "directory with filter.txt, retriever.txt, verifier.txt"},
    {"seed", "", "random seed; required by synth, split, train and expand"},
    {"split_fraction", "0.2", "fraction of leaves held out as queries"},
    {"synth_nodes", "50", "nodes in a generated taxonomy"},
    {"synth_depth", "5", "depth of a generated taxonomy"},
    {"dimension", "32768", "hashed feature dimension"},
    {"margin_d", "0.2", "dynamic margin scale d"},
    {"lambda1", "0.5", "weight of the positive consistency loss"},
    {"lambda2", "0.5", "weight of the negative consistency loss"},
    {"learning_rate", "0.001", "SGD step size"},
    {"epochs", "20", "training epochs"},
    {"negatives", "15", "negative paths per positive"},
    {"chunk_size", "5", "candidates per chunk (k)"},
    {"chunks_per_round", "1", "chunks merged into one batch (1 or 3)"},
    {"max_parse_retries", "1", "extra retriever asks after an unparseable reply"},
    {"verifier_mode", "logprob", "logprob | off"},
    {"parallelism", "1", "queries expanded concurrently"},
    {"max_tokens", "32", "generation budget per filter/retriever call"},
    {"backend", "oracle-mock", "oracle-mock | script-mock | http"},
    {"script", "", "JSON script for the script-mock backend"},
    {"base_url", "http://127.0.0.1:8000/v1", "OpenAI-compatible endpoint prefix"},
    {"model_name", "", "model name sent to the endpoint"},
    {"api_key_env", "OPENAI_API_KEY", "environment variable holding the API key"},
    {"timeout_ms", "60000", "per-request timeout"},
    {"retries", "3", "retries on timeouts, 429 and 5xx"},
    {"endpoint_parallelism", "4", "concurrent requests to the endpoint"},
    {"audit_log", "", "JSONL transcript of endpoint requests"},
    {"k_list", "1,5,10", "comma-separated k values for Hit@k"},
};

class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : kConfigKeys)
      if (!k.default_value.empty()) values_[std::string(k.name)] = std::string(k.default_value);
  }

  static bool known(std::string_view key) {
    return std::any_of(std::begin(kConfigKeys), std::end(kConfigKeys), [&](const auto& k) { return k.name == key; });
  }

  // key = value lines; '#' starts a comment line.
  static RunConfig parse(std::string_view text, std::string_view source = "<config>") {
    RunConfig c;
    c.merge(text, source);
    return c;
  }

  static RunConfig load(const std::filesystem::path& path) {
    return parse(detail::read_file(path), path.string());
  }

  void merge(std::string_view text, std::string_view source = "<config>") {
    detail::for_each_data_line(text, [&](std::size_t line_no, std::string_view line) {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw Error(ErrorCode::kConfigError,
                    std::string(source) + ":" + std::to_string(line_no) + ": expected key = value");
      }
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    });
  }

  // Parses "key=value" as given to --set.
  void set_assignment(std::string_view kv) {
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos) throw Error(ErrorCode::kConfigError, "expected key=value, got '" + std::string(kv) + "'");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  RunConfig& set(std::string_view key, std::string_view value) {
    if (!known(key)) throw Error(ErrorCode::kConfigError, "unknown config key '" + std::string(key) + "'");
    values_[std::string(key)] = std::string(value);
    return *this;
  }

  bool has(std::string_view key) const {
    auto it = values_.find(key);
    return it != values_.end() && !it->second.empty();
  }

  const std::string& str(std::string_view key) const {
    static const std::string empty;
    auto it = values_.find(key);
    return it == values_.end() ? empty : it->second;
  }

  const std::string& require(std::string_view key, std::string_view why) const {
    if (!has(key)) throw Error(ErrorCode::kConfigError, std::string(key) + " is required " + std::string(why));
    return str(key);
  }

  std::filesystem::path existing_path(std::string_view key, std::string_view why) const {
    std::filesystem::path p = require(key, why);
    if (!std::filesystem::exists(p)) {
      throw Error(ErrorCode::kIoError, std::string(key) + " = " + p.string() + " does not exist");
    }
    return p;
  }

  std::int64_t integer(std::string_view key) const {
    const auto& s = str(key);
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
      throw Error(ErrorCode::kConfigError, std::string(key) + " must be an integer, got '" + s + "'");
    }
    return v;
  }

  std::size_t count(std::string_view key) const {
    const auto v = integer(key);
    if (v < 0) throw Error(ErrorCode::kConfigError, std::string(key) + " must be >= 0");
    return static_cast<std::size_t>(v);
  }

  double real(std::string_view key) const {
    const auto& s = str(key);
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
      throw Error(ErrorCode::kConfigError, std::string(key) + " must be a number, got '" + s + "'");
    }
    return v;
  }

  std::uint64_t seed() const {
    require("seed", "for this command");
    const auto v = integer("seed");
    if (v < 0) throw Error(ErrorCode::kConfigError, "seed must be >= 0");
    return static_cast<std::uint64_t>(v);
  }

  std::vector<std::size_t> k_list() const {
    std::vector<std::size_t> out;
    std::string_view rest = str("k_list");
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const auto item = trim(rest.substr(0, comma));
      std::size_t v = 0;
      auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
      if (ec != std::errc{} || ptr != item.data() + item.size() || v == 0) {
        throw Error(ErrorCode::kConfigError, "k_list entries must be positive integers, got '" + std::string(item) + "'");
      }
      out.push_back(v);
      rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    }
    if (out.empty()) throw Error(ErrorCode::kConfigError, "k_list is empty");
    return out;
  }

  // Every set key in key order; feeding it back through parse() reproduces
  // this config.
  std::string snapshot() const {
    std::string out;
    for (const auto& [k, v] : values_)
      if (!v.empty()) out += k + " = " + v + "\n";
    return out;
  }

  const std::map<std::string, std::string, std::less<>>& values() const { return values_; }

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

inline ScorerModel scorer_settings(const RunConfig& c) {
  const auto dim = c.integer("dimension");
  if (dim < 1 || dim > (std::int64_t{1} << 26)) throw Error(ErrorCode::kConfigError, "dimension out of range");
  auto m = ScorerModel::with_dimension(static_cast<std::uint32_t>(dim));
  m.margin_d = c.real("margin_d");
  m.lambda_positive = c.real("lambda1");
  m.lambda_negative = c.real("lambda2");
  m.learning_rate = c.real("learning_rate");
  m.epochs = static_cast<int>(c.integer("epochs"));
  try {
    m.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfigError, e.message());
  }
  return m;
}

inline PipelineConfig pipeline_settings(const RunConfig& c) {
  PipelineConfig p;
  p.chunk_size = c.count("chunk_size");
  p.chunks_per_round = c.count("chunks_per_round");
  p.max_parse_retries = static_cast<int>(c.integer("max_parse_retries"));
  p.verifier_mode = parse_verifier_mode(c.str("verifier_mode"));
  p.parallelism = c.count("parallelism");
  p.max_tokens = static_cast<int>(c.integer("max_tokens"));
  try {
    p.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfigError, e.message());
  }
  return p;
}

inline EndpointConfig endpoint_settings(const RunConfig& c) {
  EndpointConfig e;
  e.base_url = c.str("base_url");
  e.model = c.str("model_name");
  e.api_key_env = c.str("api_key_env");
  e.timeout = std::chrono::milliseconds(c.integer("timeout_ms"));
  e.retries = static_cast<int>(c.integer("retries"));
  e.parallelism = c.count("endpoint_parallelism");
  if (c.has("audit_log")) e.audit_log = c.str("audit_log");
  e.validate();
  return e;
}

}  // namespace taxexp
