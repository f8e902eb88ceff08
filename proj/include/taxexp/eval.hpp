#pragma once

#include <algorithm>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "taxexp/error.hpp"
#include "taxexp/taxonomy.hpp"
#include "taxexp/text.hpp"

namespace taxexp {

using MaybeName = std::optional<std::string>;  // nullopt is NOT_FOUND / no gold

namespace detail {

inline void require_aligned(std::size_t a, std::size_t b, std::string_view what) {
  if (a != b) {
    throw Error(ErrorCode::kMisalignedInputs,
                std::string(what) + ": " + std::to_string(a) + " vs " + std::to_string(b) + " entries");
  }
}

inline std::optional<std::string> normalized(const MaybeName& n) {
  if (!n) return std::nullopt;
  return normalize_name(*n);
}

}  // namespace detail

inline double hit_at_k(std::span<const std::vector<std::string>> rankings, std::span<const MaybeName> gold,
                       std::size_t k) {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  detail::require_aligned(rankings.size(), gold.size(), "rankings and gold");
  if (rankings.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    const auto g = detail::normalized(gold[i]);
    if (!g) continue;
    const auto end = rankings[i].begin() + static_cast<std::ptrdiff_t>(std::min(k, rankings[i].size()));
    if (std::any_of(rankings[i].begin(), end, [&](const std::string& c) { return normalize_name(c) == *g; })) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

// A query is correct when the prediction equals the gold parent, or when both
// are absent.
inline bool prediction_correct(const MaybeName& predicted, const MaybeName& gold) {
  return detail::normalized(predicted) == detail::normalized(gold);
}

inline double accuracy(std::span<const MaybeName> predicted, std::span<const MaybeName> gold) {
  detail::require_aligned(predicted.size(), gold.size(), "predictions and gold");
  if (predicted.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += prediction_correct(predicted[i], gold[i]);
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

inline double wu_palmer(const Taxonomy& t, NodeId predicted, NodeId gold) {
  const auto l = lca(t, predicted, gold);
  return 2.0 * t.depth(l) / static_cast<double>(t.depth(predicted) + t.depth(gold));
}

inline double wu_palmer_score(const MaybeName& predicted, const MaybeName& gold, const Taxonomy& t) {
  if (!predicted || !gold) return (!predicted && !gold) ? 1.0 : 0.0;
  return wu_palmer(t, t.at(*predicted), t.at(*gold));
}

inline double wu_palmer(std::span<const MaybeName> predicted, std::span<const MaybeName> gold, const Taxonomy& t) {
  detail::require_aligned(predicted.size(), gold.size(), "predictions and gold");
  if (predicted.empty()) return 0.0;
  double sum = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) sum += wu_palmer_score(predicted[i], gold[i], t);
  return sum / static_cast<double>(predicted.size());
}

struct MetricValue {
  double value = 0.0;
  std::size_t count = 0;
};

struct EvalReport {
  std::string name;
  std::size_t queries = 0;
  std::optional<MetricValue> accuracy;
  std::optional<MetricValue> wu_palmer;
  std::vector<std::pair<std::size_t, MetricValue>> hit_at_k;  // ascending k
  std::vector<std::size_t> k_list;
  std::uint64_t seed = 0;
  std::vector<EvalReport> breakdown;
};

struct EvalInputs {
  std::string name;
  std::optional<std::vector<MaybeName>> predicted;
  std::optional<std::vector<std::vector<std::string>>> rankings;
  std::vector<MaybeName> gold;
};

inline EvalReport evaluate(const EvalInputs& in, const Taxonomy& t, std::vector<std::size_t> k_list,
                           std::uint64_t seed = 0) {
  std::sort(k_list.begin(), k_list.end());
  k_list.erase(std::unique(k_list.begin(), k_list.end()), k_list.end());
  EvalReport r;
  r.name = in.name;
  r.queries = in.gold.size();
  r.k_list = k_list;
  r.seed = seed;
  if (in.predicted) {
    r.accuracy = MetricValue{accuracy(*in.predicted, in.gold), in.gold.size()};
    r.wu_palmer = MetricValue{wu_palmer(*in.predicted, in.gold, t), in.gold.size()};
  }
  if (in.rankings) {
    for (auto k : k_list) r.hit_at_k.push_back({k, MetricValue{hit_at_k(*in.rankings, in.gold, k), in.gold.size()}});
  }
  return r;
}

// Query-weighted mean over sub-taxonomy reports; the inputs are kept as the
// breakdown.
inline EvalReport aggregate_multi(std::span<const EvalReport> reports, std::string name = "aggregate") {
  EvalReport out;
  out.name = std::move(name);
  if (reports.empty()) return out;
  out.k_list = reports.front().k_list;
  out.seed = reports.front().seed;
  auto combine = [](std::optional<MetricValue>& acc, const std::optional<MetricValue>& v) {
    if (!v) return;
    if (!acc) acc = MetricValue{};
    const auto total = acc->count + v->count;
    if (total > 0) {
      acc->value = (acc->value * static_cast<double>(acc->count) + v->value * static_cast<double>(v->count)) /
                   static_cast<double>(total);
    }
    acc->count = total;
  };
  std::vector<std::pair<std::size_t, std::optional<MetricValue>>> hits;
  for (const auto& r : reports) {
    out.queries += r.queries;
    combine(out.accuracy, r.accuracy);
    combine(out.wu_palmer, r.wu_palmer);
    for (const auto& [k, v] : r.hit_at_k) {
      auto it = std::find_if(hits.begin(), hits.end(), [k = k](const auto& h) { return h.first == k; });
      if (it == hits.end()) {
        hits.push_back({k, std::nullopt});
        it = std::prev(hits.end());
      }
      combine(it->second, v);
    }
    out.breakdown.push_back(r);
  }
  std::sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [k, v] : hits) out.hit_at_k.push_back({k, *v});
  return out;
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j{{"name", r.name}, {"queries", r.queries}};
  auto metric = [](const MetricValue& v) { return nlohmann::ordered_json{{"value", v.value}, {"count", v.count}}; };
  nlohmann::ordered_json metrics = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.hit_at_k) metrics["hit@" + std::to_string(k)] = metric(v);
  if (r.accuracy) metrics["accuracy"] = metric(*r.accuracy);
  if (r.wu_palmer) metrics["wu_palmer"] = metric(*r.wu_palmer);
  j["metrics"] = std::move(metrics);
  j["config"] = {{"k", r.k_list}, {"seed", r.seed}};
  if (!r.breakdown.empty()) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& b : r.breakdown) arr.push_back(to_json(b));
    j["breakdown"] = std::move(arr);
  }
  return j;
}

// Fixed-width table: one row per sub-taxonomy then the aggregate row.
inline std::string render_table(const EvalReport& r) {
  std::vector<std::string> header{"taxonomy", "queries"};
  for (const auto& [k, v] : r.hit_at_k) header.push_back("Hit@" + std::to_string(k));
  if (r.accuracy) header.push_back("Acc");
  if (r.wu_palmer) header.push_back("Wu&P");

  auto row_of = [&](const EvalReport& e) {
    std::vector<std::string> row{e.name, std::to_string(e.queries)};
    char buf[32];
    for (const auto& [k, agg] : r.hit_at_k) {
      auto it = std::find_if(e.hit_at_k.begin(), e.hit_at_k.end(), [k = k](const auto& h) { return h.first == k; });
      if (it == e.hit_at_k.end()) {
        row.push_back("-");
      } else {
        std::snprintf(buf, sizeof buf, "%.3f", it->second.value);
        row.push_back(buf);
      }
    }
    for (const auto* m : {&e.accuracy, &e.wu_palmer}) {
      const bool shown = (m == &e.accuracy) ? r.accuracy.has_value() : r.wu_palmer.has_value();
      if (!shown) continue;
      if (*m) {
        std::snprintf(buf, sizeof buf, "%.3f", (*m)->value);
        row.push_back(buf);
      } else {
        row.push_back("-");
      }
    }
    return row;
  };

  std::vector<std::vector<std::string>> rows{header};
  for (const auto& b : r.breakdown) rows.push_back(row_of(b));
  rows.push_back(row_of(r));

  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());

  std::string out;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out.append("  ");
      const auto pad = width[c] - row[c].size();
      if (c == 0) {
        out.append(row[c]).append(pad, ' ');
      } else {
        out.append(pad, ' ').append(row[c]);
      }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out.push_back('\n');
  }
  return out;
}

}  // namespace taxexp
