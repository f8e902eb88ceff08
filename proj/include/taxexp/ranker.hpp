#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "taxexp/features.hpp"
#include "taxexp/taxonomy.hpp"
#include "taxexp/verbalizer.hpp"

namespace taxexp {

// Anything that maps a verbalized (definition-prefixed) path to a fitting
// score. The native model is linear over hashed features; an external neural
// encoder only needs to satisfy this.
template <typename S>
concept PathScorer = requires(const S& s, std::string_view text) {
  { s.score(text) } -> std::convertible_to<double>;
};

struct ScorerModel {
  std::uint32_t dimension = kDefaultDimension;
  std::vector<double> weights = std::vector<double>(kDefaultDimension, 0.0);
  double bias = 0.0;
  double margin_d = 0.2;         // d
  double lambda_positive = 0.5;  // weight of the positive consistency loss
  double lambda_negative = 0.5;  // weight of the negative consistency loss
  double learning_rate = 1e-3;
  int epochs = 20;
  std::uint64_t seed = 0;

  static ScorerModel with_dimension(std::uint32_t dim) {
    ScorerModel m;
    m.dimension = dim;
    m.weights.assign(dim, 0.0);
    return m;
  }

  double score(const FeatureVector& fv) const {
    if (fv.dimension != dimension) {
      throw Error(ErrorCode::kDimensionMismatch, "model dimension " + std::to_string(dimension) +
                                                     " vs features " + std::to_string(fv.dimension));
    }
    return fv.dot(weights) + bias;
  }

  double score(std::string_view text) const { return score(featurize(text, dimension)); }

  void validate() const {
    if (weights.size() != dimension) {
      throw Error(ErrorCode::kDimensionMismatch, "weight vector length differs from model dimension");
    }
    if (!std::all_of(weights.begin(), weights.end(), [](double w) { return std::isfinite(w); }) ||
        !std::isfinite(bias)) {
      throw Error(ErrorCode::kInvalidArgument, "model weights must be finite");
    }
    if (!(margin_d > 0)) throw Error(ErrorCode::kInvalidArgument, "margin parameter d must be > 0");
    if (lambda_positive < 0 || lambda_negative < 0) throw Error(ErrorCode::kInvalidArgument, "loss weights must be >= 0");
    if (learning_rate < 0) throw Error(ErrorCode::kInvalidArgument, "learning rate must be >= 0");
    if (epochs < 0) throw Error(ErrorCode::kInvalidArgument, "epochs must be >= 0");
  }
};

static_assert(PathScorer<ScorerModel>);

// gamma = (|P u P'| / |P n P'| - 1) * d over distinct node sets.
inline double dynamic_margin(const EulerPath& p, const EulerPath& q, double d) {
  std::vector<NodeId> uni, inter;
  std::set_union(p.node_set.begin(), p.node_set.end(), q.node_set.begin(), q.node_set.end(), std::back_inserter(uni));
  std::set_intersection(p.node_set.begin(), p.node_set.end(), q.node_set.begin(), q.node_set.end(),
                        std::back_inserter(inter));
  if (inter.empty()) throw Error(ErrorCode::kDisjointPaths, "paths share no node");
  return (static_cast<double>(uni.size()) / static_cast<double>(inter.size()) - 1.0) * d;
}

struct TrainingPath {
  std::string with_definition;     // "<query definition> [SEP] <path>"
  std::string without_definition;  // "<path>"
  EulerPath path;
};

struct TrainingSample {
  std::string query;
  TrainingPath positive;
  std::vector<TrainingPath> negatives;
};

struct LossBreakdown {
  double margin = 0;    // hinge over (positive, negative) pairs
  double positive = 0;  // squared gap between f(P) and f(P_r) on positives
  double negative = 0;  // hinge of f(P') over f(P'_r) on negatives
  double total = 0;
};

inline double margin_loss(double positive_score, std::span<const double> negative_scores,
                          std::span<const double> margins) {
  if (negative_scores.size() != margins.size()) throw Error(ErrorCode::kMisalignedInputs, "one margin per negative");
  double sum = 0;
  for (std::size_t i = 0; i < negative_scores.size(); ++i)
    sum += std::max(0.0, -positive_score + negative_scores[i] + margins[i]);
  return sum;
}

// Pairs of (f(P), f(P_r)).
inline double positive_consistency_loss(std::span<const std::pair<double, double>> pairs) {
  double sum = 0;
  for (const auto& [with_def, without_def] : pairs) sum += (with_def - without_def) * (with_def - without_def);
  return sum;
}

// Pairs of (f(P'), f(P'_r)).
inline double negative_consistency_loss(std::span<const std::pair<double, double>> pairs) {
  double sum = 0;
  for (const auto& [with_def, without_def] : pairs) sum += std::max(0.0, with_def - without_def);
  return sum;
}

namespace detail {

struct PreparedPath {
  FeatureVector with_definition;
  FeatureVector without_definition;
};

struct PreparedSample {
  PreparedPath positive;
  std::vector<PreparedPath> negatives;
  std::vector<double> margins;
};

inline PreparedSample prepare(const TrainingSample& s, const ScorerModel& m) {
  auto prep = [&](const TrainingPath& p) {
    return PreparedPath{featurize(p.with_definition, m.dimension), featurize(p.without_definition, m.dimension)};
  };
  PreparedSample out;
  out.positive = prep(s.positive);
  for (const auto& n : s.negatives) {
    out.negatives.push_back(prep(n));
    out.margins.push_back(dynamic_margin(s.positive.path, n.path, m.margin_d));
  }
  return out;
}

inline LossBreakdown loss(const ScorerModel& m, const PreparedSample& s) {
  LossBreakdown out;
  const double fp = m.score(s.positive.with_definition);
  const double fpr = m.score(s.positive.without_definition);
  out.positive = (fp - fpr) * (fp - fpr);
  for (std::size_t j = 0; j < s.negatives.size(); ++j) {
    const double fn = m.score(s.negatives[j].with_definition);
    const double fnr = m.score(s.negatives[j].without_definition);
    out.margin += std::max(0.0, -fp + fn + s.margins[j]);
    out.negative += std::max(0.0, fn - fnr);
  }
  out.total = out.margin + m.lambda_positive * out.positive + m.lambda_negative * out.negative;
  return out;
}

// dL/dw = sum_i coef_i * x_i. Returned terms point into `s`. The bias
// gradient is identically zero: every loss term is a difference of scores.
inline std::vector<std::pair<const FeatureVector*, double>> gradient_terms(const ScorerModel& m,
                                                                           const PreparedSample& s) {
  std::vector<std::pair<const FeatureVector*, double>> terms;
  const double fp = m.score(s.positive.with_definition);
  const double fpr = m.score(s.positive.without_definition);
  double coef_p = 0;
  const double gap = fp - fpr;
  coef_p += m.lambda_positive * 2.0 * gap;
  terms.emplace_back(&s.positive.without_definition, -m.lambda_positive * 2.0 * gap);
  for (std::size_t j = 0; j < s.negatives.size(); ++j) {
    const double fn = m.score(s.negatives[j].with_definition);
    const double fnr = m.score(s.negatives[j].without_definition);
    double coef_n = 0;
    if (-fp + fn + s.margins[j] > 0) {
      coef_p -= 1.0;
      coef_n += 1.0;
    }
    if (fn - fnr > 0) {
      coef_n += m.lambda_negative;
      terms.emplace_back(&s.negatives[j].without_definition, -m.lambda_negative);
    }
    if (coef_n != 0) terms.emplace_back(&s.negatives[j].with_definition, coef_n);
  }
  terms.emplace_back(&s.positive.with_definition, coef_p);
  return terms;
}

}  // namespace detail

inline LossBreakdown joint_loss(const ScorerModel& m, const TrainingSample& s) {
  return detail::loss(m, detail::prepare(s, m));
}

inline double margin_loss(const ScorerModel& m, const TrainingSample& s) { return joint_loss(m, s).margin; }
inline double positive_consistency_loss(const ScorerModel& m, const TrainingSample& s) {
  return joint_loss(m, s).positive;
}
inline double negative_consistency_loss(const ScorerModel& m, const TrainingSample& s) {
  return joint_loss(m, s).negative;
}

// Dense dL/dweights for one sample.
inline std::vector<double> loss_gradient(const ScorerModel& m, const TrainingSample& s) {
  const auto prepared = detail::prepare(s, m);
  std::vector<double> grad(m.dimension, 0.0);
  for (const auto& [fv, coef] : detail::gradient_terms(m, prepared))
    for (const auto& [i, v] : fv->entries) grad[i] += coef * v;
  return grad;
}

namespace detail {

inline std::vector<NodeId> subtree(const Taxonomy& t, NodeId n) {
  std::vector<NodeId> out{n};
  for (std::size_t i = 0; i < out.size(); ++i)
    for (NodeId c : t.children(out[i])) out.push_back(c);
  return out;
}

inline TrainingPath training_path(const Taxonomy& t, NodeId anchor, NodeId detached, std::string_view definition) {
  auto tour = euler_tour(t, anchor, detached);
  auto without = verbalize(tour, t).text;
  auto with = std::string(definition) + std::string(kSeparator) + without;
  return {std::move(with), std::move(without), std::move(tour)};
}

}  // namespace detail

// One sample per non-root node n: the positive is n's canonical parent, toured
// with n detached; negatives are a seeded draw of other anchors outside n's
// subtree (so n never appears in any of its own training tours).
inline std::vector<TrainingSample> sample_training_data(const Taxonomy& t, std::size_t negatives_per_positive,
                                                        std::uint64_t seed) {
  if (t.size() <= negatives_per_positive + 1) {
    throw Error(ErrorCode::kTaxonomyTooSmall, std::to_string(t.size()) + " nodes cannot supply " +
                                                  std::to_string(negatives_per_positive) + " negatives");
  }
  SeededRng rng(seed);
  std::vector<TrainingSample> samples;
  for (NodeId n : t.ids()) {
    auto parent = t.parent(n);
    if (!parent) continue;
    std::vector<bool> excluded(t.size(), false);
    for (NodeId d : detail::subtree(t, n)) excluded[index_of(d)] = true;
    excluded[index_of(*parent)] = true;
    std::vector<NodeId> pool;
    for (NodeId c : t.ids())
      if (!excluded[index_of(c)]) pool.push_back(c);
    const auto take = std::min(negatives_per_positive, pool.size());
    rng.partial_shuffle(pool, take);
    pool.resize(take);

    TrainingSample s;
    s.query = t.name(n);
    s.positive = detail::training_path(t, *parent, n, t.definition(n));
    for (NodeId neg : pool) s.negatives.push_back(detail::training_path(t, neg, n, t.definition(n)));
    samples.push_back(std::move(s));
  }
  return samples;
}

struct TrainResult {
  ScorerModel model;
  std::vector<double> epoch_losses;  // total loss over all samples after each epoch
};

// Per-sample gradient descent for `epochs` passes in a seeded order.
inline TrainResult train(ScorerModel model, const std::vector<TrainingSample>& samples) {
  if (samples.empty()) throw Error(ErrorCode::kInvalidArgument, "no training samples");
  model.validate();
  std::vector<detail::PreparedSample> prepared;
  prepared.reserve(samples.size());
  for (const auto& s : samples) prepared.push_back(detail::prepare(s, model));

  SeededRng rng(model.seed);
  std::vector<std::size_t> order(prepared.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  for (int epoch = 0; epoch < model.epochs; ++epoch) {
    rng.shuffle(order);
    for (auto i : order) {
      const auto terms = detail::gradient_terms(model, prepared[i]);
      for (const auto& [fv, coef] : terms)
        for (const auto& [idx, v] : fv->entries) model.weights[idx] -= model.learning_rate * coef * v;
    }
    double total = 0;
    for (const auto& p : prepared) total += detail::loss(model, p).total;
    if (!std::isfinite(total)) {
      throw Error(ErrorCode::kNonFiniteLoss, "loss became " + format_double(total) + " in epoch " +
                                                 std::to_string(epoch + 1) + " (learning rate " +
                                                 format_double(model.learning_rate) + ")");
    }
    result.epoch_losses.push_back(total);
  }
  result.model = std::move(model);
  return result;
}

// Verbalized tours (without query definition) of every node, indexed by id.
inline std::vector<std::string> candidate_paths(const Taxonomy& t) {
  std::vector<std::string> out;
  out.reserve(t.size());
  for (NodeId id : t.ids()) out.push_back(verbalize(euler_tour(t, id), t).text);
  return out;
}

struct RankedCandidate {
  NodeId node;
  double score;
};

template <PathScorer Scorer>
std::vector<RankedCandidate> rank_candidates(const Scorer& scorer, const Taxonomy& t,
                                             const std::vector<std::string>& paths, const Query& query) {
  if (paths.size() != t.size()) throw Error(ErrorCode::kMisalignedInputs, "one candidate path per node");
  std::vector<RankedCandidate> out;
  out.reserve(t.size());
  const std::string prefix = query.definition + std::string(kSeparator);
  for (NodeId id : t.ids()) out.push_back({id, static_cast<double>(scorer.score(prefix + paths[index_of(id)]))});
  std::sort(out.begin(), out.end(), [&](const RankedCandidate& a, const RankedCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return t.name(a.node) < t.name(b.node);
  });
  return out;
}

// Scores every node of `t` as a parent for `query`; descending, ties by name.
template <PathScorer Scorer>
std::vector<RankedCandidate> rank_candidates(const Scorer& scorer, const Taxonomy& t, const Query& query) {
  return rank_candidates(scorer, t, candidate_paths(t), query);
}

struct Chunk {
  std::string query;
  std::size_t index = 0;
  std::vector<NodeId> members;
  std::vector<double> scores;
};

inline std::vector<Chunk> chunk(std::span<const RankedCandidate> ranked, std::size_t k, std::string_view query = {}) {
  if (k < 2) throw Error(ErrorCode::kInvalidChunkSize, "chunk size must be >= 2, got " + std::to_string(k));
  std::vector<Chunk> out;
  for (std::size_t start = 0; start < ranked.size(); start += k) {
    Chunk c;
    c.query = std::string(query);
    c.index = out.size();
    for (std::size_t i = start; i < std::min(ranked.size(), start + k); ++i) {
      c.members.push_back(ranked[i].node);
      c.scores.push_back(ranked[i].score);
    }
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model file: JSON with sparse weights.

inline constexpr std::string_view kModelFormat = "taxexp-linear-scorer";
inline constexpr int kModelVersion = 1;

inline nlohmann::ordered_json model_to_json(const ScorerModel& m) {
  nlohmann::ordered_json j;
  j["format"] = kModelFormat;
  j["version"] = kModelVersion;
  j["dimension"] = m.dimension;
  j["bias"] = m.bias;
  j["d"] = m.margin_d;
  j["lambda1"] = m.lambda_positive;
  j["lambda2"] = m.lambda_negative;
  j["learning_rate"] = m.learning_rate;
  j["epochs"] = m.epochs;
  j["seed"] = m.seed;
  auto weights = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < m.weights.size(); ++i)
    if (m.weights[i] != 0.0) weights.push_back({i, m.weights[i]});
  j["weights"] = std::move(weights);
  return j;
}

inline ScorerModel model_from_json(const nlohmann::json& j, std::optional<std::uint32_t> expected_dimension = {}) {
  try {
    if (j.at("format").get<std::string>() != kModelFormat) throw Error(ErrorCode::kIoError, "not a scorer model file");
    if (j.at("version").get<int>() != kModelVersion) {
      throw Error(ErrorCode::kIoError, "unsupported model version " + j.at("version").dump());
    }
    ScorerModel m = ScorerModel::with_dimension(j.at("dimension").get<std::uint32_t>());
    if (expected_dimension && *expected_dimension != m.dimension) {
      throw Error(ErrorCode::kDimensionMismatch, "model has dimension " + std::to_string(m.dimension) +
                                                     ", expected " + std::to_string(*expected_dimension));
    }
    m.bias = j.at("bias").get<double>();
    m.margin_d = j.at("d").get<double>();
    m.lambda_positive = j.at("lambda1").get<double>();
    m.lambda_negative = j.at("lambda2").get<double>();
    m.learning_rate = j.at("learning_rate").get<double>();
    m.epochs = j.at("epochs").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& w : j.at("weights")) {
      const auto idx = w.at(0).get<std::size_t>();
      if (idx >= m.dimension) throw Error(ErrorCode::kDimensionMismatch, "weight index beyond model dimension");
      m.weights[idx] = w.at(1).get<double>();
    }
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIoError, std::string("malformed model file: ") + e.what());
  }
}

inline void save_model(const ScorerModel& m, const std::filesystem::path& path) {
  detail::write_file(path, model_to_json(m).dump(1) + "\n");
}

inline ScorerModel load_model(const std::filesystem::path& path, std::optional<std::uint32_t> expected_dimension = {}) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kIoError, "'" + path.string() + "' is not JSON: " + e.what());
  }
  return model_from_json(j, expected_dimension);
}

// ---------------------------------------------------------------------------
// Ranking dump: query<TAB>rank<TAB>candidate<TAB>score, rank 1-based.

struct QueryRanking {
  std::string query;
  std::vector<std::pair<std::string, double>> candidates;
};

inline QueryRanking named_ranking(const Taxonomy& t, std::string query, std::span<const RankedCandidate> ranked) {
  QueryRanking r{std::move(query), {}};
  for (const auto& c : ranked) r.candidates.emplace_back(t.name(c.node), c.score);
  return r;
}

inline std::string serialize_rankings(std::span<const QueryRanking> rankings) {
  std::string out;
  for (const auto& r : rankings) {
    for (std::size_t i = 0; i < r.candidates.size(); ++i) {
      out += r.query + "\t" + std::to_string(i + 1) + "\t" + r.candidates[i].first + "\t" +
             format_double(r.candidates[i].second) + "\n";
    }
  }
  return out;
}

inline std::vector<QueryRanking> parse_rankings(std::string_view content, std::string_view source = "<rankings>") {
  std::vector<QueryRanking> out;
  detail::for_each_data_line(content, [&](std::size_t line_no, std::string_view line) {
    auto f = split(line, '\t');
    if (f.size() != 4) {
      throw Error(ErrorCode::kIoError, std::string(source) + ":" + std::to_string(line_no) +
                                           ": expected query<TAB>rank<TAB>candidate<TAB>score");
    }
    if (out.empty() || out.back().query != f[0]) out.push_back({std::string(f[0]), {}});
    out.back().candidates.emplace_back(std::string(f[2]), std::stod(std::string(f[3])));
  });
  return out;
}

}  // namespace taxexp
