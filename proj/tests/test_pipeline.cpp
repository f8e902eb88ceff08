#include <gtest/gtest.h>

#include <map>

#include "scenarios.hpp"
#include "support.hpp"
#include "taxexp/pipeline.hpp"
#include "taxexp/synthetic.hpp"

using namespace taxexp;

namespace {

using namespace taxexp::scenarios;

struct Arctic {
  Taxonomy t = fixtures::arctic_taxonomy();
  Query q = fixtures::arctic_query();
  PipelineConfig cfg;
};

const std::vector<std::string> kOceanFirst{"ocean", "sea", "lake", "island", "estuary", "plain", "mountain"};

}  // namespace

TEST(ParseReplies, YesNo) {
  EXPECT_EQ(parse_yes_no("YES"), true);
  EXPECT_EQ(parse_yes_no("  no, because"), false);
  EXPECT_EQ(parse_yes_no("1. Yes"), true);
  EXPECT_EQ(parse_yes_no("Maybe"), std::nullopt);
  EXPECT_EQ(parse_yes_no(""), std::nullopt);
}

TEST(ParseReplies, RetrieverMatching) {
  Arctic a;
  std::vector<NodeId> batch{a.t.at("ocean"), a.t.at("sea")};
  EXPECT_EQ(match_retriever_reply(" 'Ocean.' ", batch, a.t).second, a.t.at("ocean"));
  EXPECT_EQ(match_retriever_reply("NOT FOUND", batch, a.t).first, RetrieverReply::kNotFound);
  EXPECT_EQ(match_retriever_reply("sea ice", batch, a.t).first, RetrieverReply::kUnmatched);
  EXPECT_EQ(match_retriever_reply("lake", batch, a.t).first, RetrieverReply::kUnmatched);
}

TEST(Pipeline, OracleAcceptsTopRankedGoldInFirstBatch) {
  Arctic a;
  OracleBackend oracle(a.t, {a.q});
  std::vector<TraceEvent> trace;
  const auto p = expand_query(a.q, a.t, ranked_as(kOceanFirst), oracle, a.cfg, {}, &trace);
  EXPECT_EQ(p.status, PredictionStatus::kAccepted);
  EXPECT_EQ(p.predicted, "ocean");
  EXPECT_EQ(p.chunk_index, 0u);
  // One filter, one retrieve and one verification pass; the verification pass
  // scores each of the 5 batch members.
  EXPECT_EQ(count_stage(trace, Stage::kFilter), 1u);
  EXPECT_EQ(count_stage(trace, Stage::kRetrieve), 1u);
  EXPECT_EQ(count_stage(trace, Stage::kVerify), 1u);
  EXPECT_EQ(p.llm_calls, 2u + 5u);
  EXPECT_EQ(oracle.call_count(), p.llm_calls);
  EXPECT_EQ(traced_calls(trace), p.llm_calls);
}

TEST(Pipeline, OracleFindsGoldRankedSeventhInSecondBatch) {
  Arctic a;
  OracleBackend oracle(a.t, {a.q});
  const std::vector<std::string> order{"wild mammal", "animal life", "climatic zone", "frigid zone", "humid zone",
                                       "sea",         "ocean",       "lake"};
  std::vector<TraceEvent> trace;
  const auto p = expand_query(a.q, a.t, ranked_as(order), oracle, a.cfg, {}, &trace);
  EXPECT_EQ(p.status, PredictionStatus::kAccepted);
  EXPECT_EQ(p.predicted, "ocean");
  EXPECT_EQ(p.chunk_index, 1u);
  ASSERT_GE(trace.size(), 2u);
  EXPECT_EQ(trace[0].stage, Stage::kFilter);
  EXPECT_EQ(trace[0].payload["passed"], false);
  EXPECT_EQ(trace[1].stage, Stage::kDiscard);
  EXPECT_EQ(traced_calls(trace), p.llm_calls);
}

TEST(Pipeline, AllNoFilterNeverRetrieves) {
  Arctic a;
  ScriptedBackend no;
  no.default_text("no");
  std::vector<TraceEvent> trace;
  const auto p = expand_query(a.q, a.t, ranked_as(kOceanFirst), no, a.cfg, {}, &trace);
  EXPECT_EQ(p.status, PredictionStatus::kExhausted);
  EXPECT_FALSE(p.predicted);
  EXPECT_EQ(count_stage(trace, Stage::kRetrieve), 0u);
  // 22 candidates in chunks of 5: four full batches plus a pair.
  EXPECT_EQ(count_stage(trace, Stage::kFilter), 5u);
  EXPECT_EQ(no.call_count(), 5u);
  EXPECT_EQ(to_json(p)["predicted"], "NOT_FOUND");
}

TEST(Pipeline, FailedVerificationRemovesCandidateAndReasks) {
  Arctic a;
  std::atomic<int> retrieves{0};
  FunctionBackend b([&](const CompletionRequest& r) {
    if (r.echo_continuation) return score_reply(r, scored_candidate(r) == "ocean" ? -0.4 : -1.2);
    if (is_filter(r)) return reply("YES");
    ++retrieves;
    return reply(lists(r, "sea") ? "sea" : "ocean");
  });
  std::vector<TraceEvent> trace;
  const auto p = expand_query(a.q, a.t, ranked_as(kOceanFirst), b, a.cfg, {}, &trace);
  EXPECT_EQ(p.predicted, "ocean");
  EXPECT_EQ(retrieves.load(), 2);
  EXPECT_EQ(count_stage(trace, Stage::kRetrieve), 2u);
  ASSERT_EQ(count_stage(trace, Stage::kRemove), 1u);
  const auto removed = std::find_if(trace.begin(), trace.end(), [](const auto& e) { return e.stage == Stage::kRemove; });
  EXPECT_EQ(removed->payload["removed"], "sea");
  EXPECT_EQ(removed->payload["remaining"], 4);
  // filter + 2 retrieves + 5 scorings + 4 scorings
  EXPECT_EQ(p.llm_calls, 1u + 2u + 5u + 4u);
  EXPECT_EQ(traced_calls(trace), p.llm_calls);
}

TEST(Pipeline, RetrievedPathWinningPasses) {
  Arctic a;
  FunctionBackend b([&](const CompletionRequest& r) {
    if (r.echo_continuation) return score_reply(r, scored_candidate(r) == "ocean" ? -0.4 : -1.2);
    return reply(is_filter(r) ? "YES" : "ocean");
  });
  QueryExpansion run(a.q, a.t, b, a.cfg, {});
  std::vector<NodeId> batch{a.t.at("sea"), a.t.at("ocean")};
  const auto v = run.verify_parent(a.t.at("ocean"), batch, 0);
  EXPECT_TRUE(v.passed);
  EXPECT_NEAR(v.scores[1].second, -0.4, 1e-12);
}

TEST(Pipeline, TiedScoresPreferShorterPath) {
  Arctic a;
  FunctionBackend b([](const CompletionRequest& r) { return score_reply(r, -1.0); });
  QueryExpansion run(a.q, a.t, b, a.cfg, {});
  // geophysical environment (depth 2) vs ocean (depth 3)
  std::vector<NodeId> batch{a.t.at("ocean"), a.t.at("geophysical environment")};
  auto v = run.verify_parent(a.t.at("ocean"), batch, 0);
  EXPECT_FALSE(v.passed);
  EXPECT_EQ(v.best, a.t.at("geophysical environment"));
  // Same length: name decides.
  std::vector<NodeId> same{a.t.at("sea"), a.t.at("ocean")};
  v = run.verify_parent(a.t.at("sea"), same, 0);
  EXPECT_EQ(v.best, a.t.at("ocean"));
}

TEST(Pipeline, ConstantShiftOfLogprobsKeepsVerdict) {
  Arctic a;
  std::vector<NodeId> batch{a.t.at("ocean"), a.t.at("sea"), a.t.at("lake")};
  for (double shift : {0.0, -0.7, -5.0}) {
    FunctionBackend b([&](const CompletionRequest& r) {
      const auto c = scored_candidate(r);
      return score_reply(r, (c == "sea" ? -0.2 : c == "ocean" ? -0.5 : -0.9) + shift);
    });
    QueryExpansion run(a.q, a.t, b, a.cfg, {});
    EXPECT_EQ(run.verify_parent(a.t.at("sea"), batch, 0).best, a.t.at("sea"));
  }
}

TEST(Pipeline, UnmatchedRetrieverReplyBecomesNotFound) {
  Arctic a;
  std::atomic<int> retrieves{0};
  FunctionBackend b([&](const CompletionRequest& r) {
    if (is_filter(r)) return reply("YES");
    ++retrieves;
    return reply("sea ice");
  });
  QueryExpansion run(a.q, a.t, b, a.cfg, {});
  std::vector<NodeId> batch{a.t.at("ocean"), a.t.at("sea")};
  const auto r = run.retrieve_parent(batch, 0);
  EXPECT_FALSE(r.candidate);
  EXPECT_FALSE(r.parsed);
  EXPECT_EQ(retrieves.load(), 2);
  EXPECT_TRUE(run.trace().back().payload.contains("warning"));
  EXPECT_EQ(run.trace().back().llm_calls, 2u);
}

TEST(Pipeline, NotFoundAbandonsBatch) {
  Arctic a;
  FunctionBackend b([&](const CompletionRequest& r) { return reply(is_filter(r) ? "YES" : "NOT FOUND"); });
  std::vector<TraceEvent> trace;
  const auto p = expand_query(a.q, a.t, ranked_as(kOceanFirst), b, a.cfg, {}, &trace);
  EXPECT_EQ(p.status, PredictionStatus::kExhausted);
  EXPECT_EQ(count_stage(trace, Stage::kVerify), 0u);
  EXPECT_EQ(count_stage(trace, Stage::kRetrieve), count_stage(trace, Stage::kFilter));
}

// Adversary: the retriever always names the first listed candidate and the
// verifier always prefers the last listed path.
TEST(Pipeline, BatchLoopTerminatesWithinKMinusOneRounds) {
  for (std::size_t k : {2u, 3u, 5u, 8u}) {
    Arctic a;
    a.cfg.chunk_size = k;
    FunctionBackend b([&](const CompletionRequest& r) {
      if (r.echo_continuation) {
        const auto last = r.prompt.rfind("\n- ", r.prompt.find("\n\nSome examples"));
        const auto line = r.prompt.substr(last + 3, r.prompt.find('\n', last + 3) - last - 3);
        return score_reply(r, " " + line == *r.echo_continuation ? -0.1 : -3.0);
      }
      if (is_filter(r)) return reply("YES");
      const auto first = r.prompt.find("List of Candidate terms:\n- ") + 27;
      return reply(r.prompt.substr(first, r.prompt.find('\n', first) - first));
    });
    std::vector<TraceEvent> trace;
    const auto p = expand_query(a.q, a.t, ranked_as(kOceanFirst), b, a.cfg, {}, &trace);
    std::map<std::size_t, std::size_t> rounds;
    for (const auto& e : trace)
      if (e.stage == Stage::kRetrieve) ++rounds[*e.batch_index];
    for (const auto& [batch, n] : rounds) EXPECT_LE(n, k - 1) << "k=" << k << " batch " << batch;
    // The adversary accepts once a batch is down to the last listed member.
    EXPECT_EQ(traced_calls(trace), p.llm_calls);
  }
}

TEST(Pipeline, VerifierOffAcceptsRetrievedWithoutScoring) {
  Arctic a;
  a.cfg.verifier_mode = VerifierMode::kOff;
  FunctionBackend b([&](const CompletionRequest& r) { return reply(is_filter(r) ? "YES" : "sea"); }, false);
  const auto p = expand_query(a.q, a.t, ranked_as(kOceanFirst), b, a.cfg);
  EXPECT_EQ(p.predicted, "sea");
  EXPECT_EQ(p.llm_calls, 2u);
}

TEST(Pipeline, LogprobModeOnPlainBackendFailsTheQuery) {
  Arctic a;
  FunctionBackend b([&](const CompletionRequest& r) { return reply(is_filter(r) ? "YES" : "sea"); }, false);
  const auto res = expand_all({a.q}, a.t, ranked_as(kOceanFirst), b, a.cfg);
  ASSERT_EQ(res.predictions.size(), 1u);
  EXPECT_EQ(res.predictions[0].status, PredictionStatus::kFailed);
  EXPECT_NE(res.predictions[0].error.find("BackendLacksLogprobs"), std::string::npos);
  EXPECT_EQ(res.failures, 1u);
  // The partial trace survives: filter and retrieve happened before the failure.
  EXPECT_EQ(count_stage(res.trace, Stage::kFilter), 1u);
  EXPECT_EQ(count_stage(res.trace, Stage::kRetrieve), 1u);
}

TEST(Pipeline, MergedChunksShareOneFilterCall) {
  Arctic a;
  a.cfg.chunks_per_round = 3;
  ScriptedBackend no;
  no.default_text("NO");
  std::vector<TraceEvent> trace;
  expand_query(a.q, a.t, ranked_as(kOceanFirst), no, a.cfg, {}, &trace);
  // 22 candidates = chunks of 5,5,5,5,2 -> windows of 15 and 7.
  ASSERT_EQ(count_stage(trace, Stage::kFilter), 2u);
  EXPECT_EQ(trace[0].payload["candidates"].size(), 15u);
}

TEST(Pipeline, SingletonBatchIsDiscardedWithoutCalls) {
  auto t = load_taxonomy({{"a", "r"}, {"b", "r"}});  // 3 candidates, k=2 -> [2, 1]
  ScriptedBackend no;
  no.default_text("NO");
  std::vector<TraceEvent> trace;
  PipelineConfig cfg;
  cfg.chunk_size = 2;
  const auto p = expand_query(Query{"q", "", std::string("a")}, t, ranked_as({"a", "b", "r"}), no, cfg, {}, &trace);
  EXPECT_EQ(no.call_count(), 1u);
  EXPECT_EQ(p.status, PredictionStatus::kExhausted);
  EXPECT_EQ(count_stage(trace, Stage::kDiscard), 3u);  // filtered, singleton, exhausted
}

TEST(ExpandAll, EmptyInput) {
  Arctic a;
  ScriptedBackend none;
  const auto res = expand_all({}, a.t, ranked_as({}), none, a.cfg);
  EXPECT_TRUE(res.predictions.empty());
  EXPECT_TRUE(res.trace.empty());
  EXPECT_EQ(res.failures, 0u);
}

TEST(ExpandAll, ParallelMatchesSequential) {
  const auto full = generate_synthetic_taxonomy({60, 5, 21});
  const auto split = split_test_leaves(full, 0.3, 21);
  ASSERT_GE(split.queries.size(), 10u);
  std::vector<Query> queries(split.queries.begin(), split.queries.begin() + 10);
  ScorerModel m;
  m.seed = 21;
  const auto model = train(m, sample_training_data(split.train, 15, 21)).model;
  auto run = [&](std::size_t parallelism) {
    OracleBackend oracle(split.train, queries);
    PipelineConfig cfg;
    cfg.parallelism = parallelism;
    auto res = expand_all(queries, split.train, model, oracle, cfg);
    std::sort(res.predictions.begin(), res.predictions.end(),
              [](const auto& x, const auto& y) { return x.query < y.query; });
    return to_jsonl(std::span<const Prediction>(res.predictions));
  };
  const auto sequential = run(1);
  EXPECT_EQ(run(4), sequential);
  EXPECT_EQ(run(4), sequential);
}

TEST(ExpandAll, OneFailingQueryDoesNotStopTheOthers) {
  const auto full = generate_synthetic_taxonomy({60, 5, 4});
  const auto split = split_test_leaves(full, 0.3, 4);
  std::vector<Query> queries(split.queries.begin(), split.queries.begin() + 10);
  OracleBackend oracle(split.train, queries);
  const auto poisoned = queries[3].name;
  FunctionBackend faulty([&](const CompletionRequest& r) {
    if (r.prompt.find("'" + poisoned + "'") != std::string::npos) {
      throw Error(ErrorCode::kRetriesExhausted, "injected outage");
    }
    return oracle.send(r);
  });
  PipelineConfig cfg;
  cfg.parallelism = 3;
  const auto res = expand_all(queries, split.train, ScorerModel{}, faulty, cfg);
  EXPECT_EQ(res.failures, 1u);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    EXPECT_EQ(res.predictions[i].query, queries[i].name);
    EXPECT_EQ(res.predictions[i].status == PredictionStatus::kFailed, i == 3);
  }
}

TEST(Serialization, PredictionRoundTrip) {
  Prediction a{"Arctic Ocean", std::string("ocean"), std::string("ocean"), PredictionStatus::kAccepted, 0u, 7, ""};
  Prediction b{"x", std::nullopt, std::nullopt, PredictionStatus::kExhausted, std::nullopt, 3, ""};
  std::vector<Prediction> preds{a, b};
  const auto text = to_jsonl(std::span<const Prediction>(preds));
  const auto back = parse_predictions(text);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].predicted, "ocean");
  EXPECT_EQ(back[0].chunk_index, 0u);
  EXPECT_FALSE(back[1].predicted);
  EXPECT_FALSE(back[1].gold);
  EXPECT_EQ(back[1].status, PredictionStatus::kExhausted);
  EXPECT_EQ(to_jsonl(std::span<const Prediction>(back)), text);
}

TEST(Serialization, TraceEventFields) {
  TraceEvent e{"q", Stage::kRemove, 2u, {{"removed", "sea"}}, "2024-01-01T00:00:00.000Z", 0};
  const auto j = to_json(e);
  EXPECT_EQ(j["stage"], "remove");
  EXPECT_EQ(j["batch_index"], 2);
  EXPECT_EQ(j["payload"]["removed"], "sea");
  EXPECT_EQ(utc_timestamp().size(), 24u);
}
