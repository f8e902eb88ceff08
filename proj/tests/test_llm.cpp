#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "support.hpp"
#include "taxexp/llm.hpp"
#include "taxexp/prompts.hpp"

using namespace taxexp;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::kInvalidArgument;
}

CompletionResponse text_response(std::string text) {
  CompletionResponse r;
  r.text = std::move(text);
  return r;
}

}  // namespace

TEST(Complete, TruncatesAtFirstStopSequence) {
  FunctionBackend b([](const CompletionRequest&) { return text_response("ocean\nsecond line"); });
  CompletionRequest req;
  req.prompt = "p";
  EXPECT_EQ(complete(b, req).text, "ocean");
  req.stop = {"ea", "\n"};
  EXPECT_EQ(complete(b, req).text, "oc");
  req.stop = {};
  EXPECT_EQ(complete(b, req).text, "ocean\nsecond line");
  EXPECT_EQ(b.call_count(), 3u);
}

TEST(Complete, ValidatesRequest) {
  FunctionBackend b([](const CompletionRequest&) { return text_response("x"); });
  CompletionRequest req;
  req.max_tokens = 0;
  EXPECT_EQ(code_of([&] { complete(b, req); }), ErrorCode::kInvalidArgument);
  req.max_tokens = 1;
  req.temperature = -1;
  EXPECT_EQ(code_of([&] { complete(b, req); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(b.call_count(), 0u);
}

TEST(Complete, RejectsInvalidLogprobs) {
  for (double lp : {0.5, std::numeric_limits<double>::quiet_NaN(), -std::numeric_limits<double>::infinity()}) {
    FunctionBackend b([lp](const CompletionRequest& r) {
      CompletionResponse out;
      out.tokens = {{*r.echo_continuation, lp}};
      return out;
    });
    EXPECT_EQ(code_of([&] { average_logprob(b, "p", " x"); }), ErrorCode::kMalformedResponse);
  }
}

TEST(AverageLogprob, MeanOfContinuationTokens) {
  FunctionBackend b([](const CompletionRequest& r) {
    EXPECT_TRUE(r.want_logprobs);
    CompletionResponse out;
    out.tokens = {{" a", -1.0}, {" ->", -0.5}, {" b", -3.0}};
    EXPECT_EQ(*r.echo_continuation, " a -> b");
    return out;
  });
  EXPECT_DOUBLE_EQ(average_logprob(b, "prompt", " a -> b"), -1.5);
  EXPECT_EQ(code_of([&] { average_logprob(b, "prompt", ""); }), ErrorCode::kInvalidArgument);
}

TEST(AverageLogprob, TokensMustReconstructContinuation) {
  FunctionBackend b([](const CompletionRequest&) {
    CompletionResponse out;
    out.tokens = {{" a", -1.0}};
    return out;
  });
  EXPECT_EQ(code_of([&] { average_logprob(b, "p", " a b"); }), ErrorCode::kMalformedResponse);
}

TEST(AverageLogprob, BackendWithoutLogprobs) {
  FunctionBackend b([](const CompletionRequest&) { return text_response("x"); }, false);
  EXPECT_EQ(code_of([&] { average_logprob(b, "p", " a"); }), ErrorCode::kBackendLacksLogprobs);
  EXPECT_EQ(b.call_count(), 0u);
}

TEST(WhitespacePieces, ConcatenationIsIdentity) {
  for (std::string s : {" Arctic Ocean -> ocean -> environment", "x", "  two  spaces ", ""}) {
    std::string joined;
    for (const auto& p : whitespace_pieces(s)) joined += p;
    EXPECT_EQ(joined, s);
  }
  EXPECT_EQ(whitespace_pieces(" a -> b").size(), 3u);
}

TEST(ScriptedBackend, ExactPromptLookup) {
  ScriptedBackend b;
  b.on_prompt("hello", "world\nextra").on_score("hello", " x y", -0.25);
  CompletionRequest req;
  req.prompt = "hello";
  EXPECT_EQ(complete(b, req).text, "world");
  EXPECT_DOUBLE_EQ(average_logprob(b, "hello", " x y"), -0.25);
  req.prompt = "hello ";
  EXPECT_EQ(code_of([&] { complete(b, req); }), ErrorCode::kMalformedResponse);
  b.default_text("fallback");
  EXPECT_EQ(complete(b, req).text, "fallback");
}

TEST(ScriptedBackend, LoadsJsonScript) {
  ScriptedBackend b;
  b.load_json(nlohmann::json::parse(R"([
    {"prompt": "a", "text": "YES"},
    {"prompt": "a", "continuation": " p", "tokens": [[" p", -0.5]]},
    {"default_logprob": -3.0}
  ])"));
  CompletionRequest req;
  req.prompt = "a";
  EXPECT_EQ(complete(b, req).text, "YES");
  EXPECT_DOUBLE_EQ(average_logprob(b, "a", " p"), -0.5);
  EXPECT_DOUBLE_EQ(average_logprob(b, "zzz", " q r"), -3.0);
  EXPECT_EQ(code_of([&] { ScriptedBackend().load_json(nlohmann::json::parse(R"([{"prompt": 3}])")); }),
            ErrorCode::kConfigError);
}

TEST(OracleBackend, AnswersDefaultPromptsConsistently) {
  auto t = fixtures::arctic_taxonomy();
  auto q = fixtures::arctic_query();
  OracleBackend oracle(t, {q});
  const auto batch = fixtures::arctic_batch(t);

  CompletionRequest req;
  req.prompt = render_filter_prompt(q.name, batch, t).text;
  EXPECT_EQ(complete(oracle, req).text, "YES");
  req.prompt = render_retriever_prompt(q.name, q.definition, batch, t).text;
  EXPECT_EQ(complete(oracle, req).text, "ocean");

  const auto verifier = render_verifier_prompt(q.name, q.definition, t.at("ocean"), batch, t).text;
  EXPECT_DOUBLE_EQ(average_logprob(oracle, verifier, " " + arrow_path(q.name, t.at("ocean"), t)), -0.1);
  EXPECT_DOUBLE_EQ(average_logprob(oracle, verifier, " " + arrow_path(q.name, t.at("wild mammal"), t)), -2.0);

  // Without the gold parent, nor an ancestor within two hops, in the batch.
  std::vector<NodeId> far{t.at("wild mammal"), t.at("animal life"), t.at("climatic zone")};
  req.prompt = render_filter_prompt(q.name, far, t).text;
  EXPECT_EQ(complete(oracle, req).text, "NO");
  req.prompt = render_retriever_prompt(q.name, q.definition, far, t).text;
  EXPECT_EQ(complete(oracle, req).text, "NOT FOUND");

  // An ancestor of the gold parent passes the filter but cannot be retrieved.
  std::vector<NodeId> near{t.at("geophysical environment"), t.at("climatic zone")};
  req.prompt = render_filter_prompt(q.name, near, t).text;
  EXPECT_EQ(complete(oracle, req).text, "YES");
  req.prompt = render_retriever_prompt(q.name, q.definition, near, t).text;
  EXPECT_EQ(complete(oracle, req).text, "NOT FOUND");

  OracleBackend top(t, {q}, {.retrieve_top_when_absent = true});
  EXPECT_EQ(complete(top, req).text, "geophysical environment");
}

TEST(OracleBackend, UnknownPromptIsMalformed) {
  auto t = fixtures::arctic_taxonomy();
  OracleBackend oracle(t, {});
  CompletionRequest req;
  req.prompt = "what is this";
  EXPECT_EQ(code_of([&] { complete(oracle, req); }), ErrorCode::kMalformedResponse);
}
