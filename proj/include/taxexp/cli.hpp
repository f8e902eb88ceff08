#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "taxexp/config.hpp"
#include "taxexp/eval.hpp"
#include "taxexp/http_backend.hpp"
#include "taxexp/llm.hpp"
#include "taxexp/pipeline.hpp"
#include "taxexp/prompts.hpp"
#include "taxexp/ranker.hpp"
#include "taxexp/synthetic.hpp"
#include "taxexp/taxonomy.hpp"

namespace taxexp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomainError = 1;
inline constexpr int kExitUsage = 2;

struct Command {
  const RunConfig& config;
  std::filesystem::path out_dir;
  std::ostream& out;

  void write(const std::string& name, std::string_view content) const { detail::write_file(out_dir / name, content); }
};

inline Taxonomy load_configured_taxonomy(const RunConfig& c) {
  const auto edges = c.existing_path("edges", "to load a taxonomy");
  std::optional<std::filesystem::path> defs;
  if (c.has("definitions")) defs = c.existing_path("definitions", "");
  return load_taxonomy_files(edges, defs);
}

inline std::vector<Query> load_configured_queries(const RunConfig& c) {
  const auto path = c.existing_path("queries", "for this command");
  return parse_queries(detail::read_file(path), path.string());
}

inline PromptTemplates configured_templates(const RunConfig& c) {
  return c.has("templates") ? PromptTemplates::load(c.existing_path("templates", "")) : PromptTemplates{};
}

inline std::unique_ptr<CompletionBackend> make_backend(const RunConfig& c, const Taxonomy& t,
                                                       const std::vector<Query>& queries) {
  const auto& kind = c.str("backend");
  if (kind == "oracle-mock") return std::make_unique<OracleBackend>(t, queries);
  if (kind == "script-mock") {
    const auto path = c.existing_path("script", "for backend = script-mock");
    auto b = std::make_unique<ScriptedBackend>();
    try {
      b->load_json(nlohmann::json::parse(detail::read_file(path)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kConfigError, path.string() + ": " + e.what());
    }
    return b;
  }
  if (kind == "http") return std::make_unique<HttpBackend>(endpoint_settings(c));
  throw Error(ErrorCode::kConfigError, "unknown backend '" + kind + "' (oracle-mock | script-mock | http)");
}

inline void print_stats(std::ostream& out, const Taxonomy& t) {
  out << "nodes=" << t.size() << " edges=" << t.edge_count() << " depth=" << t.max_depth() << "\n";
}

inline int cmd_synth(const Command& cmd) {
  const auto& c = cmd.config;
  SyntheticOptions opt;
  opt.nodes = c.count("synth_nodes");
  opt.depth = static_cast<int>(c.integer("synth_depth"));
  opt.seed = c.seed();
  const auto t = generate_synthetic_taxonomy(opt);
  write_taxonomy_files(t, cmd.out_dir / "synthetic.edges.tsv", cmd.out_dir / "synthetic.definitions.tsv");
  print_stats(cmd.out, t);
  return kExitOk;
}

inline int cmd_ingest(const Command& cmd) {
  const auto t = load_configured_taxonomy(cmd.config);
  nlohmann::ordered_json j{{"root", t.name(t.root())},
                           {"nodes", t.size()},
                           {"edges", t.edge_count()},
                           {"depth", t.max_depth()},
                           {"leaves", t.leaves().size()}};
  cmd.write("ingest.json", j.dump(2) + "\n");
  print_stats(cmd.out, t);
  return kExitOk;
}

inline int cmd_split(const Command& cmd) {
  const auto& c = cmd.config;
  const auto t = load_configured_taxonomy(c);
  const auto split = split_test_leaves(t, c.real("split_fraction"), c.seed());
  write_taxonomy_files(split.train, cmd.out_dir / "train.edges.tsv", cmd.out_dir / "train.definitions.tsv");
  cmd.write("queries.tsv", serialize_queries(split.queries));
  cmd.out << "train_nodes=" << split.train.size() << " queries=" << split.queries.size() << "\n";
  return kExitOk;
}

inline int cmd_train(const Command& cmd) {
  const auto& c = cmd.config;
  const auto t = load_configured_taxonomy(c);
  auto model = scorer_settings(c);
  model.seed = c.seed();
  const auto samples = sample_training_data(t, c.count("negatives"), model.seed);
  const auto result = train(std::move(model), samples);
  save_model(result.model, cmd.out_dir / "model.json");
  std::string losses = "epoch\tloss\n";
  for (std::size_t i = 0; i < result.epoch_losses.size(); ++i)
    losses += std::to_string(i + 1) + "\t" + format_double(result.epoch_losses[i]) + "\n";
  cmd.write("loss.tsv", losses);
  cmd.out << "samples=" << samples.size() << " epochs=" << result.epoch_losses.size();
  if (!result.epoch_losses.empty()) cmd.out << " final_loss=" << format_double(result.epoch_losses.back());
  cmd.out << "\n";
  return kExitOk;
}

inline ScorerModel load_configured_model(const RunConfig& c) {
  return load_model(c.existing_path("model", "for this command"));
}

inline int cmd_rank(const Command& cmd) {
  const auto& c = cmd.config;
  const auto t = load_configured_taxonomy(c);
  const auto queries = load_configured_queries(c);
  const auto model = load_configured_model(c);
  const auto k_list = c.k_list();
  const auto paths = candidate_paths(t);

  std::vector<QueryRanking> rankings;
  EvalInputs in;
  in.name = t.name(t.root());
  in.rankings.emplace();
  for (const auto& q : queries) {
    const auto ranked = rank_candidates(model, t, paths, q);
    rankings.push_back(named_ranking(t, q.name, ranked));
    std::vector<std::string> names;
    for (const auto& r : ranked) names.push_back(t.name(r.node));
    in.rankings->push_back(std::move(names));
    in.gold.push_back(q.gold_parent);
  }
  cmd.write("rankings.tsv", serialize_rankings(rankings));
  const auto report = evaluate(in, t, k_list, c.has("seed") ? c.seed() : 0);
  cmd.write("rank_report.json", to_json(report).dump(2) + "\n");
  cmd.out << render_table(report);
  return kExitOk;
}

inline int cmd_expand(const Command& cmd) {
  const auto& c = cmd.config;
  c.seed();  // required so the run can be reproduced from its snapshot
  const auto t = load_configured_taxonomy(c);
  const auto queries = load_configured_queries(c);
  const auto model = load_configured_model(c);
  const auto pipeline = pipeline_settings(c);
  const auto templates = configured_templates(c);
  auto backend = make_backend(c, t, queries);

  const auto result = expand_all(queries, t, model, *backend, pipeline, templates);
  cmd.write("predictions.jsonl", to_jsonl(std::span<const Prediction>(result.predictions)));
  cmd.write("trace.jsonl", to_jsonl(std::span<const TraceEvent>(result.trace)));

  std::map<PredictionStatus, std::size_t> by_status;
  std::size_t calls = 0;
  for (const auto& p : result.predictions) {
    ++by_status[p.status];
    calls += p.llm_calls;
  }
  cmd.out << "queries=" << queries.size() << " accepted=" << by_status[PredictionStatus::kAccepted]
          << " exhausted=" << by_status[PredictionStatus::kExhausted] << " failed=" << result.failures
          << " llm_calls=" << calls << " backend=" << backend->id() << "\n";
  return kExitOk;
}

inline int cmd_eval(const Command& cmd) {
  const auto& c = cmd.config;
  const auto t = load_configured_taxonomy(c);
  if (!c.has("predictions") && !c.has("rankings")) {
    throw Error(ErrorCode::kConfigError, "eval needs predictions and/or rankings");
  }
  EvalInputs in;
  in.name = t.name(t.root());
  std::vector<std::string> order;
  if (c.has("predictions")) {
    const auto path = c.existing_path("predictions", "");
    const auto preds = parse_predictions(detail::read_file(path));
    in.predicted.emplace();
    for (const auto& p : preds) {
      order.push_back(p.query);
      in.predicted->push_back(p.predicted);
      in.gold.push_back(p.gold);
    }
  } else {
    for (const auto& q : load_configured_queries(c)) {
      order.push_back(q.name);
      in.gold.push_back(q.gold_parent);
    }
  }
  if (c.has("rankings")) {
    const auto path = c.existing_path("rankings", "");
    std::map<std::string, std::vector<std::string>, std::less<>> by_query;
    for (const auto& r : parse_rankings(detail::read_file(path), path.string())) {
      auto& names = by_query[r.query];
      for (const auto& [name, score] : r.candidates) names.push_back(name);
    }
    in.rankings.emplace();
    for (const auto& q : order) {
      auto it = by_query.find(q);
      in.rankings->push_back(it == by_query.end() ? std::vector<std::string>{} : it->second);
    }
  }
  const auto report = evaluate(in, t, c.k_list(), c.has("seed") ? c.seed() : 0);
  cmd.write("eval.json", to_json(report).dump(2) + "\n");
  cmd.out << render_table(report);
  return kExitOk;
}

inline void report_error(std::ostream& err, std::string_view code, std::string_view message) {
  err << nlohmann::json{{"error", code}, {"message", message}}.dump() << "\n";
}

// Entry point shared by the executable and the tests. Precedence: built-in
// defaults, then --config, then flags.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Taxonomy expansion: rank candidate parents, then filter, retrieve and verify with an LLM."};
  app.name("taxexp");
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string out_dir = "out";
  std::vector<std::string> assignments;
  std::map<std::string, std::string> flags;
  app.add_option("--config", config_path, "key = value run config file");
  app.add_option("--out", out_dir, "output directory")->capture_default_str();
  app.add_option("--set", assignments, "override a config key (key=value), repeatable");
  for (const auto& key : kConfigKeys) {
    std::string flag(key.name);
    std::replace(flag.begin(), flag.end(), '_', '-');
    app.add_option("--" + flag, flags[std::string(key.name)], std::string(key.help));
  }

  using Handler = int (*)(const Command&);
  const std::vector<std::tuple<std::string, std::string, Handler>> commands{
      {"synth", "generate a seeded synthetic taxonomy", cmd_synth},
      {"ingest", "validate a taxonomy and print node, edge and depth counts", cmd_ingest},
      {"split", "hold out a seeded fraction of leaves as queries", cmd_split},
      {"train", "train the path scorer", cmd_train},
      {"rank", "rank candidate parents per query and report Hit@k", cmd_rank},
      {"expand", "run filter, retrieve and verify over the ranked chunks", cmd_expand},
      {"eval", "score predictions and/or rankings against gold parents", cmd_eval},
  };
  for (const auto& [name, help, fn] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    RunConfig config;
    if (!config_path.empty()) config.merge(detail::read_file(config_path), config_path);
    for (const auto& [key, value] : flags)
      if (!value.empty()) config.set(key, value);
    for (const auto& a : assignments) config.set_assignment(a);

    for (const auto& [name, help, fn] : commands) {
      if (!app.got_subcommand(name)) continue;
      std::filesystem::create_directories(out_dir);
      Command cmd{config, out_dir, out};
      cmd.write(name + ".config", config.snapshot());
      return fn(cmd);
    }
    return kExitUsage;
  } catch (const Error& e) {
    report_error(err, to_string(e.code()), e.message());
  } catch (const std::filesystem::filesystem_error& e) {
    report_error(err, "IoError", e.what());
  } catch (const std::exception& e) {
    report_error(err, "InternalError", e.what());
  }
  return kExitDomainError;
}

}  // namespace taxexp::cli
