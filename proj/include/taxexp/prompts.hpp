#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "taxexp/error.hpp"
#include "taxexp/taxonomy.hpp"
#include "taxexp/text.hpp"

namespace taxexp {

inline constexpr std::string_view kDefaultFilterTemplate =
    R"(You are a semantic relevance expert for terms present in a taxonomy. Your task is to determine whether the set of candidate terms is a semantically relevant match for the given query term '{{query}}' and '{{taxonomy}}' taxonomy.

List of Candidate terms:
{{candidate_list}}

Definitions of candidate terms:
{{candidate_definitions}}

Reason over the definitions of candidate terms to determine their relevance as a whole with respect to query terms {{query}} and {{taxonomy}} taxonomy.  If at least one of the candidate terms is the most relevant parent term for the taxonomy, return YES. Otherwise, return NO.

Answer:)";

inline constexpr std::string_view kDefaultRetrieverTemplate =
    R"(You are an expert in hypernymy (is-a) relationship detection for a taxonomy. Your task is to find the most appropriate candidate hypernym of the query node '{{query}}' within the '{{root}}' taxonomy. The most appropriate hypernym is the most granular category that directly encompasses the query term.

List of Candidate terms:
{{candidate_list}}

Definitions of candidate terms:
{{candidate_definitions}}

Path from query term to root node for all candidate terms:
{{candidate_paths}}

Query Node Definition: {{query_definition}}

Some examples of hypernymy relationships in the taxonomy are as follows:
{{hypernymy_examples}}

Instructions:
- Determine the most appropriate direct hypernym of '{{query}}' from the given list of candidate terms. Do not return any term which is not in the list.
- A hypernym must be a most granular category in which the query node is an instance.
- If no candidate term correctly fits as a hypernym , return NOT FOUND.
- Do not include explanations, justifications, or additional context.

Answer:)";

inline constexpr std::string_view kDefaultVerifierTemplate =
    R"(You are an expert verifier of hypernymy relationship for a taxonomy using paths. You have been given the following path from query term '{{query}}' to root node: {{retrieved_path}}

Your task is to verify if the given path is the most appropriate path for the query node or the following paths provide a better alternative.

Other possible paths:
{{candidate_paths}}

Some examples of hypernymy relationships in the taxonomy are as follows:
{{hypernymy_examples}}

Definitions of candidate terms:
{{candidate_definitions}}

Query Node Definition: {{query_definition}}

Instructions:
- Compare the given path with the alternative paths based on definitions and hypernymy relationships.
- Select the most appropriate path that best represents the hierarchical relationship of '{{query}}' in the taxonomy.

Return the most appropriate path.

Answer:)";

enum class PromptKind { kFilter, kRetriever, kVerifier };

inline std::string_view to_string(PromptKind k) {
  switch (k) {
    case PromptKind::kFilter:
      return "filter";
    case PromptKind::kRetriever:
      return "retriever";
    case PromptKind::kVerifier:
      return "verifier";
  }
  return "unknown";
}

struct PromptTemplates {
  std::string filter{kDefaultFilterTemplate};
  std::string retriever{kDefaultRetrieverTemplate};
  std::string verifier{kDefaultVerifierTemplate};

  // Reads filter.txt, retriever.txt and verifier.txt; a missing file keeps the
  // built-in text. One trailing newline is dropped.
  static PromptTemplates load(const std::filesystem::path& dir) {
    PromptTemplates out;
    auto read = [&](const char* file, std::string& slot) {
      const auto path = dir / file;
      if (!std::filesystem::exists(path)) return;
      slot = detail::read_file(path);
      if (slot.ends_with("\r\n")) {
        slot.resize(slot.size() - 2);
      } else if (slot.ends_with('\n')) {
        slot.pop_back();
      }
    };
    read("filter.txt", out.filter);
    read("retriever.txt", out.retriever);
    read("verifier.txt", out.verifier);
    return out;
  }
};

struct PromptBundle {
  PromptKind kind;
  std::string text;
  std::vector<std::string> candidate_order;
  std::vector<std::string> path_strings;
};

// Substitutes every {{name}}; an unknown or unterminated placeholder is an
// error. Values are inserted verbatim and never re-scanned.
inline std::string render_template(std::string_view tmpl, const std::map<std::string, std::string, std::less<>>& values) {
  std::string out;
  out.reserve(tmpl.size() * 2);
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find("{{", pos);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    out.append(tmpl.substr(pos, open - pos));
    const auto close = tmpl.find("}}", open + 2);
    if (close == std::string_view::npos) {
      throw Error(ErrorCode::kTemplateError, "unterminated placeholder at offset " + std::to_string(open));
    }
    const auto name = trim(tmpl.substr(open + 2, close - open - 2));
    const auto it = values.find(name);
    if (it == values.end()) throw Error(ErrorCode::kTemplateError, "unknown placeholder {{" + std::string(name) + "}}");
    out.append(it->second);
    pos = close + 2;
  }
  return out;
}

// "<query> -> <candidate> -> ... -> <root>"
inline std::string arrow_path(std::string_view query, NodeId candidate, const Taxonomy& t) {
  std::string out(query);
  for (auto n : path_to_root(t, candidate)) {
    out.append(" -> ");
    out.append(t.name(n));
  }
  return out;
}

// Per member in the given order: its children when it has at least two, then
// its parent unless that parent is the root or itself listed. At most `cap`
// lines.
inline std::vector<std::string> hypernymy_examples(std::span<const NodeId> members, const Taxonomy& t,
                                                   std::size_t cap = 4) {
  std::vector<std::string> out;
  auto listed = [&](NodeId n) { return std::find(members.begin(), members.end(), n) != members.end(); };
  for (auto m : members) {
    if (out.size() >= cap) break;
    const auto kids = t.children(m);
    if (kids.size() >= 2) {
      std::vector<std::string> names;
      for (auto c : kids) names.push_back(t.name(c));
      out.push_back("Children of " + t.name(m) + " are: " + join(names, ", "));
    }
    if (out.size() >= cap) break;
    const auto p = t.parent(m);
    if (p && *p != t.root() && !listed(*p)) out.push_back("Parent of " + t.name(m) + " is: " + t.name(*p));
  }
  return out;
}

namespace detail {

inline std::string bullets(const std::vector<std::string>& lines) {
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out.push_back('\n');
    out.append("- ");
    out.append(lines[i]);
  }
  return out;
}

inline std::vector<std::string> candidate_names(std::span<const NodeId> batch, const Taxonomy& t) {
  std::vector<std::string> out;
  for (auto n : batch) out.push_back(t.name(n));
  return out;
}

inline std::string candidate_definitions(std::span<const NodeId> batch, const Taxonomy& t) {
  std::vector<std::string> lines;
  for (auto n : batch) lines.push_back(t.name(n) + " - " + t.definition(n));
  return bullets(lines);
}

inline std::vector<std::string> arrow_paths(std::string_view query, std::span<const NodeId> batch, const Taxonomy& t) {
  std::vector<std::string> out;
  for (auto n : batch) out.push_back(arrow_path(query, n, t));
  return out;
}

inline void require_batch(std::span<const NodeId> batch, const Taxonomy& t) {
  if (batch.empty()) throw Error(ErrorCode::kInvalidArgument, "prompt needs at least one candidate");
  for (auto n : batch) {
    if (!t.contains(n)) throw Error(ErrorCode::kUnknownNode, "candidate id " + std::to_string(index_of(n)));
  }
}

}  // namespace detail

inline PromptBundle render_filter_prompt(std::string_view query, std::span<const NodeId> batch, const Taxonomy& t,
                                         const PromptTemplates& templates = {}) {
  detail::require_batch(batch, t);
  std::string taxonomy_name = t.name(t.root());
  if (!taxonomy_name.empty()) taxonomy_name[0] = ascii_upper(taxonomy_name[0]);
  PromptBundle b{PromptKind::kFilter, {}, detail::candidate_names(batch, t), {}};
  b.text = render_template(templates.filter, {{"query", std::string(query)},
                                              {"taxonomy", taxonomy_name},
                                              {"root", t.name(t.root())},
                                              {"candidate_list", detail::bullets(b.candidate_order)},
                                              {"candidate_definitions", detail::candidate_definitions(batch, t)}});
  return b;
}

inline PromptBundle render_retriever_prompt(std::string_view query, std::string_view query_definition,
                                            std::span<const NodeId> batch, const Taxonomy& t,
                                            const PromptTemplates& templates = {}) {
  detail::require_batch(batch, t);
  PromptBundle b{PromptKind::kRetriever, {}, detail::candidate_names(batch, t), detail::arrow_paths(query, batch, t)};
  b.text = render_template(templates.retriever,
                           {{"query", std::string(query)},
                            {"root", t.name(t.root())},
                            {"candidate_list", detail::bullets(b.candidate_order)},
                            {"candidate_definitions", detail::candidate_definitions(batch, t)},
                            {"candidate_paths", detail::bullets(b.path_strings)},
                            {"query_definition", std::string(query_definition)},
                            {"hypernymy_examples", detail::bullets(hypernymy_examples(batch, t))}});
  return b;
}

// Alternatives list every batch member, the retrieved one included.
inline PromptBundle render_verifier_prompt(std::string_view query, std::string_view query_definition, NodeId retrieved,
                                           std::span<const NodeId> batch, const Taxonomy& t,
                                           const PromptTemplates& templates = {}) {
  detail::require_batch(batch, t);
  if (std::find(batch.begin(), batch.end(), retrieved) == batch.end()) {
    throw Error(ErrorCode::kInvalidArgument, "retrieved candidate '" + t.name(retrieved) + "' is not in the batch");
  }
  PromptBundle b{PromptKind::kVerifier, {}, detail::candidate_names(batch, t), detail::arrow_paths(query, batch, t)};
  b.text = render_template(templates.verifier,
                           {{"query", std::string(query)},
                            {"root", t.name(t.root())},
                            {"retrieved_path", arrow_path(query, retrieved, t)},
                            {"candidate_paths", detail::bullets(b.path_strings)},
                            {"candidate_definitions", detail::candidate_definitions(batch, t)},
                            {"query_definition", std::string(query_definition)},
                            {"hypernymy_examples", detail::bullets(hypernymy_examples(batch, t))}});
  return b;
}

}  // namespace taxexp
