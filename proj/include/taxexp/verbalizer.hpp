#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "taxexp/taxonomy.hpp"

namespace taxexp {

inline constexpr std::string_view kSeparator = " [SEP] ";
inline constexpr std::string_view kParentOf = " is parent of ";
inline constexpr std::string_view kChildOf = " is child of ";

struct VerbalizedPath {
  std::string text;
  bool includes_query_definition = false;
  NodeId source_anchor{};
  std::optional<std::string> query;
};

// ASCII double quotes; embedded quotes are doubled.
inline std::string quote_name(std::string_view name) {
  std::string out;
  out.reserve(name.size() + 2);
  out.push_back('"');
  for (char c : name) {
    out.push_back(c);
    if (c == '"') out.push_back('"');
  }
  out.push_back('"');
  return out;
}

inline VerbalizedPath verbalize(const EulerPath& path, const Taxonomy& t) {
  if (path.steps.empty() || path.steps.front().direction != StepDirection::kStart) {
    throw Error(ErrorCode::kInvalidArgument, "euler path must start with its anchor");
  }
  VerbalizedPath out;
  out.source_anchor = path.anchor;
  for (const auto& step : path.steps) {
    switch (step.direction) {
      case StepDirection::kStart:
        break;
      case StepDirection::kDescend:
        out.text.append(kParentOf);
        break;
      case StepDirection::kAscend:
        out.text.append(kChildOf);
        break;
    }
    out.text.append(quote_name(t.name(step.node)));
  }
  return out;
}

inline VerbalizedPath verbalize_with_query(std::string_view query_definition, const EulerPath& path,
                                           const Taxonomy& t, std::optional<std::string> query = std::nullopt) {
  auto out = verbalize(path, t);
  out.text = std::string(query_definition) + std::string(kSeparator) + out.text;
  out.includes_query_definition = true;
  out.query = std::move(query);
  return out;
}

}  // namespace taxexp
