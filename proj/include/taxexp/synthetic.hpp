#pragma once

#include <array>
#include <set>
#include <string>
#include <vector>

#include "taxexp/error.hpp"
#include "taxexp/taxonomy.hpp"
#include "taxexp/text.hpp"

namespace taxexp {

struct SyntheticOptions {
  std::size_t nodes = 50;
  int depth = 5;  // root has depth 1
  std::uint64_t seed = 7;
};

// Seeded random tree with pronounceable made-up names. Each definition names
// the node's parent and a trait, so a definition-aware ranker has signal and a
// bag-of-words one cannot cheat on the node's own name.
inline Taxonomy generate_synthetic_taxonomy(const SyntheticOptions& opt = {}) {
  if (opt.depth < 2) throw Error(ErrorCode::kInvalidArgument, "synthetic depth must be >= 2");
  if (opt.nodes < static_cast<std::size_t>(opt.depth)) {
    throw Error(ErrorCode::kInvalidArgument, "need at least one node per level");
  }
  SeededRng rng(opt.seed);
  static constexpr std::array<std::string_view, 14> kOnsets = {"b", "d", "f", "g", "k", "l", "m",
                                                               "n", "p", "r", "s", "t", "v", "z"};
  static constexpr std::array<std::string_view, 5> kVowels = {"a", "e", "i", "o", "u"};
  static constexpr std::array<std::string_view, 12> kTraits = {
      "bright coloring", "nocturnal habits", "dense clusters", "slow growth",    "coastal range", "long lifespan",
      "soft texture",    "rapid spread",     "deep roots",     "seasonal cycles", "sharp edges",  "warm climates"};
  static constexpr std::array<std::string_view, 3> kTemplates = {
      "{n} is a kind of {p} known for {t}", "a {n} is a {p} distinguished by {t}",
      "{n} refers to any {p} with {t}"};

  std::set<std::string> used;
  auto fresh_name = [&] {
    for (;;) {
      std::string w;
      const auto syllables = 2 + rng.uniform_index(2);
      for (std::uint64_t s = 0; s < syllables; ++s) {
        w += kOnsets[rng.uniform_index(kOnsets.size())];
        w += kVowels[rng.uniform_index(kVowels.size())];
      }
      if (used.insert(w).second) return w;
    }
  };
  auto fill = [](std::string_view tmpl, const std::string& n, const std::string& p, std::string_view t) {
    std::string out;
    for (std::size_t i = 0; i < tmpl.size();) {
      if (tmpl.substr(i, 3) == "{n}") {
        out += n;
        i += 3;
      } else if (tmpl.substr(i, 3) == "{p}") {
        out += p;
        i += 3;
      } else if (tmpl.substr(i, 3) == "{t}") {
        out += t;
        i += 3;
      } else {
        out += tmpl[i++];
      }
    }
    return out;
  };

  std::vector<std::string> names{fresh_name()};
  std::vector<std::string> defs{names[0] + " is the most general category of this collection"};
  std::vector<int> depth{1};
  std::vector<Edge> edges;
  auto add = [&](std::size_t parent) {
    const auto id = names.size();
    names.push_back(fresh_name());
    depth.push_back(depth[parent] + 1);
    const auto& tmpl = kTemplates[rng.uniform_index(kTemplates.size())];
    defs.push_back(fill(tmpl, names[id], names[parent], kTraits[rng.uniform_index(kTraits.size())]));
    edges.push_back({node_at(parent), node_at(id)});
  };

  // A spine guarantees the requested depth; the rest attach below the
  // deepest level at random.
  for (int level = 1; level < opt.depth; ++level) add(names.size() - 1);
  while (names.size() < opt.nodes) {
    std::vector<std::size_t> open;
    for (std::size_t i = 0; i < names.size(); ++i)
      if (depth[i] < opt.depth) open.push_back(i);
    add(open[rng.uniform_index(open.size())]);
  }
  return Taxonomy::from_parts(std::move(names), std::move(defs), edges);
}

}  // namespace taxexp
