#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "taxexp/error.hpp"
#include "taxexp/text.hpp"

namespace taxexp {

enum class NodeId : std::uint32_t {};

constexpr std::size_t index_of(NodeId id) { return static_cast<std::size_t>(id); }
constexpr NodeId node_at(std::size_t index) { return static_cast<NodeId>(index); }

struct ConceptNode {
  NodeId id;
  std::string name;
  std::string definition;
};

// Raw (child, parent) names as they appear in an edge file.
struct EdgeRecord {
  std::string child;
  std::string parent;
};

struct Edge {
  NodeId parent;
  NodeId child;
  friend bool operator==(const Edge&, const Edge&) = default;
};

struct Ego {
  std::optional<NodeId> parent;
  std::vector<NodeId> siblings;
  std::vector<NodeId> children;
};

enum class StepDirection { kStart, kDescend, kAscend };

struct EulerStep {
  NodeId node;
  StepDirection direction;
  friend bool operator==(const EulerStep&, const EulerStep&) = default;
};

struct EulerPath {
  NodeId anchor;
  std::vector<EulerStep> steps;
  std::vector<NodeId> node_set;  // sorted, distinct

  std::vector<NodeId> nodes() const {
    std::vector<NodeId> out;
    out.reserve(steps.size());
    for (const auto& s : steps) out.push_back(s.node);
    return out;
  }
};

// Immutable rooted hierarchy. The full edge set is kept (a DAG is accepted);
// lineage queries run on the canonical tree, where each non-root node keeps
// the first parent seen in edge order. Child lists follow edge order.
class Taxonomy {
 public:
  // Validates and builds. `names` must already be normalized.
  static Taxonomy from_parts(std::vector<std::string> names, std::vector<std::string> definitions,
                             const std::vector<Edge>& edges) {
    if (names.empty()) throw Error(ErrorCode::kEmptyTaxonomy, "taxonomy has no nodes");
    definitions.resize(names.size());

    Taxonomy t;
    t.names_ = std::move(names);
    t.definitions_ = std::move(definitions);
    const std::size_t n = t.names_.size();

    for (std::size_t i = 0; i < n; ++i) {
      if (t.names_[i].empty()) throw Error(ErrorCode::kInvalidArgument, "empty node name");
      if (!t.index_.emplace(t.names_[i], node_at(i)).second) {
        throw Error(ErrorCode::kDuplicateName, "duplicate node name '" + t.names_[i] + "'");
      }
    }

    std::vector<std::vector<NodeId>> out_edges(n);
    std::vector<int> in_degree(n, 0);
    std::unordered_set<std::uint64_t> seen;
    for (const auto& e : edges) {
      if (index_of(e.parent) >= n || index_of(e.child) >= n) {
        throw Error(ErrorCode::kUnknownNode, "edge refers to a node outside the taxonomy");
      }
      if (e.parent == e.child) {
        throw Error(ErrorCode::kCycleDetected, "self loop on '" + t.names_[index_of(e.child)] + "'");
      }
      const auto key = (static_cast<std::uint64_t>(e.parent) << 32) | static_cast<std::uint64_t>(e.child);
      if (!seen.insert(key).second) continue;
      t.edges_.push_back(e);
      out_edges[index_of(e.parent)].push_back(e.child);
      ++in_degree[index_of(e.child)];
    }

    // Kahn's algorithm over the full edge set.
    {
      std::vector<int> remaining = in_degree;
      std::vector<std::size_t> queue;
      for (std::size_t i = 0; i < n; ++i)
        if (remaining[i] == 0) queue.push_back(i);
      std::size_t visited = 0;
      while (visited < queue.size()) {
        auto u = queue[visited++];
        for (NodeId v : out_edges[u])
          if (--remaining[index_of(v)] == 0) queue.push_back(index_of(v));
      }
      if (visited != n) throw Error(ErrorCode::kCycleDetected, "edge relation contains a cycle");
    }

    std::vector<NodeId> roots;
    for (std::size_t i = 0; i < n; ++i)
      if (in_degree[i] == 0) roots.push_back(node_at(i));
    if (roots.empty()) throw Error(ErrorCode::kNoRoot, "no node without a parent");
    if (roots.size() > 1) {
      throw Error(ErrorCode::kMultipleRoots,
                  "nodes without a parent: '" + t.names_[index_of(roots[0])] + "', '" +
                      t.names_[index_of(roots[1])] + "'" + (roots.size() > 2 ? ", ..." : ""));
    }
    t.root_ = roots.front();

    t.parent_.assign(n, std::nullopt);
    t.children_.assign(n, {});
    t.has_out_edge_.assign(n, false);
    for (const auto& e : t.edges_) {
      t.has_out_edge_[index_of(e.parent)] = true;
      auto& p = t.parent_[index_of(e.child)];
      if (!p) {
        p = e.parent;
        t.children_[index_of(e.parent)].push_back(e.child);
      }
    }

    // Depth along canonical parents; acyclicity guarantees termination at root.
    t.depth_.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) t.compute_depth(node_at(i));
    t.max_depth_ = *std::max_element(t.depth_.begin(), t.depth_.end());
    return t;
  }

  std::size_t size() const { return names_.size(); }
  std::size_t edge_count() const { return edges_.size(); }
  NodeId root() const { return root_; }
  bool contains(NodeId id) const { return index_of(id) < names_.size(); }

  const std::string& name(NodeId id) const { return names_[checked(id)]; }
  const std::string& definition(NodeId id) const { return definitions_[checked(id)]; }
  ConceptNode node(NodeId id) const { return {id, name(id), definition(id)}; }

  std::optional<NodeId> find(std::string_view raw_name) const {
    auto it = index_.find(normalize_name(raw_name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  NodeId at(std::string_view raw_name) const {
    auto id = find(raw_name);
    if (!id) throw Error(ErrorCode::kUnknownNode, "unknown node '" + std::string(raw_name) + "'");
    return *id;
  }

  std::optional<NodeId> parent(NodeId id) const { return parent_[checked(id)]; }
  std::span<const NodeId> children(NodeId id) const { return children_[checked(id)]; }
  int depth(NodeId id) const { return depth_[checked(id)]; }
  int max_depth() const { return max_depth_; }
  const std::vector<Edge>& edges() const { return edges_; }

  // Nodes that are the parent of no edge; the root is never a leaf.
  std::vector<NodeId> leaves() const {
    std::vector<NodeId> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (!has_out_edge_[i] && node_at(i) != root_) out.push_back(node_at(i));
    return out;
  }

  std::vector<NodeId> ids() const {
    std::vector<NodeId> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = node_at(i);
    return out;
  }

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<std::string>& definitions() const { return definitions_; }

  friend bool operator==(const Taxonomy& a, const Taxonomy& b) {
    return a.names_ == b.names_ && a.definitions_ == b.definitions_ && a.edges_ == b.edges_ &&
           a.root_ == b.root_;
  }

 private:
  Taxonomy() = default;

  std::size_t checked(NodeId id) const {
    if (!contains(id)) {
      throw Error(ErrorCode::kUnknownNode, "node id " + std::to_string(index_of(id)) + " out of range");
    }
    return index_of(id);
  }

  int compute_depth(NodeId id) {
    auto& d = depth_[index_of(id)];
    if (d != 0) return d;
    const auto& p = parent_[index_of(id)];
    d = p ? compute_depth(*p) + 1 : 1;
    return d;
  }

  std::vector<std::string> names_;
  std::vector<std::string> definitions_;
  std::vector<Edge> edges_;
  std::unordered_map<std::string, NodeId> index_;
  std::vector<std::optional<NodeId>> parent_;
  std::vector<std::vector<NodeId>> children_;
  std::vector<bool> has_out_edge_;
  std::vector<int> depth_;
  int max_depth_ = 0;
  NodeId root_{};
};

using DefinitionMap = std::map<std::string, std::string>;

// Definitions keyed by raw names; two keys normalizing to the same name with
// different text are a DuplicateName.
inline std::unordered_map<std::string, std::string> normalize_definitions(const DefinitionMap& raw) {
  std::unordered_map<std::string, std::string> out;
  for (const auto& [name, text] : raw) {
    auto key = normalize_name(name);
    auto [it, inserted] = out.emplace(key, text);
    if (!inserted && it->second != text) {
      throw Error(ErrorCode::kDuplicateName, "conflicting definitions for '" + key + "'");
    }
  }
  return out;
}

inline Taxonomy load_taxonomy(const std::vector<EdgeRecord>& edge_records,
                              const DefinitionMap& definitions = {}) {
  if (edge_records.empty()) throw Error(ErrorCode::kEmptyTaxonomy, "no edge records");
  auto defs = normalize_definitions(definitions);

  std::vector<std::string> names;
  std::unordered_map<std::string, NodeId> ids;
  auto intern = [&](std::string_view raw) {
    auto name = normalize_name(raw);
    if (name.empty()) throw Error(ErrorCode::kInvalidArgument, "empty node name in edge record");
    auto [it, inserted] = ids.emplace(name, node_at(names.size()));
    if (inserted) names.push_back(name);
    return it->second;
  };

  std::vector<Edge> edges;
  edges.reserve(edge_records.size());
  for (const auto& r : edge_records) {
    NodeId child = intern(r.child);
    NodeId parent = intern(r.parent);
    edges.push_back({parent, child});
  }

  std::vector<std::string> node_defs(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (auto it = defs.find(names[i]); it != defs.end()) node_defs[i] = it->second;
  }
  return Taxonomy::from_parts(std::move(names), std::move(node_defs), edges);
}

inline Ego ego(const Taxonomy& t, NodeId n) {
  Ego out;
  out.parent = t.parent(n);
  if (out.parent) {
    for (NodeId s : t.children(*out.parent))
      if (s != n) out.siblings.push_back(s);
  }
  auto kids = t.children(n);
  out.children.assign(kids.begin(), kids.end());
  return out;
}

// [n, parent(n), ..., root]
inline std::vector<NodeId> path_to_root(const Taxonomy& t, NodeId n) {
  std::vector<NodeId> out{n};
  for (auto p = t.parent(n); p; p = t.parent(*p)) out.push_back(*p);
  return out;
}

inline int depth(const Taxonomy& t, NodeId n) { return t.depth(n); }

inline NodeId lca(const Taxonomy& t, NodeId a, NodeId b) {
  while (t.depth(a) > t.depth(b)) a = *t.parent(a);
  while (t.depth(b) > t.depth(a)) b = *t.parent(b);
  while (a != b) {
    a = *t.parent(a);
    b = *t.parent(b);
  }
  return a;
}

namespace detail {

inline void finalize_node_set(EulerPath& path) {
  path.node_set = path.nodes();
  std::sort(path.node_set.begin(), path.node_set.end());
  path.node_set.erase(std::unique(path.node_set.begin(), path.node_set.end()), path.node_set.end());
}

}  // namespace detail

// Revisiting walk: anchor up to root, back down to the anchor's parent, out to
// each sibling and back, down to the anchor, then out to each child (returning
// between children, ending at the last one). `detached` is treated as absent
// from sibling/child lists (used when the node is the query being trained on).
inline EulerPath euler_tour(const Taxonomy& t, NodeId anchor,
                            std::optional<NodeId> detached = std::nullopt) {
  EulerPath path;
  path.anchor = anchor;
  auto& steps = path.steps;
  steps.push_back({anchor, StepDirection::kStart});

  auto keep = [&](NodeId id) { return !detached || id != *detached; };

  if (auto parent = t.parent(anchor)) {
    auto ancestors = path_to_root(t, anchor);  // [anchor, parent, ..., root]
    for (std::size_t i = 1; i < ancestors.size(); ++i) steps.push_back({ancestors[i], StepDirection::kAscend});
    for (std::size_t i = ancestors.size() - 1; i-- > 1;) steps.push_back({ancestors[i], StepDirection::kDescend});
    for (NodeId s : t.children(*parent)) {
      if (s == anchor || !keep(s)) continue;
      steps.push_back({s, StepDirection::kDescend});
      steps.push_back({*parent, StepDirection::kAscend});
    }
    steps.push_back({anchor, StepDirection::kDescend});
  }

  std::vector<NodeId> kids;
  for (NodeId c : t.children(anchor))
    if (keep(c)) kids.push_back(c);
  for (std::size_t i = 0; i < kids.size(); ++i) {
    steps.push_back({kids[i], StepDirection::kDescend});
    if (i + 1 < kids.size()) steps.push_back({anchor, StepDirection::kAscend});
  }

  detail::finalize_node_set(path);
  return path;
}

struct Query {
  std::string name;
  std::string definition;
  std::optional<std::string> gold_parent;
};

struct SplitResult {
  Taxonomy train;
  std::vector<Query> queries;
};

// Holds out floor(fraction * |leaves|) seeded-uniform leaves as queries.
inline SplitResult split_test_leaves(const Taxonomy& t, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "split fraction must be in (0, 1)");
  }
  auto leaves = t.leaves();
  if (leaves.empty()) throw Error(ErrorCode::kEmptyTaxonomy, "taxonomy has no leaves to hold out");
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(leaves.size()) + 1e-9));
  if (count < 1) {
    throw Error(ErrorCode::kInvalidArgument, "fraction * |leaves| < 1 (" + std::to_string(leaves.size()) + " leaves)");
  }

  SeededRng rng(seed);
  rng.partial_shuffle(leaves, count);
  leaves.resize(count);
  std::sort(leaves.begin(), leaves.end());

  std::vector<bool> removed(t.size(), false);
  std::vector<Query> queries;
  for (NodeId leaf : leaves) {
    removed[index_of(leaf)] = true;
    Query q{t.name(leaf), t.definition(leaf), std::nullopt};
    if (auto p = t.parent(leaf)) q.gold_parent = t.name(*p);
    queries.push_back(std::move(q));
  }

  std::vector<std::string> names, defs;
  std::vector<std::size_t> remap(t.size(), 0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (removed[i]) continue;
    remap[i] = names.size();
    names.push_back(t.names()[i]);
    defs.push_back(t.definitions()[i]);
  }
  std::vector<Edge> edges;
  for (const auto& e : t.edges()) {
    if (removed[index_of(e.child)]) continue;
    edges.push_back({node_at(remap[index_of(e.parent)]), node_at(remap[index_of(e.child)])});
  }
  return {Taxonomy::from_parts(std::move(names), std::move(defs), edges), std::move(queries)};
}

// ---------------------------------------------------------------------------
// Files

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write '" + path.string() + "'");
  out << content;
}

// Calls fn(line_number, line) for each non-blank, non-comment line.
template <typename Fn>
void for_each_data_line(std::string_view content, Fn&& fn) {
  std::size_t line_no = 0;
  for (auto line : split(content, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    auto stripped = trim(line);
    if (stripped.empty() || stripped.front() == '#') continue;
    fn(line_no, line);
  }
}

}  // namespace detail

inline std::vector<EdgeRecord> parse_edges(std::string_view content, std::string_view source = "<edges>") {
  std::vector<EdgeRecord> out;
  detail::for_each_data_line(content, [&](std::size_t line_no, std::string_view line) {
    auto fields = split(line, '\t');
    if (fields.size() < 2 || trim(fields[0]).empty() || trim(fields[1]).empty()) {
      throw Error(ErrorCode::kIoError,
                  std::string(source) + ":" + std::to_string(line_no) + ": expected child<TAB>parent");
    }
    out.push_back({std::string(fields[0]), std::string(fields[1])});
  });
  return out;
}

inline DefinitionMap parse_definitions(std::string_view content, std::string_view source = "<definitions>") {
  DefinitionMap out;
  detail::for_each_data_line(content, [&](std::size_t line_no, std::string_view line) {
    auto tab = line.find('\t');
    if (tab == std::string_view::npos || trim(line.substr(0, tab)).empty()) {
      throw Error(ErrorCode::kIoError,
                  std::string(source) + ":" + std::to_string(line_no) + ": expected term<TAB>definition");
    }
    std::string term(line.substr(0, tab));
    std::string text(line.substr(tab + 1));
    auto [it, inserted] = out.emplace(term, text);
    if (!inserted && it->second != text) {
      throw Error(ErrorCode::kDuplicateName, "term '" + term + "' defined twice in " + std::string(source));
    }
  });
  return out;
}

inline Taxonomy load_taxonomy_files(const std::filesystem::path& edges_path,
                                    const std::optional<std::filesystem::path>& definitions_path = std::nullopt) {
  auto edges = parse_edges(detail::read_file(edges_path), edges_path.string());
  DefinitionMap defs;
  if (definitions_path) defs = parse_definitions(detail::read_file(*definitions_path), definitions_path->string());
  return load_taxonomy(edges, defs);
}

// Edges in stored order (child<TAB>parent) and every node's definition.
inline std::string serialize_edges(const Taxonomy& t) {
  std::string out;
  for (const auto& e : t.edges()) out += t.name(e.child) + "\t" + t.name(e.parent) + "\n";
  return out;
}

inline std::string serialize_definitions(const Taxonomy& t) {
  std::string out;
  for (NodeId id : t.ids()) out += t.name(id) + "\t" + t.definition(id) + "\n";
  return out;
}

inline void write_taxonomy_files(const Taxonomy& t, const std::filesystem::path& edges_path,
                                 const std::filesystem::path& definitions_path) {
  detail::write_file(edges_path, serialize_edges(t));
  detail::write_file(definitions_path, serialize_definitions(t));
}

struct NamedTaxonomy {
  std::string name;
  Taxonomy taxonomy;
};

// One taxonomy per `<name>.edges.tsv`, paired with `<name>.definitions.tsv`
// when present. Sorted by name.
inline std::vector<NamedTaxonomy> load_taxonomy_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  constexpr std::string_view kEdgeSuffix = ".edges.tsv";
  if (!fs::is_directory(dir)) throw Error(ErrorCode::kIoError, "'" + dir.string() + "' is not a directory");
  std::vector<std::string> stems;
  for (const auto& entry : fs::directory_iterator(dir)) {
    auto file = entry.path().filename().string();
    if (file.size() > kEdgeSuffix.size() && file.ends_with(kEdgeSuffix)) {
      stems.push_back(file.substr(0, file.size() - kEdgeSuffix.size()));
    }
  }
  std::sort(stems.begin(), stems.end());
  std::vector<NamedTaxonomy> out;
  for (const auto& stem : stems) {
    auto defs = dir / (stem + ".definitions.tsv");
    out.push_back({stem, load_taxonomy_files(dir / (stem + std::string(kEdgeSuffix)),
                                             fs::exists(defs) ? std::optional(defs) : std::nullopt)});
  }
  return out;
}

// Query file: query<TAB>gold parent (may be empty)<TAB>definition
inline std::string serialize_queries(const std::vector<Query>& queries) {
  std::string out;
  for (const auto& q : queries) out += q.name + "\t" + q.gold_parent.value_or("") + "\t" + q.definition + "\n";
  return out;
}

inline std::vector<Query> parse_queries(std::string_view content, std::string_view source = "<queries>") {
  std::vector<Query> out;
  detail::for_each_data_line(content, [&](std::size_t line_no, std::string_view line) {
    auto first = line.find('\t');
    if (first == std::string_view::npos || trim(line.substr(0, first)).empty()) {
      throw Error(ErrorCode::kIoError,
                  std::string(source) + ":" + std::to_string(line_no) + ": expected query<TAB>gold<TAB>definition");
    }
    Query q;
    q.name = std::string(trim(line.substr(0, first)));
    auto rest = line.substr(first + 1);
    auto second = rest.find('\t');
    auto gold = trim(rest.substr(0, second));
    if (!gold.empty()) q.gold_parent = normalize_name(gold);
    if (second != std::string_view::npos) q.definition = std::string(rest.substr(second + 1));
    out.push_back(std::move(q));
  });
  return out;
}

}  // namespace taxexp
