#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "taxexp/taxonomy.hpp"

namespace taxexp::fixtures {

inline std::filesystem::path source_dir() { return TAXEXP_SOURCE_DIR; }
inline std::filesystem::path data_dir() { return source_dir() / "data"; }

// environment -> pollution -> {air, soil, water pollution};
// water pollution -> {marine, chemical pollution}
inline Taxonomy water_pollution_taxonomy() {
  const auto dir = data_dir() / "fig6";
  return load_taxonomy_files(dir / "environment.edges.tsv", dir / "environment.definitions.tsv");
}

inline Taxonomy arctic_taxonomy() {
  const auto dir = data_dir() / "arctic";
  return load_taxonomy_files(dir / "environment.edges.tsv", dir / "environment.definitions.tsv");
}

inline Query arctic_query() {
  return parse_queries(detail::read_file(data_dir() / "arctic" / "queries.tsv")).at(0);
}

inline std::vector<NodeId> arctic_batch(const Taxonomy& t) {
  return {t.at("geophysical environment"), t.at("ocean"), t.at("wild mammal"), t.at("animal life"),
          t.at("climatic zone")};
}

inline std::string read_text(const std::filesystem::path& p) { return detail::read_file(p); }

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("taxexp-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Random tree over `n` nodes: node i > 0 hangs under a uniform earlier node.
inline Taxonomy random_tree(std::size_t n, SeededRng& rng) {
  std::vector<std::string> names;
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    names.push_back("n" + std::to_string(i));
    if (i > 0) edges.push_back({node_at(rng.uniform_index(i)), node_at(i)});
  }
  return Taxonomy::from_parts(names, std::vector<std::string>(n), edges);
}

}  // namespace taxexp::fixtures
