#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "taxexp/error.hpp"
#include "taxexp/text.hpp"

namespace taxexp {

inline constexpr std::uint32_t kDefaultDimension = 1u << 15;

struct FeatureVector {
  std::uint32_t dimension = kDefaultDimension;
  std::vector<std::pair<std::uint32_t, double>> entries;  // sorted by index, unique

  bool empty() const { return entries.empty(); }

  double norm() const {
    double s = 0;
    for (const auto& [i, v] : entries) s += v * v;
    return std::sqrt(s);
  }

  double dot(std::span<const double> dense) const {
    if (dense.size() != dimension) {
      throw Error(ErrorCode::kDimensionMismatch, "weights have " + std::to_string(dense.size()) +
                                                     " entries, features " + std::to_string(dimension));
    }
    double s = 0;
    for (const auto& [i, v] : entries) s += dense[i] * v;
    return s;
  }
};

inline double cosine(const FeatureVector& a, const FeatureVector& b) {
  if (a.dimension != b.dimension) throw Error(ErrorCode::kDimensionMismatch, "cosine of vectors of different dimension");
  double dot = 0;
  auto ia = a.entries.begin();
  auto ib = b.entries.begin();
  while (ia != a.entries.end() && ib != b.entries.end()) {
    if (ia->first < ib->first) {
      ++ia;
    } else if (ib->first < ia->first) {
      ++ib;
    } else {
      dot += ia->second * ib->second;
      ++ia;
      ++ib;
    }
  }
  const double na = a.norm(), nb = b.norm();
  return (na == 0 || nb == 0) ? 0.0 : dot / (na * nb);
}

enum class TokenKind { kWord, kName, kParentOf, kChildOf, kSeparator };

struct Token {
  TokenKind kind;
  std::string text;
  friend bool operator==(const Token&, const Token&) = default;
};

namespace detail {

constexpr bool is_word_byte(char c) {
  const auto u = static_cast<unsigned char>(c);
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || u >= 0x80;
}

inline bool starts_with_phrase(std::string_view s, std::size_t pos, std::string_view phrase) {
  if (s.substr(pos, phrase.size()) != phrase) return false;
  const auto end = pos + phrase.size();
  return end == s.size() || !is_word_byte(s[end]);
}

inline std::vector<std::string> words_of(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (is_word_byte(c)) {
      cur.push_back(ascii_lower(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline bool is_stop_word(std::string_view w) {
  static const std::set<std::string_view> kStop = {"a",  "an", "the", "of", "is",  "are", "and", "or",
                                                   "to", "in", "on",  "that", "which", "by", "for", "with",
                                                   "as", "it", "its", "be", "from", "at"};
  return w.size() < 2 || kStop.count(w) > 0;
}

inline std::uint32_t hash_feature(std::string_view feature, std::uint32_t dimension) {
  const auto h = fnv1a(feature);
  return static_cast<std::uint32_t>(h ^ (h >> 32)) & (dimension - 1);
}

}  // namespace detail

// Words are lowercased runs of alphanumerics; a double-quoted span is one name
// token (doubled quotes inside it are literal); relational phrases and the
// [SEP] marker get dedicated tokens.
inline std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == '"') {
      std::string name;
      ++i;
      while (i < text.size()) {
        if (text[i] == '"') {
          if (i + 1 < text.size() && text[i + 1] == '"') {
            name.push_back('"');
            i += 2;
            continue;
          }
          ++i;
          break;
        }
        name.push_back(text[i++]);
      }
      out.push_back({TokenKind::kName, normalize_name(name)});
    } else if (text.substr(i, 5) == "[SEP]") {
      out.push_back({TokenKind::kSeparator, "[SEP]"});
      i += 5;
    } else if (detail::is_word_byte(c)) {
      if (detail::starts_with_phrase(text, i, "is parent of")) {
        out.push_back({TokenKind::kParentOf, "<parent_of>"});
        i += 12;
        continue;
      }
      if (detail::starts_with_phrase(text, i, "is child of")) {
        out.push_back({TokenKind::kChildOf, "<child_of>"});
        i += 11;
        continue;
      }
      std::string word;
      while (i < text.size() && detail::is_word_byte(text[i])) word.push_back(ascii_lower(text[i++]));
      out.push_back({TokenKind::kWord, std::move(word)});
    } else {
      ++i;
    }
  }
  return out;
}

// Hashed, L2-normalized features of a (possibly definition-prefixed)
// verbalized path. Besides per-token features, text carrying a definition
// before [SEP] gets definition-word x anchor-word conjunctions and dense
// lexical-overlap signals between the definition and the path's names, so a
// linear scorer can relate a query to a candidate lineage.
inline FeatureVector featurize(std::string_view text, std::uint32_t dimension = kDefaultDimension) {
  if (dimension == 0 || (dimension & (dimension - 1)) != 0) {
    throw Error(ErrorCode::kInvalidArgument, "feature dimension must be a power of two");
  }
  FeatureVector fv;
  fv.dimension = dimension;
  std::vector<std::pair<std::uint32_t, double>> raw;
  auto add = [&](std::string_view feature, double value) {
    if (value != 0.0) raw.emplace_back(detail::hash_feature(feature, dimension), value);
  };

  const auto tokens = tokenize(text);
  std::size_t sep = tokens.size();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].kind == TokenKind::kSeparator) {
      sep = i;
      break;
    }
  }

  std::string_view last_relation = "<start>";
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& tok = tokens[i];
    switch (tok.kind) {
      case TokenKind::kWord:
        add("w:" + tok.text, 1.0);
        break;
      case TokenKind::kName:
        add("n:" + tok.text, 1.0);
        add(std::string("r:") + std::string(last_relation) + "|" + tok.text, 1.0);
        break;
      case TokenKind::kParentOf:
      case TokenKind::kChildOf:
        add(tok.text, 1.0);
        last_relation = tok.text;
        break;
      case TokenKind::kSeparator:
        add("<sep>", 1.0);
        last_relation = "<start>";
        break;
    }
  }

  if (sep < tokens.size()) {
    std::vector<std::string> def_sequence;
    std::set<std::string> def_words;
    for (std::size_t i = 0; i < sep; ++i) {
      if (tokens[i].kind != TokenKind::kWord) continue;
      def_sequence.push_back(tokens[i].text);
      if (!detail::is_stop_word(tokens[i].text)) def_words.insert(tokens[i].text);
    }
    std::vector<std::string> names;
    for (std::size_t i = sep + 1; i < tokens.size(); ++i) {
      if (tokens[i].kind == TokenKind::kName &&
          std::find(names.begin(), names.end(), tokens[i].text) == names.end()) {
        names.push_back(tokens[i].text);
      }
    }
    if (!names.empty() && !def_sequence.empty()) {
      const auto anchor_words = detail::words_of(names.front());
      std::set<std::string> anchor_set(anchor_words.begin(), anchor_words.end());
      const double per_pair = anchor_set.empty() ? 0.0 : 1.0 / static_cast<double>(anchor_set.size());
      for (const auto& d : def_words)
        for (const auto& a : anchor_set) add("x:" + d + "|" + a, per_pair);

      std::size_t overlap = 0;
      for (const auto& a : anchor_set) overlap += def_words.count(a);
      if (!anchor_set.empty()) add("<m:anchor>", 2.0 * static_cast<double>(overlap) / static_cast<double>(anchor_set.size()));

      if (!anchor_words.empty() && std::search(def_sequence.begin(), def_sequence.end(), anchor_words.begin(),
                                               anchor_words.end()) != def_sequence.end()) {
        add("<m:anchor_phrase>", 2.0);
      }

      std::size_t context_hits = 0;
      for (std::size_t i = 1; i < names.size(); ++i) {
        for (const auto& w : detail::words_of(names[i])) {
          if (def_words.count(w)) {
            ++context_hits;
            break;
          }
        }
      }
      if (names.size() > 1) add("<m:context>", static_cast<double>(context_hits) / static_cast<double>(names.size() - 1));
    }
  }

  std::sort(raw.begin(), raw.end());
  for (const auto& [idx, v] : raw) {
    if (!fv.entries.empty() && fv.entries.back().first == idx) {
      fv.entries.back().second += v;
    } else {
      fv.entries.emplace_back(idx, v);
    }
  }
  std::erase_if(fv.entries, [](const auto& e) { return e.second == 0.0; });
  const double n = fv.norm();
  if (n > 0) {
    for (auto& e : fv.entries) e.second /= n;
  }
  return fv;
}

}  // namespace taxexp
