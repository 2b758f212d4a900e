#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace ultrag {

/// Relation token as written in a query: "P<digits>" with optional "_inv".
struct RelationToken {
  std::string base;
  bool inverse = false;

  static RelationToken parse(std::string_view token);  // throws std::invalid_argument
  std::string str() const { return inverse ? base + "_inv" : base; }
  friend bool operator==(const RelationToken&, const RelationToken&) = default;
};

/// Leaf anchor: a resolved entity id ("Q189") or a free-text mention to be linked.
struct EntityRef {
  enum class Kind { Entity, Mention };
  Kind kind = Kind::Entity;
  std::string text;

  static EntityRef entity(std::string id) { return {Kind::Entity, std::move(id)}; }
  static EntityRef mention(std::string text) { return {Kind::Mention, std::move(text)}; }
  bool is_mention() const { return kind == Kind::Mention; }
  friend bool operator==(const EntityRef&, const EntityRef&) = default;
};

/// Query tree.
///
///   Leaf          anchor -> r1 -> ... -> rn
///   Chain         (child) -> r1 -> ... -> rn, child is always an Intersection
///   Intersection  AND(c1, ..., cn), n >= 2
///
/// Chains are kept normalized: a chain never wraps a leaf or another chain,
/// and consecutive projections are merged into one relation list.
struct Query {
  enum class Kind { Leaf, Chain, Intersection };

  Kind kind = Kind::Leaf;
  EntityRef anchor;
  std::vector<RelationToken> relations;
  std::vector<Query> children;

  static Query leaf(EntityRef anchor, std::vector<RelationToken> relations);
  static Query intersection(std::vector<Query> children);
  /// Appends projections to q. Leaves and chains absorb them; intersections get wrapped.
  static Query project(Query q, std::vector<RelationToken> relations);

  std::size_t num_leaves() const;
  /// Leaf anchors in left-to-right order.
  std::vector<EntityRef> leaves() const;
  /// Longest root-to-leaf count of projections.
  std::size_t depth() const;

  friend bool operator==(const Query&, const Query&) = default;
};

/// Ordinal of a mention leaf within its query, left to right.
struct Mention {
  std::string text;
  std::size_t leaf_index = 0;
  friend bool operator==(const Mention&, const Mention&) = default;
};

std::vector<Mention> mentions_of(const Query& q);

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t offset, const std::string& what)
      : std::runtime_error("at byte " + std::to_string(offset) + ": " + what), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

enum class QueryFormat { Dsl, BetaE };

/// Parses the arrow DSL: `E -> R`, `Q -> R`, `AND(Q, Q, ...)`. Mentions are
/// written in angle brackets: `<deep learning> -> P2_inv`.
Query parse_dsl(std::string_view text);
/// Canonical form, e.g. "AND(Q189 -> P1_inv, Q192 -> P2_inv) -> P4".
std::string serialize_dsl(const Query& q);

/// Parses the nested-tuple BetaE form: `(E, (R,))`, `(Q, (R,))`, `(Q, Q)`.
Query parse_betae(std::string_view text);
/// Throws std::invalid_argument for intersections with more than two children.
std::string serialize_betae(const Query& q);
/// BetaE string to canonical DSL.
std::string betae_to_dsl(std::string_view betae);

Query parse_query(std::string_view text, QueryFormat format);

/// Maximum parenthesis nesting of the surface string. The string must parse.
std::size_t max_nesting_depth(std::string_view text, QueryFormat format);

/// Structure class such as "(1)(1)" or "((1)(1))": bracket numbers count
/// projections, concatenation is intersection.
std::string query_class(const Query& q);

/// Kind-tagged JSON form used on the executor wire:
///   {"kind":"leaf","anchor":{"entity":"Q1"},"relations":["P1"]}
///   {"kind":"chain","child":{...},"relations":["P4"]}
///   {"kind":"and","children":[...]}
nlohmann::json query_to_json(const Query& q);
Query query_from_json(const nlohmann::json& j);  // throws std::invalid_argument

}  // namespace ultrag
