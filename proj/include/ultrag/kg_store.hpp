#pragma once

#include <cstdint>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <vector>

namespace ultrag {

/// Dense internal entity index. External form is "Q<digits>".
struct EntityId {
  std::uint32_t value = 0;
  friend constexpr auto operator<=>(EntityId, EntityId) = default;
};

/// Base relation index plus direction. External form is "P<digits>" or "P<digits>_inv".
struct RelationRef {
  std::uint32_t base = 0;
  bool inverse = false;

  constexpr RelationRef inverted() const { return {base, !inverse}; }
  friend constexpr auto operator<=>(RelationRef, RelationRef) = default;
};

struct Triple {
  EntityId head;
  std::uint32_t rel = 0;
  EntityId tail;
  friend constexpr auto operator<=>(const Triple&, const Triple&) = default;
};

/// One adjacency entry: the relation and the entity at the other end.
struct Neighbor {
  std::uint32_t rel = 0;
  EntityId other;
  friend constexpr auto operator<=>(const Neighbor&, const Neighbor&) = default;
};

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Error raised while reading a triple or label file. `line()` is 1-based.
class IngestError : public GraphError {
 public:
  IngestError(std::size_t line, const std::string& what)
      : GraphError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

enum class IdScheme {
  External,  // Q<digits> / P<digits> tokens
  Integer,   // raw non-negative integers, mapped to Q<n> / P<n>
};

IdScheme parse_id_scheme(std::string_view name);

bool is_entity_token(std::string_view s);
bool is_relation_token(std::string_view s);  // base form only, no _inv

/// Immutable directed multigraph of (head, relation, tail) triples.
///
/// Adjacency is stored as two CSR arrays: forward (head -> (rel, tail)) and
/// inverse (tail -> (rel, head)). Each row is sorted by (rel, other), so the
/// neighbors under one relation form a contiguous range.
class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;

  /// Builds a graph from external ids. Triples are deduplicated. Entity ids
  /// are assigned in `entities` order, then in order of first appearance.
  static KnowledgeGraph from_external(
      std::span<const std::string> entities,
      std::span<const std::string> relations,
      std::span<const std::tuple<std::string, std::string, std::string>> triples);

  /// Builds from internal triples over explicit vocabularies.
  static KnowledgeGraph from_triples(std::vector<std::string> entity_names,
                                     std::vector<std::string> relation_names,
                                     std::vector<Triple> triples);

  std::size_t num_entities() const { return entity_names_.size(); }
  std::size_t num_relations() const { return relation_names_.size(); }
  std::size_t num_triples() const { return triples_.size(); }

  /// Sorted by (head, rel, tail), deduplicated.
  std::span<const Triple> triples() const { return triples_; }

  std::span<const Neighbor> out_edges(EntityId e) const;
  std::span<const Neighbor> in_edges(EntityId e) const;
  /// Neighbors of `e` along `r`; inverse relations walk the inverse adjacency.
  std::span<const Neighbor> neighbors(EntityId e, RelationRef r) const;

  std::uint32_t out_degree(EntityId e) const;
  std::uint32_t in_degree(EntityId e) const;

  const std::string& entity_name(EntityId e) const { return entity_names_.at(e.value); }
  std::string relation_name(RelationRef r) const;
  const std::string& base_relation_name(std::uint32_t rel) const { return relation_names_.at(rel); }
  std::span<const std::string> entity_names() const { return entity_names_; }
  std::span<const std::string> relation_names() const { return relation_names_; }

  std::optional<EntityId> find_entity(std::string_view external) const;
  /// Resolves "P<digits>" or "P<digits>_inv" against the relation vocabulary.
  std::optional<RelationRef> find_relation(std::string_view external) const;

  /// Number of triples per base relation, indexed by relation id.
  std::vector<std::size_t> relation_frequencies() const;

  /// Entity ids of the parent graph, when this graph was induced from one.
  std::span<const EntityId> parent_ids() const { return parent_ids_; }

  friend KnowledgeGraph induce_subgraph(const KnowledgeGraph&, std::span<const EntityId>,
                                        std::span<const double>, std::size_t);

 private:
  void build_index();

  std::vector<std::string> entity_names_;
  std::vector<std::string> relation_names_;
  std::unordered_map<std::string, std::uint32_t> entity_lookup_;
  std::unordered_map<std::string, std::uint32_t> relation_lookup_;
  std::vector<Triple> triples_;
  std::vector<std::uint64_t> fwd_offsets_;
  std::vector<Neighbor> fwd_;
  std::vector<std::uint64_t> inv_offsets_;
  std::vector<Neighbor> inv_;
  std::vector<EntityId> parent_ids_;
};

inline constexpr std::size_t kNoEdgeCap = std::numeric_limits<std::size_t>::max();

/// Subgraph induced on `nodes`. When the induced edge count exceeds
/// `edge_cap`, nodes are dropped in ascending `scores` order (ties by
/// ascending id) until it fits. `scores` is parallel to `nodes`; empty means
/// all-equal. Entities are re-indexed densely in `nodes` order and the
/// result's parent_ids() maps back. The relation vocabulary is kept whole.
KnowledgeGraph induce_subgraph(const KnowledgeGraph& g, std::span<const EntityId> nodes,
                               std::span<const double> scores = {},
                               std::size_t edge_cap = kNoEdgeCap);

KnowledgeGraph read_triples(std::istream& in, IdScheme scheme = IdScheme::External);
KnowledgeGraph ingest_triples(const std::string& path, IdScheme scheme = IdScheme::External);
void write_triples(const KnowledgeGraph& g, std::ostream& out);

/// Binary snapshot: little-endian, fixed width.
///   "UKGS" | u32 version | u64 entities | u64 relations | u64 triples
///   triples as u32 head[], u32 rel[], u32 tail[] (sorted)
///   entity names, relation names: u32 length + bytes each
void write_snapshot(const KnowledgeGraph& g, std::ostream& out);
KnowledgeGraph read_snapshot(std::istream& in);
void save_snapshot(const KnowledgeGraph& g, const std::string& path);
KnowledgeGraph load_snapshot(const std::string& path);

/// Loads a snapshot if the file starts with the snapshot magic, a triple file otherwise.
KnowledgeGraph load_graph(const std::string& path, IdScheme scheme = IdScheme::External);

inline constexpr std::string_view kUnlabeled = "<unlabeled>";

class LabelTable {
 public:
  void set(std::string id, std::string label);
  /// Label for an external id ("Q189", "P1", "P1_inv"), or kUnlabeled.
  /// Inverse relations fall back to "<base label> (inverse)".
  std::string lookup(std::string_view id) const;
  bool contains(std::string_view id) const;
  std::size_t size() const { return labels_.size(); }

  static LabelTable read(std::istream& in);
  static LabelTable load(const std::string& path);
  void write(std::ostream& out) const;

 private:
  std::unordered_map<std::string, std::string> labels_;
};

}  // namespace ultrag
