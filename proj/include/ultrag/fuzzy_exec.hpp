#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ultrag/kg_store.hpp"
#include "ultrag/query_dsl.hpp"

namespace ultrag {

struct Membership {
  EntityId id;
  double value = 0.0;
  friend bool operator==(const Membership&, const Membership&) = default;
};

class FuzzyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Membership function over entity ids of one graph. Values lie in [0,1];
/// absent entries are 0 and zeros are never stored. Storage switches from a
/// sorted sparse list to a dense vector once support exceeds 10% of the universe.
class FuzzySet {
 public:
  static constexpr double kDenseThreshold = 0.10;

  explicit FuzzySet(std::size_t universe_size = 0) : universe_(universe_size) {}

  /// Indicator of `members` (value 1).
  static FuzzySet crisp(std::size_t universe_size, std::span<const EntityId> members);
  /// Entries may be unsorted; duplicates, out-of-range ids or values outside [0,1] throw.
  static FuzzySet from_entries(std::size_t universe_size, std::vector<Membership> entries);
  static FuzzySet from_dense(std::vector<double> values);

  double operator[](EntityId e) const;
  std::size_t universe_size() const { return universe_; }
  std::size_t support_size() const { return support_; }
  bool empty() const { return support_ == 0; }
  bool is_dense() const { return dense_; }
  double max_value() const;
  bool is_crisp() const;

  /// Nonzero memberships in ascending id order.
  std::vector<Membership> entries() const;
  std::vector<double> to_dense() const;

  template <typename Fn>
  void for_each(Fn&& fn) const {
    if (dense_) {
      for (std::size_t i = 0; i < values_.size(); ++i)
        if (values_[i] != 0.0) fn(EntityId{static_cast<std::uint32_t>(i)}, values_[i]);
    } else {
      for (const auto& m : sparse_) fn(m.id, m.value);
    }
  }

  friend bool operator==(const FuzzySet& a, const FuzzySet& b) {
    return a.universe_ == b.universe_ && a.entries() == b.entries();
  }

 private:
  void settle();

  std::size_t universe_ = 0;
  std::size_t support_ = 0;
  bool dense_ = false;
  std::vector<Membership> sparse_;
  std::vector<double> values_;
};

/// t-norm pair for projection aggregation and intersection.
///   Godel:   projection max, intersection min
///   Product: projection probabilistic sum, intersection product
enum class Semantics { Godel, Product };

Semantics parse_semantics(std::string_view name);
std::string_view semantics_name(Semantics s);

/// result[v] = max over triples (u, r, v) of x[u]; inverse relations walk tail -> head.
FuzzySet project(const KnowledgeGraph& g, const FuzzySet& x, RelationRef r, Semantics sem = Semantics::Godel);
/// Resolves the relation token against g. Unknown relations give an empty set
/// and append a note to `diagnostics` when provided.
FuzzySet project(const KnowledgeGraph& g, const FuzzySet& x, const RelationToken& r,
                 Semantics sem = Semantics::Godel, std::vector<std::string>* diagnostics = nullptr);

/// Elementwise t-norm of two or more sets over the same universe.
FuzzySet intersect(std::span<const FuzzySet> xs, Semantics sem = Semantics::Godel);

enum class ExecutorKind { Symbolic, Neural };

struct ExecutionResult {
  FuzzySet scores;
  std::vector<FuzzySet> per_leaf_inputs;
  ExecutorKind executor = ExecutorKind::Symbolic;
  std::string executor_tag;
  std::vector<std::string> diagnostics;
};

class ExecutionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bottom-up evaluation: leaves take their bound set (left to right), each
/// projection applies project(), AND applies intersect().
ExecutionResult execute(const KnowledgeGraph& g, const Query& q, std::span<const FuzzySet> leaf_inputs,
                        Semantics sem = Semantics::Godel);

/// Executor contract shared by the local symbolic engine and remote backends.
class QueryExecutor {
 public:
  virtual ~QueryExecutor() = default;
  virtual ExecutionResult execute(const KnowledgeGraph& g, const Query& q,
                                  std::span<const FuzzySet> leaf_inputs) const = 0;
  virtual std::string tag() const = 0;
};

class SymbolicExecutor final : public QueryExecutor {
 public:
  explicit SymbolicExecutor(Semantics sem = Semantics::Godel) : sem_(sem) {}
  ExecutionResult execute(const KnowledgeGraph& g, const Query& q,
                          std::span<const FuzzySet> leaf_inputs) const override;
  std::string tag() const override { return "symbolic"; }

 private:
  Semantics sem_;
};

/// k highest memberships, descending value, ties by ascending id.
std::vector<Membership> top_k(const FuzzySet& x, std::size_t k);

/// 1-based rank of each answer under descending value, ascending id. Entities
/// with membership 0 rank after all positive ones, ordered by id.
std::vector<std::size_t> rank_metric_input(const FuzzySet& x, std::span<const EntityId> answers);

}  // namespace ultrag
