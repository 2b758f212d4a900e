#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include "ultrag/fuzzy_exec.hpp"
#include "ultrag/kg_store.hpp"

namespace ultrag {

struct SepprConfig {
  double alpha = 0.85;
  std::size_t steps = 5;
  std::size_t top_k = 30000;
  /// Walk every triple in both directions. False restores plain forward diffusion.
  bool symmetric = true;
  /// Diffusion worker threads; results are bitwise identical for any count.
  std::size_t workers = 1;

  void validate() const;
};

class SepprError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Crisp seed entities (uniform start) or one fuzzy set per mention.
struct SeedSpec {
  std::variant<std::vector<EntityId>, std::vector<FuzzySet>> seeds;

  static SeedSpec crisp(std::vector<EntityId> ids) { return {std::move(ids)}; }
  static SeedSpec fuzzy(std::vector<FuzzySet> sets) { return {std::move(sets)}; }
  bool is_crisp() const { return std::holds_alternative<std::vector<EntityId>>(seeds); }
};

struct ScoredEntity {
  EntityId id;
  double score = 0.0;
  friend bool operator==(const ScoredEntity&, const ScoredEntity&) = default;
};

/// Starting distribution x0: uniform over crisp seeds, or the summed mention
/// probabilities renormalized to total mass 1.
std::vector<double> seppr_initial(const KnowledgeGraph& g, const SeedSpec& seeds);

/// Full score vector after cfg.steps teleporting diffusion steps.
std::vector<double> seppr_scores(const KnowledgeGraph& g, const SeedSpec& seeds, const SepprConfig& cfg);

/// Top-k entities with positive score, descending, ties by ascending id.
std::vector<ScoredEntity> seppr(const KnowledgeGraph& g, const SeedSpec& seeds, const SepprConfig& cfg);

/// Subgraph induced on the seppr() node set, pruned lowest-score-first to edge_cap.
KnowledgeGraph extract_subgraph(const KnowledgeGraph& g, const SeedSpec& seeds, const SepprConfig& cfg,
                                std::size_t edge_cap = kNoEdgeCap);

}  // namespace ultrag
