#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ultrag/executor_wire.hpp"
#include "ultrag/kg_store.hpp"
#include "ultrag/query_dsl.hpp"

namespace ultrag {

// Ranks are 1-based; 0 marks a question whose gold never appears in the ranking.

double mrr(std::span<const std::size_t> best_ranks);
double hit_at_k(std::span<const std::size_t> best_ranks, std::size_t k);

/// Best (smallest) 1-based position of any gold id in a ranked score list, 0 if none.
std::size_t best_gold_rank(std::span<const WeightedId> ranked, std::span<const std::string> gold);

struct SetScores {
  double hit = 0.0;  // 1 when at least one prediction is gold
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Per-question set metrics. Gold must be nonempty.
SetScores set_scores(std::span<const std::string> predicted, std::span<const std::string> gold);

double hits_exact(std::span<const std::vector<std::string>> predicted, std::span<const std::vector<std::string>> gold);
double recall(std::span<const std::vector<std::string>> predicted, std::span<const std::vector<std::string>> gold);
double f1(std::span<const std::vector<std::string>> predicted, std::span<const std::vector<std::string>> gold);

struct RankReport {
  double mrr = 0.0;
  double hit1 = 0.0;
  double hit3 = 0.0;
  double hit10 = 0.0;
  std::size_t questions = 0;
};

struct SetReport {
  double hits = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t questions = 0;
};

RankReport rank_report(std::span<const std::size_t> best_ranks);

/// One evaluated question.
struct EvalRecord {
  std::string query_class;  // "" when no query was produced
  std::vector<std::string> predicted;
  std::vector<WeightedId> ranked;  // executor scores, best first
  std::vector<std::string> gold;
};

struct EvalReport {
  SetReport set;
  RankReport rank;
  /// Unweighted mean over classes.
  RankReport rank_class_average;
  std::map<std::string, RankReport> rank_by_class;
  std::map<std::string, SetReport> set_by_class;
  std::size_t excluded = 0;
  std::vector<std::string> warnings;
  bool label_matching = false;

  nlohmann::json to_json() const;
  /// Aligned-column text table.
  std::string to_table(bool per_class) const;
};

/// Lowercase with runs of whitespace and punctuation collapsed to one space.
std::string normalize_label(std::string_view text);

/// Questions with empty gold are excluded with a warning. With `labels`,
/// predictions and gold also match when their normalized labels agree, and
/// gold entries may be plain label strings.
EvalReport evaluate(std::span<const EvalRecord> records, const LabelTable* labels = nullptr);

class GroundTruthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ground-truth query for a proof subgraph rooted at `answer_root`. Nodes are
/// layered by breadth-first distance from the root, edges taken in either
/// direction. Each edge from a node to the next layer inwards is a projection
/// (`_inv` when the triple points outwards); outermost nodes become leaves and
/// nodes with several such edges become AND, children in adjacency order
/// (incoming edges first, then outgoing, each by relation and id).
Query gt_query_from_subgraph(const KnowledgeGraph& g, EntityId answer_root);

struct FlopsModel {
  std::uint64_t gnn_layers = 6;
  std::uint64_t gnn_hidden = 64;
  double llm_active_params = 5.1e9;
};

/// L * (2 E d + 4 d^2 N)
std::uint64_t gnn_flops(std::uint64_t nodes, std::uint64_t edges, std::uint64_t layers = 6, std::uint64_t hidden = 64);
/// 2 P_active (N + E + 1): prefill of N + E tokens plus one decoded token.
double llm_flops(std::uint64_t nodes, std::uint64_t edges, double active_params = 5.1e9);

}  // namespace ultrag
