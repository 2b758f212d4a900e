#include "ultrag/eval.hpp"

#include <algorithm>
#include <cctype>
#include <optional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace ultrag {

double mrr(std::span<const std::size_t> best_ranks) {
  if (best_ranks.empty()) return 0.0;
  double acc = 0.0;
  for (auto r : best_ranks)
    if (r > 0) acc += 1.0 / static_cast<double>(r);
  return acc / static_cast<double>(best_ranks.size());
}

double hit_at_k(std::span<const std::size_t> best_ranks, std::size_t k) {
  if (best_ranks.empty()) return 0.0;
  std::size_t hits = 0;
  for (auto r : best_ranks) hits += (r > 0 && r <= k);
  return static_cast<double>(hits) / static_cast<double>(best_ranks.size());
}

std::size_t best_gold_rank(std::span<const WeightedId> ranked, std::span<const std::string> gold) {
  std::unordered_set<std::string> g(gold.begin(), gold.end());
  for (std::size_t i = 0; i < ranked.size(); ++i)
    if (g.count(ranked[i].first)) return i + 1;
  return 0;
}

SetScores set_scores(std::span<const std::string> predicted, std::span<const std::string> gold) {
  std::unordered_set<std::string> g(gold.begin(), gold.end());
  std::unordered_set<std::string> p(predicted.begin(), predicted.end());
  std::size_t tp = 0;
  for (const auto& x : p) tp += g.count(x);
  SetScores s;
  s.hit = tp > 0 ? 1.0 : 0.0;
  s.precision = p.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(p.size());
  s.recall = g.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(g.size());
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

namespace {

template <typename Field>
double mean_set_metric(std::span<const std::vector<std::string>> predicted,
                       std::span<const std::vector<std::string>> gold, Field field) {
  if (predicted.size() != gold.size()) throw std::invalid_argument("predicted and gold differ in length");
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i].empty()) continue;
    acc += field(set_scores(predicted[i], gold[i]));
    ++n;
  }
  return n == 0 ? 0.0 : acc / static_cast<double>(n);
}

}  // namespace

double hits_exact(std::span<const std::vector<std::string>> predicted, std::span<const std::vector<std::string>> gold) {
  return mean_set_metric(predicted, gold, [](const SetScores& s) { return s.hit; });
}

double recall(std::span<const std::vector<std::string>> predicted, std::span<const std::vector<std::string>> gold) {
  return mean_set_metric(predicted, gold, [](const SetScores& s) { return s.recall; });
}

double f1(std::span<const std::vector<std::string>> predicted, std::span<const std::vector<std::string>> gold) {
  return mean_set_metric(predicted, gold, [](const SetScores& s) { return s.f1; });
}

RankReport rank_report(std::span<const std::size_t> best_ranks) {
  return {mrr(best_ranks), hit_at_k(best_ranks, 1), hit_at_k(best_ranks, 3), hit_at_k(best_ranks, 10),
          best_ranks.size()};
}

std::string normalize_label(std::string_view text) {
  std::string out;
  bool gap = false;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80) {
      if (gap && !out.empty()) out += ' ';
      out += static_cast<char>(std::tolower(c));
      gap = false;
    } else {
      gap = true;
    }
  }
  return out;
}

namespace {

EvalRecord label_keyed(const EvalRecord& r, const LabelTable& labels) {
  auto key = [&](const std::string& s) {
    if (is_entity_token(s)) {
      auto l = labels.lookup(s);
      if (l != kUnlabeled) return "label:" + normalize_label(l);
      return s;
    }
    return "label:" + normalize_label(s);
  };
  EvalRecord out;
  out.query_class = r.query_class;
  for (const auto& p : r.predicted) out.predicted.push_back(key(p));
  for (const auto& [id, w] : r.ranked) out.ranked.emplace_back(key(id), w);
  for (const auto& g : r.gold) out.gold.push_back(key(g));
  return out;
}

}  // namespace

EvalReport evaluate(std::span<const EvalRecord> input, const LabelTable* labels) {
  std::vector<EvalRecord> keyed;
  if (labels) {
    keyed.reserve(input.size());
    for (const auto& r : input) keyed.push_back(label_keyed(r, *labels));
  }
  std::span<const EvalRecord> records = labels ? std::span<const EvalRecord>(keyed) : input;
  EvalReport report;
  report.label_matching = labels != nullptr;
  std::vector<std::size_t> ranks;
  std::map<std::string, std::vector<std::size_t>> ranks_by_class;
  std::map<std::string, std::vector<SetScores>> sets_by_class;
  std::vector<SetScores> sets;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.gold.empty()) {
      ++report.excluded;
      report.warnings.push_back("question " + std::to_string(i) + " has no gold answers; excluded");
      continue;
    }
    const auto rank = best_gold_rank(r.ranked, r.gold);
    const auto s = set_scores(r.predicted, r.gold);
    const auto cls = r.query_class.empty() ? std::string("(none)") : r.query_class;
    ranks.push_back(rank);
    sets.push_back(s);
    ranks_by_class[cls].push_back(rank);
    sets_by_class[cls].push_back(s);
  }
  auto summarize = [](const std::vector<SetScores>& v) {
    SetReport out;
    out.questions = v.size();
    if (v.empty()) return out;
    for (const auto& s : v) {
      out.hits += s.hit;
      out.recall += s.recall;
      out.f1 += s.f1;
    }
    const auto n = static_cast<double>(v.size());
    out.hits /= n;
    out.recall /= n;
    out.f1 /= n;
    return out;
  };
  report.rank = rank_report(ranks);
  report.set = summarize(sets);
  for (const auto& [cls, v] : ranks_by_class) report.rank_by_class[cls] = rank_report(v);
  for (const auto& [cls, v] : sets_by_class) report.set_by_class[cls] = summarize(v);
  if (!report.rank_by_class.empty()) {
    auto& avg = report.rank_class_average;
    for (const auto& [cls, r] : report.rank_by_class) {
      avg.mrr += r.mrr;
      avg.hit1 += r.hit1;
      avg.hit3 += r.hit3;
      avg.hit10 += r.hit10;
      avg.questions += r.questions;
    }
    const auto n = static_cast<double>(report.rank_by_class.size());
    avg.mrr /= n;
    avg.hit1 /= n;
    avg.hit3 /= n;
    avg.hit10 /= n;
  }
  return report;
}

namespace {

nlohmann::json rank_json(const RankReport& r) {
  return {{"mrr", r.mrr}, {"hit@1", r.hit1}, {"hit@3", r.hit3}, {"hit@10", r.hit10}, {"questions", r.questions}};
}

nlohmann::json set_json(const SetReport& s) {
  return {{"hits", s.hits}, {"recall", s.recall}, {"f1", s.f1}, {"questions", s.questions}};
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["set"] = set_json(set);
  j["rank"] = rank_json(rank);
  j["rank_class_average"] = rank_json(rank_class_average);
  j["rank_by_class"] = nlohmann::json::object();
  for (const auto& [cls, r] : rank_by_class) j["rank_by_class"][cls] = rank_json(r);
  j["set_by_class"] = nlohmann::json::object();
  for (const auto& [cls, s] : set_by_class) j["set_by_class"][cls] = set_json(s);
  j["excluded"] = excluded;
  j["warnings"] = warnings;
  j["matching"] = label_matching ? "entity-id+normalized-label" : "entity-id";
  return j;
}

std::string EvalReport::to_table(bool per_class) const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  auto row = [&](const std::string& name, std::size_t n, const RankReport& r, const SetReport* s) {
    out << std::left << std::setw(18) << name << std::right << std::setw(6) << n << std::setw(9) << r.mrr
        << std::setw(9) << r.hit1 << std::setw(9) << r.hit3 << std::setw(9) << r.hit10;
    if (s) out << std::setw(9) << s->hits << std::setw(9) << s->recall << std::setw(9) << s->f1;
    out << '\n';
  };
  out << std::left << std::setw(18) << "class" << std::right << std::setw(6) << "n" << std::setw(9) << "MRR"
      << std::setw(9) << "Hit@1" << std::setw(9) << "Hit@3" << std::setw(9) << "Hit@10" << std::setw(9) << "Hits"
      << std::setw(9) << "Recall" << std::setw(9) << "F1" << '\n';
  if (per_class)
    for (const auto& [cls, r] : rank_by_class) row(cls, r.questions, r, &set_by_class.at(cls));
  row("all", rank.questions, rank, &set);
  if (per_class) row("class-average", rank_class_average.questions, rank_class_average, nullptr);
  return out.str();
}

Query gt_query_from_subgraph(const KnowledgeGraph& g, EntityId answer_root) {
  if (answer_root.value >= g.num_entities()) throw GroundTruthError("answer root is not in the graph");
  const auto n = g.num_entities();
  constexpr auto kUnreached = std::numeric_limits<std::uint32_t>::max();

  // Layers by undirected distance from the root.
  std::vector<std::uint32_t> dist(n, kUnreached);
  std::vector<EntityId> order{answer_root};
  dist[answer_root.value] = 0;
  for (std::size_t head = 0; head < order.size(); ++head) {
    const auto v = order[head];
    auto visit = [&](EntityId u) {
      if (dist[u.value] == kUnreached) {
        dist[u.value] = dist[v.value] + 1;
        order.push_back(u);
      }
    };
    for (const auto& nb : g.in_edges(v)) visit(nb.other);
    for (const auto& nb : g.out_edges(v)) visit(nb.other);
  }
  if (order.size() == 1) throw GroundTruthError("answer root is not connected to any leaf");

  // Children one layer further out; the edge relation points towards v, inverted when the triple points away.
  struct Child {
    EntityId node;
    RelationToken rel;
  };
  auto children = [&](EntityId v) {
    std::vector<Child> out;
    for (const auto& nb : g.in_edges(v))
      if (dist[nb.other.value] == dist[v.value] + 1) out.push_back({nb.other, {g.base_relation_name(nb.rel), false}});
    for (const auto& nb : g.out_edges(v))
      if (dist[nb.other.value] == dist[v.value] + 1) out.push_back({nb.other, {g.base_relation_name(nb.rel), true}});
    return out;
  };

  // Outermost layers first, so every child is built before its parents.
  std::vector<std::optional<Query>> built(n);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto v = *it;
    const auto kids = children(v);
    if (kids.empty()) continue;
    std::vector<Query> parts;
    for (const auto& c : kids) {
      if (built[c.node.value])
        parts.push_back(Query::project(*built[c.node.value], {c.rel}));
      else
        parts.push_back(Query::leaf(EntityRef::entity(g.entity_name(c.node)), {c.rel}));
    }
    built[v.value] = parts.size() == 1 ? std::move(parts.front()) : Query::intersection(std::move(parts));
  }
  return std::move(*built[answer_root.value]);
}

std::uint64_t gnn_flops(std::uint64_t nodes, std::uint64_t edges, std::uint64_t layers, std::uint64_t hidden) {
  return layers * (2 * edges * hidden + 4 * hidden * hidden * nodes);
}

double llm_flops(std::uint64_t nodes, std::uint64_t edges, double active_params) {
  return 2.0 * active_params * static_cast<double>(nodes + edges + 1);
}

}  // namespace ultrag
