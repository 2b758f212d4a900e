#include "ultrag/seppr.hpp"

#include <algorithm>
#include <thread>

namespace ultrag {

void SepprConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw SepprError("alpha must lie in (0,1)");
  if (top_k < 1) throw SepprError("top_k must be at least 1");
  if (workers < 1) throw SepprError("workers must be at least 1");
}

std::vector<double> seppr_initial(const KnowledgeGraph& g, const SeedSpec& seeds) {
  const auto n = g.num_entities();
  std::vector<double> x0(n, 0.0);
  if (const auto* crisp = std::get_if<std::vector<EntityId>>(&seeds.seeds)) {
    std::vector<EntityId> ids = *crisp;
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (ids.empty()) throw SepprError("crisp seed set is empty");
    for (auto e : ids) {
      if (e.value >= n) throw SepprError("seed entity outside the graph");
      x0[e.value] = 1.0 / static_cast<double>(ids.size());
    }
    return x0;
  }
  const auto& sets = std::get<std::vector<FuzzySet>>(seeds.seeds);
  for (const auto& s : sets) {
    if (s.universe_size() != n) throw SepprError("fuzzy seed universe does not match the graph");
    s.for_each([&](EntityId e, double p) { x0[e.value] += p; });
  }
  double total = 0.0;
  for (double v : x0) total += v;
  if (!(total > 0.0)) throw SepprError("fuzzy seeds carry no mass");
  for (auto& v : x0) v /= total;
  return x0;
}

std::vector<double> seppr_scores(const KnowledgeGraph& g, const SeedSpec& seeds, const SepprConfig& cfg) {
  cfg.validate();
  const auto n = g.num_entities();
  const auto x0 = seppr_initial(g, seeds);

  std::vector<double> inv_degree(n, 0.0);
  for (std::uint32_t u = 0; u < n; ++u) {
    const EntityId e{u};
    const auto deg = g.out_degree(e) + (cfg.symmetric ? g.in_degree(e) : 0u);
    if (deg > 0) inv_degree[u] = 1.0 / static_cast<double>(deg);
  }

  std::vector<double> x = x0;
  std::vector<double> spread(n, 0.0);
  std::vector<double> next(n, 0.0);
  const double alpha = cfg.alpha;

  // Pull form: each target sums its in-edges in adjacency order, so the
  // result does not depend on how targets are split across workers.
  auto pull = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t v = lo; v < hi; ++v) {
      const EntityId e{static_cast<std::uint32_t>(v)};
      double acc = 0.0;
      for (const auto& nb : g.in_edges(e)) acc += spread[nb.other.value];
      if (cfg.symmetric)
        for (const auto& nb : g.out_edges(e)) acc += spread[nb.other.value];
      next[v] = alpha * acc + (1.0 - alpha) * x0[v];
    }
  };

  const std::size_t workers = std::min<std::size_t>(cfg.workers, std::max<std::size_t>(n, 1));
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    for (std::size_t u = 0; u < n; ++u) spread[u] = x[u] * inv_degree[u];
    if (workers <= 1) {
      pull(0, n);
    } else {
      std::vector<std::jthread> pool;
      const std::size_t chunk = (n + workers - 1) / workers;
      for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo < hi) pool.emplace_back(pull, lo, hi);
      }
    }
    x.swap(next);
  }
  return x;
}

std::vector<ScoredEntity> seppr(const KnowledgeGraph& g, const SeedSpec& seeds, const SepprConfig& cfg) {
  const auto x = seppr_scores(g, seeds, cfg);
  std::vector<ScoredEntity> ranked;
  for (std::uint32_t v = 0; v < x.size(); ++v)
    if (x[v] > 0.0) ranked.push_back({EntityId{v}, x[v]});
  auto better = [](const ScoredEntity& a, const ScoredEntity& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  };
  const auto k = std::min(cfg.top_k, ranked.size());
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(k), ranked.end(), better);
  ranked.resize(k);
  return ranked;
}

KnowledgeGraph extract_subgraph(const KnowledgeGraph& g, const SeedSpec& seeds, const SepprConfig& cfg,
                                std::size_t edge_cap) {
  const auto ranked = seppr(g, seeds, cfg);
  std::vector<EntityId> nodes;
  std::vector<double> scores;
  nodes.reserve(ranked.size());
  scores.reserve(ranked.size());
  for (const auto& r : ranked) {
    nodes.push_back(r.id);
    scores.push_back(r.score);
  }
  return induce_subgraph(g, nodes, scores, edge_cap);
}

}  // namespace ultrag
