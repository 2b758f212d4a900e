#pragma once
// Reference implementations used by the tests. They work from raw triple
// lists and dense vectors and share no code with the library under test.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "ultrag/kg_store.hpp"
#include "ultrag/query_dsl.hpp"

namespace oracle {

using Rng = std::mt19937_64;

struct RawGraph {
  std::size_t n = 0;
  std::size_t r = 0;
  std::vector<std::array<std::uint32_t, 3>> triples;  // head, rel, tail (may repeat)

  std::set<std::array<std::uint32_t, 3>> triple_set() const { return {triples.begin(), triples.end()}; }

  ultrag::KnowledgeGraph build() const {
    std::vector<std::string> ents, rels;
    for (std::size_t i = 0; i < n; ++i) ents.push_back("Q" + std::to_string(i));
    for (std::size_t i = 0; i < r; ++i) rels.push_back("P" + std::to_string(i));
    std::vector<ultrag::Triple> ts;
    for (const auto& t : triples) ts.push_back({ultrag::EntityId{t[0]}, t[1], ultrag::EntityId{t[2]}});
    return ultrag::KnowledgeGraph::from_triples(ents, rels, ts);
  }
};

inline std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline RawGraph random_graph(Rng& rng, std::size_t n, std::size_t r, std::size_t m) {
  RawGraph g{n, r, {}};
  for (std::size_t i = 0; i < m; ++i)
    g.triples.push_back({static_cast<std::uint32_t>(uniform(rng, 0, n - 1)),
                         static_cast<std::uint32_t>(uniform(rng, 0, r - 1)),
                         static_cast<std::uint32_t>(uniform(rng, 0, n - 1))});
  return g;
}

// ---- fuzzy projection / intersection, dense ----

/// result[v] = max over (u, r, v) of x[u]; inverse walks (v, r, u).
inline std::vector<double> project_max(const RawGraph& g, const std::vector<double>& x, std::uint32_t rel, bool inv) {
  std::vector<double> out(g.n, 0.0);
  for (const auto& [h, r, t] : g.triple_set()) {
    if (r != rel) continue;
    auto src = inv ? t : h;
    auto dst = inv ? h : t;
    out[dst] = std::max(out[dst], x[src]);
  }
  return out;
}

/// result[v] = 1 - prod over distinct (u, r, v) of (1 - x[u]).
inline std::vector<double> project_probsum(const RawGraph& g, const std::vector<double>& x, std::uint32_t rel,
                                           bool inv) {
  std::vector<double> keep(g.n, 1.0);
  for (const auto& [h, r, t] : g.triple_set()) {
    if (r != rel) continue;
    auto src = inv ? t : h;
    auto dst = inv ? h : t;
    keep[dst] *= 1.0 - x[src];
  }
  std::vector<double> out(g.n);
  for (std::size_t i = 0; i < g.n; ++i) out[i] = 1.0 - keep[i];
  return out;
}

inline std::vector<double> dense_min(const std::vector<std::vector<double>>& xs) {
  std::vector<double> out = xs.front();
  for (const auto& x : xs)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(out[i], x[i]);
  return out;
}

// ---- first-order evaluation by exhaustive binding search ----

class FirstOrder {
 public:
  explicit FirstOrder(const RawGraph& g) : g_(g), edges_(g.triple_set()) {}

  /// Every v for which some binding of the query variables satisfies all atoms.
  std::set<std::uint32_t> answers(const ultrag::Query& q) const {
    std::set<std::uint32_t> out;
    for (std::uint32_t v = 0; v < g_.n; ++v)
      if (sat(q, v)) out.insert(v);
    return out;
  }

 private:
  bool edge(std::uint32_t u, const ultrag::RelationToken& r, std::uint32_t v) const {
    const auto rel = static_cast<std::uint32_t>(std::stoul(r.base.substr(1)));
    return r.inverse ? edges_.count({v, rel, u}) > 0 : edges_.count({u, rel, v}) > 0;
  }

  // q restricted to its first `n_rel` trailing projections.
  bool sat_prefix(const ultrag::Query& q, std::size_t n_rel, std::uint32_t v) const {
    if (n_rel == 0) {
      if (q.kind == ultrag::Query::Kind::Leaf)
        return "Q" + std::to_string(v) == q.anchor.text;
      if (q.kind == ultrag::Query::Kind::Chain) return sat(q.children.front(), v);
      return false;
    }
    for (std::uint32_t u = 0; u < g_.n; ++u)
      if (edge(u, q.relations[n_rel - 1], v) && sat_prefix(q, n_rel - 1, u)) return true;
    return false;
  }

  bool sat(const ultrag::Query& q, std::uint32_t v) const {
    if (q.kind == ultrag::Query::Kind::Intersection) {
      for (const auto& c : q.children)
        if (!sat(c, v)) return false;
      return true;
    }
    return sat_prefix(q, q.relations.size(), v);
  }

  const RawGraph& g_;
  std::set<std::array<std::uint32_t, 3>> edges_;
};

// ---- random queries ----

struct QueryShape {
  std::size_t max_depth = 3;  // projections on any root-to-leaf path
  std::size_t max_arity = 3;
  std::size_t max_chain = 3;
};

inline std::vector<ultrag::RelationToken> random_relations(Rng& rng, std::size_t count, std::size_t n_rel) {
  std::vector<ultrag::RelationToken> rels;
  for (std::size_t i = 0; i < count; ++i)
    rels.push_back({"P" + std::to_string(uniform(rng, 0, n_rel - 1)), uniform(rng, 0, 1) == 1});
  return rels;
}

/// Query whose leaves are entity ids below `n_ent` (or mentions when allowed).
inline ultrag::Query random_query(Rng& rng, std::size_t n_ent, std::size_t n_rel, std::size_t depth_budget,
                                  const QueryShape& shape, bool mentions = false) {
  using ultrag::Query;
  // Intersections need at least one projection below and one above to stay in budget.
  const bool can_branch = depth_budget >= 2;
  if (can_branch && uniform(rng, 0, 2) == 0) {
    const auto arity = uniform(rng, 2, shape.max_arity);
    const auto above = uniform(rng, 0, std::min(shape.max_chain, depth_budget - 1));
    std::vector<Query> kids;
    for (std::size_t i = 0; i < arity; ++i) kids.push_back(random_query(rng, n_ent, n_rel, depth_budget - above, shape, mentions));
    auto q = Query::intersection(std::move(kids));
    if (above > 0) q = Query::project(std::move(q), random_relations(rng, above, n_rel));
    return q;
  }
  const auto len = uniform(rng, 1, std::max<std::size_t>(1, std::min(shape.max_chain, depth_budget)));
  ultrag::EntityRef anchor = ultrag::EntityRef::entity("Q" + std::to_string(uniform(rng, 0, n_ent - 1)));
  if (mentions && uniform(rng, 0, 3) == 0) {
    static const char* words[] = {"deep learning", "Turing Award", "a", "x y z", "Montreal", "q1"};
    anchor = ultrag::EntityRef::mention(words[uniform(rng, 0, 5)]);
  }
  return Query::leaf(anchor, random_relations(rng, len, n_rel));
}

// ---- SEPPR by dense matrix iteration ----

inline std::vector<double> dense_ppr(const RawGraph& g, const std::vector<double>& x0, double alpha, std::size_t steps,
                                     bool symmetric) {
  const auto n = g.n;
  std::vector<double> m(n * n, 0.0);  // m[v * n + u]: walk weight u -> v
  std::vector<double> deg(n, 0.0);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> walks;
  for (const auto& [h, r, t] : g.triple_set()) {
    walks.push_back({h, t});
    if (symmetric) walks.push_back({t, h});
  }
  for (const auto& [u, v] : walks) deg[u] += 1.0;
  for (const auto& [u, v] : walks) m[v * n + u] += 1.0 / deg[u];
  std::vector<double> x = x0, next(n);
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t v = 0; v < n; ++v) {
      double acc = 0.0;
      for (std::size_t u = 0; u < n; ++u) acc += m[v * n + u] * x[u];
      next[v] = alpha * acc + (1.0 - alpha) * x0[v];
    }
    x.swap(next);
  }
  return x;
}

// ---- nearest neighbours ----

inline std::vector<std::size_t> knn(const std::vector<float>& data, std::size_t dim, const std::vector<float>& q,
                                    std::size_t k) {
  const auto n = data.size() / dim;
  std::vector<std::pair<double, std::size_t>> d(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double diff = static_cast<double>(data[i * dim + j]) - q[j];
      acc += diff * diff;
    }
    d[i] = {acc, i};
  }
  std::sort(d.begin(), d.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < std::min(k, n); ++i) out.push_back(d[i].second);
  return out;
}

// ---- proof DAGs ----

/// Random DAG over nodes 0..n-1 in topological order; node n-1 is the root,
/// every other node has a path to it and at least one source exists.
inline RawGraph random_proof_dag(Rng& rng, std::size_t n, std::size_t r) {
  RawGraph g{n, r, {}};
  const std::size_t sources = std::max<std::size_t>(1, uniform(rng, 1, std::max<std::size_t>(1, n / 3)));
  for (std::size_t v = sources; v < n; ++v) {
    const auto fan_in = uniform(rng, 1, std::min<std::size_t>(3, v));
    std::set<std::size_t> from;
    while (from.size() < fan_in) from.insert(uniform(rng, 0, v - 1));
    for (auto u : from)
      g.triples.push_back({static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(uniform(rng, 0, r - 1)),
                           static_cast<std::uint32_t>(v)});
  }
  // Give every non-root node an exit so all of them reach the root.
  for (std::size_t u = 0; u + 1 < n; ++u) {
    bool has_out = false;
    for (const auto& t : g.triples) has_out = has_out || t[0] == u;
    if (!has_out)
      g.triples.push_back({static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(uniform(rng, 0, r - 1)),
                           static_cast<std::uint32_t>(uniform(rng, u + 1, n - 1))});
  }
  return g;
}

// ---- parser fuzzing ----

/// Random edits: insert, delete or replace bytes drawn from the query alphabet and raw bytes.
inline std::string mutate(Rng& rng, std::string s) {
  static const std::string alphabet = "QP_inv0123456789(),-> <>AND\t\n";
  const auto edits = uniform(rng, 1, 4);
  for (std::size_t e = 0; e < edits; ++e) {
    const auto op = uniform(rng, 0, 2);
    const auto pos = s.empty() ? 0 : uniform(rng, 0, s.size() - 1);
    char c = uniform(rng, 0, 4) == 0 ? static_cast<char>(uniform(rng, 0, 255))
                                      : alphabet[uniform(rng, 0, alphabet.size() - 1)];
    if (op == 0 || s.empty())
      s.insert(s.begin() + static_cast<std::ptrdiff_t>(std::min(pos, s.size())), c);
    else if (op == 1)
      s.erase(pos, 1);
    else
      s[pos] = c;
  }
  return s;
}

}  // namespace oracle
