#include "ultrag/fuzzy_exec.hpp"

#include <algorithm>
#include <unordered_map>

namespace ultrag {

namespace {

bool sorted_by_value(const Membership& a, const Membership& b) {
  if (a.value != b.value) return a.value > b.value;
  return a.id < b.id;
}

// Upper bound on the universe for which projection accumulates into a dense scratch vector.
constexpr std::size_t kDenseScratchLimit = std::size_t{1} << 22;

class Accumulator {
 public:
  Accumulator(std::size_t universe, Semantics sem, std::size_t expected)
      : universe_(universe), sem_(sem), dense_(universe <= kDenseScratchLimit || expected * 10 > universe) {
    if (dense_) values_.assign(universe, 0.0);
  }

  void add(EntityId v, double m) {
    if (dense_) {
      values_[v.value] = combine(values_[v.value], m);
    } else {
      auto& slot = map_[v.value];
      slot = combine(slot, m);
    }
  }

  FuzzySet finish() && {
    if (dense_) return FuzzySet::from_dense(std::move(values_));
    std::vector<Membership> entries;
    entries.reserve(map_.size());
    for (const auto& [id, m] : map_)
      if (m > 0.0) entries.push_back({EntityId{id}, m});
    return FuzzySet::from_entries(universe_, std::move(entries));
  }

 private:
  double combine(double acc, double m) const {
    if (sem_ == Semantics::Godel) return std::max(acc, m);
    return acc + m - acc * m;  // 1 - (1 - acc)(1 - m)
  }

  std::size_t universe_;
  Semantics sem_;
  bool dense_;
  std::vector<double> values_;
  std::unordered_map<std::uint32_t, double> map_;
};

}  // namespace

FuzzySet FuzzySet::crisp(std::size_t universe_size, std::span<const EntityId> members) {
  std::vector<Membership> entries;
  entries.reserve(members.size());
  for (auto e : members) entries.push_back({e, 1.0});
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  entries.erase(std::unique(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.id == b.id; }),
                entries.end());
  return from_entries(universe_size, std::move(entries));
}

FuzzySet FuzzySet::from_entries(std::size_t universe_size, std::vector<Membership> entries) {
  FuzzySet s(universe_size);
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& m = entries[i];
    if (m.id.value >= universe_size) throw FuzzyError("membership for an entity outside the universe");
    if (!(m.value >= 0.0 && m.value <= 1.0)) throw FuzzyError("membership outside [0,1]");
    if (i > 0 && entries[i - 1].id == m.id) throw FuzzyError("duplicate membership entry");
  }
  std::erase_if(entries, [](const Membership& m) { return m.value == 0.0; });
  s.sparse_ = std::move(entries);
  s.support_ = s.sparse_.size();
  s.settle();
  return s;
}

FuzzySet FuzzySet::from_dense(std::vector<double> values) {
  FuzzySet s(values.size());
  std::size_t support = 0;
  for (double v : values) {
    if (!(v >= 0.0 && v <= 1.0)) throw FuzzyError("membership outside [0,1]");
    support += v != 0.0;
  }
  s.values_ = std::move(values);
  s.dense_ = true;
  s.support_ = support;
  s.settle();
  return s;
}

void FuzzySet::settle() {
  const bool want_dense =
      universe_ > 0 && static_cast<double>(support_) > kDenseThreshold * static_cast<double>(universe_);
  if (want_dense && !dense_) {
    values_.assign(universe_, 0.0);
    for (const auto& m : sparse_) values_[m.id.value] = m.value;
    sparse_.clear();
    sparse_.shrink_to_fit();
    dense_ = true;
  } else if (!want_dense && dense_) {
    sparse_.clear();
    for (std::size_t i = 0; i < values_.size(); ++i)
      if (values_[i] != 0.0) sparse_.push_back({EntityId{static_cast<std::uint32_t>(i)}, values_[i]});
    values_.clear();
    values_.shrink_to_fit();
    dense_ = false;
  }
}

double FuzzySet::operator[](EntityId e) const {
  if (e.value >= universe_) return 0.0;
  if (dense_) return values_[e.value];
  auto it = std::lower_bound(sparse_.begin(), sparse_.end(), e,
                             [](const Membership& m, EntityId id) { return m.id < id; });
  return it != sparse_.end() && it->id == e ? it->value : 0.0;
}

double FuzzySet::max_value() const {
  double best = 0.0;
  for_each([&](EntityId, double v) { best = std::max(best, v); });
  return best;
}

bool FuzzySet::is_crisp() const {
  bool crisp = true;
  for_each([&](EntityId, double v) { crisp = crisp && v == 1.0; });
  return crisp;
}

std::vector<Membership> FuzzySet::entries() const {
  if (!dense_) return sparse_;
  std::vector<Membership> out;
  out.reserve(support_);
  for_each([&](EntityId e, double v) { out.push_back({e, v}); });
  return out;
}

std::vector<double> FuzzySet::to_dense() const {
  if (dense_) return values_;
  std::vector<double> out(universe_, 0.0);
  for (const auto& m : sparse_) out[m.id.value] = m.value;
  return out;
}

Semantics parse_semantics(std::string_view name) {
  if (name == "godel" || name == "min-max") return Semantics::Godel;
  if (name == "product") return Semantics::Product;
  throw std::invalid_argument("unknown semantics '" + std::string(name) + "'");
}

std::string_view semantics_name(Semantics s) { return s == Semantics::Godel ? "godel" : "product"; }

FuzzySet project(const KnowledgeGraph& g, const FuzzySet& x, RelationRef r, Semantics sem) {
  if (x.universe_size() != g.num_entities()) throw FuzzyError("fuzzy set universe does not match the graph");
  if (r.base >= g.num_relations()) return FuzzySet(g.num_entities());
  Accumulator acc(g.num_entities(), sem, x.support_size());
  x.for_each([&](EntityId u, double m) {
    for (const auto& nb : g.neighbors(u, r)) acc.add(nb.other, m);
  });
  return std::move(acc).finish();
}

FuzzySet project(const KnowledgeGraph& g, const FuzzySet& x, const RelationToken& r, Semantics sem,
                 std::vector<std::string>* diagnostics) {
  auto resolved = g.find_relation(r.str());
  if (!resolved) {
    if (diagnostics) diagnostics->push_back("unknown relation '" + r.str() + "'; projection is empty");
    return FuzzySet(g.num_entities());
  }
  return project(g, x, *resolved, sem);
}

FuzzySet intersect(std::span<const FuzzySet> xs, Semantics sem) {
  if (xs.size() < 2) throw FuzzyError("intersection needs at least two sets");
  const auto universe = xs.front().universe_size();
  for (const auto& x : xs)
    if (x.universe_size() != universe) throw FuzzyError("intersection over mismatched universes");
  // Walk the smallest support and probe the others.
  const auto* smallest = &xs.front();
  for (const auto& x : xs)
    if (x.support_size() < smallest->support_size()) smallest = &x;
  std::vector<Membership> out;
  smallest->for_each([&](EntityId e, double v) {
    double acc = v;
    for (const auto& x : xs) {
      if (&x == smallest) continue;
      const double m = x[e];
      acc = sem == Semantics::Godel ? std::min(acc, m) : acc * m;
      if (acc == 0.0) break;
    }
    if (acc > 0.0) out.push_back({e, acc});
  });
  if (sem == Semantics::Product) {
    // Product is order-sensitive in floating point; recompute in list order for determinism.
    for (auto& m : out) {
      double acc = 1.0;
      for (const auto& x : xs) acc *= x[m.id];
      m.value = acc;
    }
    std::erase_if(out, [](const Membership& m) { return m.value == 0.0; });
  }
  return FuzzySet::from_entries(universe, std::move(out));
}

namespace {

struct Evaluator {
  const KnowledgeGraph& g;
  std::span<const FuzzySet> leaves;
  Semantics sem;
  std::vector<std::string>& diagnostics;
  std::size_t next_leaf = 0;

  FuzzySet eval(const Query& q) {
    FuzzySet cur(g.num_entities());
    switch (q.kind) {
      case Query::Kind::Leaf:
        cur = leaves[next_leaf++];
        break;
      case Query::Kind::Chain:
        cur = eval(q.children.front());
        break;
      case Query::Kind::Intersection: {
        std::vector<FuzzySet> parts;
        parts.reserve(q.children.size());
        for (const auto& c : q.children) parts.push_back(eval(c));
        return intersect(parts, sem);
      }
    }
    for (const auto& r : q.relations) cur = project(g, cur, r, sem, &diagnostics);
    return cur;
  }
};

}  // namespace

ExecutionResult execute(const KnowledgeGraph& g, const Query& q, std::span<const FuzzySet> leaf_inputs,
                        Semantics sem) {
  if (leaf_inputs.size() != q.num_leaves())
    throw ExecutionError("query has " + std::to_string(q.num_leaves()) + " leaves but " +
                         std::to_string(leaf_inputs.size()) + " leaf inputs were bound");
  for (const auto& x : leaf_inputs)
    if (x.universe_size() != g.num_entities()) throw ExecutionError("leaf input universe does not match the graph");
  ExecutionResult result;
  Evaluator ev{g, leaf_inputs, sem, result.diagnostics};
  result.scores = ev.eval(q);
  result.per_leaf_inputs.assign(leaf_inputs.begin(), leaf_inputs.end());
  result.executor = ExecutorKind::Symbolic;
  result.executor_tag = "symbolic";
  return result;
}

ExecutionResult SymbolicExecutor::execute(const KnowledgeGraph& g, const Query& q,
                                          std::span<const FuzzySet> leaf_inputs) const {
  return ultrag::execute(g, q, leaf_inputs, sem_);
}

std::vector<Membership> top_k(const FuzzySet& x, std::size_t k) {
  auto all = x.entries();
  const auto n = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(), sorted_by_value);
  all.resize(n);
  return all;
}

std::vector<std::size_t> rank_metric_input(const FuzzySet& x, std::span<const EntityId> answers) {
  const auto entries = x.entries();
  std::vector<std::size_t> ranks;
  ranks.reserve(answers.size());
  for (auto a : answers) {
    const double v = x[a];
    std::size_t rank = 1;
    if (v > 0.0) {
      for (const auto& m : entries)
        if (m.value > v || (m.value == v && m.id < a)) ++rank;
    } else {
      // After the whole support, then among zero-membership ids by id.
      std::size_t support_below = 0;
      for (const auto& m : entries)
        if (m.id < a) ++support_below;
      rank = entries.size() + 1 + (a.value - support_below);
    }
    ranks.push_back(rank);
  }
  return ranks;
}

}  // namespace ultrag
