#include "ultrag/kg_store.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <tuple>

namespace ultrag {

namespace {

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

constexpr std::array<char, 4> kSnapshotMagic = {'U', 'K', 'G', 'S'};
constexpr std::uint32_t kSnapshotVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), b.size());
}

void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), b.size());
}

std::uint64_t get_le(std::istream& in, int width) {
  std::array<unsigned char, 8> b{};
  in.read(reinterpret_cast<char*>(b.data()), width);
  if (!in) throw GraphError("snapshot truncated");
  std::uint64_t v = 0;
  for (int i = width - 1; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  auto n = static_cast<std::size_t>(get_le(in, 4));
  if (n > (1u << 20)) throw GraphError("snapshot string too long");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw GraphError("snapshot truncated");
  return s;
}

}  // namespace

IdScheme parse_id_scheme(std::string_view name) {
  if (name == "external" || name == "qp") return IdScheme::External;
  if (name == "integer" || name == "int") return IdScheme::Integer;
  throw GraphError("unknown id scheme '" + std::string(name) + "'");
}

bool is_entity_token(std::string_view s) { return s.size() > 1 && s[0] == 'Q' && all_digits(s.substr(1)); }

bool is_relation_token(std::string_view s) { return s.size() > 1 && s[0] == 'P' && all_digits(s.substr(1)); }

KnowledgeGraph KnowledgeGraph::from_external(
    std::span<const std::string> entities, std::span<const std::string> relations,
    std::span<const std::tuple<std::string, std::string, std::string>> triples) {
  std::vector<std::string> enames;
  std::vector<std::string> rnames;
  std::unordered_map<std::string, std::uint32_t> elook;
  std::unordered_map<std::string, std::uint32_t> rlook;
  auto intern = [](std::vector<std::string>& names, std::unordered_map<std::string, std::uint32_t>& look,
                   const std::string& s) {
    auto [it, inserted] = look.try_emplace(s, static_cast<std::uint32_t>(names.size()));
    if (inserted) names.push_back(s);
    return it->second;
  };
  for (const auto& e : entities) intern(enames, elook, e);
  for (const auto& r : relations) intern(rnames, rlook, r);
  std::vector<Triple> ts;
  ts.reserve(triples.size());
  for (const auto& [h, r, t] : triples) {
    auto hi = intern(enames, elook, h);
    auto ri = intern(rnames, rlook, r);
    auto ti = intern(enames, elook, t);
    ts.push_back({EntityId{hi}, ri, EntityId{ti}});
  }
  return from_triples(std::move(enames), std::move(rnames), std::move(ts));
}

KnowledgeGraph KnowledgeGraph::from_triples(std::vector<std::string> entity_names,
                                            std::vector<std::string> relation_names,
                                            std::vector<Triple> triples) {
  KnowledgeGraph g;
  g.entity_names_ = std::move(entity_names);
  g.relation_names_ = std::move(relation_names);
  for (std::uint32_t i = 0; i < g.entity_names_.size(); ++i) {
    if (!g.entity_lookup_.try_emplace(g.entity_names_[i], i).second)
      throw GraphError("duplicate entity id '" + g.entity_names_[i] + "'");
  }
  for (std::uint32_t i = 0; i < g.relation_names_.size(); ++i) {
    if (!g.relation_lookup_.try_emplace(g.relation_names_[i], i).second)
      throw GraphError("duplicate relation id '" + g.relation_names_[i] + "'");
  }
  for (const auto& t : triples) {
    if (t.head.value >= g.entity_names_.size() || t.tail.value >= g.entity_names_.size() ||
        t.rel >= g.relation_names_.size())
      throw GraphError("triple references an id outside the vocabulary");
  }
  std::sort(triples.begin(), triples.end());
  triples.erase(std::unique(triples.begin(), triples.end()), triples.end());
  g.triples_ = std::move(triples);
  g.build_index();
  return g;
}

void KnowledgeGraph::build_index() {
  const std::size_t n = entity_names_.size();
  fwd_offsets_.assign(n + 1, 0);
  inv_offsets_.assign(n + 1, 0);
  for (const auto& t : triples_) {
    ++fwd_offsets_[t.head.value + 1];
    ++inv_offsets_[t.tail.value + 1];
  }
  std::partial_sum(fwd_offsets_.begin(), fwd_offsets_.end(), fwd_offsets_.begin());
  std::partial_sum(inv_offsets_.begin(), inv_offsets_.end(), inv_offsets_.begin());
  fwd_.resize(triples_.size());
  inv_.resize(triples_.size());
  std::vector<std::uint64_t> fcur(fwd_offsets_.begin(), fwd_offsets_.end() - 1);
  std::vector<std::uint64_t> icur(inv_offsets_.begin(), inv_offsets_.end() - 1);
  for (const auto& t : triples_) {
    fwd_[fcur[t.head.value]++] = {t.rel, t.tail};
    inv_[icur[t.tail.value]++] = {t.rel, t.head};
  }
  // triples_ is sorted by (head, rel, tail) so forward rows are already ordered.
  for (std::size_t v = 0; v < n; ++v)
    std::sort(inv_.begin() + static_cast<std::ptrdiff_t>(inv_offsets_[v]),
              inv_.begin() + static_cast<std::ptrdiff_t>(inv_offsets_[v + 1]));
}

std::span<const Neighbor> KnowledgeGraph::out_edges(EntityId e) const {
  if (e.value >= num_entities()) return {};
  return std::span(fwd_).subspan(fwd_offsets_[e.value], fwd_offsets_[e.value + 1] - fwd_offsets_[e.value]);
}

std::span<const Neighbor> KnowledgeGraph::in_edges(EntityId e) const {
  if (e.value >= num_entities()) return {};
  return std::span(inv_).subspan(inv_offsets_[e.value], inv_offsets_[e.value + 1] - inv_offsets_[e.value]);
}

std::span<const Neighbor> KnowledgeGraph::neighbors(EntityId e, RelationRef r) const {
  auto row = r.inverse ? in_edges(e) : out_edges(e);
  auto lo = std::lower_bound(row.begin(), row.end(), r.base,
                             [](const Neighbor& n, std::uint32_t rel) { return n.rel < rel; });
  auto hi = std::upper_bound(lo, row.end(), r.base,
                             [](std::uint32_t rel, const Neighbor& n) { return rel < n.rel; });
  return {lo, hi};
}

std::uint32_t KnowledgeGraph::out_degree(EntityId e) const {
  return static_cast<std::uint32_t>(out_edges(e).size());
}

std::uint32_t KnowledgeGraph::in_degree(EntityId e) const {
  return static_cast<std::uint32_t>(in_edges(e).size());
}

std::string KnowledgeGraph::relation_name(RelationRef r) const {
  const auto& base = relation_names_.at(r.base);
  return r.inverse ? base + "_inv" : base;
}

std::optional<EntityId> KnowledgeGraph::find_entity(std::string_view external) const {
  auto it = entity_lookup_.find(std::string(external));
  if (it == entity_lookup_.end()) return std::nullopt;
  return EntityId{it->second};
}

std::optional<RelationRef> KnowledgeGraph::find_relation(std::string_view external) const {
  bool inverse = false;
  constexpr std::string_view kInv = "_inv";
  if (external.size() > kInv.size() && external.substr(external.size() - kInv.size()) == kInv) {
    inverse = true;
    external.remove_suffix(kInv.size());
  }
  auto it = relation_lookup_.find(std::string(external));
  if (it == relation_lookup_.end()) return std::nullopt;
  return RelationRef{it->second, inverse};
}

std::vector<std::size_t> KnowledgeGraph::relation_frequencies() const {
  std::vector<std::size_t> freq(num_relations(), 0);
  for (const auto& t : triples_) ++freq[t.rel];
  return freq;
}

KnowledgeGraph induce_subgraph(const KnowledgeGraph& g, std::span<const EntityId> nodes,
                               std::span<const double> scores, std::size_t edge_cap) {
  if (!scores.empty() && scores.size() != nodes.size())
    throw GraphError("induce_subgraph: scores must be parallel to nodes");
  if (edge_cap == 0 && !nodes.empty()) throw GraphError("induce_subgraph: edge_cap must be positive");

  // Position of each parent entity in the kept list; sparse map for small node sets.
  const bool dense = nodes.size() * 64 >= g.num_entities();
  constexpr std::uint32_t kAbsent = std::numeric_limits<std::uint32_t>::max();
  std::vector<std::uint32_t> dense_pos;
  std::unordered_map<std::uint32_t, std::uint32_t> sparse_pos;
  if (dense) dense_pos.assign(g.num_entities(), kAbsent);
  auto pos_of = [&](EntityId e) -> std::uint32_t {
    if (dense) return dense_pos[e.value];
    auto it = sparse_pos.find(e.value);
    return it == sparse_pos.end() ? kAbsent : it->second;
  };
  auto set_pos = [&](EntityId e, std::uint32_t p) {
    if (dense)
      dense_pos[e.value] = p;
    else if (p == kAbsent)
      sparse_pos.erase(e.value);
    else
      sparse_pos[e.value] = p;
  };

  std::vector<EntityId> kept;
  std::vector<double> kept_score;
  kept.reserve(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    auto e = nodes[i];
    if (e.value >= g.num_entities()) throw GraphError("induce_subgraph: node outside graph");
    if (pos_of(e) != kAbsent) continue;
    set_pos(e, static_cast<std::uint32_t>(kept.size()));
    kept.push_back(e);
    kept_score.push_back(scores.empty() ? 0.0 : scores[i]);
  }

  std::size_t edges = 0;
  for (auto u : kept)
    for (const auto& nb : g.out_edges(u))
      if (pos_of(nb.other) != kAbsent) ++edges;

  if (edges > edge_cap) {
    std::vector<std::uint32_t> order(kept.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
      if (kept_score[a] != kept_score[b]) return kept_score[a] < kept_score[b];
      return kept[a].value < kept[b].value;
    });
    for (auto idx : order) {
      if (edges <= edge_cap) break;
      auto u = kept[idx];
      std::size_t incident = 0;
      for (const auto& nb : g.out_edges(u))
        if (pos_of(nb.other) != kAbsent) ++incident;
      for (const auto& nb : g.in_edges(u))
        if (nb.other != u && pos_of(nb.other) != kAbsent) ++incident;
      edges -= incident;
      set_pos(u, kAbsent);
    }
    std::vector<EntityId> survivors;
    for (auto e : kept)
      if (pos_of(e) != kAbsent) survivors.push_back(e);
    kept = std::move(survivors);
  }

  // Renumber survivors densely in input order.
  for (std::uint32_t i = 0; i < kept.size(); ++i) set_pos(kept[i], i);
  std::vector<std::string> names;
  names.reserve(kept.size());
  for (auto e : kept) names.push_back(g.entity_name(e));
  std::vector<Triple> ts;
  ts.reserve(edges);
  for (std::uint32_t i = 0; i < kept.size(); ++i)
    for (const auto& nb : g.out_edges(kept[i]))
      if (auto p = pos_of(nb.other); p != kAbsent) ts.push_back({EntityId{i}, nb.rel, EntityId{p}});

  std::vector<std::string> rel_names(g.relation_names().begin(), g.relation_names().end());
  auto sub = KnowledgeGraph::from_triples(std::move(names), std::move(rel_names), std::move(ts));
  sub.parent_ids_ = std::move(kept);
  return sub;
}

KnowledgeGraph read_triples(std::istream& in, IdScheme scheme) {
  std::vector<std::tuple<std::string, std::string, std::string>> triples;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto view = trim(line);
    if (view.empty()) continue;
    std::array<std::string_view, 3> fields;
    std::size_t count = 0;
    std::size_t start = 0;
    while (true) {
      auto tab = view.find('\t', start);
      if (count == 3) throw IngestError(lineno, "expected 3 tab-separated fields");
      fields[count++] = trim(view.substr(start, tab == std::string_view::npos ? tab : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (count != 3) throw IngestError(lineno, "expected 3 tab-separated fields");
    std::array<std::string, 3> ext;
    for (int i = 0; i < 3; ++i) {
      auto f = fields[i];
      const bool rel = i == 1;
      if (scheme == IdScheme::External) {
        if (rel ? !is_relation_token(f) : !is_entity_token(f))
          throw IngestError(lineno, std::string("malformed ") + (rel ? "relation" : "entity") + " id '" +
                                        std::string(f) + "'");
        ext[i] = std::string(f);
      } else {
        if (!all_digits(f)) throw IngestError(lineno, "expected a non-negative integer, got '" + std::string(f) + "'");
        ext[i] = (rel ? "P" : "Q") + std::string(f);
      }
    }
    triples.emplace_back(std::move(ext[0]), std::move(ext[1]), std::move(ext[2]));
  }
  return KnowledgeGraph::from_external({}, {}, triples);
}

KnowledgeGraph ingest_triples(const std::string& path, IdScheme scheme) {
  std::ifstream in(path);
  if (!in) throw GraphError("cannot open triple file '" + path + "'");
  return read_triples(in, scheme);
}

void write_triples(const KnowledgeGraph& g, std::ostream& out) {
  for (const auto& t : g.triples())
    out << g.entity_name(t.head) << '\t' << g.base_relation_name(t.rel) << '\t' << g.entity_name(t.tail) << '\n';
}

void write_snapshot(const KnowledgeGraph& g, std::ostream& out) {
  out.write(kSnapshotMagic.data(), kSnapshotMagic.size());
  put_u32(out, kSnapshotVersion);
  put_u64(out, g.num_entities());
  put_u64(out, g.num_relations());
  put_u64(out, g.num_triples());
  for (const auto& t : g.triples()) put_u32(out, t.head.value);
  for (const auto& t : g.triples()) put_u32(out, t.rel);
  for (const auto& t : g.triples()) put_u32(out, t.tail.value);
  for (const auto& s : g.entity_names()) put_string(out, s);
  for (const auto& s : g.relation_names()) put_string(out, s);
}

KnowledgeGraph read_snapshot(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kSnapshotMagic) throw GraphError("not a graph snapshot (bad magic)");
  auto version = get_le(in, 4);
  if (version != kSnapshotVersion) throw GraphError("unsupported snapshot version " + std::to_string(version));
  auto ne = get_le(in, 8);
  auto nr = get_le(in, 8);
  auto nt = get_le(in, 8);
  if (ne > std::numeric_limits<std::uint32_t>::max() || nr > std::numeric_limits<std::uint32_t>::max())
    throw GraphError("snapshot counts out of range");
  std::vector<Triple> ts(nt);
  for (auto& t : ts) t.head.value = static_cast<std::uint32_t>(get_le(in, 4));
  for (auto& t : ts) t.rel = static_cast<std::uint32_t>(get_le(in, 4));
  for (auto& t : ts) t.tail.value = static_cast<std::uint32_t>(get_le(in, 4));
  std::vector<std::string> enames(ne);
  for (auto& s : enames) s = get_string(in);
  std::vector<std::string> rnames(nr);
  for (auto& s : rnames) s = get_string(in);
  return KnowledgeGraph::from_triples(std::move(enames), std::move(rnames), std::move(ts));
}

void save_snapshot(const KnowledgeGraph& g, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw GraphError("cannot write snapshot '" + path + "'");
  write_snapshot(g, out);
}

KnowledgeGraph load_snapshot(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw GraphError("cannot open snapshot '" + path + "'");
  return read_snapshot(in);
}

KnowledgeGraph load_graph(const std::string& path, IdScheme scheme) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw GraphError("cannot open graph file '" + path + "'");
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  const bool snapshot = in.gcount() == 4 && magic == kSnapshotMagic;
  in.clear();
  in.seekg(0);
  return snapshot ? read_snapshot(in) : read_triples(in, scheme);
}

void LabelTable::set(std::string id, std::string label) { labels_[std::move(id)] = std::move(label); }

bool LabelTable::contains(std::string_view id) const { return labels_.count(std::string(id)) > 0; }

std::string LabelTable::lookup(std::string_view id) const {
  if (auto it = labels_.find(std::string(id)); it != labels_.end()) return it->second;
  constexpr std::string_view kInv = "_inv";
  if (id.size() > kInv.size() && id.substr(id.size() - kInv.size()) == kInv) {
    auto base = labels_.find(std::string(id.substr(0, id.size() - kInv.size())));
    if (base != labels_.end()) return base->second + " (inverse)";
  }
  return std::string(kUnlabeled);
}

LabelTable LabelTable::read(std::istream& in) {
  LabelTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto view = trim(line);
    if (view.empty()) continue;
    auto tab = view.find('\t');
    if (tab == std::string_view::npos) throw IngestError(lineno, "expected 'id<TAB>label'");
    t.set(std::string(trim(view.substr(0, tab))), std::string(trim(view.substr(tab + 1))));
  }
  return t;
}

LabelTable LabelTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw GraphError("cannot open label file '" + path + "'");
  return read(in);
}

void LabelTable::write(std::ostream& out) const {
  std::vector<std::pair<std::string, std::string>> rows(labels_.begin(), labels_.end());
  std::sort(rows.begin(), rows.end());
  for (const auto& [id, label] : rows) out << id << '\t' << label << '\n';
}

}  // namespace ultrag
