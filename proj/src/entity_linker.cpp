#include "ultrag/entity_linker.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <queue>
#include <random>

namespace ultrag {

namespace {

constexpr std::array<char, 4> kEmbeddingMagic = {'U', 'E', 'M', 'B'};
constexpr std::uint32_t kEmbeddingVersion = 1;

void put_le(std::ostream& out, std::uint64_t v, int width) {
  std::array<char, 8> b{};
  for (int i = 0; i < width; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), width);
}

std::uint64_t get_le(std::istream& in, int width) {
  std::array<unsigned char, 8> b{};
  in.read(reinterpret_cast<char*>(b.data()), width);
  if (!in) throw LinkerError("embedding file truncated");
  std::uint64_t v = 0;
  for (int i = width - 1; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

bool hit_order(const SearchHit& a, const SearchHit& b) {
  if (a.distance != b.distance) return a.distance < b.distance;
  return a.row < b.row;
}

/// Bounded max-heap keeping the k smallest (squared distance, row) pairs.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) {}

  void push(double d2, std::size_t row) {
    if (k_ == 0) return;
    if (heap_.size() < k_) {
      heap_.emplace(d2, row);
    } else if (std::pair(d2, row) < heap_.top()) {
      heap_.pop();
      heap_.emplace(d2, row);
    }
  }

  std::vector<std::pair<double, std::size_t>> sorted() && {
    std::vector<std::pair<double, std::size_t>> out;
    out.reserve(heap_.size());
    while (!heap_.empty()) {
      out.push_back(heap_.top());
      heap_.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

 private:
  std::size_t k_;
  std::priority_queue<std::pair<double, std::size_t>> heap_;
};

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::size_t nearest_centroid(std::span<const float> v, std::span<const float> centroids, std::size_t dim) {
  const std::size_t k = centroids.size() / dim;
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < k; ++c) {
    const double d = squared_l2(v, centroids.subspan(c * dim, dim));
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

}  // namespace

double squared_l2(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc;
}

EmbeddingStore EmbeddingStore::build(const std::vector<std::vector<float>>& vectors, std::vector<std::string> ids) {
  if (vectors.empty()) throw LinkerError("embedding store needs at least one vector");
  const auto dim = vectors.front().size();
  std::vector<float> flat;
  flat.reserve(vectors.size() * dim);
  for (const auto& v : vectors) {
    if (v.size() != dim) throw LinkerError("ragged embedding input");
    flat.insert(flat.end(), v.begin(), v.end());
  }
  return from_flat(dim, std::move(flat), std::move(ids));
}

EmbeddingStore EmbeddingStore::from_flat(std::size_t dim, std::vector<float> data, std::vector<std::string> ids) {
  if (dim == 0) throw LinkerError("embedding dimension must be positive");
  if (ids.empty()) throw LinkerError("embedding store needs at least one vector");
  if (data.size() != ids.size() * dim) throw LinkerError("embedding data does not match ids x dim");
  EmbeddingStore s;
  s.dim_ = dim;
  s.data_ = std::move(data);
  s.ids_ = std::move(ids);
  for (std::size_t i = 0; i < s.ids_.size(); ++i)
    if (!s.lookup_.try_emplace(s.ids_[i], i).second) throw LinkerError("duplicate embedding id '" + s.ids_[i] + "'");
  return s;
}

std::optional<std::size_t> EmbeddingStore::find(std::string_view id) const {
  auto it = lookup_.find(std::string(id));
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

void EmbeddingStore::write(std::ostream& out) const {
  out.write(kEmbeddingMagic.data(), kEmbeddingMagic.size());
  put_le(out, kEmbeddingVersion, 4);
  put_le(out, ids_.size(), 8);
  put_le(out, dim_, 4);
  for (float f : data_) put_le(out, std::bit_cast<std::uint32_t>(f), 4);
  for (const auto& id : ids_) {
    put_le(out, id.size(), 4);
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
  }
}

EmbeddingStore EmbeddingStore::read(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kEmbeddingMagic) throw LinkerError("not an embedding file (bad magic)");
  if (get_le(in, 4) != kEmbeddingVersion) throw LinkerError("unsupported embedding file version");
  const auto rows = get_le(in, 8);
  const auto dim = get_le(in, 4);
  if (dim == 0 || rows == 0 || rows > (std::uint64_t{1} << 40) / dim) throw LinkerError("bad embedding header");
  std::vector<float> data(rows * dim);
  for (auto& f : data) f = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(in, 4)));
  std::vector<std::string> ids(rows);
  for (auto& id : ids) {
    const auto n = get_le(in, 4);
    if (n > (1u << 20)) throw LinkerError("embedding id too long");
    id.resize(n);
    in.read(id.data(), static_cast<std::streamsize>(n));
    if (!in) throw LinkerError("embedding file truncated");
  }
  return from_flat(dim, std::move(data), std::move(ids));
}

void EmbeddingStore::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LinkerError("cannot write embedding file '" + path + "'");
  write(out);
}

EmbeddingStore EmbeddingStore::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LinkerError("cannot open embedding file '" + path + "'");
  return read(in);
}

std::vector<SearchHit> ExactSearcher::search(std::span<const float> query, std::size_t k) const {
  if (query.size() != store_->dim()) throw LinkerError("query dimension mismatch");
  TopK top(std::min(k, store_->size()));
  for (std::size_t i = 0; i < store_->size(); ++i) top.push(squared_l2(query, store_->row(i)), i);
  std::vector<SearchHit> hits;
  for (const auto& [d2, row] : std::move(top).sorted()) hits.push_back({row, std::sqrt(d2)});
  return hits;
}

std::vector<float> kmeans(std::span<const float> data, std::size_t dim, std::size_t k, std::size_t iterations,
                          std::uint64_t seed) {
  const std::size_t n = data.size() / dim;
  if (k == 0 || n < k) throw LinkerError("k-means needs at least as many points as centroids");
  std::mt19937_64 rng(seed);

  // Initialize from k distinct rows (partial Fisher-Yates, portable index draw).
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) std::swap(perm[i], perm[i + rng() % (n - i)]);
  std::vector<float> centroids(k * dim);
  for (std::size_t c = 0; c < k; ++c)
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(perm[c] * dim), dim,
                centroids.begin() + static_cast<std::ptrdiff_t>(c * dim));

  std::vector<std::size_t> assign(n, 0);
  std::vector<double> sums(k * dim);
  std::vector<std::size_t> counts(k);
  for (std::size_t it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) assign[i] = nearest_centroid(data.subspan(i * dim, dim), centroids, dim);
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      for (std::size_t d = 0; d < dim; ++d) sums[assign[i] * dim + d] += data[i * dim + d];
    }
    for (std::size_t c = 0; c < k; ++c)
      if (counts[c] > 0)
        for (std::size_t d = 0; d < dim; ++d)
          centroids[c * dim + d] = static_cast<float>(sums[c * dim + d] / static_cast<double>(counts[c]));
    // Re-seed empty clusters by splitting the most populated one.
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      const auto big = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
      if (counts[big] < 2) break;
      constexpr float kEps = 1.0f / 1024.0f;
      for (std::size_t d = 0; d < dim; ++d) {
        const float sign = (d % 2 == 0) ? 1.0f : -1.0f;
        const float base = centroids[big * dim + d];
        centroids[c * dim + d] = base * (1.0f + sign * kEps) + sign * kEps;
        centroids[big * dim + d] = base * (1.0f - sign * kEps) - sign * kEps;
      }
      counts[c] = counts[big] / 2;
      counts[big] -= counts[c];
    }
  }
  return centroids;
}

IvfPqIndex IvfPqIndex::train(std::shared_ptr<const EmbeddingStore> store, const IvfPqParams& params) {
  if (!store) throw LinkerError("no embedding store");
  const auto n = store->size();
  const auto dim = store->dim();
  if (params.n_centroids == 0 || n < params.n_centroids)
    throw LinkerError("IVF-PQ needs at least as many vectors as centroids");
  if (params.n_subquantizers == 0 || dim % params.n_subquantizers != 0)
    throw LinkerError("dimension must be divisible by the number of subquantizers");

  IvfPqIndex idx;
  idx.store_ = store;
  idx.n_lists_ = params.n_centroids;
  idx.n_sub_ = params.n_subquantizers;
  idx.dsub_ = dim / params.n_subquantizers;

  // Training sample.
  std::vector<std::size_t> sample(n);
  std::iota(sample.begin(), sample.end(), std::size_t{0});
  if (n > params.max_training_points) {
    std::mt19937_64 rng(params.seed ^ 0x9e3779b97f4a7c15ULL);
    for (std::size_t i = 0; i < params.max_training_points; ++i) std::swap(sample[i], sample[i + rng() % (n - i)]);
    sample.resize(params.max_training_points);
    std::sort(sample.begin(), sample.end());
  }
  std::vector<float> train(sample.size() * dim);
  for (std::size_t i = 0; i < sample.size(); ++i) {
    auto r = store->row(sample[i]);
    std::copy(r.begin(), r.end(), train.begin() + static_cast<std::ptrdiff_t>(i * dim));
  }

  if (sample.size() < idx.n_lists_) throw LinkerError("training sample smaller than the number of centroids");
  idx.centroids_ = kmeans(train, dim, idx.n_lists_, params.kmeans_iterations, params.seed);

  // Residuals of the training sample, one sub-block at a time.
  std::vector<float> residual(sample.size() * dim);
  for (std::size_t i = 0; i < sample.size(); ++i) {
    std::span<const float> v(train.data() + i * dim, dim);
    const auto c = nearest_centroid(v, idx.centroids_, dim);
    for (std::size_t d = 0; d < dim; ++d) residual[i * dim + d] = v[d] - idx.centroids_[c * dim + d];
  }
  const std::size_t ksub = std::min(kCodebookSize, sample.size());
  idx.codebooks_.assign(idx.n_sub_ * kCodebookSize * idx.dsub_, 0.0f);
  std::vector<float> block(sample.size() * idx.dsub_);
  for (std::size_t m = 0; m < idx.n_sub_; ++m) {
    for (std::size_t i = 0; i < sample.size(); ++i)
      std::copy_n(residual.begin() + static_cast<std::ptrdiff_t>(i * dim + m * idx.dsub_), idx.dsub_,
                  block.begin() + static_cast<std::ptrdiff_t>(i * idx.dsub_));
    auto cb = kmeans(block, idx.dsub_, ksub, params.kmeans_iterations, params.seed + 1 + m);
    std::copy(cb.begin(), cb.end(), idx.codebooks_.begin() + static_cast<std::ptrdiff_t>(m * kCodebookSize * idx.dsub_));
    // Unused codewords (ksub < 256) stay far away so they are never chosen.
    for (std::size_t j = ksub; j < kCodebookSize; ++j)
      for (std::size_t d = 0; d < idx.dsub_; ++d)
        idx.codebooks_[(m * kCodebookSize + j) * idx.dsub_ + d] = std::numeric_limits<float>::max() / 4;
  }

  // Encode every row.
  idx.lists_.assign(idx.n_lists_, {});
  idx.codes_.assign(idx.n_lists_, {});
  std::vector<float> r(dim);
  for (std::size_t i = 0; i < n; ++i) {
    auto v = store->row(i);
    const auto c = nearest_centroid(v, idx.centroids_, dim);
    for (std::size_t d = 0; d < dim; ++d) r[d] = v[d] - idx.centroids_[c * dim + d];
    idx.lists_[c].push_back(i);
    for (std::size_t m = 0; m < idx.n_sub_; ++m) {
      std::span<const float> sub(r.data() + m * idx.dsub_, idx.dsub_);
      std::span<const float> cb(idx.codebooks_.data() + m * kCodebookSize * idx.dsub_, ksub * idx.dsub_);
      idx.codes_[c].push_back(static_cast<std::uint8_t>(nearest_centroid(sub, cb, idx.dsub_)));
    }
  }
  return idx;
}

std::vector<SearchHit> IvfPqIndex::search(std::span<const float> query, std::size_t k) const {
  return search(query, k, nprobe_);
}

std::vector<SearchHit> IvfPqIndex::search(std::span<const float> query, std::size_t k, std::size_t nprobe) const {
  const auto dim = store_->dim();
  if (query.size() != dim) throw LinkerError("query dimension mismatch");
  if (k == 0) return {};
  nprobe = std::clamp<std::size_t>(nprobe, 1, n_lists_);

  std::vector<std::pair<double, std::size_t>> coarse(n_lists_);
  for (std::size_t c = 0; c < n_lists_; ++c)
    coarse[c] = {squared_l2(query, std::span(centroids_).subspan(c * dim, dim)), c};
  std::partial_sort(coarse.begin(), coarse.begin() + static_cast<std::ptrdiff_t>(nprobe), coarse.end());

  const std::size_t shortlist = refine_factor_ > 0 ? k * refine_factor_ : k;
  TopK top(shortlist);
  std::vector<double> table(n_sub_ * kCodebookSize);
  for (std::size_t p = 0; p < nprobe; ++p) {
    const auto c = coarse[p].second;
    for (std::size_t m = 0; m < n_sub_; ++m) {
      for (std::size_t j = 0; j < kCodebookSize; ++j) {
        double acc = 0.0;
        for (std::size_t d = 0; d < dsub_; ++d) {
          const double rq = static_cast<double>(query[m * dsub_ + d]) - centroids_[c * dim + m * dsub_ + d];
          const double diff = rq - codebooks_[(m * kCodebookSize + j) * dsub_ + d];
          acc += diff * diff;
        }
        table[m * kCodebookSize + j] = acc;
      }
    }
    const auto& rows = lists_[c];
    const auto& codes = codes_[c];
    for (std::size_t e = 0; e < rows.size(); ++e) {
      double d2 = 0.0;
      for (std::size_t m = 0; m < n_sub_; ++m) d2 += table[m * kCodebookSize + codes[e * n_sub_ + m]];
      top.push(d2, rows[e]);
    }
  }
  auto approx = std::move(top).sorted();
  std::vector<SearchHit> hits;
  if (refine_factor_ > 0) {
    for (const auto& [d2, row] : approx) hits.push_back({row, std::sqrt(squared_l2(query, store_->row(row)))});
    std::sort(hits.begin(), hits.end(), hit_order);
    if (hits.size() > k) hits.resize(k);
  } else {
    for (const auto& [d2, row] : approx) hits.push_back({row, std::sqrt(d2)});
  }
  return hits;
}

std::vector<double> rbf_probabilities(std::span<const double> distances, double sigma) {
  if (!(sigma > 0.0)) throw LinkerError("sigma must be positive");
  if (distances.empty()) throw LinkerError("cannot normalize over zero candidates");
  std::vector<double> logits(distances.size());
  for (std::size_t i = 0; i < distances.size(); ++i) {
    if (!(distances[i] >= 0.0)) throw LinkerError("distances must be non-negative");
    logits[i] = -(distances[i] * distances[i]) / (2.0 * sigma * sigma);
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (auto& l : logits) total += (l = std::exp(l - top));
  for (auto& l : logits) l /= total;
  return logits;
}

LinkResult link(const VectorSearcher& searcher, std::span<const float> mention_vec, std::size_t k, double sigma,
                Mention mention) {
  if (k == 0) throw LinkerError("link needs k >= 1");
  if (!(sigma > 0.0)) throw LinkerError("sigma must be positive");
  const auto hits = searcher.search(mention_vec, k);
  std::vector<double> dists;
  dists.reserve(hits.size());
  for (const auto& h : hits) dists.push_back(h.distance);
  LinkResult out;
  out.mention = std::move(mention);
  if (hits.empty()) return out;
  const auto probs = rbf_probabilities(dists, sigma);
  for (std::size_t i = 0; i < hits.size(); ++i)
    out.candidates.push_back({searcher.store().id(hits[i].row), hits[i].distance, probs[i]});
  return out;
}

TableEncoder::TableEncoder(std::shared_ptr<const EmbeddingStore> table) : table_(std::move(table)) {
  for (std::size_t i = 0; i < table_->size(); ++i) lower_.try_emplace(lowercase(table_->id(i)), i);
}

std::optional<std::vector<float>> TableEncoder::encode(std::string_view text) const {
  auto row = table_->find(text);
  if (!row) {
    auto it = lower_.find(lowercase(text));
    if (it == lower_.end()) return std::nullopt;
    row = it->second;
  }
  auto r = table_->row(*row);
  return std::vector<float>(r.begin(), r.end());
}

LeafLinking link_query_leaves(const KnowledgeGraph& g, const Query& q, const VectorSearcher* searcher,
                              const MentionEncoder* encoder, std::size_t k, double sigma) {
  LeafLinking out;
  const auto leaves = q.leaves();
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const auto& leaf = leaves[i];
    if (!leaf.is_mention()) {
      auto e = g.find_entity(leaf.text);
      if (!e) {
        out.diagnostics.push_back("entity '" + leaf.text + "' is not in the graph; leaf is empty");
        out.leaf_sets.emplace_back(g.num_entities());
      } else {
        const EntityId one[] = {*e};
        out.leaf_sets.push_back(FuzzySet::crisp(g.num_entities(), one));
      }
      continue;
    }
    if (!searcher || !encoder) throw LinkerError("query has mention '" + leaf.text + "' but no entity linker is configured");
    auto vec = encoder->encode(leaf.text);
    if (!vec) throw LinkerError("no embedding for mention '" + leaf.text + "'");
    auto result = link(*searcher, *vec, k, sigma, Mention{leaf.text, i});
    std::vector<Membership> entries;
    for (const auto& c : result.candidates) {
      auto e = g.find_entity(c.entity);
      if (!e) continue;
      if (c.probability > 0.0) entries.push_back({*e, c.probability});
    }
    if (entries.size() < result.candidates.size())
      out.diagnostics.push_back("mention '" + leaf.text + "': " +
                                std::to_string(result.candidates.size() - entries.size()) +
                                " candidates outside the graph were dropped");
    out.leaf_sets.push_back(FuzzySet::from_entries(g.num_entities(), std::move(entries)));
    out.links.push_back(std::move(result));
  }
  return out;
}

nlohmann::json fuzzy_seeds_to_json(std::span<const LinkResult> links) {
  auto mentions = nlohmann::json::array();
  for (const auto& l : links) {
    auto cands = nlohmann::json::array();
    for (const auto& c : l.candidates) cands.push_back(nlohmann::json::array({c.entity, c.probability}));
    mentions.push_back({{"text", l.mention.text}, {"candidates", cands}});
  }
  return {{"mentions", mentions}};
}

SeedSpec fuzzy_seeds_from_json(const nlohmann::json& j, const KnowledgeGraph& g) {
  if (!j.is_object() || !j.contains("mentions") || !j["mentions"].is_array())
    throw LinkerError("fuzzy seed JSON needs a 'mentions' array");
  std::vector<FuzzySet> sets;
  for (const auto& m : j["mentions"]) {
    if (!m.is_object() || !m.contains("candidates") || !m["candidates"].is_array())
      throw LinkerError("each mention needs a 'candidates' array");
    std::vector<Membership> entries;
    for (const auto& c : m["candidates"]) {
      if (!c.is_array() || c.size() != 2 || !c[0].is_string() || !c[1].is_number())
        throw LinkerError("candidate must be [\"Q...\", probability]");
      auto e = g.find_entity(c[0].get<std::string>());
      const double p = c[1].get<double>();
      if (!e || p <= 0.0) continue;
      if (p > 1.0) throw LinkerError("candidate probability above 1");
      auto dup = std::find_if(entries.begin(), entries.end(), [&](const Membership& x) { return x.id == *e; });
      if (dup != entries.end())
        dup->value = std::min(1.0, dup->value + p);
      else
        entries.push_back({*e, p});
    }
    sets.push_back(FuzzySet::from_entries(g.num_entities(), std::move(entries)));
  }
  return SeedSpec::fuzzy(std::move(sets));
}

}  // namespace ultrag
