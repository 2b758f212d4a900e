#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ultrag/fuzzy_exec.hpp"
#include "ultrag/kg_store.hpp"
#include "ultrag/query_dsl.hpp"
#include "ultrag/seppr.hpp"

namespace ultrag {

class LinkerError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SearchHit {
  std::size_t row = 0;
  double distance = 0.0;  // L2, not squared
};

/// Row-major float matrix with one external id per row.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;

  /// Throws LinkerError on empty or ragged input, or when ids and rows disagree.
  static EmbeddingStore build(const std::vector<std::vector<float>>& vectors, std::vector<std::string> ids);
  static EmbeddingStore from_flat(std::size_t dim, std::vector<float> data, std::vector<std::string> ids);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  std::span<const float> row(std::size_t i) const { return std::span(data_).subspan(i * dim_, dim_); }
  const std::string& id(std::size_t i) const { return ids_.at(i); }
  std::span<const std::string> ids() const { return ids_; }
  std::span<const float> data() const { return data_; }
  std::optional<std::size_t> find(std::string_view id) const;

  /// Embedding file: "UEMB" | u32 version | u64 rows | u32 dim |
  /// f32 data row-major | per row u32 length + id bytes. Little-endian.
  void write(std::ostream& out) const;
  static EmbeddingStore read(std::istream& in);
  void save(const std::string& path) const;
  static EmbeddingStore load(const std::string& path);

 private:
  std::size_t dim_ = 0;
  std::vector<float> data_;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

double squared_l2(std::span<const float> a, std::span<const float> b);

/// Nearest-neighbor backend behind the linker.
class VectorSearcher {
 public:
  virtual ~VectorSearcher() = default;
  /// At most k hits, ascending distance, ties by row.
  virtual std::vector<SearchHit> search(std::span<const float> query, std::size_t k) const = 0;
  virtual const EmbeddingStore& store() const = 0;
};

class ExactSearcher final : public VectorSearcher {
 public:
  explicit ExactSearcher(std::shared_ptr<const EmbeddingStore> store) : store_(std::move(store)) {}
  std::vector<SearchHit> search(std::span<const float> query, std::size_t k) const override;
  const EmbeddingStore& store() const override { return *store_; }

 private:
  std::shared_ptr<const EmbeddingStore> store_;
};

struct IvfPqParams {
  std::size_t n_centroids = 16384;
  std::size_t n_subquantizers = 128;
  std::size_t kmeans_iterations = 25;
  std::size_t max_training_points = 100000;
  std::uint64_t seed = 1234;
};

/// Inverted file over a k-means coarse quantizer with 8-bit product-quantized residuals.
class IvfPqIndex final : public VectorSearcher {
 public:
  static constexpr std::size_t kBitsPerCode = 8;
  static constexpr std::size_t kCodebookSize = 1u << kBitsPerCode;

  static IvfPqIndex train(std::shared_ptr<const EmbeddingStore> store, const IvfPqParams& params);

  void set_nprobe(std::size_t nprobe) { nprobe_ = nprobe; }
  std::size_t nprobe() const { return nprobe_; }
  /// Candidates re-scored with exact distances: k * refine_factor. 0 keeps raw PQ distances.
  void set_refine_factor(std::size_t f) { refine_factor_ = f; }
  std::size_t refine_factor() const { return refine_factor_; }

  std::vector<SearchHit> search(std::span<const float> query, std::size_t k) const override;
  std::vector<SearchHit> search(std::span<const float> query, std::size_t k, std::size_t nprobe) const;
  const EmbeddingStore& store() const override { return *store_; }

  std::size_t n_centroids() const { return n_lists_; }
  std::size_t n_subquantizers() const { return n_sub_; }
  std::span<const std::size_t> list(std::size_t c) const { return lists_.at(c); }
  std::span<const float> centroids() const { return centroids_; }
  std::span<const float> codebooks() const { return codebooks_; }
  std::span<const std::uint8_t> codes(std::size_t c) const { return codes_.at(c); }

 private:
  std::shared_ptr<const EmbeddingStore> store_;
  std::size_t n_lists_ = 0;
  std::size_t n_sub_ = 0;
  std::size_t dsub_ = 0;
  std::size_t nprobe_ = 16;
  std::size_t refine_factor_ = 0;
  std::vector<float> centroids_;  // n_lists x dim
  std::vector<float> codebooks_;  // n_sub x 256 x dsub
  std::vector<std::vector<std::size_t>> lists_;
  std::vector<std::vector<std::uint8_t>> codes_;  // per list, n_sub bytes per entry
};

/// Lloyd k-means with seeded initialization; empty clusters are re-seeded by
/// splitting the largest one. Returns k x dim centroids.
std::vector<float> kmeans(std::span<const float> data, std::size_t dim, std::size_t k, std::size_t iterations,
                          std::uint64_t seed);

struct LinkCandidate {
  std::string entity;
  double distance = 0.0;
  double probability = 0.0;
};

struct LinkResult {
  Mention mention;
  std::vector<LinkCandidate> candidates;
};

/// softmax(-d^2 / (2 sigma^2)) over the given distances.
std::vector<double> rbf_probabilities(std::span<const double> distances, double sigma);

/// Top-k candidates for one mention vector with RBF probabilities normalized over the retrieved set.
LinkResult link(const VectorSearcher& searcher, std::span<const float> mention_vec, std::size_t k, double sigma,
                Mention mention = {});

/// Maps mention text to its (precomputed) embedding.
class MentionEncoder {
 public:
  virtual ~MentionEncoder() = default;
  virtual std::optional<std::vector<float>> encode(std::string_view text) const = 0;
};

/// Looks mentions up in an embedding store keyed by mention text, case-insensitively.
class TableEncoder final : public MentionEncoder {
 public:
  explicit TableEncoder(std::shared_ptr<const EmbeddingStore> table);
  std::optional<std::vector<float>> encode(std::string_view text) const override;

 private:
  std::shared_ptr<const EmbeddingStore> table_;
  std::unordered_map<std::string, std::size_t> lower_;
};

struct LinkerConfig {
  std::size_t k = 10;
  double sigma = 0.1;
  std::size_t nprobe = 16;
  bool exact = false;
};

struct LeafLinking {
  std::vector<FuzzySet> leaf_sets;
  std::vector<LinkResult> links;  // one per mention leaf
  std::vector<std::string> diagnostics;
};

/// One fuzzy set per leaf of q. Entity leaves become crisp singletons; mention
/// leaves get their link probabilities. Candidates missing from g are dropped.
LeafLinking link_query_leaves(const KnowledgeGraph& g, const Query& q, const VectorSearcher* searcher,
                              const MentionEncoder* encoder, std::size_t k, double sigma);

/// {"mentions":[{"text":...,"candidates":[["Q...",p],...]}]}
nlohmann::json fuzzy_seeds_to_json(std::span<const LinkResult> links);
/// One fuzzy set per mention; ids absent from g are skipped.
SeedSpec fuzzy_seeds_from_json(const nlohmann::json& j, const KnowledgeGraph& g);

}  // namespace ultrag
