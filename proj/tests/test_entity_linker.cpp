#include <doctest.h>

#include <filesystem>
#include <numeric>
#include <set>
#include <sstream>

#include "support/oracles.hpp"
#include "support/toy.hpp"
#include "ultrag/entity_linker.hpp"

using namespace ultrag;

namespace {

std::shared_ptr<const EmbeddingStore> random_store(oracle::Rng& rng, std::size_t n, std::size_t dim) {
  std::normal_distribution<float> nd(0.0f, 1.0f);
  std::vector<float> data(n * dim);
  for (auto& v : data) v = nd(rng);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("Q" + std::to_string(i));
  return std::make_shared<const EmbeddingStore>(EmbeddingStore::from_flat(dim, std::move(data), std::move(ids)));
}

std::vector<float> random_vec(oracle::Rng& rng, std::size_t dim) {
  std::normal_distribution<float> nd(0.0f, 1.0f);
  std::vector<float> v(dim);
  for (auto& x : v) x = nd(rng);
  return v;
}

// Reference softmax in long double.
std::vector<double> softmax_ref(const std::vector<double>& d, double sigma) {
  std::vector<long double> w;
  for (double x : d) w.push_back(std::exp(-static_cast<long double>(x) * x / (2.0L * sigma * sigma)));
  long double total = 0.0L;
  for (auto x : w) total += x;
  std::vector<double> out;
  for (auto x : w) out.push_back(static_cast<double>(x / total));
  return out;
}

}  // namespace

TEST_CASE("two candidate probabilities") {
  const double d[] = {0.1, 0.2};
  auto p = rbf_probabilities(d, 0.1);
  CHECK(p[0] == doctest::Approx(0.8176).epsilon(1e-4));
  CHECK(std::abs(p[0] - 0.8176) <= 1e-4);
  CHECK(std::abs(p[1] - 0.1824) <= 1e-4);
  const double tie[] = {0.3, 0.3};
  auto q = rbf_probabilities(tie, 0.1);
  CHECK(q[0] == 0.5);
  CHECK(q[1] == 0.5);
  const double one[] = {0.7};
  CHECK(rbf_probabilities(one, 0.1) == std::vector<double>{1.0});
}

TEST_CASE("probabilities are normalized and ordered") {
  oracle::Rng rng(51);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int round = 0; round < 2000; ++round) {
    std::vector<double> d(oracle::uniform(rng, 1, 20));
    for (auto& x : d) x = u(rng);
    std::sort(d.begin(), d.end());
    const double sigma = std::uniform_real_distribution<double>(0.01, 2.0)(rng);
    auto p = rbf_probabilities(d, sigma);
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    CHECK(std::abs(total - 1.0) <= 1e-9);
    for (std::size_t i = 1; i < p.size(); ++i) CHECK(p[i] <= p[i - 1]);
    auto ref = softmax_ref(d, sigma);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p[i] - ref[i]) <= 1e-9);
  }
  // Far-away candidates must not underflow to an empty distribution.
  const double far[] = {50.0, 51.0};
  auto p = rbf_probabilities(far, 0.1);
  CHECK(p[0] + p[1] == doctest::Approx(1.0));
  CHECK(p[0] == 1.0);
}

TEST_CASE("probability argument checks") {
  const double d[] = {0.1};
  CHECK_THROWS_AS((void)rbf_probabilities(d, 0.0), LinkerError);
  CHECK_THROWS_AS((void)rbf_probabilities({}, 0.1), LinkerError);
  const double neg[] = {-1.0};
  CHECK_THROWS_AS((void)rbf_probabilities(neg, 0.1), LinkerError);
}

TEST_CASE("exact search agrees with brute force") {
  oracle::Rng rng(52);
  auto store = random_store(rng, 500, 16);
  ExactSearcher s(store);
  std::vector<float> flat(store->data().begin(), store->data().end());
  for (int round = 0; round < 50; ++round) {
    auto q = random_vec(rng, 16);
    auto hits = s.search(q, 10);
    auto want = oracle::knn(flat, 16, q, 10);
    REQUIRE(hits.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
      CHECK(hits[i].row == want[i]);
      CHECK(hits[i].distance == doctest::Approx(std::sqrt(squared_l2(store->row(want[i]), q))));
    }
  }
  CHECK(s.search(random_vec(rng, 16), 10000).size() == 500);
  CHECK_THROWS_AS((void)s.search(random_vec(rng, 8), 3), LinkerError);
}

TEST_CASE("ivf-pq index structure") {
  oracle::Rng rng(53);
  auto store = random_store(rng, 2000, 32);
  IvfPqParams params;
  params.n_centroids = 16;
  params.n_subquantizers = 8;
  params.kmeans_iterations = 10;
  auto idx = IvfPqIndex::train(store, params);
  CHECK(idx.n_centroids() == 16);
  CHECK(idx.n_subquantizers() == 8);
  CHECK(idx.centroids().size() == 16 * 32);
  CHECK(idx.codebooks().size() == 8 * 256 * 4);
  std::vector<std::size_t> all;
  for (std::size_t c = 0; c < 16; ++c) {
    all.insert(all.end(), idx.list(c).begin(), idx.list(c).end());
    CHECK(idx.codes(c).size() == idx.list(c).size() * 8);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> rows(2000);
  std::iota(rows.begin(), rows.end(), 0);
  CHECK(all == rows);

  // Every row is filed under its nearest centroid.
  for (std::size_t c = 0; c < 16; ++c)
    for (auto r : idx.list(c)) {
      double best = squared_l2(store->row(r), idx.centroids().subspan(c * 32, 32));
      for (std::size_t o = 0; o < 16; ++o)
        CHECK(squared_l2(store->row(r), idx.centroids().subspan(o * 32, 32)) >= best - 1e-6);
    }

  // Probing every list with exact refinement reproduces exact search.
  idx.set_refine_factor(200);
  ExactSearcher exact(store);
  for (int round = 0; round < 20; ++round) {
    auto q = random_vec(rng, 32);
    auto a = idx.search(q, 5, 16);
    auto b = exact.search(q, 5);
    REQUIRE(a.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(a[i].row == b[i].row);
  }
}

TEST_CASE("ivf-pq finds a stored vector from a close query") {
  oracle::Rng rng(54);
  auto store = random_store(rng, 3000, 32);
  IvfPqParams params;
  params.n_centroids = 32;
  params.n_subquantizers = 8;
  auto idx = IvfPqIndex::train(store, params);
  idx.set_nprobe(8);
  std::normal_distribution<float> noise(0.0f, 0.1f);
  std::size_t found = 0;
  for (int round = 0; round < 200; ++round) {
    const auto r = oracle::uniform(rng, 0, 2999);
    std::vector<float> q(store->row(r).begin(), store->row(r).end());
    for (auto& x : q) x += noise(rng);
    auto hits = idx.search(q, 10);
    for (const auto& h : hits) found += h.row == r;
  }
  CHECK(found >= 190);
}

TEST_CASE("ivf-pq training is deterministic and validates shapes") {
  oracle::Rng rng(55);
  auto store = random_store(rng, 600, 16);
  IvfPqParams params;
  params.n_centroids = 8;
  params.n_subquantizers = 4;
  auto a = IvfPqIndex::train(store, params);
  auto b = IvfPqIndex::train(store, params);
  CHECK(std::equal(a.centroids().begin(), a.centroids().end(), b.centroids().begin()));
  CHECK(std::equal(a.codebooks().begin(), a.codebooks().end(), b.codebooks().begin()));
  params.n_subquantizers = 5;
  CHECK_THROWS_AS((void)IvfPqIndex::train(store, params), LinkerError);
  params.n_subquantizers = 4;
  params.n_centroids = 601;
  CHECK_THROWS_AS((void)IvfPqIndex::train(store, params), LinkerError);
}

TEST_CASE("kmeans on separated blobs") {
  std::vector<float> data;
  oracle::Rng rng(56);
  std::normal_distribution<float> nd(0.0f, 0.01f);
  for (float cx : {0.0f, 10.0f, 20.0f})
    for (int i = 0; i < 50; ++i) {
      data.push_back(cx + nd(rng));
      data.push_back(nd(rng));
    }
  auto c = kmeans(data, 2, 3, 20, 7);
  std::vector<float> xs{c[0], c[2], c[4]};
  std::sort(xs.begin(), xs.end());
  CHECK(xs[0] == doctest::Approx(0.0).epsilon(0.01));
  CHECK(xs[1] == doctest::Approx(10.0).epsilon(0.01));
  CHECK(xs[2] == doctest::Approx(20.0).epsilon(0.01));
  CHECK_THROWS_AS((void)kmeans(data, 2, 500, 5, 1), LinkerError);
}

TEST_CASE("embedding store files") {
  oracle::Rng rng(57);
  auto store = random_store(rng, 20, 6);
  std::stringstream io;
  store->write(io);
  auto again = EmbeddingStore::read(io);
  CHECK(again.dim() == 6);
  CHECK(again.size() == 20);
  CHECK(std::equal(again.data().begin(), again.data().end(), store->data().begin()));
  CHECK(again.find("Q7") == std::optional<std::size_t>{7});
  CHECK_FALSE(again.find("Q70").has_value());
  auto path = (std::filesystem::temp_directory_path() / "ultrag_emb_test.bin").string();
  store->save(path);
  CHECK(EmbeddingStore::load(path).size() == 20);
  std::stringstream bad("NOPE");
  CHECK_THROWS_AS((void)EmbeddingStore::read(bad), LinkerError);
  CHECK_THROWS_AS((void)EmbeddingStore::build({{1.0f, 2.0f}, {1.0f}}, {"Q1", "Q2"}), LinkerError);
  CHECK_THROWS_AS((void)EmbeddingStore::build({{1.0f}, {2.0f}}, {"Q1", "Q1"}), LinkerError);
  CHECK_THROWS_AS((void)EmbeddingStore::build({{1.0f}}, {"Q1", "Q2"}), LinkerError);
}

TEST_CASE("linking query leaves") {
  auto g = toy::graph();
  // Entity embeddings on a line; mentions sit next to their entity.
  auto entities = std::make_shared<const EmbeddingStore>(
      EmbeddingStore::build({{0.0f}, {0.1f}, {1.0f}, {5.0f}}, {"Q189", "Q119", "Q192", "Q424242"}));
  auto mentions = std::make_shared<const EmbeddingStore>(
      EmbeddingStore::build({{0.0f}, {1.0f}, {5.0f}}, {"Turing Award", "deep learning", "Nowhere"}));
  ExactSearcher searcher(entities);
  TableEncoder encoder(mentions);
  CHECK(encoder.encode("turing award").has_value());
  CHECK_FALSE(encoder.encode("unknown").has_value());

  auto q = parse_dsl("AND(<Turing Award> -> P1_inv, Q192 -> P2_inv) -> P4");
  auto res = link_query_leaves(g, q, &searcher, &encoder, 2, 0.1);
  REQUIRE(res.leaf_sets.size() == 2);
  REQUIRE(res.links.size() == 1);
  CHECK(res.links[0].mention == Mention{"Turing Award", 0});
  CHECK(res.links[0].candidates[0].entity == "Q189");
  CHECK(res.links[0].candidates[0].probability == doctest::Approx(1.0 / (1.0 + std::exp(-0.5))));
  CHECK(res.leaf_sets[0][*g.find_entity("Q189")] == res.links[0].candidates[0].probability);
  CHECK(res.leaf_sets[1].is_crisp());
  CHECK(res.diagnostics.empty());

  auto nowhere = link_query_leaves(g, parse_dsl("<Nowhere> -> P1"), &searcher, &encoder, 1, 0.1);
  CHECK(nowhere.leaf_sets[0].empty());
  CHECK_FALSE(nowhere.diagnostics.empty());
  auto missing = link_query_leaves(g, parse_dsl("Q31337 -> P1"), nullptr, nullptr, 1, 0.1);
  CHECK(missing.leaf_sets[0].empty());
  CHECK_FALSE(missing.diagnostics.empty());
  CHECK_THROWS_AS((void)link_query_leaves(g, parse_dsl("<x> -> P1"), nullptr, nullptr, 1, 0.1), LinkerError);
  CHECK_THROWS_AS((void)link_query_leaves(g, parse_dsl("<x> -> P1"), &searcher, &encoder, 1, 0.1), LinkerError);
}

TEST_CASE("fuzzy seed json") {
  auto g = toy::graph();
  LinkResult a{{"award", 0}, {{"Q189", 0.1, 0.7}, {"Q119", 0.2, 0.3}}};
  LinkResult b{{"field", 1}, {{"Q192", 0.0, 1.0}, {"Q99999", 0.5, 0.0}}};
  const LinkResult links[] = {a, b};
  auto j = fuzzy_seeds_to_json(links);
  CHECK(j["mentions"][0]["candidates"][0][0] == "Q189");
  auto spec = fuzzy_seeds_from_json(j, g);
  REQUIRE_FALSE(spec.is_crisp());
  const auto& sets = std::get<std::vector<FuzzySet>>(spec.seeds);
  REQUIRE(sets.size() == 2);
  CHECK(sets[0][*g.find_entity("Q119")] == 0.3);
  CHECK(sets[1].support_size() == 1);
  CHECK_THROWS_AS((void)fuzzy_seeds_from_json(nlohmann::json::object(), g), LinkerError);
  CHECK_THROWS_AS((void)fuzzy_seeds_from_json(nlohmann::json::parse(R"({"mentions":[{"candidates":[["Q189"]]}]})"), g),
                  LinkerError);
  CHECK_THROWS_AS(
      (void)fuzzy_seeds_from_json(nlohmann::json::parse(R"({"mentions":[{"candidates":[["Q189", 1.5]]}]})"), g),
      LinkerError);
}
