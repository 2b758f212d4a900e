#include <doctest.h>

#include <cstring>
#include <numeric>
#include <set>
#include <sstream>

#include "support/oracles.hpp"
#include "support/toy.hpp"
#include "ultrag/seppr.hpp"

using namespace ultrag;

namespace {

std::vector<EntityId> random_seeds(oracle::Rng& rng, std::size_t n) {
  std::set<std::uint32_t> ids;
  const auto count = oracle::uniform(rng, 1, std::min<std::size_t>(n, 4));
  while (ids.size() < count) ids.insert(static_cast<std::uint32_t>(oracle::uniform(rng, 0, n - 1)));
  std::vector<EntityId> out;
  for (auto i : ids) out.push_back(EntityId{i});
  return out;
}

double linf(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("one step on a path") {
  std::istringstream path("Q1\tP1\tQ2\nQ2\tP1\tQ3\n");
  auto g = read_triples(path);
  SepprConfig cfg;
  cfg.steps = 1;
  auto s = seppr_scores(g, SeedSpec::crisp({*g.find_entity("Q1")}), cfg);
  CHECK(s[g.find_entity("Q1")->value] == doctest::Approx(0.15).epsilon(1e-12));
  CHECK(s[g.find_entity("Q2")->value] == doctest::Approx(0.85).epsilon(1e-12));
  CHECK(s[g.find_entity("Q3")->value] == 0.0);
  cfg.steps = 2;
  auto s2 = seppr_scores(g, SeedSpec::crisp({*g.find_entity("Q1")}), cfg);
  // B spreads half back to A and half on to C.
  CHECK(s2[g.find_entity("Q1")->value] == doctest::Approx(0.15 + 0.85 * 0.85 * 0.5));
  CHECK(s2[g.find_entity("Q3")->value] == doctest::Approx(0.85 * 0.85 * 0.5));
}

TEST_CASE("zero steps returns the seed distribution") {
  auto g = toy::graph();
  SepprConfig cfg;
  cfg.steps = 0;
  auto seeds = SeedSpec::crisp({*g.find_entity("Q192"), *g.find_entity("Q189")});
  auto top = seppr(g, seeds, cfg);
  REQUIRE(top.size() == 2);
  CHECK(top[0].score == 0.5);
  CHECK(top[0].id < top[1].id);
}

TEST_CASE("scores match dense matrix iteration") {
  oracle::Rng rng(41);
  for (int round = 0; round < 40; ++round) {
    auto raw = oracle::random_graph(rng, oracle::uniform(rng, 2, 120), oracle::uniform(rng, 1, 5),
                                    oracle::uniform(rng, 0, 500));
    auto g = raw.build();
    auto seeds = random_seeds(rng, raw.n);
    std::vector<double> x0(raw.n, 0.0);
    for (auto s : seeds) x0[s.value] = 1.0 / static_cast<double>(seeds.size());
    for (bool symmetric : {true, false}) {
      SepprConfig cfg;
      cfg.symmetric = symmetric;
      cfg.steps = oracle::uniform(rng, 0, 8);
      auto got = seppr_scores(g, SeedSpec::crisp(seeds), cfg);
      auto want = oracle::dense_ppr(raw, x0, cfg.alpha, cfg.steps, symmetric);
      CHECK(linf(got, want) <= 1e-9);
      const double mass = std::accumulate(got.begin(), got.end(), 0.0);
      CHECK(mass <= 1.0 + 1e-12);
      for (double v : got) CHECK(v >= 0.0);
    }
  }
}

TEST_CASE("worker count does not change a single bit") {
  oracle::Rng rng(42);
  for (int round = 0; round < 10; ++round) {
    auto raw = oracle::random_graph(rng, 3000, 6, 20000);
    auto g = raw.build();
    auto seeds = SeedSpec::crisp(random_seeds(rng, raw.n));
    SepprConfig cfg;
    auto base = seppr_scores(g, seeds, cfg);
    for (std::size_t w : {2, 3, 8}) {
      cfg.workers = w;
      auto other = seppr_scores(g, seeds, cfg);
      CHECK(std::memcmp(base.data(), other.data(), base.size() * sizeof(double)) == 0);
    }
  }
}

TEST_CASE("top-k ordering and positivity") {
  oracle::Rng rng(43);
  for (int round = 0; round < 30; ++round) {
    auto raw = oracle::random_graph(rng, 80, 3, 120);
    auto g = raw.build();
    SepprConfig cfg;
    cfg.top_k = oracle::uniform(rng, 1, 100);
    auto seeds = SeedSpec::crisp(random_seeds(rng, raw.n));
    auto full = seppr_scores(g, seeds, cfg);
    auto top = seppr(g, seeds, cfg);
    const auto positive = static_cast<std::size_t>(std::count_if(full.begin(), full.end(), [](double v) { return v > 0; }));
    CHECK(top.size() == std::min(cfg.top_k, positive));
    for (std::size_t i = 0; i < top.size(); ++i) {
      CHECK(top[i].score == full[top[i].id.value]);
      CHECK(top[i].score > 0.0);
      if (i > 0)
        CHECK((top[i - 1].score > top[i].score || (top[i - 1].score == top[i].score && top[i - 1].id < top[i].id)));
    }
    // Nothing left out beats the last kept entry.
    if (!top.empty()) {
      std::set<std::uint32_t> kept;
      for (const auto& t : top) kept.insert(t.id.value);
      for (std::uint32_t v = 0; v < raw.n; ++v)
        if (!kept.count(v)) CHECK(full[v] <= top.back().score);
    }
  }
}

TEST_CASE("fuzzy seeds are renormalized") {
  auto g = toy::graph();
  const auto n = g.num_entities();
  auto a = FuzzySet::from_entries(n, {{*g.find_entity("Q189"), 0.8}, {*g.find_entity("Q192"), 0.2}});
  auto b = FuzzySet::from_entries(n, {{*g.find_entity("Q192"), 0.5}});
  auto x0 = seppr_initial(g, SeedSpec::fuzzy({a, b}));
  CHECK(std::accumulate(x0.begin(), x0.end(), 0.0) == doctest::Approx(1.0));
  CHECK(x0[g.find_entity("Q189")->value] == doctest::Approx(0.8 / 1.5));
  CHECK(x0[g.find_entity("Q192")->value] == doctest::Approx(0.7 / 1.5));
  // Scaling every mention set leaves the distribution unchanged.
  auto a2 = FuzzySet::from_entries(n, {{*g.find_entity("Q189"), 0.4}, {*g.find_entity("Q192"), 0.1}});
  auto b2 = FuzzySet::from_entries(n, {{*g.find_entity("Q192"), 0.25}});
  SepprConfig cfg;
  auto s1 = seppr_scores(g, SeedSpec::fuzzy({a, b}), cfg);
  auto s2 = seppr_scores(g, SeedSpec::fuzzy({a2, b2}), cfg);
  CHECK(linf(s1, s2) <= 1e-12);
  // A crisp set as a fuzzy seed agrees with the crisp form.
  const EntityId ids[] = {*g.find_entity("Q189"), *g.find_entity("Q192")};
  auto s3 = seppr_scores(g, SeedSpec::fuzzy({FuzzySet::crisp(n, ids)}), cfg);
  auto s4 = seppr_scores(g, SeedSpec::crisp({ids[0], ids[1]}), cfg);
  CHECK(linf(s3, s4) <= 1e-12);
}

TEST_CASE("invalid seeds and configs") {
  auto g = toy::graph();
  SepprConfig cfg;
  CHECK_THROWS_AS((void)seppr(g, SeedSpec::crisp({}), cfg), SepprError);
  CHECK_THROWS_AS((void)seppr(g, SeedSpec::fuzzy({}), cfg), SepprError);
  CHECK_THROWS_AS((void)seppr(g, SeedSpec::fuzzy({FuzzySet(g.num_entities())}), cfg), SepprError);
  CHECK_THROWS_AS((void)seppr(g, SeedSpec::crisp({EntityId{999}}), cfg), SepprError);
  CHECK_THROWS_AS((void)seppr(g, SeedSpec::fuzzy({FuzzySet(3)}), cfg), SepprError);
  for (double alpha : {-0.1, 1.5}) {
    SepprConfig bad;
    bad.alpha = alpha;
    CHECK_THROWS_AS(bad.validate(), SepprError);
  }
  SepprConfig no_workers;
  no_workers.workers = 0;
  CHECK_THROWS_AS(no_workers.validate(), SepprError);
}

TEST_CASE("alpha bounds are open") {
  for (double alpha : {0.0, 1.0}) {
    SepprConfig cfg;
    cfg.alpha = alpha;
    CHECK_THROWS_AS(cfg.validate(), SepprError);
  }
  auto g = toy::graph();
  SepprConfig cfg;
  cfg.alpha = 1e-9;
  auto s = seppr_scores(g, SeedSpec::crisp({*g.find_entity("Q998")}), cfg);
  CHECK(s[g.find_entity("Q998")->value] == doctest::Approx(1.0));
}

TEST_CASE("extracted subgraph") {
  auto g = toy::graph();
  auto seeds = SeedSpec::crisp({*g.find_entity("Q189"), *g.find_entity("Q192")});
  SepprConfig cfg;
  cfg.top_k = 9;
  cfg.steps = 10;
  auto sub = extract_subgraph(g, seeds, cfg);
  CHECK(sub.num_entities() == 9);
  CHECK(sub.num_triples() == 11);
  auto capped = extract_subgraph(g, seeds, cfg, 4);
  CHECK(capped.num_triples() <= 4);
  cfg.top_k = 2;
  cfg.steps = 0;
  auto seeds_only = extract_subgraph(g, seeds, cfg);
  CHECK(seeds_only.num_entities() == 2);
  CHECK(seeds_only.num_triples() == 0);
}
