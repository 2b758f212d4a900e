#include <doctest.h>

#include <string>

#include "support/oracles.hpp"
#include "support/toy.hpp"
#include "ultrag/query_dsl.hpp"

using namespace ultrag;

namespace {

std::size_t parse_error_offset(std::string_view s, QueryFormat f = QueryFormat::Dsl) {
  try {
    (void)parse_query(s, f);
  } catch (const ParseError& e) {
    return e.offset();
  }
  FAIL("expected a parse error for: " << s);
  return 0;
}

}  // namespace

TEST_CASE("toy query parses to the expected tree") {
  auto q = parse_dsl(toy::kQuery);
  REQUIRE(q.kind == Query::Kind::Chain);
  CHECK(q.relations == std::vector<RelationToken>{{"P4", false}});
  const auto& and_node = q.children.front();
  REQUIRE(and_node.kind == Query::Kind::Intersection);
  REQUIRE(and_node.children.size() == 2);
  CHECK(and_node.children[0] == Query::leaf(EntityRef::entity("Q189"), {{"P1", true}}));
  CHECK(and_node.children[1] == Query::leaf(EntityRef::entity("Q192"), {{"P2", true}}));
  CHECK(serialize_dsl(q) == toy::kQuery);
  CHECK(q.num_leaves() == 2);
  CHECK(q.depth() == 2);
}

TEST_CASE("smallest queries") {
  auto q = parse_dsl("Q1 -> P1");
  CHECK(q.kind == Query::Kind::Leaf);
  CHECK(serialize_dsl(q) == "Q1 -> P1");
  CHECK(serialize_dsl(parse_dsl("  Q1->P1 ->P2_inv  ")) == "Q1 -> P1 -> P2_inv");
  CHECK(parse_dsl("Q1 -> P1 -> P2") == Query::leaf(EntityRef::entity("Q1"), {{"P1", false}, {"P2", false}}));
}

TEST_CASE("bare intersection is a whole query") {
  auto q = parse_dsl("AND(Q1 -> P1, Q2 -> P2, Q3 -> P3_inv)");
  CHECK(q.kind == Query::Kind::Intersection);
  CHECK(q.children.size() == 3);
  CHECK(serialize_dsl(q) == "AND(Q1 -> P1, Q2 -> P2, Q3 -> P3_inv)");
}

TEST_CASE("mentions") {
  auto q = parse_dsl("AND(<Turing Award> -> P1_inv, <deep learning> -> P2_inv) -> P4");
  auto ms = mentions_of(q);
  REQUIRE(ms.size() == 2);
  CHECK(ms[0] == Mention{"Turing Award", 0});
  CHECK(ms[1] == Mention{"deep learning", 1});
  CHECK(serialize_dsl(q) == "AND(<Turing Award> -> P1_inv, <deep learning> -> P2_inv) -> P4");
  auto mixed = parse_dsl("AND(Q1 -> P1, <x> -> P2)");
  CHECK(mentions_of(mixed) == std::vector<Mention>{{"x", 1}});
  CHECK_THROWS_AS((void)parse_dsl("<> -> P1"), ParseError);
  CHECK_THROWS_AS((void)parse_dsl("<open -> P1"), ParseError);
}

TEST_CASE("grammar violations carry byte offsets") {
  CHECK_THROWS_AS((void)parse_dsl("AND(Q1 -> P1)"), ParseError);
  CHECK_THROWS_AS((void)parse_dsl("AND()"), ParseError);
  CHECK_THROWS_AS((void)parse_dsl("Q1 ->"), ParseError);
  CHECK_THROWS_AS((void)parse_dsl("Q1"), ParseError);
  CHECK_THROWS_AS((void)parse_dsl("AND(Q1 -> P1, Q2 -> P2"), ParseError);
  CHECK_THROWS_AS((void)parse_dsl("AND(Q1 -> P1, Q2 -> P2))"), ParseError);
  CHECK_THROWS_AS((void)parse_dsl("OR(Q1 -> P1, Q2 -> P2)"), ParseError);
  CHECK_THROWS_AS((void)parse_dsl("Q1 -> Turing"), ParseError);
  CHECK_THROWS_AS((void)parse_dsl("Q1 -> P1_inverse"), ParseError);
  CHECK_THROWS_AS((void)parse_dsl(""), ParseError);
  CHECK(parse_error_offset("Q1 -> X2") == 6);
  CHECK(parse_error_offset("AND(Q1 -> P1)") == 12);
  CHECK(parse_error_offset("Q1 -> P1 junk") == 9);
}

TEST_CASE("betae format") {
  auto b = parse_betae(toy::kBetaE);
  CHECK(b == parse_dsl(toy::kQuery));
  CHECK(serialize_betae(b) == toy::kBetaE);
  CHECK(betae_to_dsl(toy::kBetaE) == toy::kQuery);
  CHECK(parse_betae("(Q1, (P1,))") == parse_dsl("Q1 -> P1"));
  CHECK(parse_betae("((Q1, (P1,)), (P2_inv,))") == parse_dsl("Q1 -> P1 -> P2_inv"));
  CHECK(serialize_betae(parse_dsl("Q1 -> P1 -> P2_inv")) == "((Q1, (P1,)), (P2_inv,))");
  CHECK_THROWS_AS((void)parse_betae("(Q1, (P1, P2_inv))"), ParseError);
  CHECK(parse_betae("((Q1, (P1,)), (Q2, (P2,)))") == parse_dsl("AND(Q1 -> P1, Q2 -> P2)"));
  CHECK_THROWS_AS((void)parse_betae("((Q1, (P1,)), (Q2, (P2,)), (Q3, (P3,)))"), ParseError);
  CHECK_THROWS_AS((void)parse_betae("(Q1, P1)"), ParseError);
  CHECK_THROWS_AS((void)parse_betae("(Q1, (P1,)"), ParseError);
  CHECK_THROWS_AS((void)serialize_betae(parse_dsl("AND(Q1 -> P1, Q2 -> P2, Q3 -> P3)")), std::invalid_argument);
}

TEST_CASE("nesting depth") {
  CHECK(max_nesting_depth(toy::kBetaE, QueryFormat::BetaE) == 4);
  CHECK(max_nesting_depth(toy::kQuery, QueryFormat::Dsl) == 1);
  CHECK(max_nesting_depth("Q1 -> P1", QueryFormat::Dsl) == 0);
  CHECK(max_nesting_depth("AND(<a (b)> -> P1, Q2 -> P2)", QueryFormat::Dsl) == 1);
  CHECK_THROWS_AS((void)max_nesting_depth("AND(", QueryFormat::Dsl), ParseError);
}

TEST_CASE("query classes") {
  CHECK(query_class(parse_dsl("Q1 -> P1")) == "(1)");
  CHECK(query_class(parse_dsl("Q1 -> P1 -> P2")) == "(2)");
  CHECK(query_class(parse_dsl("AND(Q1 -> P1, Q2 -> P2)")) == "(1)(1)");
  CHECK(query_class(parse_dsl("AND(Q1 -> P1, Q2 -> P2 -> P3)")) == "(2)(1)");
  CHECK(query_class(parse_dsl("AND(Q1 -> P1 -> P3, Q2 -> P2)")) == "(2)(1)");
  CHECK(query_class(parse_dsl(toy::kQuery)) == "((1)(1))");
  CHECK(query_class(parse_dsl("AND(Q1 -> P1, Q2 -> P2) -> P3 -> P4")) == "(2(1)(1))");
}

TEST_CASE("json form") {
  auto q = parse_dsl("AND(<tv> -> P1, Q2 -> P2 -> P5_inv) -> P3");
  auto j = query_to_json(q);
  CHECK(j["kind"] == "chain");
  CHECK(j["child"]["kind"] == "and");
  CHECK(j["child"]["children"][0]["anchor"]["mention"] == "tv");
  CHECK(query_from_json(j) == q);
  CHECK_THROWS_AS((void)query_from_json(nlohmann::json{{"kind", "or"}}), std::invalid_argument);
  CHECK_THROWS_AS((void)query_from_json(nlohmann::json{{"kind", "leaf"}, {"anchor", {{"entity", "Q1"}}}}),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)query_from_json(nlohmann::json::parse(
                      R"({"kind":"and","children":[{"kind":"leaf","anchor":{"entity":"Q1"},"relations":["P1"]}]})")),
                  std::invalid_argument);
}

TEST_CASE("round trip on random trees") {
  oracle::Rng rng(101);
  oracle::QueryShape shape{5, 4, 3};
  for (int i = 0; i < 3000; ++i) {
    auto q = oracle::random_query(rng, 100000, 2000, oracle::uniform(rng, 1, 5), shape, true);
    const auto text = serialize_dsl(q);
    CHECK(parse_dsl(text) == q);
    CHECK(query_from_json(query_to_json(q)) == q);
  }
}

TEST_CASE("betae and dsl agree on binary trees") {
  oracle::Rng rng(5);
  oracle::QueryShape shape{4, 2, 3};
  for (int i = 0; i < 2000; ++i) {
    auto q = oracle::random_query(rng, 500, 50, oracle::uniform(rng, 1, 4), shape);
    const auto b = serialize_betae(q);
    CHECK(parse_betae(b) == q);
    CHECK(parse_dsl(betae_to_dsl(b)) == parse_betae(b));
    CHECK(max_nesting_depth(serialize_dsl(q), QueryFormat::Dsl) <= max_nesting_depth(b, QueryFormat::BetaE));
  }
}

TEST_CASE("parser rejects arbitrary input with a structured error") {
  oracle::Rng rng(77);
  oracle::QueryShape shape{4, 3, 3};
  std::size_t rejected = 0;
  for (int i = 0; i < 4000; ++i) {
    auto seed = i % 2 ? serialize_dsl(oracle::random_query(rng, 1000, 20, 3, shape, true))
                      : serialize_betae(oracle::random_query(rng, 1000, 20, 3, oracle::QueryShape{3, 2, 2}));
    auto s = oracle::mutate(rng, seed);
    for (auto fmt : {QueryFormat::Dsl, QueryFormat::BetaE}) {
      try {
        auto q = parse_query(s, fmt);
        // Anything accepted must be a well-formed tree that serializes and re-parses.
        CHECK(parse_dsl(serialize_dsl(q)) == q);
      } catch (const ParseError& e) {
        CHECK(e.offset() <= s.size());
        ++rejected;
      }
    }
  }
  CHECK(rejected > 0);
  std::string deep(100000, '(');
  CHECK_THROWS_AS((void)parse_dsl(deep), ParseError);
  CHECK_THROWS_AS((void)parse_betae(deep), ParseError);
  std::string deep_and;
  for (int i = 0; i < 5000; ++i) deep_and += "AND(";
  CHECK_THROWS_AS((void)parse_dsl(deep_and), ParseError);
}
