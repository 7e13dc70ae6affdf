#include <catch2/catch_amalgamated.hpp>

#include "fedleak/rng.hpp"
#include "fedleak/rouge.hpp"
#include "oracles.hpp"

using namespace fedleak;

TEST_CASE("rouge basics") {
  TokenSeq abc{1, 2, 3};
  SECTION("identical sequences score 100") {
    REQUIRE(rouge_n(abc, abc, 1).recall_percent == 100.0);
    REQUIRE(rouge_n(abc, abc, 2).recall_percent == 100.0);
  }
  SECTION("disjoint vocabularies score 0") {
    REQUIRE(rouge_n({7, 8, 9}, abc, 1).recall_percent == 0.0);
    REQUIRE(rouge_n({7, 8, 9}, abc, 2).recall_percent == 0.0);
  }
  SECTION("permutation: a c b vs a b c") {
    TokenSeq acb{1, 3, 2};
    REQUIRE(rouge_n(acb, abc, 1).recall_percent == 100.0);
    REQUIRE(rouge_n(acb, abc, 2).recall_percent == 0.0);
  }
  SECTION("reference shorter than n errors") {
    REQUIRE_THROWS(rouge_n(abc, {1}, 2));
    REQUIRE_THROWS(rouge_n(abc, abc, 3));
  }
  SECTION("clipping: candidate repeats do not over-count") {
    REQUIRE(rouge_n({1, 1, 1, 1}, {1, 2}, 1).recall_percent == 50.0);
    REQUIRE(rouge_n({1, 1}, {1, 1, 1}, 1).recall_percent == Catch::Approx(100.0 * 2 / 3));
  }
}

TEST_CASE("rouge agrees with a naive counter on random pairs") {
  Rng rng(606);
  for (int trial = 0; trial < 20; ++trial) {
    auto gen = [&](std::size_t len) {
      TokenSeq s;
      for (std::size_t i = 0; i < len; ++i) s.push_back(static_cast<TokenId>(rng.below(6)));
      return s;
    };
    TokenSeq ref = gen(2 + rng.below(8));
    TokenSeq cand = gen(1 + rng.below(10));
    for (int n : {1, 2}) {
      if (ref.size() < static_cast<std::size_t>(n)) continue;
      REQUIRE(rouge_n(cand, ref, n).recall_percent == oracles::naive_rouge_n(cand, ref, n));
    }
  }
}

TEST_CASE("corpus rouge pools counts after greedy pairing") {
  std::vector<TokenSeq> refs{{1, 2, 3}, {4, 5}};
  SECTION("all pairs identical -> 100") {
    REQUIRE(corpus_rouge({{4, 5}, {1, 2, 3}}, refs, 1) == 100.0);
    REQUIRE(corpus_rouge({{4, 5}, {1, 2, 3}}, refs, 2) == 100.0);
  }
  SECTION("unmatched references keep their denominator mass") {
    double r = corpus_rouge({{1, 2, 3}}, refs, 1);
    REQUIRE(r == Catch::Approx(100.0 * 3 / 5));
    REQUIRE(r < 100.0);
  }
  SECTION("two-pair pooled hand computation") {
    // cand1 matches 2 of 3 unigrams of ref1; cand2 matches 1 of 2 of ref2
    double r = corpus_rouge({{1, 2, 9}, {4, 9}}, refs, 1);
    REQUIRE(r == Catch::Approx(100.0 * (2 + 1) / (3 + 2)));
  }
  SECTION("empty reference set errors") { REQUIRE_THROWS(corpus_rouge({{1}}, {}, 1)); }
}

TEST_CASE("scores stay within [0, 100]") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    TokenSeq ref, cand;
    for (int i = 0; i < 4; ++i) ref.push_back(static_cast<TokenId>(rng.below(4)));
    for (int i = 0; i < 6; ++i) cand.push_back(static_cast<TokenId>(rng.below(4)));
    double r = rouge_n(cand, ref, 1).recall_percent;
    REQUIRE(r >= 0.0);
    REQUIRE(r <= 100.0);
  }
}

TEST_CASE("attack success rate thresholds") {
  std::vector<double> all100{100, 100, 100};
  REQUIRE(attack_success_rate(all100, 99) == 1.0);
  std::vector<double> low{10, 20, 30};
  REQUIRE(attack_success_rate(low, 99) == 0.0);
  std::vector<double> mixed{100, 98, 99, 50};
  REQUIRE(attack_success_rate(mixed, 99) == 0.5);
  REQUIRE_THROWS(attack_success_rate({}, 99));
  REQUIRE_THROWS(attack_success_rate(all100, 150));
}
