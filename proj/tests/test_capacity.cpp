#include <catch2/catch_amalgamated.hpp>

#include "fedleak/capacity.hpp"

using namespace fedleak;

namespace {

ModelConfig capacity_model(std::uint64_t seed) {
  ModelConfig c;
  c.vocab_size = 200;
  c.d_hidden = 64;
  c.reduction_factor = 2;
  c.max_seq_len = 8;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("theoretical_kmax is the min of the three dimensions") {
  REQUIRE(theoretical_kmax(32, 12, 64) == 12);
  REQUIRE(theoretical_kmax(512, 3000, 4096) == 512);
  REQUIRE(theoretical_kmax(32, 32, 32) == 32);
  REQUIRE_THROWS(theoretical_kmax(0, 1, 1));
}

TEST_CASE("measure_capacity: k == n well below the bottleneck") {
  ModelConfig mc = capacity_model(5);
  Model m = init_model(mc);
  Rng rng(9);
  std::vector<TokenSeq> batch = synthetic_capacity_batch(mc, 3, 4, rng);
  std::vector<int> labels{0, 1, 0};
  ModelGradients g = adapter_gradients(m, batch, labels);
  GradientUpdate u;
  u.embedding_adapter = g.embedding_adapter;
  u.layer_adapter = g.layer_adapter;
  u.batch_size = 3;
  std::set<TokenId> truth;
  for (const TokenSeq& s : batch) truth.insert(s.begin(), s.end());
  CapacityReport rep = measure_capacity(m, u, truth, AttackConfig{});
  REQUIRE(rep.true_unique_tokens == truth.size());
  REQUIRE(rep.recovered_tokens == rep.true_unique_tokens);
  REQUIRE(rep.recovered_tokens <= rep.subspace_rank);
  REQUIRE(rep.subspace_rank <= rep.theoretical_kmax);

  SECTION("rank-0 update recovers nothing") {
    GradientUpdate z = u;
    for (auto& blk : z.embedding_adapter) {
      std::fill(blk.grad_down_weight.data.begin(), blk.grad_down_weight.data.end(), 0.0);
      std::fill(blk.grad_down_bias.begin(), blk.grad_down_bias.end(), 1.0);  // usable but zero rows
    }
    CapacityReport r0 = measure_capacity(m, z, truth, AttackConfig{});
    REQUIRE(r0.subspace_rank == 0);
    REQUIRE(r0.recovered_tokens == 0);
  }
}

TEST_CASE("capacity_sweep emits one report per size and round, bounds hold") {
  std::vector<std::size_t> sizes{1, 2, 4, 8, 16, 32, 64};
  std::vector<CapacityReport> reports = capacity_sweep(capacity_model(7), sizes, 5, 123, 4);
  REQUIRE(reports.size() == 35);
  for (const CapacityReport& r : reports) {
    REQUIRE(r.recovered_tokens <= r.subspace_rank);
    REQUIRE(r.subspace_rank <= r.theoretical_kmax);
    REQUIRE(r.theoretical_kmax == theoretical_kmax(r.d_bottleneck, r.true_unique_tokens, r.d_hidden));
  }

  SECTION("deterministic per seed") {
    std::vector<CapacityReport> again = capacity_sweep(capacity_model(7), {4}, 2, 123, 4);
    std::vector<CapacityReport> differ = capacity_sweep(capacity_model(7), {4}, 2, 124, 4);
    REQUIRE(again[0].recovered_tokens == capacity_sweep(capacity_model(7), {4}, 2, 123, 4)[0].recovered_tokens);
    (void)differ;
  }
}

TEST_CASE("capacity curve: monotone up to the bottleneck region") {
  std::vector<std::size_t> sizes{1, 2, 4, 6};
  std::vector<CapacityReport> reports = capacity_sweep(capacity_model(11), sizes, 3, 55, 4);
  // mean k per size, region n <= 0.8 * d_bottleneck
  std::map<std::size_t, std::pair<double, int>> acc;
  for (const CapacityReport& r : reports) {
    acc[r.batch_size].first += static_cast<double>(r.recovered_tokens);
    acc[r.batch_size].second += 1;
  }
  double prev = -1.0;
  for (std::size_t b : sizes) {
    double mean_k = acc[b].first / acc[b].second;
    REQUIRE(mean_k >= prev);
    prev = mean_k;
  }
}

TEST_CASE("sweep validates inputs") {
  REQUIRE_THROWS(capacity_sweep(capacity_model(1), {0}, 5, 1, 4));
  REQUIRE_THROWS(capacity_sweep(capacity_model(1), {1}, 0, 1, 4));
}
