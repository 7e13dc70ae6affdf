#pragma once

#include "fedleak/attack.hpp"

namespace fedleak {

// Recoverable-token assessment: theoretical bound and the empirically
// measured word-bag recovery for a given update.
struct CapacityReport {
  std::size_t d_bottleneck = 0;
  std::size_t d_hidden = 0;
  std::size_t true_unique_tokens = 0;  // n, end marker included when present
  std::size_t subspace_rank = 0;       // rank(S_EA)
  std::size_t recovered_tokens = 0;    // k: exact word-bag membership of true tokens
  std::size_t theoretical_kmax = 0;    // min(d_bottleneck, n, d_hidden)
  std::size_t batch_size = 0;
  std::size_t round = 0;
};

inline std::size_t theoretical_kmax(std::size_t d_bottleneck, std::size_t n, std::size_t d_hidden) {
  require(d_bottleneck > 0 && n > 0 && d_hidden > 0, "theoretical_kmax: arguments must be positive");
  return std::min(d_bottleneck, std::min(n, d_hidden));
}

inline CapacityReport measure_capacity(const Model& m, const GradientUpdate& update,
                                       const std::set<TokenId>& ground_truth_tokens,
                                       const AttackConfig& config) {
  AttackSubspaces spaces = build_attack_subspaces(update, config);
  WordBag bag = infer_word_bag(m, spaces.ea, config);
  CapacityReport rep;
  rep.d_bottleneck = m.config.d_bottleneck();
  rep.d_hidden = m.config.d_hidden;
  rep.true_unique_tokens = ground_truth_tokens.size();
  rep.subspace_rank = spaces.ea.rank();
  for (TokenId t : ground_truth_tokens) {
    if (bag.contains(t)) ++rep.recovered_tokens;
  }
  rep.theoretical_kmax = theoretical_kmax(rep.d_bottleneck, rep.true_unique_tokens, rep.d_hidden);
  return rep;
}

// Synthetic batch for the capacity experiment: `batch_size` sentences of
// `sentence_len` tokens sampled uniformly without replacement within each
// sentence, end marker (token 0) appended.
inline std::vector<TokenSeq> synthetic_capacity_batch(const ModelConfig& cfg, std::size_t batch_size,
                                                      std::size_t sentence_len, Rng& rng) {
  require(sentence_len + 1 <= cfg.max_seq_len, "capacity: sentence_len exceeds max_seq_len");
  std::vector<TokenSeq> batch;
  for (std::size_t i = 0; i < batch_size; ++i) {
    std::set<TokenId> used;
    TokenSeq seq;
    while (seq.size() < sentence_len) {
      TokenId t = 1 + static_cast<TokenId>(rng.below(cfg.vocab_size - 1));
      if (used.insert(t).second) seq.push_back(t);
    }
    seq.push_back(0);
    batch.push_back(std::move(seq));
  }
  return batch;
}

inline std::vector<CapacityReport> capacity_sweep(const ModelConfig& model_config,
                                                  const std::vector<std::size_t>& batch_sizes,
                                                  std::size_t rounds, std::uint64_t seed,
                                                  std::size_t sentence_len = 4,
                                                  const AttackConfig& attack_config = {}) {
  for (std::size_t b : batch_sizes) require(b > 0, "capacity_sweep: batch sizes must be positive");
  require(rounds >= 1, "capacity_sweep: rounds must be >= 1");
  Model m = init_model(model_config);
  AttackConfig cfg = attack_config;
  cfg.mode = model_config.attention_mode;
  std::vector<CapacityReport> out;
  for (std::size_t bi = 0; bi < batch_sizes.size(); ++bi) {
    for (std::size_t r = 0; r < rounds; ++r) {
      Rng rng(derive_seed(seed, bi, r));
      std::vector<TokenSeq> batch = synthetic_capacity_batch(model_config, batch_sizes[bi], sentence_len, rng);
      std::vector<int> labels(batch.size());
      for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 2);
      ModelGradients g = adapter_gradients(m, batch, labels);
      GradientUpdate u;
      u.embedding_adapter = std::move(g.embedding_adapter);
      u.layer_adapter = std::move(g.layer_adapter);
      u.batch_size = static_cast<std::uint32_t>(batch.size());
      u.round_id = static_cast<std::uint32_t>(r);
      std::set<TokenId> truth;
      for (const TokenSeq& s : batch) truth.insert(s.begin(), s.end());
      CapacityReport rep = measure_capacity(m, u, truth, cfg);
      rep.batch_size = batch_sizes[bi];
      rep.round = r;
      out.push_back(rep);
    }
  }
  return out;
}

}  // namespace fedleak
