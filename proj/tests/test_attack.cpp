#include <catch2/catch_amalgamated.hpp>

#include "fedleak/attack.hpp"
#include "oracles.hpp"

using namespace fedleak;

namespace {

ModelConfig attack_config_model(std::uint64_t seed, AttentionMode mode = AttentionMode::unidirectional) {
  ModelConfig c;
  c.vocab_size = 60;
  c.d_hidden = 64;
  c.reduction_factor = 2;
  c.attention_mode = mode;
  c.max_seq_len = 8;
  c.seed = seed;
  return c;
}

struct Scenario {
  Model model;
  Corpus corpus;
  CorpusStats stats;
  ClientDataset dataset;
  GradientUpdate update;
  AttackConfig attack;
  std::vector<std::string> truth;
};

// Token-disjoint synthetic corpus; the batch takes the first `batch` lines.
Scenario make_scenario(std::uint64_t seed, std::size_t batch, std::size_t sentence_len,
                       AttentionMode mode = AttentionMode::unidirectional, std::size_t n_sentences = 8) {
  Scenario s;
  s.model = init_model(attack_config_model(seed, mode));
  Rng rng(derive_seed(seed, 1));
  std::vector<std::string> lines;
  std::vector<TokenId> pool;
  for (TokenId t = 0; t + 1 < s.model.config.vocab_size; ++t) pool.push_back(t);
  for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng.below(i)]);
  std::size_t at = 0;
  for (std::size_t i = 0; i < n_sentences; ++i) {
    std::string line;
    for (std::size_t j = 0; j < sentence_len; ++j) {
      if (!line.empty()) line += ' ';
      line += "w" + std::to_string(pool[at++]);
    }
    lines.push_back(line);
  }
  s.corpus = corpus_from_lines(lines, s.model.config.max_seq_len);
  s.stats = build_corpus_stats(s.corpus);
  s.dataset.sequences = s.corpus.sequences;
  s.dataset.labels.resize(s.corpus.sequences.size());
  for (std::size_t i = 0; i < s.dataset.labels.size(); ++i) s.dataset.labels[i] = static_cast<int>(i % 2);
  s.dataset.source_texts = s.corpus.sentences;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < batch; ++i) idx.push_back(i);
  s.update = client_round(s.model, s.dataset, idx);
  s.attack.mode = mode;
  s.attack.beam_width = 64;
  s.attack.max_len = s.model.config.max_seq_len;
  for (std::size_t i = 0; i < batch; ++i) s.truth.push_back(s.corpus.sentences[i]);
  return s;
}

}  // namespace

TEST_CASE("weight_bias_ratios skips dead neurons and divides rows by bias grads") {
  AdapterGradients g;
  g.grad_down_weight = Matrix(3, 2);
  g.grad_down_bias = {2.0, 0.0, -4.0};
  g.grad_down_weight.at(0, 0) = 4.0;
  g.grad_down_weight.at(0, 1) = 6.0;
  g.grad_down_weight.at(2, 0) = 8.0;
  g.grad_down_weight.at(2, 1) = -2.0;
  g.grad_up_weight = Matrix(2, 3);
  g.grad_up_bias = {0.0, 0.0};
  RatioVectorSet r = weight_bias_ratios(g, 1e-12);
  REQUIRE(r.vectors.size() == 2);
  REQUIRE(r.vectors[0] == Vec{2.0, 3.0});
  REQUIRE(r.vectors[1] == Vec{-2.0, 0.5});
  REQUIRE(r.skipped_neurons.size() == 1);
  REQUIRE(r.skipped_neurons[0].first == 1);
  REQUIRE(r.skipped_neurons[0].second == "dead_or_tiny_bias_grad");
}

TEST_CASE("ratio vectors lie in the span of activating adapter inputs") {
  Scenario s = make_scenario(11, 2, 3);
  ForwardTrace trace;
  std::vector<TokenSeq> batch{s.dataset.sequences[0], s.dataset.sequences[1]};
  std::vector<int> labels{0, 1};
  adapter_gradients(s.model, batch, labels, &trace);
  RatioVectorSet ratios = weight_bias_ratios(s.update.embedding_adapter[0], 1e-12);
  // span of all embedding-adapter inputs recorded in the trace
  std::vector<Vec> inputs;
  for (const SequenceTrace& st : trace.sequences) {
    for (const Vec& v : st.ea_inputs) inputs.push_back(v);
  }
  Subspace input_span = Subspace::orthonormalize(inputs);
  for (const Vec& v : ratios.vectors) {
    REQUIRE(input_span.residual_ratio(v) < 1e-6);
  }
  // per-neuron: residual against the activating subset only
  const Adapter& blk = s.model.embedding_adapter[0];
  std::size_t checked = 0;
  std::size_t vec_idx = 0;
  std::set<std::size_t> skipped;
  for (auto& [idx, reason] : ratios.skipped_neurons) skipped.insert(idx);
  for (std::size_t j = 0; j < s.model.config.d_bottleneck(); ++j) {
    if (skipped.count(j)) continue;
    std::vector<Vec> activating;
    for (const SequenceTrace& st : trace.sequences) {
      for (const Vec& x : st.ea_inputs) {
        double pre = blk.down_bias[j] + dot(blk.down_weight.row(j), std::span<const double>(x));
        if (pre > 0) activating.push_back(x);
      }
    }
    if (!activating.empty()) {
      Subspace act_span = Subspace::orthonormalize(activating);
      REQUIRE(act_span.residual_ratio(ratios.vectors[vec_idx]) < 1e-8);
      ++checked;
    }
    ++vec_idx;
  }
  REQUIRE(checked > 4);
}

TEST_CASE("attack subspace ranks track distinct token counts") {
  Scenario s = make_scenario(21, 2, 3);
  AttackSubspaces sp = build_attack_subspaces(s.update, s.attack);
  // 2 sentences x 3 distinct tokens + end marker
  REQUIRE(sp.ea.rank() == 7);
  REQUIRE(sp.ea.rank() <= s.model.config.d_bottleneck());

  SECTION("identical tokens give rank 1") {
    std::vector<TokenSeq> batch{{5, 5, 5}};  // eicw-violating but valid model input
    ModelGradients g = adapter_gradients(s.model, batch, {1});
    GradientUpdate u;
    u.embedding_adapter = g.embedding_adapter;
    u.layer_adapter = g.layer_adapter;
    u.batch_size = 1;
    AttackSubspaces sp1 = build_attack_subspaces(u, s.attack);
    REQUIRE(sp1.ea.rank() == 1);
  }
  SECTION("all-zero gradients raise the no-signal error") {
    GradientUpdate u = s.update;
    for (auto* site : {&u.embedding_adapter, &u.layer_adapter}) {
      for (AdapterGradients& g : *site) {
        std::fill(g.grad_down_bias.begin(), g.grad_down_bias.end(), 0.0);
      }
    }
    REQUIRE_THROWS_WITH(build_attack_subspaces(u, s.attack), Catch::Matchers::ContainsSubstring("no usable"));
  }
}

TEST_CASE("word bag recovers exactly the batch tokens") {
  Scenario s = make_scenario(31, 3, 3);
  AttackSubspaces sp = build_attack_subspaces(s.update, s.attack);
  WordBag bag = infer_word_bag(s.model, sp.ea, s.attack);
  std::set<TokenId> truth;
  for (std::size_t i = 0; i < 3; ++i) {
    truth.insert(s.dataset.sequences[i].begin(), s.dataset.sequences[i].end());
  }
  REQUIRE(bag.tokens == truth);
  for (auto& [t, r] : bag.per_token_residual) REQUIRE(r < s.attack.epsilon_ea);

  SECTION("rank-0 subspace gives the empty bag") {
    WordBag empty = infer_word_bag(s.model, Subspace::empty(s.model.config.d_hidden), s.attack);
    REQUIRE(empty.tokens.empty());
  }
}

TEST_CASE("word bag with positional encoding before the adapter scans positions") {
  ModelConfig c = attack_config_model(41);
  c.positional_encoding = PositionalEncoding::additive_before_embedding_adapter;
  Model m = init_model(c);
  std::vector<TokenSeq> batch{{3, 9, 0}, {12, 7, 0}};
  ModelGradients g = adapter_gradients(m, batch, {0, 1});
  GradientUpdate u;
  u.embedding_adapter = g.embedding_adapter;
  u.layer_adapter = g.layer_adapter;
  u.batch_size = 2;
  AttackConfig ac;
  AttackSubspaces sp = build_attack_subspaces(u, ac);
  WordBag bag = infer_word_bag(m, sp.ea, ac);
  REQUIRE(bag.tokens == std::set<TokenId>{0, 3, 7, 9, 12});
}

TEST_CASE("word bag monotone in epsilon") {
  Scenario s = make_scenario(51, 2, 4);
  AttackSubspaces sp = build_attack_subspaces(s.update, s.attack);
  std::set<TokenId> prev;
  for (double eps : {1e-4, 1e-3, 1e-2, 1e-1}) {
    AttackConfig c = s.attack;
    c.epsilon_ea = eps;
    WordBag bag = infer_word_bag(s.model, sp.ea, c);
    for (TokenId t : prev) REQUIRE(bag.contains(t));
    prev = bag.tokens;
  }
}

TEST_CASE("filters") {
  SECTION("eicw rejects only immediate repeats") {
    REQUIRE_FALSE(filter_eicw({1, 2}, 2));
    REQUIRE(filter_eicw({1, 2}, 1));
    REQUIRE(filter_eicw({}, 5));
  }
  SECTION("grammar accepts corpus bigrams only (at the default floor)") {
    Corpus c = corpus_from_lines({"a b c"}, 8);
    CorpusStats st = build_corpus_stats(c);
    TokenId a = c.token_to_id.at("a"), b = c.token_to_id.at("b"), cc = c.token_to_id.at("c");
    REQUIRE(filter_grammar({a, b, cc}, st));
    REQUIRE(filter_grammar({a}, st));  // no bigrams to test
    REQUIRE_FALSE(filter_grammar({b, a}, st));
  }
  SECTION("semantic filter: full bag sequence has cosine 1") {
    Scenario s = make_scenario(61, 2, 3);
    AttackSubspaces sp = build_attack_subspaces(s.update, s.attack);
    WordBag bag = infer_word_bag(s.model, sp.ea, s.attack);
    TokenSeq all(bag.tokens.begin(), bag.tokens.end());
    REQUIRE(filter_semantic(all, bag, s.model, 0.999999));
    REQUIRE_THROWS(filter_semantic(all, WordBag{}, s.model, 0.2));
  }
}

TEST_CASE("reconstruct recovers token-disjoint batches exactly (unidirectional)") {
  Scenario s = make_scenario(71, 2, 4);
  std::vector<Candidate> cands = reconstruct(s.model, s.update, s.attack, s.stats);
  REQUIRE(cands.size() >= 2);
  std::set<TokenSeq> got;
  for (const Candidate& c : cands) got.insert(c.sequence);
  REQUIRE(got.count(s.dataset.sequences[0]) == 1);
  REQUIRE(got.count(s.dataset.sequences[1]) == 1);
  for (const Candidate& c : cands) {
    REQUIRE(c.score > 1.0 - s.attack.epsilon_la);
  }
}

TEST_CASE("reconstruct recovers token-disjoint batches exactly (bidirectional)") {
  Scenario s = make_scenario(72, 2, 4, AttentionMode::bidirectional);
  std::vector<Candidate> cands = reconstruct(s.model, s.update, s.attack, s.stats);
  std::set<TokenSeq> got;
  for (const Candidate& c : cands) got.insert(c.sequence);
  REQUIRE(got.count(s.dataset.sequences[0]) == 1);
  REQUIRE(got.count(s.dataset.sequences[1]) == 1);
  // every completed candidate passed the full-candidate span gate
  for (const Candidate& c : cands) REQUIRE(c.score > 1.0 - s.attack.epsilon_la);
}

TEST_CASE("single-token sequence with a bag of one returns that token") {
  ModelConfig c = attack_config_model(81);
  Model m = init_model(c);
  std::vector<TokenSeq> batch{{5}};
  ModelGradients g = adapter_gradients(m, batch, {1});
  GradientUpdate u;
  u.embedding_adapter = g.embedding_adapter;
  u.layer_adapter = g.layer_adapter;
  u.batch_size = 1;
  CorpusStats st;  // no bigrams: grammar rejects every extension
  AttackConfig ac;
  ac.mode = AttentionMode::unidirectional;
  std::vector<Candidate> cands = reconstruct(m, u, ac, st);
  REQUIRE(cands.size() == 1);
  REQUIRE(cands[0].sequence == TokenSeq{5});
  REQUIRE(cands[0].score == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("empty word bag yields an empty result") {
  Scenario s = make_scenario(91, 2, 3);
  AttackConfig strict = s.attack;
  strict.epsilon_ea = 1e-300;  // nothing passes
  REQUIRE(reconstruct(s.model, s.update, strict, s.stats).empty());
}

TEST_CASE("beam search equals brute-force enumeration on micro instances") {
  int compared = 0;
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    for (AttentionMode mode : {AttentionMode::unidirectional, AttentionMode::bidirectional}) {
      Scenario s = make_scenario(1000 + seed, 1 + seed % 3, 2 + seed % 3, mode, 4);
      AttackConfig c = s.attack;
      c.beam_width = 1u << 20;
      c.max_len = 6;
      std::vector<Candidate> beam = reconstruct(s.model, s.update, c, s.stats);
      std::vector<Candidate> brute = oracles::brute_force_reconstruct(s.model, s.update, c, s.stats);
      REQUIRE(beam.size() == brute.size());
      for (std::size_t i = 0; i < beam.size(); ++i) {
        REQUIRE(beam[i].sequence == brute[i].sequence);
        REQUIRE(beam[i].score == Catch::Approx(brute[i].score).margin(1e-12));
      }
      ++compared;
    }
  }
  REQUIRE(compared == 24);
}

TEST_CASE("aggregation scale invariance: c * update changes nothing") {
  Scenario s = make_scenario(111, 2, 3);
  std::vector<Candidate> base = reconstruct(s.model, s.update, s.attack, s.stats);
  AttackSubspaces base_sp = build_attack_subspaces(s.update, s.attack);
  WordBag base_bag = infer_word_bag(s.model, base_sp.ea, s.attack);
  for (double c : {1e-3, 1.0, 1e3, 7.5}) {
    GradientUpdate scaled = s.update;
    detail::for_each_tensor(scaled, [&](Vec& t) {
      for (double& x : t) x *= c;
    });
    AttackSubspaces sp = build_attack_subspaces(scaled, s.attack);
    RatioVectorSet r0 = weight_bias_ratios(s.update.embedding_adapter[0], s.attack.bias_grad_floor);
    RatioVectorSet r1 = weight_bias_ratios(scaled.embedding_adapter[0], s.attack.bias_grad_floor);
    REQUIRE(r0.vectors.size() == r1.vectors.size());
    for (std::size_t i = 0; i < r0.vectors.size(); ++i) {
      for (std::size_t j = 0; j < r0.vectors[i].size(); ++j) {
        REQUIRE(r1.vectors[i][j] == Catch::Approx(r0.vectors[i][j]).epsilon(1e-12).margin(1e-300));
      }
    }
    WordBag bag = infer_word_bag(s.model, sp.ea, s.attack);
    REQUIRE(bag.tokens == base_bag.tokens);
    std::vector<Candidate> cands = reconstruct(s.model, scaled, s.attack, s.stats);
    REQUIRE(cands.size() == base.size());
    for (std::size_t i = 0; i < cands.size(); ++i) {
      REQUIRE(cands[i].sequence == base[i].sequence);
      REQUIRE(cands[i].score == Catch::Approx(base[i].score).epsilon(1e-12));
    }
  }
}

TEST_CASE("unidirectional prefixes of training sequences pass the span check") {
  Scenario s = make_scenario(121, 3, 4);
  AttackSubspaces sp = build_attack_subspaces(s.update, s.attack);
  for (std::size_t i = 0; i < 3; ++i) {
    const TokenSeq& seq = s.dataset.sequences[i];
    for (std::size_t len = 1; len <= seq.size(); ++len) {
      TokenSeq prefix(seq.begin(), seq.begin() + len);
      std::vector<Vec> hs = hidden_for_candidate(s.model, prefix);
      for (const Vec& h : hs) REQUIRE(sp.la.residual_ratio(h) < 1e-3);
    }
  }
}

TEST_CASE("attack_end_to_end reports perfect scores on an undefended run") {
  Scenario s = make_scenario(131, 4, 3);
  AttackReport rep = attack_end_to_end(s.model, s.update, s.truth, s.attack, s.stats);
  REQUIRE(rep.bag_recall == 1.0);
  REQUIRE(rep.bag_precision == 1.0);
  REQUIRE(rep.corpus_r1 == 100.0);
  REQUIRE(rep.corpus_r2 == 100.0);
  REQUIRE(rep.selected.size() == 4);
  REQUIRE(rep.vocab_span_checks > 0);
  REQUIRE(rep.beam_extensions > 0);

  SECTION("strong dp noise destroys the reconstruction") {
    DefenseConfig d{DefenseKind::dp, 3e-4, 1.0, 0.0, 5};
    GradientUpdate noisy = apply_dp(s.update, d);
    AttackReport rep2 = attack_end_to_end(s.model, noisy, s.truth, s.attack, s.stats);
    REQUIRE(rep2.corpus_r1 < 5.0);
  }
  SECTION("empty bag gives a zero-recall report with no candidates") {
    AttackConfig strict = s.attack;
    strict.epsilon_ea = 1e-300;
    AttackReport rep3 = attack_end_to_end(s.model, s.update, s.truth, strict, s.stats);
    REQUIRE(rep3.bag_recall == 0.0);
    REQUIRE(rep3.candidates.empty());
    REQUIRE(rep3.corpus_r1 == 0.0);
  }
}

TEST_CASE("reconstruct validates mode consistency") {
  Scenario s = make_scenario(141, 1, 3);
  AttackConfig wrong = s.attack;
  wrong.mode = AttentionMode::bidirectional;
  REQUIRE_THROWS(reconstruct(s.model, s.update, wrong, s.stats));
}
