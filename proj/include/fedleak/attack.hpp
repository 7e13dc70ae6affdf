#pragma once

#include <algorithm>
#include <chrono>
#include <optional>
#include <set>

#include "fedleak/corpus.hpp"
#include "fedleak/fedsim.hpp"
#include "fedleak/rouge.hpp"
#include "fedleak/subspace.hpp"

namespace fedleak {

// Per-neuron ratio of weight to bias gradient; each usable neuron of a
// down-projection yields one vector in the span of its activating inputs.
struct RatioVectorSet {
  std::vector<Vec> vectors;
  std::vector<std::pair<std::size_t, std::string>> skipped_neurons;  // (index, reason)
};

struct WordBag {
  std::set<TokenId> tokens;
  std::map<TokenId, double> per_token_residual;

  bool contains(TokenId t) const { return tokens.count(t) != 0; }
};

struct AttackFilters {
  bool eicw = true;
  bool grammar = true;
  bool semantic = false;
};

struct AttackConfig {
  double epsilon_ea = 1e-3;
  double epsilon_la = 1e-3;
  std::size_t beam_width = 64;
  std::size_t max_len = 16;
  double bias_grad_floor = 1e-12;
  AttackFilters filters;
  double semantic_threshold = 0.2;
  AttentionMode mode = AttentionMode::unidirectional;
  double drop_tolerance = Subspace::kDefaultDropTolerance;

  void validate() const {
    if (epsilon_ea <= 0.0 || epsilon_la <= 0.0) throw ConfigError("attack: epsilons must be > 0");
    if (beam_width < 1) throw ConfigError("attack: beam_width must be >= 1");
    if (max_len < 1) throw ConfigError("attack: max_len must be >= 1");
    if (bias_grad_floor < 0.0) throw ConfigError("attack: bias_grad_floor must be >= 0");
  }
};

struct Candidate {
  TokenSeq sequence;
  double score = 0.0;  // min span similarity over checked positions

  bool operator==(const Candidate&) const = default;
};

inline RatioVectorSet weight_bias_ratios(const AdapterGradients& grads, double floor) {
  require(grads.grad_down_weight.rows == grads.grad_down_bias.size(),
          "weight_bias_ratios: down weight/bias shape mismatch");
  RatioVectorSet out;
  for (std::size_t j = 0; j < grads.grad_down_bias.size(); ++j) {
    double gb = grads.grad_down_bias[j];
    if (std::abs(gb) > floor) {
      Vec v(grads.grad_down_weight.row(j).begin(), grads.grad_down_weight.row(j).end());
      for (double& x : v) x /= gb;
      out.vectors.push_back(std::move(v));
    } else {
      out.skipped_neurons.emplace_back(j, "dead_or_tiny_bias_grad");
    }
  }
  return out;
}

struct AttackSubspaces {
  Subspace ea;
  Subspace la;
  RatioVectorSet ea_ratios;
  RatioVectorSet la_ratios;
};

// Block 0 of each adapter stack is the one whose input is the observable
// hidden vector, so its gradients carry the leakage signal.
inline AttackSubspaces build_attack_subspaces(const GradientUpdate& update, const AttackConfig& config) {
  require(!update.embedding_adapter.empty() && !update.layer_adapter.empty(),
          "build_attack_subspaces: update has no adapter gradients");
  AttackSubspaces s;
  s.ea_ratios = weight_bias_ratios(update.embedding_adapter[0], config.bias_grad_floor);
  s.la_ratios = weight_bias_ratios(update.layer_adapter[0], config.bias_grad_floor);
  if (s.ea_ratios.vectors.empty() && s.la_ratios.vectors.empty()) {
    throw std::runtime_error("no usable gradient signal: all neurons skipped");
  }
  std::size_t dim_ea = update.embedding_adapter[0].grad_down_weight.cols;
  std::size_t dim_la = update.layer_adapter[0].grad_down_weight.cols;
  s.ea = Subspace::orthonormalize(s.ea_ratios.vectors, config.drop_tolerance, dim_ea);
  s.la = Subspace::orthonormalize(s.la_ratios.vectors, config.drop_tolerance, dim_la);
  if (s.ea.rank() == 0 && s.ea.ambient_dim() == 0) s.ea = Subspace::empty(dim_ea, config.drop_tolerance);
  if (s.la.rank() == 0 && s.la.ambient_dim() == 0) s.la = Subspace::empty(dim_la, config.drop_tolerance);
  return s;
}

// Stage 1: scan the vocabulary (x positions, when the positional encoding
// enters before the embedding adapter) for embeddings inside S_EA.
inline WordBag infer_word_bag(const Model& m, const Subspace& s_ea, const AttackConfig& config,
                              std::uint64_t* span_check_counter = nullptr) {
  WordBag bag;
  if (s_ea.rank() == 0) return bag;
  bool per_position = m.config.positional_encoding == PositionalEncoding::additive_before_embedding_adapter;
  std::size_t n_positions = per_position ? m.config.max_seq_len : 1;
  for (TokenId w = 0; w < m.config.vocab_size; ++w) {
    double best = 2.0;
    for (std::size_t p = 0; p < n_positions; ++p) {
      Vec v = m.embed(w, p);
      if (norm2(v) == 0.0) continue;
      double r = s_ea.residual_ratio(v);
      if (span_check_counter) ++*span_check_counter;
      if (r < best) best = r;
    }
    if (best < config.epsilon_ea) {
      bag.tokens.insert(w);
      bag.per_token_residual[w] = best;
    }
  }
  return bag;
}

// Consecutive-identical-word filter: reject a next token equal to the last.
inline bool filter_eicw(const TokenSeq& sequence, TokenId next_token) {
  return sequence.empty() || sequence.back() != next_token;
}

// Corpus bigram admissibility over every adjacent pair. Pluggable stand-in
// for an external grammar checker.
inline bool filter_grammar(const TokenSeq& sequence, const CorpusStats& stats) {
  for (std::size_t i = 0; i + 1 < sequence.size(); ++i) {
    if (!stats.bigram_admissible(sequence[i], sequence[i + 1])) return false;
  }
  return true;
}

// Frozen-embedding mean-vector cosine against the bag mean. Stand-in for an
// external sentence-embedding model.
inline bool filter_semantic(const TokenSeq& sequence, const WordBag& bag, const Model& m, double threshold) {
  require(!bag.tokens.empty(), "filter_semantic: empty bag");
  if (sequence.empty()) return true;
  Vec seq_mean(m.config.d_hidden, 0.0);
  for (TokenId t : sequence) axpy(1.0 / static_cast<double>(sequence.size()), m.embedding_row(t), seq_mean);
  Vec bag_mean(m.config.d_hidden, 0.0);
  for (TokenId t : bag.tokens) axpy(1.0 / static_cast<double>(bag.tokens.size()), m.embedding_row(t), bag_mean);
  return cosine(seq_mean, bag_mean) >= threshold;
}

namespace detail {

struct BeamEntry {
  TokenSeq seq;
  double score = 1.0;  // min span similarity so far; 1 is the min-identity
  PrefixEvaluator::State state;  // unidirectional only
};

inline bool candidate_less(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;  // descending score
  return a.sequence < b.sequence;                    // lexicographic tiebreak
}

inline bool entry_less(const BeamEntry& a, const BeamEntry& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.seq < b.seq;
}

}  // namespace detail

struct ReconstructCounters {
  std::uint64_t beam_extensions = 0;
  std::uint64_t layer_span_checks = 0;
};

// Stage 2: beam search over bag tokens with filter pruning and span-check
// verification against S_LA.
//
// Unidirectional: each appended position's layer hidden must pass in_span
// (causality keeps earlier positions stable); score is the running minimum.
// Bidirectional: partial candidates are ranked by min span similarity but
// only gated by the filters; the full per-position in_span gate runs when a
// candidate completes (end marker, dead end, or max length).
inline std::vector<Candidate> reconstruct(const Model& m, const GradientUpdate& update,
                                          const AttackConfig& config, const CorpusStats& stats,
                                          ReconstructCounters* counters = nullptr) {
  config.validate();
  require(config.mode == m.config.attention_mode, "reconstruct: attack mode must match model attention mode");
  AttackSubspaces spaces = build_attack_subspaces(update, config);
  WordBag bag = infer_word_bag(m, spaces.ea, config);
  if (bag.tokens.empty()) return {};

  const bool uni = config.mode == AttentionMode::unidirectional;
  const std::vector<TokenId> bag_list(bag.tokens.begin(), bag.tokens.end());  // ascending
  std::optional<PrefixEvaluator> prefix_eval;
  if (uni) prefix_eval.emplace(m);
  ReconstructCounters local;
  ReconstructCounters& cnt = counters ? *counters : local;

  // Scores are span similarities rounded to the serialization precision, so
  // ranking and reports are stable under ulp-level gradient perturbations.
  auto bidi_full_check = [&](const TokenSeq& seq, double* min_sim) -> bool {
    std::vector<Vec> hs = hidden_for_candidate(m, seq);
    double lo = 1.0;
    for (const Vec& h : hs) {
      ++cnt.layer_span_checks;
      double r = spaces.la.residual_ratio(h);
      if (r >= config.epsilon_la) return false;
      lo = std::min(lo, round_sig(1.0 - r));
    }
    *min_sim = lo;
    return true;
  };

  std::vector<Candidate> completed;
  auto emit = [&](const detail::BeamEntry& e) {
    if (e.seq.empty()) return;
    if (uni) {
      completed.push_back({e.seq, e.score});
    } else {
      double sim = 1.0;
      if (bidi_full_check(e.seq, &sim)) completed.push_back({e.seq, sim});
    }
  };

  std::size_t effective_max = std::min<std::size_t>(config.max_len, m.config.max_seq_len);
  std::vector<detail::BeamEntry> beam(1);
  for (std::size_t depth = 1; depth <= effective_max && !beam.empty(); ++depth) {
    std::vector<detail::BeamEntry> next_beam;
    for (detail::BeamEntry& entry : beam) {
      bool any_survivor = false;
      for (TokenId w : bag_list) {
        ++cnt.beam_extensions;
        if (config.filters.eicw && !filter_eicw(entry.seq, w)) continue;
        TokenSeq ext = entry.seq;
        ext.push_back(w);
        if (config.filters.grammar && !filter_grammar(ext, stats)) continue;
        if (config.filters.semantic && !filter_semantic(ext, bag, m, config.semantic_threshold)) continue;
        bool is_end = (w == stats.end_token_id);
        if (uni) {
          PrefixEvaluator::State st = entry.state;
          Vec h = prefix_eval->append(st, w);
          ++cnt.layer_span_checks;
          double r = spaces.la.residual_ratio(h);
          if (r >= config.epsilon_la) continue;
          double score = std::min(entry.score, round_sig(1.0 - r));
          any_survivor = true;
          if (is_end) {
            completed.push_back({std::move(ext), score});
          } else {
            next_beam.push_back({std::move(ext), score, std::move(st)});
          }
        } else {
          if (is_end) {
            double sim = 1.0;
            if (bidi_full_check(ext, &sim)) {
              any_survivor = true;
              completed.push_back({std::move(ext), sim});
            }
          } else {
            std::vector<Vec> hs = hidden_for_candidate(m, ext);
            double lo = 1.0;
            for (const Vec& h : hs) {
              ++cnt.layer_span_checks;
              lo = std::min(lo, round_sig(1.0 - spaces.la.residual_ratio(h)));
            }
            any_survivor = true;
            next_beam.push_back({std::move(ext), lo, {}});
          }
        }
      }
      if (!any_survivor) emit(entry);
    }
    std::stable_sort(next_beam.begin(), next_beam.end(), detail::entry_less);
    if (next_beam.size() > config.beam_width) next_beam.resize(config.beam_width);
    beam = std::move(next_beam);
  }
  // max length reached: remaining partial candidates count as dead ends
  for (const detail::BeamEntry& e : beam) emit(e);

  std::stable_sort(completed.begin(), completed.end(), detail::candidate_less);
  return completed;
}

// --- end-to-end driver ------------------------------------------------------

struct AttackReport {
  WordBag bag;
  double bag_precision = 0.0;  // over content tokens (end marker excluded)
  double bag_recall = 0.0;
  std::vector<Candidate> candidates;          // all completed, sorted
  std::vector<Candidate> selected;            // greedy non-overlapping, <= batch_size
  std::vector<int> selected_reference;        // reference index per selected candidate, -1 if none
  std::vector<double> pair_r1;                // per selected candidate
  std::vector<double> pair_r2;                // -1 when the reference is shorter than 2
  double corpus_r1 = 0.0;
  double corpus_r2 = -1.0;  // -1 when any reference is shorter than 2
  std::uint64_t vocab_span_checks = 0;
  std::uint64_t beam_extensions = 0;
  std::uint64_t layer_span_checks = 0;
  double stage1_ms = 0.0, stage2_ms = 0.0, total_ms = 0.0;  // wall clock, stderr/report-opt-in only
  AttackConfig config;
  std::uint32_t batch_size = 0;
  std::uint32_t round_id = 0;
};

inline TokenSeq tokenize_with_vocab(const std::string& text, const std::vector<std::string>& id_to_token) {
  std::map<std::string, TokenId> rev;
  for (std::size_t i = 0; i < id_to_token.size(); ++i) rev[id_to_token[i]] = static_cast<TokenId>(i);
  TokenSeq out;
  for (const std::string& tok : tokenize_lowercase(text)) {
    auto it = rev.find(tok);
    require(it != rev.end(), "ground truth token not in vocabulary: " + tok);
    out.push_back(it->second);
  }
  return out;
}

// Wires stage 1 + stage 2 + scoring. Ground truth is used for scoring only;
// the reconstruction path sees (model, update, config, stats) alone.
inline AttackReport attack_end_to_end(const Model& m, const GradientUpdate& update,
                                      const std::vector<std::string>& ground_truth_texts,
                                      const AttackConfig& config, const CorpusStats& stats) {
  using Clock = std::chrono::steady_clock;
  AttackReport rep;
  rep.config = config;
  rep.batch_size = update.batch_size;
  rep.round_id = update.round_id;

  auto t0 = Clock::now();
  AttackSubspaces spaces = build_attack_subspaces(update, config);
  rep.bag = infer_word_bag(m, spaces.ea, config, &rep.vocab_span_checks);
  auto t1 = Clock::now();

  ReconstructCounters counters;
  rep.candidates = reconstruct(m, update, config, stats, &counters);
  rep.beam_extensions = counters.beam_extensions;
  rep.layer_span_checks = counters.layer_span_checks;
  auto t2 = Clock::now();

  // word-bag stats over content tokens
  std::set<TokenId> truth_tokens;
  std::vector<TokenSeq> references;
  for (const std::string& text : ground_truth_texts) {
    TokenSeq ref = tokenize_with_vocab(text, stats.id_to_token);
    for (TokenId t : ref) truth_tokens.insert(t);
    references.push_back(std::move(ref));
  }
  std::set<TokenId> bag_content = rep.bag.tokens;
  bag_content.erase(stats.end_token_id);
  std::size_t hit = 0;
  for (TokenId t : bag_content) {
    if (truth_tokens.count(t)) ++hit;
  }
  rep.bag_precision = bag_content.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(bag_content.size());
  rep.bag_recall = truth_tokens.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(truth_tokens.size());

  // greedy non-overlapping selection by descending score, consuming the bag
  // as a set of content-token types (end marker exempt)
  std::set<TokenId> remaining = bag_content;
  for (const Candidate& c : rep.candidates) {
    if (rep.selected.size() >= update.batch_size) break;
    std::set<TokenId> used;
    for (TokenId t : c.sequence) {
      if (t != stats.end_token_id) used.insert(t);
    }
    if (used.empty()) continue;
    bool ok = true;
    for (TokenId t : used) {
      if (!remaining.count(t)) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    for (TokenId t : used) remaining.erase(t);
    rep.selected.push_back(c);
  }

  // score selected candidates against references
  std::vector<TokenSeq> stripped;
  for (const Candidate& c : rep.selected) {
    TokenSeq s;
    for (TokenId t : c.sequence) {
      if (t != stats.end_token_id) s.push_back(t);
    }
    stripped.push_back(std::move(s));
  }
  rep.selected_reference = greedy_rouge_assignment(stripped, references);
  bool all_refs_bigram = true;
  for (const TokenSeq& r : references) {
    if (r.size() < 2) all_refs_bigram = false;
  }
  for (std::size_t i = 0; i < stripped.size(); ++i) {
    int j = rep.selected_reference[i];
    if (j < 0) {
      rep.pair_r1.push_back(0.0);
      rep.pair_r2.push_back(-1.0);
      continue;
    }
    rep.pair_r1.push_back(rouge_n(stripped[i], references[j], 1).recall_percent);
    rep.pair_r2.push_back(references[j].size() >= 2 ? rouge_n(stripped[i], references[j], 2).recall_percent
                                                    : -1.0);
  }
  rep.corpus_r1 = references.empty() ? 0.0 : corpus_rouge(stripped, references, 1);
  rep.corpus_r2 = (!references.empty() && all_refs_bigram) ? corpus_rouge(stripped, references, 2) : -1.0;

  auto ms = [](Clock::duration d) { return std::chrono::duration<double, std::milli>(d).count(); };
  rep.stage1_ms = ms(t1 - t0);
  rep.stage2_ms = ms(t2 - t1);
  rep.total_ms = ms(t2 - t0);
  return rep;
}

}  // namespace fedleak
