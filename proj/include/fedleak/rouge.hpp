#pragma once

#include <map>

#include "fedleak/common.hpp"

namespace fedleak {

struct RougeScore {
  int n = 1;
  double recall_percent = 0.0;  // in [0, 100]
};

namespace detail {

using NgramCounts = std::map<TokenSeq, std::uint32_t>;

inline NgramCounts ngram_counts(const TokenSeq& seq, int n) {
  NgramCounts counts;
  if (seq.size() < static_cast<std::size_t>(n)) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    ++counts[TokenSeq(seq.begin() + i, seq.begin() + i + n)];
  }
  return counts;
}

// clipped matches: each reference n-gram is matched at most its reference multiplicity
inline std::pair<std::uint64_t, std::uint64_t> matched_and_total(const TokenSeq& candidate,
                                                                 const TokenSeq& reference, int n) {
  NgramCounts ref = ngram_counts(reference, n);
  NgramCounts cand = ngram_counts(candidate, n);
  std::uint64_t matched = 0, total = 0;
  for (const auto& [gram, cnt] : ref) {
    total += cnt;
    auto it = cand.find(gram);
    if (it != cand.end()) matched += std::min<std::uint32_t>(cnt, it->second);
  }
  return {matched, total};
}

}  // namespace detail

// Recall-oriented n-gram overlap, scaled to [0, 100].
inline RougeScore rouge_n(const TokenSeq& candidate, const TokenSeq& reference, int n) {
  require(n == 1 || n == 2, "rouge_n: n must be 1 or 2");
  require(reference.size() >= static_cast<std::size_t>(n), "rouge_n: reference shorter than n");
  auto [matched, total] = detail::matched_and_total(candidate, reference, n);
  RougeScore s;
  s.n = n;
  s.recall_percent = 100.0 * static_cast<double>(matched) / static_cast<double>(total);
  return s;
}

// Greedy best-match pairing of candidates to references by ROUGE-1
// (ties by candidate index, then reference index). Returns, per candidate
// index, the assigned reference index or -1.
inline std::vector<int> greedy_rouge_assignment(const std::vector<TokenSeq>& candidates,
                                                const std::vector<TokenSeq>& references) {
  std::vector<int> assign(candidates.size(), -1);
  std::vector<bool> ref_used(references.size(), false);
  std::vector<std::vector<double>> r1(candidates.size(), std::vector<double>(references.size(), 0.0));
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    for (std::size_t j = 0; j < references.size(); ++j) {
      if (references[j].empty()) continue;
      r1[i][j] = rouge_n(candidates[i], references[j], 1).recall_percent;
    }
  }
  std::size_t n_pairs = std::min(candidates.size(), references.size());
  for (std::size_t step = 0; step < n_pairs; ++step) {
    double best = -1.0;
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (assign[i] != -1) continue;
      for (std::size_t j = 0; j < references.size(); ++j) {
        if (ref_used[j]) continue;
        if (r1[i][j] > best) {
          best = r1[i][j];
          bi = i;
          bj = j;
        }
      }
    }
    if (best < 0.0) break;
    assign[bi] = static_cast<int>(bj);
    ref_used[bj] = true;
  }
  return assign;
}

// Pooled corpus-level score: sum of clipped matches over sum of reference
// n-gram counts, after greedy candidate-to-reference pairing by ROUGE-1.
// Unmatched references keep their full weight in the denominator.
inline double corpus_rouge(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references,
                           int n) {
  require(n == 1 || n == 2, "corpus_rouge: n must be 1 or 2");
  require(!references.empty(), "corpus_rouge: empty reference set");
  std::vector<int> assign = greedy_rouge_assignment(candidates, references);
  std::vector<int> ref_to_cand(references.size(), -1);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (assign[i] != -1) ref_to_cand[assign[i]] = static_cast<int>(i);
  }
  std::uint64_t matched = 0, total = 0;
  for (std::size_t j = 0; j < references.size(); ++j) {
    require(references[j].size() >= static_cast<std::size_t>(n), "corpus_rouge: reference shorter than n");
    TokenSeq cand = ref_to_cand[j] >= 0 ? candidates[ref_to_cand[j]] : TokenSeq{};
    auto [mm, tt] = detail::matched_and_total(cand, references[j], n);
    matched += mm;
    total += tt;
  }
  return 100.0 * static_cast<double>(matched) / static_cast<double>(total);
}

// Fraction of runs whose corpus ROUGE-1 meets the threshold.
inline double attack_success_rate(const std::vector<double>& corpus_r1_scores, double threshold) {
  require(threshold >= 0.0 && threshold <= 100.0, "attack_success_rate: threshold in [0,100]");
  require(!corpus_r1_scores.empty(), "attack_success_rate: empty report list");
  std::size_t hits = 0;
  for (double s : corpus_r1_scores) {
    if (s >= threshold) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(corpus_r1_scores.size());
}

}  // namespace fedleak
