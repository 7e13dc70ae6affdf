#pragma once

#include <fstream>
#include <map>
#include <sstream>

#include "fedleak/common.hpp"

namespace fedleak {

inline constexpr const char* kEndMarker = "</s>";

inline std::vector<std::string> tokenize_lowercase(const std::string& line) {
  std::vector<std::string> out;
  std::string tok;
  std::istringstream ss(line);
  while (ss >> tok) {
    for (char& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.push_back(tok);
  }
  return out;
}

// One-sentence-per-line corpus with a lowercase-whitespace tokenizer.
// Vocabulary ids are dense from 0; id 0 is the reserved end-of-sentence marker
// and every tokenized sequence ends with it (unless disabled).
struct Corpus {
  std::vector<std::string> sentences;
  std::vector<TokenSeq> sequences;
  std::vector<std::string> id_to_token;
  std::map<std::string, TokenId> token_to_id;
  TokenId end_token_id = 0;
  bool end_marker_appended = true;

  std::size_t vocab_size() const { return id_to_token.size(); }

  const std::string& token_name(TokenId id) const {
    static const std::string unk = "<unk>";
    return id < id_to_token.size() ? id_to_token[id] : unk;
  }

  std::string render(const TokenSeq& seq, bool strip_end = true) const {
    std::string out;
    for (TokenId t : seq) {
      if (strip_end && t == end_token_id) continue;
      if (!out.empty()) out += ' ';
      out += token_name(t);
    }
    return out;
  }
};

inline Corpus corpus_from_lines(const std::vector<std::string>& lines, std::size_t max_seq_len,
                                bool append_end_marker = true) {
  Corpus c;
  c.end_marker_appended = append_end_marker;
  c.id_to_token.push_back(kEndMarker);
  c.token_to_id[kEndMarker] = 0;
  std::size_t line_no = 0;
  for (const std::string& raw : lines) {
    ++line_no;
    std::vector<std::string> toks = tokenize_lowercase(raw);
    if (toks.empty()) continue;  // blank lines skipped
    std::size_t limit = append_end_marker ? max_seq_len - 1 : max_seq_len;
    if (toks.size() > limit) {
      throw ConfigError("corpus line " + std::to_string(line_no) + ": sentence has " +
                        std::to_string(toks.size()) + " tokens, limit is " + std::to_string(limit));
    }
    TokenSeq seq;
    for (const std::string& t : toks) {
      auto it = c.token_to_id.find(t);
      if (it == c.token_to_id.end()) {
        TokenId id = static_cast<TokenId>(c.id_to_token.size());
        c.token_to_id[t] = id;
        c.id_to_token.push_back(t);
        seq.push_back(id);
      } else {
        seq.push_back(it->second);
      }
    }
    if (append_end_marker) seq.push_back(c.end_token_id);
    c.sentences.push_back(raw);
    c.sequences.push_back(std::move(seq));
  }
  if (c.sentences.empty()) throw ConfigError("corpus: no sentences");
  return c;
}

inline Corpus load_corpus(const std::string& path, std::size_t max_seq_len, bool append_end_marker = true) {
  std::ifstream in(path);
  if (!in) throw ConfigError("corpus: cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return corpus_from_lines(lines, max_seq_len, append_end_marker);
}

// Attacker-side public knowledge: the tokenizer conventions plus adjacency
// statistics from public text. Backs the pluggable grammar filter.
struct CorpusStats {
  std::map<std::pair<TokenId, TokenId>, std::uint32_t> bigram_counts;
  double grammar_floor = 1.0;  // accept iff smoothed count (raw+1) > floor
  TokenId end_token_id = 0;
  std::vector<std::string> id_to_token;

  std::uint32_t bigram_count(TokenId a, TokenId b) const {
    auto it = bigram_counts.find({a, b});
    return it == bigram_counts.end() ? 0 : it->second;
  }

  bool bigram_admissible(TokenId a, TokenId b) const {
    return static_cast<double>(bigram_count(a, b)) + 1.0 > grammar_floor;
  }
};

inline CorpusStats build_corpus_stats(const Corpus& c, double grammar_floor = 1.0) {
  CorpusStats s;
  s.grammar_floor = grammar_floor;
  s.end_token_id = c.end_token_id;
  s.id_to_token = c.id_to_token;
  for (const TokenSeq& seq : c.sequences) {
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      ++s.bigram_counts[{seq[i], seq[i + 1]}];
    }
  }
  return s;
}

}  // namespace fedleak
