#pragma once

#include <json.hpp>

#include "fedleak/attack.hpp"

namespace fedleak {

using Json = nlohmann::ordered_json;

inline constexpr int kReportFormatVersion = 1;

// Every float in an output artifact passes through round_sig, so re-runs and
// ulp-perturbed inputs serialize to identical bytes.
inline Json json_num(double x) { return Json(round_sig(x)); }

// Residual ratios carry at most ~7 digits of signal above the float64
// cancellation floor; below it the true value is zero. Reported at the
// stable precision so serialized bytes survive ulp-level input changes.
inline Json json_residual(double r) { return Json(r < 1e-8 ? 0.0 : round_sig(r, 6)); }

inline const char* to_string(AttentionMode m) {
  return m == AttentionMode::unidirectional ? "unidirectional" : "bidirectional";
}
inline const char* to_string(PositionalEncoding p) {
  switch (p) {
    case PositionalEncoding::none: return "none";
    case PositionalEncoding::additive_before_embedding_adapter: return "additive_before_embedding_adapter";
    case PositionalEncoding::additive_after_embedding_adapter: return "additive_after_embedding_adapter";
  }
  return "none";
}
inline const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "gelu"; }
inline const char* to_string(DefenseKind k) {
  switch (k) {
    case DefenseKind::none: return "none";
    case DefenseKind::dp: return "dp";
    case DefenseKind::prune: return "prune";
  }
  return "none";
}

inline AttentionMode attention_mode_from_string(const std::string& s) {
  if (s == "unidirectional") return AttentionMode::unidirectional;
  if (s == "bidirectional") return AttentionMode::bidirectional;
  throw ConfigError("unknown attention_mode: " + s);
}
inline PositionalEncoding positional_encoding_from_string(const std::string& s) {
  if (s == "none") return PositionalEncoding::none;
  if (s == "additive_before_embedding_adapter") return PositionalEncoding::additive_before_embedding_adapter;
  if (s == "additive_after_embedding_adapter") return PositionalEncoding::additive_after_embedding_adapter;
  throw ConfigError("unknown positional_encoding: " + s);
}
inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "gelu") return Activation::gelu;
  throw ConfigError("unknown adapter_activation: " + s);
}
inline DefenseKind defense_kind_from_string(const std::string& s) {
  if (s == "none") return DefenseKind::none;
  if (s == "dp") return DefenseKind::dp;
  if (s == "prune") return DefenseKind::prune;
  throw ConfigError("unknown defense kind: " + s);
}

inline Json to_json(const ModelConfig& c) {
  return Json{{"vocab_size", c.vocab_size},
              {"d_hidden", c.d_hidden},
              {"reduction_factor", c.reduction_factor},
              {"attention_mode", to_string(c.attention_mode)},
              {"positional_encoding", to_string(c.positional_encoding)},
              {"max_seq_len", c.max_seq_len},
              {"adapter_activation", to_string(c.adapter_activation)},
              {"adapter_depth", c.adapter_depth},
              {"seed", c.seed}};
}

inline Json to_json(const AttackConfig& c) {
  return Json{{"epsilon_ea", json_num(c.epsilon_ea)},
              {"epsilon_la", json_num(c.epsilon_la)},
              {"beam_width", c.beam_width},
              {"max_len", c.max_len},
              {"bias_grad_floor", json_num(c.bias_grad_floor)},
              {"filters", Json{{"eicw", c.filters.eicw}, {"grammar", c.filters.grammar}, {"semantic", c.filters.semantic}}},
              {"semantic_threshold", json_num(c.semantic_threshold)},
              {"mode", to_string(c.mode)},
              {"drop_tolerance", json_num(c.drop_tolerance)}};
}

inline Json to_json(const DefenseConfig& c) {
  return Json{{"kind", to_string(c.kind)},
              {"sigma", json_num(c.sigma)},
              {"clip_bound", json_num(c.clip_bound)},
              {"prune_rate", json_num(c.prune_rate)},
              {"seed", c.seed}};
}

inline Json report_to_json(const AttackReport& rep, const CorpusStats& stats, bool include_wall_time) {
  Json bag_tokens = Json::array();
  for (TokenId t : rep.bag.tokens) {
    bag_tokens.push_back(Json{{"id", t},
                              {"token", t < stats.id_to_token.size() ? stats.id_to_token[t] : "<unk>"},
                              {"residual", json_residual(rep.bag.per_token_residual.at(t))}});
  }
  auto cand_json = [&](const Candidate& c) {
    std::string text;
    for (TokenId t : c.sequence) {
      if (!text.empty()) text += ' ';
      text += t < stats.id_to_token.size() ? stats.id_to_token[t] : "<unk>";
    }
    return Json{{"tokens", c.sequence}, {"text", text}, {"score", json_num(c.score)}};
  };
  Json candidates = Json::array();
  for (const Candidate& c : rep.candidates) candidates.push_back(cand_json(c));
  Json selected = Json::array();
  for (std::size_t i = 0; i < rep.selected.size(); ++i) {
    Json s = cand_json(rep.selected[i]);
    s["reference"] = rep.selected_reference[i];
    s["r1"] = json_num(rep.pair_r1[i]);
    s["r2"] = json_num(rep.pair_r2[i]);
    selected.push_back(std::move(s));
  }
  return Json{
      {"format_version", kReportFormatVersion},
      {"batch_size", rep.batch_size},
      {"round_id", rep.round_id},
      {"attack_config", to_json(rep.config)},
      {"word_bag",
       Json{{"size", rep.bag.tokens.size()},
            {"precision", json_num(rep.bag_precision)},
            {"recall", json_num(rep.bag_recall)},
            {"tokens", std::move(bag_tokens)}}},
      {"candidates", std::move(candidates)},
      {"selected", std::move(selected)},
      {"corpus_rouge", Json{{"r1", json_num(rep.corpus_r1)}, {"r2", json_num(rep.corpus_r2)}}},
      {"timings",
       Json{{"vocab_span_checks", rep.vocab_span_checks},
            {"beam_extensions", rep.beam_extensions},
            {"layer_span_checks", rep.layer_span_checks},
            {"stage1_ms", json_num(include_wall_time ? rep.stage1_ms : 0.0)},
            {"stage2_ms", json_num(include_wall_time ? rep.stage2_ms : 0.0)},
            {"total_ms", json_num(include_wall_time ? rep.total_ms : 0.0)}}},
  };
}

}  // namespace fedleak
