#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "fedleak/capacity.hpp"
#include "fedleak/report_json.hpp"

namespace fedleak {

struct SweepConfig {
  std::vector<double> sigmas;
  std::vector<double> prune_rates;
  std::vector<std::size_t> reduction_factors;
  std::vector<double> epsilons;
  std::vector<std::size_t> epsilon_batch_sizes;
  // Small update perturbation for the tolerance sweep; emulates the numeric
  // noise of production-scale pipelines. 0 disables it.
  double epsilon_noise_sigma = 1e-9;
};

struct ExperimentConfig {
  ModelConfig model;
  AttackConfig attack;
  DefenseConfig defense;
  SweepConfig sweep;
  std::vector<std::size_t> batch_sizes{1, 2, 4, 8};
  std::size_t rounds = 5;
  std::string corpus_path;
  std::string output_dir = "out";
  std::uint64_t seed = 1;
  double success_threshold = 99.0;  // corpus R-1 at or above counts as success
  bool record_wall_time = false;
  std::size_t threads = 0;  // 0 = hardware concurrency
  std::size_t capacity_sentence_len = 4;

  void validate(bool needs_corpus) const {
    model.validate();
    attack.validate();
    defense.validate();
    if (attack.mode != model.attention_mode) {
      throw ConfigError("config: attack.mode must match model.attention_mode");
    }
    if (batch_sizes.empty()) throw ConfigError("config: batch_sizes must be non-empty");
    if (rounds < 1) throw ConfigError("config: rounds must be >= 1");
    if (success_threshold < 0.0 || success_threshold > 100.0) {
      throw ConfigError("config: success_threshold must be in [0,100]");
    }
    if (needs_corpus) {
      if (corpus_path.empty()) throw ConfigError("config: corpus_path is required");
      if (!std::filesystem::exists(corpus_path)) {
        throw ConfigError("config: corpus_path does not exist: " + corpus_path);
      }
    }
  }
};

// --- json (de)serialization -------------------------------------------------

inline Json to_json(const SweepConfig& c) {
  return Json{{"sigmas", c.sigmas},
              {"prune_rates", c.prune_rates},
              {"reduction_factors", c.reduction_factors},
              {"epsilons", c.epsilons},
              {"epsilon_batch_sizes", c.epsilon_batch_sizes},
              {"epsilon_noise_sigma", json_num(c.epsilon_noise_sigma)}};
}

inline Json to_json(const ExperimentConfig& c) {
  return Json{{"model", to_json(c.model)},
              {"attack", to_json(c.attack)},
              {"defense", to_json(c.defense)},
              {"sweep", to_json(c.sweep)},
              {"batch_sizes", c.batch_sizes},
              {"rounds", c.rounds},
              {"corpus_path", c.corpus_path},
              {"output_dir", c.output_dir},
              {"seed", c.seed},
              {"success_threshold", json_num(c.success_threshold)},
              {"record_wall_time", c.record_wall_time},
              // `threads` is a pure execution knob and never changes output
              // bytes, so it stays out of the config echo.
              {"capacity_sentence_len", c.capacity_sentence_len}};
}

namespace detail {

template <typename T>
void read_field(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void read_enum_field(const Json& j, const char* key, AttentionMode& out) {
  if (j.contains(key)) out = attention_mode_from_string(j.at(key).get<std::string>());
}
inline void read_enum_field(const Json& j, const char* key, PositionalEncoding& out) {
  if (j.contains(key)) out = positional_encoding_from_string(j.at(key).get<std::string>());
}
inline void read_enum_field(const Json& j, const char* key, Activation& out) {
  if (j.contains(key)) out = activation_from_string(j.at(key).get<std::string>());
}
inline void read_enum_field(const Json& j, const char* key, DefenseKind& out) {
  if (j.contains(key)) out = defense_kind_from_string(j.at(key).get<std::string>());
}

}  // namespace detail

inline ExperimentConfig experiment_config_from_json(const Json& j) {
  ExperimentConfig c;
  bool attack_mode_given = false;
  if (j.contains("model")) {
    const Json& m = j.at("model");
    detail::read_field(m, "vocab_size", c.model.vocab_size);
    detail::read_field(m, "d_hidden", c.model.d_hidden);
    detail::read_field(m, "reduction_factor", c.model.reduction_factor);
    detail::read_enum_field(m, "attention_mode", c.model.attention_mode);
    detail::read_enum_field(m, "positional_encoding", c.model.positional_encoding);
    detail::read_field(m, "max_seq_len", c.model.max_seq_len);
    detail::read_enum_field(m, "adapter_activation", c.model.adapter_activation);
    detail::read_field(m, "adapter_depth", c.model.adapter_depth);
    detail::read_field(m, "seed", c.model.seed);
  }
  if (j.contains("attack")) {
    const Json& a = j.at("attack");
    detail::read_field(a, "epsilon_ea", c.attack.epsilon_ea);
    detail::read_field(a, "epsilon_la", c.attack.epsilon_la);
    detail::read_field(a, "beam_width", c.attack.beam_width);
    detail::read_field(a, "max_len", c.attack.max_len);
    detail::read_field(a, "bias_grad_floor", c.attack.bias_grad_floor);
    if (a.contains("filters")) {
      detail::read_field(a.at("filters"), "eicw", c.attack.filters.eicw);
      detail::read_field(a.at("filters"), "grammar", c.attack.filters.grammar);
      detail::read_field(a.at("filters"), "semantic", c.attack.filters.semantic);
    }
    detail::read_field(a, "semantic_threshold", c.attack.semantic_threshold);
    detail::read_field(a, "drop_tolerance", c.attack.drop_tolerance);
    if (a.contains("mode")) {
      c.attack.mode = attention_mode_from_string(a.at("mode").get<std::string>());
      attack_mode_given = true;
    }
  }
  if (!attack_mode_given) c.attack.mode = c.model.attention_mode;
  if (j.contains("defense")) {
    const Json& d = j.at("defense");
    detail::read_enum_field(d, "kind", c.defense.kind);
    detail::read_field(d, "sigma", c.defense.sigma);
    detail::read_field(d, "clip_bound", c.defense.clip_bound);
    detail::read_field(d, "prune_rate", c.defense.prune_rate);
    detail::read_field(d, "seed", c.defense.seed);
  }
  if (j.contains("sweep")) {
    const Json& s = j.at("sweep");
    detail::read_field(s, "sigmas", c.sweep.sigmas);
    detail::read_field(s, "prune_rates", c.sweep.prune_rates);
    detail::read_field(s, "reduction_factors", c.sweep.reduction_factors);
    detail::read_field(s, "epsilons", c.sweep.epsilons);
    detail::read_field(s, "epsilon_batch_sizes", c.sweep.epsilon_batch_sizes);
    detail::read_field(s, "epsilon_noise_sigma", c.sweep.epsilon_noise_sigma);
  }
  detail::read_field(j, "batch_sizes", c.batch_sizes);
  detail::read_field(j, "rounds", c.rounds);
  detail::read_field(j, "corpus_path", c.corpus_path);
  detail::read_field(j, "output_dir", c.output_dir);
  detail::read_field(j, "seed", c.seed);
  detail::read_field(j, "success_threshold", c.success_threshold);
  detail::read_field(j, "record_wall_time", c.record_wall_time);
  detail::read_field(j, "threads", c.threads);
  detail::read_field(j, "capacity_sentence_len", c.capacity_sentence_len);
  return c;
}

// Dotted-path override, e.g. "model.d_hidden=128" or "attack.filters.semantic=true".
// Values parse as JSON when possible, otherwise as strings.
inline void apply_override(Json& j, const std::string& spec) {
  std::size_t eq = spec.find('=');
  if (eq == std::string::npos) throw ConfigError("override must look like key.path=value: " + spec);
  std::string path = spec.substr(0, eq);
  std::string value = spec.substr(eq + 1);
  Json parsed;
  try {
    parsed = Json::parse(value);
  } catch (...) {
    parsed = value;
  }
  Json* node = &j;
  std::size_t start = 0;
  while (true) {
    std::size_t dot = path.find('.', start);
    std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("bad override path: " + path);
    if (dot == std::string::npos) {
      (*node)[key] = parsed;
      break;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

inline Json load_config_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  try {
    return Json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
}

// --- synthetic corpora -------------------------------------------------------

// Token-disjoint sentences: each vocabulary word appears in exactly one
// sentence, so bigram chains identify sentences unambiguously.
inline std::vector<std::string> make_disjoint_corpus_lines(std::uint64_t seed, std::size_t n_sentences,
                                                           std::size_t content_len,
                                                           const std::string& prefix = "w") {
  std::size_t need = n_sentences * content_len;
  std::vector<std::size_t> pool(need);
  for (std::size_t i = 0; i < need; ++i) pool[i] = i;
  Rng rng(derive_seed(seed, 0xC0));
  for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng.below(i)]);
  std::vector<std::string> lines;
  std::size_t at = 0;
  for (std::size_t s = 0; s < n_sentences; ++s) {
    std::string line;
    for (std::size_t t = 0; t < content_len; ++t) {
      if (!line.empty()) line += ' ';
      line += prefix + std::to_string(pool[at++]);
    }
    lines.push_back(std::move(line));
  }
  return lines;
}

// Labeled dataset for utility training: label 1 sentences contain the
// designated positive marker token, label 0 the negative one.
inline ClientDataset make_utility_dataset(std::uint64_t seed, std::size_t n, std::size_t content_len,
                                          std::size_t vocab_size) {
  require(vocab_size >= 8, "utility dataset: vocab too small");
  ClientDataset d;
  Rng rng(derive_seed(seed, 0xDA7A));
  for (std::size_t i = 0; i < n; ++i) {
    int label = static_cast<int>(i % 2);
    TokenSeq s;
    s.push_back(label ? 1u : 2u);  // marker token
    for (std::size_t j = 1; j < content_len; ++j) {
      s.push_back(static_cast<TokenId>(3 + rng.below(vocab_size - 3)));
    }
    s.push_back(0);
    d.sequences.push_back(std::move(s));
    d.labels.push_back(label);
    d.source_texts.emplace_back();
  }
  return d;
}

// --- deterministic parallel map ----------------------------------------------

// Runs fn(i) for i in [0, n) on a pool; results land in index order, so the
// output is identical for any thread count.
template <typename Fn>
void parallel_for_indexed(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads == 0) threads = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (std::thread& th : pool) th.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// --- experiment commands -------------------------------------------------------

namespace detail {

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

inline std::string csv_num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", x);
  return buf;
}

// parameter columns: full precision so tiny sweep values stay distinct
inline std::string csv_param(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", x);
  return buf;
}

inline std::string csv_header(const ExperimentConfig& cfg, const std::string& columns) {
  std::string out = "# fedleak csv v1\n# config ";
  out += to_json(cfg).dump();
  out += "\n";
  out += columns;
  out += "\n";
  return out;
}

inline void echo_config(const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.output_dir);
  Json j = to_json(cfg);
  j["format_version"] = kReportFormatVersion;
  write_file(cfg.output_dir + "/config.json", j.dump(2) + "\n");
}

// Deterministic choice of `k` distinct sentence indices.
inline std::vector<std::size_t> sample_batch_indices(std::size_t corpus_size, std::size_t k, Rng& rng) {
  require(k <= corpus_size, "batch size exceeds corpus size");
  std::vector<std::size_t> idx(corpus_size);
  for (std::size_t i = 0; i < corpus_size; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + rng.below(corpus_size - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

struct RunResult {
  AttackReport report;
  double seconds = 0.0;
};

// One (batch_size, round) cell: sample, observe gradients, defend, attack.
inline RunResult run_attack_cell(const ExperimentConfig& cfg, const Model& model, const ClientDataset& dataset,
                                 const CorpusStats& stats, std::size_t batch_size, std::size_t round,
                                 const DefenseConfig& defense, const AttackConfig& attack) {
  auto t0 = std::chrono::steady_clock::now();
  Rng rng(derive_seed(cfg.seed, 0xBA7C + batch_size, round));
  std::vector<std::size_t> idx = sample_batch_indices(dataset.sequences.size(), batch_size, rng);
  GradientUpdate update = client_round(model, dataset, idx, static_cast<std::uint32_t>(round));
  if (defense.kind != DefenseKind::none) {
    DefenseConfig d = defense;
    d.seed = derive_seed(defense.seed, batch_size, round);
    update = apply_defense(std::move(update), d);
  }
  std::vector<std::string> truth;
  for (std::size_t i : idx) truth.push_back(dataset.source_texts[i]);
  RunResult out;
  out.report = attack_end_to_end(model, update, truth, attack, stats);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

struct LoadedExperiment {
  Model model;
  Corpus corpus;
  CorpusStats stats;
  ClientDataset dataset;
};

inline LoadedExperiment load_experiment(const ExperimentConfig& cfg) {
  LoadedExperiment e;
  e.corpus = load_corpus(cfg.corpus_path, cfg.model.max_seq_len);
  if (e.corpus.vocab_size() > cfg.model.vocab_size) {
    throw ConfigError("corpus vocabulary (" + std::to_string(e.corpus.vocab_size()) +
                      ") exceeds model vocab_size (" + std::to_string(cfg.model.vocab_size) + ")");
  }
  for (std::size_t b : cfg.batch_sizes) {
    if (b > e.corpus.sequences.size()) {
      throw ConfigError("batch size " + std::to_string(b) + " exceeds corpus size " +
                        std::to_string(e.corpus.sequences.size()));
    }
  }
  e.model = init_model(cfg.model);
  e.stats = build_corpus_stats(e.corpus);
  e.dataset.sequences = e.corpus.sequences;
  e.dataset.labels.resize(e.corpus.sequences.size());
  for (std::size_t i = 0; i < e.dataset.labels.size(); ++i) e.dataset.labels[i] = static_cast<int>(i % 2);
  e.dataset.source_texts = e.corpus.sentences;
  return e;
}

}  // namespace detail

// attack: batch-size x round grid of end-to-end runs, per-run JSON reports
// plus a summary CSV.
inline int cmd_attack(const ExperimentConfig& cfg) {
  cfg.validate(true);
  detail::LoadedExperiment e = detail::load_experiment(cfg);
  detail::echo_config(cfg);
  struct Cell {
    std::size_t batch_size, round;
  };
  std::vector<Cell> cells;
  for (std::size_t b : cfg.batch_sizes) {
    for (std::size_t r = 0; r < cfg.rounds; ++r) cells.push_back({b, r});
  }
  std::vector<detail::RunResult> results(cells.size());
  parallel_for_indexed(cells.size(), cfg.threads, [&](std::size_t i) {
    results[i] = detail::run_attack_cell(cfg, e.model, e.dataset, e.stats, cells[i].batch_size, cells[i].round,
                                         cfg.defense, cfg.attack);
  });
  std::string csv = detail::csv_header(cfg, "batch_size,round,R1,R2,bag_recall,bag_precision,seconds");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const AttackReport& rep = results[i].report;
    Json j = report_to_json(rep, e.stats, cfg.record_wall_time);
    j["experiment_config"] = to_json(cfg);
    detail::write_file(cfg.output_dir + "/attack_b" + std::to_string(cells[i].batch_size) + "_r" +
                           std::to_string(cells[i].round) + ".json",
                       j.dump(2) + "\n");
    csv += std::to_string(cells[i].batch_size) + "," + std::to_string(cells[i].round) + "," +
           detail::csv_num(rep.corpus_r1) + "," + detail::csv_num(rep.corpus_r2) + "," +
           detail::csv_num(rep.bag_recall) + "," + detail::csv_num(rep.bag_precision) + "," +
           detail::csv_num(cfg.record_wall_time ? results[i].seconds : 0.0) + "\n";
    std::fprintf(stderr, "[attack] b=%zu round=%zu R1=%.2f R2=%.2f (%.3fs)\n", cells[i].batch_size,
                 cells[i].round, rep.corpus_r1, rep.corpus_r2, results[i].seconds);
  }
  detail::write_file(cfg.output_dir + "/attack_summary.csv", csv);
  return 0;
}

struct SweepRow {
  std::string defense;
  double parameter = 0.0;
  double success_rate = 0.0;
  double mean_r1 = 0.0;
  double mean_r2 = 0.0;
  std::size_t runs = 0;
};

namespace detail {

// Success rate over (batch_sizes x rounds) runs under one defense setting.
inline SweepRow sweep_point(const ExperimentConfig& cfg, const LoadedExperiment& e,
                            const DefenseConfig& defense, const AttackConfig& attack,
                            const std::string& name, double parameter) {
  std::vector<double> r1s;
  double sum_r1 = 0.0, sum_r2 = 0.0;
  bool r2_defined = true;  // corpus R2 is -1 when a reference has fewer than 2 tokens
  for (std::size_t b : cfg.batch_sizes) {
    for (std::size_t r = 0; r < cfg.rounds; ++r) {
      RunResult res = run_attack_cell(cfg, e.model, e.dataset, e.stats, b, r, defense, attack);
      r1s.push_back(res.report.corpus_r1);
      sum_r1 += res.report.corpus_r1;
      sum_r2 += res.report.corpus_r2;
      if (res.report.corpus_r2 < 0.0) r2_defined = false;
    }
  }
  SweepRow row;
  row.defense = name;
  row.parameter = parameter;
  row.success_rate = attack_success_rate(r1s, cfg.success_threshold);
  row.mean_r1 = sum_r1 / static_cast<double>(r1s.size());
  row.mean_r2 = r2_defined ? sum_r2 / static_cast<double>(r1s.size()) : -1.0;
  row.runs = r1s.size();
  return row;
}

}  // namespace detail

// defense-sweep: success rates per (defense, parameter), Table-3 shape.
inline int cmd_defense_sweep(const ExperimentConfig& cfg, const std::vector<double>& sigmas,
                             const std::vector<double>& prune_rates) {
  cfg.validate(true);
  if (sigmas.empty() && prune_rates.empty()) {
    throw ConfigError("defense-sweep: both parameter grids are empty");
  }
  detail::LoadedExperiment e = detail::load_experiment(cfg);
  detail::echo_config(cfg);
  struct Point {
    DefenseKind kind;
    double parameter;
  };
  std::vector<Point> points;
  for (double s : sigmas) points.push_back({DefenseKind::dp, s});
  for (double r : prune_rates) points.push_back({DefenseKind::prune, r});
  std::vector<SweepRow> rows(points.size());
  parallel_for_indexed(points.size(), cfg.threads, [&](std::size_t i) {
    DefenseConfig d = cfg.defense;
    d.kind = points[i].kind;
    if (points[i].kind == DefenseKind::dp) {
      d.sigma = points[i].parameter;
      if (d.clip_bound <= 0.0) d.clip_bound = 1.0;
    } else {
      d.prune_rate = points[i].parameter;
    }
    rows[i] = detail::sweep_point(cfg, e, d, cfg.attack, points[i].kind == DefenseKind::dp ? "dp" : "gp",
                                  points[i].parameter);
    std::fprintf(stderr, "[defense-sweep] %s %.6g success=%.2f\n", rows[i].defense.c_str(), rows[i].parameter,
                 rows[i].success_rate);
  });
  std::string csv = detail::csv_header(cfg, "defense,parameter,success_rate,mean_r1,mean_r2,runs");
  for (const SweepRow& r : rows) {
    csv += r.defense + "," + detail::csv_param(r.parameter) + "," + detail::csv_num(r.success_rate) + "," +
           detail::csv_num(r.mean_r1) + "," + detail::csv_num(r.mean_r2) + "," + std::to_string(r.runs) + "\n";
  }
  detail::write_file(cfg.output_dir + "/defense_sweep.csv", csv);
  return 0;
}

// hparam-sweep: success vs reduction factor at fixed batch, and success vs
// span tolerance across batch sizes (under the configured small update
// perturbation).
inline int cmd_hparam_sweep(const ExperimentConfig& cfg, const std::vector<std::size_t>& reduction_factors,
                            const std::vector<double>& epsilons) {
  cfg.validate(true);
  if (reduction_factors.empty() && epsilons.empty()) {
    throw ConfigError("hparam-sweep: both parameter grids are empty");
  }
  detail::echo_config(cfg);

  // part A: reduction factor sweep at the first configured batch size
  std::vector<SweepRow> factor_rows(reduction_factors.size());
  parallel_for_indexed(reduction_factors.size(), cfg.threads, [&](std::size_t i) {
    ExperimentConfig sub = cfg;
    sub.model.reduction_factor = reduction_factors[i];
    sub.batch_sizes = {cfg.batch_sizes.front()};
    detail::LoadedExperiment e = detail::load_experiment(sub);
    factor_rows[i] =
        detail::sweep_point(sub, e, sub.defense, sub.attack, "reduction_factor",
                            static_cast<double>(reduction_factors[i]));
    std::fprintf(stderr, "[hparam-sweep] factor=%zu success=%.2f\n", reduction_factors[i],
                 factor_rows[i].success_rate);
  });
  if (!reduction_factors.empty()) {
    std::string csv = detail::csv_header(cfg, "reduction_factor,success_rate,mean_r1,mean_r2,runs");
    for (const SweepRow& r : factor_rows) {
      csv += std::to_string(static_cast<std::size_t>(r.parameter)) + "," + detail::csv_num(r.success_rate) +
             "," + detail::csv_num(r.mean_r1) + "," + detail::csv_num(r.mean_r2) + "," +
             std::to_string(r.runs) + "\n";
    }
    detail::write_file(cfg.output_dir + "/hparam_reduction.csv", csv);
  }

  // part B: tolerance sweep across batch sizes
  struct EpsPoint {
    double epsilon;
    std::size_t batch_size;
  };
  std::vector<EpsPoint> points;
  std::vector<std::size_t> eps_batches =
      cfg.sweep.epsilon_batch_sizes.empty() ? cfg.batch_sizes : cfg.sweep.epsilon_batch_sizes;
  for (double eps : epsilons) {
    for (std::size_t b : eps_batches) points.push_back({eps, b});
  }
  std::vector<SweepRow> eps_rows(points.size());
  if (!points.empty()) {
    detail::LoadedExperiment e = detail::load_experiment(cfg);
    parallel_for_indexed(points.size(), cfg.threads, [&](std::size_t i) {
      ExperimentConfig sub = cfg;
      sub.attack.epsilon_ea = points[i].epsilon;
      sub.attack.epsilon_la = points[i].epsilon;
      sub.batch_sizes = {points[i].batch_size};
      DefenseConfig d = sub.defense;
      if (cfg.sweep.epsilon_noise_sigma > 0.0) {
        d.kind = DefenseKind::dp;
        d.sigma = cfg.sweep.epsilon_noise_sigma;
        d.clip_bound = 1.0;
      }
      eps_rows[i] = detail::sweep_point(sub, e, d, sub.attack, "epsilon", points[i].epsilon);
      std::fprintf(stderr, "[hparam-sweep] eps=%.6g b=%zu success=%.2f\n", points[i].epsilon,
                   points[i].batch_size, eps_rows[i].success_rate);
    });
    std::string csv = detail::csv_header(cfg, "epsilon,batch_size,success_rate,mean_r1,runs");
    for (std::size_t i = 0; i < points.size(); ++i) {
      const SweepRow& r = eps_rows[i];
      csv += detail::csv_param(r.parameter) + "," + std::to_string(points[i].batch_size) + "," +
             detail::csv_num(r.success_rate) + "," + detail::csv_num(r.mean_r1) + "," + std::to_string(r.runs) +
             "\n";
    }
    detail::write_file(cfg.output_dir + "/hparam_epsilon.csv", csv);
  }
  return 0;
}

// capacity: recoverable-token sweep, CSV of (batch_size, round, n, rank, k, kmax).
inline int cmd_capacity(const ExperimentConfig& cfg) {
  cfg.validate(false);
  detail::echo_config(cfg);
  struct Point {
    std::size_t size_index, round;
  };
  std::vector<Point> points;
  for (std::size_t i = 0; i < cfg.batch_sizes.size(); ++i) {
    for (std::size_t r = 0; r < cfg.rounds; ++r) points.push_back({i, r});
  }
  std::vector<CapacityReport> reports(points.size());
  Model model = init_model(cfg.model);
  parallel_for_indexed(points.size(), cfg.threads, [&](std::size_t i) {
    const Point& p = points[i];
    Rng rng(derive_seed(cfg.seed, p.size_index, p.round));
    std::vector<TokenSeq> batch =
        synthetic_capacity_batch(cfg.model, cfg.batch_sizes[p.size_index], cfg.capacity_sentence_len, rng);
    std::vector<int> labels(batch.size());
    for (std::size_t k = 0; k < labels.size(); ++k) labels[k] = static_cast<int>(k % 2);
    ModelGradients g = adapter_gradients(model, batch, labels);
    GradientUpdate u;
    u.embedding_adapter = std::move(g.embedding_adapter);
    u.layer_adapter = std::move(g.layer_adapter);
    u.batch_size = static_cast<std::uint32_t>(batch.size());
    u.round_id = static_cast<std::uint32_t>(p.round);
    std::set<TokenId> truth;
    for (const TokenSeq& s : batch) truth.insert(s.begin(), s.end());
    AttackConfig ac = cfg.attack;
    ac.mode = cfg.model.attention_mode;
    reports[i] = measure_capacity(model, u, truth, ac);
    reports[i].batch_size = cfg.batch_sizes[p.size_index];
    reports[i].round = p.round;
  });
  std::string csv = detail::csv_header(cfg, "batch_size,round,n,rank,k,kmax");
  for (const CapacityReport& r : reports) {
    csv += std::to_string(r.batch_size) + "," + std::to_string(r.round) + "," +
           std::to_string(r.true_unique_tokens) + "," + std::to_string(r.subspace_rank) + "," +
           std::to_string(r.recovered_tokens) + "," + std::to_string(r.theoretical_kmax) + "\n";
    std::fprintf(stderr, "[capacity] b=%zu round=%zu n=%zu rank=%zu k=%zu\n", r.batch_size, r.round,
                 r.true_unique_tokens, r.subspace_rank, r.recovered_tokens);
  }
  detail::write_file(cfg.output_dir + "/capacity.csv", csv);
  return 0;
}

}  // namespace fedleak
