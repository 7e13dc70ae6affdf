#pragma once

#include <algorithm>
#include <numeric>

#include "fedleak/model.hpp"

namespace fedleak {

struct ClientDataset {
  std::vector<TokenSeq> sequences;
  std::vector<int> labels;
  // Ground truth for evaluation only; never enters the attack path.
  std::vector<std::string> source_texts;

  void validate() const {
    require(sequences.size() == labels.size(), "dataset: sequences/labels size mismatch");
    for (const TokenSeq& s : sequences) require(!s.empty(), "dataset: empty sequence");
  }
};

// The adversary's observable: per-adapter gradients for one round.
struct GradientUpdate {
  std::vector<AdapterGradients> embedding_adapter;  // one per stack block
  std::vector<AdapterGradients> layer_adapter;
  std::uint32_t batch_size = 0;
  std::uint32_t round_id = 0;

  bool operator==(const GradientUpdate&) const = default;
};

enum class DefenseKind { none, dp, prune };

struct DefenseConfig {
  DefenseKind kind = DefenseKind::none;
  double sigma = 0.0;       // noise multiplier (dp)
  double clip_bound = 1.0;  // per-tensor clipping bound (dp)
  double prune_rate = 0.0;  // fraction of entries zeroed (prune)
  std::uint64_t seed = 0;

  void validate() const {
    if (kind == DefenseKind::dp) {
      if (sigma < 0.0) throw ConfigError("defense: sigma must be >= 0");
      if (clip_bound <= 0.0) throw ConfigError("defense: clip_bound must be > 0");
    } else if (kind == DefenseKind::prune) {
      if (prune_rate < 0.0 || prune_rate >= 1.0) throw ConfigError("defense: prune_rate must be in [0,1)");
    }
  }
};

inline GradientUpdate client_round(const Model& m, const ClientDataset& dataset,
                                   const std::vector<std::size_t>& batch_indices, std::uint32_t round_id = 0) {
  require(!batch_indices.empty(), "client_round: empty batch selection");
  std::vector<TokenSeq> batch;
  std::vector<int> labels;
  for (std::size_t idx : batch_indices) {
    require(idx < dataset.sequences.size(), "client_round: batch index out of range");
    batch.push_back(dataset.sequences[idx]);
    labels.push_back(dataset.labels[idx]);
  }
  ModelGradients g = adapter_gradients(m, batch, labels);
  GradientUpdate u;
  u.embedding_adapter = std::move(g.embedding_adapter);
  u.layer_adapter = std::move(g.layer_adapter);
  u.batch_size = static_cast<std::uint32_t>(batch.size());
  u.round_id = round_id;
  return u;
}

namespace detail {

template <typename Fn>
void for_each_tensor(GradientUpdate& u, Fn&& fn) {
  for (auto* site : {&u.embedding_adapter, &u.layer_adapter}) {
    for (AdapterGradients& g : *site) {
      fn(g.grad_down_weight.data);
      fn(g.grad_down_bias);
      fn(g.grad_up_weight.data);
      fn(g.grad_up_bias);
    }
  }
}

inline void clip_and_noise(Vec& t, double clip_bound, double noise_std, Rng& rng) {
  double n = norm2(t);
  if (n > clip_bound) {
    double s = clip_bound / n;
    for (double& x : t) x *= s;
  }
  if (noise_std > 0.0) {
    for (double& x : t) x += rng.normal(0.0, noise_std);
  }
}

inline void prune_tensor(Vec& t, double rate) {
  std::size_t n = t.size();
  std::size_t k = static_cast<std::size_t>(std::floor(rate * static_cast<double>(n)));
  if (k == 0) return;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // smallest |value| first, ties broken by index order
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(t[a]) < std::abs(t[b]); });
  for (std::size_t i = 0; i < k; ++i) t[order[i]] = 0.0;
}

}  // namespace detail

// Per-tensor clipping to clip_bound, then seeded Gaussian noise with
// std sigma * clip_bound on every entry.
inline GradientUpdate apply_dp(GradientUpdate update, const DefenseConfig& d) {
  require(d.kind == DefenseKind::dp, "apply_dp: defense kind must be dp");
  d.validate();
  Rng rng(derive_seed(d.seed, 0x6470));  // one stream, tensors in fixed order
  double noise_std = d.sigma * d.clip_bound;
  detail::for_each_tensor(update, [&](Vec& t) { detail::clip_and_noise(t, d.clip_bound, noise_std, rng); });
  return update;
}

// Zeroes the prune_rate fraction of smallest-|value| entries per tensor.
inline GradientUpdate apply_pruning(GradientUpdate update, const DefenseConfig& d) {
  require(d.kind == DefenseKind::prune, "apply_pruning: defense kind must be prune");
  d.validate();
  detail::for_each_tensor(update, [&](Vec& t) { detail::prune_tensor(t, d.prune_rate); });
  return update;
}

inline GradientUpdate apply_defense(GradientUpdate update, const DefenseConfig& d) {
  switch (d.kind) {
    case DefenseKind::none:
      return update;
    case DefenseKind::dp:
      return apply_dp(std::move(update), d);
    case DefenseKind::prune:
      return apply_pruning(std::move(update), d);
  }
  return update;
}

// --- wire format ------------------------------------------------------------

inline constexpr char kUpdateMagic[5] = "FLKG";
inline constexpr std::uint32_t kUpdateFormatVersion = 1;

inline std::string serialize_update(const GradientUpdate& u) {
  require(!u.embedding_adapter.empty() && !u.layer_adapter.empty(), "serialize_update: empty tensor list");
  ByteWriter w;
  w.magic(kUpdateMagic);
  w.u32(kUpdateFormatVersion);
  w.u32(u.batch_size);
  w.u32(u.round_id);
  w.u32(static_cast<std::uint32_t>(u.embedding_adapter.size()));
  w.u32(static_cast<std::uint32_t>(u.layer_adapter.size()));
  for (const auto* site : {&u.embedding_adapter, &u.layer_adapter}) {
    for (const AdapterGradients& g : *site) {
      w.tensor(g.grad_down_weight);
      w.vec(g.grad_down_bias);
      w.tensor(g.grad_up_weight);
      w.vec(g.grad_up_bias);
    }
  }
  return w.bytes();
}

inline GradientUpdate deserialize_update(std::string_view bytes) {
  ByteReader r(bytes);
  r.expect_magic(kUpdateMagic, "gradient update");
  std::uint32_t ver = r.u32();
  if (ver != kUpdateFormatVersion) {
    throw std::invalid_argument("gradient update: unsupported version " + std::to_string(ver));
  }
  GradientUpdate u;
  u.batch_size = r.u32();
  u.round_id = r.u32();
  std::uint32_t n_ea = r.u32();
  std::uint32_t n_la = r.u32();
  if (n_ea == 0 || n_la == 0) {
    throw std::invalid_argument("gradient update: empty tensor list at offset " + std::to_string(r.offset()));
  }
  auto read_site = [&](std::uint32_t n) {
    std::vector<AdapterGradients> site(n);
    for (AdapterGradients& g : site) {
      g.grad_down_weight = r.tensor();
      g.grad_down_bias = r.vec();
      g.grad_up_weight = r.tensor();
      g.grad_up_bias = r.vec();
    }
    return site;
  };
  u.embedding_adapter = read_site(n_ea);
  u.layer_adapter = read_site(n_la);
  if (!r.exhausted()) {
    throw std::invalid_argument("gradient update: trailing bytes at offset " + std::to_string(r.offset()));
  }
  return u;
}

// Model-utility evaluation: SGD on adapters + head, with the shared adapter
// gradients optionally passed through a defense first.
inline double train_utility(Model& m, const ClientDataset& dataset, std::size_t steps, double lr,
                            const DefenseConfig& defense) {
  dataset.validate();
  defense.validate();
  GradientTransform hook = nullptr;
  if (defense.kind != DefenseKind::none) {
    std::uint64_t step_counter = 0;
    hook = [&m, defense, step_counter](ModelGradients& g) mutable {
      GradientUpdate u;
      u.embedding_adapter = std::move(g.embedding_adapter);
      u.layer_adapter = std::move(g.layer_adapter);
      DefenseConfig d = defense;
      d.seed = derive_seed(defense.seed, 0x7472, step_counter++);
      u = apply_defense(std::move(u), d);
      g.embedding_adapter = std::move(u.embedding_adapter);
      g.layer_adapter = std::move(u.layer_adapter);
    };
  }
  return train_adapters(m, dataset.sequences, dataset.labels, steps, lr, hook);
}

}  // namespace fedleak
