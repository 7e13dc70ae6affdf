#pragma once

#include <fstream>
#include <functional>
#include <optional>
#include <string>

#include "fedleak/binio.hpp"
#include "fedleak/linalg.hpp"
#include "fedleak/rng.hpp"

namespace fedleak {

enum class AttentionMode { unidirectional, bidirectional };
enum class PositionalEncoding { none, additive_before_embedding_adapter, additive_after_embedding_adapter };
enum class Activation { relu, gelu };

struct ModelConfig {
  std::size_t vocab_size = 200;
  std::size_t d_hidden = 64;
  std::size_t reduction_factor = 2;
  AttentionMode attention_mode = AttentionMode::unidirectional;
  PositionalEncoding positional_encoding = PositionalEncoding::none;
  std::size_t max_seq_len = 16;
  Activation adapter_activation = Activation::relu;
  std::size_t adapter_depth = 1;
  std::uint64_t seed = 0;

  std::size_t d_bottleneck() const { return d_hidden / reduction_factor; }

  void validate() const {
    if (vocab_size < 2) throw ConfigError("model: vocab_size must be >= 2");
    if (d_hidden == 0) throw ConfigError("model: d_hidden must be positive");
    if (reduction_factor != 1 && reduction_factor != 2 && reduction_factor != 4 && reduction_factor != 8) {
      throw ConfigError("model: reduction_factor must be one of {1,2,4,8}");
    }
    if (d_hidden % reduction_factor != 0) {
      throw ConfigError("model: d_hidden must be divisible by reduction_factor");
    }
    if (max_seq_len < 1) throw ConfigError("model: max_seq_len must be >= 1");
    if (adapter_depth < 1) throw ConfigError("model: adapter_depth must be >= 1");
  }
};

// Bottleneck adapter block: out = in + up(act(down(in))). Trainable.
struct Adapter {
  Matrix down_weight;  // d_bottleneck x d_in
  Vec down_bias;       // d_bottleneck
  Matrix up_weight;    // d_in x d_bottleneck
  Vec up_bias;         // d_in

  bool operator==(const Adapter&) const = default;
};

// Frozen transformer layer: single-head scaled dot-product attention plus a
// ReLU feed-forward sublayer, both with residual connections.
struct TransformerLayer {
  Matrix w_q, w_k, w_v, w_o;  // d_hidden x d_hidden
  Matrix ff_w1;               // d_hidden x d_hidden
  Vec ff_b1;
  Matrix ff_w2;  // d_hidden x d_hidden
  Vec ff_b2;

  bool operator==(const TransformerLayer&) const = default;
};

struct ClassifierHead {
  Vec weight;  // d_hidden
  double bias = 0.0;

  bool operator==(const ClassifierHead&) const = default;
};

struct AdapterGradients {
  Matrix grad_down_weight;
  Vec grad_down_bias;
  Matrix grad_up_weight;
  Vec grad_up_bias;

  bool operator==(const AdapterGradients&) const = default;
};

struct ModelGradients {
  std::vector<AdapterGradients> embedding_adapter;  // one per stack block
  std::vector<AdapterGradients> layer_adapter;
  Vec head_weight;
  double head_bias = 0.0;
};

struct SequenceTrace {
  std::vector<Vec> ea_inputs;  // embedding-adapter inputs, one per position
  std::vector<Vec> la_inputs;  // layer-adapter inputs (layer-1 outputs)
};

struct ForwardTrace {
  std::vector<SequenceTrace> sequences;
  std::vector<double> per_example_loss;
  double loss = 0.0;
};

inline double activate(Activation a, double x) {
  if (a == Activation::relu) return x > 0.0 ? x : 0.0;
  return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244));
}

inline double activate_grad(Activation a, double x) {
  if (a == Activation::relu) return x > 0.0 ? 1.0 : 0.0;
  double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
  double pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779;
  return cdf + x * pdf;
}

class Model {
 public:
  ModelConfig config;
  Matrix embedding;                  // vocab x d_hidden, frozen
  std::optional<Matrix> positional;  // max_seq_len x d_hidden, frozen
  TransformerLayer layer1, layer2;   // frozen
  std::vector<Adapter> embedding_adapter;  // trainable stack
  std::vector<Adapter> layer_adapter;      // trainable stack
  ClassifierHead head;                     // trainable

  bool causal() const { return config.attention_mode == AttentionMode::unidirectional; }

  // The exact vector the embedding adapter receives for (token, position).
  Vec embed(TokenId token, std::size_t position) const {
    require(token < config.vocab_size, "embed: token id out of range");
    require(position < config.max_seq_len, "embed: position out of range");
    Vec x(embedding.row(token).begin(), embedding.row(token).end());
    if (config.positional_encoding == PositionalEncoding::additive_before_embedding_adapter) {
      axpy(1.0, positional->row(position), x);
    }
    return x;
  }

  Vec embedding_row(TokenId token) const {
    require(token < config.vocab_size, "token id out of range");
    return Vec(embedding.row(token).begin(), embedding.row(token).end());
  }
};

inline Model init_model(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config = config;
  Rng rng(config.seed);
  const double a = 1.0 / std::sqrt(static_cast<double>(config.d_hidden));
  auto mat = [&](std::size_t r, std::size_t c) {
    Matrix t(r, c);
    for (double& x : t.data) x = rng.uniform(-a, a);
    return t;
  };
  auto vec = [&](std::size_t n) {
    Vec v(n);
    for (double& x : v) x = rng.uniform(-a, a);
    return v;
  };
  const std::size_t d = config.d_hidden;
  const std::size_t db = config.d_bottleneck();

  m.embedding = mat(config.vocab_size, d);
  if (config.positional_encoding != PositionalEncoding::none) {
    m.positional = mat(config.max_seq_len, d);
  }
  auto make_layer = [&] {
    TransformerLayer l;
    l.w_q = mat(d, d);
    l.w_k = mat(d, d);
    l.w_v = mat(d, d);
    l.w_o = mat(d, d);
    l.ff_w1 = mat(d, d);
    l.ff_b1 = vec(d);
    l.ff_w2 = mat(d, d);
    l.ff_b2 = vec(d);
    return l;
  };
  m.layer1 = make_layer();
  m.layer2 = make_layer();
  auto make_stack = [&] {
    std::vector<Adapter> stack(config.adapter_depth);
    for (Adapter& blk : stack) {
      blk.down_weight = mat(db, d);
      blk.down_bias = vec(db);
      blk.up_weight = mat(d, db);
      blk.up_bias = vec(d);
    }
    return stack;
  };
  m.embedding_adapter = make_stack();
  m.layer_adapter = make_stack();
  m.head.weight = vec(d);
  m.head.bias = 0.0;
  return m;
}

namespace detail {

struct AdapterCache {
  std::vector<Vec> input;  // per block
  std::vector<Vec> pre;
  std::vector<Vec> act;
  Vec output;
};

inline Vec adapter_stack_forward(const std::vector<Adapter>& stack, Activation actf, const Vec& x0,
                                 AdapterCache* cache) {
  Vec x = x0;
  for (const Adapter& blk : stack) {
    Vec pre = matvec(blk.down_weight, x);
    for (std::size_t j = 0; j < pre.size(); ++j) pre[j] += blk.down_bias[j];
    Vec act(pre.size());
    for (std::size_t j = 0; j < pre.size(); ++j) act[j] = activate(actf, pre[j]);
    Vec out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += dot(blk.up_weight.row(i), act) + blk.up_bias[i];
    if (cache) {
      cache->input.push_back(std::move(x));
      cache->pre.push_back(std::move(pre));
      cache->act.push_back(std::move(act));
    }
    x = std::move(out);
  }
  if (cache) cache->output = x;
  return x;
}

// d(stack input); accumulates parameter gradients if grads != nullptr.
inline Vec adapter_stack_backward(const std::vector<Adapter>& stack, Activation actf,
                                  const AdapterCache& cache, const Vec& dout0,
                                  std::vector<AdapterGradients>* grads) {
  Vec dout = dout0;
  for (std::size_t bi = stack.size(); bi-- > 0;) {
    const Adapter& blk = stack[bi];
    const Vec& in = cache.input[bi];
    const Vec& pre = cache.pre[bi];
    const Vec& act = cache.act[bi];
    const std::size_t db = blk.down_bias.size();
    Vec dact(db, 0.0);
    for (std::size_t i = 0; i < dout.size(); ++i) {
      axpy(dout[i], blk.up_weight.row(i), dact);
    }
    Vec dpre(db);
    for (std::size_t j = 0; j < db; ++j) dpre[j] = dact[j] * activate_grad(actf, pre[j]);
    if (grads) {
      AdapterGradients& g = (*grads)[bi];
      for (std::size_t i = 0; i < dout.size(); ++i) {
        g.grad_up_bias[i] += dout[i];
        axpy(dout[i], std::span<const double>(act), g.grad_up_weight.row(i));
      }
      for (std::size_t j = 0; j < db; ++j) {
        g.grad_down_bias[j] += dpre[j];
        axpy(dpre[j], std::span<const double>(in), g.grad_down_weight.row(j));
      }
    }
    Vec din = dout;
    for (std::size_t j = 0; j < db; ++j) {
      axpy(dpre[j], blk.down_weight.row(j), din);
    }
    dout = std::move(din);
  }
  return dout;
}

struct LayerCache {
  std::vector<Vec> in;       // layer input per position
  std::vector<Vec> q, k, v;  // per position
  std::vector<Vec> alpha;    // attention row per position (size = attended span)
  std::vector<Vec> ctx;      // per position
  std::vector<Vec> a;        // post-attention residual per position
  std::vector<Vec> ff_pre;   // per position
  std::vector<Vec> ff_act;   // per position
  std::vector<Vec> out;      // per position
};

// Softmax attention row for query position p over keys [0, span).
inline Vec attention_row(const std::vector<Vec>& ks, const Vec& q, std::size_t span, double inv_sqrt_d) {
  Vec scores(span);
  double mx = -1e300;
  for (std::size_t t = 0; t < span; ++t) {
    scores[t] = dot(q, ks[t]) * inv_sqrt_d;
    if (scores[t] > mx) mx = scores[t];
  }
  double z = 0.0;
  for (std::size_t t = 0; t < span; ++t) {
    scores[t] = std::exp(scores[t] - mx);
    z += scores[t];
  }
  for (std::size_t t = 0; t < span; ++t) scores[t] /= z;
  return scores;
}

inline std::vector<Vec> layer_forward(const TransformerLayer& l, const std::vector<Vec>& in, bool causal,
                                      LayerCache* cache) {
  const std::size_t n = in.size();
  const std::size_t d = in.empty() ? 0 : in[0].size();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<Vec> q(n), k(n), v(n);
  for (std::size_t p = 0; p < n; ++p) {
    q[p] = matvec(l.w_q, in[p]);
    k[p] = matvec(l.w_k, in[p]);
    v[p] = matvec(l.w_v, in[p]);
  }
  std::vector<Vec> out(n), alpha(n), ctx(n), apost(n), ffpre(n), ffact(n);
  for (std::size_t p = 0; p < n; ++p) {
    std::size_t span = causal ? p + 1 : n;
    alpha[p] = attention_row(k, q[p], span, inv_sqrt_d);
    Vec c(d, 0.0);
    for (std::size_t t = 0; t < span; ++t) axpy(alpha[p][t], v[t], c);
    ctx[p] = std::move(c);
    Vec ao = matvec(l.w_o, ctx[p]);
    Vec a = in[p];
    axpy(1.0, ao, a);
    Vec fp = matvec(l.ff_w1, a);
    for (std::size_t i = 0; i < d; ++i) fp[i] += l.ff_b1[i];
    Vec fa(d);
    for (std::size_t i = 0; i < d; ++i) fa[i] = fp[i] > 0.0 ? fp[i] : 0.0;
    Vec o = a;
    for (std::size_t i = 0; i < d; ++i) o[i] += dot(l.ff_w2.row(i), fa) + l.ff_b2[i];
    apost[p] = std::move(a);
    ffpre[p] = std::move(fp);
    ffact[p] = std::move(fa);
    out[p] = std::move(o);
  }
  if (cache) {
    cache->in = in;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->alpha = std::move(alpha);
    cache->ctx = std::move(ctx);
    cache->a = std::move(apost);
    cache->ff_pre = std::move(ffpre);
    cache->ff_act = std::move(ffact);
    cache->out = out;
  }
  return out;
}

// Returns d(layer input). Frozen layer: no parameter gradients.
inline std::vector<Vec> layer_backward(const TransformerLayer& l, const LayerCache& c, bool causal,
                                       const std::vector<Vec>& dout) {
  const std::size_t n = c.in.size();
  const std::size_t d = c.in.empty() ? 0 : c.in[0].size();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<Vec> da(n), dctx(n);
  for (std::size_t p = 0; p < n; ++p) {
    // FFN backward
    Vec dfact(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) axpy(dout[p][i], l.ff_w2.row(i), dfact);
    Vec dfpre(d);
    for (std::size_t i = 0; i < d; ++i) dfpre[i] = c.ff_pre[p][i] > 0.0 ? dfact[i] : 0.0;
    Vec dap = dout[p];
    for (std::size_t i = 0; i < d; ++i) axpy(dfpre[i], l.ff_w1.row(i), dap);
    // attention output projection backward
    dctx[p] = matvec_t(l.w_o, dap);
    da[p] = std::move(dap);
  }
  std::vector<Vec> dq(n, Vec(d, 0.0)), dk(n, Vec(d, 0.0)), dv(n, Vec(d, 0.0));
  for (std::size_t p = 0; p < n; ++p) {
    std::size_t span = causal ? p + 1 : n;
    Vec dalpha(span);
    for (std::size_t t = 0; t < span; ++t) {
      dalpha[t] = dot(dctx[p], c.v[t]);
      axpy(c.alpha[p][t], dctx[p], dv[t]);
    }
    double inner = 0.0;
    for (std::size_t t = 0; t < span; ++t) inner += c.alpha[p][t] * dalpha[t];
    for (std::size_t t = 0; t < span; ++t) {
      double ds = c.alpha[p][t] * (dalpha[t] - inner);
      axpy(ds * inv_sqrt_d, c.k[t], dq[p]);
      axpy(ds * inv_sqrt_d, c.q[p], dk[t]);
    }
  }
  std::vector<Vec> din(n);
  for (std::size_t p = 0; p < n; ++p) {
    din[p] = da[p];  // residual path
    Vec tmp = matvec_t(l.w_q, dq[p]);
    axpy(1.0, tmp, din[p]);
    tmp = matvec_t(l.w_k, dk[p]);
    axpy(1.0, tmp, din[p]);
    tmp = matvec_t(l.w_v, dv[p]);
    axpy(1.0, tmp, din[p]);
  }
  return din;
}

struct SequenceCache {
  std::vector<AdapterCache> ea;  // per position
  LayerCache l1;
  std::vector<AdapterCache> la;  // per position
  LayerCache l2;
  std::vector<Vec> z2;
  double p = 0.0;  // sigmoid(logit)
};

}  // namespace detail

inline AdapterGradients zero_adapter_gradients(std::size_t db, std::size_t d) {
  AdapterGradients g;
  g.grad_down_weight = Matrix(db, d);
  g.grad_down_bias = Vec(db, 0.0);
  g.grad_up_weight = Matrix(d, db);
  g.grad_up_bias = Vec(d, 0.0);
  return g;
}

// Forward pass over a batch; the trace records, per sequence and position,
// the embedding-adapter input and the layer-adapter input vectors.
inline ForwardTrace forward(const Model& m, const std::vector<TokenSeq>& batch, const std::vector<int>& labels,
                            std::vector<detail::SequenceCache>* caches = nullptr) {
  require(!batch.empty(), "forward: empty batch");
  require(batch.size() == labels.size(), "forward: batch/labels size mismatch");
  ForwardTrace trace;
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TokenSeq& seq = batch[i];
    require(!seq.empty(), "forward: empty sequence");
    require(seq.size() <= m.config.max_seq_len, "forward: sequence exceeds max_seq_len");
    require(labels[i] == 0 || labels[i] == 1, "forward: labels must be 0 or 1");
    const std::size_t L = seq.size();
    SequenceTrace st;
    detail::SequenceCache sc;
    std::vector<Vec> u(L);
    for (std::size_t p = 0; p < L; ++p) {
      Vec x = m.embed(seq[p], p);
      st.ea_inputs.push_back(x);
      detail::AdapterCache ac;
      Vec y = detail::adapter_stack_forward(m.embedding_adapter, m.config.adapter_activation, x, &ac);
      if (m.config.positional_encoding == PositionalEncoding::additive_after_embedding_adapter) {
        axpy(1.0, m.positional->row(p), y);
      }
      sc.ea.push_back(std::move(ac));
      u[p] = std::move(y);
    }
    std::vector<Vec> h = detail::layer_forward(m.layer1, u, m.causal(), &sc.l1);
    std::vector<Vec> z(L);
    for (std::size_t p = 0; p < L; ++p) {
      st.la_inputs.push_back(h[p]);
      detail::AdapterCache ac;
      z[p] = detail::adapter_stack_forward(m.layer_adapter, m.config.adapter_activation, h[p], &ac);
      sc.la.push_back(std::move(ac));
    }
    sc.z2 = detail::layer_forward(m.layer2, z, m.causal(), &sc.l2);
    Vec pooled(m.config.d_hidden, 0.0);
    for (const Vec& zp : sc.z2) axpy(1.0 / static_cast<double>(L), zp, pooled);
    double logit = dot(pooled, m.head.weight) + m.head.bias;
    double prob = 1.0 / (1.0 + std::exp(-logit));
    sc.p = prob;
    double y = labels[i];
    const double eps = 1e-12;
    double loss = -(y * std::log(prob + eps) + (1.0 - y) * std::log(1.0 - prob + eps));
    trace.per_example_loss.push_back(loss);
    total += loss;
    trace.sequences.push_back(std::move(st));
    if (caches) caches->push_back(std::move(sc));
  }
  trace.loss = total / static_cast<double>(batch.size());
  return trace;
}

// Exact analytic gradients of the batch-mean loss w.r.t. every adapter
// parameter (and the classifier head). Frozen tensors get no entries.
inline ModelGradients adapter_gradients(const Model& m, const std::vector<TokenSeq>& batch,
                                        const std::vector<int>& labels, ForwardTrace* trace_out = nullptr) {
  std::vector<detail::SequenceCache> caches;
  ForwardTrace trace = forward(m, batch, labels, &caches);
  if (trace_out) *trace_out = trace;

  const std::size_t d = m.config.d_hidden;
  const std::size_t db = m.config.d_bottleneck();
  ModelGradients g;
  for (std::size_t b = 0; b < m.config.adapter_depth; ++b) {
    g.embedding_adapter.push_back(zero_adapter_gradients(db, d));
    g.layer_adapter.push_back(zero_adapter_gradients(db, d));
  }
  g.head_weight = Vec(d, 0.0);
  g.head_bias = 0.0;

  const double invB = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const detail::SequenceCache& sc = caches[i];
    const std::size_t L = batch[i].size();
    double dlogit = (sc.p - static_cast<double>(labels[i])) * invB;
    Vec pooled(d, 0.0);
    for (const Vec& zp : sc.z2) axpy(1.0 / static_cast<double>(L), zp, pooled);
    axpy(dlogit, pooled, g.head_weight);
    g.head_bias += dlogit;
    std::vector<Vec> dz2(L);
    for (std::size_t p = 0; p < L; ++p) {
      dz2[p] = Vec(d);
      for (std::size_t j = 0; j < d; ++j) dz2[p][j] = dlogit * m.head.weight[j] / static_cast<double>(L);
    }
    std::vector<Vec> dz = detail::layer_backward(m.layer2, sc.l2, m.causal(), dz2);
    std::vector<Vec> dh(L);
    for (std::size_t p = 0; p < L; ++p) {
      dh[p] = detail::adapter_stack_backward(m.layer_adapter, m.config.adapter_activation, sc.la[p], dz[p],
                                             &g.layer_adapter);
    }
    std::vector<Vec> du = detail::layer_backward(m.layer1, sc.l1, m.causal(), dh);
    for (std::size_t p = 0; p < L; ++p) {
      detail::adapter_stack_backward(m.embedding_adapter, m.config.adapter_activation, sc.ea[p], du[p],
                                     &g.embedding_adapter);
    }
  }
  return g;
}

// Per-position layer-adapter input vectors for a candidate sequence, computed
// with the same frozen weights (and the same code path) as training.
inline std::vector<Vec> hidden_for_candidate(const Model& m, const TokenSeq& seq) {
  require(!seq.empty(), "hidden_for_candidate: empty sequence");
  require(seq.size() <= m.config.max_seq_len, "hidden_for_candidate: sequence exceeds max_seq_len");
  std::vector<Vec> u(seq.size());
  for (std::size_t p = 0; p < seq.size(); ++p) {
    Vec x = m.embed(seq[p], p);
    Vec y = detail::adapter_stack_forward(m.embedding_adapter, m.config.adapter_activation, x, nullptr);
    if (m.config.positional_encoding == PositionalEncoding::additive_after_embedding_adapter) {
      axpy(1.0, m.positional->row(p), y);
    }
    u[p] = std::move(y);
  }
  return detail::layer_forward(m.layer1, u, m.causal(), nullptr);
}

// Incremental layer-1 evaluation for unidirectional beam search: appending a
// token costs one position, and produces bit-identical vectors to
// hidden_for_candidate on the full sequence.
class PrefixEvaluator {
 public:
  explicit PrefixEvaluator(const Model& m) : m_(&m) {
    require(m.causal(), "PrefixEvaluator requires unidirectional attention");
  }

  struct State {
    std::vector<Vec> k, v;  // layer-1 projections per position
  };

  // Extends `state` in place with `token` at position state.k.size();
  // returns the new position's layer-adapter input vector.
  Vec append(State& state, TokenId token) const {
    const Model& m = *m_;
    const std::size_t p = state.k.size();
    require(p < m.config.max_seq_len, "prefix exceeds max_seq_len");
    Vec x = m.embed(token, p);
    Vec u = detail::adapter_stack_forward(m.embedding_adapter, m.config.adapter_activation, x, nullptr);
    if (m.config.positional_encoding == PositionalEncoding::additive_after_embedding_adapter) {
      axpy(1.0, m.positional->row(p), u);
    }
    Vec q = matvec(m.layer1.w_q, u);
    state.k.push_back(matvec(m.layer1.w_k, u));
    state.v.push_back(matvec(m.layer1.w_v, u));
    const std::size_t d = m.config.d_hidden;
    Vec alpha = detail::attention_row(state.k, q, p + 1, 1.0 / std::sqrt(static_cast<double>(d)));
    Vec ctx(d, 0.0);
    for (std::size_t t = 0; t <= p; ++t) axpy(alpha[t], state.v[t], ctx);
    Vec ao = matvec(m.layer1.w_o, ctx);
    Vec a = u;
    axpy(1.0, ao, a);
    Vec fp = matvec(m.layer1.ff_w1, a);
    for (std::size_t i = 0; i < d; ++i) fp[i] += m.layer1.ff_b1[i];
    Vec fa(d);
    for (std::size_t i = 0; i < d; ++i) fa[i] = fp[i] > 0.0 ? fp[i] : 0.0;
    Vec out = a;
    for (std::size_t i = 0; i < d; ++i) out[i] += dot(m.layer1.ff_w2.row(i), fa) + m.layer1.ff_b2[i];
    return out;
  }

 private:
  const Model* m_;
};

// --- training (utility evaluation) ---------------------------------------

using GradientTransform = std::function<void(ModelGradients&)>;

inline void sgd_step(Model& m, const ModelGradients& g, double lr) {
  auto upd_stack = [&](std::vector<Adapter>& stack, const std::vector<AdapterGradients>& gs) {
    for (std::size_t b = 0; b < stack.size(); ++b) {
      for (std::size_t i = 0; i < stack[b].down_weight.data.size(); ++i) {
        stack[b].down_weight.data[i] -= lr * gs[b].grad_down_weight.data[i];
      }
      for (std::size_t i = 0; i < stack[b].down_bias.size(); ++i) {
        stack[b].down_bias[i] -= lr * gs[b].grad_down_bias[i];
      }
      for (std::size_t i = 0; i < stack[b].up_weight.data.size(); ++i) {
        stack[b].up_weight.data[i] -= lr * gs[b].grad_up_weight.data[i];
      }
      for (std::size_t i = 0; i < stack[b].up_bias.size(); ++i) {
        stack[b].up_bias[i] -= lr * gs[b].grad_up_bias[i];
      }
    }
  };
  upd_stack(m.embedding_adapter, g.embedding_adapter);
  upd_stack(m.layer_adapter, g.layer_adapter);
  for (std::size_t i = 0; i < m.head.weight.size(); ++i) m.head.weight[i] -= lr * g.head_weight[i];
  m.head.bias -= lr * g.head_bias;
}

inline double eval_accuracy(const Model& m, const std::vector<TokenSeq>& seqs, const std::vector<int>& labels) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    ForwardTrace t = forward(m, {seqs[i]}, {labels[i]});
    // loss < ln 2 iff the predicted probability favors the true label
    double p_correct = std::exp(-t.per_example_loss[0]);
    if (p_correct > 0.5) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(seqs.size());
}

// Full-batch SGD on adapters + head; `transform` (when set) is applied to the
// shared adapter gradients before the step, mirroring a defended exchange.
// Returns held-out accuracy on the eval split (last quarter of the dataset).
inline double train_adapters(Model& m, const std::vector<TokenSeq>& seqs, const std::vector<int>& labels,
                             std::size_t steps, double lr, const GradientTransform& transform = nullptr) {
  require(steps >= 1, "train: steps must be >= 1");
  require(seqs.size() == labels.size(), "train: size mismatch");
  require(seqs.size() >= 4, "train: dataset too small");
  bool has0 = false, has1 = false;
  for (int y : labels) (y == 0 ? has0 : has1) = true;
  require(has0 && has1, "train: degenerate dataset (one class)");

  std::size_t n_eval = seqs.size() / 4;
  std::size_t n_train = seqs.size() - n_eval;
  std::vector<TokenSeq> train_x(seqs.begin(), seqs.begin() + n_train);
  std::vector<int> train_y(labels.begin(), labels.begin() + n_train);
  std::vector<TokenSeq> eval_x(seqs.begin() + n_train, seqs.end());
  std::vector<int> eval_y(labels.begin() + n_train, labels.end());

  for (std::size_t s = 0; s < steps; ++s) {
    ModelGradients g = adapter_gradients(m, train_x, train_y);
    if (transform) transform(g);
    sgd_step(m, g, lr);
  }
  return eval_accuracy(m, eval_x, eval_y);
}

// --- checkpoint io --------------------------------------------------------

inline constexpr char kModelMagic[5] = "FLKM";
inline constexpr std::uint32_t kModelFormatVersion = 1;

inline std::string serialize_model(const Model& m) {
  ByteWriter w;
  w.magic(kModelMagic);
  w.u32(kModelFormatVersion);
  w.u32(static_cast<std::uint32_t>(m.config.vocab_size));
  w.u32(static_cast<std::uint32_t>(m.config.d_hidden));
  w.u32(static_cast<std::uint32_t>(m.config.reduction_factor));
  w.u32(static_cast<std::uint32_t>(m.config.attention_mode));
  w.u32(static_cast<std::uint32_t>(m.config.positional_encoding));
  w.u32(static_cast<std::uint32_t>(m.config.max_seq_len));
  w.u32(static_cast<std::uint32_t>(m.config.adapter_activation));
  w.u32(static_cast<std::uint32_t>(m.config.adapter_depth));
  w.u64(m.config.seed);
  w.tensor(m.embedding);
  w.u32(m.positional.has_value() ? 1 : 0);
  if (m.positional) w.tensor(*m.positional);
  auto write_layer = [&](const TransformerLayer& l) {
    w.tensor(l.w_q);
    w.tensor(l.w_k);
    w.tensor(l.w_v);
    w.tensor(l.w_o);
    w.tensor(l.ff_w1);
    w.vec(l.ff_b1);
    w.tensor(l.ff_w2);
    w.vec(l.ff_b2);
  };
  write_layer(m.layer1);
  write_layer(m.layer2);
  auto write_stack = [&](const std::vector<Adapter>& stack) {
    w.u32(static_cast<std::uint32_t>(stack.size()));
    for (const Adapter& b : stack) {
      w.tensor(b.down_weight);
      w.vec(b.down_bias);
      w.tensor(b.up_weight);
      w.vec(b.up_bias);
    }
  };
  write_stack(m.embedding_adapter);
  write_stack(m.layer_adapter);
  w.vec(m.head.weight);
  w.f64(m.head.bias);
  return w.bytes();
}

inline Model deserialize_model(std::string_view bytes) {
  ByteReader r(bytes);
  r.expect_magic(kModelMagic, "model checkpoint");
  std::uint32_t ver = r.u32();
  if (ver != kModelFormatVersion) {
    throw std::invalid_argument("model checkpoint: unsupported version " + std::to_string(ver));
  }
  Model m;
  m.config.vocab_size = r.u32();
  m.config.d_hidden = r.u32();
  m.config.reduction_factor = r.u32();
  m.config.attention_mode = static_cast<AttentionMode>(r.u32());
  m.config.positional_encoding = static_cast<PositionalEncoding>(r.u32());
  m.config.max_seq_len = r.u32();
  m.config.adapter_activation = static_cast<Activation>(r.u32());
  m.config.adapter_depth = r.u32();
  m.config.seed = r.u64();
  m.config.validate();
  m.embedding = r.tensor();
  if (r.u32() == 1) m.positional = r.tensor();
  auto read_layer = [&] {
    TransformerLayer l;
    l.w_q = r.tensor();
    l.w_k = r.tensor();
    l.w_v = r.tensor();
    l.w_o = r.tensor();
    l.ff_w1 = r.tensor();
    l.ff_b1 = r.vec();
    l.ff_w2 = r.tensor();
    l.ff_b2 = r.vec();
    return l;
  };
  m.layer1 = read_layer();
  m.layer2 = read_layer();
  auto read_stack = [&] {
    std::vector<Adapter> stack(r.u32());
    for (Adapter& b : stack) {
      b.down_weight = r.tensor();
      b.down_bias = r.vec();
      b.up_weight = r.tensor();
      b.up_bias = r.vec();
    }
    return stack;
  };
  m.embedding_adapter = read_stack();
  m.layer_adapter = read_stack();
  m.head.weight = r.vec();
  m.head.bias = r.f64();
  return m;
}

inline void save_model(const Model& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  std::string bytes = serialize_model(m);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace fedleak
