#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cmda/corpus.hpp"
#include "cmda/ops.hpp"
#include "cmda/optim.hpp"

namespace cmda {

struct TransformerConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 128;
  int enc_layers = 2;
  int dec_layers = 2;
  double dropout = 0.1;
  double label_smoothing = 0.1;
  // Learned position table size; doubles as the hard cap on any sequence
  // the masked LM can encode.
  int max_len = 128;
};

// Unique per-call keys for dropout masks within one forward pass.
struct TagGen {
  std::uint64_t v = 0;
  std::uint64_t operator()() { return ++v; }
};

template <typename S>
Tensor<S> sinusoidal_positions(Index len, Index d) {
  Tensor<S> pe({len, d});
  for (Index pos = 0; pos < len; ++pos)
    for (Index i = 0; i < d; ++i) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      pe.at(pos, i) = static_cast<S>((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
  return pe;
}

// Additive masks: 0 keeps a key, -inf removes it.
template <typename S>
Tensor<S> causal_mask(Index len) {
  Tensor<S> m({Index(1), len, len});
  const S ninf = -std::numeric_limits<S>::infinity();
  for (Index q = 0; q < len; ++q)
    for (Index k = 0; k < len; ++k)
      m.at(0, q, k) = k <= q ? S(0) : ninf;
  return m;
}

template <typename S>
Tensor<S> key_padding_mask(const std::vector<Index>& lens, Index max_len) {
  const Index b = static_cast<Index>(lens.size());
  Tensor<S> m({b, Index(1), max_len});
  const S ninf = -std::numeric_limits<S>::infinity();
  for (Index r = 0; r < b; ++r)
    for (Index k = 0; k < max_len; ++k)
      m.at(r, 0, k) = k < lens[static_cast<std::size_t>(r)] ? S(0) : ninf;
  return m;
}

// Parameters bound to a graph for one forward pass, addressable by name.
template <typename S>
struct Bound {
  Graph<S>* g = nullptr;
  const TransformerConfig* cfg = nullptr;
  const ParamStore<S>* store = nullptr;
  std::vector<Var<S>> vars;

  Var<S> at(const std::string& name) const {
    const Index i = store->find(name);
    if (i < 0) throw std::invalid_argument("unknown parameter: " + name);
    return vars[static_cast<std::size_t>(i)];
  }
};

template <typename S>
Bound<S> bind(Graph<S>& g, const ParamStore<S>& store, const TransformerConfig& cfg,
              bool requires_grad) {
  Bound<S> b;
  b.g = &g;
  b.cfg = &cfg;
  b.store = &store;
  for (Index i = 0; i < store.size(); ++i)
    b.vars.push_back(g.leaf(store.tensor(i), requires_grad));
  return b;
}

template <typename S>
Var<S> multi_head_attention(const Bound<S>& m, Var<S> query, Var<S> keyval,
                            const std::string& prefix, const Tensor<S>& mask,
                            TagGen& tag) {
  const int heads = m.cfg->n_heads;
  const Index dh = m.cfg->d_model / heads;
  Var<S> q = matmul(query, m.at(prefix + ".wq"));
  Var<S> k = matmul(keyval, m.at(prefix + ".wk"));
  Var<S> v = matmul(keyval, m.at(prefix + ".wv"));
  const S inv_sqrt_dh = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));
  std::vector<Var<S>> ctx;
  for (int h = 0; h < heads; ++h) {
    Var<S> qh = slice_last(q, h * dh, dh);
    Var<S> kh = slice_last(k, h * dh, dh);
    Var<S> vh = slice_last(v, h * dh, dh);
    Var<S> scores = scale(matmul(qh, transpose2(kh)), inv_sqrt_dh);
    scores = add_mask(scores, mask);
    Var<S> probs = softmax(scores, -1);
    probs = dropout(probs, static_cast<S>(m.cfg->dropout), tag());
    ctx.push_back(matmul(probs, vh));
  }
  return matmul(concat_last(ctx), m.at(prefix + ".wo"));
}

template <typename S>
Var<S> feed_forward(const Bound<S>& m, Var<S> x, const std::string& prefix,
                    TagGen& tag) {
  Var<S> h = relu(matmul(x, m.at(prefix + ".w1")) + m.at(prefix + ".b1"));
  h = matmul(h, m.at(prefix + ".w2")) + m.at(prefix + ".b2");
  return dropout(h, static_cast<S>(m.cfg->dropout), tag());
}

// Pre-norm residual blocks; callers apply the stack's final layer norm.
template <typename S>
Var<S> encoder_stack(const Bound<S>& m, Var<S> h, const std::string& prefix,
                     int n_layers, const Tensor<S>& key_mask, TagGen& tag) {
  for (int i = 0; i < n_layers; ++i) {
    const std::string lp = prefix + "." + std::to_string(i);
    Var<S> a = layer_norm(h, m.at(lp + ".ln1.g"), m.at(lp + ".ln1.b"));
    a = multi_head_attention(m, a, a, lp + ".attn", key_mask, tag);
    h = h + dropout(a, static_cast<S>(m.cfg->dropout), tag());
    Var<S> f = layer_norm(h, m.at(lp + ".ln2.g"), m.at(lp + ".ln2.b"));
    h = h + feed_forward(m, f, lp + ".ff", tag);
  }
  return h;
}

namespace detail {

template <typename S>
void add_encoder_layer_params(ParamStore<S>& ps, const TransformerConfig& cfg,
                              const std::string& lp) {
  const Index d = cfg.d_model, f = cfg.d_ff;
  ps.add(lp + ".ln1.g", Tensor<S>::full({d}, S(1)));
  ps.add(lp + ".ln1.b", Tensor<S>({d}));
  ps.add(lp + ".attn.wq", Tensor<S>({d, d}));
  ps.add(lp + ".attn.wk", Tensor<S>({d, d}));
  ps.add(lp + ".attn.wv", Tensor<S>({d, d}));
  ps.add(lp + ".attn.wo", Tensor<S>({d, d}));
  ps.add(lp + ".ln2.g", Tensor<S>::full({d}, S(1)));
  ps.add(lp + ".ln2.b", Tensor<S>({d}));
  ps.add(lp + ".ff.w1", Tensor<S>({d, f}));
  ps.add(lp + ".ff.b1", Tensor<S>({f}));
  ps.add(lp + ".ff.w2", Tensor<S>({f, d}));
  ps.add(lp + ".ff.b2", Tensor<S>({d}));
}

template <typename S>
void add_decoder_layer_params(ParamStore<S>& ps, const TransformerConfig& cfg,
                              const std::string& lp) {
  const Index d = cfg.d_model, f = cfg.d_ff;
  ps.add(lp + ".ln1.g", Tensor<S>::full({d}, S(1)));
  ps.add(lp + ".ln1.b", Tensor<S>({d}));
  ps.add(lp + ".self.wq", Tensor<S>({d, d}));
  ps.add(lp + ".self.wk", Tensor<S>({d, d}));
  ps.add(lp + ".self.wv", Tensor<S>({d, d}));
  ps.add(lp + ".self.wo", Tensor<S>({d, d}));
  ps.add(lp + ".ln2.g", Tensor<S>::full({d}, S(1)));
  ps.add(lp + ".ln2.b", Tensor<S>({d}));
  ps.add(lp + ".cross.wq", Tensor<S>({d, d}));
  ps.add(lp + ".cross.wk", Tensor<S>({d, d}));
  ps.add(lp + ".cross.wv", Tensor<S>({d, d}));
  ps.add(lp + ".cross.wo", Tensor<S>({d, d}));
  ps.add(lp + ".ln3.g", Tensor<S>::full({d}, S(1)));
  ps.add(lp + ".ln3.b", Tensor<S>({d}));
  ps.add(lp + ".ff.w1", Tensor<S>({d, f}));
  ps.add(lp + ".ff.b1", Tensor<S>({f}));
  ps.add(lp + ".ff.w2", Tensor<S>({f, d}));
  ps.add(lp + ".ff.b2", Tensor<S>({d}));
}

// Weight matrices get Xavier draws, bias/gain tensors were created with
// their fixed values, embedding tables get scaled normal draws. Draws are
// consumed in registration order from the Init substream.
template <typename S>
void init_params(ParamStore<S>& ps, const TransformerConfig& cfg, std::uint64_t seed) {
  CounterRng rng(seed, Stream::Init, 0);
  const double emb_sd = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  for (Index i = 0; i < ps.size(); ++i) {
    const std::string& name = ps.name(i);
    Tensor<S>& t = ps.tensor(i);
    const bool is_table = name == "embed" || name == "pos" || name == "seg";
    if (is_table)
      init_normal(t, rng, name == "embed" ? emb_sd : 0.02);
    else if (t.rank() == 2)
      init_xavier(t, rng);
  }
}

}  // namespace detail

// Encoder-decoder translation model with sinusoidal positions and the
// embedding matrix shared between input lookup and output projection.
template <typename S>
struct NmtModel {
  TransformerConfig cfg;
  ParamStore<S> params;

  static NmtModel init(const TransformerConfig& cfg, std::uint64_t seed) {
    NmtModel m;
    m.cfg = cfg;
    const Index d = cfg.d_model;
    m.params.add("embed", Tensor<S>({Index(cfg.vocab_size), d}));
    for (int i = 0; i < cfg.enc_layers; ++i)
      detail::add_encoder_layer_params(m.params, cfg, "enc." + std::to_string(i));
    m.params.add("enc.ln.g", Tensor<S>::full({d}, S(1)));
    m.params.add("enc.ln.b", Tensor<S>({d}));
    for (int i = 0; i < cfg.dec_layers; ++i)
      detail::add_decoder_layer_params(m.params, cfg, "dec." + std::to_string(i));
    m.params.add("dec.ln.g", Tensor<S>::full({d}, S(1)));
    m.params.add("dec.ln.b", Tensor<S>({d}));
    detail::init_params(m.params, cfg, seed);
    return m;
  }
};

inline long long encoder_layer_params(const TransformerConfig& c) {
  const long long d = c.d_model, f = c.d_ff;
  return 4 * d * d + 2 * d * f + f + d + 4 * d;
}
inline long long decoder_layer_params(const TransformerConfig& c) {
  const long long d = c.d_model, f = c.d_ff;
  return 8 * d * d + 2 * d * f + f + d + 6 * d;
}
inline long long nmt_param_count(const TransformerConfig& c) {
  const long long d = c.d_model;
  return static_cast<long long>(c.vocab_size) * d +
         c.enc_layers * encoder_layer_params(c) + 2 * d +
         c.dec_layers * decoder_layer_params(c) + 2 * d;
}
inline long long cmlm_param_count(const TransformerConfig& c) {
  const long long d = c.d_model;
  return static_cast<long long>(c.vocab_size) * d + static_cast<long long>(c.max_len) * d +
         2 * d + c.enc_layers * encoder_layer_params(c) + 2 * d;
}

// Token embeddings for a flat id matrix, shape (rows, len, d_model).
template <typename S>
Var<S> embed_ids(const Bound<S>& m, const std::vector<int>& ids, Index rows,
                 Index len) {
  Var<S> e = gather_rows(m.at("embed"), ids);
  return reshape(e, {rows, len, Index(m.cfg->d_model)});
}

template <typename S>
struct EncodedSource {
  Var<S> states;          // (B, Lx, d) after the final encoder norm
  Tensor<S> key_mask;     // (B, 1, Lx) additive
};

// src_override, when valid, replaces the embedding lookup (same shape) and
// participates in the tape like any other node.
template <typename S>
EncodedSource<S> nmt_encode(const Bound<S>& m, const std::vector<int>& x,
                            const std::vector<Index>& x_lens, Index batch, Index len,
                            TagGen& tag, Var<S> src_override = {}) {
  const S sqrt_d = static_cast<S>(std::sqrt(static_cast<double>(m.cfg->d_model)));
  Var<S> e = src_override.valid() ? src_override : embed_ids(m, x, batch, len);
  Var<S> h = scale(e, sqrt_d) +
             m.g->constant(sinusoidal_positions<S>(len, m.cfg->d_model));
  h = dropout(h, static_cast<S>(m.cfg->dropout), tag());
  EncodedSource<S> enc;
  enc.key_mask = key_padding_mask<S>(x_lens, len);
  h = encoder_stack(m, h, "enc", m.cfg->enc_layers, enc.key_mask, tag);
  enc.states = layer_norm(h, m.at("enc.ln.g"), m.at("enc.ln.b"));
  return enc;
}

// Returns logits (B, Ly, vocab) over the decoder input stream.
template <typename S>
Var<S> nmt_decode(const Bound<S>& m, const EncodedSource<S>& enc,
                  const std::vector<int>& dec_in, Index batch, Index len,
                  TagGen& tag, Var<S> tgt_override = {}) {
  const S sqrt_d = static_cast<S>(std::sqrt(static_cast<double>(m.cfg->d_model)));
  Var<S> e = tgt_override.valid() ? tgt_override : embed_ids(m, dec_in, batch, len);
  Var<S> h = scale(e, sqrt_d) +
             m.g->constant(sinusoidal_positions<S>(len, m.cfg->d_model));
  h = dropout(h, static_cast<S>(m.cfg->dropout), tag());
  const Tensor<S> self_mask = causal_mask<S>(len);
  for (int i = 0; i < m.cfg->dec_layers; ++i) {
    const std::string lp = "dec." + std::to_string(i);
    Var<S> a = layer_norm(h, m.at(lp + ".ln1.g"), m.at(lp + ".ln1.b"));
    a = multi_head_attention(m, a, a, lp + ".self", self_mask, tag);
    h = h + dropout(a, static_cast<S>(m.cfg->dropout), tag());
    Var<S> c = layer_norm(h, m.at(lp + ".ln2.g"), m.at(lp + ".ln2.b"));
    c = multi_head_attention(m, c, enc.states, lp + ".cross", enc.key_mask, tag);
    h = h + dropout(c, static_cast<S>(m.cfg->dropout), tag());
    Var<S> f = layer_norm(h, m.at(lp + ".ln3.g"), m.at(lp + ".ln3.b"));
    h = h + feed_forward(m, f, lp + ".ff", tag);
  }
  h = layer_norm(h, m.at("dec.ln.g"), m.at("dec.ln.b"));
  return matmul(h, transpose2(m.at("embed")));
}

// BOS-prefixed target stream; the trailing EOS drops off the input and
// survives only as a label.
inline std::vector<int> shift_right(const PaddedBatch& b) {
  std::vector<int> dec_in(static_cast<std::size_t>(b.size * b.tgt_len), Vocab::kPad);
  for (Index r = 0; r < b.size; ++r) {
    dec_in[static_cast<std::size_t>(r * b.tgt_len)] = Vocab::kBos;
    for (Index t = 1; t < b.y_lens[static_cast<std::size_t>(r)]; ++t)
      dec_in[static_cast<std::size_t>(r * b.tgt_len + t)] = b.y_at(r, t - 1);
  }
  return dec_in;
}

template <typename S>
Var<S> nmt_forward(const Bound<S>& m, const PaddedBatch& b, TagGen& tag,
                   Var<S> src_override = {}, Var<S> tgt_override = {}) {
  EncodedSource<S> enc =
      nmt_encode(m, b.x, b.x_lens, b.size, b.src_len, tag, src_override);
  return nmt_decode(m, enc, shift_right(b), b.size, b.tgt_len, tag, tgt_override);
}

// Bidirectional masked LM over a single concatenated stream with learned
// positions and two segment embeddings.
template <typename S>
struct CmlmModel {
  TransformerConfig cfg;
  ParamStore<S> params;

  static CmlmModel init(const TransformerConfig& cfg, std::uint64_t seed) {
    CmlmModel m;
    m.cfg = cfg;
    const Index d = cfg.d_model;
    m.params.add("embed", Tensor<S>({Index(cfg.vocab_size), d}));
    m.params.add("pos", Tensor<S>({Index(cfg.max_len), d}));
    m.params.add("seg", Tensor<S>({Index(2), d}));
    for (int i = 0; i < cfg.enc_layers; ++i)
      detail::add_encoder_layer_params(m.params, cfg, "enc." + std::to_string(i));
    m.params.add("enc.ln.g", Tensor<S>::full({d}, S(1)));
    m.params.add("enc.ln.b", Tensor<S>({d}));
    detail::init_params(m.params, cfg, seed);
    return m;
  }
};

template <typename S>
Var<S> cmlm_forward(const Bound<S>& m, const std::vector<int>& tokens,
                    const std::vector<int>& segments, const std::vector<Index>& lens,
                    Index batch, Index len, TagGen& tag) {
  if (len > m.cfg->max_len)
    throw DataError("sequence length " + std::to_string(len) +
                    " exceeds position table size " + std::to_string(m.cfg->max_len));
  const Index d = m.cfg->d_model;
  std::vector<int> pos_ids(static_cast<std::size_t>(len));
  for (Index t = 0; t < len; ++t) pos_ids[static_cast<std::size_t>(t)] = static_cast<int>(t);
  Var<S> h = embed_ids(m, tokens, batch, len) + gather_rows(m.at("pos"), pos_ids) +
             reshape(gather_rows(m.at("seg"), segments), {batch, len, d});
  h = dropout(h, static_cast<S>(m.cfg->dropout), tag());
  const Tensor<S> key_mask = key_padding_mask<S>(lens, len);
  h = encoder_stack(m, h, "enc", m.cfg->enc_layers, key_mask, tag);
  h = layer_norm(h, m.at("enc.ln.g"), m.at("enc.ln.b"));
  return matmul(h, transpose2(m.at("embed")));
}

}  // namespace cmda
