#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "cmda/checkpoint.hpp"
#include "cmda/model.hpp"

namespace cmda {

enum class Side { Source, Target };
enum class ConditioningMode { Both, Mono };

inline const char* side_name(Side s) { return s == Side::Source ? "source" : "target"; }
inline const char* mode_name(ConditioningMode m) {
  return m == ConditioningMode::Both ? "both" : "mono";
}

// One masked-LM training example over the concatenated stream
// [CLS] X [SEP] Y [SEP] (or a single sentence in Mono mode). Exactly one
// side is ever corrupted; the other is left intact as conditioning context.
struct MaskedExample {
  std::vector<int> tokens;
  std::vector<int> segments;
  std::vector<Index> masked_pos;
  std::vector<int> masked_ids;
  Index len() const { return static_cast<Index>(tokens.size()); }
};

namespace detail {

struct ConcatExample {
  std::vector<int> tokens, segments;
  Index cand_lo = 0, cand_hi = 0;  // maskable positions, half-open
};

inline ConcatExample concat_pair(const TokenizedPair& p, Side side,
                                 ConditioningMode mode) {
  ConcatExample e;
  auto push = [&](int tok, int seg) {
    e.tokens.push_back(tok);
    e.segments.push_back(seg);
  };
  if (mode == ConditioningMode::Both) {
    push(Vocab::kCls, 0);
    for (int t : p.src) push(t, 0);
    push(Vocab::kSep, 0);
    for (int t : p.tgt) push(t, 1);
    push(Vocab::kSep, 1);
    if (side == Side::Source) {
      e.cand_lo = 1;
      e.cand_hi = 1 + static_cast<Index>(p.src.size());
    } else {
      e.cand_lo = 2 + static_cast<Index>(p.src.size());
      e.cand_hi = e.cand_lo + static_cast<Index>(p.tgt.size());
    }
  } else {
    const auto& sent = side == Side::Source ? p.src : p.tgt;
    const int seg = side == Side::Source ? 0 : 1;
    push(Vocab::kCls, 0);
    for (int t : sent) push(t, seg);
    push(Vocab::kSep, seg);
    e.cand_lo = 1;
    e.cand_hi = 1 + static_cast<Index>(sent.size());
  }
  return e;
}

}  // namespace detail

// Each candidate is masked independently with probability mask_rate; when
// the draw selects nothing, one forced position keeps the example trainable.
// All draws hash (seed, key, position), so a (pair, epoch) key reproduces
// the same corruption and fresh keys give fresh corruptions.
inline MaskedExample make_masked_example(const TokenizedPair& pair, Side side,
                                         ConditioningMode mode, double mask_rate,
                                         std::uint64_t seed, std::uint64_t key) {
  detail::ConcatExample ce = detail::concat_pair(pair, side, mode);
  MaskedExample ex;
  ex.tokens = std::move(ce.tokens);
  ex.segments = std::move(ce.segments);
  const Index n_cand = ce.cand_hi - ce.cand_lo;
  if (n_cand <= 0) throw DataError("masked example has no maskable positions");
  for (Index j = 0; j < n_cand; ++j) {
    const double u = uniform01(seed, Stream::Masking, key, static_cast<std::uint64_t>(j));
    if (u < mask_rate) ex.masked_pos.push_back(ce.cand_lo + j);
  }
  if (ex.masked_pos.empty()) {
    const double u = uniform01(seed, Stream::Masking, key, 0x464f524345ull);
    Index j = static_cast<Index>(u * static_cast<double>(n_cand));
    if (j >= n_cand) j = n_cand - 1;
    ex.masked_pos.push_back(ce.cand_lo + j);
  }
  for (Index p : ex.masked_pos) {
    ex.masked_ids.push_back(ex.tokens[static_cast<std::size_t>(p)]);
    ex.tokens[static_cast<std::size_t>(p)] = Vocab::kMask;
  }
  return ex;
}

struct MaskedBatch {
  Index size = 0, len = 0;
  std::vector<int> tokens, segments;
  std::vector<Index> lens;
  std::vector<Index> flat_pos;  // row * len + position, one per masked slot
  std::vector<int> labels;
};

inline MaskedBatch pad_masked_examples(const std::vector<MaskedExample>& exs) {
  MaskedBatch b;
  b.size = static_cast<Index>(exs.size());
  for (const auto& e : exs) b.len = std::max(b.len, e.len());
  b.tokens.assign(static_cast<std::size_t>(b.size * b.len), Vocab::kPad);
  b.segments.assign(static_cast<std::size_t>(b.size * b.len), 0);
  for (Index r = 0; r < b.size; ++r) {
    const auto& e = exs[static_cast<std::size_t>(r)];
    for (Index t = 0; t < e.len(); ++t) {
      b.tokens[static_cast<std::size_t>(r * b.len + t)] = e.tokens[static_cast<std::size_t>(t)];
      b.segments[static_cast<std::size_t>(r * b.len + t)] =
          e.segments[static_cast<std::size_t>(t)];
    }
    b.lens.push_back(e.len());
    for (std::size_t k = 0; k < e.masked_pos.size(); ++k) {
      b.flat_pos.push_back(r * b.len + e.masked_pos[k]);
      b.labels.push_back(e.masked_ids[k]);
    }
  }
  return b;
}

struct CmlmTrainConfig {
  Side side = Side::Source;
  ConditioningMode mode = ConditioningMode::Both;
  long epochs = 10;
  Index batch_size = 8;
  double peak_lr = 3e-4;
  double mask_rate = 0.15;
  std::uint64_t seed = 1;
  long log_every = 0;
};

struct CmlmTrainResult {
  long steps = 0;
  std::vector<double> losses;
  double final_loss = 0;
};

// Cross-entropy on masked slots only, Adam with a triangular schedule
// peaking at peak_lr. Corruption is redrawn every epoch.
template <typename S>
CmlmTrainResult finetune_cmlm(CmlmModel<S>& model,
                              const std::vector<TokenizedPair>& pairs,
                              const CmlmTrainConfig& tc, std::ostream* log = nullptr) {
  const Index n = static_cast<Index>(pairs.size());
  if (n == 0) throw DataError("masked-LM training set is empty");
  for (Index i = 0; i < n; ++i) {
    const auto ce = detail::concat_pair(pairs[static_cast<std::size_t>(i)], tc.side, tc.mode);
    if (static_cast<Index>(ce.tokens.size()) > model.cfg.max_len)
      throw DataError("pair " + std::to_string(i) + " yields length " +
                      std::to_string(ce.tokens.size()) + " over the limit " +
                      std::to_string(model.cfg.max_len));
  }
  const long batches_per_epoch = static_cast<long>((n + tc.batch_size - 1) / tc.batch_size);
  const long total_steps = tc.epochs * batches_per_epoch;
  AdamState<S> adam = AdamState<S>::init(model.params);

  CmlmTrainResult res;
  long step = 0;
  for (long epoch = 0; epoch < tc.epochs; ++epoch) {
    const auto order = batch_order(n, tc.batch_size, tc.seed,
                                   static_cast<std::uint64_t>(epoch));
    for (const auto& idx : order) {
      ++step;
      std::vector<MaskedExample> exs;
      exs.reserve(idx.size());
      for (Index i : idx)
        exs.push_back(make_masked_example(
            pairs[static_cast<std::size_t>(i)], tc.side, tc.mode, tc.mask_rate, tc.seed,
            static_cast<std::uint64_t>(epoch) * static_cast<std::uint64_t>(n) +
                static_cast<std::uint64_t>(i)));
      MaskedBatch mb = pad_masked_examples(exs);

      Graph<S> g;
      g.opts.training = true;
      g.opts.seed = tc.seed;
      g.opts.step = static_cast<std::uint64_t>(step);
      Bound<S> bound = bind(g, model.params, model.cfg, true);
      TagGen tag;
      Var<S> logits = cmlm_forward(bound, mb.tokens, mb.segments, mb.lens, mb.size,
                                   mb.len, tag);
      Var<S> flat = reshape(logits, {mb.size * mb.len, Index(model.cfg.vocab_size)});
      Var<S> picked = select_rows(flat, mb.flat_pos);
      Var<S> loss = cross_entropy(picked, mb.labels, S(0), -1);
      const double lv = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(lv))
        throw NumericError("masked-LM loss non-finite at step " + std::to_string(step));
      g.backward(loss);

      std::vector<Tensor<S>> grads;
      grads.reserve(static_cast<std::size_t>(model.params.size()));
      for (const auto& v : bound.vars) grads.push_back(v.grad());
      const double lr = lr_triangular(step, total_steps, tc.peak_lr);
      adam_step(model.params, grads, adam, static_cast<S>(lr));

      res.losses.push_back(lv);
      res.final_loss = lv;
      if (log && tc.log_every > 0 && step % tc.log_every == 0)
        (*log) << "step=" << step << " loss=" << lv << " lr=" << lr << "\n";
    }
  }
  res.steps = step;
  return res;
}

// Post-softmax rows for every masked slot, flattened in (example, slot)
// order. Inference only: no dropout, nothing retains gradients.
template <typename S>
std::vector<std::vector<S>> predict_masked_batch(const CmlmModel<S>& model,
                                                 const std::vector<MaskedExample>& exs) {
  std::vector<std::vector<S>> out;
  if (exs.empty()) return out;
  MaskedBatch mb = pad_masked_examples(exs);
  Graph<S> g;
  g.opts.training = false;
  Bound<S> bound = bind(g, model.params, model.cfg, false);
  TagGen tag;
  Var<S> logits = cmlm_forward(bound, mb.tokens, mb.segments, mb.lens, mb.size,
                               mb.len, tag);
  const Tensor<S>& lv = logits.value();
  const Index v = static_cast<Index>(model.cfg.vocab_size);
  for (Index flat : mb.flat_pos) {
    const Index r = flat / mb.len, t = flat % mb.len;
    std::vector<S> dist(static_cast<std::size_t>(v));
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < v; ++j)
      mx = std::max(mx, static_cast<double>(lv.at(r, t, j)));
    double z = 0;
    for (Index j = 0; j < v; ++j) {
      const double e = std::exp(static_cast<double>(lv.at(r, t, j)) - mx);
      dist[static_cast<std::size_t>(j)] = static_cast<S>(e);
      z += e;
    }
    for (auto& p : dist) p = static_cast<S>(static_cast<double>(p) / z);
    out.push_back(std::move(dist));
  }
  return out;
}

template <typename S>
std::vector<std::vector<S>> predict_masked(const CmlmModel<S>& model,
                                           const MaskedExample& ex) {
  return predict_masked_batch(model, std::vector<MaskedExample>{ex});
}

inline std::uint32_t cmlm_flags(Side side, ConditioningMode mode) {
  std::uint32_t f = kFlagMaskedLm;
  if (side == Side::Target) f |= kFlagSideTarget;
  if (mode == ConditioningMode::Mono) f |= kFlagMonolingual;
  return f;
}

template <typename S>
void save_cmlm(const std::string& path, const CmlmModel<S>& model, Side side,
               ConditioningMode mode, const std::string& digest) {
  CheckpointMeta meta;
  meta.vocab_size = static_cast<std::uint64_t>(model.cfg.vocab_size);
  meta.flags = cmlm_flags(side, mode);
  meta.config_digest = digest;
  std::vector<std::pair<std::string, Tensor<S>>> tensors;
  for (Index i = 0; i < model.params.size(); ++i)
    tensors.emplace_back(model.params.name(i), model.params.tensor(i));
  save_checkpoint(path, meta, tensors);
}

// The checkpoint must hold a masked LM for the requested side and mode;
// parameter shapes must match the freshly built layout exactly.
template <typename S>
CmlmModel<S> load_cmlm(const std::string& path, const TransformerConfig& cfg,
                       Side side, ConditioningMode mode) {
  CheckpointData<S> ck = load_checkpoint<S>(path);
  if (!(ck.meta.flags & kFlagMaskedLm))
    throw DataError("checkpoint is not a masked LM: " + path);
  const Side got_side =
      (ck.meta.flags & kFlagSideTarget) ? Side::Target : Side::Source;
  const ConditioningMode got_mode =
      (ck.meta.flags & kFlagMonolingual) ? ConditioningMode::Mono : ConditioningMode::Both;
  if (got_side != side)
    throw DataError(std::string("checkpoint holds a ") + side_name(got_side) +
                    "-side model but " + side_name(side) + " was requested: " + path);
  if (got_mode != mode)
    throw DataError(std::string("checkpoint holds a ") + mode_name(got_mode) +
                    "-conditioned model but " + mode_name(mode) +
                    " was requested: " + path);
  if (ck.meta.vocab_size != static_cast<std::uint64_t>(cfg.vocab_size))
    throw DataError("checkpoint vocab size " + std::to_string(ck.meta.vocab_size) +
                    " does not match configured " + std::to_string(cfg.vocab_size) +
                    ": " + path);
  CmlmModel<S> m = CmlmModel<S>::init(cfg, 0);
  for (Index i = 0; i < m.params.size(); ++i) {
    const Tensor<S>* t = ck.find(m.params.name(i));
    if (!t) throw DataError("checkpoint missing parameter " + m.params.name(i) + ": " + path);
    if (!t->same_shape(m.params.tensor(i)))
      throw DataError("checkpoint parameter " + m.params.name(i) +
                      " has shape " + shape_str(t->shape()) + ", expected " +
                      shape_str(m.params.tensor(i).shape()) + ": " + path);
    m.params.tensor(i) = *t;
  }
  return m;
}

}  // namespace cmda
