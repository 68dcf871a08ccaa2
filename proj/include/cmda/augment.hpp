#pragma once

#include <vector>

#include "cmda/cmlm.hpp"

namespace cmda {

// Drops all probability mass on special ids and renormalizes; a distribution
// that was entirely special mass collapses to a point mass on the original
// token, so substitution can never inject specials into a sentence.
template <typename S>
void clean_distribution(std::vector<S>& p, int original_id) {
  for (int i = 0; i < Vocab::kNumSpecials; ++i) p[static_cast<std::size_t>(i)] = S(0);
  double sum = 0;
  for (S v : p) sum += static_cast<double>(v);
  if (sum < 1e-12) {
    std::fill(p.begin(), p.end(), S(0));
    p[static_cast<std::size_t>(original_id)] = S(1);
    return;
  }
  for (S& v : p) v = static_cast<S>(static_cast<double>(v) / sum);
}

// Probability-weighted mixture of embedding rows: e = sum_j p_j * E[j].
template <typename S>
std::vector<S> soft_embedding(const std::vector<S>& probs, const Tensor<S>& embed) {
  if (static_cast<Index>(probs.size()) != embed.dim(0))
    throw std::invalid_argument("soft_embedding: distribution size mismatch");
  const Index d = embed.dim(1);
  std::vector<S> e(static_cast<std::size_t>(d), S(0));
  for (Index j = 0; j < embed.dim(0); ++j) {
    const S pj = probs[static_cast<std::size_t>(j)];
    if (pj == S(0)) continue;
    for (Index k = 0; k < d; ++k)
      e[static_cast<std::size_t>(k)] += pj * embed.at(j, k);
  }
  return e;
}

// Positions to overwrite in one side's flat (rows * len) embedding stream,
// with one predicted distribution per position.
template <typename S>
struct SubstitutionPlan {
  std::vector<Index> rows;
  Tensor<S> probs;  // (rows.size(), vocab)
  bool empty() const { return rows.empty(); }
};

// Gates each real, non-special token with probability gamma, then asks the
// masked LM for a distribution at every gated slot of a row in one shot.
// Gate draws hash (step, side, row, position) only, so gamma = 0 consumes
// no randomness and leaves the run identical to no augmentation.
template <typename S>
SubstitutionPlan<S> plan_soft_substitution(const CmlmModel<S>& lm, const PaddedBatch& b,
                                           Side side, double gamma, std::uint64_t seed,
                                           std::uint64_t step) {
  SubstitutionPlan<S> plan;
  const Index len = side == Side::Source ? b.src_len : b.tgt_len;
  const std::uint64_t side_key = side == Side::Source ? 0 : 1;
  std::vector<int> dec_in;
  if (side == Side::Target) dec_in = shift_right(b);
  auto stream_at = [&](Index r, Index t) {
    return side == Side::Source ? b.x_at(r, t)
                                : dec_in[static_cast<std::size_t>(r * len + t)];
  };

  std::vector<MaskedExample> exs;
  std::vector<Index> flat_rows;
  std::vector<int> originals;
  for (Index r = 0; r < b.size; ++r) {
    const Index lo = side == Side::Source ? 0 : 1;
    const Index hi = side == Side::Source ? b.x_lens[static_cast<std::size_t>(r)]
                                          : b.y_lens[static_cast<std::size_t>(r)];
    std::vector<Index> picked;
    for (Index t = lo; t < hi; ++t) {
      const int id = stream_at(r, t);
      if (id < Vocab::kNumSpecials) continue;
      const double u = uniform01(seed, Stream::GammaGate, step, side_key,
                                 static_cast<std::uint64_t>(r),
                                 static_cast<std::uint64_t>(t));
      if (u < gamma) picked.push_back(t);
    }
    if (picked.empty()) continue;

    TokenizedPair p;
    for (Index t = 0; t < b.x_lens[static_cast<std::size_t>(r)]; ++t)
      p.src.push_back(b.x_at(r, t));
    for (Index t = 0; t + 1 < b.y_lens[static_cast<std::size_t>(r)]; ++t)
      p.tgt.push_back(b.y_at(r, t));
    MaskedExample ex;
    {
      auto ce = detail::concat_pair(p, side, ConditioningMode::Both);
      ex.tokens = std::move(ce.tokens);
      ex.segments = std::move(ce.segments);
    }
    const Index m = static_cast<Index>(p.src.size());
    for (Index t : picked) {
      // Source position t sits at concat slot 1 + t; decoder-input position
      // t holds target token t - 1, which sits at concat slot m + 2 + (t - 1).
      const Index cpos = side == Side::Source ? 1 + t : m + 2 + (t - 1);
      ex.masked_pos.push_back(cpos);
      ex.masked_ids.push_back(ex.tokens[static_cast<std::size_t>(cpos)]);
      ex.tokens[static_cast<std::size_t>(cpos)] = Vocab::kMask;
      flat_rows.push_back(r * len + t);
      originals.push_back(stream_at(r, t));
    }
    exs.push_back(std::move(ex));
  }
  if (exs.empty()) return plan;

  const auto dists = predict_masked_batch(lm, exs);
  plan.rows = std::move(flat_rows);
  plan.probs = Tensor<S>({static_cast<Index>(plan.rows.size()),
                          Index(lm.cfg.vocab_size)});
  for (std::size_t k = 0; k < dists.size(); ++k) {
    std::vector<S> d = dists[k];
    clean_distribution(d, originals[k]);
    for (Index j = 0; j < static_cast<Index>(d.size()); ++j)
      plan.probs.at(static_cast<Index>(k), j) = d[static_cast<std::size_t>(j)];
  }
  return plan;
}

// Rewrites the planned rows of a flat embedding stream with mixture rows
// P * E. P enters as a constant, so gradients reach only the embedding.
template <typename S>
Var<S> apply_plan(Var<S> stream, Var<S> embed, const SubstitutionPlan<S>& plan) {
  if (plan.empty()) return stream;
  Graph<S>& g = *stream.g;
  Var<S> repl = matmul(g.constant(plan.probs), embed);
  return scatter_rows(stream, plan.rows, repl);
}

struct HardSubRecord {
  Index pair = 0;
  Side side = Side::Source;
  Index pos = 0;
  int old_id = 0, new_id = 0;
};

// Discrete counterpart of the soft plan: gated positions get a token id
// sampled from the cleaned distribution, producing a synthetic corpus for
// the epoch. Either model pointer may be null to leave that side alone.
template <typename S>
std::vector<TokenizedPair> hard_substitute(const std::vector<TokenizedPair>& pairs,
                                           const CmlmModel<S>* src_lm,
                                           const CmlmModel<S>* tgt_lm, double gamma,
                                           std::uint64_t seed, std::uint64_t epoch,
                                           std::vector<HardSubRecord>* log = nullptr,
                                           Index group = 16) {
  std::vector<TokenizedPair> out = pairs;
  struct Slot {
    Index pair;
    Side side;
    Index pos;  // token index within the side
  };
  std::vector<MaskedExample> exs;
  std::vector<Slot> slots;

  auto flush = [&]() {
    if (exs.empty()) return;
    const CmlmModel<S>* lm = slots.front().side == Side::Source ? src_lm : tgt_lm;
    const auto dists = predict_masked_batch(*lm, exs);
    for (std::size_t k = 0; k < dists.size(); ++k) {
      const Slot& s = slots[k];
      auto& sent = s.side == Side::Source ? out[static_cast<std::size_t>(s.pair)].src
                                          : out[static_cast<std::size_t>(s.pair)].tgt;
      const int old_id = sent[static_cast<std::size_t>(s.pos)];
      std::vector<S> d = dists[k];
      clean_distribution(d, old_id);
      const double u = uniform01(seed, Stream::HardSample, epoch,
                                 static_cast<std::uint64_t>(s.pair),
                                 s.side == Side::Source ? 0ull : 1ull,
                                 static_cast<std::uint64_t>(s.pos));
      double acc = 0;
      int new_id = old_id;
      for (std::size_t j = 0; j < d.size(); ++j) {
        acc += static_cast<double>(d[j]);
        if (u < acc) {
          new_id = static_cast<int>(j);
          break;
        }
      }
      sent[static_cast<std::size_t>(s.pos)] = new_id;
      if (log) log->push_back({s.pair, s.side, s.pos, old_id, new_id});
    }
    exs.clear();
    slots.clear();
  };

  for (Side side : {Side::Source, Side::Target}) {
    const CmlmModel<S>* lm = side == Side::Source ? src_lm : tgt_lm;
    if (!lm) continue;
    const std::uint64_t side_key = side == Side::Source ? 0 : 1;
    for (Index i = 0; i < static_cast<Index>(pairs.size()); ++i) {
      const auto& sent = side == Side::Source ? pairs[static_cast<std::size_t>(i)].src
                                              : pairs[static_cast<std::size_t>(i)].tgt;
      std::vector<Index> picked;
      for (Index t = 0; t < static_cast<Index>(sent.size()); ++t) {
        if (sent[static_cast<std::size_t>(t)] < Vocab::kNumSpecials) continue;
        const double u = uniform01(seed, Stream::GammaGate, epoch, side_key,
                                   static_cast<std::uint64_t>(i),
                                   static_cast<std::uint64_t>(t));
        if (u < gamma) picked.push_back(t);
      }
      if (picked.empty()) continue;
      MaskedExample ex;
      {
        auto ce = detail::concat_pair(pairs[static_cast<std::size_t>(i)], side,
                                      ConditioningMode::Both);
        ex.tokens = std::move(ce.tokens);
        ex.segments = std::move(ce.segments);
      }
      const Index m = static_cast<Index>(pairs[static_cast<std::size_t>(i)].src.size());
      for (Index t : picked) {
        const Index cpos = side == Side::Source ? 1 + t : m + 2 + t;
        ex.masked_pos.push_back(cpos);
        ex.masked_ids.push_back(ex.tokens[static_cast<std::size_t>(cpos)]);
        ex.tokens[static_cast<std::size_t>(cpos)] = Vocab::kMask;
        slots.push_back({i, side, t});
      }
      exs.push_back(std::move(ex));
      if (static_cast<Index>(exs.size()) >= group) flush();
    }
    flush();
  }
  return out;
}

struct NoiseSpec {
  enum class Kind { None, Swap, Drop, Blank, Smooth };
  Kind kind = Kind::None;
  double param = 0;
};

// Per-token unigram distribution over one side, specials excluded.
inline std::vector<double> unigram_table(const std::vector<TokenizedPair>& pairs,
                                         Side side, int vocab_size) {
  std::vector<double> counts(static_cast<std::size_t>(vocab_size), 0.0);
  double total = 0;
  for (const auto& p : pairs)
    for (int id : side == Side::Source ? p.src : p.tgt)
      if (id >= Vocab::kNumSpecials) {
        counts[static_cast<std::size_t>(id)] += 1;
        total += 1;
      }
  if (total > 0)
    for (auto& c : counts) c /= total;
  return counts;
}

// Classic corruption baselines. Swap sorts by i + u * (k + 1), which bounds
// every token's displacement by k. Drop keeps at least one token.
inline std::vector<int> noise_tokens(const std::vector<int>& ids, const NoiseSpec& spec,
                                     CounterRng& rng,
                                     const std::vector<double>* unigram) {
  if (spec.kind == NoiseSpec::Kind::None || ids.empty()) return ids;
  const std::size_t n = ids.size();
  switch (spec.kind) {
    case NoiseSpec::Kind::Swap: {
      const double k = spec.param;
      std::vector<std::pair<double, std::size_t>> scored;
      for (std::size_t i = 0; i < n; ++i)
        scored.emplace_back(static_cast<double>(i) + rng.uniform() * (k + 1.0), i);
      std::stable_sort(scored.begin(), scored.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      std::vector<int> out;
      for (const auto& [s, i] : scored) out.push_back(ids[i]);
      return out;
    }
    case NoiseSpec::Kind::Drop: {
      std::vector<int> out;
      for (std::size_t i = 0; i < n; ++i)
        if (rng.uniform() >= spec.param) out.push_back(ids[i]);
      if (out.empty()) out.push_back(ids[0]);
      return out;
    }
    case NoiseSpec::Kind::Blank: {
      std::vector<int> out = ids;
      for (std::size_t i = 0; i < n; ++i)
        if (rng.uniform() < spec.param) out[i] = Vocab::kUnk;
      return out;
    }
    case NoiseSpec::Kind::Smooth: {
      std::vector<int> out = ids;
      for (std::size_t i = 0; i < n; ++i) {
        if (rng.uniform() >= spec.param) continue;
        const double u = rng.uniform();
        double acc = 0;
        for (std::size_t j = 0; j < unigram->size(); ++j) {
          acc += (*unigram)[j];
          if (u < acc) {
            out[i] = static_cast<int>(j);
            break;
          }
        }
      }
      return out;
    }
    default:
      return ids;
  }
}

inline std::vector<TokenizedPair> noise_pairs(const std::vector<TokenizedPair>& pairs,
                                              const NoiseSpec& spec, int vocab_size,
                                              std::uint64_t seed, std::uint64_t epoch) {
  if (spec.kind == NoiseSpec::Kind::None) return pairs;
  std::vector<double> uni_src, uni_tgt;
  if (spec.kind == NoiseSpec::Kind::Smooth) {
    uni_src = unigram_table(pairs, Side::Source, vocab_size);
    uni_tgt = unigram_table(pairs, Side::Target, vocab_size);
  }
  std::vector<TokenizedPair> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CounterRng rs(seed, Stream::Noise, hash_u64(epoch, static_cast<std::uint64_t>(i), 0ull));
    CounterRng rt(seed, Stream::Noise, hash_u64(epoch, static_cast<std::uint64_t>(i), 1ull));
    TokenizedPair p;
    p.src = noise_tokens(pairs[i].src, spec, rs, uni_src.empty() ? nullptr : &uni_src);
    p.tgt = noise_tokens(pairs[i].tgt, spec, rt, uni_tgt.empty() ? nullptr : &uni_tgt);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace cmda
