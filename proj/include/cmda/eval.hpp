#pragma once

#include <array>
#include <string>
#include <vector>

#include "cmda/cmlm.hpp"
#include "cmda/model.hpp"

namespace cmda {

struct DecodeConfig {
  Index beam = 4;
  Index max_len = 32;
};

struct BleuReport {
  double bleu = 0;  // 0..100
  std::array<double, 4> precisions{};
  double brevity_penalty = 1;
  long long cand_len = 0, ref_len = 0;
};

// Corpus-level clipped n-gram precision up to 4-grams with the standard
// brevity penalty; any empty precision bucket zeroes the score.
BleuReport corpus_bleu(const std::vector<std::vector<std::string>>& cand,
                       const std::vector<std::vector<std::string>>& ref);

struct BootstrapResult {
  double bleu_a = 0, bleu_b = 0, delta = 0;
  // Fraction of resamples where system a fails to beat system b.
  double p_value = 1;
  long resamples = 0;
};

BootstrapResult paired_bootstrap(const std::vector<std::vector<std::string>>& cand_a,
                                 const std::vector<std::vector<std::string>>& cand_b,
                                 const std::vector<std::vector<std::string>>& ref,
                                 long resamples, std::uint64_t seed);

namespace detail {

template <typename S>
struct Hyp {
  std::vector<int> toks;
  double logp = 0;
};

}  // namespace detail

// Length-normalized beam search; beam = 1 is greedy. All candidate hyps in
// a step share one batched forward pass. Ties break toward the lower token
// id, so decoding is deterministic.
template <typename S>
std::vector<int> decode_sentence(const NmtModel<S>& model, const std::vector<int>& src,
                                 const DecodeConfig& dc) {
  if (src.empty()) return {};
  using detail::Hyp;
  std::vector<Hyp<S>> active{{{}, 0.0}};
  std::vector<std::pair<double, std::vector<int>>> finished;
  const Index v = static_cast<Index>(model.cfg.vocab_size);

  for (Index t = 1; t <= dc.max_len && !active.empty(); ++t) {
    const Index batch = static_cast<Index>(active.size());
    const Index lx = static_cast<Index>(src.size());
    std::vector<int> x;
    std::vector<Index> x_lens;
    for (Index r = 0; r < batch; ++r) {
      x.insert(x.end(), src.begin(), src.end());
      x_lens.push_back(lx);
    }
    std::vector<int> dec_in;
    for (Index r = 0; r < batch; ++r) {
      dec_in.push_back(Vocab::kBos);
      const auto& toks = active[static_cast<std::size_t>(r)].toks;
      dec_in.insert(dec_in.end(), toks.begin(), toks.end());
    }

    Graph<S> g;
    g.opts.training = false;
    Bound<S> bound = bind(g, model.params, model.cfg, false);
    TagGen tag;
    EncodedSource<S> enc = nmt_encode(bound, x, x_lens, batch, lx, tag);
    Var<S> logits = nmt_decode(bound, enc, dec_in, batch, t, tag);
    const Tensor<S>& lv = logits.value();

    // Expand every hyp by every token on log-softmax of the last position.
    std::vector<std::tuple<double, Index, int>> cands;  // (score, hyp, token)
    for (Index r = 0; r < batch; ++r) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Index j = 0; j < v; ++j)
        mx = std::max(mx, static_cast<double>(lv.at(r, t - 1, j)));
      double z = 0;
      for (Index j = 0; j < v; ++j)
        z += std::exp(static_cast<double>(lv.at(r, t - 1, j)) - mx);
      const double lse = mx + std::log(z);
      for (int j = 0; j < static_cast<int>(v); ++j) {
        if (j == Vocab::kPad || j == Vocab::kBos) continue;
        const double lp = static_cast<double>(lv.at(r, t - 1, j)) - lse;
        cands.emplace_back(active[static_cast<std::size_t>(r)].logp + lp, r, j);
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
      if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
      if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
      return std::get<2>(a) < std::get<2>(b);
    });

    std::vector<Hyp<S>> next;
    for (const auto& [score, r, j] : cands) {
      if (static_cast<Index>(next.size()) >= dc.beam) break;
      Hyp<S> h = active[static_cast<std::size_t>(r)];
      h.logp = score;
      if (j == Vocab::kEos) {
        finished.emplace_back(score / static_cast<double>(t), h.toks);
      } else {
        h.toks.push_back(j);
        next.push_back(std::move(h));
      }
    }
    active = std::move(next);
    if (static_cast<Index>(finished.size()) >= dc.beam) break;
  }

  for (const auto& h : active)
    finished.emplace_back(h.logp / static_cast<double>(h.toks.size() + 1), h.toks);
  if (finished.empty()) return {};
  std::stable_sort(finished.begin(), finished.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  return finished.front().second;
}

template <typename S>
std::vector<std::vector<int>> decode_corpus(const NmtModel<S>& model,
                                            const std::vector<TokenizedPair>& pairs,
                                            const DecodeConfig& dc) {
  std::vector<std::vector<int>> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(decode_sentence(model, p.src, dc));
  return out;
}

inline std::vector<std::string> bleu_tokens(const std::vector<int>& ids,
                                            const Vocab& vocab) {
  return split_ws(decode_ids(ids, vocab));
}

// BLEU of a model against the target side of a held-out set.
template <typename S>
double model_bleu(const NmtModel<S>& model, const std::vector<TokenizedPair>& pairs,
                  const Vocab& vocab, const DecodeConfig& dc) {
  std::vector<std::vector<std::string>> cand, ref;
  for (const auto& p : pairs) ref.push_back(bleu_tokens(p.tgt, vocab));
  for (const auto& ids : decode_corpus(model, pairs, dc))
    cand.push_back(bleu_tokens(ids, vocab));
  return corpus_bleu(cand, ref).bleu;
}

struct ConsistencyReport {
  long correct = 0, total = 0;
  double accuracy = 0;
};

// Masks held-out pairs the same way training does and scores argmax
// predictions at the masked slots against the original tokens.
template <typename S>
ConsistencyReport consistency_accuracy(const CmlmModel<S>& model,
                                       const std::vector<TokenizedPair>& pairs,
                                       Side side, ConditioningMode mode,
                                       double mask_rate, std::uint64_t seed,
                                       Index group = 16) {
  ConsistencyReport rep;
  std::vector<MaskedExample> exs;
  std::vector<int> golds;
  auto flush = [&]() {
    if (exs.empty()) return;
    const auto dists = predict_masked_batch(model, exs);
    for (std::size_t k = 0; k < dists.size(); ++k) {
      const auto& d = dists[k];
      std::size_t best = 0;
      for (std::size_t j = 1; j < d.size(); ++j)
        if (d[j] > d[best]) best = j;
      rep.correct += static_cast<int>(best) == golds[k] ? 1 : 0;
      rep.total += 1;
    }
    exs.clear();
    golds.clear();
  };
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    MaskedExample ex = make_masked_example(pairs[i], side, mode, mask_rate, seed,
                                           static_cast<std::uint64_t>(i));
    for (int id : ex.masked_ids) golds.push_back(id);
    exs.push_back(std::move(ex));
    if (static_cast<Index>(exs.size()) >= group) flush();
  }
  flush();
  rep.accuracy = rep.total ? static_cast<double>(rep.correct) / rep.total : 0;
  return rep;
}

}  // namespace cmda
