#include "cmda/eval.hpp"

#include <cmath>
#include <map>

#include "cmda/rng.hpp"

namespace cmda {

namespace {

constexpr int kMaxOrder = 4;

// Clipped match and total counts per order, plus lengths, for one sentence.
struct SentenceStats {
  std::array<long long, kMaxOrder> match{};
  std::array<long long, kMaxOrder> total{};
  long long cand_len = 0, ref_len = 0;
};

std::map<std::string, long long> ngram_counts(const std::vector<std::string>& toks,
                                              int n) {
  std::map<std::string, long long> counts;
  if (static_cast<int>(toks.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key;
    for (int k = 0; k < n; ++k) {
      if (k) key += '\x1f';
      key += toks[i + static_cast<std::size_t>(k)];
    }
    ++counts[key];
  }
  return counts;
}

SentenceStats sentence_stats(const std::vector<std::string>& cand,
                             const std::vector<std::string>& ref) {
  SentenceStats s;
  s.cand_len = static_cast<long long>(cand.size());
  s.ref_len = static_cast<long long>(ref.size());
  for (int n = 1; n <= kMaxOrder; ++n) {
    const auto cc = ngram_counts(cand, n);
    const auto rc = ngram_counts(ref, n);
    long long match = 0, total = 0;
    for (const auto& [gram, count] : cc) {
      total += count;
      auto it = rc.find(gram);
      if (it != rc.end()) match += std::min(count, it->second);
    }
    s.match[static_cast<std::size_t>(n - 1)] = match;
    s.total[static_cast<std::size_t>(n - 1)] = total;
  }
  return s;
}

BleuReport from_sums(const std::array<long long, kMaxOrder>& match,
                     const std::array<long long, kMaxOrder>& total,
                     long long cand_len, long long ref_len) {
  BleuReport r;
  r.cand_len = cand_len;
  r.ref_len = ref_len;
  double log_sum = 0;
  bool zero = false;
  for (int n = 0; n < kMaxOrder; ++n) {
    const double p = total[static_cast<std::size_t>(n)] > 0
                         ? static_cast<double>(match[static_cast<std::size_t>(n)]) /
                               static_cast<double>(total[static_cast<std::size_t>(n)])
                         : 0.0;
    r.precisions[static_cast<std::size_t>(n)] = p;
    if (p <= 0)
      zero = true;
    else
      log_sum += std::log(p);
  }
  if (cand_len == 0 || zero) {
    r.brevity_penalty = cand_len >= ref_len ? 1.0 : 0.0;
    return r;
  }
  r.brevity_penalty =
      cand_len >= ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
  r.bleu = 100.0 * r.brevity_penalty * std::exp(log_sum / kMaxOrder);
  return r;
}

std::vector<SentenceStats> corpus_stats(
    const std::vector<std::vector<std::string>>& cand,
    const std::vector<std::vector<std::string>>& ref) {
  if (cand.size() != ref.size())
    throw std::invalid_argument("candidate and reference counts differ");
  std::vector<SentenceStats> stats;
  stats.reserve(cand.size());
  for (std::size_t i = 0; i < cand.size(); ++i)
    stats.push_back(sentence_stats(cand[i], ref[i]));
  return stats;
}

BleuReport bleu_of(const std::vector<SentenceStats>& stats,
                   const std::vector<std::size_t>& idx) {
  std::array<long long, kMaxOrder> match{}, total{};
  long long cand_len = 0, ref_len = 0;
  for (std::size_t i : idx) {
    const SentenceStats& s = stats[i];
    for (int n = 0; n < kMaxOrder; ++n) {
      match[static_cast<std::size_t>(n)] += s.match[static_cast<std::size_t>(n)];
      total[static_cast<std::size_t>(n)] += s.total[static_cast<std::size_t>(n)];
    }
    cand_len += s.cand_len;
    ref_len += s.ref_len;
  }
  return from_sums(match, total, cand_len, ref_len);
}

std::vector<std::size_t> iota_idx(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

}  // namespace

BleuReport corpus_bleu(const std::vector<std::vector<std::string>>& cand,
                       const std::vector<std::vector<std::string>>& ref) {
  const auto stats = corpus_stats(cand, ref);
  return bleu_of(stats, iota_idx(stats.size()));
}

BootstrapResult paired_bootstrap(const std::vector<std::vector<std::string>>& cand_a,
                                 const std::vector<std::vector<std::string>>& cand_b,
                                 const std::vector<std::vector<std::string>>& ref,
                                 long resamples, std::uint64_t seed) {
  if (cand_a.size() != cand_b.size())
    throw std::invalid_argument("paired systems must decode the same sentences");
  const auto stats_a = corpus_stats(cand_a, ref);
  const auto stats_b = corpus_stats(cand_b, ref);
  const std::size_t n = stats_a.size();
  if (n == 0) throw DataError("paired bootstrap needs at least one sentence");

  BootstrapResult res;
  res.resamples = resamples;
  const auto all = iota_idx(n);
  res.bleu_a = bleu_of(stats_a, all).bleu;
  res.bleu_b = bleu_of(stats_b, all).bleu;
  res.delta = res.bleu_a - res.bleu_b;

  long not_better = 0;
  for (long r = 0; r < resamples; ++r) {
    CounterRng rng(seed, Stream::Bootstrap, static_cast<std::uint64_t>(r));
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i)
      idx[i] = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(n)));
    if (bleu_of(stats_a, idx).bleu <= bleu_of(stats_b, idx).bleu) ++not_better;
  }
  res.p_value = resamples > 0 ? static_cast<double>(not_better) / resamples : 1.0;
  return res;
}

}  // namespace cmda
