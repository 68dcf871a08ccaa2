#pragma once

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cmda/errors.hpp"
#include "cmda/tensor.hpp"

namespace cmda {

// Splits into codepoint strings; malformed byte sequences raise DataError.
std::vector<std::string> utf8_split(const std::string& s);

std::vector<std::string> split_ws(const std::string& line);

struct MergeTable {
  std::vector<std::pair<std::string, std::string>> merges;
  std::map<std::pair<std::string, std::string>, int> rank;
  void rebuild_ranks();
};

// Byte-pair merges learned over whitespace words with a "</w>" terminator
// symbol; ties on count break toward the lexicographically smaller pair.
MergeTable learn_bpe(const std::vector<std::string>& lines, int num_merges);

void save_merges(const std::string& path, const MergeTable& table);
MergeTable load_merges(const std::string& path);

class BpeTokenizer {
 public:
  explicit BpeTokenizer(MergeTable table);
  const MergeTable& table() const { return table_; }
  // Pieces for one whitespace word; results are cached per word.
  const std::vector<std::string>& word_pieces(const std::string& word);
  std::vector<std::string> tokenize(const std::string& line);
  static std::string detokenize(const std::vector<std::string>& pieces);

 private:
  MergeTable table_;
  std::map<std::string, std::vector<std::string>> cache_;
};

struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kSep = 4;
  static constexpr int kCls = 5;
  static constexpr int kMask = 6;
  static constexpr int kNumSpecials = 7;
  static const std::array<const char*, kNumSpecials>& special_names();

  std::vector<std::string> tokens;
  std::map<std::string, int> ids;

  // Specials first, then observed tokens by (frequency desc, token asc).
  static Vocab build(const std::vector<std::vector<std::string>>& sentences,
                     long min_freq = 1);
  int id(const std::string& tok) const;
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens.size()); }
  static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }
};

void save_vocab(const std::string& path, const Vocab& vocab);
Vocab load_vocab(const std::string& path);

struct SentencePair {
  std::string src, tgt;
};

// One sentence per line, same line count on both sides.
std::vector<SentencePair> read_parallel_corpus(const std::string& src_path,
                                               const std::string& tgt_path);
std::vector<std::string> read_lines(const std::string& path);
void write_lines(const std::string& path, const std::vector<std::string>& lines);

struct TokenizedPair {
  std::vector<int> src, tgt;
};

// Pairs where either side tokenizes to nothing are skipped.
std::vector<TokenizedPair> encode_corpus(const std::vector<SentencePair>& pairs,
                                         BpeTokenizer& tok, const Vocab& vocab);

std::vector<int> encode_line(const std::string& line, BpeTokenizer& tok,
                             const Vocab& vocab);
std::string decode_ids(const std::vector<int>& ids, const Vocab& vocab);

// x rows hold source ids; y rows hold target ids followed by one EOS.
// Both are padded with PAD to the batch-wide max.
struct PaddedBatch {
  Index size = 0;
  Index src_len = 0;
  Index tgt_len = 0;
  std::vector<int> x, y;
  std::vector<Index> x_lens, y_lens;

  int x_at(Index b, Index t) const { return x[static_cast<std::size_t>(b * src_len + t)]; }
  int y_at(Index b, Index t) const { return y[static_cast<std::size_t>(b * tgt_len + t)]; }
};

PaddedBatch make_batch(const std::vector<TokenizedPair>& pairs,
                       const std::vector<Index>& idx);

// Shuffled index groups for one epoch; the permutation depends only on
// (seed, epoch), so a resumed run sees the identical order.
std::vector<std::vector<Index>> batch_order(Index n, Index batch_size,
                                            std::uint64_t seed, std::uint64_t epoch);

}  // namespace cmda
