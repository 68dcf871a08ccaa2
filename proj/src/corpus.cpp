#include "cmda/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <sstream>

#include "cmda/rng.hpp"

namespace cmda {

std::vector<std::string> utf8_split(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    std::size_t len;
    if (c < 0x80)
      len = 1;
    else if ((c & 0xE0) == 0xC0)
      len = 2;
    else if ((c & 0xF0) == 0xE0)
      len = 3;
    else if ((c & 0xF8) == 0xF0)
      len = 4;
    else
      throw DataError("invalid UTF-8 byte at offset " + std::to_string(i));
    if (i + len > s.size())
      throw DataError("truncated UTF-8 sequence at offset " + std::to_string(i));
    for (std::size_t k = 1; k < len; ++k)
      if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80)
        throw DataError("invalid UTF-8 continuation at offset " +
                        std::to_string(i + k));
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

void MergeTable::rebuild_ranks() {
  rank.clear();
  for (std::size_t i = 0; i < merges.size(); ++i)
    rank.emplace(merges[i], static_cast<int>(i));
}

namespace {

constexpr const char* kWordEnd = "</w>";

std::vector<std::string> word_symbols(const std::string& word) {
  std::vector<std::string> syms = utf8_split(word);
  syms.push_back(kWordEnd);
  return syms;
}

void apply_merge(std::vector<std::string>& syms,
                 const std::pair<std::string, std::string>& pair) {
  std::vector<std::string> out;
  out.reserve(syms.size());
  std::size_t i = 0;
  while (i < syms.size()) {
    if (i + 1 < syms.size() && syms[i] == pair.first && syms[i + 1] == pair.second) {
      out.push_back(pair.first + pair.second);
      i += 2;
    } else {
      out.push_back(std::move(syms[i]));
      i += 1;
    }
  }
  syms = std::move(out);
}

}  // namespace

MergeTable learn_bpe(const std::vector<std::string>& lines, int num_merges) {
  // Word type -> frequency, plus each type's current symbol sequence.
  std::map<std::string, long> freq;
  for (const auto& line : lines)
    for (const auto& w : split_ws(line)) ++freq[w];
  std::vector<std::vector<std::string>> word_syms;
  std::vector<long> word_freq;
  for (const auto& [w, n] : freq) {
    word_syms.push_back(word_symbols(w));
    word_freq.push_back(n);
  }

  MergeTable table;
  for (int m = 0; m < num_merges; ++m) {
    std::map<std::pair<std::string, std::string>, long> counts;
    for (std::size_t k = 0; k < word_syms.size(); ++k) {
      const auto& syms = word_syms[k];
      for (std::size_t i = 0; i + 1 < syms.size(); ++i)
        counts[{syms[i], syms[i + 1]}] += word_freq[k];
    }
    if (counts.empty()) break;
    // std::map iterates pairs in ascending order, so on equal counts the
    // first maximum seen is the lexicographically smallest pair.
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it)
      if (it->second > best->second) best = it;
    if (best->second < 2) break;
    table.merges.push_back(best->first);
    for (auto& syms : word_syms) apply_merge(syms, best->first);
  }
  table.rebuild_ranks();
  return table;
}

void save_merges(const std::string& path, const MergeTable& table) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write merge table: " + path);
  f << "#version: 1\n";
  for (const auto& [a, b] : table.merges) f << a << ' ' << b << '\n';
  if (!f) throw DataError("merge table write failed: " + path);
}

MergeTable load_merges(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open merge table: " + path);
  std::string line;
  if (!std::getline(f, line) || line != "#version: 1")
    throw DataError("merge table missing version header: " + path);
  MergeTable table;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::size_t sp = line.find(' ');
    if (sp == std::string::npos || sp == 0 || sp + 1 == line.size() ||
        line.find(' ', sp + 1) != std::string::npos)
      throw DataError("malformed merge at " + path + ":" + std::to_string(lineno));
    table.merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  table.rebuild_ranks();
  return table;
}

BpeTokenizer::BpeTokenizer(MergeTable table) : table_(std::move(table)) {
  if (table_.rank.size() != table_.merges.size()) table_.rebuild_ranks();
}

const std::vector<std::string>& BpeTokenizer::word_pieces(const std::string& word) {
  auto it = cache_.find(word);
  if (it != cache_.end()) return it->second;

  std::vector<std::string> syms = word_symbols(word);
  while (syms.size() >= 2) {
    int best_rank = std::numeric_limits<int>::max();
    std::size_t best_i = syms.size();
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      auto r = table_.rank.find({syms[i], syms[i + 1]});
      if (r != table_.rank.end() && r->second < best_rank) {
        best_rank = r->second;
        best_i = i;
      }
    }
    if (best_i == syms.size()) break;
    apply_merge(syms, {syms[best_i], syms[best_i + 1]});
  }
  return cache_.emplace(word, std::move(syms)).first->second;
}

std::vector<std::string> BpeTokenizer::tokenize(const std::string& line) {
  std::vector<std::string> out;
  for (const auto& w : split_ws(line)) {
    const auto& pieces = word_pieces(w);
    out.insert(out.end(), pieces.begin(), pieces.end());
  }
  return out;
}

std::string BpeTokenizer::detokenize(const std::vector<std::string>& pieces) {
  std::string joined;
  for (const auto& p : pieces) joined += p;
  std::string out;
  std::size_t i = 0;
  const std::string end = kWordEnd;
  while (i < joined.size()) {
    if (joined.compare(i, end.size(), end) == 0) {
      out += ' ';
      i += end.size();
    } else {
      out += joined[i++];
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

const std::array<const char*, Vocab::kNumSpecials>& Vocab::special_names() {
  static const std::array<const char*, kNumSpecials> names = {
      "<pad>", "<unk>", "<bos>", "<eos>", "<sep>", "<cls>", "<mask>"};
  return names;
}

Vocab Vocab::build(const std::vector<std::vector<std::string>>& sentences,
                   long min_freq) {
  std::map<std::string, long> freq;
  for (const auto& sent : sentences)
    for (const auto& tok : sent) ++freq[tok];

  Vocab v;
  for (const char* name : special_names()) {
    v.ids.emplace(name, static_cast<int>(v.tokens.size()));
    v.tokens.push_back(name);
    freq.erase(name);
  }
  std::vector<std::pair<std::string, long>> order(freq.begin(), freq.end());
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) {
                     if (a.second != b.second) return a.second > b.second;
                     return a.first < b.first;
                   });
  for (const auto& [tok, n] : order) {
    if (n < min_freq) continue;
    v.ids.emplace(tok, static_cast<int>(v.tokens.size()));
    v.tokens.push_back(tok);
  }
  return v;
}

int Vocab::id(const std::string& tok) const {
  auto it = ids.find(tok);
  return it == ids.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size())
    throw std::invalid_argument("token id out of range: " + std::to_string(id));
  return tokens[static_cast<std::size_t>(id)];
}

void save_vocab(const std::string& path, const Vocab& vocab) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write vocab: " + path);
  for (int i = 0; i < vocab.size(); ++i) f << vocab.tokens[i] << '\t' << i << '\n';
  if (!f) throw DataError("vocab write failed: " + path);
}

Vocab load_vocab(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open vocab: " + path);
  Vocab v;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw DataError("malformed vocab entry at " + path + ":" + std::to_string(lineno));
    const std::string tok = line.substr(0, tab);
    int id;
    try {
      id = std::stoi(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw DataError("malformed vocab id at " + path + ":" + std::to_string(lineno));
    }
    if (id != v.size())
      throw DataError("non-contiguous vocab ids at " + path + ":" + std::to_string(lineno));
    if (!v.ids.emplace(tok, id).second)
      throw DataError("duplicate vocab token at " + path + ":" + std::to_string(lineno));
    v.tokens.push_back(tok);
  }
  const auto& names = Vocab::special_names();
  if (v.size() < Vocab::kNumSpecials)
    throw DataError("vocab missing special tokens: " + path);
  for (int i = 0; i < Vocab::kNumSpecials; ++i)
    if (v.tokens[static_cast<std::size_t>(i)] != names[static_cast<std::size_t>(i)])
      throw DataError("vocab special tokens out of order: " + path);
  return v;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write file: " + path);
  for (const auto& line : lines) f << line << '\n';
  if (!f) throw DataError("write failed: " + path);
}

std::vector<SentencePair> read_parallel_corpus(const std::string& src_path,
                                               const std::string& tgt_path) {
  auto src = read_lines(src_path);
  auto tgt = read_lines(tgt_path);
  if (src.size() != tgt.size())
    throw DataError("parallel corpus line counts differ: " + src_path + " has " +
                    std::to_string(src.size()) + ", " + tgt_path + " has " +
                    std::to_string(tgt.size()));
  std::vector<SentencePair> out;
  out.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i)
    out.push_back({std::move(src[i]), std::move(tgt[i])});
  return out;
}

std::vector<int> encode_line(const std::string& line, BpeTokenizer& tok,
                             const Vocab& vocab) {
  std::vector<int> ids;
  for (const auto& piece : tok.tokenize(line)) ids.push_back(vocab.id(piece));
  return ids;
}

std::string decode_ids(const std::vector<int>& ids, const Vocab& vocab) {
  std::vector<std::string> pieces;
  for (int id : ids)
    if (!Vocab::is_special(id)) pieces.push_back(vocab.token(id));
  return BpeTokenizer::detokenize(pieces);
}

std::vector<TokenizedPair> encode_corpus(const std::vector<SentencePair>& pairs,
                                         BpeTokenizer& tok, const Vocab& vocab) {
  std::vector<TokenizedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    TokenizedPair tp{encode_line(p.src, tok, vocab), encode_line(p.tgt, tok, vocab)};
    if (tp.src.empty() || tp.tgt.empty()) continue;
    out.push_back(std::move(tp));
  }
  return out;
}

PaddedBatch make_batch(const std::vector<TokenizedPair>& pairs,
                       const std::vector<Index>& idx) {
  if (idx.empty()) throw std::invalid_argument("make_batch: empty index set");
  PaddedBatch b;
  b.size = static_cast<Index>(idx.size());
  for (Index i : idx) {
    const auto& p = pairs[static_cast<std::size_t>(i)];
    b.src_len = std::max(b.src_len, static_cast<Index>(p.src.size()));
    b.tgt_len = std::max(b.tgt_len, static_cast<Index>(p.tgt.size()) + 1);
  }
  b.x.assign(static_cast<std::size_t>(b.size * b.src_len), Vocab::kPad);
  b.y.assign(static_cast<std::size_t>(b.size * b.tgt_len), Vocab::kPad);
  for (Index r = 0; r < b.size; ++r) {
    const auto& p = pairs[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])];
    for (std::size_t t = 0; t < p.src.size(); ++t)
      b.x[static_cast<std::size_t>(r * b.src_len) + t] = p.src[t];
    for (std::size_t t = 0; t < p.tgt.size(); ++t)
      b.y[static_cast<std::size_t>(r * b.tgt_len) + t] = p.tgt[t];
    b.y[static_cast<std::size_t>(r * b.tgt_len) + p.tgt.size()] = Vocab::kEos;
    b.x_lens.push_back(static_cast<Index>(p.src.size()));
    b.y_lens.push_back(static_cast<Index>(p.tgt.size()) + 1);
  }
  return b;
}

std::vector<std::vector<Index>> batch_order(Index n, Index batch_size,
                                            std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size < 1) throw std::invalid_argument("batch_order: batch_size must be >= 1");
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  CounterRng rng(seed, Stream::DataOrder, epoch);
  shuffle(order, rng);
  std::vector<std::vector<Index>> out;
  for (Index start = 0; start < n; start += batch_size) {
    const Index stop = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + start, order.begin() + stop);
  }
  return out;
}

}  // namespace cmda
