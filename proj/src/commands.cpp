#include "cmda/commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cmda/corpus.hpp"
#include "cmda/trainer.hpp"

namespace cmda::commands {
namespace {

namespace fs = std::filesystem;

constexpr const char* kVolatileKeys[] = {"train.resume", "train.stop_step"};

constexpr const char* kMergesFile = "merges.txt";
constexpr const char* kVocabFile = "vocab.txt";
constexpr const char* kSrcTokFile = "corpus.src.tok";
constexpr const char* kTgtTokFile = "corpus.tgt.tok";
constexpr const char* kCmlmCkpt = "cmlm.ckpt";
constexpr const char* kNmtCkpt = "nmt.ckpt";
constexpr const char* kMetricsFile = "metrics.txt";
constexpr const char* kReportFile = "report.txt";
constexpr const char* kHypsFile = "hyps.txt";
constexpr const char* kTableFile = "table.txt";

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void ensure_out_dir(const std::string& dir) {
  if (dir.empty()) throw UsageError("output directory must not be empty");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw DataError("cannot create output directory " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw DataError("write failed: " + path);
}

std::string header(const char* command, const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "command=" << command << "\n"
     << "config_digest=" << experiment_digest(cfg) << "\n"
     << "seed=" << cfg.get_long("seed", 1) << "\n";
  return os.str();
}

enum class Precision { F32, F64 };

Precision precision_of(const ExperimentConfig& cfg) {
  const std::string s = cfg.get_str("precision", "f32");
  if (s == "f32") return Precision::F32;
  if (s == "f64") return Precision::F64;
  throw DataError("config key 'precision': expected f32 or f64, got '" + s + "'");
}

const char* precision_name(Precision p) {
  return p == Precision::F64 ? "f64" : "f32";
}

long positive_long(const ExperimentConfig& cfg, const std::string& key, long def) {
  const long v = cfg.get_long(key, def);
  if (v < 1)
    throw DataError("config key '" + key + "': must be positive, got " +
                    std::to_string(v));
  return v;
}

double rate_of(const ExperimentConfig& cfg, const std::string& key, double def) {
  const double v = cfg.get_double(key, def);
  if (!(v >= 0.0 && v <= 1.0))
    throw DataError("config key '" + key + "': must lie in [0, 1], got " +
                    cfg.get_str(key, ""));
  return v;
}

Side side_of(const ExperimentConfig& cfg) {
  const std::string s = cfg.require_str("cmlm.side");
  if (s == "source") return Side::Source;
  if (s == "target") return Side::Target;
  throw DataError("config key 'cmlm.side': expected source or target, got '" + s + "'");
}

ConditioningMode mode_of(const ExperimentConfig& cfg) {
  const std::string s = cfg.get_str("cmlm.mode", "both");
  if (s == "both") return ConditioningMode::Both;
  if (s == "mono") return ConditioningMode::Mono;
  throw DataError("config key 'cmlm.mode': expected both or mono, got '" + s + "'");
}

std::uint64_t seed_of(const ExperimentConfig& cfg) {
  return static_cast<std::uint64_t>(cfg.get_long("seed", 1));
}

TransformerConfig model_config(const ExperimentConfig& cfg, const std::string& p,
                               int vocab_size) {
  TransformerConfig mc;
  mc.vocab_size = vocab_size;
  mc.d_model = static_cast<int>(positive_long(cfg, p + "d_model", mc.d_model));
  mc.n_heads = static_cast<int>(positive_long(cfg, p + "n_heads", mc.n_heads));
  mc.d_ff = static_cast<int>(positive_long(cfg, p + "d_ff", mc.d_ff));
  mc.enc_layers = static_cast<int>(positive_long(cfg, p + "enc_layers", mc.enc_layers));
  mc.dec_layers = static_cast<int>(positive_long(cfg, p + "dec_layers", mc.dec_layers));
  mc.dropout = rate_of(cfg, p + "dropout", mc.dropout);
  mc.label_smoothing = rate_of(cfg, p + "label_smoothing", mc.label_smoothing);
  mc.max_len = static_cast<int>(positive_long(cfg, p + "max_len", mc.max_len));
  return mc;
}

struct LoadedData {
  BpeTokenizer tok;
  Vocab vocab;
};

LoadedData load_tokenizer(const ExperimentConfig& cfg) {
  return {BpeTokenizer(load_merges(cfg.require_str("data.merges"))),
          load_vocab(cfg.require_str("data.vocab"))};
}

std::vector<TokenizedPair> load_pairs(const ExperimentConfig& cfg,
                                      const std::string& src_key,
                                      const std::string& tgt_key, BpeTokenizer& tok,
                                      const Vocab& vocab) {
  const std::string src = cfg.require_str(src_key);
  const std::string tgt = cfg.require_str(tgt_key);
  auto enc = encode_corpus(read_parallel_corpus(src, tgt), tok, vocab);
  if (enc.empty())
    throw DataError("corpus from " + src + " and " + tgt + " has no usable pairs");
  return enc;
}

TrainConfig train_config(const ExperimentConfig& cfg, const std::string& out_dir) {
  TrainConfig tc;
  tc.batch_size = static_cast<Index>(positive_long(cfg, "train.batch_size", 8));
  tc.max_steps = positive_long(cfg, "train.max_steps", tc.max_steps);
  tc.warmup = positive_long(cfg, "train.warmup", tc.warmup);
  tc.lr_scale = cfg.get_double("train.lr_scale", tc.lr_scale);
  tc.seed = seed_of(cfg);
  tc.log_every = cfg.get_long("train.log_every", tc.log_every);
  tc.val_every = cfg.get_long("train.val_every", tc.val_every);
  tc.checkpoint_every = cfg.get_long("train.checkpoint_every", tc.checkpoint_every);
  tc.checkpoint_path = join(out_dir, kNmtCkpt);
  tc.config_digest = experiment_digest(cfg);
  tc.val_decode.beam = static_cast<Index>(positive_long(cfg, "train.val_beam", 1));
  tc.val_decode.max_len = static_cast<Index>(positive_long(cfg, "train.val_max_len", 24));
  return tc;
}

DaConfig da_config(const ExperimentConfig& cfg) {
  DaConfig da;
  const std::string mode = cfg.get_str("da.mode", "none");
  try {
    da.mode = parse_da_mode(mode);
  } catch (const DataError& e) {
    throw DataError("config key 'da.mode': " + std::string(e.what()));
  }
  da.gamma = rate_of(cfg, "da.gamma", da.gamma);
  da.param = cfg.get_double("da.param", da.param);
  if (da.param < 0)
    throw DataError("config key 'da.param': must be nonnegative, got " +
                    cfg.get_str("da.param", ""));
  da.on_source = cfg.get_bool("da.on_source", da.on_source);
  da.on_target = cfg.get_bool("da.on_target", da.on_target);
  return da;
}

CmlmTrainConfig cmlm_train_config(const ExperimentConfig& cfg) {
  CmlmTrainConfig tc;
  tc.side = side_of(cfg);
  tc.mode = mode_of(cfg);
  tc.epochs = positive_long(cfg, "cmlm.epochs", tc.epochs);
  tc.batch_size = static_cast<Index>(positive_long(cfg, "cmlm.batch_size", 8));
  tc.peak_lr = cfg.get_double("cmlm.peak_lr", tc.peak_lr);
  tc.mask_rate = rate_of(cfg, "cmlm.mask_rate", tc.mask_rate);
  tc.seed = seed_of(cfg);
  tc.log_every = cfg.get_long("cmlm.log_every", 10);
  return tc;
}

DecodeConfig decode_config(const ExperimentConfig& cfg) {
  DecodeConfig dc;
  dc.beam = static_cast<Index>(positive_long(cfg, "eval.beam", 4));
  dc.max_len = static_cast<Index>(positive_long(cfg, "eval.max_len", 32));
  return dc;
}

template <typename S>
TrainCmlmResult run_train_cmlm(const ExperimentConfig& cfg, const std::string& out_dir,
                               Precision prec) {
  LoadedData data = load_tokenizer(cfg);
  const auto pairs = load_pairs(cfg, "data.src", "data.tgt", data.tok, data.vocab);
  const CmlmTrainConfig tc = cmlm_train_config(cfg);
  const TransformerConfig mc = model_config(cfg, "cmlm.", data.vocab.size());

  CmlmModel<S> model = CmlmModel<S>::init(mc, tc.seed);
  std::ostringstream log;
  const CmlmTrainResult res = finetune_cmlm(model, pairs, tc, &log);

  TrainCmlmResult r;
  r.checkpoint_path = join(out_dir, kCmlmCkpt);
  r.metrics_path = join(out_dir, kMetricsFile);
  r.steps = res.steps;
  r.final_loss = res.final_loss;
  save_cmlm(r.checkpoint_path, model, tc.side, tc.mode, experiment_digest(cfg));

  std::ostringstream m;
  m << header("train-cmlm", cfg) << "precision=" << precision_name(prec) << "\n"
    << "side=" << side_name(tc.side) << "\n"
    << "mode=" << mode_name(tc.mode) << "\n"
    << log.str() << "steps=" << res.steps << "\n"
    << "final_loss=" << fmt(res.final_loss) << "\n";
  write_text(r.metrics_path, m.str());
  return r;
}

template <typename S>
TrainNmtResult run_train_nmt(const ExperimentConfig& cfg, const std::string& out_dir,
                             Precision prec) {
  LoadedData data = load_tokenizer(cfg);
  const auto pairs = load_pairs(cfg, "data.src", "data.tgt", data.tok, data.vocab);

  const bool has_val = cfg.has("data.val_src") || cfg.has("data.val_tgt");
  std::vector<TokenizedPair> val;
  if (has_val) {
    if (!cfg.has("data.val_src") || !cfg.has("data.val_tgt"))
      throw DataError("config keys data.val_src and data.val_tgt must be given together");
    val = load_pairs(cfg, "data.val_src", "data.val_tgt", data.tok, data.vocab);
  }

  const TransformerConfig mc = model_config(cfg, "nmt.", data.vocab.size());
  const TrainConfig tc = train_config(cfg, out_dir);
  const DaConfig da = da_config(cfg);

  std::optional<CmlmModel<S>> lm_src, lm_tgt;
  if (da.mode == DaMode::Soft || da.mode == DaMode::Hard) {
    const TransformerConfig lc = model_config(cfg, "cmlm.", data.vocab.size());
    const ConditioningMode lmode = mode_of(cfg);
    if (da.on_source)
      lm_src = load_cmlm<S>(cfg.require_str("cmlm.src_checkpoint"), lc, Side::Source, lmode);
    if (da.on_target)
      lm_tgt = load_cmlm<S>(cfg.require_str("cmlm.tgt_checkpoint"), lc, Side::Target, lmode);
  }

  NmtModel<S> model = NmtModel<S>::init(mc, tc.seed);
  AdamState<S> adam = AdamState<S>::init(model.params);
  long start = 0;
  if (cfg.get_bool("train.resume", false))
    start = load_train_state(tc.checkpoint_path, model, adam, tc.config_digest);

  TrainConfig run_tc = tc;
  const long stop = cfg.get_long("train.stop_step", 0);
  if (stop > 0 && stop < run_tc.max_steps) run_tc.max_steps = stop;

  std::ostringstream log;
  const TrainResult res =
      train_nmt<S>(model, adam, pairs, data.vocab, run_tc, da,
                   lm_src ? &*lm_src : nullptr, lm_tgt ? &*lm_tgt : nullptr,
                   has_val ? &val : nullptr, &log, start);
  save_train_state(tc.checkpoint_path, model, adam, res.steps, tc.config_digest);

  TrainNmtResult r;
  r.checkpoint_path = tc.checkpoint_path;
  r.metrics_path = join(out_dir, kMetricsFile);
  r.steps = res.steps;
  r.final_loss = res.final_loss;

  std::ostringstream m;
  m << header("train-nmt", cfg) << "precision=" << precision_name(prec) << "\n"
    << "start_step=" << start << "\n"
    << log.str() << "steps=" << res.steps << "\n"
    << "final_loss=" << fmt(res.final_loss) << "\n";
  write_text(r.metrics_path, m.str());
  return r;
}

template <typename S>
EvaluateResult run_evaluate(const ExperimentConfig& cfg, const std::string& checkpoint,
                            const std::string& out_dir, Precision prec) {
  LoadedData data = load_tokenizer(cfg);
  const auto pairs =
      load_pairs(cfg, "data.test_src", "data.test_tgt", data.tok, data.vocab);
  const TransformerConfig mc = model_config(cfg, "nmt.", data.vocab.size());
  const DecodeConfig dc = decode_config(cfg);

  NmtModel<S> model = NmtModel<S>::init(mc, 0);
  AdamState<S> adam = AdamState<S>::init(model.params);
  const long step = load_train_state(checkpoint, model, adam, "");

  std::vector<std::vector<std::string>> cand, ref;
  cand.reserve(pairs.size());
  ref.reserve(pairs.size());
  for (const auto& p : pairs) ref.push_back(bleu_tokens(p.tgt, data.vocab));
  std::vector<std::string> hyp_lines;
  hyp_lines.reserve(pairs.size());
  for (const auto& ids : decode_corpus(model, pairs, dc)) {
    cand.push_back(bleu_tokens(ids, data.vocab));
    std::string line;
    for (std::size_t k = 0; k < cand.back().size(); ++k) {
      if (k) line += ' ';
      line += cand.back()[k];
    }
    hyp_lines.push_back(std::move(line));
  }

  EvaluateResult r;
  r.report = corpus_bleu(cand, ref);
  r.sentences = static_cast<long>(pairs.size());
  r.report_path = join(out_dir, kReportFile);
  r.hyps_path = join(out_dir, kHypsFile);
  write_lines(r.hyps_path, hyp_lines);

  std::ostringstream m;
  m << header("evaluate", cfg) << "precision=" << precision_name(prec) << "\n"
    << "checkpoint_step=" << step << "\n"
    << "beam=" << dc.beam << "\n"
    << "max_len=" << dc.max_len << "\n"
    << "sentences=" << r.sentences << "\n"
    << "bleu=" << fmt(r.report.bleu) << "\n";
  for (std::size_t k = 0; k < r.report.precisions.size(); ++k)
    m << "precision_" << (k + 1) << "=" << fmt(r.report.precisions[k]) << "\n";
  m << "brevity_penalty=" << fmt(r.report.brevity_penalty) << "\n"
    << "candidate_tokens=" << r.report.cand_len << "\n"
    << "reference_tokens=" << r.report.ref_len << "\n";
  write_text(r.report_path, m.str());
  return r;
}

template <typename S>
ConsistencyResult run_consistency(const ExperimentConfig& cfg,
                                  const std::string& checkpoint,
                                  const std::string& out_dir, Precision prec) {
  LoadedData data = load_tokenizer(cfg);
  const auto pairs =
      load_pairs(cfg, "data.test_src", "data.test_tgt", data.tok, data.vocab);
  const Side side = side_of(cfg);
  const ConditioningMode mode = mode_of(cfg);
  const double mask_rate = rate_of(cfg, "cmlm.mask_rate", 0.15);
  const TransformerConfig lc = model_config(cfg, "cmlm.", data.vocab.size());

  const CmlmModel<S> model = load_cmlm<S>(checkpoint, lc, side, mode);
  ConsistencyResult r;
  r.report = consistency_accuracy(model, pairs, side, mode, mask_rate, seed_of(cfg));
  r.report_path = join(out_dir, kReportFile);

  std::ostringstream m;
  m << header("consistency-check", cfg) << "precision=" << precision_name(prec) << "\n"
    << "side=" << side_name(side) << "\n"
    << "mode=" << mode_name(mode) << "\n"
    << "mask_rate=" << fmt(mask_rate) << "\n"
    << "correct=" << r.report.correct << "\n"
    << "total=" << r.report.total << "\n"
    << "accuracy=" << fmt(r.report.accuracy) << "\n";
  write_text(r.report_path, m.str());
  return r;
}

std::vector<std::vector<std::string>> tokenized_lines(const std::string& path) {
  std::vector<std::vector<std::string>> out;
  for (const auto& line : read_lines(path)) out.push_back(split_ws(line));
  return out;
}

}  // namespace

std::string experiment_digest(const ExperimentConfig& cfg) {
  ExperimentConfig core;
  for (const auto& [k, v] : cfg.entries()) {
    bool is_volatile = false;
    for (const char* vk : kVolatileKeys)
      if (k == vk) is_volatile = true;
    if (!is_volatile) core.set(k, v);
  }
  return core.digest();
}

PrepareResult cmd_prepare_data(const ExperimentConfig& cfg, const std::string& out_dir) {
  ensure_out_dir(out_dir);
  const std::string src = cfg.require_str("data.src");
  const std::string tgt = cfg.require_str("data.tgt");
  const long num_merges = cfg.get_long("data.num_merges", 200);
  if (num_merges < 0)
    throw DataError("config key 'data.num_merges': must be nonnegative, got " +
                    std::to_string(num_merges));
  const long min_freq = positive_long(cfg, "data.min_freq", 1);

  const auto raw = read_parallel_corpus(src, tgt);
  if (raw.empty()) throw DataError("parallel corpus is empty: " + src);

  std::vector<std::string> lines;
  lines.reserve(raw.size() * 2);
  for (const auto& p : raw) lines.push_back(p.src);
  for (const auto& p : raw) lines.push_back(p.tgt);
  const MergeTable table = learn_bpe(lines, static_cast<int>(num_merges));
  BpeTokenizer tok(table);

  std::vector<std::vector<std::string>> sentences;
  std::vector<std::string> src_tok, tgt_tok;
  sentences.reserve(raw.size() * 2);
  src_tok.reserve(raw.size());
  tgt_tok.reserve(raw.size());
  auto tok_line = [&](const std::string& line) {
    sentences.push_back(tok.tokenize(line));
    std::string joined;
    for (std::size_t k = 0; k < sentences.back().size(); ++k) {
      if (k) joined += ' ';
      joined += sentences.back()[k];
    }
    return joined;
  };
  for (const auto& p : raw) src_tok.push_back(tok_line(p.src));
  for (const auto& p : raw) tgt_tok.push_back(tok_line(p.tgt));
  const Vocab vocab = Vocab::build(sentences, min_freq);

  PrepareResult r;
  r.merges_path = join(out_dir, kMergesFile);
  r.vocab_path = join(out_dir, kVocabFile);
  r.src_tok_path = join(out_dir, kSrcTokFile);
  r.tgt_tok_path = join(out_dir, kTgtTokFile);
  r.report_path = join(out_dir, kReportFile);
  r.vocab_size = vocab.size();
  r.pairs = static_cast<long>(raw.size());
  save_merges(r.merges_path, table);
  save_vocab(r.vocab_path, vocab);
  write_lines(r.src_tok_path, src_tok);
  write_lines(r.tgt_tok_path, tgt_tok);

  std::ostringstream m;
  m << header("prepare-data", cfg) << "pairs=" << r.pairs << "\n"
    << "requested_merges=" << num_merges << "\n"
    << "learned_merges=" << table.merges.size() << "\n"
    << "min_freq=" << min_freq << "\n"
    << "vocab_size=" << r.vocab_size << "\n";
  write_text(r.report_path, m.str());
  return r;
}

TrainCmlmResult cmd_train_cmlm(const ExperimentConfig& cfg, const std::string& out_dir) {
  ensure_out_dir(out_dir);
  const Precision p = precision_of(cfg);
  return p == Precision::F64 ? run_train_cmlm<double>(cfg, out_dir, p)
                             : run_train_cmlm<float>(cfg, out_dir, p);
}

TrainNmtResult cmd_train_nmt(const ExperimentConfig& cfg, const std::string& out_dir) {
  ensure_out_dir(out_dir);
  const Precision p = precision_of(cfg);
  return p == Precision::F64 ? run_train_nmt<double>(cfg, out_dir, p)
                             : run_train_nmt<float>(cfg, out_dir, p);
}

EvaluateResult cmd_evaluate(const ExperimentConfig& cfg, const std::string& checkpoint,
                            const std::string& out_dir) {
  ensure_out_dir(out_dir);
  const Precision p = precision_of(cfg);
  return p == Precision::F64 ? run_evaluate<double>(cfg, checkpoint, out_dir, p)
                             : run_evaluate<float>(cfg, checkpoint, out_dir, p);
}

ConsistencyResult cmd_consistency_check(const ExperimentConfig& cfg,
                                        const std::string& checkpoint,
                                        const std::string& out_dir) {
  ensure_out_dir(out_dir);
  const Precision p = precision_of(cfg);
  return p == Precision::F64 ? run_consistency<double>(cfg, checkpoint, out_dir, p)
                             : run_consistency<float>(cfg, checkpoint, out_dir, p);
}

SignificanceResult cmd_significance(const ExperimentConfig& cfg,
                                    const std::string& hyp_a_path,
                                    const std::string& hyp_b_path,
                                    const std::string& refs_path,
                                    const std::string& out_dir) {
  ensure_out_dir(out_dir);
  const auto a = tokenized_lines(hyp_a_path);
  const auto b = tokenized_lines(hyp_b_path);
  const auto refs = tokenized_lines(refs_path);
  if (a.size() != refs.size() || b.size() != refs.size())
    throw DataError("hypothesis/reference line counts differ: " + hyp_a_path + " has " +
                    std::to_string(a.size()) + ", " + hyp_b_path + " has " +
                    std::to_string(b.size()) + ", " + refs_path + " has " +
                    std::to_string(refs.size()));
  const long resamples = positive_long(cfg, "eval.resamples", 1000);

  SignificanceResult r;
  r.report = paired_bootstrap(a, b, refs, resamples, seed_of(cfg));
  r.report_path = join(out_dir, kReportFile);

  std::ostringstream m;
  m << header("significance", cfg) << "sentences=" << refs.size() << "\n"
    << "resamples=" << r.report.resamples << "\n"
    << "bleu_a=" << fmt(r.report.bleu_a) << "\n"
    << "bleu_b=" << fmt(r.report.bleu_b) << "\n"
    << "delta=" << fmt(r.report.delta) << "\n"
    << "p_value=" << fmt(r.report.p_value) << "\n";
  write_text(r.report_path, m.str());
  return r;
}

SweepResult cmd_sweep_gamma(const ExperimentConfig& cfg, const std::string& out_dir) {
  ensure_out_dir(out_dir);
  const std::string list = cfg.get_str("da.gammas", "0,0.15,0.25,0.35,0.5");
  std::vector<std::string> pieces;
  std::string cur;
  for (char c : list + ",") {
    if (c == ',') {
      std::size_t lo = cur.find_first_not_of(" \t");
      std::size_t hi = cur.find_last_not_of(" \t");
      if (lo != std::string::npos) pieces.push_back(cur.substr(lo, hi - lo + 1));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (pieces.empty())
    throw DataError("config key 'da.gammas': expected comma-separated values, got '" +
                    list + "'");

  SweepResult r;
  std::ostringstream table;
  table << header("sweep-gamma", cfg) << "gamma\tbleu\n";
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    char* end = nullptr;
    const double g = std::strtod(pieces[i].c_str(), &end);
    if (end == pieces[i].c_str() || *end != '\0' || !(g >= 0.0 && g <= 1.0))
      throw DataError("config key 'da.gammas': expected values in [0, 1], got '" +
                      pieces[i] + "'");
    ExperimentConfig sub = cfg;
    sub.set("da.gamma", pieces[i]);
    const std::string trial_dir = join(out_dir, "gamma_" + std::to_string(i));
    const TrainNmtResult t = cmd_train_nmt(sub, trial_dir);
    const EvaluateResult e = cmd_evaluate(sub, t.checkpoint_path, trial_dir);
    r.rows.push_back({g, e.report.bleu});
    table << pieces[i] << "\t" << fmt(e.report.bleu) << "\n";
  }
  r.table_path = join(out_dir, kTableFile);
  write_text(r.table_path, table.str());
  return r;
}

}  // namespace cmda::commands
