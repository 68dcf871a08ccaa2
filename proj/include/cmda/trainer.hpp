#pragma once

#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cmda/augment.hpp"
#include "cmda/eval.hpp"

namespace cmda {

enum class DaMode { None, Soft, Hard, Swap, Drop, Blank, Smooth };

inline DaMode parse_da_mode(const std::string& s) {
  if (s == "none") return DaMode::None;
  if (s == "soft") return DaMode::Soft;
  if (s == "hard") return DaMode::Hard;
  if (s == "swap") return DaMode::Swap;
  if (s == "drop") return DaMode::Drop;
  if (s == "blank") return DaMode::Blank;
  if (s == "smooth") return DaMode::Smooth;
  throw DataError("unknown augmentation mode '" + s +
                  "' (expected none|soft|hard|swap|drop|blank|smooth)");
}

struct DaConfig {
  DaMode mode = DaMode::None;
  double gamma = 0.25;  // per-token substitution probability (soft/hard)
  double param = 0;     // swap window size, or corruption probability
  bool on_source = true;
  bool on_target = true;
};

struct TrainConfig {
  Index batch_size = 8;
  long max_steps = 200;
  long warmup = 40;
  double lr_scale = 1.0;
  std::uint64_t seed = 1;
  long log_every = 10;
  long val_every = 0;
  long checkpoint_every = 0;
  std::string checkpoint_path;
  std::string config_digest;
  DecodeConfig val_decode{1, 24};
};

struct StepRecord {
  long step = 0;
  double loss = 0;
  double lr = 0;
  double val_bleu = -1;  // negative when no validation ran this step
};

struct TrainResult {
  std::vector<StepRecord> records;
  long steps = 0;
  double final_loss = 0;
};

template <typename S>
void save_train_state(const std::string& path, const NmtModel<S>& model,
                      const AdamState<S>& adam, long step,
                      const std::string& digest) {
  CheckpointMeta meta;
  meta.vocab_size = static_cast<std::uint64_t>(model.cfg.vocab_size);
  meta.flags = 0;
  meta.config_digest = digest;
  std::vector<std::pair<std::string, Tensor<S>>> tensors;
  for (Index i = 0; i < model.params.size(); ++i) {
    tensors.emplace_back(model.params.name(i), model.params.tensor(i));
    tensors.emplace_back("adam.m." + model.params.name(i),
                         adam.m[static_cast<std::size_t>(i)]);
    tensors.emplace_back("adam.v." + model.params.name(i),
                         adam.v[static_cast<std::size_t>(i)]);
  }
  tensors.emplace_back("meta.step",
                       Tensor<S>({Index(1)}, {static_cast<S>(step)}));
  tensors.emplace_back("meta.adam_t",
                       Tensor<S>({Index(1)}, {static_cast<S>(adam.t)}));
  save_checkpoint(path, meta, tensors);
}

// Restores parameters and optimizer moments in place and returns the step
// the checkpoint was taken at. The stored digest must match: a checkpoint
// written under a different configuration is rejected.
template <typename S>
long load_train_state(const std::string& path, NmtModel<S>& model,
                      AdamState<S>& adam, const std::string& expect_digest) {
  CheckpointData<S> ck = load_checkpoint<S>(path);
  if (ck.meta.flags & kFlagMaskedLm)
    throw DataError("checkpoint holds a masked LM, not a translation model: " + path);
  if (ck.meta.vocab_size != static_cast<std::uint64_t>(model.cfg.vocab_size))
    throw DataError("checkpoint vocab size " + std::to_string(ck.meta.vocab_size) +
                    " does not match configured " +
                    std::to_string(model.cfg.vocab_size) + ": " + path);
  if (!expect_digest.empty() && ck.meta.config_digest != expect_digest)
    throw DataError("checkpoint configuration digest " + ck.meta.config_digest +
                    " does not match current " + expect_digest + ": " + path);
  auto take = [&](const std::string& name) -> const Tensor<S>& {
    const Tensor<S>* t = ck.find(name);
    if (!t) throw DataError("checkpoint missing tensor " + name + ": " + path);
    return *t;
  };
  for (Index i = 0; i < model.params.size(); ++i) {
    const std::string& name = model.params.name(i);
    const Tensor<S>& t = take(name);
    if (!t.same_shape(model.params.tensor(i)))
      throw DataError("checkpoint parameter " + name + " has shape " +
                      shape_str(t.shape()) + ", expected " +
                      shape_str(model.params.tensor(i).shape()) + ": " + path);
    model.params.tensor(i) = t;
    adam.m[static_cast<std::size_t>(i)] = take("adam.m." + name);
    adam.v[static_cast<std::size_t>(i)] = take("adam.v." + name);
  }
  adam.t = static_cast<long>(take("meta.adam_t")[0]);
  return static_cast<long>(take("meta.step")[0]);
}

namespace detail {

inline std::string metrics_line(const StepRecord& r) {
  std::ostringstream os;
  os << "step=" << r.step << " loss=" << std::setprecision(6) << std::fixed << r.loss
     << " lr=" << std::setprecision(8) << std::fixed << r.lr;
  if (r.val_bleu >= 0)
    os << " val_bleu=" << std::setprecision(2) << std::fixed << r.val_bleu;
  return os.str();
}

inline NoiseSpec noise_spec(const DaConfig& da) {
  NoiseSpec spec;
  spec.param = da.param;
  switch (da.mode) {
    case DaMode::Swap: spec.kind = NoiseSpec::Kind::Swap; break;
    case DaMode::Drop: spec.kind = NoiseSpec::Kind::Drop; break;
    case DaMode::Blank: spec.kind = NoiseSpec::Kind::Blank; break;
    case DaMode::Smooth: spec.kind = NoiseSpec::Kind::Smooth; break;
    default: spec.kind = NoiseSpec::Kind::None; break;
  }
  return spec;
}

}  // namespace detail

// One training run, resumable at any step boundary. Epoch data order,
// per-step dropout, gating and corruption draws are all pure functions of
// (seed, epoch or step), so a run resumed from a checkpoint retraces
// exactly the batches and masks the uninterrupted run would have seen.
//
// Soft mode never materializes synthetic sentences: gated positions get
// mixture embeddings built from frozen masked-LM predictions inside the
// tape, so gradients reach the embedding matrix but not the masked LMs.
// Hard and corruption baselines instead rewrite token ids once per epoch.
template <typename S>
TrainResult train_nmt(NmtModel<S>& model, AdamState<S>& adam,
                      const std::vector<TokenizedPair>& pairs, const Vocab& vocab,
                      const TrainConfig& tc, const DaConfig& da,
                      const CmlmModel<S>* lm_src, const CmlmModel<S>* lm_tgt,
                      const std::vector<TokenizedPair>* val_pairs = nullptr,
                      std::ostream* log = nullptr, long start_step = 0) {
  const Index n = static_cast<Index>(pairs.size());
  if (n == 0) throw DataError("training set is empty");
  if (da.mode == DaMode::Soft || da.mode == DaMode::Hard) {
    if (da.on_source && !lm_src)
      throw DataError("source-side substitution requested without a source masked LM");
    if (da.on_target && !lm_tgt)
      throw DataError("target-side substitution requested without a target masked LM");
  }
  const long batches_per_epoch = static_cast<long>((n + tc.batch_size - 1) / tc.batch_size);
  const Index d = model.cfg.d_model;
  const Index v = static_cast<Index>(model.cfg.vocab_size);

  TrainResult res;
  long step = start_step;
  while (step < tc.max_steps) {
    const long epoch = step / batches_per_epoch;
    const long skip = step % batches_per_epoch;

    std::vector<TokenizedPair> rewritten;
    const std::vector<TokenizedPair>* working = &pairs;
    if (da.mode == DaMode::Hard && da.gamma > 0) {
      rewritten = hard_substitute(pairs, da.on_source ? lm_src : nullptr,
                                  da.on_target ? lm_tgt : nullptr, da.gamma, tc.seed,
                                  static_cast<std::uint64_t>(epoch));
      working = &rewritten;
    } else if (da.mode != DaMode::None && da.mode != DaMode::Soft &&
               da.mode != DaMode::Hard) {
      rewritten = noise_pairs(pairs, detail::noise_spec(da), model.cfg.vocab_size,
                              tc.seed, static_cast<std::uint64_t>(epoch));
      working = &rewritten;
    }

    const auto order = batch_order(n, tc.batch_size, tc.seed,
                                   static_cast<std::uint64_t>(epoch));
    for (std::size_t k = static_cast<std::size_t>(skip);
         k < order.size() && step < tc.max_steps; ++k) {
      ++step;
      const PaddedBatch b = make_batch(*working, order[k]);

      Graph<S> g;
      g.opts.training = true;
      g.opts.seed = tc.seed;
      g.opts.step = static_cast<std::uint64_t>(step);
      Bound<S> bound = bind(g, model.params, model.cfg, true);
      TagGen tag;

      Var<S> src_ov, tgt_ov;
      if (da.mode == DaMode::Soft && da.gamma > 0) {
        if (da.on_source) {
          auto plan = plan_soft_substitution(*lm_src, b, Side::Source, da.gamma,
                                             tc.seed, static_cast<std::uint64_t>(step));
          if (!plan.empty()) {
            Var<S> e = gather_rows(bound.at("embed"), b.x);
            e = apply_plan(e, bound.at("embed"), plan);
            src_ov = reshape(e, {b.size, b.src_len, d});
          }
        }
        if (da.on_target) {
          auto plan = plan_soft_substitution(*lm_tgt, b, Side::Target, da.gamma,
                                             tc.seed, static_cast<std::uint64_t>(step));
          if (!plan.empty()) {
            Var<S> e = gather_rows(bound.at("embed"), shift_right(b));
            e = apply_plan(e, bound.at("embed"), plan);
            tgt_ov = reshape(e, {b.size, b.tgt_len, d});
          }
        }
      }

      Var<S> logits = nmt_forward(bound, b, tag, src_ov, tgt_ov);
      Var<S> loss = cross_entropy(reshape(logits, {b.size * b.tgt_len, v}), b.y,
                                  static_cast<S>(model.cfg.label_smoothing),
                                  Vocab::kPad);
      const double lv = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(lv))
        throw NumericError("loss non-finite at step " + std::to_string(step));
      g.backward(loss);

      std::vector<Tensor<S>> grads;
      grads.reserve(static_cast<std::size_t>(model.params.size()));
      for (const auto& pv : bound.vars) grads.push_back(pv.grad());
      const double lr = tc.lr_scale * lr_inverse_sqrt(step, tc.warmup, model.cfg.d_model);
      adam_step(model.params, grads, adam, static_cast<S>(lr));

      StepRecord rec{step, lv, lr, -1};
      if (tc.val_every > 0 && val_pairs && step % tc.val_every == 0)
        rec.val_bleu = model_bleu(model, *val_pairs, vocab, tc.val_decode);
      res.records.push_back(rec);
      res.final_loss = lv;
      if (log && (tc.log_every > 0 && (step % tc.log_every == 0 || rec.val_bleu >= 0)))
        (*log) << detail::metrics_line(rec) << "\n";
      if (tc.checkpoint_every > 0 && !tc.checkpoint_path.empty() &&
          step % tc.checkpoint_every == 0)
        save_train_state(tc.checkpoint_path, model, adam, step, tc.config_digest);
    }
  }
  res.steps = step;
  return res;
}

}  // namespace cmda
