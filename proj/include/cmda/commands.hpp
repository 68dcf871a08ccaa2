#pragma once

#include <string>
#include <vector>

#include "cmda/config.hpp"
#include "cmda/eval.hpp"

namespace cmda::commands {

// Shared implementations behind the command-line tool. Each command reads
// its inputs through an ExperimentConfig, writes its artifacts under a
// caller-chosen output directory, and returns the paths it wrote. Reports
// carry no timestamps and never embed the output directory, so re-running
// a command with the same config and seed yields byte-identical files
// wherever they land. Paths to produced artifacts (checkpoints, hypothesis
// files) are passed as arguments, not config keys, for the same reason.

// Digest of the experiment identity: every config key except the
// run-control toggles train.resume and train.stop_step, so a paused run,
// its resumption, and an uninterrupted run share one digest.
std::string experiment_digest(const ExperimentConfig& cfg);

struct PrepareResult {
  std::string merges_path, vocab_path, src_tok_path, tgt_tok_path, report_path;
  long vocab_size = 0;
  long pairs = 0;
};

// Learns byte-pair merges over both sides of the corpus, builds the joint
// vocabulary, and writes merges, vocab, tokenized corpus and a report.
PrepareResult cmd_prepare_data(const ExperimentConfig& cfg, const std::string& out_dir);

struct TrainCmlmResult {
  std::string checkpoint_path, metrics_path;
  long steps = 0;
  double final_loss = 0;
};

// Fine-tunes a masked LM for the configured side and conditioning mode.
TrainCmlmResult cmd_train_cmlm(const ExperimentConfig& cfg, const std::string& out_dir);

struct TrainNmtResult {
  std::string checkpoint_path, metrics_path;
  long steps = 0;
  double final_loss = 0;
};

// Trains the translation model under the configured augmentation mode.
// train.stop_step pauses the run after that step; train.resume continues
// from the checkpoint left in the output directory.
TrainNmtResult cmd_train_nmt(const ExperimentConfig& cfg, const std::string& out_dir);

struct EvaluateResult {
  std::string report_path, hyps_path;
  BleuReport report;
  long sentences = 0;
};

// Decodes the held-out corpus with the given translation checkpoint and
// scores it; hypotheses are written one detokenized sentence per line.
EvaluateResult cmd_evaluate(const ExperimentConfig& cfg, const std::string& checkpoint,
                            const std::string& out_dir);

struct ConsistencyResult {
  std::string report_path;
  ConsistencyReport report;
};

// Masks the held-out corpus and scores the masked LM's argmax predictions
// against the original tokens.
ConsistencyResult cmd_consistency_check(const ExperimentConfig& cfg,
                                        const std::string& checkpoint,
                                        const std::string& out_dir);

struct SignificanceResult {
  std::string report_path;
  BootstrapResult report;
};

// Paired bootstrap resampling over two hypothesis files against shared
// references, all whitespace-tokenized, one sentence per line.
SignificanceResult cmd_significance(const ExperimentConfig& cfg,
                                    const std::string& hyp_a_path,
                                    const std::string& hyp_b_path,
                                    const std::string& refs_path,
                                    const std::string& out_dir);

struct SweepRow {
  double gamma = 0;
  double bleu = 0;
};

struct SweepResult {
  std::string table_path;
  std::vector<SweepRow> rows;
};

// Trains and evaluates one run per value in da.gammas (comma-separated),
// each in its own subdirectory, and writes a gamma/BLEU table.
SweepResult cmd_sweep_gamma(const ExperimentConfig& cfg, const std::string& out_dir);

}  // namespace cmda::commands
