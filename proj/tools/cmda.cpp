#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cmda/commands.hpp"
#include "cmda/errors.hpp"

namespace {

struct SubArgs {
  std::string config_path;
  std::vector<std::string> sets;
  long seed = 1;
  CLI::Option* seed_opt = nullptr;
  std::string out = "out";
  std::string checkpoint;
  std::string hyp_a, hyp_b, refs;
};

// Precedence: config file, then --set overrides, then --seed.
cmda::ExperimentConfig load_config(const SubArgs& a) {
  cmda::ExperimentConfig cfg;
  if (!a.config_path.empty())
    cfg = cmda::ExperimentConfig::from_file(a.config_path);
  cfg.apply_overrides(a.sets);
  if (a.seed_opt && a.seed_opt->count() > 0)
    cfg.set("seed", std::to_string(a.seed));
  return cfg;
}

SubArgs& add_common(CLI::App* sub, std::vector<std::unique_ptr<SubArgs>>& store) {
  store.push_back(std::make_unique<SubArgs>());
  SubArgs& a = *store.back();
  sub->add_option("--config", a.config_path, "config file (key = value lines)");
  sub->add_option("--set", a.sets, "config override (repeatable)")->type_name("KEY=VALUE");
  a.seed_opt = sub->add_option("--seed", a.seed, "root random seed (overrides config)");
  sub->add_option("--out", a.out, "output directory (default: out)");
  return a;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"masked-LM driven data augmentation for a small transformer translator"};
  app.require_subcommand(1);
  std::vector<std::unique_ptr<SubArgs>> store;

  CLI::App* prep = app.add_subcommand(
      "prepare-data", "learn BPE merges and a joint vocab, tokenize the corpus");
  SubArgs& pa = add_common(prep, store);
  prep->callback([&pa] {
    const auto r = cmda::commands::cmd_prepare_data(load_config(pa), pa.out);
    std::cout << "pairs=" << r.pairs << " vocab_size=" << r.vocab_size
              << " merges=" << r.merges_path << " vocab=" << r.vocab_path << "\n";
  });

  CLI::App* tlm = app.add_subcommand(
      "train-cmlm", "fine-tune a masked LM on one side of the corpus");
  SubArgs& la = add_common(tlm, store);
  tlm->callback([&la] {
    const auto r = cmda::commands::cmd_train_cmlm(load_config(la), la.out);
    std::cout << "steps=" << r.steps << " final_loss=" << r.final_loss
              << " checkpoint=" << r.checkpoint_path << "\n";
  });

  CLI::App* tnm = app.add_subcommand(
      "train-nmt", "train the translation model under the configured augmentation");
  SubArgs& na = add_common(tnm, store);
  tnm->callback([&na] {
    const auto r = cmda::commands::cmd_train_nmt(load_config(na), na.out);
    std::cout << "steps=" << r.steps << " final_loss=" << r.final_loss
              << " checkpoint=" << r.checkpoint_path << "\n";
  });

  CLI::App* ev = app.add_subcommand(
      "evaluate", "decode a held-out corpus with a checkpoint and score it");
  SubArgs& ea = add_common(ev, store);
  ev->add_option("--checkpoint", ea.checkpoint, "translation model checkpoint")
      ->required();
  ev->callback([&ea] {
    const auto r = cmda::commands::cmd_evaluate(load_config(ea), ea.checkpoint, ea.out);
    std::cout << "bleu=" << r.report.bleu << " sentences=" << r.sentences
              << " report=" << r.report_path << "\n";
  });

  CLI::App* cc = app.add_subcommand(
      "consistency-check", "score masked-LM predictions against held-out tokens");
  SubArgs& ca = add_common(cc, store);
  cc->add_option("--checkpoint", ca.checkpoint, "masked LM checkpoint")->required();
  cc->callback([&ca] {
    const auto r =
        cmda::commands::cmd_consistency_check(load_config(ca), ca.checkpoint, ca.out);
    std::cout << "accuracy=" << r.report.accuracy << " (" << r.report.correct << "/"
              << r.report.total << ") report=" << r.report_path << "\n";
  });

  CLI::App* sg = app.add_subcommand(
      "significance", "paired bootstrap test between two hypothesis files");
  SubArgs& sa = add_common(sg, store);
  sg->add_option("--hyp-a", sa.hyp_a, "hypotheses of system A")->required();
  sg->add_option("--hyp-b", sa.hyp_b, "hypotheses of system B")->required();
  sg->add_option("--refs", sa.refs, "shared references")->required();
  sg->callback([&sa] {
    const auto r = cmda::commands::cmd_significance(load_config(sa), sa.hyp_a, sa.hyp_b,
                                                    sa.refs, sa.out);
    std::cout << "bleu_a=" << r.report.bleu_a << " bleu_b=" << r.report.bleu_b
              << " delta=" << r.report.delta << " p_value=" << r.report.p_value
              << " report=" << r.report_path << "\n";
  });

  CLI::App* sw = app.add_subcommand(
      "sweep-gamma", "train and evaluate one run per substitution probability");
  SubArgs& wa = add_common(sw, store);
  sw->callback([&wa] {
    const auto r = cmda::commands::cmd_sweep_gamma(load_config(wa), wa.out);
    std::cout << "rows=" << r.rows.size() << " table=" << r.table_path << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const cmda::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const cmda::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const cmda::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
