#include <CLI11.hpp>

#include "lfi/cli/commands.hpp"

namespace {

using namespace lfi::cli;

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "run configuration (key = value file)");
  cmd->add_option("--seed", o.seed, "override the configured seed");
  cmd->add_option("--workers", o.workers, "worker threads; results do not depend on it")->check(CLI::PositiveNumber);
  cmd->add_option("--out", o.out, "output directory");
}

void add_observations(CLI::App* cmd, ObservationOptions& o) {
  cmd->add_option("--obs", o.obs_csv, "observations CSV, k rows of N_u values");
  cmd->add_option("--data", o.data, "dataset file; observations come from its test split");
  cmd->add_option("--index", o.index, "test-split case for --data");
  cmd->add_option("--steps", o.steps, "use only the first k timesteps");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Amortized likelihood-free inference with conditional normalizing flows"};
  app.require_subcommand(1);

  CommonOptions common;
  TrainOptions train;
  InferOptions infer;
  PredictOptions predict;
  EvaluateOptions evaluate;
  lfi::cli::SelfCheckOptions check;

  auto* gen = app.add_subcommand("generate", "simulate a training dataset");
  add_common(gen, common);

  auto* tr = app.add_subcommand("train", "train the summary network and flow");
  add_common(tr, common);
  tr->add_option("--data", train.data, "dataset file")->required();
  tr->add_flag("--resume", train.resume, "continue from state.nfts in the output directory");

  auto* inf = app.add_subcommand("infer", "draw posterior samples for one observation set");
  add_common(inf, common);
  inf->add_option("--model", infer.model, "model checkpoint")->required();
  add_observations(inf, infer.obs);
  inf->add_option("-n,--samples", infer.samples, "number of posterior samples");

  auto* pred = app.add_subcommand("predict", "posterior predictive bands at the sensors");
  add_common(pred, common);
  pred->add_option("--samples", predict.samples, "posterior samples file (samples.bin)");
  pred->add_option("--model", predict.model, "model checkpoint, sampled with the configured count");
  add_observations(pred, predict.obs);
  pred->add_option("--draws", predict.draws, "use only the first n samples");

  auto* ev = app.add_subcommand("evaluate", "error metrics and coverage against a reference field");
  add_common(ev, common);
  ev->add_option("--samples", evaluate.samples, "posterior samples file (samples.bin)")->required();
  ev->add_option("--reference", evaluate.reference_csv, "reference parameters CSV");
  ev->add_option("--data", evaluate.data, "dataset file; reference comes from its test split");
  ev->add_option("--index", evaluate.index, "test-split case for --data");

  auto* sc = app.add_subcommand("selfcheck", "numerical self-checks");
  sc->add_flag("--corrupt-weights", check.corrupt_weights, "negative control: perturb a weight mid round trip");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  return run_guarded([&] {
    if (gen->parsed()) cmd_generate(common);
    else if (tr->parsed()) cmd_train(common, train);
    else if (inf->parsed()) (void)cmd_infer(common, infer);
    else if (pred->parsed()) cmd_predict(common, predict);
    else if (ev->parsed()) (void)cmd_evaluate(common, evaluate);
    else if (sc->parsed()) return cmd_selfcheck(check) ? 0 : 1;
    return 0;
  });
}
