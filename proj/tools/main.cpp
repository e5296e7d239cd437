#include <cstdlib>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "gatecross/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{
      "gatecross: differentiable-MPC gate traversal — training, evaluation,"
      " replay, and gradient audits"};
  app.require_subcommand(1);

  gatecross::CliOptions opts;
  std::uint64_t seed_arg = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", opts.config_path,
                    "JSON configuration file (defaults apply when omitted)");
    cmd->add_option("--seed", seed_arg, "Override the random seed");
    cmd->add_option("--threads", opts.threads,
                    "Override the worker thread count");
    cmd->add_option("--out", opts.out_dir, "Output directory (default: out)");
  };

  CLI::App* c_train = app.add_subcommand("train", "Train the gate policy");
  add_common(c_train);

  CLI::App* c_eval =
      app.add_subcommand("eval", "Evaluate a checkpoint on fresh scenarios");
  add_common(c_eval);
  c_eval->add_option("--checkpoint", opts.checkpoint, "Policy checkpoint");
  c_eval->add_option("--trials", opts.trials, "Number of evaluation episodes");
  c_eval->add_flag("--baseline", opts.baseline,
                   "Evaluate the gate-aligned baseline instead");

  CLI::App* c_replay =
      app.add_subcommand("replay", "Re-run one scenario and dump a CSV trace");
  add_common(c_replay);
  c_replay->add_option("--checkpoint", opts.checkpoint, "Policy checkpoint");
  c_replay->add_option("--scenario", opts.scenario_path,
                       "Scenario JSON file")->required();
  c_replay->add_option("--output", opts.output_csv,
                       "Trace CSV path (default: <out>/replay.csv)");
  c_replay->add_flag("--baseline", opts.baseline,
                     "Replay the gate-aligned baseline instead");

  CLI::App* c_audit = app.add_subcommand(
      "audit-grads", "Finite-difference audit of all analytic gradients");
  add_common(c_audit);
  c_audit->add_option("--suite", opts.suite,
                      "Run one suite: dynamics, ocp_sensitivity, envelope,"
                      " policy, end_to_end");
  c_audit->add_option("--instances", opts.instances,
                      "Instances per suite (default: 100)");

  CLI11_PARSE(app, argc, argv);

  for (CLI::App* cmd : {c_train, c_eval, c_replay, c_audit}) {
    if (cmd->parsed() && cmd->count("--seed") > 0) opts.seed_set = true;
    if (cmd->parsed() && cmd->count("--out") == 0) {
      if (const char* env_out = std::getenv("GATECROSS_OUT"))
        opts.out_dir = env_out;
    }
  }
  opts.seed = seed_arg;

  try {
    if (c_train->parsed()) return gatecross::cmd_train(opts);
    if (c_eval->parsed()) return gatecross::cmd_eval(opts);
    if (c_replay->parsed()) return gatecross::cmd_replay(opts);
    if (c_audit->parsed()) return gatecross::cmd_audit_grads(opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
