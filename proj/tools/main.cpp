#include <CLI11.hpp>

#include <iostream>

#include "app.hpp"
#include "illid/error.hpp"

int main(int argc, char** argv) {
  using namespace illid::app;
  CLI::App cli{"Inverse-Lipschitz latent variable models: training, evaluation and verification"};
  cli.require_subcommand(1);

  Options opt;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "RunConfig JSON file");
    sub->add_option("--out", opt.out, "Output directory (overrides out_dir)");
    sub->add_option("--seed", opt.seed, "Seed (overrides train.seed)");
    sub->add_option("--jobs", opt.jobs, "Parallel jobs")->check(CLI::PositiveNumber);
  };
  auto* train = cli.add_subcommand("train", "Train a model and write a run directory");
  auto* eval = cli.add_subcommand("eval", "Evaluate a checkpoint on held-out data");
  auto* verify = cli.add_subcommand("verify", "Run the numerical verification suite");
  auto* toy = cli.add_subcommand("toy-experiment", "Run the two-Gaussian grid over sigma, L and seeds");
  for (auto* sub : {train, eval, verify, toy}) add_common(sub);
  eval->add_option("--checkpoint", opt.checkpoint, "Checkpoint file (default <out>/model.ilvae)");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return cli.exit(e);
  } catch (const CLI::ParseError& e) {
    cli.exit(e);
    return config_error;
  }

  try {
    if (*train) return cmd_train(opt, std::cout, std::cerr);
    if (*eval) return cmd_eval(opt, std::cout, std::cerr);
    if (*verify) return cmd_verify(opt, std::cout, std::cerr);
    return cmd_toy_experiment(opt, std::cout, std::cerr);
  } catch (const illid::ConfigError& e) {
    std::cerr << "config error at " << (e.pointer().empty() ? "/" : e.pointer()) << ": " << e.what() << '\n';
    return config_error;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return failure;
  }
}
