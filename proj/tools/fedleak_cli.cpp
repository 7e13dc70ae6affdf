// fedleak: gradient-leakage laboratory for adapter-based federated
// fine-tuning of a frozen toy transformer.
//
// Verbs: attack, defense-sweep, hparam-sweep, capacity.
// Exit codes: 0 success, 1 configuration error, 2 runtime error.

#include <CLI11.hpp>
#include <iostream>

#include "fedleak/experiment.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::size_t> threads;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config file (JSON)")->required();
  cmd->add_option("--override", args.overrides, "config override, key.path=value (repeatable)");
  cmd->add_option("--seed", args.seed, "override the experiment seed");
  cmd->add_option("--out", args.out_dir, "override the output directory");
  cmd->add_option("--threads", args.threads, "worker threads (0 = hardware)");
}

fedleak::ExperimentConfig resolve(const CommonArgs& args) {
  fedleak::Json j = fedleak::load_config_json(args.config_path);
  for (const std::string& ov : args.overrides) fedleak::apply_override(j, ov);
  fedleak::ExperimentConfig cfg = fedleak::experiment_config_from_json(j);
  if (args.seed) cfg.seed = *args.seed;
  if (args.out_dir) cfg.output_dir = *args.out_dir;
  if (args.threads) cfg.threads = *args.threads;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gradient-leakage laboratory for adapter-based federated fine-tuning"};
  app.require_subcommand(1);

  CommonArgs attack_args, defense_args, hparam_args, capacity_args;
  CLI::App* attack = app.add_subcommand("attack", "batch-size x round attack grid with JSON + CSV reports");
  add_common(attack, attack_args);
  CLI::App* defense = app.add_subcommand("defense-sweep", "success rates across dp/pruning parameter grids");
  add_common(defense, defense_args);
  CLI::App* hparam =
      app.add_subcommand("hparam-sweep", "success across reduction factors and span tolerances");
  add_common(hparam, hparam_args);
  CLI::App* capacity = app.add_subcommand("capacity", "recoverable-token sweep across batch sizes");
  add_common(capacity, capacity_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (attack->parsed()) return fedleak::cmd_attack(resolve(attack_args));
    if (defense->parsed()) {
      fedleak::ExperimentConfig cfg = resolve(defense_args);
      return fedleak::cmd_defense_sweep(cfg, cfg.sweep.sigmas, cfg.sweep.prune_rates);
    }
    if (hparam->parsed()) {
      fedleak::ExperimentConfig cfg = resolve(hparam_args);
      return fedleak::cmd_hparam_sweep(cfg, cfg.sweep.reduction_factors, cfg.sweep.epsilons);
    }
    if (capacity->parsed()) return fedleak::cmd_capacity(resolve(capacity_args));
  } catch (const fedleak::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
