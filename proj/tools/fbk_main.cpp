// Command-line front end: gradient checking, oracle comparison, training,
// evaluation, benchmarking and ablation presets over one shared config
// surface.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fbk/commands.hpp"

using fbk::commands::CommandContext;

int main(int argc, char** argv) {
  CLI::App app{"factorized bilinear layer toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::int64_t seed = -1;
  std::size_t threads = 1;

  app.add_option("--config", config_path, "key = value config file");
  app.add_option("--set", overrides, "config override key=value (repeatable)");
  app.add_option("--seed", seed, "root random seed (overrides config)");
  app.add_option("--out", out_dir, "output directory for report.json / metrics / checkpoints");
  app.add_option("--threads", threads, "evaluation worker threads");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  auto* oracle = app.add_subcommand("oracle-compare", "fast kernels vs brute-force references");
  auto* train = app.add_subcommand("train", "train a preset on a dataset");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* bench = app.add_subcommand("bench", "parameter formulas and runtime scaling");
  auto* ablate = app.add_subcommand("ablate", "ablation table presets");
  for (auto* sub : {gradcheck, oracle, train, eval, bench, ablate}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return fbk::commands::kConfigError;
  }

  try {
    CommandContext ctx;
    if (!config_path.empty()) ctx.config = fbk::Config::from_file(config_path);
    for (const auto& pair : overrides) ctx.config.set_pair(pair);
    if (seed >= 0) ctx.config.set("seed", std::to_string(seed));
    ctx.out_dir = out_dir;
    ctx.threads = threads > 0 ? threads : 1;
    if (const char* dir = std::getenv("FBK_DATA_DIR")) ctx.data_dir = dir;
    if (ctx.config.has("data_dir")) ctx.data_dir = ctx.config.get_string("data_dir", "");

    if (gradcheck->parsed()) return fbk::commands::cmd_gradcheck(ctx);
    if (oracle->parsed()) return fbk::commands::cmd_oracle_compare(ctx);
    if (train->parsed()) return fbk::commands::cmd_train(ctx);
    if (eval->parsed()) return fbk::commands::cmd_eval(ctx);
    if (bench->parsed()) return fbk::commands::cmd_bench(ctx);
    if (ablate->parsed()) return fbk::commands::cmd_ablate(ctx);
    return fbk::commands::kConfigError;
  } catch (const fbk::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return fbk::commands::kConfigError;
  } catch (const fbk::io_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return fbk::commands::kIoError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return fbk::commands::kVerificationFailure;
  }
}
