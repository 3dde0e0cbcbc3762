// djscc: train, evaluate and compare multi-user D-JSCC runs.
#include <iostream>

#include "CLI11.hpp"
#include "djscc/error.hpp"
#include "djscc/experiment.hpp"

using namespace djscc;

namespace {

ExperimentConfig assemble(const std::string& config_path, const std::vector<std::string>& overrides) {
  ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
  for (const auto& o : overrides) apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

int run(int argc, char** argv) {
  CLI::App app{"Multi-user deep joint source-channel coding simulator"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress per-epoch progress");

  std::string config_path;
  std::vector<std::string> overrides;
  auto* train = app.add_subcommand("train", "Train the configured schedule");
  train->add_option("-c,--config", config_path, "Config file")->check(CLI::ExistingFile);
  train->add_option("-s,--set", overrides, "Override, section.key=value");
  bool then_eval = false;
  train->add_flag("--eval", then_eval, "Evaluate the final models afterwards");

  std::string run_dir;
  auto* eval = app.add_subcommand("eval", "Evaluate the final models of a run");
  eval->add_option("run", run_dir, "Run directory")->required();
  eval->add_option("-s,--set", overrides, "Override eval.* keys");

  auto* forget = app.add_subcommand("forgetting", "Forgetting matrix of an iterative run");
  forget->add_option("run", run_dir, "Iterative run directory (omit with --config to train one)");
  forget->add_option("-c,--config", config_path, "Config file")->check(CLI::ExistingFile);
  forget->add_option("-s,--set", overrides, "Override, section.key=value");

  std::vector<std::string> runs;
  std::string out_dir = "compare";
  auto* compare = app.add_subcommand("compare", "Pivot evaluations of several runs by schedule");
  compare->add_option("runs", runs, "Run directories")->required();
  compare->add_option("-o,--out", out_dir, "Report directory");

  auto* defaults = app.add_subcommand("print-defaults", "Print the default configuration");
  defaults->add_option("-s,--set", overrides, "Override, section.key=value");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  std::ostream* log = quiet ? nullptr : &std::cerr;

  if (*defaults) {
    ExperimentConfig cfg;
    for (const auto& o : overrides) apply_override(cfg, o);
    std::cout << format_config(cfg);
  } else if (*train) {
    const fs::path dir = cmd_train(assemble(config_path, overrides), log);
    if (then_eval) cmd_eval(dir, {}, log);
    std::cout << dir.string() << '\n';
  } else if (*eval) {
    cmd_eval(run_dir, overrides, log);
    std::cout << (fs::path(run_dir) / "eval.csv").string() << '\n';
  } else if (*forget) {
    fs::path dir = run_dir;
    if (dir.empty()) {
      if (config_path.empty() && overrides.empty()) throw ConfigError("forgetting needs a run directory or --config");
      ExperimentConfig cfg = assemble(config_path, overrides);
      cfg.train.schedule = Schedule::Iterative;
      cfg.snapshots = true;
      dir = cmd_train(cfg, log);
    }
    cmd_forgetting(dir, log);
    std::cout << (dir / "forgetting.csv").string() << '\n';
  } else if (*compare) {
    std::vector<fs::path> dirs(runs.begin(), runs.end());
    const fs::path out = resolve_output_dir(out_dir);
    cmd_compare(dirs, out);
    std::cout << (out / "compare_psnr.csv").string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
