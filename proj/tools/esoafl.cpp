// Command-line experiment runner.

#include <omp.h>

#include <CLI11.hpp>
#include <iostream>

#include "esoafl/errors.hpp"
#include "esoafl/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"ESOAFL simulator: federated training over a multi-bit over-the-air channel"};
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> task;
  std::optional<int> threads;
  bool dump = false;
  app.add_option("--config", config_path, "JSON experiment config (omit for all defaults)");
  app.add_option("--seed", seed, "root seed override");
  app.add_option("--out", out_dir, "output directory override");
  app.add_option("--task", task, "task override: train, sweep, fit, jcp, phy-check (comma-separated list allowed)");
  app.add_option("--threads", threads, "OpenMP worker count (0 keeps the runtime default)")->check(CLI::NonNegativeNumber);
  app.add_flag("--dump-constellation", dump, "write received symbol-mode samples to constellation.csv");
  CLI11_PARSE(app, argc, argv);

  using namespace esoafl;
  try {
    auto cfg = config_path.empty() ? experiment::parse_config("") : experiment::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (out_dir) cfg.output = *out_dir;
    if (threads) cfg.threads = *threads;
    if (dump) cfg.dump_constellation = true;
    if (task) {
      cfg.tasks.clear();
      std::stringstream ss(*task);
      std::string item;
      while (std::getline(ss, item, ',')) cfg.tasks.push_back(experiment::task_from_string(item));
    }
    experiment::finalize(cfg);
    if (cfg.threads > 0) omp_set_num_threads(cfg.threads);

    std::cerr << "config hash " << cfg.hash << ", seed " << cfg.seed << ", output " << cfg.output.string() << '\n';
    const auto report = experiment::run(cfg, std::cerr);
    for (const auto& note : report.notes) std::cerr << "note: " << note << '\n';
    return report.ok ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
