#pragma once

// Experiment runner behind the command-line tool: a JSON config with defaults for every
// field, the train / sweep / fit / jcp / phy-check tasks, and their CSV and JSON outputs.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "esoafl/channel.hpp"
#include "esoafl/convergence.hpp"
#include "esoafl/energy.hpp"
#include "esoafl/fl.hpp"
#include "esoafl/jcp.hpp"

namespace esoafl::experiment {

enum class Task { train, sweep, fit, jcp, phy_check };

std::string to_string(Task t);
Task task_from_string(const std::string& s);

/// Channel described by its operating targets rather than raw constants.
struct ChannelTargets {
  double rate = 1.0;
  double power_budget = 0.2;
  double max_probability = 0.77;
  double snr_db = 15.0;
  channel::Mode mode = channel::Mode::statistical;
};

struct SweepSettings {
  // H spans the optimiser's range so the fit sees where extra local steps stop paying off.
  std::vector<int> local_iterations{1, 2, 4, 8, 16, 32};
  std::vector<double> probabilities{0.1, 0.25, 0.45, 0.77};
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

struct FitSettings {
  std::optional<double> q;       // estimated from the quantizer when absent
  std::size_t q_trials = 10000;
  convergence::FitWeighting weighting = convergence::FitWeighting::relative;
};

struct JcpSettings {
  std::optional<convergence::RoundModelConstants> constants;  // otherwise taken from the fit
  jcp::JcpOptions options;
  double p_min = 1e-4;
  int h_min = 1;
  int h_max = 50;
  double grid_step = 0.001;
};

struct PhySettings {
  std::size_t trials = 20000;
};

struct ExperimentConfig {
  std::vector<Task> tasks{Task::train};
  std::uint64_t seed = 1;
  std::filesystem::path output = "out";
  int threads = 0;  // 0 keeps the OpenMP default
  fl::FlConfig fl;
  fl::TaskSpec data;
  ChannelTargets channel;
  std::string profile = "small-learner";
  std::map<std::string, energy::EnergyProfile> profiles;  // built-ins plus any from the file
  fl::LinkParams link;
  SweepSettings sweep;
  FitSettings fit;
  JcpSettings jcp;
  PhySettings phy;
  bool dump_constellation = false;

  /// Hex FNV-1a hash of the effective configuration.
  std::string hash;
};

/// Parses JSON text (empty text means all defaults). Unknown keys and out-of-domain
/// values raise ConfigError naming the field.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Re-validates after command-line overrides and refreshes the hash.
void finalize(ExperimentConfig& cfg);

/// Effective configuration as JSON text (what the hash covers).
std::string effective_json(const ExperimentConfig& cfg);

fl::Environment make_environment(const ExperimentConfig& cfg);

/// JCP instance for the configured energy profile and round-model constants.
jcp::JcpProblem make_jcp_problem(const ExperimentConfig& cfg, const convergence::RoundModelConstants& c);

/// Quantizer constant q for the configured bit width, clients and model dimension.
double estimate_q(const ExperimentConfig& cfg);

struct RunReport {
  bool ok = true;
  std::vector<std::string> notes;
};

/// Runs every requested task in order, writing into cfg.output. Later tasks reuse earlier
/// results from the same run, falling back to files left in the output directory.
RunReport run(const ExperimentConfig& cfg, std::ostream& log);

// CSV helpers, exposed for tests.
void write_samples_csv(const std::filesystem::path& path, const std::vector<convergence::RoundSample>& samples,
                       const std::string& header);
std::vector<convergence::RoundSample> read_samples_csv(const std::filesystem::path& path);

}  // namespace esoafl::experiment
