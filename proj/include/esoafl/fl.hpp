#pragma once

// Federated training loop: H local SGD steps per client, quantization onto a shared
// grid, over-the-air averaging and the server update, plus the FedAvg and FedPAQ
// baselines that ship updates over orthogonal links.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "esoafl/channel.hpp"
#include "esoafl/convergence.hpp"
#include "esoafl/energy.hpp"
#include "esoafl/learnkit.hpp"
#include "esoafl/modem.hpp"
#include "esoafl/rng.hpp"

namespace esoafl::fl {

enum class Scheme { esoafl, fedavg, fedpaq };
enum class StopRule { loss, grad_norm };

std::string to_string(Scheme s);
Scheme scheme_from_string(const std::string& s);

struct FlConfig {
  int clients = 10;           // K
  int local_iterations = 5;   // H
  int max_rounds = 400;       // R_max
  double lr = 0.2;            // eta
  double server_scale = 1.0;  // theta
  double lr_decay = 0.99;     // eta <- eta * decay after every round
  int bits = 4;
  bool full_precision = false;  // skip quantization (esoafl only)
  double probability = 0.5;     // p_b
  Scheme scheme = Scheme::esoafl;
  double target_loss = 0.175;   // epsilon; the default task bottoms out near 0.166
  StopRule stop_rule = StopRule::loss;
  std::uint64_t seed = 1;
};

/// Reference link for orthogonal baselines: 64QAM at code rate 0.8525, 5.115 bits per resource element.
struct LinkParams {
  double bits_per_symbol = 5.115;
  double value_bits = 32.0;  // FedAvg payload precision
  double tx_power = 0.2;     // W
};

struct Environment {
  channel::ChannelConfig channel;
  energy::CommParams comm;  // dimension is overridden with the model dimension
  energy::CompParams comp;
  LinkParams link;
};

/// Channel at 15 dB with p_b^max = 0.77 under a 0.2 W budget, small-learner compute profile.
Environment default_environment();

struct TaskSpec {
  learnkit::ModelKind model = learnkit::ModelKind::logistic;
  std::size_t hidden = 16;
  learnkit::SyntheticSpec data{2, 10, 5000, 3.0, 7};
  std::size_t n_test = 1000;
  double non_iid = 0.0;
  std::size_t batch_size = 32;
};

struct Federation {
  learnkit::Dataset train;
  learnkit::Dataset test;
  std::vector<learnkit::ClientShard> shards;
  std::vector<std::size_t> union_indices;  // rows held by some client
  learnkit::Architecture arch;
};

Federation build_federation(const TaskSpec& task, int clients, std::uint64_t seed);

struct RoundRecord {
  int round = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double comm_units = 0.0;  // spent in this round
  double energy_j = 0.0;    // cumulative, summed over clients
  double grad_norm_sq = 0.0;
};

struct TrainingTrace {
  std::vector<RoundRecord> rounds;  // round 0 is the initial model
  bool converged = false;
  int rounds_to_target = -1;
  learnkit::ModelParams final_params;
};

struct TrainingState {
  learnkit::ModelParams global;
  int round = 0;
  double lr = 0.0;
  double comm_units = 0.0;
  double energy_j = 0.0;
};

void validate(const FlConfig& cfg, const Environment& env);

/// eta * sum_h grad F_k(w^{h}) over H local steps started from `global`.
learnkit::GradientVector local_accumulate(const Federation& fed, const learnkit::ClientShard& shard,
                                          const learnkit::ModelParams& global, int local_iterations, double lr,
                                          rng::Stream batch_stream);

/// w - theta * aggregate.
learnkit::ModelParams global_update(const learnkit::ModelParams& w, std::span<const double> aggregate, double theta);

/// Resource units one client's upload costs relative to one AirComp round (ceil(d/2) symbols).
double payload_units(std::size_t dimension, double bits_per_value, const LinkParams& link);

/// Per-round comm units for the scheme: 1 for esoafl, K * payload_units otherwise.
double round_comm_units(const FlConfig& cfg, std::size_t dimension, const LinkParams& link);

/// Per-round energy summed over clients.
double round_energy(const FlConfig& cfg, std::size_t dimension, const Environment& env);

TrainingState initial_state(const Federation& fed, const FlConfig& cfg);

/// One round for every client; appends nothing, returns the record for the new state.
RoundRecord run_round(TrainingState& state, const Federation& fed, const FlConfig& cfg, const Environment& env,
                      std::vector<modem::Sample>* constellation = nullptr);

RoundRecord evaluate(const TrainingState& state, const Federation& fed);

/// Receives the superposed samples of every round in symbol mode.
using ConstellationSink = std::function<void(int round, const std::vector<modem::Sample>& received)>;

TrainingTrace run_training(const Federation& fed, const FlConfig& cfg, const Environment& env,
                           const ConstellationSink& sink = {});

struct SweepSpec {
  std::vector<int> local_iterations;
  std::vector<double> probabilities;
  std::vector<std::uint64_t> seeds;
};

/// First round reaching the target loss for every (H, p_b, seed) cell; cells that never
/// reach it report max_rounds + 1. Output sorted by (H, p_b, seed). Parallel over cells.
std::vector<convergence::RoundSample> round_sweep(const Federation& fed, const FlConfig& base, const Environment& env,
                                                  const SweepSpec& sweep);

}  // namespace esoafl::fl
