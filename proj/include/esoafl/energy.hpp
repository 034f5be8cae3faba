#pragma once

// Per-device energy accounting: truncated-inversion transmit power, QAM airtime,
// and a frequency/voltage GPU power-time model for local computation.

#include <cstddef>
#include <string>
#include <vector>

namespace esoafl::energy {

/// Exponential integral E1(x) = int_x^inf e^-t / t dt for x > 0.
/// Power series for x <= 1, modified Lentz continued fraction beyond.
double e1(double x);

/// Elementary upper bound e^-x ln(1 + 1/x) on E1.
double e1_upper_bound(double x);

struct CommParams {
  double rho = 0.0523;           // Tx scaling constant
  double rate = 1.0;             // Rayleigh gain rate lambda
  double symbol_time = 1.0 / 15e3;  // T_s, seconds
  double bandwidth = 15e3;       // sub-channel bandwidth, Hz (T_s * B = 1)
  double parallel_symbols = 12;  // M_s
  std::size_t dimension = 0;     // d, gradients per update
};

struct CompParams {
  double static_power = 0.6;  // P0_c, W
  double mem_coeff = 0.2;     // a, W/GHz
  double core_coeff = 0.405;  // b, W/(V^2 GHz)
  double mem_time = 0.00933;  // u, s*GHz
  double core_time = 0.0169;  // v, s*GHz
  double f_core = 1.3;        // GHz
  double v_core = 1.0;        // V
  double f_mem = 1.866;       // GHz
  double static_time = 0.002; // T0, s
};

/// Average transmit power under truncated inversion with transmission probability p_b.
/// exact: p_b rho lambda E1(-ln p_b); otherwise the elementary approximation
/// rho lambda p_b^2 ln(1 - 1/ln p_b). Rejects p_b outside (0, 1).
double comm_power(double probability, double rho, double rate, bool exact = true);

/// ceil(d/2) symbols (two gradients per QAM symbol), M_s in parallel.
double comm_time(std::size_t dimension, double parallel_symbols, double symbol_time);

double comm_energy(double probability, const CommParams& comm);

double comp_power(const CompParams& cp);
double comp_time(const CompParams& cp);
double comp_energy(const CompParams& cp);

/// E_comm(p_b) + H * E_comp; H = 0 gives the communication term alone.
double round_energy(double probability, int local_iterations, const CommParams& comm, const CompParams& cp);

/// Transmit energy of an orthogonal (non-AirComp) upload: `bits_per_value` bits per
/// coordinate at `bits_per_symbol` information bits per resource element, sent at `power`.
double orthogonal_upload_energy(std::size_t dimension, double bits_per_value, double bits_per_symbol, double power,
                                const CommParams& comm);

struct EnergyProfile {
  std::string name;
  CommParams comm;
  CompParams comp;
};

/// Built-in profiles: "small-learner" (~0.03 J per iteration, LeNet-5 sized payload) and
/// "large-learner" (~130 ms at ~4 W, ResNet-20 sized payload). Both use a 180 kHz LTE
/// resource block (12 x 15 kHz) and the channel constant rho for p_b^max = 0.77 at 0.2 W.
std::vector<EnergyProfile> builtin_profiles();
EnergyProfile builtin_profile(const std::string& name);

}  // namespace esoafl::energy
