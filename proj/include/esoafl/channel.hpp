#pragma once

// Rayleigh-faded multi-access channel with truncated channel inversion and the
// over-the-air averaging operator built on it.
//
// Channel gains |h|^2 ~ Exponential(rate). A transmitter inverts its channel when
// the gain clears g_th, so each selected element arrives as sqrt(rho) * x; the
// receiver scales by 1 / (sqrt(rho) * p_b * K). Receiver noise therefore enters the
// average as n / sqrt(rho), i.e. with effective variance noise_var / rho.

#include <complex>
#include <span>
#include <vector>

#include "esoafl/rng.hpp"

namespace esoafl::channel {

enum class Mode {
  ideal,        // exact arithmetic mean, no fading, no noise
  statistical,  // per-element fading, selection and Gaussian noise
  symbol,       // statistical fading over QAM symbols (see modem)
};

struct ChannelConfig {
  double rate = 1.0;           // lambda; E|h|^2 = 1 / rate
  double noise_var = 0.0;      // sigma_z^2 at the receiver
  double tx_scale = 1.0;       // rho, received amplitude target is sqrt(rho)
  double power_budget = 0.2;   // P0 in watts
  Mode mode = Mode::statistical;

  [[nodiscard]] double effective_noise_var() const noexcept { return noise_var / tx_scale; }
};

void validate(const ChannelConfig& cfg);

/// Channel config with rho chosen so that p_b^max equals `max_probability` and the
/// per-element received SNR rho / sigma_z^2 equals `snr_db`.
ChannelConfig config_from_targets(double rate, double power_budget, double max_probability, double snr_db,
                                  Mode mode = Mode::statistical);

struct PowerPolicy {
  double threshold = 0.0;    // g_th
  double probability = 1.0;  // p_b = exp(-rate * g_th)
};

double probability_from_threshold(double threshold, double rate);
double threshold_from_probability(double probability, double rate);

/// Highest p_b the power budget allows: exp(-rate * rho / P0).
double max_probability(const ChannelConfig& cfg);

/// Policy for a target p_b, checked against the budget. Ideal mode accepts any p_b in (0, 1].
PowerPolicy make_policy(const ChannelConfig& cfg, double probability);

double draw_gain(double rate, rng::Stream& stream);

/// Complex coefficient with |h|^2 ~ Exponential(rate).
std::complex<double> draw_coefficient(double rate, rng::Stream& stream);

/// Truncated channel inversion: sqrt(rho) conj(h) / |h|^2 above threshold, else 0.
std::complex<double> tx_factor(std::complex<double> h, double threshold, double rho);

/// Arithmetic mean in client order. Shared by ideal transport and FedAvg so both are bit-identical.
std::vector<double> exact_mean(std::span<const std::vector<double>> inputs);

/// Over-the-air average of K equally sized inputs. Coordinate j uses gain draws
/// j*K + k of the "gain" substream of `key` and noise draw j of the "noise" substream.
/// Parallel over coordinates.
std::vector<double> air_aggregate(std::span<const std::vector<double>> inputs, const ChannelConfig& cfg,
                                  const PowerPolicy& policy, const rng::Key& key);

/// Serial reference for `air_aggregate`; bit-identical output.
std::vector<double> air_aggregate_reference(std::span<const std::vector<double>> inputs, const ChannelConfig& cfg,
                                            const PowerPolicy& policy, const rng::Key& key);

/// Closed-form per-coordinate variance of `air_aggregate`:
/// (1/K^2)(1/p_b - 1) sum_k x_k^2 + sigma_eff^2 / (K^2 p_b^2).
std::vector<double> air_variance(std::span<const std::vector<double>> inputs, double probability,
                                 const ChannelConfig& cfg);

}  // namespace esoafl::channel
