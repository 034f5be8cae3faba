#include "esoafl/channel.hpp"

#include <cmath>

#include "esoafl/errors.hpp"

namespace esoafl::channel {

namespace {

void check_inputs(std::span<const std::vector<double>> inputs) {
  if (inputs.empty()) throw ShapeError("no inputs to aggregate");
  const std::size_t d = inputs.front().size();
  for (const auto& x : inputs)
    if (x.size() != d) throw ShapeError("inputs differ in dimension");
}

void check_policy(const PowerPolicy& policy, double rate) {
  if (!(policy.probability > 0.0 && policy.probability <= 1.0)) throw DomainError("p_b must lie in (0, 1]");
  if (!(policy.threshold >= 0.0)) throw DomainError("threshold must be non-negative");
  const double implied = probability_from_threshold(policy.threshold, rate);
  if (std::abs(implied - policy.probability) > 1e-12 * std::max(1.0, implied))
    throw DomainError("policy threshold and probability disagree");
}

// One output coordinate. `gains` is the gain substream; draws (j*K .. j*K+K-1) belong to j.
inline double aggregate_one(std::span<const std::vector<double>> inputs, std::size_t j, const ChannelConfig& cfg,
                            const PowerPolicy& policy, const rng::Stream& gains, const rng::Stream& noise,
                            double rx_scale, double noise_std) {
  const std::size_t k_count = inputs.size();
  double acc = 0.0;
  for (std::size_t k = 0; k < k_count; ++k) {
    const double g = gains.exponential_at(j * k_count + k, cfg.rate);
    if (g >= policy.threshold) acc += inputs[k][j];
  }
  if (noise_std > 0.0) acc += noise_std * noise.normal_at(j);
  return rx_scale * acc;
}

}  // namespace

void validate(const ChannelConfig& cfg) {
  if (!(cfg.rate > 0.0)) throw DomainError("channel rate must be positive");
  if (!(cfg.noise_var >= 0.0)) throw DomainError("noise variance must be non-negative");
  if (!(cfg.tx_scale > 0.0)) throw DomainError("tx scaling constant must be positive");
  if (!(cfg.power_budget > 0.0)) throw DomainError("power budget must be positive");
}

ChannelConfig config_from_targets(double rate, double power_budget, double max_prob, double snr_db, Mode mode) {
  if (!(max_prob > 0.0 && max_prob < 1.0)) throw DomainError("p_b^max must lie in (0, 1)");
  ChannelConfig cfg;
  cfg.rate = rate;
  cfg.power_budget = power_budget;
  cfg.tx_scale = -power_budget * std::log(max_prob) / rate;
  cfg.noise_var = cfg.tx_scale / std::pow(10.0, snr_db / 10.0);
  cfg.mode = mode;
  validate(cfg);
  return cfg;
}

double probability_from_threshold(double threshold, double rate) {
  if (!(threshold >= 0.0)) throw DomainError("threshold must be non-negative");
  if (!(rate > 0.0)) throw DomainError("rate must be positive");
  return std::exp(-rate * threshold);
}

double threshold_from_probability(double probability, double rate) {
  if (!(probability > 0.0 && probability <= 1.0)) throw DomainError("p_b must lie in (0, 1]");
  if (!(rate > 0.0)) throw DomainError("rate must be positive");
  return -std::log(probability) / rate;
}

double max_probability(const ChannelConfig& cfg) {
  validate(cfg);
  return std::exp(-cfg.rate * cfg.tx_scale / cfg.power_budget);
}

PowerPolicy make_policy(const ChannelConfig& cfg, double probability) {
  validate(cfg);
  if (!(probability > 0.0 && probability <= 1.0)) throw DomainError("p_b must lie in (0, 1]");
  if (cfg.mode != Mode::ideal) {
    const double cap = max_probability(cfg);
    if (probability > cap * (1.0 + 1e-12))
      throw DomainError("p_b = " + std::to_string(probability) + " exceeds the power-limited maximum " +
                        std::to_string(cap));
  }
  return {threshold_from_probability(probability, cfg.rate), probability};
}

double draw_gain(double rate, rng::Stream& stream) {
  if (!(rate > 0.0)) throw DomainError("rate must be positive");
  return stream.exponential(rate);
}

std::complex<double> draw_coefficient(double rate, rng::Stream& stream) {
  if (!(rate > 0.0)) throw DomainError("rate must be positive");
  const double s = std::sqrt(0.5 / rate);
  const double re = stream.normal();
  const double im = stream.normal();
  return {s * re, s * im};
}

std::complex<double> tx_factor(std::complex<double> h, double threshold, double rho) {
  const double gain = std::norm(h);
  if (gain == 0.0 || gain < threshold) return {0.0, 0.0};
  return std::sqrt(rho) * std::conj(h) / gain;
}

std::vector<double> exact_mean(std::span<const std::vector<double>> inputs) {
  check_inputs(inputs);
  const std::size_t d = inputs.front().size();
  std::vector<double> out(d, 0.0);
  for (const auto& x : inputs)
    for (std::size_t j = 0; j < d; ++j) out[j] += x[j];
  const double inv = 1.0 / static_cast<double>(inputs.size());
  for (double& v : out) v *= inv;
  return out;
}

std::vector<double> air_aggregate(std::span<const std::vector<double>> inputs, const ChannelConfig& cfg,
                                  const PowerPolicy& policy, const rng::Key& key) {
  check_inputs(inputs);
  validate(cfg);
  if (cfg.mode == Mode::ideal) return exact_mean(inputs);
  check_policy(policy, cfg.rate);

  const std::size_t d = inputs.front().size();
  const rng::Stream gains = key.child("gain").stream();
  const rng::Stream noise = key.child("noise").stream();
  const double rx_scale = 1.0 / (policy.probability * static_cast<double>(inputs.size()));
  const double noise_std = std::sqrt(cfg.effective_noise_var());

  std::vector<double> out(d);
  const auto n = static_cast<std::ptrdiff_t>(d);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t j = 0; j < n; ++j) {
    const auto uj = static_cast<std::size_t>(j);
    out[uj] = aggregate_one(inputs, uj, cfg, policy, gains, noise, rx_scale, noise_std);
  }
  return out;
}

std::vector<double> air_aggregate_reference(std::span<const std::vector<double>> inputs, const ChannelConfig& cfg,
                                            const PowerPolicy& policy, const rng::Key& key) {
  check_inputs(inputs);
  validate(cfg);
  if (cfg.mode == Mode::ideal) return exact_mean(inputs);
  check_policy(policy, cfg.rate);

  const std::size_t d = inputs.front().size();
  const rng::Stream gains = key.child("gain").stream();
  const rng::Stream noise = key.child("noise").stream();
  const double rx_scale = 1.0 / (policy.probability * static_cast<double>(inputs.size()));
  const double noise_std = std::sqrt(cfg.effective_noise_var());

  std::vector<double> out(d);
  for (std::size_t j = 0; j < d; ++j) out[j] = aggregate_one(inputs, j, cfg, policy, gains, noise, rx_scale, noise_std);
  return out;
}

std::vector<double> air_variance(std::span<const std::vector<double>> inputs, double probability,
                                 const ChannelConfig& cfg) {
  check_inputs(inputs);
  if (!(probability > 0.0 && probability <= 1.0)) throw DomainError("p_b must lie in (0, 1]");
  const std::size_t d = inputs.front().size();
  const auto k = static_cast<double>(inputs.size());
  const double noise_term = cfg.effective_noise_var() / (k * k * probability * probability);
  std::vector<double> out(d, 0.0);
  for (const auto& x : inputs)
    for (std::size_t j = 0; j < d; ++j) out[j] += x[j] * x[j];
  for (double& v : out) v = v * (1.0 / probability - 1.0) / (k * k) + noise_term;
  return out;
}

}  // namespace esoafl::channel
