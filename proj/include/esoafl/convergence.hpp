#pragma once

// Convergence bound for local-SGD training over the quantized over-the-air channel,
// and the three-constant round-count model fitted from simulation.

#include <cstdint>
#include <span>
#include <vector>

namespace esoafl::convergence {

struct BoundParams {
  double smoothness = 1.0;      // L
  double grad_variance = 0.0;   // sigma^2
  double noise_var = 0.0;       // effective sigma_z^2
  double initial_gap = 1.0;     // f(w0) - f(w*)
  double eta = 0.01;
  double theta = 1.0;
  double local_iterations = 1;  // H
  double rounds = 1;            // R
  double clients = 1;           // K
  double probability = 1.0;     // p_b
  double q = 0.0;
};

/// 1 >= L^2 eta^2 H^2 + H L theta eta (q(2 - p_b) + K p_b) / (K p_b), boundary inclusive.
bool lr_condition(const BoundParams& bp);

/// Four-term bound on the average squared gradient norm after R rounds. Throws
/// NotApplicableError when the learning-rate condition fails.
double theorem1_bound(const BoundParams& bp);

/// chi = sqrt((p_b + q) / p_b).
double chi(double probability, double q);

/// Explicit rate under the linear-speedup step choice:
/// 2 L Delta chi / sqrt(KRH) + chi sigma^2 / sqrt(KRH) + K sigma^2 / (R theta^2)
/// + sqrt(1 / (K^3 R H^3 (p_b + q) p_b^3)) sigma_z^2.
double linear_speedup_rate(const BoundParams& bp);

/// Closed-form round count that drives the rate to `target` (documentation only; the
/// optimizer uses the three-constant model below).
double corollary_rounds(double target, const BoundParams& bp);

struct RoundModelConstants {
  double a0 = 0.0;
  double b0 = 0.0;
  double c0 = 0.0;
  double q = 0.0;
};

/// R(H, p_b) = A0 (p_b + q)/(p_b H) + B0 sqrt((p_b + q)/(p_b H)) + C0.
double rounds_model(double local_iterations, double probability, const RoundModelConstants& c);

struct RoundSample {
  int local_iterations = 1;
  double probability = 1.0;
  double rounds = 0.0;
  std::uint64_t seed = 0;
  double target_loss = 0.0;
};

struct FitResult {
  RoundModelConstants constants;
  double residual_norm = 0.0;
  int iterations = 0;
  std::vector<double> residual_trace;  // residual norm after each accepted step, starting at the initial point
};

/// How residuals are weighted. Observed counts span two orders of magnitude across the
/// (H, p_b) grid, so by default each residual is taken relative to its observation.
enum class FitWeighting { relative, absolute };

/// Damped Gauss-Newton (Levenberg-Marquardt) on the round model with non-negative constants,
/// started from A0 = B0 = C0 = 1. Needs >= 6 samples over >= 2 distinct H and >= 2 distinct p_b.
FitResult fit_constants(std::span<const RoundSample> samples, double q,
                        FitWeighting weighting = FitWeighting::relative);

}  // namespace esoafl::convergence
