#pragma once

// Unbiased stochastic uniform quantization on a symmetric grid shared by all clients.

#include <cstdint>
#include <span>
#include <vector>

#include "esoafl/rng.hpp"

namespace esoafl::quantizer {

struct QuantScale {
  double half_range = 1.0;  // c: the grid spans [-c, c]
  int bits = 4;             // b in [1, 16]

  [[nodiscard]] std::uint32_t levels() const noexcept { return 1u << bits; }
  /// Spacing between adjacent grid points, 2c / (2^b - 1).
  [[nodiscard]] double step() const noexcept { return 2.0 * half_range / static_cast<double>(levels() - 1); }
  [[nodiscard]] double value(std::uint32_t index) const noexcept {
    return -half_range + static_cast<double>(index) * step();
  }
};

struct QuantizedUpdate {
  std::vector<std::uint16_t> indices;
  QuantScale scale;
};

void validate(const QuantScale& s);

/// Max-abs over every client and coordinate. Throws DegenerateScaleError when all entries are zero.
QuantScale fit_common_scale(std::span<const std::vector<double>> updates, int bits);

/// Stochastic rounding. Coordinate j uses draw j of `stream`, so the result does not
/// depend on the thread count. Parallel over coordinates.
QuantizedUpdate quantize(std::span<const double> x, const QuantScale& s, const rng::Stream& stream);

/// Serial reference for `quantize`; bit-identical output.
QuantizedUpdate quantize_reference(std::span<const double> x, const QuantScale& s, const rng::Stream& stream);

std::vector<double> dequantize(const QuantizedUpdate& q);

/// How the shared grid is sized when estimating q.
enum class ScaleRegime {
  self_max,  // c = ||x||_inf of the vector itself
  common,    // c = max-abs over `clients` i.i.d. vectors, x one of them
};

struct QEstimate {
  double q = 0.0;
  double standard_error = 0.0;
};

struct QEstimateSpec {
  int bits = 4;
  ScaleRegime regime = ScaleRegime::common;
  std::size_t dimension = 64;
  int clients = 10;
  std::size_t trials = 10000;
};

/// Monte Carlo estimate of q in E||Q(x) - x||^2 = q ||x||^2 for Gaussian inputs.
/// Each trial draws fresh inputs and one stochastic rounding.
QEstimate estimate_q(const QEstimateSpec& spec, const rng::Key& key);

}  // namespace esoafl::quantizer
