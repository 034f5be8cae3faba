#include "esoafl/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "esoafl/errors.hpp"

namespace esoafl::quantizer {

namespace {

// Tolerates round-off from callers that rescale x after fitting the scale.
constexpr double kRangeSlack = 1e-12;

inline std::uint16_t round_one(double x, const QuantScale& s, double step, double u) {
  const double pos = (x + s.half_range) / step;
  const double top = static_cast<double>(s.levels() - 1);
  double clamped = std::clamp(pos, 0.0, top);
  const double nearest = std::round(clamped);
  if (std::abs(clamped - nearest) < 1e-9) clamped = nearest;  // on a grid point
  const double lower = std::floor(clamped);
  const double frac = clamped - lower;
  // Up with probability equal to the distance fraction from the lower neighbour.
  const double idx = (u < frac) ? lower + 1.0 : lower;
  return static_cast<std::uint16_t>(std::min(idx, top));
}

void check_range(std::span<const double> x, const QuantScale& s) {
  const double limit = s.half_range * (1.0 + kRangeSlack);
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (!(std::abs(x[j]) <= limit))
      throw ClippingError("coordinate " + std::to_string(j) + " outside the quantizer range");
  }
}

}  // namespace

void validate(const QuantScale& s) {
  if (s.bits < 1 || s.bits > 16) throw DomainError("bit width must lie in [1, 16]");
  if (!(s.half_range > 0.0) || !std::isfinite(s.half_range)) throw DomainError("quantizer half-range must be positive");
}

QuantScale fit_common_scale(std::span<const std::vector<double>> updates, int bits) {
  if (updates.empty()) throw DomainError("no updates to fit a scale to");
  double c = 0.0;
  for (const auto& u : updates)
    for (double v : u) c = std::max(c, std::abs(v));
  if (!(c > 0.0)) throw DegenerateScaleError("all updates are zero");
  QuantScale s{c, bits};
  validate(s);
  return s;
}

QuantizedUpdate quantize(std::span<const double> x, const QuantScale& s, const rng::Stream& stream) {
  validate(s);
  check_range(x, s);
  QuantizedUpdate out{std::vector<std::uint16_t>(x.size()), s};
  const double step = s.step();
  const auto n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t j = 0; j < n; ++j) {
    const auto uj = static_cast<std::size_t>(j);
    out.indices[uj] = round_one(x[uj], s, step, stream.uniform_at(uj));
  }
  return out;
}

QuantizedUpdate quantize_reference(std::span<const double> x, const QuantScale& s, const rng::Stream& stream) {
  validate(s);
  check_range(x, s);
  QuantizedUpdate out{std::vector<std::uint16_t>(x.size()), s};
  const double step = s.step();
  for (std::size_t j = 0; j < x.size(); ++j) out.indices[j] = round_one(x[j], s, step, stream.uniform_at(j));
  return out;
}

std::vector<double> dequantize(const QuantizedUpdate& q) {
  validate(q.scale);
  std::vector<double> out(q.indices.size());
  const std::uint32_t top = q.scale.levels() - 1;
  for (std::size_t j = 0; j < out.size(); ++j) {
    if (q.indices[j] > top) throw DomainError("level index out of range");
    out[j] = q.scale.value(q.indices[j]);
  }
  return out;
}

QEstimate estimate_q(const QEstimateSpec& spec, const rng::Key& key) {
  if (spec.trials < 2) throw DomainError("estimate_q needs at least two trials");
  if (spec.dimension == 0) throw DomainError("estimate_q needs a positive dimension");
  if (spec.regime == ScaleRegime::common && spec.clients < 1) throw DomainError("common regime needs clients");
  const int others = spec.regime == ScaleRegime::common ? spec.clients - 1 : 0;

  double sum = 0.0;
  double sum_sq = 0.0;
  std::vector<double> x(spec.dimension);
  for (std::size_t t = 0; t < spec.trials; ++t) {
    rng::Stream draw = key.child("inputs").child(t).stream();
    double c = 0.0;
    double norm_sq = 0.0;
    for (double& v : x) {
      v = draw.normal();
      c = std::max(c, std::abs(v));
      norm_sq += v * v;
    }
    for (int k = 0; k < others; ++k)
      for (std::size_t j = 0; j < spec.dimension; ++j) c = std::max(c, std::abs(draw.normal()));

    const QuantScale s{c, spec.bits};
    const auto q = quantize_reference(x, s, key.child("rounding").child(t).stream());
    double err = 0.0;
    for (std::size_t j = 0; j < spec.dimension; ++j) {
      const double e = s.value(q.indices[j]) - x[j];
      err += e * e;
    }
    const double ratio = err / norm_sq;
    sum += ratio;
    sum_sq += ratio * ratio;
  }
  const auto n = static_cast<double>(spec.trials);
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
  return {mean, std::sqrt(var / n)};
}

}  // namespace esoafl::quantizer
