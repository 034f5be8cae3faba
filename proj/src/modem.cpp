#include "esoafl/modem.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "esoafl/errors.hpp"

namespace esoafl::modem {

namespace {

void check_bits(int bits) {
  if (bits < 1 || bits > 16) throw DomainError("bits per axis must lie in [1, 16]");
}

std::int32_t to_code(double x, const AdcConfig& adc, bool& saturated) {
  const double top = static_cast<double>(adc.top_code());
  double c = std::round(x / adc.step());
  if (c > top) {
    c = top;
    saturated = true;
  } else if (c < -top) {
    c = -top;
    saturated = true;
  }
  return static_cast<std::int32_t>(c);
}

}  // namespace

double amplitude(std::uint32_t index, int bits) {
  check_bits(bits);
  const std::uint32_t levels = 1u << bits;
  if (index >= levels) throw DomainError("level index " + std::to_string(index) + " exceeds the constellation");
  return static_cast<double>(index) - 0.5 * static_cast<double>(levels - 1);
}

IqSymbol map_to_symbol(std::uint32_t index_i, std::uint32_t index_q, int bits) {
  return {amplitude(index_i, bits), amplitude(index_q, bits), bits};
}

std::vector<IqSymbol> constellation(int bits) {
  check_bits(bits);
  const std::uint32_t levels = 1u << bits;
  std::vector<IqSymbol> points;
  points.reserve(static_cast<std::size_t>(levels) * levels);
  for (std::uint32_t a = 0; a < levels; ++a)
    for (std::uint32_t b = 0; b < levels; ++b) points.push_back(map_to_symbol(a, b, bits));
  return points;
}

Sample superpose(std::span<const IqSymbol> symbols, double noise_std, rng::Stream& stream) {
  Sample out;
  if (!symbols.empty()) {
    const int bits = symbols.front().bits;
    for (const auto& s : symbols) {
      if (s.bits != bits) throw ShapeError("superposed symbols must share one order");
      out.i += s.i;
      out.q += s.q;
    }
  }
  if (noise_std > 0.0) {
    out.i += noise_std * stream.normal();
    out.q += noise_std * stream.normal();
  }
  return out;
}

AdcConfig make_adc(int clients, int bits, double rho, double noise_std, int resolution) {
  check_bits(bits);
  if (clients < 1) throw DomainError("need at least one client");
  if (resolution < 2 || resolution > 31) throw DomainError("ADC resolution must lie in [2, 31]");
  const int needed = bits + static_cast<int>(std::ceil(std::log2(static_cast<double>(clients))));
  if (resolution < needed)
    throw DomainError("ADC resolution " + std::to_string(resolution) + " below the " + std::to_string(needed) +
                      " bits the superposed constellation needs");
  const double max_amp = 0.5 * static_cast<double>((1u << bits) - 1);
  return {resolution, static_cast<double>(clients) * std::sqrt(rho) * max_amp + 4.0 * noise_std};
}

AdcCode adc_sample(Sample sample, const AdcConfig& adc) {
  if (!(adc.reference > 0.0)) throw DomainError("ADC reference must be positive");
  AdcCode code;
  code.i = to_code(sample.i, adc, code.saturated);
  code.q = to_code(sample.q, adc, code.saturated);
  return code;
}

Decoded decode_aggregate(const AdcCode& code, const AdcConfig& adc, const DecodeParams& params) {
  if (params.clients < 1) throw DomainError("need at least one client");
  if (!(params.probability > 0.0 && params.probability <= 1.0)) throw DomainError("p_b must lie in (0, 1]");
  const double factor = adc.step() / std::sqrt(params.rho) * params.scale.step() /
                        (params.probability * static_cast<double>(params.clients));
  return {factor * static_cast<double>(code.i), factor * static_cast<double>(code.q), code.saturated};
}

ModemResult modem_aggregate(std::span<const quantizer::QuantizedUpdate> payloads, const channel::ChannelConfig& cfg,
                            const channel::PowerPolicy& policy, const rng::Key& key, bool keep_received) {
  if (payloads.empty()) throw ShapeError("no payloads to aggregate");
  channel::validate(cfg);
  const std::size_t d = payloads.front().indices.size();
  const auto scale = payloads.front().scale;
  for (const auto& p : payloads) {
    if (p.indices.size() != d) throw ShapeError("payloads differ in dimension");
    if (p.scale.bits != scale.bits || p.scale.half_range != scale.half_range)
      throw ShapeError("payloads must share one quantizer scale");
  }

  const auto k_count = payloads.size();
  const int clients = static_cast<int>(k_count);
  const double noise_std = std::sqrt(cfg.noise_var);
  const double sqrt_rho = std::sqrt(cfg.tx_scale);
  const AdcConfig adc = make_adc(clients, scale.bits, cfg.tx_scale, noise_std);
  const DecodeParams params{clients, policy.probability, cfg.tx_scale, scale};
  const rng::Stream gains = key.child("gain").stream();
  const rng::Key noise_key = key.child("noise");
  const bool fading = cfg.mode != channel::Mode::ideal;

  const std::size_t n_symbols = (d + 1) / 2;
  ModemResult result;
  result.average.assign(d, 0.0);
  if (keep_received) result.received.resize(n_symbols);
  std::size_t saturated = 0;

  const auto n = static_cast<std::ptrdiff_t>(n_symbols);
#pragma omp parallel for schedule(static) reduction(+ : saturated)
  for (std::ptrdiff_t si = 0; si < n; ++si) {
    const auto s = static_cast<std::size_t>(si);
    const std::size_t ci = 2 * s;
    const std::size_t cq = 2 * s + 1;
    std::vector<IqSymbol> arriving;
    arriving.reserve(k_count);
    for (std::size_t k = 0; k < k_count; ++k) {
      if (fading && gains.exponential_at(s * k_count + k, cfg.rate) < policy.threshold) continue;
      IqSymbol sym;
      sym.bits = scale.bits;
      sym.i = sqrt_rho * amplitude(payloads[k].indices[ci], scale.bits);
      sym.q = cq < d ? sqrt_rho * amplitude(payloads[k].indices[cq], scale.bits) : 0.0;
      arriving.push_back(sym);
    }
    rng::Stream noise = noise_key.child(s).stream();
    const Sample rx = superpose(arriving, fading ? noise_std : 0.0, noise);
    const AdcCode code = adc_sample(rx, adc);
    const Decoded out = decode_aggregate(code, adc, fading ? params : DecodeParams{clients, 1.0, cfg.tx_scale, scale});
    if (out.saturated) ++saturated;
    result.average[ci] = out.i;
    if (cq < d) result.average[cq] = out.q;
    if (keep_received) result.received[s] = rx;
  }
  result.saturated_symbols = saturated;
  return result;
}

}  // namespace esoafl::modem
