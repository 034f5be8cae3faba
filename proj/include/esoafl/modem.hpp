#pragma once

// Symbol-level over-the-air aggregation. Two quantized coordinates ride one square
// QAM symbol (I and Q each carry a 2^b-level MASK amplitude), symbols from the
// selected clients superpose at the receiver, a uniform ADC samples the sum and
// the digital receiver rescales it into an average.
//
// MASK amplitudes are zero-centred with unit spacing: amplitude(i) = i - (2^b - 1)/2.
// The quantizer grid value for the same index is step * amplitude(i), so decoding is
// linear in the received sample.

#include <cstdint>
#include <span>
#include <vector>

#include "esoafl/channel.hpp"
#include "esoafl/quantizer.hpp"
#include "esoafl/rng.hpp"

namespace esoafl::modem {

struct IqSymbol {
  double i = 0.0;
  double q = 0.0;
  int bits = 1;  // bits per axis
};

struct Sample {
  double i = 0.0;
  double q = 0.0;
};

struct AdcConfig {
  int resolution = 16;
  double reference = 1.0;  // full scale, volts

  [[nodiscard]] std::int32_t top_code() const noexcept { return (std::int32_t{1} << (resolution - 1)) - 1; }
  [[nodiscard]] double step() const noexcept { return reference / static_cast<double>(top_code()); }
};

struct AdcCode {
  std::int32_t i = 0;
  std::int32_t q = 0;
  bool saturated = false;
};

double amplitude(std::uint32_t index, int bits);

IqSymbol map_to_symbol(std::uint32_t index_i, std::uint32_t index_q, int bits);

/// Every constellation point for `bits` per axis, in (i-major) index order.
std::vector<IqSymbol> constellation(int bits);

/// Sum of the symbols plus independent N(0, noise_std^2) on each axis.
Sample superpose(std::span<const IqSymbol> symbols, double noise_std, rng::Stream& stream);

/// Reference = clients * sqrt(rho) * max amplitude + 4 sigma_z. Checks that the
/// resolution covers b + ceil(log2 K) bits.
AdcConfig make_adc(int clients, int bits, double rho, double noise_std, int resolution = 16);

/// Mid-tread uniform quantizer over [-reference, reference]; codes are signed, 0 is mid-scale.
AdcCode adc_sample(Sample sample, const AdcConfig& adc);

struct DecodeParams {
  int clients = 1;
  double probability = 1.0;  // p_b
  double rho = 1.0;
  quantizer::QuantScale scale;
};

struct Decoded {
  double i = 0.0;
  double q = 0.0;
  bool saturated = false;
};

/// Digital Rx scaling: code * adc_step / sqrt(rho) gives the summed amplitude, which the
/// quantizer step and 1 / (p_b K) turn into the averaged coordinate pair.
Decoded decode_aggregate(const AdcCode& code, const AdcConfig& adc, const DecodeParams& params);

struct ModemResult {
  std::vector<double> average;
  std::size_t saturated_symbols = 0;
  std::vector<Sample> received;  // filled only when requested
};

/// End-to-end symbol path for K quantized payloads sharing one scale. Symbol s carries
/// coordinates (2s, 2s+1); an odd trailing coordinate is paired with a zero Q amplitude.
/// Client k's gain for symbol s is draw s*K + k of the "gain" substream; selected symbols
/// arrive at sqrt(rho) times their amplitude.
ModemResult modem_aggregate(std::span<const quantizer::QuantizedUpdate> payloads, const channel::ChannelConfig& cfg,
                            const channel::PowerPolicy& policy, const rng::Key& key, bool keep_received = false);

}  // namespace esoafl::modem
