#include <doctest.h>

#include <cmath>
#include <set>
#include <utility>
#include <vector>

#include "esoafl/channel.hpp"
#include "esoafl/errors.hpp"
#include "esoafl/modem.hpp"
#include "esoafl/quantizer.hpp"

using namespace esoafl;
using namespace esoafl::modem;

TEST_CASE("constellation geometry") {
  CHECK(constellation(3).size() == 64);
  const auto s = map_to_symbol(0, 1, 1);
  CHECK(s.i == -0.5);
  CHECK(s.q == 0.5);
  for (int b = 1; b <= 3; ++b) {
    std::set<std::pair<double, double>> pts;
    for (const auto& p : constellation(b)) pts.insert({p.i, p.q});
    CHECK(pts.size() == (1u << b) * (1u << b));
  }
  CHECK_THROWS_AS(map_to_symbol(4, 0, 2), DomainError);
}

TEST_CASE("superposition") {
  auto rng = rng::Key(1).stream();
  // Two b=2 users: 7 distinct sums per axis, 49 points.
  std::set<std::pair<double, double>> pts;
  const auto pts2 = constellation(2);
  for (const auto& a : pts2)
    for (const auto& b : pts2) {
      const IqSymbol pair[2] = {a, b};
      const auto rx = superpose(pair, 0.0, rng);
      pts.insert({rx.i, rx.q});
    }
  CHECK(pts.size() == 49);

  const auto sym = map_to_symbol(3, 1, 2);
  const std::vector<IqSymbol> same(4, sym);
  const auto rx = superpose(same, 0.0, rng);
  CHECK(rx.i == 4 * sym.i);
  CHECK(rx.q == 4 * sym.q);
  const auto one = superpose(std::span<const IqSymbol>(&sym, 1), 0.0, rng);
  CHECK(one.i == sym.i);
  CHECK(one.q == sym.q);
}

TEST_CASE("ADC endpoints") {
  const AdcConfig adc{16, 2.0};
  CHECK(adc_sample({0.0, 0.0}, adc).i == 0);
  const auto top = adc_sample({2.0, -2.0}, adc);
  CHECK(top.i == adc.top_code());
  CHECK(top.q == -adc.top_code());
  CHECK_FALSE(top.saturated);
  CHECK(adc_sample({2.5, 0.0}, adc).saturated);
  CHECK_THROWS_AS(make_adc(8, 14, 1.0, 0.0, 16), DomainError);
  CHECK_NOTHROW(make_adc(4, 14, 1.0, 0.0, 16));
}

TEST_CASE("noise-free decode is exact to one ADC quantum over every input") {
  const double rho = 0.05;
  for (int k = 1; k <= 3; ++k) {
    for (int b = 1; b <= 3; ++b) {
      const quantizer::QuantScale scale{1.3, b};
      const AdcConfig adc = make_adc(k, b, rho, 0.0);
      const DecodeParams params{k, 1.0, rho, scale};
      const double quantum = adc.step() / std::sqrt(rho) * scale.step() / k;
      const std::uint32_t levels = 1u << b;
      std::uint64_t combos = 1;
      for (int i = 0; i < k; ++i) combos *= levels;
      auto rng = rng::Key(0).stream();
      for (std::uint64_t c = 0; c < combos; ++c) {
        std::vector<IqSymbol> syms;
        double mean = 0;
        std::uint64_t rest = c;
        for (int i = 0; i < k; ++i) {
          const auto idx = static_cast<std::uint32_t>(rest % levels);
          rest /= levels;
          auto sym = map_to_symbol(idx, levels - 1 - idx, b);
          sym.i *= std::sqrt(rho);
          sym.q *= std::sqrt(rho);
          syms.push_back(sym);
          mean += scale.value(idx) / k;
        }
        const auto out = decode_aggregate(adc_sample(superpose(syms, 0.0, rng), adc), adc, params);
        CHECK(std::abs(out.i - mean) <= quantum);
        CHECK(std::abs(out.q + mean) <= quantum);
        CHECK_FALSE(out.saturated);
      }
    }
  }
}

TEST_CASE("all-zero payload decodes to zero") {
  // Index pairs straddling zero: b=1 levels are +-c, so two users cancel.
  const quantizer::QuantScale scale{2.0, 1};
  std::vector<quantizer::QuantizedUpdate> p{{{0, 1}, scale}, {{1, 0}, scale}};
  const channel::ChannelConfig cfg{1.0, 0.0, 0.05, 1.0, channel::Mode::statistical};
  const auto out = modem_aggregate(p, cfg, {0.0, 1.0}, rng::Key(1));
  const AdcConfig adc = make_adc(2, 1, 0.05, 0.0);
  const double quantum = adc.step() / std::sqrt(0.05) * scale.step() / 2;
  for (double v : out.average) CHECK(std::abs(v) <= quantum);
}

TEST_CASE("modem path matches the statistical channel in mean and variance") {
  const int k = 3;
  const std::size_t d = 4;
  const quantizer::QuantScale scale{1.0, 3};
  auto s = rng::Key(4).stream();
  std::vector<quantizer::QuantizedUpdate> payloads;
  std::vector<std::vector<double>> values;
  for (int i = 0; i < k; ++i) {
    quantizer::QuantizedUpdate q{std::vector<std::uint16_t>(d), scale};
    for (auto& idx : q.indices) idx = static_cast<std::uint16_t>(s.below(8));
    values.push_back(quantizer::dequantize(q));
    payloads.push_back(std::move(q));
  }
  const channel::ChannelConfig cfg{1.0, 0.01, 0.05, 1.0, channel::Mode::statistical};
  const auto pol = channel::make_policy(cfg, 0.5);
  const auto truth = channel::exact_mean(values);
  // Symbol noise is in amplitude units, i.e. scaled by the grid step in gradient units.
  channel::ChannelConfig scaled = cfg;
  scaled.noise_var = cfg.noise_var * scale.step() * scale.step();
  const auto var = channel::air_variance(values, 0.5, scaled);
  const int trials = 30000;
  std::vector<double> m(d, 0), m2(d, 0);
  for (int t = 0; t < trials; ++t) {
    const auto out = modem_aggregate(payloads, cfg, pol, rng::Key(8).child(static_cast<std::uint64_t>(t)));
    CHECK(out.saturated_symbols == 0);
    for (std::size_t j = 0; j < d; ++j) {
      m[j] += out.average[j];
      m2[j] += out.average[j] * out.average[j];
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    const double mu = m[j] / trials;
    const double v = m2[j] / trials - mu * mu;
    CHECK(std::abs(mu - truth[j]) <= 3 * std::sqrt(var[j] / trials));
    CHECK(std::abs(v / var[j] - 1) <= 0.10);
  }
}

TEST_CASE("odd dimension pads the last symbol") {
  const quantizer::QuantScale scale{1.0, 2};
  std::vector<quantizer::QuantizedUpdate> p{{{0, 3, 1}, scale}};
  const channel::ChannelConfig cfg{1.0, 0.0, 0.05, 1.0, channel::Mode::statistical};
  const auto out = modem_aggregate(p, cfg, {0.0, 1.0}, rng::Key(1), true);
  CHECK(out.average.size() == 3);
  CHECK(out.received.size() == 2);
  CHECK(out.received[1].q == 0.0);
  CHECK(out.average[2] == doctest::Approx(scale.value(1)).epsilon(1e-4));
}
