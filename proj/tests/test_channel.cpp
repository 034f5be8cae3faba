#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "esoafl/channel.hpp"
#include "esoafl/errors.hpp"

using namespace esoafl;
using namespace esoafl::channel;

TEST_CASE("threshold and probability are inverse maps") {
  CHECK(probability_from_threshold(0.0, 1.0) == 1.0);
  CHECK(probability_from_threshold(std::log(2.0), 1.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(threshold_from_probability(1.0, 3.0) == 0.0);
  CHECK(threshold_from_probability(std::exp(-2.0), 2.0) == doctest::Approx(1.0).epsilon(1e-15));
  double prev = 1e300;
  for (double p = 0.01; p <= 1.0; p += 0.01) {
    const double g = threshold_from_probability(p, 1.5);
    CHECK(g < prev);
    prev = g;
    CHECK(std::abs(probability_from_threshold(g, 1.5) - p) <= 1e-12);
  }
  CHECK_THROWS_AS(threshold_from_probability(0.0, 1.0), DomainError);
  CHECK_THROWS_AS(threshold_from_probability(-0.1, 1.0), DomainError);
}

TEST_CASE("max_probability") {
  ChannelConfig cfg;
  cfg.rate = 1.0;
  cfg.power_budget = 0.2;
  cfg.tx_scale = -0.2 * std::log(0.77);
  CHECK(max_probability(cfg) == doctest::Approx(0.77).epsilon(1e-14));
  cfg.tx_scale = 1e-300;
  CHECK(max_probability(cfg) == doctest::Approx(1.0));
  cfg.tx_scale = 0.05;
  const double base = max_probability(cfg);
  cfg.tx_scale = 0.06;
  CHECK(max_probability(cfg) < base);
  cfg.tx_scale = 0.05;
  cfg.power_budget = 0.3;
  CHECK(max_probability(cfg) > base);

  const auto tgt = config_from_targets(1.0, 0.2, 0.77, 15.0);
  CHECK(max_probability(tgt) == doctest::Approx(0.77).epsilon(1e-14));
  CHECK(10 * std::log10(tgt.tx_scale / tgt.noise_var) == doctest::Approx(15.0));
  CHECK_THROWS_AS(make_policy(tgt, 0.9), DomainError);
  CHECK(make_policy(tgt, 0.77).probability == 0.77);
}

TEST_CASE("gain draws are exponential") {
  auto s = rng::Key(3).stream();
  const int n = 1000000;
  std::vector<double> g(static_cast<std::size_t>(n));
  double sum = 0;
  int above = 0;
  const double th = threshold_from_probability(0.3, 2.0);
  for (auto& v : g) {
    v = draw_gain(2.0, s);
    sum += v;
    above += v >= th;
  }
  CHECK(std::abs(sum / n - 0.5) <= 0.005);
  const double se = std::sqrt(0.3 * 0.7 / n);
  CHECK(std::abs(static_cast<double>(above) / n - 0.3) <= 3 * se);
  for (auto& v : g) v *= 2.0;  // rate 1
  std::nth_element(g.begin(), g.begin() + n / 2, g.end());
  CHECK(std::abs(g[static_cast<std::size_t>(n / 2)] / std::log(2.0) - 1) <= 0.01);

  // Complex coefficients: |h|^2 has the same law.
  double csum = 0;
  for (int i = 0; i < 200000; ++i) csum += std::norm(draw_coefficient(2.0, s));
  CHECK(std::abs(csum / 200000 - 0.5) <= 0.01);
}

TEST_CASE("tx_factor inverts selected channels") {
  auto s = rng::Key(8).stream();
  const double rho = 0.05, th = 0.4;
  for (int i = 0; i < 1000; ++i) {
    const auto h = draw_coefficient(1.0, s);
    const auto p = tx_factor(h, th, rho);
    if (std::norm(h) < th) {
      CHECK(p == std::complex<double>(0, 0));
    } else {
      const auto rx = h * p;
      CHECK(rx.real() == doctest::Approx(std::sqrt(rho)).epsilon(1e-14));
      CHECK(std::abs(rx.imag()) <= 1e-15);
      CHECK(std::norm(p) == doctest::Approx(rho / std::norm(h)).epsilon(1e-12));
    }
  }
  CHECK(tx_factor({0, 0}, 0.0, rho) == std::complex<double>(0, 0));
}

TEST_CASE("average power under the budget-limited policy stays within the budget") {
  const auto cfg = config_from_targets(1.0, 0.2, 0.77, 15.0);
  const auto pol = make_policy(cfg, 0.77);
  auto s = rng::Key(12).stream();
  double sum = 0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) sum += std::norm(tx_factor(draw_coefficient(cfg.rate, s), pol.threshold, cfg.tx_scale));
  CHECK(sum / n <= cfg.power_budget);
}

TEST_CASE("air_aggregate degenerate cases") {
  std::vector<std::vector<double>> in{{2.0}, {4.0}};
  ChannelConfig ideal;
  ideal.mode = Mode::ideal;
  CHECK(air_aggregate(in, ideal, {0.0, 1.0}, rng::Key(1))[0] == 3.0);

  ChannelConfig stat;
  stat.noise_var = 0.0;
  std::vector<std::vector<double>> many{{0.1, -0.3, 7.0}, {0.5, 0.25, -1.0}, {0.0, 1.0, 2.0}};
  const auto mean = exact_mean(many);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto out = air_aggregate(many, stat, {0.0, 1.0}, rng::Key(seed));
    for (std::size_t j = 0; j < 3; ++j) CHECK(out[j] == doctest::Approx(mean[j]).epsilon(1e-15));
  }
  std::vector<std::vector<double>> empty;
  CHECK_THROWS_AS(air_aggregate(empty, stat, {0.0, 1.0}, rng::Key(1)), ShapeError);
  CHECK_THROWS_AS(air_aggregate(many, stat, {0.5, 0.5}, rng::Key(1)), DomainError);
}

TEST_CASE("air_aggregate is unbiased with the closed-form variance") {
  const int k = 10;
  const std::size_t d = 4;
  auto s = rng::Key(21).stream();
  std::vector<std::vector<double>> in(k, std::vector<double>(d));
  for (auto& x : in)
    for (double& v : x) v = s.normal();
  ChannelConfig cfg;
  cfg.noise_var = 0.02;
  cfg.tx_scale = 0.05;
  const double pb = 0.5;
  const auto pol = make_policy(ChannelConfig{1.0, 0.02, 0.05, 1.0, Mode::statistical}, pb);
  const auto mean = exact_mean(in);
  const auto var = air_variance(in, pb, cfg);
  const int trials = 400000;
  std::vector<double> m(d, 0), m2(d, 0);
  for (int t = 0; t < trials; ++t) {
    const auto out = air_aggregate(in, cfg, pol, rng::Key(5).child(static_cast<std::uint64_t>(t)));
    for (std::size_t j = 0; j < d; ++j) {
      m[j] += out[j];
      m2[j] += out[j] * out[j];
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    const double mu = m[j] / trials;
    const double v = m2[j] / trials - mu * mu;
    CHECK(std::abs(mu - mean[j]) <= 3 * std::sqrt(var[j] / trials));
    CHECK(std::abs(v / var[j] - 1) <= 0.05);
  }
}

TEST_CASE("air_variance closed form") {
  std::vector<std::vector<double>> in{{1.0}, {-2.0}};
  ChannelConfig quiet;
  quiet.noise_var = 0.0;
  CHECK(air_variance(in, 1.0, quiet)[0] == 0.0);
  ChannelConfig noisy{1.0, 0.3, 0.1, 1.0, Mode::statistical};
  std::vector<std::vector<double>> zeros{{0.0}, {0.0}};
  CHECK(air_variance(zeros, 0.5, noisy)[0] == doctest::Approx(3.0 / (4 * 0.25)));
  CHECK(air_variance(in, 0.5, quiet)[0] == doctest::Approx(5.0 / 4.0));
}

TEST_CASE("parallel air_aggregate equals the serial reference") {
  const int k = 7;
  auto s = rng::Key(2).stream();
  std::vector<std::vector<double>> in(k, std::vector<double>(5003));
  for (auto& x : in)
    for (double& v : x) v = s.normal();
  const ChannelConfig cfg{1.0, 0.01, 0.05, 1.0, Mode::statistical};
  const auto pol = make_policy(cfg, 0.4);
  CHECK(air_aggregate(in, cfg, pol, rng::Key(9)) == air_aggregate_reference(in, cfg, pol, rng::Key(9)));
}
