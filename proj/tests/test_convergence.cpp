#include <doctest.h>

#include <cmath>
#include <vector>

#include "esoafl/convergence.hpp"
#include "esoafl/errors.hpp"
#include "esoafl/rng.hpp"

using namespace esoafl;
using namespace esoafl::convergence;

namespace {

BoundParams base() {
  BoundParams bp;
  bp.smoothness = 2.0;
  bp.grad_variance = 0.5;
  bp.noise_var = 0.1;
  bp.initial_gap = 3.0;
  bp.eta = 0.01;
  bp.theta = 1.0;
  bp.local_iterations = 5;
  bp.rounds = 100;
  bp.clients = 10;
  bp.probability = 0.5;
  bp.q = 0.1;
  return bp;
}

// Written out independently from the bound's statement.
double bound_by_hand(const BoundParams& b) {
  const double t1 = 2 * b.initial_gap / (b.eta * b.theta * b.local_iterations * b.rounds);
  const double t2 = b.eta * b.theta * b.smoothness / b.clients * ((b.probability + b.q) / b.probability) * b.grad_variance;
  const double t3 = b.eta * b.eta * b.smoothness * b.smoothness * b.local_iterations * b.grad_variance;
  const double t4 = b.theta * b.eta * b.smoothness /
                    (b.local_iterations * b.clients * b.clients * b.probability * b.probability) * b.noise_var;
  return t1 + t2 + t3 + t4;
}

std::vector<RoundSample> grid_samples(const RoundModelConstants& c, double noise, std::uint64_t seed) {
  auto s = rng::Key(seed).stream();
  std::vector<RoundSample> out;
  for (int h : {1, 2, 4, 8, 16})
    for (double p : {0.1, 0.3, 0.5, 0.77}) {
      const double r = rounds_model(h, p, c) * (1 + noise * (2 * s.uniform() - 1));
      out.push_back({h, p, r, 0, 0.1});
    }
  return out;
}

}  // namespace

TEST_CASE("learning-rate condition") {
  auto bp = base();
  bp.eta = 0;
  CHECK(lr_condition(bp));
  // L = H = K = theta = 1, p_b = 1, q = 0: LHS = eta^2 + eta. Pick eta with equality.
  BoundParams edge;
  edge.smoothness = 1;
  edge.local_iterations = 1;
  edge.clients = 1;
  edge.probability = 1;
  edge.q = 0;
  edge.eta = (std::sqrt(5.0) - 1) / 2;
  CHECK(lr_condition(edge));
  edge.eta *= 1.001;
  CHECK_FALSE(lr_condition(edge));
  // Growing H can only flip true to false.
  bp = base();
  for (double eta : {0.001, 0.01, 0.05, 0.1}) {
    bp.eta = eta;
    bool seen_false = false;
    for (int h = 1; h <= 100; ++h) {
      bp.local_iterations = h;
      const bool ok = lr_condition(bp);
      if (seen_false) CHECK_FALSE(ok);
      seen_false = seen_false || !ok;
    }
  }
}

TEST_CASE("theorem bound") {
  auto bp = base();
  CHECK(theorem1_bound(bp) == doctest::Approx(bound_by_hand(bp)).epsilon(1e-14));
  bp.grad_variance = 0;
  bp.noise_var = 0;
  bp.smoothness = 1;
  bp.eta = 0.5;
  bp.local_iterations = 1;
  bp.rounds = 1e9;
  REQUIRE(lr_condition(bp));
  CHECK(theorem1_bound(bp) < 1e-8 * bp.initial_gap);

  bp = base();
  bp.q = 0;
  bp.probability = 1;
  const double without = theorem1_bound(bp);
  bp.q = 0.2;
  CHECK(theorem1_bound(bp) > without);

  bp = base();
  bp.eta = 1.0;
  CHECK_THROWS_AS(theorem1_bound(bp), NotApplicableError);

  // Monotone in R, p_b (non-increasing) and q (non-decreasing).
  bp = base();
  double prev = 1e300;
  for (double r = 1; r < 1e6; r *= 3) {
    bp.rounds = r;
    const double v = theorem1_bound(bp);
    CHECK(v <= prev);
    prev = v;
  }
  bp = base();
  prev = 1e300;
  for (double p = 0.3; p <= 1.0; p += 0.05) {
    bp.probability = p;
    if (!lr_condition(bp)) continue;
    const double v = theorem1_bound(bp);
    CHECK(v <= prev);
    prev = v;
  }
  bp = base();
  prev = 0;
  for (double q = 0; q <= 1; q += 0.1) {
    bp.q = q;
    const double v = theorem1_bound(bp);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("linear speedup rate") {
  CHECK(chi(0.3, 0.0) == 1.0);
  CHECK(chi(0.5, 0.5) == doctest::Approx(std::sqrt(2.0)));
  auto bp = base();
  double prev = 1e300;
  for (double r = 1; r < 1e6; r *= 2) {
    bp.rounds = r;
    const double v = linear_speedup_rate(bp);
    CHECK(v < prev);
    prev = v;
  }
  CHECK(corollary_rounds(0.1, base()) > 0);
  CHECK(corollary_rounds(0.01, base()) > corollary_rounds(0.1, base()));
}

TEST_CASE("round model shape") {
  const RoundModelConstants flat{0, 0, 7.5, 0.2};
  CHECK(rounds_model(3, 0.4, flat) == 7.5);
  const RoundModelConstants c{20, 5, 3, 0.1};
  for (int h = 1; h <= 50; ++h)
    for (double p = 0.05; p <= 0.77; p += 0.02) {
      const double d = 1e-6;
      CHECK((rounds_model(h + d, p, c) - rounds_model(h - d, p, c)) < 0);
      CHECK((rounds_model(h, p + d, c) - rounds_model(h, p - d, c)) < 0);
      CHECK(rounds_model(h, p, c) >= 1);
    }
}

TEST_CASE("fit recovers exact constants") {
  const RoundModelConstants truth{40, 12, 6, 0.15};
  const auto samples = grid_samples(truth, 0.0, 1);
  const auto fit = fit_constants(samples, truth.q);
  CHECK(std::abs(fit.constants.a0 / truth.a0 - 1) <= 1e-6);
  CHECK(std::abs(fit.constants.b0 / truth.b0 - 1) <= 1e-6);
  CHECK(std::abs(fit.constants.c0 / truth.c0 - 1) <= 1e-6);
  for (std::size_t i = 1; i < fit.residual_trace.size(); ++i)
    CHECK(fit.residual_trace[i] <= fit.residual_trace[i - 1]);
}

TEST_CASE("fit tolerates five percent noise") {
  const RoundModelConstants truth{40, 12, 6, 0.15};
  std::vector<RoundSample> samples;
  auto s = rng::Key(3).stream();
  // Replicated design so the estimator averages the noise down.
  for (int rep = 0; rep < 30; ++rep)
    for (auto x : grid_samples(truth, 0.05, 100 + static_cast<std::uint64_t>(rep))) samples.push_back(x);
  (void)s;
  const auto fit = fit_constants(samples, truth.q);
  CHECK(std::abs(fit.constants.a0 / truth.a0 - 1) <= 0.10);
  CHECK(std::abs(fit.constants.b0 / truth.b0 - 1) <= 0.10);
  CHECK(std::abs(fit.constants.c0 / truth.c0 - 1) <= 0.10);
}

TEST_CASE("ill-posed designs are rejected") {
  std::vector<RoundSample> single_h;
  for (double p : {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}) single_h.push_back({4, p, 10.0, 0, 0.1});
  CHECK_THROWS_AS(fit_constants(single_h, 0.1), IllPosedFitError);
  std::vector<RoundSample> few(single_h.begin(), single_h.begin() + 4);
  CHECK_THROWS_AS(fit_constants(few, 0.1), IllPosedFitError);
  // Two H values but u takes only two distinct values: three columns, rank two.
  std::vector<RoundSample> rank2;
  for (int rep = 0; rep < 3; ++rep) {
    rank2.push_back({1, 0.5, 10.0, 0, 0.1});
    rank2.push_back({2, 1.0, 8.0, 0, 0.1});
  }
  CHECK_THROWS_AS(fit_constants(rank2, 0.0), IllPosedFitError);
}

TEST_CASE("fit weighting") {
  const RoundModelConstants truth{40, 12, 6, 0.15};
  const auto exact = grid_samples(truth, 0.0, 1);
  const auto fit = fit_constants(exact, truth.q, FitWeighting::absolute);
  CHECK(std::abs(fit.constants.a0 / truth.a0 - 1) <= 1e-6);
  CHECK(std::abs(fit.constants.c0 / truth.c0 - 1) <= 1e-6);

  // One outlier at the largest count: relative weighting keeps the small counts accurate.
  auto skewed = exact;
  skewed.front().rounds *= 1.5;
  const auto rel = fit_constants(skewed, truth.q, FitWeighting::relative);
  const auto abs = fit_constants(skewed, truth.q, FitWeighting::absolute);
  const auto& last = skewed.back();
  const double want = rounds_model(last.local_iterations, last.probability, truth);
  CHECK(std::abs(rounds_model(last.local_iterations, last.probability, rel.constants) - want) <
        std::abs(rounds_model(last.local_iterations, last.probability, abs.constants) - want));

  auto zero = exact;
  zero[3].rounds = 0;
  CHECK_THROWS_AS(fit_constants(zero, truth.q), DomainError);
  CHECK_NOTHROW(fit_constants(zero, truth.q, FitWeighting::absolute));
}
