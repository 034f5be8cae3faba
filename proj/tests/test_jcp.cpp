#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "esoafl/errors.hpp"
#include "esoafl/jcp.hpp"
#include "instances.hpp"

using namespace esoafl;
using namespace esoafl::jcp;

namespace {

JcpProblem sample_problem() {
  JcpProblem p;
  p.a0 = 60;
  p.b0 = 10;
  p.c0 = 5;
  p.q = 0.2;
  p.rho = 0.0523;
  p.rate = 1.0;
  p.comm_time = 0.17;
  p.comp_energy = 0.03;
  return p;
}

// Separate transcription of the objective for a dual-implementation check.
double objective_by_hand(double p, double h, const JcpProblem& pr) {
  const double u = (p + pr.q) / (p * h);
  const double t1 = pr.a0 * u + pr.b0 * std::sqrt(u) + pr.c0;
  const double t2 = pr.rho * pr.rate * p * p * std::log(1 - 1 / std::log(p)) * pr.comm_time + h * pr.comp_energy;
  return t1 * t2;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-12); }

}  // namespace

TEST_CASE("objective pieces") {
  auto pr = sample_problem();
  CHECK(objective({0.3, 4}, pr) == doctest::Approx(objective_by_hand(0.3, 4, pr)).epsilon(1e-13));
  pr.a0 = pr.b0 = 0;
  CHECK(theta1({0.2, 7}, pr) == pr.c0);
  pr.comm_time = 0;
  CHECK(theta2({0.2, 7}, pr) == doctest::Approx(7 * pr.comp_energy));
  CHECK_THROWS_AS(theta2({1.0, 2}, pr), DomainError);
}

TEST_CASE("gradients and Hessians match finite differences") {
  const auto pr = sample_problem();
  const double e = 1e-5;
  for (double p : {0.05, 0.2, 0.4, 0.7})
    for (double h : {1.5, 3.0, 10.0, 40.0}) {
      const Point x{p, h};
      const auto g1 = theta1_gradient(x, pr);
      const auto g2 = theta2_gradient(x, pr);
      auto fd = [&](auto f, double dp, double dh) {
        return (f(Point{p + dp, h + dh}, pr) - f(Point{p - dp, h - dh}, pr)) / (2 * e);
      };
      CHECK(rel(g1.p, fd(theta1, e, 0)) <= 1e-6);
      CHECK(rel(g1.h, fd(theta1, 0, e)) <= 1e-6);
      CHECK(rel(g2.p, fd(theta2, e, 0)) <= 1e-6);

      const auto hs = hessians(x, pr);
      auto fd_grad = [&](auto grad, double dp, double dh, bool want_p) {
        const auto up = grad(Point{p + dp, h + dh}, pr);
        const auto dn = grad(Point{p - dp, h - dh}, pr);
        return want_p ? (up.p - dn.p) / (2 * e) : (up.h - dn.h) / (2 * e);
      };
      CHECK(rel(hs.theta1.pp, fd_grad(theta1_gradient, e, 0, true)) <= 1e-3);
      CHECK(rel(hs.theta1.ph, fd_grad(theta1_gradient, 0, e, true)) <= 1e-3);
      CHECK(rel(hs.theta1.hh, fd_grad(theta1_gradient, 0, e, false)) <= 1e-3);
      CHECK(rel(hs.theta2.pp, fd_grad(theta2_gradient, e, 0, true)) <= 1e-3);
      CHECK(hs.theta2.ph == 0.0);
      CHECK(hs.theta2.hh == 0.0);
    }
}

TEST_CASE("Hessians are positive on a feasible grid") {
  const auto pr = sample_problem();
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 50; ++j) {
      const Point x{pr.p_min + (pr.p_max - pr.p_min) * (i + 0.5) / 50, 1.0 + 49.0 * (j + 0.5) / 50};
      const auto hs = hessians(x, pr);
      CHECK(hs.theta1.pp > 0);
      CHECK(hs.theta1.pp * hs.theta1.hh - hs.theta1.ph * hs.theta1.ph >= 0);
      CHECK(hs.theta2.pp >= -1e-12);
    }
}

TEST_CASE("surrogate properties") {
  const auto pr = sample_problem();
  auto s = rng::Key(4).stream();
  auto rand_point = [&] { return Point{0.01 + 0.76 * s.uniform(), 1 + 49 * s.uniform()}; };
  for (int t = 0; t < 200; ++t) {
    const Point a = rand_point(), x = rand_point(), y = rand_point();
    CHECK(surrogate(a, a, pr) == doctest::Approx(2 * objective(a, pr)).epsilon(1e-14));
    const Point mid{0.5 * (x.p + y.p), 0.5 * (x.h + y.h)};
    CHECK(surrogate(mid, a, pr) <= 0.5 * (surrogate(x, a, pr) + surrogate(y, a, pr)) * (1 + 1e-12));
    // AM-GM upper bound.
    CHECK(surrogate(x, a, pr) >= 2 * std::sqrt(objective(x, pr) * objective(a, pr)) * (1 - 1e-12));
    // Tangency: at its anchor the surrogate has the objective's gradient.
    const auto gs = surrogate_gradient(a, a, pr);
    const double e = 1e-6;
    const double fdp = (objective({a.p + e, a.h}, pr) - objective({a.p - e, a.h}, pr)) / (2 * e);
    const double fdh = (objective({a.p, a.h + e}, pr) - objective({a.p, a.h - e}, pr)) / (2 * e);
    CHECK(rel(gs.p, fdp) <= 1e-5);
    CHECK(rel(gs.h, fdh) <= 1e-5);
  }
}

TEST_CASE("subproblem solver reaches the box minimum") {
  const auto pr = sample_problem();
  for (Point anchor : {Point{0.3, 5}, Point{0.7, 30}, Point{0.05, 1.5}}) {
    const auto res = solve_surrogate(anchor, pr);
    // Dense grid refinement around the result.
    double best = surrogate(res.x, anchor, pr);
    double grid_best = 1e300;
    for (int i = 0; i <= 400; ++i)
      for (int j = 0; j <= 400; ++j) {
        const Point x{pr.p_min + (pr.p_max - pr.p_min) * i / 400.0, 1 + 49.0 * j / 400.0};
        grid_best = std::min(grid_best, surrogate(x, anchor, pr));
      }
    CHECK(best <= grid_best + 1e-4);
  }
  // Unconstrained minimiser above p_max: the solution sits on that face.
  auto steep = sample_problem();
  steep.a0 = 5000;
  steep.q = 5;
  steep.comm_time = 1e-3;
  const auto res = solve_surrogate({0.3, 5}, steep);
  CHECK(res.x.p == steep.p_max);
}

TEST_CASE("solve_jcp agrees with grid search") {
  auto problems = testing::random_problems(20, 7);
  problems.push_back(sample_problem());
  for (const auto& pr : problems) {
    const auto sol = solve_jcp(pr);
    const auto grid = grid_search(pr, 0.001);
    CHECK(sol.converged);
    CHECK(sol.iterations < 10000);
    CHECK(sol.objective <= grid.objective * 1.01);
    for (std::size_t k = 1; k < sol.objective_trace.size(); ++k)
      CHECK(sol.objective_trace[k] <= sol.objective_trace[k - 1] * (1 + 1e-10));
    for (const auto& x : sol.iterates) {
      CHECK(x.p >= pr.p_min);
      CHECK(x.p <= pr.p_max);
      CHECK(x.h >= pr.h_min);
      CHECK(x.h <= pr.h_max);
    }
  }
}

TEST_CASE("constant round count drives H to its minimum") {
  auto pr = sample_problem();
  pr.a0 = pr.b0 = 0;
  const auto sol = solve_jcp(pr);
  const auto grid = grid_search(pr, 0.001);
  CHECK(sol.h == 1);
  CHECK(grid.h == 1);
  CHECK(sol.p <= 0.01);
  CHECK(sol.objective <= grid.objective * 1.01);
}

TEST_CASE("grid search properties") {
  const auto pr = sample_problem();
  const auto coarse = grid_search(pr, 0.01);
  const auto fine = grid_search(pr, 0.001);
  CHECK(fine.objective <= coarse.objective);
  const std::vector<double> one{0.42};
  auto single = pr;
  single.h_min = single.h_max = 3;
  const auto cell = grid_search(single, one);
  CHECK(cell.p == 0.42);
  CHECK(cell.h == 3);
  const auto ps = probability_grid(pr, 0.001);
  const auto par = grid_search(pr, ps);
  const auto ser = grid_search_reference(pr, ps);
  CHECK(par.p == ser.p);
  CHECK(par.h == ser.h);
  CHECK(par.objective == ser.objective);
}

TEST_CASE("H rounding breaks ties toward the smaller value") {
  // With only two admissible H and a symmetric choice the rounding rule is observable
  // through h_relaxed; here we just check the documented rule on the solution fields.
  const auto sol = solve_jcp(sample_problem());
  const double frac = sol.h_relaxed - std::floor(sol.h_relaxed);
  const int expect = frac > 0.5 ? static_cast<int>(std::floor(sol.h_relaxed)) + 1 : static_cast<int>(std::floor(sol.h_relaxed));
  CHECK(sol.h == expect);
}

TEST_CASE("option validation") {
  JcpOptions o;
  o.step0 = 0;
  CHECK_THROWS_AS(solve_jcp(sample_problem(), o), DomainError);
  auto bad = sample_problem();
  bad.p_max = 1.0;
  CHECK_THROWS_AS(validate(bad), DomainError);
}
