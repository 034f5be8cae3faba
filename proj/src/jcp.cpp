#include "esoafl/jcp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "esoafl/errors.hpp"

namespace esoafl::jcp {

namespace {

struct Box {
  double p_lo, p_hi, h_lo, h_hi;
};

Box box_of(const JcpProblem& prob) {
  return {prob.p_min, prob.p_max, static_cast<double>(prob.h_min), static_cast<double>(prob.h_max)};
}

Point project(Point x, const Box& b) {
  return {std::clamp(x.p, b.p_lo, b.p_hi), std::clamp(x.h, b.h_lo, b.h_hi)};
}

void check_point(Point x) {
  if (!(x.p > 0.0 && x.p < 1.0)) throw DomainError("p_b must lie in (0, 1)");
  if (!(x.h > 0.0)) throw DomainError("H must be positive");
}

// Communication-power shape p^2 ln(1 - 1/ln p) and its first two derivatives in p.
struct CommShape {
  double value, d1, d2;
};

CommShape comm_shape(double p) {
  const double l = std::log(p);
  const double u = std::log1p(-1.0 / l);
  const double ll1 = l * (l - 1.0);
  return {p * p * u, 2.0 * p * u + p / ll1, 2.0 * u + 3.0 / ll1 - (2.0 * l - 1.0) / (ll1 * ll1)};
}

Sym2 add_scaled(const Sym2& a, double sa, const Sym2& b, double sb) {
  return {sa * a.pp + sb * b.pp, sa * a.ph + sb * b.ph, sa * a.hh + sb * b.hh};
}

}  // namespace

void validate(const JcpProblem& prob) {
  if (prob.a0 < 0 || prob.b0 < 0 || prob.c0 < 0 || prob.q < 0) throw DomainError("round-model constants must be non-negative");
  if (!(prob.rho > 0) || !(prob.rate > 0)) throw DomainError("rho and rate must be positive");
  if (!(prob.comm_time > 0) || !(prob.comp_energy > 0)) throw DomainError("T_comm and E_comp must be positive");
  if (!(prob.p_min > 0 && prob.p_min < prob.p_max && prob.p_max < 1.0))
    throw DomainError("need 0 < p_min < p_max < 1");
  if (prob.h_min < 1 || prob.h_max < prob.h_min) throw DomainError("need 1 <= H_min <= H_max");
}

double theta1(Point x, const JcpProblem& prob) {
  check_point(x);
  const double u = (x.p + prob.q) / (x.p * x.h);
  return prob.a0 * u + prob.b0 * std::sqrt(u) + prob.c0;
}

double theta2(Point x, const JcpProblem& prob) {
  check_point(x);
  return prob.rho * prob.rate * comm_shape(x.p).value * prob.comm_time + x.h * prob.comp_energy;
}

double objective(Point x, const JcpProblem& prob) { return theta1(x, prob) * theta2(x, prob); }

Gradient theta1_gradient(Point x, const JcpProblem& prob) {
  check_point(x);
  const double p = x.p;
  const double h = x.h;
  const double q = prob.q;
  const double spq = std::sqrt(p + q);
  return {-prob.a0 * q / (p * p * h) - prob.b0 * q / (2.0 * std::pow(p, 1.5) * std::sqrt(h) * spq),
          -prob.a0 * (p + q) / (p * h * h) - 0.5 * prob.b0 * spq / (std::sqrt(p) * std::pow(h, 1.5))};
}

Gradient theta2_gradient(Point x, const JcpProblem& prob) {
  check_point(x);
  return {prob.rho * prob.rate * prob.comm_time * comm_shape(x.p).d1, prob.comp_energy};
}

Hessians hessians(Point x, const JcpProblem& prob) {
  check_point(x);
  const double p = x.p;
  const double h = x.h;
  const double q = prob.q;
  const double a = prob.a0;
  const double b = prob.b0;
  const double spq = std::sqrt(p + q);
  Hessians out;
  out.theta1.pp = 2.0 * a * q / (h * p * p * p) +
                  b * q * (4.0 * p + 3.0 * q) / (4.0 * std::sqrt(h) * std::pow(p, 2.5) * std::pow(p + q, 1.5));
  out.theta1.ph = a * q / (h * h * p * p) + b * q / (4.0 * std::pow(h, 1.5) * std::pow(p, 1.5) * spq);
  out.theta1.hh = 2.0 * a * (p + q) / (p * h * h * h) + 3.0 * b * spq / (4.0 * std::pow(h, 2.5) * std::sqrt(p));
  out.theta2.pp = prob.rho * prob.rate * prob.comm_time * comm_shape(p).d2;
  return out;
}

double surrogate(Point x, Point anchor, const JcpProblem& prob) {
  return theta1(x, prob) * theta2(anchor, prob) + theta1(anchor, prob) * theta2(x, prob);
}

Gradient surrogate_gradient(Point x, Point anchor, const JcpProblem& prob) {
  const double t1a = theta1(anchor, prob);
  const double t2a = theta2(anchor, prob);
  const Gradient g1 = theta1_gradient(x, prob);
  const Gradient g2 = theta2_gradient(x, prob);
  return {t2a * g1.p + t1a * g2.p, t2a * g1.h + t1a * g2.h};
}

SubproblemResult solve_surrogate(Point anchor, const JcpProblem& prob, double tolerance) {
  validate(prob);
  const Box box = box_of(prob);
  const double t1a = theta1(anchor, prob);
  const double t2a = theta2(anchor, prob);
  auto value = [&](Point x) { return theta1(x, prob) * t2a + t1a * theta2(x, prob); };

  Point x = project(anchor, box);
  double fx = value(x);
  constexpr int kMaxIterations = 10000;
  constexpr double kArmijo = 1e-4;
  SubproblemResult res;
  for (int it = 0; it < kMaxIterations; ++it) {
    const Gradient g = surrogate_gradient(x, anchor, prob);
    const Point pg_point = project({x.p - g.p, x.h - g.h}, box);
    const double pg = std::max(std::abs(pg_point.p - x.p), std::abs(pg_point.h - x.h));
    if (pg <= tolerance * std::max(1.0, std::abs(fx))) {
      res.x = x;
      res.value = fx;
      res.projected_gradient = pg;
      res.iterations = it;
      return res;
    }

    // Two-metric projection: Newton on free coordinates, diagonal scaling on those held at a bound.
    const Hessians hs = hessians(x, prob);
    const Sym2 hm = add_scaled(hs.theta1, t2a, hs.theta2, t1a);
    const double eps_p = std::min(1e-9, 1e-3 * (box.p_hi - box.p_lo));
    const double eps_h = std::min(1e-9, 1e-3 * (box.h_hi - box.h_lo));
    const bool p_active = (x.p <= box.p_lo + eps_p && g.p > 0) || (x.p >= box.p_hi - eps_p && g.p < 0);
    const bool h_active = (x.h <= box.h_lo + eps_h && g.h > 0) || (x.h >= box.h_hi - eps_h && g.h < 0);
    Gradient dir{g.p, g.h};
    const double det = hm.pp * hm.hh - hm.ph * hm.ph;
    if (!p_active && !h_active && hm.pp > 0 && det > 0) {
      dir = {(hm.hh * g.p - hm.ph * g.h) / det, (hm.pp * g.h - hm.ph * g.p) / det};
    } else {
      if (hm.pp > 0) dir.p = g.p / hm.pp;
      if (hm.hh > 0) dir.h = g.h / hm.hh;
    }

    double step = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 80; ++ls) {
      const Point cand = project({x.p - step * dir.p, x.h - step * dir.h}, box);
      const double fc = value(cand);
      const double decrease = g.p * (x.p - cand.p) + g.h * (x.h - cand.h);
      if (fc <= fx - kArmijo * decrease) {
        moved = cand.p != x.p || cand.h != x.h;
        x = cand;
        fx = fc;
        break;
      }
      step *= 0.5;
    }
    if (!moved) {
      // No representable decrease left: x is optimal to machine precision.
      res.x = x;
      res.value = fx;
      res.projected_gradient = pg;
      res.iterations = it;
      return res;
    }
  }
  throw SolverStallError("surrogate subproblem did not converge in 10^4 iterations");
}

JcpSolution solve_jcp(const JcpProblem& prob, const JcpOptions& options) {
  validate(prob);
  if (!(options.step0 > 0.0 && options.step0 <= 1.0)) throw DomainError("gamma0 must lie in (0, 1]");
  if (!(options.decay > 0.0) || !(options.stop > 0.0)) throw DomainError("xi and iota must be positive");
  const Box box = box_of(prob);

  Point x = options.has_start ? project(options.start, box)
                              : Point{0.5 * (prob.p_min + prob.p_max), 0.5 * (box.h_lo + box.h_hi)};
  double fx = objective(x, prob);
  double gamma = options.step0;

  JcpSolution sol;
  sol.iterates.push_back(x);
  sol.objective_trace.push_back(fx);
  for (int k = 0; k < options.max_iterations; ++k) {
    const Point target = solve_surrogate(x, prob).x;
    const Point next = project({x.p + gamma * (target.p - x.p), x.h + gamma * (target.h - x.h)}, box);
    const double f_next = objective(next, prob);
    if (f_next > fx * (1.0 + 1e-10) + 1e-300)
      throw DiagnosticError("objective increased at iteration " + std::to_string(k + 1) + ": " +
                            std::to_string(fx) + " -> " + std::to_string(f_next));
    const double dp = next.p - x.p;
    const double dh = next.h - x.h;
    x = next;
    fx = f_next;
    gamma *= 1.0 - options.decay * gamma;
    sol.iterates.push_back(x);
    sol.objective_trace.push_back(fx);
    sol.iterations = k + 1;
    if (dp * dp + dh * dh <= options.stop) {
      sol.converged = true;
      break;
    }
  }

  sol.h_relaxed = x.h;
  const double lower = std::floor(x.h);
  int h = static_cast<int>(x.h - lower > 0.5 ? lower + 1.0 : lower);
  h = std::clamp(h, prob.h_min, prob.h_max);
  sol.h = h;
  sol.p = x.p;
  sol.objective = objective({x.p, static_cast<double>(h)}, prob);
  return sol;
}

std::vector<double> probability_grid(const JcpProblem& prob, double step) {
  if (!(step > 0.0)) throw DomainError("grid step must be positive");
  std::vector<double> ps;
  for (long i = 1;; ++i) {
    const double p = static_cast<double>(i) * step;
    if (p > prob.p_max * (1.0 + 1e-12)) break;
    if (p >= prob.p_min) ps.push_back(std::min(p, prob.p_max));
  }
  if (ps.empty() || ps.back() < prob.p_max) ps.push_back(prob.p_max);
  return ps;
}

GridResult grid_search(const JcpProblem& prob, std::span<const double> p_values) {
  validate(prob);
  if (p_values.empty()) throw DomainError("empty probability grid");
  const auto n_h = static_cast<std::size_t>(prob.h_max - prob.h_min + 1);
  const auto cells = static_cast<std::ptrdiff_t>(p_values.size() * n_h);

  double best = std::numeric_limits<double>::infinity();
  std::ptrdiff_t best_idx = -1;
#pragma omp parallel
  {
    double local = std::numeric_limits<double>::infinity();
    std::ptrdiff_t local_idx = -1;
#pragma omp for schedule(static)
    for (std::ptrdiff_t c = 0; c < cells; ++c) {
      const auto uc = static_cast<std::size_t>(c);
      const double v = objective({p_values[uc / n_h], static_cast<double>(prob.h_min) + static_cast<double>(uc % n_h)}, prob);
      if (v < local) {
        local = v;
        local_idx = c;
      }
    }
#pragma omp critical(esoafl_grid_argmin)
    {
      if (local_idx >= 0 && (local < best || (local == best && local_idx < best_idx))) {
        best = local;
        best_idx = local_idx;
      }
    }
  }
  const auto ub = static_cast<std::size_t>(best_idx);
  return {p_values[ub / n_h], prob.h_min + static_cast<int>(ub % n_h), best};
}

GridResult grid_search(const JcpProblem& prob, double p_step) {
  const auto ps = probability_grid(prob, p_step);
  return grid_search(prob, ps);
}

GridResult grid_search_reference(const JcpProblem& prob, std::span<const double> p_values) {
  validate(prob);
  if (p_values.empty()) throw DomainError("empty probability grid");
  GridResult best{0.0, prob.h_min, std::numeric_limits<double>::infinity()};
  for (double p : p_values) {
    for (int h = prob.h_min; h <= prob.h_max; ++h) {
      const double v = objective({p, static_cast<double>(h)}, prob);
      if (v < best.objective) best = {p, h, v};
    }
  }
  return best;
}

}  // namespace esoafl::jcp
