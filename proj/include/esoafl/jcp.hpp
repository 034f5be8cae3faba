#pragma once

// Joint choice of local iterations H and transmission probability p_b minimising
// total energy = rounds(H, p_b) * per-round energy(H, p_b), written as the product
// Theta1 * Theta2 of two positive convex functions and solved by successive inner
// convex approximation.

#include <cstddef>
#include <span>
#include <vector>

namespace esoafl::jcp {

struct JcpProblem {
  // Round model R = A0 (p+q)/(pH) + B0 sqrt((p+q)/(pH)) + C0.
  double a0 = 0.0;
  double b0 = 0.0;
  double c0 = 1.0;
  double q = 0.0;
  // Per-round energy rho lambda p^2 ln(1 - 1/ln p) T_comm + H E_comp.
  double rho = 1.0;
  double rate = 1.0;
  double comm_time = 1.0;
  double comp_energy = 1.0;
  // Feasible box.
  double p_min = 1e-4;
  double p_max = 0.77;
  int h_min = 1;
  int h_max = 50;
};

void validate(const JcpProblem& prob);

struct Point {
  double p = 0.5;  // p_b
  double h = 1.0;  // H (relaxed to a real)
};

struct Gradient {
  double p = 0.0;
  double h = 0.0;
};

/// Symmetric 2x2 matrix over (p_b, H).
struct Sym2 {
  double pp = 0.0;
  double ph = 0.0;
  double hh = 0.0;
};

double theta1(Point x, const JcpProblem& prob);
double theta2(Point x, const JcpProblem& prob);
double objective(Point x, const JcpProblem& prob);

Gradient theta1_gradient(Point x, const JcpProblem& prob);
Gradient theta2_gradient(Point x, const JcpProblem& prob);

struct Hessians {
  Sym2 theta1;
  Sym2 theta2;
};

/// Closed-form second derivatives of Theta1 and Theta2.
Hessians hessians(Point x, const JcpProblem& prob);

/// Theta1(x) Theta2(anchor) + Theta1(anchor) Theta2(x).
double surrogate(Point x, Point anchor, const JcpProblem& prob);
Gradient surrogate_gradient(Point x, Point anchor, const JcpProblem& prob);

struct SubproblemResult {
  Point x;
  double value = 0.0;
  double projected_gradient = 0.0;  // inf-norm of P(x - grad) - x
  int iterations = 0;
};

/// Minimises the surrogate over [p_min, p_max] x [h_min, h_max] by two-metric projected
/// Newton with Armijo backtracking. Throws SolverStallError after 10^4 iterations.
SubproblemResult solve_surrogate(Point anchor, const JcpProblem& prob, double tolerance = 1e-8);

struct JcpOptions {
  double step0 = 1.0;   // gamma^0 in (0, 1]
  double decay = 1e-5;  // xi
  double stop = 1e-5;   // iota, on ||phi^k - phi^{k-1}||^2
  int max_iterations = 10000;
  bool has_start = false;
  Point start;
};

struct JcpSolution {
  double p = 0.0;
  int h = 1;
  double h_relaxed = 1.0;
  double objective = 0.0;
  std::vector<Point> iterates;
  std::vector<double> objective_trace;  // Theta at each relaxed iterate
  int iterations = 0;
  bool converged = false;
};

/// Successive inner convex approximation: phi <- phi + gamma (phi*(phi) - phi) with
/// gamma^k = gamma^{k-1}(1 - xi gamma^{k-1}), until the squared step is <= iota; then H is
/// rounded to the nearest integer (ties to the smaller). Throws DiagnosticError if the
/// objective ever increases between iterates.
JcpSolution solve_jcp(const JcpProblem& prob, const JcpOptions& options = {});

struct GridResult {
  double p = 0.0;
  int h = 1;
  double objective = 0.0;
};

/// Multiples of `step` inside [p_min, p_max], with p_max appended when off-grid.
std::vector<double> probability_grid(const JcpProblem& prob, double step);

/// Exhaustive minimum of Theta over p_values x {h_min..h_max}; lowest flat index wins ties.
/// Parallel over cells.
GridResult grid_search(const JcpProblem& prob, std::span<const double> p_values);
GridResult grid_search(const JcpProblem& prob, double p_step = 0.001);

/// Serial reference for `grid_search`.
GridResult grid_search_reference(const JcpProblem& prob, std::span<const double> p_values);

}  // namespace esoafl::jcp
