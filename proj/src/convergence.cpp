#include "esoafl/convergence.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <set>

#include "esoafl/errors.hpp"

namespace esoafl::convergence {

namespace {

void check(const BoundParams& bp) {
  if (bp.smoothness < 0 || bp.grad_variance < 0 || bp.noise_var < 0 || bp.initial_gap < 0 || bp.q < 0)
    throw DomainError("bound constants must be non-negative");
  if (!(bp.eta >= 0) || !(bp.theta > 0) || !(bp.local_iterations > 0) || !(bp.rounds > 0) || !(bp.clients > 0))
    throw DomainError("eta, theta, H, R and K must be positive");
  if (!(bp.probability > 0.0 && bp.probability <= 1.0)) throw DomainError("p_b must lie in (0, 1]");
}

double ratio_u(double h, double p, double q) { return (p + q) / (p * h); }

}  // namespace

bool lr_condition(const BoundParams& bp) {
  check(bp);
  const double l = bp.smoothness;
  const double h = bp.local_iterations;
  const double k = bp.clients;
  const double p = bp.probability;
  const double lhs = l * l * bp.eta * bp.eta * h * h +
                     h * l * bp.theta * bp.eta * (bp.q * (2.0 - p) + k * p) / (k * p);
  return lhs <= 1.0 + 1e-12;
}

double theorem1_bound(const BoundParams& bp) {
  if (!lr_condition(bp)) throw NotApplicableError("learning rates violate the bound's step-size condition");
  const double l = bp.smoothness;
  const double h = bp.local_iterations;
  const double k = bp.clients;
  const double p = bp.probability;
  const double et = bp.eta * bp.theta;
  return 2.0 * bp.initial_gap / (et * h * bp.rounds) + et * l / k * (p + bp.q) / p * bp.grad_variance +
         bp.eta * bp.eta * l * l * h * bp.grad_variance + et * l / (h * k * k * p * p) * bp.noise_var;
}

double chi(double probability, double q) {
  if (!(probability > 0.0)) throw DomainError("p_b must be positive");
  return std::sqrt((probability + q) / probability);
}

double linear_speedup_rate(const BoundParams& bp) {
  check(bp);
  const double l = bp.smoothness;
  const double h = bp.local_iterations;
  const double k = bp.clients;
  const double r = bp.rounds;
  const double p = bp.probability;
  const double x = chi(p, bp.q) / std::sqrt(k * r * h);
  return 2.0 * l * bp.initial_gap * x + x * bp.grad_variance + k * bp.grad_variance / (r * bp.theta * bp.theta) +
         std::sqrt(1.0 / (k * k * k * r * h * h * h * (p + bp.q) * p * p * p)) * bp.noise_var;
}

double corollary_rounds(double target, const BoundParams& bp) {
  check(bp);
  if (!(target > 0.0)) throw DomainError("target must be positive");
  const double c = chi(bp.probability, bp.q);
  const double delta = 2.0 * bp.smoothness * bp.initial_gap;
  const double s2 = bp.grad_variance;
  const double h = bp.local_iterations;
  const double k = bp.clients;
  const double th = bp.theta;
  const double m = c * (delta + s2) * th;
  const double root = std::sqrt(4.0 * target * s2 * h * k * k + m * m);
  return (2.0 * target * s2 * h * k * k + m * m + m * root) / (2.0 * target * target * th * th * h * k);
}

double rounds_model(double local_iterations, double probability, const RoundModelConstants& c) {
  if (!(local_iterations > 0.0)) throw DomainError("H must be positive");
  if (!(probability > 0.0 && probability <= 1.0)) throw DomainError("p_b must lie in (0, 1]");
  const double u = ratio_u(local_iterations, probability, c.q);
  return c.a0 * u + c.b0 * std::sqrt(u) + c.c0;
}

FitResult fit_constants(std::span<const RoundSample> samples, double q, FitWeighting weighting) {
  if (samples.size() < 6) throw IllPosedFitError("need at least 6 samples");
  if (!(q >= 0.0)) throw DomainError("q must be non-negative");
  std::set<int> hs;
  std::set<double> ps;
  for (const auto& s : samples) {
    if (s.local_iterations < 1 || !(s.probability > 0.0 && s.probability <= 1.0) || !std::isfinite(s.rounds))
      throw DomainError("sample outside the model domain");
    if (weighting == FitWeighting::relative && !(s.rounds > 0.0))
      throw DomainError("relative weighting needs positive round counts");
    hs.insert(s.local_iterations);
    ps.insert(s.probability);
  }
  if (hs.size() < 2 || ps.size() < 2) throw IllPosedFitError("samples must span at least two H and two p_b values");

  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd jac(n, 3);
  Eigen::VectorXd target(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    const double u = ratio_u(s.local_iterations, s.probability, q);
    // The model is linear in the constants, so weighting a row just scales it.
    const double w = weighting == FitWeighting::relative ? 1.0 / s.rounds : 1.0;
    jac(i, 0) = w * u;
    jac(i, 1) = w * std::sqrt(u);
    jac(i, 2) = w;
    target(i) = w * s.rounds;
  }
  // Identifiability on column-normalised Jacobian.
  Eigen::VectorXd col_norm = jac.colwise().norm();
  const Eigen::MatrixXd scaled = jac * col_norm.cwiseInverse().asDiagonal();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(scaled);
  const auto sv = svd.singularValues();
  if (sv(2) < 1e-10 * sv(0)) throw IllPosedFitError("sample design does not identify all three constants");

  const Eigen::MatrixXd jtj = jac.transpose() * jac;
  auto residual = [&](const Eigen::Vector3d& x) { return Eigen::VectorXd(jac * x - target); };

  Eigen::Vector3d x(1.0, 1.0, 1.0);
  Eigen::VectorXd r = residual(x);
  double ssr = r.squaredNorm();
  double damping = 1e-3;

  FitResult out;
  out.residual_trace.push_back(std::sqrt(ssr));
  constexpr int kMaxIterations = 500;
  int it = 0;
  for (; it < kMaxIterations; ++it) {
    const Eigen::Vector3d grad = jac.transpose() * r;
    bool accepted = false;
    for (int tries = 0; tries < 60; ++tries) {
      Eigen::Matrix3d lhs = jtj;
      lhs.diagonal() += damping * jtj.diagonal();
      const Eigen::Vector3d step = lhs.ldlt().solve(-grad);
      const Eigen::Vector3d cand = (x + step).cwiseMax(0.0);
      const Eigen::VectorXd rc = residual(cand);
      const double ssr_c = rc.squaredNorm();
      if (ssr_c < ssr) {
        const double gain = ssr - ssr_c;
        x = cand;
        r = rc;
        ssr = ssr_c;
        damping = std::max(damping / 3.0, 1e-12);
        accepted = true;
        out.residual_trace.push_back(std::sqrt(ssr));
        if (gain <= 1e-28 * std::max(1.0, ssr) || step.norm() <= 1e-15 * (1.0 + x.norm())) it = kMaxIterations;
        break;
      }
      damping *= 4.0;
    }
    if (!accepted) break;
  }
  out.iterations = static_cast<int>(out.residual_trace.size()) - 1;
  out.constants = {x(0), x(1), x(2), q};
  out.residual_norm = std::sqrt(ssr);
  return out;
}

}  // namespace esoafl::convergence
