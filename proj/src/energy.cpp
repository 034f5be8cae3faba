#include "esoafl/energy.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "esoafl/errors.hpp"

namespace esoafl::energy {

namespace {

constexpr int kMaxTerms = 500;

double e1_series(double x) {
  // E1(x) = -gamma - ln x - sum_{n>=1} (-x)^n / (n n!)
  double sum = 0.0;
  double term = 1.0;
  for (int n = 1; n < kMaxTerms; ++n) {
    term *= -x / n;
    const double add = term / n;
    sum += add;
    if (std::abs(add) < 1e-17 * std::abs(sum)) break;
  }
  return -std::numbers::egamma - std::log(x) - sum;
}

double e1_continued_fraction(double x) {
  // e^-x / (x + 1 - 1/(x + 3 - 4/(x + 5 - ...))), modified Lentz.
  constexpr double tiny = 1e-300;
  double b = x + 1.0;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kMaxTerms; ++i) {
    const double an = -static_cast<double>(i) * i;
    b += 2.0;
    d = 1.0 / (an * d + b);
    c = b + an / c;
    const double delta = c * d;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return h * std::exp(-x);
}

double rho_for_budget(double power_budget, double max_probability, double rate) {
  return -power_budget * std::log(max_probability) / rate;
}

}  // namespace

double e1(double x) {
  if (!(x > 0.0)) throw DomainError("E1 is defined for x > 0");
  if (std::isinf(x)) return 0.0;
  return x <= 1.0 ? e1_series(x) : e1_continued_fraction(x);
}

double e1_upper_bound(double x) {
  if (!(x > 0.0)) throw DomainError("E1 bound is defined for x > 0");
  return std::exp(-x) * std::log1p(1.0 / x);
}

double comm_power(double probability, double rho, double rate, bool exact) {
  if (!(probability > 0.0)) throw DomainError("p_b must be positive");
  if (!(probability < 1.0)) throw DomainError("average inversion power diverges at p_b = 1");
  const double ln_p = std::log(probability);
  if (exact) return probability * rho * rate * e1(-ln_p);
  return rho * rate * probability * probability * std::log1p(-1.0 / ln_p);
}

double comm_time(std::size_t dimension, double parallel_symbols, double symbol_time) {
  if (!(parallel_symbols > 0.0) || !(symbol_time > 0.0)) throw DomainError("airtime parameters must be positive");
  const std::size_t symbols = (dimension + 1) / 2;
  return static_cast<double>(symbols) * symbol_time / parallel_symbols;
}

double comm_energy(double probability, const CommParams& comm) {
  return comm_power(probability, comm.rho, comm.rate, true) *
         comm_time(comm.dimension, comm.parallel_symbols, comm.symbol_time);
}

double comp_power(const CompParams& cp) {
  return cp.static_power + cp.mem_coeff * cp.f_mem + cp.core_coeff * cp.v_core * cp.v_core * cp.f_core;
}

double comp_time(const CompParams& cp) {
  if (!(cp.f_mem > 0.0) || !(cp.f_core > 0.0)) throw DomainError("frequencies must be positive");
  return cp.static_time + cp.mem_time / cp.f_mem + cp.core_time / cp.f_core;
}

double comp_energy(const CompParams& cp) { return comp_power(cp) * comp_time(cp); }

double round_energy(double probability, int local_iterations, const CommParams& comm, const CompParams& cp) {
  if (local_iterations < 0) throw DomainError("local iterations must be non-negative");
  return comm_energy(probability, comm) + static_cast<double>(local_iterations) * comp_energy(cp);
}

double orthogonal_upload_energy(std::size_t dimension, double bits_per_value, double bits_per_symbol, double power,
                                const CommParams& comm) {
  const double symbols = std::ceil(static_cast<double>(dimension) * bits_per_value / bits_per_symbol);
  return power * symbols * comm.symbol_time / comm.parallel_symbols;
}

std::vector<EnergyProfile> builtin_profiles() {
  CommParams lte;
  lte.rate = 1.0;
  lte.rho = rho_for_budget(0.2, 0.77, lte.rate);
  lte.bandwidth = 15e3;
  lte.symbol_time = 1.0 / lte.bandwidth;
  lte.parallel_symbols = 12;

  EnergyProfile small{"small-learner", lte, CompParams{}};
  small.comm.dimension = 61706;  // LeNet-5

  EnergyProfile large{"large-learner", lte, CompParams{}};
  large.comm.dimension = 272474;  // ResNet-20
  large.comp.static_power = 1.0;
  large.comp.mem_coeff = 0.5;
  large.comp.core_coeff = 1.59;
  large.comp.mem_time = 0.0373;
  large.comp.core_time = 0.13;
  large.comp.static_time = 0.010;
  return {small, large};
}

EnergyProfile builtin_profile(const std::string& name) {
  for (auto& p : builtin_profiles())
    if (p.name == name) return p;
  throw ConfigError("unknown energy profile '" + name + "'");
}

}  // namespace esoafl::energy
