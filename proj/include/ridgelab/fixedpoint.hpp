#pragma once

// Effective regularization τ* and effective noise γ*² of ridge(less) regression.
//
// τ* is the unique root of   n⁻¹ Σ_j λ_j/(λ_j+τ) + η/τ = φ,
// γ*² then follows in closed form, and every derivative quantity (τ', τ'',
// γ̃², Stieltjes values) is an explicit function of τ*. Finite differences
// appear only in the tests.

#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "ridgelab/error.hpp"
#include "ridgelab/spectrum.hpp"

namespace ridgelab {

struct ProblemConfig {
  double phi = 0.5;       // m / n
  double eta = 0.0;       // ridge regularization
  double sigma_sq = 1.0;  // noise variance
  CovarianceModel model = CovarianceModel::isotropic(1);
  SignalVector signal = SignalVector::zeros(1);

  ProblemConfig with_eta(double new_eta) const {
    ProblemConfig c = *this;
    c.eta = new_eta;
    return c;
  }

  /// Checks the parameter domain; η = 0 with φ >= 1 raises NoSolution.
  void validate() const {
    detail::require(std::isfinite(phi) && phi > 0, "phi must be positive");
    detail::require(std::isfinite(eta) && eta >= 0, "eta must be nonnegative");
    detail::require(std::isfinite(sigma_sq) && sigma_sq >= 0, "sigma_sq must be nonnegative");
    model.check_dim(signal.size());
    if (eta == 0.0 && phi >= 1.0)
      throw NoSolution(
          "no solution: eta = 0 (interpolation) requires phi = m/n < 1; the fixed point exists for "
          "eta > 0 or m < n only");
  }
};

struct TauBounds {
  double lo;
  double hi;
};

struct TauDerivatives {
  double first;
  double second;
};

/// Stieltjes transform of the companion spectrum and its first two derivatives at z = -η/φ.
struct StieltjesValues {
  double m;
  double m_prime;
  double m_second;
};

struct EffectiveParams {
  double eta = 0.0;
  double tau = 0.0;
  double gamma_sq = 0.0;
  double tau_prime = 0.0;
  double tau_second = 0.0;
  double gamma_tilde_sq = 0.0;
  double m = 0.0;
  double m_prime = 0.0;
  double m_second = 0.0;
};

/// E err(γ;τ) = τ²‖(Σ+τI)⁻¹Σ^{1/2}μ0‖² + γ²·T_{-2,2}(τ).
inline double expected_err(const CovarianceModel& model, const SignalVector& mu0, double gamma_sq,
                           double tau) {
  detail::require(tau > 0, "expected_err requires tau > 0");
  detail::require(gamma_sq >= 0, "expected_err requires gamma_sq >= 0");
  return tau * tau * quad_form(model, mu0, tau, 1, 1) + gamma_sq * trace_functional(model, tau, 2, 2);
}

/// E dof(γ;τ) = γ²·T_{-1,1}(τ).
inline double expected_dof(const CovarianceModel& model, double gamma_sq, double tau) {
  detail::require(tau > 0, "expected_dof requires tau > 0");
  detail::require(gamma_sq >= 0, "expected_dof requires gamma_sq >= 0");
  return gamma_sq * trace_functional(model, tau, 1, 1);
}

inline TauBounds tau_bounds(const ProblemConfig& cfg) {
  cfg.validate();
  const double h = harmonic_mean(cfg.model);
  const double one_minus = 1.0 - cfg.phi;
  const double lo = (one_minus + std::sqrt(one_minus * one_minus + 4.0 * h * cfg.eta)) / (2.0 * h);

  // hi = min_k (Σ_{j>k} λ_j + nη)/(m-k) over integers k < m, k <= n.
  const double n = static_cast<double>(cfg.model.dim());
  const double m = cfg.phi * n;
  double tail = 0.0;
  for (const auto& g : cfg.model.groups()) tail += static_cast<double>(g.multiplicity) * g.value;
  double hi = std::numeric_limits<double>::infinity();
  double k = 0.0;
  auto consider = [&]() {
    if (m - k > 0) hi = std::min(hi, (std::max(tail, 0.0) + n * cfg.eta) / (m - k));
  };
  consider();
  for (const auto& g : cfg.model.groups()) {
    for (Index c = 0; c < g.multiplicity; ++c) {
      if (k + 1.0 >= m) break;
      tail -= g.value;
      k += 1.0;
      consider();
    }
    if (k + 1.0 >= m) break;
  }
  return {lo, hi};
}

namespace detail {

// f(τ) - φ with f(τ) = T_{-1,1}(τ) + η/τ, strictly decreasing in τ.
inline double tau_equation(const ProblemConfig& cfg, double tau) {
  return trace_functional(cfg.model, tau, 1, 1) + cfg.eta / tau - cfg.phi;
}

inline double tau_equation_slope(const ProblemConfig& cfg, double tau) {
  return -trace_functional(cfg.model, tau, 2, 1) - cfg.eta / (tau * tau);
}

}  // namespace detail

/// Root of the trace equation by bracketed bisection refined with safeguarded Newton.
inline double solve_tau(const ProblemConfig& cfg, double tol = 1e-12) {
  const TauBounds b = tau_bounds(cfg);
  const double target = tol * std::max(1.0, cfg.phi);
  double lo = b.lo;
  double hi = b.hi;
  double g_lo = detail::tau_equation(cfg, lo);
  double g_hi = detail::tau_equation(cfg, hi);
  if (std::abs(g_lo) <= target) return lo;
  if (std::abs(g_hi) <= target) return hi;
  if (!(g_lo > 0 && g_hi < 0))
    throw NonConvergence("solve_tau: bracket from tau_bounds does not enclose the root");

  constexpr int kMaxBisections = 500;
  constexpr int kMaxNewton = 50;
  int bisections = 0;
  int newton = 0;
  double x = 0.5 * (lo + hi);
  while (bisections < kMaxBisections) {
    const double g = detail::tau_equation(cfg, x);
    if (std::abs(g) <= target) return x;
    if (g > 0) lo = x; else hi = x;
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi) return x;
    double next = 0.5 * (lo + hi);
    if (newton < kMaxNewton) {
      const double cand = x - g / detail::tau_equation_slope(cfg, x);
      ++newton;
      if (cand > lo && cand < hi) next = cand; else ++bisections;
    } else {
      ++bisections;
    }
    x = next;
  }
  throw NonConvergence("solve_tau: iteration cap reached");
}

/// γ*² = (σ² + τ²‖(Σ+τI)⁻¹Σ^{1/2}μ0‖²) / (η/τ + τ·T_{-2,1}(τ)).
inline double solve_gamma_sq(const ProblemConfig& cfg, double tau) {
  detail::require(tau > 0, "solve_gamma_sq requires tau > 0");
  const double denom = cfg.eta / tau + tau * trace_functional(cfg.model, tau, 2, 1);
  if (!(denom > 1e-14))
    throw DegenerateDenominator("solve_gamma_sq: denominator " + std::to_string(denom) +
                                " is not positive");
  const double numer = cfg.sigma_sq + tau * tau * quad_form(cfg.model, cfg.signal, tau, 1, 1);
  return numer / denom;
}

/// τ' = τ/G0, τ'' = -2τ²τ'·T_{-3,2}/G0² with G0 = η + τ²T_{-2,1}.
inline TauDerivatives tau_derivatives(const ProblemConfig& cfg, double tau) {
  detail::require(tau > 0, "tau_derivatives requires tau > 0");
  const double g0 = cfg.eta + tau * tau * trace_functional(cfg.model, tau, 2, 1);
  const double first = tau / g0;
  const double second = -2.0 * tau * tau * first * trace_functional(cfg.model, tau, 3, 2) / (g0 * g0);
  return {first, second};
}

/// γ̃² = σ²τ' + ‖μ0‖²(τ - ητ').
inline double gamma_tilde_sq(double sigma_sq, double signal_norm_sq, double eta, double tau,
                             double tau_prime) {
  return sigma_sq * tau_prime + signal_norm_sq * (tau - eta * tau_prime);
}

inline StieltjesValues stieltjes_at(double phi, double tau, double tau_prime, double tau_second) {
  detail::require(tau > 0, "stieltjes_at requires tau > 0");
  return {1.0 / tau, phi * tau_prime / (tau * tau),
          -phi * phi * (tau_second * tau - 2.0 * tau_prime * tau_prime) / (tau * tau * tau)};
}

inline EffectiveParams solve_effective(const ProblemConfig& cfg) {
  EffectiveParams p;
  p.eta = cfg.eta;
  p.tau = solve_tau(cfg);
  p.gamma_sq = solve_gamma_sq(cfg, p.tau);
  const TauDerivatives d = tau_derivatives(cfg, p.tau);
  p.tau_prime = d.first;
  p.tau_second = d.second;
  p.gamma_tilde_sq = gamma_tilde_sq(cfg.sigma_sq, cfg.signal.norm_sq(), cfg.eta, p.tau, p.tau_prime);
  const StieltjesValues s = stieltjes_at(cfg.phi, p.tau, p.tau_prime, p.tau_second);
  p.m = s.m;
  p.m_prime = s.m_prime;
  p.m_second = s.m_second;
  return p;
}

/// Residuals of the two fixed-point equations at the solved pair:
///   first  = φγ² - σ² - E err(γ;τ),
///   second = (φ - η/τ)γ² - E dof(γ;τ).
inline std::pair<double, double> fixed_point_residuals(const ProblemConfig& cfg,
                                                       const EffectiveParams& p) {
  const double first = cfg.phi * p.gamma_sq - cfg.sigma_sq -
                       expected_err(cfg.model, cfg.signal, p.gamma_sq, p.tau);
  const double second =
      (cfg.phi - cfg.eta / p.tau) * p.gamma_sq - expected_dof(cfg.model, p.gamma_sq, p.tau);
  return {first, second};
}

/// Right side of z = -1/𝔪 + φ⁻¹ n⁻¹ tr((I + Σ𝔪)⁻¹Σ); equals -η/φ at the solved 𝔪.
inline double stieltjes_equation_rhs(const CovarianceModel& model, double phi, double m_val) {
  return -1.0 / m_val + model.spectral_mean([&](double l) { return l / (1.0 + l * m_val); }) / phi;
}

}  // namespace ridgelab
