#pragma once

// Theoretical risk curves of ridge(less) regression, their random-matrix forms,
// derivative factors, optimally tuned risks and the weighted ℓ_q risk formula.
//
// Signal strength is always carried as the pair (σ², ‖μ0‖²); the product
// σ²·SNR is ‖μ0‖², so the noiseless case needs no infinity sentinel.

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ridgelab/error.hpp"
#include "ridgelab/fixedpoint.hpp"
#include "ridgelab/spectrum.hpp"

namespace ridgelab {

enum class RiskKind { Pred, Est, Ins, Res };

inline constexpr std::array<RiskKind, 4> kAllRiskKinds = {RiskKind::Pred, RiskKind::Est,
                                                          RiskKind::Ins, RiskKind::Res};

inline std::string to_string(RiskKind k) {
  switch (k) {
    case RiskKind::Pred: return "pred";
    case RiskKind::Est: return "est";
    case RiskKind::Ins: return "ins";
    case RiskKind::Res: return "res";
  }
  return "?";
}

inline RiskKind parse_risk_kind(const std::string& s) {
  for (RiskKind k : kAllRiskKinds)
    if (to_string(k) == s) return k;
  throw InvalidArgument("unknown risk kind '" + s + "' (expected pred, est, ins or res)");
}

/// R̄^# evaluated from the solved fixed point.
inline double theoretical_risk(RiskKind kind, const EffectiveParams& p, const CovarianceModel& model,
                               const SignalVector& mu0, double sigma_sq, double phi) {
  const double tau = p.tau;
  const double tau2 = tau * tau;
  switch (kind) {
    case RiskKind::Pred:
      return tau2 * quad_form(model, mu0, tau, 1, 1) + p.gamma_sq * trace_functional(model, tau, 2, 2);
    case RiskKind::Est:
      return tau2 * quad_form(model, mu0, tau, 1, 0) + p.gamma_sq * trace_functional(model, tau, 2, 1);
    case RiskKind::Ins: {
      const double shrink = p.eta / tau;
      return shrink * shrink * p.gamma_sq + phi * sigma_sq * (1.0 - 2.0 * p.eta / (phi * tau));
    }
    case RiskKind::Res: {
      const double shrink = p.eta / tau;
      return shrink * shrink * p.gamma_sq;
    }
  }
  throw InvalidArgument("theoretical_risk: bad kind");
}

/// 𝓡^# in terms of 𝔪, 𝔪' at z = -η/φ.
inline double rmt_risk(RiskKind kind, const EffectiveParams& p, double sigma_sq, double signal_norm_sq,
                       double phi) {
  detail::require(sigma_sq >= 0 && signal_norm_sq >= 0, "rmt_risk: negative energy");
  const double eta = p.eta;
  const double r2 = signal_norm_sq;  // σ²·SNR
  const double tilt = eta * r2 - sigma_sq;  // σ²(η·SNR − 1)
  const double core = phi * r2 * p.m - tilt * p.m_prime;
  switch (kind) {
    case RiskKind::Pred:
      return core / (p.m * p.m) - sigma_sq;
    case RiskKind::Est:
      return r2 * (1.0 - phi) + sigma_sq * p.m + (eta / phi) * tilt * p.m_prime;
    case RiskKind::Ins:
      return (eta * eta / phi) * core + sigma_sq * (phi - 2.0 * eta * p.m);
    case RiskKind::Res:
      return (eta * eta / phi) * core;
  }
  throw InvalidArgument("rmt_risk: bad kind");
}

/// 𝔐^# via the effective regularization; undefined for Res.
inline double derivative_factor(RiskKind kind, const EffectiveParams& p, const CovarianceModel& model,
                                double phi) {
  const double tau = p.tau;
  const double tp = p.tau_prime;
  switch (kind) {
    case RiskKind::Pred:
      return phi * (-p.tau_second);
    case RiskKind::Est: {
      const double t31 = trace_functional(model, tau, 3, 1);
      const double t21 = trace_functional(model, tau, 2, 1);
      const double t32 = trace_functional(model, tau, 3, 2);
      return 2.0 * tp * tp * (t31 + tp * t21 * t32);
    }
    case RiskKind::Ins: {
      const double t21 = trace_functional(model, tau, 2, 1);
      const double t32 = trace_functional(model, tau, 3, 2);
      return 2.0 * tp * tp / (tau * tau) * (p.eta * p.eta * tp * t32 + tau * tau * tau * t21 * t21);
    }
    case RiskKind::Res:
      break;
  }
  throw InvalidArgument("derivative_factor: the residual risk has no derivative factor");
}

/// ∂_η 𝓡^# = σ²·𝔐^#·(η·SNR − 1) = 𝔐^#·(η‖μ0‖² − σ²).
inline double risk_derivative(RiskKind kind, const EffectiveParams& p, const CovarianceModel& model,
                              double sigma_sq, double signal_norm_sq, double phi) {
  return derivative_factor(kind, p, model, phi) * (p.eta * signal_norm_sq - sigma_sq);
}

/// η* = SNR⁻¹ = σ²/‖μ0‖².
inline double optimal_eta(double sigma_sq, double signal_norm_sq) {
  detail::require(sigma_sq >= 0 && signal_norm_sq >= 0, "optimal_eta: negative energy");
  if (sigma_sq == 0.0 && signal_norm_sq == 0.0)
    throw BothZero("optimal_eta: noise and signal are both zero");
  if (sigma_sq == 0.0) return 0.0;
  if (signal_norm_sq == 0.0) return std::numeric_limits<double>::infinity();
  return sigma_sq / signal_norm_sq;
}

struct OptRisks {
  double pred;
  double est;
  double ins;
};

/// Optimally tuned risks normalized by σ², from τ at η = η*.
inline OptRisks opt_risks(double phi, double eta_star, double tau_at_eta_star) {
  detail::require(eta_star > 0 && std::isfinite(eta_star), "opt_risks requires 0 < eta_star < inf");
  detail::require(tau_at_eta_star > 0, "opt_risks requires tau > 0");
  return {phi * tau_at_eta_star / eta_star - 1.0, (1.0 - phi) / eta_star + 1.0 / tau_at_eta_star,
          -eta_star / tau_at_eta_star + phi};
}

namespace detail {

// Lanczos approximation (g = 7, 9 terms) of log Γ(x), x > 0.
inline double lanczos_lgamma(double x) {
  static constexpr double kCoef[9] = {0.99999999999980993,     676.5203681218851,
                                      -1259.1392167224028,     771.32342877765313,
                                      -176.61502916214059,     12.507343278686905,
                                      -0.13857109526572012,    9.9843695780195716e-6,
                                      1.5056327351493116e-7};
  constexpr double kPi = 3.14159265358979323846;
  if (x < 0.5) return std::log(kPi / std::abs(std::sin(kPi * x))) - lanczos_lgamma(1.0 - x);
  x -= 1.0;
  double a = kCoef[0];
  const double t = x + 7.5;
  for (int i = 1; i < 9; ++i) a += kCoef[i] / (x + i);
  return 0.5 * std::log(2.0 * kPi) + (x + 0.5) * std::log(t) - t + std::log(a);
}

}  // namespace detail

/// M_q = E^{1/q}|N(0,1)|^q = √2·(Γ((q+1)/2)/√π)^{1/q}, evaluated in log space.
inline double gaussian_abs_moment(double q) {
  detail::require(std::isfinite(q) && q > 0, "gaussian_abs_moment requires q > 0");
  const double log_pi = std::log(3.14159265358979323846);
  return std::exp(0.5 * std::log(2.0) + (detail::lanczos_lgamma(0.5 * (q + 1.0)) - 0.5 * log_pi) / q);
}

/// Weight matrix A of the weighted ℓ_q risk.
class LqWeight {
 public:
  enum class Kind { Identity, EigenDiagonal, Dense };

  static constexpr Index kDenseLimit = 5000;

  static LqWeight identity() { return LqWeight(Kind::Identity); }

  /// A = B·diag(a)·Bᵀ in the model's eigenbasis; `a` aligned with eigenvalues(model).
  static LqWeight eigen_diagonal(Vector a) {
    for (Index j = 0; j < a.size(); ++j)
      detail::require(std::isfinite(a(j)) && a(j) >= 0, "eigen-diagonal weights must be nonnegative");
    LqWeight w(Kind::EigenDiagonal);
    w.values_ = std::move(a);
    return w;
  }

  /// Dense symmetric p.s.d. A (checked by an eigenvalue test).
  static LqWeight dense(Matrix a) {
    detail::require(a.rows() == a.cols(), "weight matrix must be square");
    detail::require(a.rows() <= kDenseLimit, "dense weight matrix exceeds the n <= 5000 guard");
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    detail::require((a - a.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale,
                    "weight matrix must be symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() < -1e-10 * scale)
      throw InvalidArgument("weight matrix is not positive semidefinite");
    LqWeight w(Kind::Dense);
    w.matrix_ = std::move(a);
    return w;
  }

  Kind kind() const { return kind_; }
  const Vector& values() const { return values_; }
  const Matrix& matrix() const { return matrix_; }

  /// A·v.
  Vector apply(const CovarianceModel& model, const Vector& v) const {
    switch (kind_) {
      case Kind::Identity:
        return v;
      case Kind::Dense:
        return matrix_ * v;
      case Kind::EigenDiagonal:
      default:
        return eigen_action(model, v);
    }
  }

 private:
  explicit LqWeight(Kind k) : kind_(k) {}

  Vector eigen_action(const CovarianceModel& model, const Vector& v) const {
    check_eigen(model);
    switch (model.kind()) {
      case CovarianceModel::Kind::Isotropic:
        return values_.cwiseProduct(v);
      case CovarianceModel::Kind::SpikedUniform: {
        const double top = values_(0);
        const double bulk = model.dim() > 1 ? values_(1) : top;
        const double value_top = model.groups().front().value;
        return model.apply(v, [&](double l) { return l == value_top ? top : bulk; });
      }
      case CovarianceModel::Kind::Explicit:
      default:
        if (!model.has_basis()) return values_.cwiseProduct(v);
        return model.basis() * values_.cwiseProduct(model.basis().transpose() * v);
    }
  }

  void check_eigen(const CovarianceModel& model) const {
    model.check_dim(values_.size());
    if (model.kind() == CovarianceModel::Kind::SpikedUniform && values_.size() > 2) {
      const double bulk = values_(1);
      for (Index j = 2; j < values_.size(); ++j)
        detail::require(values_(j) == bulk,
                        "eigen-diagonal weights must be constant on the degenerate eigenspace");
    }
  }

  friend Vector lq_gamma_diag(const LqWeight&, const CovarianceModel&, const EffectiveParams&, double);

  Kind kind_;
  Vector values_;
  Matrix matrix_;
};

/// diag(Γ) with Γ = A(Σ+τI)⁻¹(γ̃²Σ + τ²‖μ0‖²I)(Σ+τI)⁻¹A.
inline Vector lq_gamma_diag(const LqWeight& weight, const CovarianceModel& model, const EffectiveParams& p,
                            double signal_norm) {
  const double tau = p.tau;
  const double gt2 = p.gamma_tilde_sq;
  const double energy = tau * tau * signal_norm * signal_norm;
  auto inner = [&](double l) { return (gt2 * l + energy) / ((l + tau) * (l + tau)); };
  switch (weight.kind()) {
    case LqWeight::Kind::Identity:
      return model.diagonal(inner);
    case LqWeight::Kind::EigenDiagonal: {
      weight.check_eigen(model);
      const Vector& a = weight.values();
      switch (model.kind()) {
        case CovarianceModel::Kind::Isotropic:
          return a.cwiseAbs2() * inner(model.scale());
        case CovarianceModel::Kind::SpikedUniform: {
          const double top = a(0) * a(0);
          const double bulk = model.dim() > 1 ? a(1) * a(1) : top;
          const double value_top = model.groups().front().value;
          return model.diagonal([&](double l) { return (l == value_top ? top : bulk) * inner(l); });
        }
        case CovarianceModel::Kind::Explicit:
        default: {
          Vector v(model.dim());
          for (Index j = 0; j < model.dim(); ++j)
            v(j) = a(j) * a(j) * inner(model.groups()[static_cast<std::size_t>(j)].value);
          if (!model.has_basis()) return v;
          return model.basis().cwiseAbs2() * v;
        }
      }
    }
    case LqWeight::Kind::Dense:
    default: {
      const Matrix& a = weight.matrix();
      model.check_dim(a.rows());
      detail::require(model.dim() <= LqWeight::kDenseLimit, "dense weight path guarded to n <= 5000");
      const Matrix inner_dense = model.dense(inner);
      return ((a * inner_dense).cwiseProduct(a)).rowwise().sum();
    }
  }
}

/// n^{-1/2}·‖diag Γ‖_{q/2}^{1/2}·M_q.
inline double lq_risk(double q, const Vector& gamma_diag, Index n) {
  detail::require(std::isfinite(q) && q > 0, "lq_risk requires q > 0");
  detail::require(n >= 1, "lq_risk requires n >= 1");
  double acc = 0.0;
  double top = 0.0;
  for (Index j = 0; j < gamma_diag.size(); ++j) {
    detail::require(gamma_diag(j) >= 0, "diag(Gamma) must be nonnegative");
    top = std::max(top, gamma_diag(j));
  }
  if (top == 0.0) return 0.0;
  // Scale by the largest entry so large q does not overflow.
  for (Index j = 0; j < gamma_diag.size(); ++j) acc += std::pow(gamma_diag(j) / top, 0.5 * q);
  const double norm_half = std::sqrt(top) * std::pow(acc, 1.0 / q);
  return norm_half * gaussian_abs_moment(q) / std::sqrt(static_cast<double>(n));
}

struct RiskCurve {
  std::vector<double> etas;
  RiskKind kind = RiskKind::Pred;
  std::vector<double> theoretical;
  std::vector<double> rmt;
  std::vector<double> derivative;  // empty for Res
};

/// Evaluates R̄^#, 𝓡^# and ∂_η𝓡^# across an ascending η grid.
inline RiskCurve risk_curve(const ProblemConfig& cfg, RiskKind kind, const std::vector<double>& etas) {
  RiskCurve c;
  c.kind = kind;
  c.etas = etas;
  const double r2 = cfg.signal.norm_sq();
  for (std::size_t i = 0; i < etas.size(); ++i) {
    if (i > 0) detail::require(etas[i] > etas[i - 1], "eta grid must be ascending");
    const ProblemConfig at = cfg.with_eta(etas[i]);
    const EffectiveParams p = solve_effective(at);
    c.theoretical.push_back(theoretical_risk(kind, p, cfg.model, cfg.signal, cfg.sigma_sq, cfg.phi));
    c.rmt.push_back(rmt_risk(kind, p, cfg.sigma_sq, r2, cfg.phi));
    if (kind != RiskKind::Res)
      c.derivative.push_back(risk_derivative(kind, p, cfg.model, cfg.sigma_sq, r2, cfg.phi));
  }
  return c;
}

}  // namespace ridgelab
