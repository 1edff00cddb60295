#pragma once

// Data-level ridge(less) regression: fits, empirical risks, the τ̂ / γ̂ / σ̂²
// estimators, GCV and k-fold tuning, debiased estimation and intervals.
//
// The loss is (1/2n)‖Y − Xμ‖² + (η/2)‖μ‖² with n the signal dimension, so
// μ̂_η = (XᵀX + nηI)⁻¹XᵀY. The same normalization is kept inside CV folds.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ridgelab/error.hpp"
#include "ridgelab/riskengine.hpp"
#include "ridgelab/rng.hpp"
#include "ridgelab/spectrum.hpp"

namespace ridgelab {

struct Dataset {
  Matrix X;
  Vector Y;
  std::optional<SignalVector> mu0;
  std::optional<Vector> xi;
  CovarianceModel model = CovarianceModel::isotropic(1);

  Index m() const { return X.rows(); }
  Index n() const { return X.cols(); }
  double phi() const { return static_cast<double>(m()) / static_cast<double>(n()); }

  void validate() const {
    detail::require(X.rows() >= 1 && X.cols() >= 1, "dataset: empty design");
    detail::require(Y.size() == X.rows(), "dataset: Y length must equal the number of rows of X");
    model.check_dim(X.cols());
    if (mu0) model.check_dim(mu0->size());
    if (xi) detail::require(xi->size() == X.rows(), "dataset: noise length must equal m");
    if (mu0 && xi) {
      const double err = (Y - X * mu0->coords() - *xi).norm();
      detail::require(err <= 1e-10 * std::max(1.0, Y.norm()), "dataset: Y != X mu0 + xi");
    }
  }

  const SignalVector& truth() const {
    if (!mu0) throw MissingGroundTruth("dataset carries no ground-truth signal");
    return *mu0;
  }
};

struct RidgeFit {
  double eta = 0.0;
  Vector mu_hat;
  Vector r_hat;  // (Y − Xμ̂)/√n
};

namespace detail {

inline constexpr double kMaxCondition = 1e14;
inline constexpr double kMaxInterpolationCondition = 1e12;

inline Eigen::LLT<Matrix> checked_llt(const Matrix& gram, double max_cond, const char* what) {
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success)
    throw IllConditioned(std::string(what) + ": Gram matrix is not positive definite");
  const double rcond = llt.rcond();
  if (!(rcond * max_cond >= 1.0))
    throw IllConditioned(std::string(what) + ": condition number exceeds " + std::to_string(max_cond));
  return llt;
}

inline RidgeFit make_fit(const Dataset& d, double eta, Vector mu_hat) {
  RidgeFit f;
  f.eta = eta;
  f.r_hat = (d.Y - d.X * mu_hat) / std::sqrt(static_cast<double>(d.n()));
  f.mu_hat = std::move(mu_hat);
  return f;
}

}  // namespace detail

/// μ̂ = (XᵀX + nηI_n)⁻¹XᵀY.
inline Vector ridge_primal(const Matrix& X, const Vector& Y, double eta, Index n_norm) {
  Matrix gram = X.transpose() * X;
  gram.diagonal().array() += static_cast<double>(n_norm) * eta;
  return detail::checked_llt(gram, detail::kMaxCondition, "ridge_fit").solve(X.transpose() * Y);
}

/// μ̂ = n⁻¹Xᵀ(XXᵀ/n + ηI_m)⁻¹Y.
inline Vector ridge_dual(const Matrix& X, const Vector& Y, double eta, Index n_norm) {
  Matrix gram = X * X.transpose();
  gram.diagonal().array() += static_cast<double>(n_norm) * eta;
  return X.transpose() * detail::checked_llt(gram, detail::kMaxCondition, "ridge_fit").solve(Y);
}

/// Ridge fit at η > 0, factoring the smaller Gram matrix.
inline RidgeFit ridge_fit(const Dataset& d, double eta) {
  detail::require(std::isfinite(eta) && eta > 0, "ridge_fit requires eta > 0");
  Vector mu = d.n() <= d.m() ? ridge_primal(d.X, d.Y, eta, d.n()) : ridge_dual(d.X, d.Y, eta, d.n());
  return detail::make_fit(d, eta, std::move(mu));
}

/// Minimum-norm interpolator Xᵀ(XXᵀ)⁻¹Y; defined only for m < n.
inline RidgeFit ridgeless_fit(const Dataset& d) {
  if (d.m() >= d.n())
    throw WrongRegime("ridgeless_fit requires m < n (interpolation regime); got m=" +
                      std::to_string(d.m()) + ", n=" + std::to_string(d.n()));
  const Matrix gram = d.X * d.X.transpose();
  Vector mu = d.X.transpose() *
              detail::checked_llt(gram, detail::kMaxInterpolationCondition, "ridgeless_fit").solve(d.Y);
  return detail::make_fit(d, 0.0, std::move(mu));
}

/// Ridge for η > 0, ridgeless for η = 0.
inline RidgeFit fit(const Dataset& d, double eta) {
  detail::require(std::isfinite(eta) && eta >= 0, "fit requires eta >= 0");
  return eta == 0.0 ? ridgeless_fit(d) : ridge_fit(d, eta);
}

inline double empirical_risk(RiskKind kind, const RidgeFit& f, const Dataset& d) {
  if (kind == RiskKind::Res) return f.r_hat.squaredNorm();
  const Vector diff = f.mu_hat - d.truth().coords();
  switch (kind) {
    case RiskKind::Pred:
      return diff.dot(d.model.apply(diff, [](double l) { return l; }));
    case RiskKind::Est:
      return diff.squaredNorm();
    case RiskKind::Ins:
    default:
      return (d.X * diff).squaredNorm() / static_cast<double>(d.n());
  }
}

namespace detail {

inline void check_estimator_regime(const Dataset& d, double eta, const char* what) {
  require(std::isfinite(eta) && eta >= 0, std::string(what) + " requires eta >= 0");
  if (eta == 0.0 && d.m() >= d.n())
    throw WrongRegime(std::string(what) + " at eta = 0 requires m < n");
}

inline Matrix shifted_gram(const Dataset& d, double eta) {
  Matrix g = d.X * d.X.transpose();
  g.diagonal().array() += static_cast<double>(d.n()) * eta;
  return g;
}

}  // namespace detail

/// df = tr((Σ̂ + (η/φ)I)⁻¹Σ̂) with Σ̂ = XᵀX/m, i.e. tr(XXᵀ(XXᵀ + nηI)⁻¹).
inline double df_hat(const Dataset& d, double eta) {
  detail::check_estimator_regime(d, eta, "df_hat");
  const Matrix g = detail::shifted_gram(d, eta);
  const auto llt = detail::checked_llt(g, eta == 0.0 ? detail::kMaxInterpolationCondition : detail::kMaxCondition,
                                       "df_hat");
  const Matrix xxt = d.X * d.X.transpose();
  return llt.solve(xxt).trace();
}

/// τ̂ = {tr(XXᵀ + nηI_m)⁻¹}⁻¹.
inline double tau_hat(const Dataset& d, double eta) {
  detail::check_estimator_regime(d, eta, "tau_hat");
  const Index m = d.m();
  const auto llt = detail::checked_llt(detail::shifted_gram(d, eta),
                                       eta == 0.0 ? detail::kMaxInterpolationCondition : detail::kMaxCondition,
                                       "tau_hat");
  return 1.0 / llt.solve(Matrix::Identity(m, m)).trace();
}

/// γ̂ = (τ̂/√n)·(η⁻¹‖Y − Xμ̂‖ if n < m, else ‖(XXᵀ/n)⁻¹Xμ̂‖).
inline double gamma_hat(const Dataset& d, const RidgeFit& f, double eta) {
  detail::check_estimator_regime(d, eta, "gamma_hat");
  const double n = static_cast<double>(d.n());
  const double t = tau_hat(d, eta);
  if (d.n() < d.m()) {
    detail::require(eta > 0, "gamma_hat: the residual branch (n < m) requires eta > 0");
    return t / std::sqrt(n) * (d.Y - d.X * f.mu_hat).norm() / eta;
  }
  const Matrix xxt = d.X * d.X.transpose() / n;
  const auto llt = detail::checked_llt(xxt, detail::kMaxInterpolationCondition, "gamma_hat");
  return t / std::sqrt(n) * llt.solve(d.X * f.mu_hat).norm();
}

struct NoiseEstimate {
  double raw;
  double clamped;
};

/// σ̂² = γ̂²(1 − φ + 2η/τ̂) − τ̂²‖Σ^{-1/2}μ̂‖², raw and clamped at zero.
inline NoiseEstimate sigma_hat_sq(double gamma_hat_value, double tau_hat_value, double eta, double phi,
                                  const Vector& mu_hat, const CovarianceModel& model) {
  detail::require(tau_hat_value > 0, "sigma_hat_sq requires tau_hat > 0");
  const double whitened = mu_hat.dot(model.apply(mu_hat, [](double l) { return 1.0 / l; }));
  const double raw = gamma_hat_value * gamma_hat_value * (1.0 - phi + 2.0 * eta / tau_hat_value) -
                     tau_hat_value * tau_hat_value * whitened;
  return {raw, std::max(raw, 0.0)};
}

/// Regularization path from one thin SVD X = U·diag(s)·Vᵀ; every η costs O((m+n)·r).
class RidgePath {
 public:
  static constexpr double kRankFloor = 1e-12;

  RidgePath(const Matrix& X, const Vector& Y, Index n_norm)
      : m_(X.rows()), n_(X.cols()), n_norm_(n_norm), y_(Y) {
    detail::require(Y.size() == X.rows(), "RidgePath: Y length mismatch");
    Eigen::BDCSVD<Matrix> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
    u_ = svd.matrixU();
    v_ = svd.matrixV();
    s_ = svd.singularValues();
    s2_ = s_.cwiseAbs2();
    c_ = u_.transpose() * Y;
    const double smax = s_.size() ? s_(0) : 0.0;
    const double smin = s_.size() ? s_(s_.size() - 1) : 0.0;
    ratio_sq_ = smax > 0 ? (smin / smax) * (smin / smax) : 0.0;
  }

  explicit RidgePath(const Dataset& d) : RidgePath(d.X, d.Y, d.n()) {}

  Index m() const { return m_; }
  Index n() const { return n_; }
  const Vector& singular_values() const { return s_; }

  /// μ̂_η = V·diag(s/(s² + nη))·c.
  Vector mu_hat(double eta) const {
    check(eta);
    return v_ * (s_.array() / (s2_.array() + shift(eta)) * c_.array()).matrix();
  }

  /// Xμ̂_η = U·diag(s²/(s² + nη))·c.
  Vector fitted(double eta) const {
    check(eta);
    return u_ * (s2_.array() / (s2_.array() + shift(eta)) * c_.array()).matrix();
  }

  Vector residual(double eta) const { return y_ - fitted(eta); }

  RidgeFit fit(double eta) const {
    RidgeFit f;
    f.eta = eta;
    f.mu_hat = mu_hat(eta);
    f.r_hat = residual(eta) / std::sqrt(static_cast<double>(n_norm_));
    return f;
  }

  /// τ̂ = 1/(Σ 1/(s² + nη) + (m − r)/(nη)).
  double tau_hat(double eta) const {
    check(eta);
    const double sh = shift(eta);
    double tr = (1.0 / (s2_.array() + sh)).sum();
    const Index null_dim = m_ - s_.size();
    if (null_dim > 0) tr += static_cast<double>(null_dim) / sh;
    return 1.0 / tr;
  }

  double df_hat(double eta) const {
    check(eta);
    return (s2_.array() / (s2_.array() + shift(eta))).sum();
  }

  double gamma_hat(double eta) const {
    check(eta);
    const double t = tau_hat(eta);
    const double rn = std::sqrt(static_cast<double>(n_norm_));
    if (n_ < m_) {
      detail::require(eta > 0, "gamma_hat: the residual branch (n < m) requires eta > 0");
      return t / rn * residual(eta).norm() / eta;
    }
    if (ratio_sq_ < kRankFloor) throw IllConditioned("gamma_hat: XXᵀ is numerically singular");
    // (XXᵀ/n)⁻¹Xμ̂ = U·diag(n/(s² + nη))·c.
    const double nn = static_cast<double>(n_norm_);
    return t / rn * (nn / (s2_.array() + shift(eta)) * c_.array()).matrix().norm();
  }

 private:
  double shift(double eta) const { return static_cast<double>(n_norm_) * eta; }

  void check(double eta) const {
    detail::require(std::isfinite(eta) && eta >= 0, "RidgePath requires eta >= 0");
    if (eta == 0.0) {
      if (m_ >= n_) throw WrongRegime("eta = 0 requires m < n (interpolation regime)");
      if (ratio_sq_ < kRankFloor) throw IllConditioned("eta = 0: XXᵀ is numerically singular");
    }
  }

  Index m_, n_, n_norm_;
  Vector y_;
  Matrix u_, v_;
  Vector s_, s2_, c_;
  double ratio_sq_ = 0.0;
};

struct TuningResult {
  std::string method;  // "gcv" or "cv"
  int k = 0;           // folds, 0 for gcv
  double eta_hat = 0.0;
  std::size_t index = 0;
  std::vector<double> etas;
  std::vector<double> objective;
};

namespace detail {

inline void check_grid(const std::vector<double>& grid) {
  require(!grid.empty(), "tuning grid must be nonempty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    require(std::isfinite(grid[i]) && grid[i] >= 0, "tuning grid values must be nonnegative");
    if (i > 0) require(grid[i] > grid[i - 1], "tuning grid must be strictly ascending");
  }
}

/// First index of the minimum, i.e. ties go to the smallest η.
inline std::size_t argmin_first(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] < v[best]) best = i;
  return best;
}

inline TuningResult finish_tuning(std::string method, int k, const std::vector<double>& grid,
                                  std::vector<double> objective) {
  TuningResult r;
  r.method = std::move(method);
  r.k = k;
  r.etas = grid;
  r.objective = std::move(objective);
  r.index = argmin_first(r.objective);
  r.eta_hat = grid[r.index];
  return r;
}

}  // namespace detail

/// GCV: η̂ = argmin over the grid of γ̂_η.
inline TuningResult gcv_select(const Dataset& d, const std::vector<double>& grid) {
  detail::check_grid(grid);
  const RidgePath path(d);
  std::vector<double> obj;
  obj.reserve(grid.size());
  for (double eta : grid) obj.push_back(path.gamma_hat(eta));
  return detail::finish_tuning("gcv", 0, grid, std::move(obj));
}

/// Seeded shuffle of 0..m-1 cut into k contiguous blocks; the first m mod k blocks get one extra row.
inline std::vector<std::vector<Index>> make_folds(Index m, int k, rng::Stream& s) {
  detail::require(k >= 2, "k-fold CV requires k >= 2");
  detail::require(static_cast<Index>(k) <= m, "k-fold CV requires k <= m");
  std::vector<Index> perm(static_cast<std::size_t>(m));
  std::iota(perm.begin(), perm.end(), Index{0});
  for (Index i = m - 1; i > 0; --i) {
    const auto j = static_cast<Index>(s.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  std::vector<std::vector<Index>> folds(static_cast<std::size_t>(k));
  const Index base = m / k;
  const Index extra = m % k;
  Index pos = 0;
  for (Index f = 0; f < k; ++f) {
    const Index size = base + (f < extra ? 1 : 0);
    folds[static_cast<std::size_t>(f)].assign(perm.begin() + pos, perm.begin() + pos + size);
    pos += size;
  }
  return folds;
}

inline std::vector<std::vector<Index>> make_folds(Index m, int k, std::uint64_t seed) {
  rng::Stream s(seed, 0, rng::Role::Fold);
  return make_folds(m, k, s);
}

/// R^{CV}(η) = k⁻¹Σ_ℓ m_ℓ⁻¹‖Y^{(ℓ)} − X^{(ℓ)}μ̂^{(−ℓ)}_η‖², fold fits normalized by n.
inline std::vector<double> kfold_objective(const Dataset& d, const std::vector<double>& grid,
                                           const std::vector<std::vector<Index>>& folds) {
  detail::check_grid(grid);
  detail::require(folds.size() >= 2, "k-fold CV requires at least two folds");
  std::vector<char> seen(static_cast<std::size_t>(d.m()), 0);
  for (const auto& f : folds) {
    detail::require(!f.empty(), "k-fold CV: empty fold");
    for (Index i : f) {
      detail::require(i >= 0 && i < d.m() && !seen[static_cast<std::size_t>(i)],
                      "k-fold CV: folds must partition the rows");
      seen[static_cast<std::size_t>(i)] = 1;
    }
  }
  detail::require(std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; }),
                  "k-fold CV: folds must cover every row");

  std::vector<double> obj(grid.size(), 0.0);
  for (const auto& fold : folds) {
    std::vector<char> in_fold(static_cast<std::size_t>(d.m()), 0);
    for (Index i : fold) in_fold[static_cast<std::size_t>(i)] = 1;
    const Index m_test = static_cast<Index>(fold.size());
    const Index m_train = d.m() - m_test;
    Matrix x_train(m_train, d.n()), x_test(m_test, d.n());
    Vector y_train(m_train), y_test(m_test);
    Index a = 0, b = 0;
    for (Index i = 0; i < d.m(); ++i) {
      if (in_fold[static_cast<std::size_t>(i)]) {
        x_test.row(b) = d.X.row(i);
        y_test(b++) = d.Y(i);
      } else {
        x_train.row(a) = d.X.row(i);
        y_train(a++) = d.Y(i);
      }
    }
    const RidgePath path(x_train, y_train, d.n());
    for (std::size_t g = 0; g < grid.size(); ++g)
      obj[g] += (y_test - x_test * path.mu_hat(grid[g])).squaredNorm() / static_cast<double>(m_test);
  }
  for (double& v : obj) v /= static_cast<double>(folds.size());
  return obj;
}

inline TuningResult kfold_select(const Dataset& d, const std::vector<double>& grid, int k, std::uint64_t seed) {
  const auto folds = make_folds(d.m(), k, seed);
  return detail::finish_tuning("cv", k, grid, kfold_objective(d, grid, folds));
}

/// μ̂^dR = (Σ + τI)Σ⁻¹μ̂.
inline Vector debias(const Vector& mu_hat, double tau, const CovarianceModel& model) {
  detail::require(tau > 0, "debias requires tau > 0");
  return model.apply(mu_hat, [tau](double l) { return (l + tau) / l; });
}

/// Φ(x) = ½ erfc(−x/√2).
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Φ⁻¹(p): bisection on Φ to 1e-12, then one Newton step.
inline double normal_quantile(double p) {
  detail::require(p > 0.0 && p < 1.0, "normal_quantile requires p in (0, 1)");
  if (p > 0.5) return -normal_quantile(1.0 - p);
  double lo = -40.0, hi = 0.0;
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    if (normal_cdf(mid) < p) lo = mid; else hi = mid;
  }
  double x = 0.5 * (lo + hi);
  const double density = std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846);
  if (density > 0) x -= (normal_cdf(x) - p) / density;
  return x;
}

struct CIReport {
  Vector center;
  Vector lower;
  Vector upper;
  double alpha = 0.05;
  double gamma_hat = 0.0;
  double z = 0.0;
  Index n = 0;
  std::optional<double> coverage;

  Vector lengths() const { return upper - lower; }
};

/// CI_j = μ̂^dR_j ± γ̂(Σ⁻¹)_jj^{1/2} z_{α/2}/√n.
inline CIReport confidence_intervals(const Vector& mu_dr, double gamma_hat_value, const CovarianceModel& model,
                                     double alpha, Index n) {
  detail::require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  detail::require(gamma_hat_value >= 0, "gamma_hat must be nonnegative");
  model.check_dim(mu_dr.size());
  CIReport r;
  r.center = mu_dr;
  r.alpha = alpha;
  r.gamma_hat = gamma_hat_value;
  r.n = n;
  r.z = -normal_quantile(0.5 * alpha);
  const Vector inv_diag = model.diagonal([](double l) { return 1.0 / l; });
  const Vector half = inv_diag.cwiseSqrt() * (gamma_hat_value * r.z / std::sqrt(static_cast<double>(n)));
  r.lower = mu_dr - half;
  r.upper = mu_dr + half;
  return r;
}

/// 𝒞^dR = n⁻¹Σ_j 1{μ0_j ∈ CI_j}.
inline double coverage(const CIReport& r, const Vector& mu0) {
  detail::require(mu0.size() == r.lower.size(), "coverage: dimension mismatch");
  Index hits = 0;
  for (Index j = 0; j < mu0.size(); ++j)
    if (r.lower(j) <= mu0(j) && mu0(j) <= r.upper(j)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(mu0.size());
}

}  // namespace ridgelab
