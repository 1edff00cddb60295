#pragma once

// Population covariance models and the spectral functionals evaluated on them.
//
// A model is described by its eigenvalues (grouped by multiplicity) and, when
// needed, an orthonormal eigenbasis. Structured kinds keep only two distinct
// eigenvalues so that functionals cost O(1) and matrix actions cost O(n).

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ridgelab/error.hpp"

namespace ridgelab {

using Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// One distinct eigenvalue of a covariance model and its multiplicity.
struct EigenGroup {
  double value;
  Index multiplicity;
};

namespace detail {

inline double ipow(double x, int k) {
  double r = 1.0;
  for (int i = 0; i < k; ++i) r *= x;
  return r;
}

inline std::uint64_t next_model_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

class CovarianceModel {
 public:
  enum class Kind { Isotropic, SpikedUniform, Explicit };

  static constexpr Index kMaterializeLimit = 20000;

  /// Σ = scale·I_n.
  static CovarianceModel isotropic(Index n, double scale = 1.0) {
    detail::require(n >= 1, "covariance dimension must be positive");
    detail::require(std::isfinite(scale) && scale > 0, "isotropic scale must be positive");
    State s;
    s.kind = Kind::Isotropic;
    s.n = n;
    s.scale = scale;
    s.groups = {{scale, n}};
    return CovarianceModel(std::move(s));
  }

  /// Σ = a·I_n + b·11ᵀ. Eigenvalues a + b·n (eigenvector 1/√n) and a (multiplicity n-1).
  /// b = 0 normalizes to an isotropic model.
  static CovarianceModel spiked_uniform(Index n, double a, double b) {
    detail::require(n >= 1, "covariance dimension must be positive");
    detail::require(std::isfinite(a) && a > 0, "spiked_uniform requires a > 0");
    detail::require(std::isfinite(b) && b >= 0, "spiked_uniform requires b >= 0");
    if (b == 0.0 || n == 1) return isotropic(n, a + b * static_cast<double>(n));
    State s;
    s.kind = Kind::SpikedUniform;
    s.n = n;
    s.a = a;
    s.b = b;
    s.groups = {{a + b * static_cast<double>(n), 1}, {a, n - 1}};
    return CovarianceModel(std::move(s));
  }

  /// Σ = B·diag(λ)·Bᵀ, or diag(λ) when no basis is given. Eigenvalues are sorted
  /// descending (basis columns permuted along with them).
  static CovarianceModel explicit_spectrum(std::vector<double> eigenvalues,
                                           std::optional<Matrix> basis = std::nullopt) {
    const Index n = static_cast<Index>(eigenvalues.size());
    detail::require(n >= 1, "explicit spectrum must be nonempty");
    for (double v : eigenvalues)
      detail::require(std::isfinite(v) && v > 0, "eigenvalues must be finite and strictly positive");
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index i, Index j) {
      return eigenvalues[static_cast<std::size_t>(i)] > eigenvalues[static_cast<std::size_t>(j)];
    });
    State s;
    s.kind = Kind::Explicit;
    s.n = n;
    s.groups.reserve(static_cast<std::size_t>(n));
    for (Index i : order) s.groups.push_back({eigenvalues[static_cast<std::size_t>(i)], 1});
    if (basis) {
      detail::require(basis->rows() == n && basis->cols() == n, "basis must be n x n");
      Matrix sorted(n, n);
      for (Index j = 0; j < n; ++j) sorted.col(j) = basis->col(order[static_cast<std::size_t>(j)]);
      const double dev = (sorted.transpose() * sorted - Matrix::Identity(n, n)).cwiseAbs().maxCoeff();
      detail::require(dev <= 1e-10, "basis is not orthonormal within 1e-10");
      s.basis = std::move(sorted);
    }
    return CovarianceModel(std::move(s));
  }

  Kind kind() const { return state_->kind; }
  Index dim() const { return state_->n; }
  double scale() const { return state_->scale; }
  double spike_a() const { return state_->a; }
  double spike_b() const { return state_->b; }
  bool has_basis() const { return state_->basis.has_value(); }
  const Matrix& basis() const { return *state_->basis; }
  const std::vector<EigenGroup>& groups() const { return state_->groups; }
  /// Identity of the underlying immutable state; copies share it.
  std::uint64_t id() const { return state_->id; }

  double op_norm() const { return state_->groups.front().value; }
  double min_eigenvalue() const {
    double lo = state_->groups.front().value;
    for (const auto& g : state_->groups) lo = std::min(lo, g.value);
    return lo;
  }

  /// Σ_g mult_g · f(λ_g) / n.
  template <class F>
  double spectral_mean(F&& f) const {
    double acc = 0.0;
    for (const auto& g : state_->groups) acc += static_cast<double>(g.multiplicity) * f(g.value);
    return acc / static_cast<double>(state_->n);
  }

  /// f(Σ)·v.
  template <class F>
  Vector apply(const Vector& v, F&& f) const {
    check_dim(v.size());
    const State& s = *state_;
    switch (s.kind) {
      case Kind::Isotropic:
        return f(s.scale) * v;
      case Kind::SpikedUniform: {
        const double fa = f(s.a);
        const double ft = f(s.groups.front().value);
        const double mean = v.sum() / static_cast<double>(s.n);
        Vector out = fa * v;
        out.array() += (ft - fa) * mean;
        return out;
      }
      case Kind::Explicit:
      default: {
        const Vector fv = values_mapped(f);
        if (!s.basis) return v.cwiseProduct(fv);
        return (*s.basis) * fv.cwiseProduct(s.basis->transpose() * v);
      }
    }
  }

  /// Z·f(Σ) (equivalently f(Σ) applied to each row of Z).
  template <class F>
  Matrix apply_right(const Matrix& z, F&& f) const {
    check_dim(z.cols());
    const State& s = *state_;
    switch (s.kind) {
      case Kind::Isotropic:
        return f(s.scale) * z;
      case Kind::SpikedUniform: {
        const double fa = f(s.a);
        const double ft = f(s.groups.front().value);
        const Vector row_mean = z.rowwise().sum() / static_cast<double>(s.n);
        Matrix out = fa * z;
        out.colwise() += (ft - fa) * row_mean;
        return out;
      }
      case Kind::Explicit:
      default: {
        const Vector fv = values_mapped(f);
        if (!s.basis) return z * fv.asDiagonal();
        return ((z * (*s.basis)) * fv.asDiagonal()) * s.basis->transpose();
      }
    }
  }

  /// Energy of v in each eigenspace, aligned with groups().
  std::vector<double> spectral_energies(const Vector& v) const {
    check_dim(v.size());
    const State& s = *state_;
    switch (s.kind) {
      case Kind::Isotropic:
        return {v.squaredNorm()};
      case Kind::SpikedUniform: {
        const double top = v.sum() * v.sum() / static_cast<double>(s.n);
        return {top, std::max(0.0, v.squaredNorm() - top)};
      }
      case Kind::Explicit:
      default: {
        const Vector c = s.basis ? Vector(s.basis->transpose() * v) : v;
        std::vector<double> e(static_cast<std::size_t>(s.n));
        for (Index j = 0; j < s.n; ++j) e[static_cast<std::size_t>(j)] = c(j) * c(j);
        return e;
      }
    }
  }

  /// diag(f(Σ)).
  template <class F>
  Vector diagonal(F&& f) const {
    const State& s = *state_;
    switch (s.kind) {
      case Kind::Isotropic:
        return Vector::Constant(s.n, f(s.scale));
      case Kind::SpikedUniform: {
        const double fa = f(s.a);
        const double ft = f(s.groups.front().value);
        return Vector::Constant(s.n, fa + (ft - fa) / static_cast<double>(s.n));
      }
      case Kind::Explicit:
      default: {
        const Vector fv = values_mapped(f);
        if (!s.basis) return fv;
        return s.basis->cwiseAbs2() * fv;
      }
    }
  }

  /// Dense f(Σ).
  template <class F>
  Matrix dense(F&& f) const {
    detail::require(state_->n <= kMaterializeLimit, "dimension exceeds dense materialization guard");
    const State& s = *state_;
    switch (s.kind) {
      case Kind::Isotropic:
        return f(s.scale) * Matrix::Identity(s.n, s.n);
      case Kind::SpikedUniform: {
        const double fa = f(s.a);
        const double ft = f(s.groups.front().value);
        Matrix out = Matrix::Constant(s.n, s.n, (ft - fa) / static_cast<double>(s.n));
        out.diagonal().array() += fa;
        return out;
      }
      case Kind::Explicit:
      default: {
        const Vector fv = values_mapped(f);
        if (!s.basis) return fv.asDiagonal();
        return (*s.basis) * fv.asDiagonal() * s.basis->transpose();
      }
    }
  }

  Index check_dim(Index len) const {
    if (len != state_->n)
      throw InvalidArgument("dimension mismatch: expected " + std::to_string(state_->n) + ", got " +
                            std::to_string(len));
    return len;
  }

 private:
  struct State {
    Kind kind = Kind::Isotropic;
    Index n = 0;
    double scale = 1.0;
    double a = 0.0;
    double b = 0.0;
    std::vector<EigenGroup> groups;
    std::optional<Matrix> basis;
    std::uint64_t id = 0;
  };

  explicit CovarianceModel(State s) {
    s.id = detail::next_model_id();
    state_ = std::make_shared<const State>(std::move(s));
  }

  template <class F>
  Vector values_mapped(F&& f) const {
    Vector out(state_->n);
    for (Index j = 0; j < state_->n; ++j)
      out(j) = f(state_->groups[static_cast<std::size_t>(j)].value);
    return out;
  }

  std::shared_ptr<const State> state_;
};

/// Signal μ0 in ambient coordinates, with its per-eigenspace energies cached per model.
class SignalVector {
 public:
  SignalVector() = default;
  explicit SignalVector(Vector coords) : coords_(std::move(coords)) {
    for (Index j = 0; j < coords_.size(); ++j)
      detail::require(std::isfinite(coords_(j)), "signal entries must be finite");
    norm_sq_ = coords_.squaredNorm();
  }

  SignalVector(const SignalVector& other) : coords_(other.coords_), norm_sq_(other.norm_sq_) {
    std::lock_guard<std::mutex> lock(other.mutex_);
    cache_model_ = other.cache_model_;
    cache_ = other.cache_;
  }
  SignalVector& operator=(const SignalVector& other) {
    if (this == &other) return *this;
    SignalVector tmp(other);
    std::scoped_lock lock(mutex_);
    coords_ = std::move(tmp.coords_);
    norm_sq_ = tmp.norm_sq_;
    cache_model_ = tmp.cache_model_;
    cache_ = std::move(tmp.cache_);
    return *this;
  }
  SignalVector(SignalVector&& other) noexcept
      : coords_(std::move(other.coords_)),
        norm_sq_(other.norm_sq_),
        cache_model_(other.cache_model_),
        cache_(std::move(other.cache_)) {}
  SignalVector& operator=(SignalVector&& other) noexcept {
    coords_ = std::move(other.coords_);
    norm_sq_ = other.norm_sq_;
    cache_model_ = other.cache_model_;
    cache_ = std::move(other.cache_);
    return *this;
  }

  static SignalVector zeros(Index n) { return SignalVector(Vector::Zero(n)); }

  const Vector& coords() const { return coords_; }
  Index size() const { return coords_.size(); }
  double norm_sq() const { return norm_sq_; }
  double norm() const { return std::sqrt(norm_sq_); }

  /// Replaces the coordinates and drops the cached eigen-energies.
  void set_coords(Vector coords) {
    SignalVector fresh(std::move(coords));
    std::scoped_lock lock(mutex_);
    coords_ = std::move(fresh.coords_);
    norm_sq_ = fresh.norm_sq_;
    cache_model_ = 0;
    cache_.clear();
  }

  /// Energies of μ0 in each eigenspace of `model`, aligned with model.groups().
  std::vector<double> spectral_energies(const CovarianceModel& model) const {
    std::scoped_lock lock(mutex_);
    if (cache_model_ != model.id()) {
      cache_ = model.spectral_energies(coords_);
      cache_model_ = model.id();
    }
    return cache_;
  }

 private:
  Vector coords_;
  double norm_sq_ = 0.0;
  mutable std::mutex mutex_;
  mutable std::uint64_t cache_model_ = 0;
  mutable std::vector<double> cache_;
};

/// Dense Σ, Σ^{1/2}, Σ^{-1/2}.
struct DenseCovariance {
  Matrix sigma;
  Matrix sqrt;
  Matrix inv_sqrt;
};

/// Operator-norm and harmonic-mean diagnostics; the solvers need neither bound.
struct SpectrumDiagnostics {
  double op_norm;
  double inverse_op_norm;
  double harmonic_mean;
};

inline std::vector<double> eigenvalues(const CovarianceModel& model) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(model.dim()));
  for (const auto& g : model.groups())
    for (Index k = 0; k < g.multiplicity; ++k) out.push_back(g.value);
  return out;
}

/// T_{-p,q}(τ) = n⁻¹ tr((Σ+τI)^{-p} Σ^q).
inline double trace_functional(const CovarianceModel& model, double tau, int p, int q) {
  detail::require(p >= 0 && q >= 0, "trace_functional requires p, q >= 0");
  detail::require(!(p == 0 && q == 0), "trace_functional with p = q = 0 is degenerate");
  detail::require(std::isfinite(tau) && tau >= 0, "trace_functional requires tau >= 0");
  return model.spectral_mean(
      [&](double l) { return detail::ipow(l, q) / detail::ipow(l + tau, p); });
}

/// 𝓗_Σ = tr(Σ⁻¹)/n.
inline double harmonic_mean(const CovarianceModel& model) {
  return model.spectral_mean([](double l) { return 1.0 / l; });
}

inline SpectrumDiagnostics diagnostics(const CovarianceModel& model) {
  return {model.op_norm(), 1.0 / model.min_eigenvalue(), harmonic_mean(model)};
}

/// ‖(Σ+τI)^{-p} Σ^{q/2} μ0‖².
inline double quad_form(const CovarianceModel& model, const SignalVector& mu0, double tau, int p,
                        int q) {
  model.check_dim(mu0.size());
  detail::require(p >= 0 && q >= 0, "quad_form requires p, q >= 0");
  detail::require(std::isfinite(tau) && tau >= 0, "quad_form requires tau >= 0");
  const auto energies = mu0.spectral_energies(model);
  const auto& groups = model.groups();
  double acc = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double l = groups[g].value;
    acc += detail::ipow(l, q) * energies[g] / detail::ipow(l + tau, 2 * p);
  }
  return acc;
}

inline DenseCovariance materialize(const CovarianceModel& model) {
  if (model.dim() > CovarianceModel::kMaterializeLimit)
    throw InvalidArgument("dimension exceeds dense materialization guard (20000)");
  return {model.dense([](double l) { return l; }),
          model.dense([](double l) { return std::sqrt(l); }),
          model.dense([](double l) { return 1.0 / std::sqrt(l); })};
}

// JSON: {"kind": "isotropic"|"spiked_uniform"|"explicit", "n": int, "scale"|"a","b"|"eigenvalues"[, "basis"]}

inline nlohmann::json model_to_json(const CovarianceModel& model) {
  nlohmann::json j;
  j["n"] = model.dim();
  switch (model.kind()) {
    case CovarianceModel::Kind::Isotropic:
      j["kind"] = "isotropic";
      j["scale"] = model.scale();
      break;
    case CovarianceModel::Kind::SpikedUniform:
      j["kind"] = "spiked_uniform";
      j["a"] = model.spike_a();
      j["b"] = model.spike_b();
      break;
    case CovarianceModel::Kind::Explicit: {
      j["kind"] = "explicit";
      j["eigenvalues"] = eigenvalues(model);
      if (model.has_basis()) {
        const Matrix& b = model.basis();
        nlohmann::json rows = nlohmann::json::array();
        for (Index i = 0; i < b.rows(); ++i) {
          std::vector<double> row(static_cast<std::size_t>(b.cols()));
          for (Index k = 0; k < b.cols(); ++k) row[static_cast<std::size_t>(k)] = b(i, k);
          rows.push_back(row);
        }
        j["basis"] = rows;
      }
      break;
    }
  }
  return j;
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                                const std::string& where) {
  if (!j.is_object()) throw InvalidArgument(where + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw InvalidArgument(where + ": unknown key '" + it.key() + "'");
  }
}

}  // namespace detail

/// Parses a model; `default_n` fills a missing "n" (used by sweeps over dimension).
inline CovarianceModel model_from_json(const nlohmann::json& j, std::optional<Index> default_n = {}) {
  detail::reject_unknown_keys(j, {"kind", "n", "scale", "a", "b", "eigenvalues", "basis"}, "model");
  if (!j.contains("kind")) throw InvalidArgument("model: missing 'kind'");
  const std::string kind = j.at("kind").get<std::string>();
  auto dim = [&]() -> Index {
    if (j.contains("n")) return j.at("n").get<Index>();
    if (default_n) return *default_n;
    throw InvalidArgument("model: missing 'n'");
  };
  try {
    if (kind == "isotropic") return CovarianceModel::isotropic(dim(), j.value("scale", 1.0));
    if (kind == "spiked_uniform")
      return CovarianceModel::spiked_uniform(dim(), j.at("a").get<double>(), j.at("b").get<double>());
    if (kind == "explicit") {
      auto ev = j.at("eigenvalues").get<std::vector<double>>();
      if (j.contains("n") && j.at("n").get<Index>() != static_cast<Index>(ev.size()))
        throw InvalidArgument("model: 'n' does not match eigenvalue count");
      std::optional<Matrix> basis;
      if (j.contains("basis")) {
        const auto rows = j.at("basis").get<std::vector<std::vector<double>>>();
        const Index n = static_cast<Index>(ev.size());
        if (static_cast<Index>(rows.size()) != n) throw InvalidArgument("model: basis must be n x n");
        Matrix b(n, n);
        for (Index i = 0; i < n; ++i) {
          if (static_cast<Index>(rows[static_cast<std::size_t>(i)].size()) != n)
            throw InvalidArgument("model: basis must be n x n");
          for (Index k = 0; k < n; ++k) b(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
        }
        basis = std::move(b);
      }
      return CovarianceModel::explicit_spectrum(std::move(ev), std::move(basis));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("model: ") + e.what());
  }
  throw InvalidArgument("model: unknown kind '" + kind + "'");
}

}  // namespace ridgelab
