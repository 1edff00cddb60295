#pragma once

// Seeded generators and Monte Carlo drivers for the simulation study.
//
// Every random quantity is drawn from an addressed rng::Stream, and per-rep
// results land in a slot indexed by rep before an ordered reduction. Output
// is therefore identical for any worker count.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ridgelab/error.hpp"
#include "ridgelab/fixedpoint.hpp"
#include "ridgelab/io.hpp"
#include "ridgelab/regress.hpp"
#include "ridgelab/riskengine.hpp"
#include "ridgelab/rng.hpp"
#include "ridgelab/spectrum.hpp"

namespace ridgelab {
namespace simlab {

using json = nlohmann::json;

enum class Dist { Gaussian, ScaledT10 };
enum class SignalMode { Sphere, BallRadial };

inline std::string to_string(Dist d) { return d == Dist::Gaussian ? "gaussian" : "scaled_t10"; }
inline std::string to_string(SignalMode s) { return s == SignalMode::Sphere ? "sphere" : "ball_radial"; }

inline Dist parse_dist(const std::string& s) {
  if (s == "gaussian") return Dist::Gaussian;
  if (s == "scaled_t10") return Dist::ScaledT10;
  throw InvalidArgument("unknown distribution '" + s + "' (expected gaussian or scaled_t10)");
}

inline SignalMode parse_signal_mode(const std::string& s) {
  if (s == "sphere") return SignalMode::Sphere;
  if (s == "ball_radial") return SignalMode::BallRadial;
  throw InvalidArgument("unknown signal mode '" + s + "' (expected sphere or ball_radial)");
}

struct SignalSpec {
  SignalMode mode = SignalMode::Sphere;
  double radius = 1.0;
};

// ---- samplers ---------------------------------------------------------------

inline double draw(Dist d, rng::Stream& s) { return d == Dist::Gaussian ? s.normal() : rng::scaled_t10(s); }

/// sphere(r): r·g/‖g‖; ball_radial(r): r·U·g/‖g‖ with U ~ Unif(0, 1).
inline SignalVector sample_signal(const SignalSpec& spec, Index n, rng::Stream& s) {
  detail::require(n >= 1, "sample_signal requires n >= 1");
  detail::require(std::isfinite(spec.radius) && spec.radius >= 0, "signal radius must be nonnegative");
  Vector g(n);
  for (Index j = 0; j < n; ++j) g(j) = s.normal();
  double scale = spec.radius / g.norm();
  if (spec.mode == SignalMode::BallRadial) scale *= s.uniform();
  return SignalVector(g * scale);
}

inline SignalVector sample_signal(const SignalSpec& spec, Index n, std::uint64_t seed) {
  rng::Stream s(seed, 0, rng::Role::Signal);
  return sample_signal(spec, n, s);
}

/// X = ZΣ^{1/2}, Z filled row by row from the stream.
inline Matrix sample_design(Dist dist, Index m, Index n, const CovarianceModel& model, rng::Stream& s) {
  detail::require(m >= 1 && n >= 1, "sample_design requires m, n >= 1");
  model.check_dim(n);
  Matrix z(m, n);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) z(i, j) = draw(dist, s);
  return model.apply_right(z, [](double l) { return std::sqrt(l); });
}

inline Matrix sample_design(Dist dist, Index m, Index n, const CovarianceModel& model, std::uint64_t seed) {
  rng::Stream s(seed, 0, rng::Role::Design);
  return sample_design(dist, m, n, model, s);
}

inline Vector sample_noise(Dist dist, Index m, double sigma_sq, rng::Stream& s) {
  detail::require(m >= 1, "sample_noise requires m >= 1");
  detail::require(std::isfinite(sigma_sq) && sigma_sq >= 0, "noise variance must be nonnegative");
  if (sigma_sq == 0.0) return Vector::Zero(m);
  const double sd = std::sqrt(sigma_sq);
  Vector xi(m);
  for (Index i = 0; i < m; ++i) xi(i) = sd * draw(dist, s);
  return xi;
}

inline Vector sample_noise(Dist dist, Index m, double sigma_sq, std::uint64_t seed) {
  rng::Stream s(seed, 0, rng::Role::Noise);
  return sample_noise(dist, m, sigma_sq, s);
}

// ---- Gaussian sequence model ------------------------------------------------

struct SeqSample {
  Vector y;       // Σ^{1/2}μ0 + γg/√n
  Vector mu_hat;  // (Σ+τI)⁻¹Σ^{1/2}y
};

inline SeqSample seq_model_sample(const CovarianceModel& model, const Vector& mu0, double gamma, double tau,
                                  rng::Stream& s) {
  detail::require(tau > 0, "seq_model_sample requires tau > 0");
  detail::require(gamma >= 0, "seq_model_sample requires gamma >= 0");
  model.check_dim(mu0.size());
  const Index n = mu0.size();
  SeqSample out;
  out.y = model.apply(mu0, [](double l) { return std::sqrt(l); });
  if (gamma > 0) {
    const double scale = gamma / std::sqrt(static_cast<double>(n));
    for (Index j = 0; j < n; ++j) out.y(j) += scale * s.normal();
  }
  out.mu_hat = model.apply(out.y, [tau](double l) { return std::sqrt(l) / (l + tau); });
  return out;
}

inline SeqSample seq_model_sample(const CovarianceModel& model, const Vector& mu0, double gamma, double tau,
                                  std::uint64_t seed) {
  rng::Stream s(seed, 0, rng::Role::Seq);
  return seq_model_sample(model, mu0, gamma, tau, s);
}

/// r_{η,*} = (η/(φτ))·(−√(φγ² − σ²)·h + ξ)/√n with n = m/φ.
inline Vector residual_law_sample(double phi, double tau, double gamma_sq, double sigma_sq, double eta,
                                  const Vector& xi, rng::Stream& s) {
  detail::require(phi > 0 && tau > 0, "residual_law_sample requires phi, tau > 0");
  detail::require(eta >= 0 && sigma_sq >= 0 && gamma_sq >= 0, "residual_law_sample: negative parameter");
  const double excess = phi * gamma_sq - sigma_sq;
  detail::require(excess >= -1e-10 * std::max(1.0, sigma_sq), "residual_law_sample requires phi*gamma^2 >= sigma^2");
  const Index m = xi.size();
  if (eta == 0.0) return Vector::Zero(m);
  const double root_n = std::sqrt(static_cast<double>(m) / phi);
  const double h_scale = std::sqrt(std::max(excess, 0.0));
  Vector r(m);
  for (Index i = 0; i < m; ++i) r(i) = -h_scale * s.normal() + xi(i);
  return r * (eta / (phi * tau) / root_n);
}

inline Vector residual_law_sample(double phi, double tau, double gamma_sq, double sigma_sq, double eta,
                                  const Vector& xi, std::uint64_t seed) {
  rng::Stream s(seed, 0, rng::Role::Seq);
  return residual_law_sample(phi, tau, gamma_sq, sigma_sq, eta, xi, s);
}

struct MCEstimate {
  double mean = 0.0;
  double se = 0.0;
};

inline double lq_norm(const Vector& v, double q) {
  if (q == 2.0) return v.norm();
  double acc = 0.0;
  for (Index j = 0; j < v.size(); ++j) acc += std::pow(std::abs(v(j)), q);
  return std::pow(acc, 1.0 / q);
}

inline MCEstimate mean_and_se(const std::vector<double>& x) {
  MCEstimate e;
  if (x.empty()) return e;
  double sum = 0.0;
  for (double v : x) sum += v;
  e.mean = sum / static_cast<double>(x.size());
  if (x.size() > 1) {
    double ss = 0.0;
    for (double v : x) ss += (v - e.mean) * (v - e.mean);
    e.se = std::sqrt(ss / static_cast<double>(x.size() - 1) / static_cast<double>(x.size()));
  }
  return e;
}

/// MC estimate of E‖A(μ̂^seq − μ0)‖_q; rep j reads Stream(seed, j, Seq).
inline MCEstimate seq_model_lq_mc(double q, const LqWeight& weight, const CovarianceModel& model,
                                  const SignalVector& mu0, double gamma, double tau, int reps, std::uint64_t seed) {
  detail::require(std::isfinite(q) && q > 0, "seq_model_lq_mc requires q > 0");
  detail::require(reps >= 100, "seq_model_lq_mc requires reps >= 100");
  std::vector<double> vals(static_cast<std::size_t>(reps));
  for (int r = 0; r < reps; ++r) {
    rng::Stream s(seed, static_cast<std::uint32_t>(r), rng::Role::Seq);
    const SeqSample smp = seq_model_sample(model, mu0.coords(), gamma, tau, s);
    vals[static_cast<std::size_t>(r)] = lq_norm(weight.apply(model, smp.mu_hat - mu0.coords()), q);
  }
  return mean_and_se(vals);
}

// ---- threading ----------------------------------------------------------------

/// requested > 0 wins; otherwise RIDGELAB_THREADS (if set and positive); otherwise the core count.
/// A negative request means "not given" and defers to the environment.
inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (requested < 0) {
    if (const char* env = std::getenv("RIDGELAB_THREADS")) {
      char* end = nullptr;
      const long v = std::strtol(env, &end, 10);
      if (end == env || *end != '\0' || v < 0) throw InvalidArgument("RIDGELAB_THREADS must be a nonnegative integer");
      if (v > 0) return static_cast<int>(v);
    }
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

/// Runs body(i) for i in [0, count) on `threads` workers; the lowest-index exception is rethrown.
template <class F>
void parallel_for(int count, int threads, F&& body) {
  if (count <= 0) return;
  const int workers = std::clamp(threads, 1, count);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
  auto run_one = [&](int i) {
    try {
      body(i);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  };
  if (workers == 1) {
    for (int i = 0; i < count; ++i) run_one(i);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) run_one(i);
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Runs rep bodies that may throw NumericalError; those reps are counted as failed.
/// Throws if more than 1% of reps fail.
template <class T, class F>
std::vector<std::optional<T>> run_reps(int reps, int threads, F&& body, int* failed_out, const char* what) {
  std::vector<std::optional<T>> out(static_cast<std::size_t>(reps));
  parallel_for(reps, threads, [&](int r) {
    try {
      out[static_cast<std::size_t>(r)] = body(r);
    } catch (const NumericalError&) {
      out[static_cast<std::size_t>(r)].reset();
    }
  });
  int failed = 0;
  for (const auto& o : out)
    if (!o) ++failed;
  if (failed_out) *failed_out = failed;
  if (100 * failed > reps)
    throw NumericalError(std::string(what) + ": aborted, " + std::to_string(failed) + " of " + std::to_string(reps) +
                         " replications failed (limit 1%)");
  return out;
}

// ---- configuration -------------------------------------------------------------

struct ExperimentConfig {
  Index m = 100;
  Index n = 200;
  std::vector<double> phis;  // Fig 2 sweep: n = round(m/φ) per entry
  json model = {{"kind", "spiked_uniform"}, {"a", 1.99}, {"b", 0.01}};
  Dist design = Dist::ScaledT10;
  Dist noise = Dist::ScaledT10;
  double sigma_sq = 1.0;
  SignalSpec signal{};
  bool redraw_signal = false;
  std::string eta_grid = "0:1.5:161";
  int reps = 200;
  int k = 5;
  double alpha = 0.05;
  std::uint64_t seed = 20240601;
  int argmin_reps = 500;
  int argmin_inner_reps = 200;  // data draws averaged per μ0 before taking the argmin
  std::string argmin_grid = "0:1.5:160";
  int seq_reps = 200;

  /// The model JSON instantiated at dimension n ("n" may be omitted from the template).
  CovarianceModel model_for(Index dim) const {
    json j = model;
    if (j.contains("n") && j.at("n").get<Index>() != dim)
      throw InvalidArgument("model.n = " + std::to_string(j.at("n").get<Index>()) + " disagrees with n = " +
                            std::to_string(dim));
    return model_from_json(j, dim);
  }

  static Index n_for_phi(Index m, double phi) {
    detail::require(std::isfinite(phi) && phi > 0, "phi must be positive");
    const auto n = static_cast<Index>(std::llround(static_cast<double>(m) / phi));
    detail::require(n >= 1, "phi too large for m");
    return n;
  }

  void validate() const {
    detail::require(m >= 1, "config: m must be >= 1");
    detail::require(n >= 1, "config: n must be >= 1");
    detail::require(reps >= 1, "config: reps must be >= 1");
    detail::require(argmin_reps >= 1, "config: argmin_reps must be >= 1");
    detail::require(argmin_inner_reps >= 1 && argmin_inner_reps < (1 << 23), "config: argmin_inner_reps out of range");
    detail::require(seq_reps >= 2, "config: seq_reps must be >= 2");
    detail::require(std::isfinite(sigma_sq) && sigma_sq >= 0, "config: sigma_sq must be >= 0");
    detail::require(std::isfinite(signal.radius) && signal.radius >= 0, "config: signal radius must be >= 0");
    detail::require(k >= 2, "config: k must be >= 2");
    detail::require(alpha > 0 && alpha < 1, "config: alpha must lie in (0, 1)");
    for (double p : phis) n_for_phi(m, p);
    io::parse_grid(eta_grid);
    io::parse_grid(argmin_grid);
  }

  json to_json() const {
    return {{"m", m},
            {"n", n},
            {"phis", phis},
            {"model", model},
            {"design", simlab::to_string(design)},
            {"noise", simlab::to_string(noise)},
            {"sigma_sq", sigma_sq},
            {"signal", {{"mode", simlab::to_string(signal.mode)}, {"radius", signal.radius}}},
            {"redraw_signal", redraw_signal},
            {"eta_grid", eta_grid},
            {"reps", reps},
            {"k", k},
            {"alpha", alpha},
            {"seed", seed},
            {"argmin_reps", argmin_reps},
            {"argmin_inner_reps", argmin_inner_reps},
            {"argmin_grid", argmin_grid},
            {"seq_reps", seq_reps}};
  }

  /// Overlays the keys present in j onto `base`; unknown keys are errors.
  static ExperimentConfig from_json(const json& j, ExperimentConfig base) {
    if (!j.is_object()) throw InvalidArgument("experiment config must be a JSON object");
    detail::reject_unknown_keys(j,
                                {"m", "n", "phis", "model", "design", "noise", "sigma_sq", "signal", "redraw_signal",
                                 "eta_grid", "reps", "k", "alpha", "seed", "argmin_reps", "argmin_inner_reps", "argmin_grid",
                                 "seq_reps"},
                                "experiment config");
    try {
      if (j.contains("m")) base.m = j.at("m").get<Index>();
      if (j.contains("n")) base.n = j.at("n").get<Index>();
      if (j.contains("phis")) base.phis = j.at("phis").get<std::vector<double>>();
      if (j.contains("model")) base.model = j.at("model");
      if (j.contains("design")) base.design = parse_dist(j.at("design").get<std::string>());
      if (j.contains("noise")) base.noise = parse_dist(j.at("noise").get<std::string>());
      if (j.contains("sigma_sq")) base.sigma_sq = j.at("sigma_sq").get<double>();
      if (j.contains("signal")) {
        const json& s = j.at("signal");
        detail::reject_unknown_keys(s, {"mode", "radius"}, "signal");
        if (s.contains("mode")) base.signal.mode = parse_signal_mode(s.at("mode").get<std::string>());
        if (s.contains("radius")) base.signal.radius = s.at("radius").get<double>();
      }
      if (j.contains("redraw_signal")) base.redraw_signal = j.at("redraw_signal").get<bool>();
      if (j.contains("eta_grid")) base.eta_grid = j.at("eta_grid").get<std::string>();
      if (j.contains("reps")) base.reps = j.at("reps").get<int>();
      if (j.contains("k")) base.k = j.at("k").get<int>();
      if (j.contains("alpha")) base.alpha = j.at("alpha").get<double>();
      if (j.contains("seed")) base.seed = j.at("seed").get<std::uint64_t>();
      if (j.contains("argmin_reps")) base.argmin_reps = j.at("argmin_reps").get<int>();
      if (j.contains("argmin_inner_reps")) base.argmin_inner_reps = j.at("argmin_inner_reps").get<int>();
      if (j.contains("argmin_grid")) base.argmin_grid = j.at("argmin_grid").get<std::string>();
      if (j.contains("seq_reps")) base.seq_reps = j.at("seq_reps").get<int>();
    } catch (const json::exception& e) {
      throw InvalidArgument(std::string("experiment config: ") + e.what());
    }
    return base;
  }
};

/// Simulation defaults: Σ = 1.99I + 0.01·11ᵀ, t₁₀ design and noise, m = 100, n = 200.
inline ExperimentConfig fig1_defaults() { return ExperimentConfig{}; }

inline ExperimentConfig fig2_defaults() {
  ExperimentConfig c;
  c.m = 500;
  c.n = 500;
  c.phis = {0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5};
  c.eta_grid = "0:1.5:31";
  c.reps = 100;
  c.redraw_signal = true;
  return c;
}

/// Drops η = 0 when the problem is not overparametrized (n ≤ m).
inline std::vector<double> admissible_grid(const std::vector<double>& grid, Index m, Index n) {
  std::vector<double> out;
  for (double e : grid)
    if (e > 0 || n > m) out.push_back(e);
  detail::require(!out.empty(), "eta grid is empty after removing eta = 0");
  return out;
}

inline void require_admissible_grid(const std::vector<double>& grid, Index m, Index n) {
  for (double e : grid) {
    detail::require(std::isfinite(e) && e >= 0, "eta grid values must be nonnegative");
    if (e == 0.0 && n <= m)
      throw InvalidArgument("eta grid contains 0 but eta = 0 requires m/n < 1 (n > m)");
  }
}

// ---- single-replication building blocks --------------------------------------

struct Replication {
  CovarianceModel model;
  SignalVector mu0;
  Matrix X;
  Vector xi;
  Vector Y;
  Vector x_mu0;

  Dataset dataset() const { return Dataset{X, Y, mu0, xi, model}; }
};

/// Draws (X, ξ) for replication `rep` in slot `sub`; μ0 is supplied by the caller.
inline Replication draw_replication(const ExperimentConfig& c, const CovarianceModel& model, SignalVector mu0,
                                    Index m, std::uint64_t rep, std::uint32_t sub) {
  const Index n = model.dim();
  rng::Stream ds(c.seed, static_cast<std::uint32_t>(rep), rng::Role::Design, sub);
  rng::Stream ns(c.seed, static_cast<std::uint32_t>(rep), rng::Role::Noise, sub);
  Replication r{model, std::move(mu0), sample_design(c.design, m, n, model, ds), sample_noise(c.noise, m, c.sigma_sq, ns),
                Vector(), Vector()};
  r.x_mu0 = r.X * r.mu0.coords();
  r.Y = r.x_mu0 + r.xi;
  return r;
}

inline SignalVector signal_for(const ExperimentConfig& c, Index n, std::uint32_t rep, std::uint32_t sub) {
  rng::Stream s(c.seed, c.redraw_signal ? rep : 0u, rng::Role::Signal, sub);
  return sample_signal(c.signal, n, s);
}

/// Realized risks (pred, est, ins, res) at η along a precomputed path.
inline std::array<double, 4> realized_risks(const RidgePath& path, const Replication& r, double eta) {
  const Vector diff = path.mu_hat(eta) - r.mu0.coords();
  const Vector fitted = path.fitted(eta);
  const double n = static_cast<double>(r.model.dim());
  return {diff.dot(r.model.apply(diff, [](double l) { return l; })), diff.squaredNorm(),
          (fitted - r.x_mu0).squaredNorm() / n, (r.Y - fitted).squaredNorm() / n};
}

inline std::size_t kind_index(RiskKind k) { return static_cast<std::size_t>(k); }

inline ProblemConfig problem_for(const Replication& r, const ExperimentConfig& c, double eta) {
  const double phi = static_cast<double>(r.X.rows()) / static_cast<double>(r.model.dim());
  return ProblemConfig{phi, eta, c.sigma_sq, r.model, r.mu0};
}

// ---- Fig 1: risk curves ------------------------------------------------------------

struct KindCurve {
  RiskKind kind = RiskKind::Pred;
  std::vector<double> emp_mean, emp_sd, theoretical, rmt;
};

struct MCSummary {
  std::vector<double> etas;
  std::vector<KindCurve> curves;  // pred, est, ins, res
  int reps = 0;
  int completed = 0;
  int failed = 0;
  std::uint64_t seed = 0;

  const KindCurve& curve(RiskKind k) const {
    for (const auto& c : curves)
      if (c.kind == k) return c;
    throw InvalidArgument("summary has no curve for " + ridgelab::to_string(k));
  }
};

inline void column_mean_sd(const std::vector<std::vector<double>>& rows, std::vector<double>& mean, std::vector<double>& sd) {
  const std::size_t g = rows.empty() ? 0 : rows.front().size();
  mean.assign(g, 0.0);
  sd.assign(g, 0.0);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < g; ++i) mean[i] += r[i];
  const auto cnt = static_cast<double>(rows.size());
  for (double& v : mean) v /= cnt;
  if (rows.size() < 2) return;
  for (const auto& r : rows)
    for (std::size_t i = 0; i < g; ++i) sd[i] += (r[i] - mean[i]) * (r[i] - mean[i]);
  for (double& v : sd) v = std::sqrt(v / (cnt - 1.0));
}

/// Mean realized risk curves over reps, with R̄^# and 𝓡^# overlays (averaged over μ0 when redrawn).
inline MCSummary run_risk_experiment(const ExperimentConfig& c, int threads = 1) {
  c.validate();
  const std::vector<double> etas = io::parse_grid(c.eta_grid);
  require_admissible_grid(etas, c.m, c.n);
  const CovarianceModel model = c.model_for(c.n);
  const double phi = static_cast<double>(c.m) / static_cast<double>(c.n);
  const std::size_t g = etas.size();

  struct RepOut {
    std::array<std::vector<double>, 4> emp, theo, rmt;
  };
  auto overlays = [&](const SignalVector& mu0, RepOut& out) {
    for (std::size_t k = 0; k < 4; ++k) {
      out.theo[k].resize(g);
      out.rmt[k].resize(g);
    }
    for (std::size_t i = 0; i < g; ++i) {
      const EffectiveParams p = solve_effective(ProblemConfig{phi, etas[i], c.sigma_sq, model, mu0});
      for (RiskKind k : kAllRiskKinds) {
        out.theo[kind_index(k)][i] = theoretical_risk(k, p, model, mu0, c.sigma_sq, phi);
        out.rmt[kind_index(k)][i] = rmt_risk(k, p, c.sigma_sq, mu0.norm_sq(), phi);
      }
    }
  };

  RepOut fixed_overlay;
  std::optional<SignalVector> fixed_mu0;
  if (!c.redraw_signal) {
    fixed_mu0 = signal_for(c, c.n, 0, 0);
    overlays(*fixed_mu0, fixed_overlay);
  }

  int failed = 0;
  const auto outs = run_reps<RepOut>(
      c.reps, threads,
      [&](int rep) {
        SignalVector mu0 = fixed_mu0 ? *fixed_mu0 : signal_for(c, c.n, static_cast<std::uint32_t>(rep), 0);
        RepOut out;
        if (c.redraw_signal) overlays(mu0, out);
        const Replication r = draw_replication(c, model, std::move(mu0), c.m, static_cast<std::uint64_t>(rep), 0);
        const RidgePath path(r.X, r.Y, c.n);
        for (auto& e : out.emp) e.resize(g);
        for (std::size_t i = 0; i < g; ++i) {
          const auto risks = realized_risks(path, r, etas[i]);
          for (std::size_t k = 0; k < 4; ++k) out.emp[k][i] = risks[k];
        }
        return out;
      },
      &failed, "risk experiment");

  MCSummary s;
  s.etas = etas;
  s.reps = c.reps;
  s.failed = failed;
  s.completed = c.reps - failed;
  s.seed = c.seed;
  for (RiskKind k : kAllRiskKinds) {
    const std::size_t ki = kind_index(k);
    KindCurve kc;
    kc.kind = k;
    std::vector<std::vector<double>> emp, theo, rmt;
    for (const auto& o : outs) {
      if (!o) continue;
      emp.push_back(o->emp[ki]);
      if (c.redraw_signal) {
        theo.push_back(o->theo[ki]);
        rmt.push_back(o->rmt[ki]);
      }
    }
    column_mean_sd(emp, kc.emp_mean, kc.emp_sd);
    if (c.redraw_signal) {
      std::vector<double> unused;
      column_mean_sd(theo, kc.theoretical, unused);
      column_mean_sd(rmt, kc.rmt, unused);
    } else {
      kc.theoretical = fixed_overlay.theo[ki];
      kc.rmt = fixed_overlay.rmt[ki];
    }
    s.curves.push_back(std::move(kc));
  }
  return s;
}

// ---- Fig 1 right: argmin deviations ----------------------------------------

inline constexpr std::array<RiskKind, 3> kTunedKinds = {RiskKind::Pred, RiskKind::Est, RiskKind::Ins};

struct ArgminRecord {
  int rep = 0;
  RiskKind kind = RiskKind::Pred;
  double eta_hat = 0.0;
  double eta_star = 0.0;
};

struct ArgminSummary {
  std::vector<double> etas;
  std::vector<ArgminRecord> records;  // ordered by rep, then kind
  int reps = 0;
  int failed = 0;
  std::uint64_t seed = 0;

  /// Quartiles (25/50/75%) of η^# − η* for one kind, by linear interpolation.
  std::array<double, 3> quartiles(RiskKind k) const {
    std::vector<double> d;
    for (const auto& r : records)
      if (r.kind == k) d.push_back(r.eta_hat - r.eta_star);
    detail::require(!d.empty(), "no argmin records for this kind");
    std::sort(d.begin(), d.end());
    auto at = [&d](double p) {
      const double pos = p * static_cast<double>(d.size() - 1);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const std::size_t hi = std::min(lo + 1, d.size() - 1);
      return d[lo] + (pos - static_cast<double>(lo)) * (d[hi] - d[lo]);
    };
    return {at(0.25), at(0.5), at(0.75)};
  }
};

/// A fresh μ0 per outer iteration; the realized risk curves of argmin_inner_reps data draws are
/// averaged and the grid argmin of the mean curve is recorded. Outer rep i draws μ0 from
/// Stream(seed, i, Signal, 1) and inner draw j from slot sub = 1 + j, disjoint from the risk curves.
inline ArgminSummary run_argmin_experiment(const ExperimentConfig& c, int threads = 1) {
  c.validate();
  const std::vector<double> etas = io::parse_grid(c.argmin_grid);
  require_admissible_grid(etas, c.m, c.n);
  const CovarianceModel model = c.model_for(c.n);

  using Out = std::array<ArgminRecord, 3>;
  int failed = 0;
  const auto outs = run_reps<Out>(
      c.argmin_reps, threads,
      [&](int rep) {
        const auto urep = static_cast<std::uint32_t>(rep);
        rng::Stream ss(c.seed, urep, rng::Role::Signal, 1);
        SignalVector mu0 = sample_signal(c.signal, c.n, ss);
        const double eta_star = optimal_eta(c.sigma_sq, mu0.norm_sq());
        std::array<std::vector<double>, 3> curves;
        for (auto& cv : curves) cv.assign(etas.size(), 0.0);
        for (int j = 0; j < c.argmin_inner_reps; ++j) {
          const Replication r = draw_replication(c, model, mu0, c.m, urep, 1 + static_cast<std::uint32_t>(j));
          const RidgePath path(r.X, r.Y, c.n);
          for (std::size_t i = 0; i < etas.size(); ++i) {
            const auto risks = realized_risks(path, r, etas[i]);
            for (std::size_t k = 0; k < 3; ++k) curves[k][i] += risks[kind_index(kTunedKinds[k])];
          }
        }
        Out out;
        for (std::size_t k = 0; k < 3; ++k)
          out[k] = {rep, kTunedKinds[k], etas[ridgelab::detail::argmin_first(curves[k])], eta_star};
        return out;
      },
      &failed, "argmin experiment");

  ArgminSummary s;
  s.etas = etas;
  s.reps = c.argmin_reps;
  s.failed = failed;
  s.seed = c.seed;
  for (const auto& o : outs)
    if (o)
      for (const auto& rec : *o) s.records.push_back(rec);
  return s;
}

// ---- Fig 2: tuning and inference ------------------------------------------

struct TuningRep {
  int rep = 0;
  double eta_gcv = 0.0, eta_cv = 0.0, eta_star = 0.0;
  std::array<double, 3> risk_gcv{}, risk_cv{}, risk_min{}, risk_oracle{};  // pred, est, ins
  double coverage_gcv = 0.0, coverage_cv = 0.0, coverage_oracle = 0.0;
  double len_gcv = 0.0, len_cv = 0.0, len_oracle = 0.0;  // CI length for coordinate 1
};

struct PhiSummary {
  double phi = 0.0;  // nominal sweep value
  Index m = 0, n = 0;
  std::vector<double> etas;
  std::vector<TuningRep> reps;  // successful reps in rep order
  int failed = 0;
};

struct TuningSummary {
  std::vector<PhiSummary> per_phi;
  int reps = 0;
  std::uint64_t seed = 0;
};

/// One φ slot of the sweep; every stream uses sub = phi_index.
inline PhiSummary run_tuning_phi(const ExperimentConfig& c, std::size_t phi_index, int threads) {
  const double phi = c.phis.at(phi_index);
  const Index m = c.m;
  const Index n = ExperimentConfig::n_for_phi(m, phi);
  const auto sub = static_cast<std::uint32_t>(phi_index);
  const CovarianceModel model = c.model_for(n);
  const std::vector<double> etas = admissible_grid(io::parse_grid(c.eta_grid), m, n);
  const double phi_real = static_cast<double>(m) / static_cast<double>(n);

  int failed = 0;
  const auto outs = run_reps<TuningRep>(
      c.reps, threads,
      [&](int rep) {
        const auto urep = static_cast<std::uint32_t>(rep);
        SignalVector mu0 = signal_for(c, n, urep, sub);
        const Replication r = draw_replication(c, model, std::move(mu0), m, urep, sub);
        const Dataset d = r.dataset();
        const RidgePath path(r.X, r.Y, n);
        TuningRep t;
        t.rep = rep;

        std::vector<double> gcv_obj;
        std::array<std::vector<double>, 3> curves;
        for (double eta : etas) {
          gcv_obj.push_back(path.gamma_hat(eta));
          const auto risks = realized_risks(path, r, eta);
          for (std::size_t k = 0; k < 3; ++k) curves[k].push_back(risks[kind_index(kTunedKinds[k])]);
        }
        rng::Stream fs(c.seed, urep, rng::Role::Fold, sub);
        const auto folds = make_folds(m, c.k, fs);
        const std::vector<double> cv_obj = kfold_objective(d, etas, folds);
        const std::size_t i_gcv = ridgelab::detail::argmin_first(gcv_obj);
        const std::size_t i_cv = ridgelab::detail::argmin_first(cv_obj);
        t.eta_gcv = etas[i_gcv];
        t.eta_cv = etas[i_cv];
        for (std::size_t k = 0; k < 3; ++k) {
          t.risk_gcv[k] = curves[k][i_gcv];
          t.risk_cv[k] = curves[k][i_cv];
          t.risk_min[k] = *std::min_element(curves[k].begin(), curves[k].end());
        }

        auto ci_stats = [&](double eta, double tau, double gamma, double& cov, double& len) {
          const Vector mu_dr = debias(path.mu_hat(eta), tau, model);
          const CIReport rep_ci = confidence_intervals(mu_dr, gamma, model, c.alpha, n);
          cov = coverage(rep_ci, r.mu0.coords());
          len = rep_ci.upper(0) - rep_ci.lower(0);
        };
        ci_stats(t.eta_gcv, path.tau_hat(t.eta_gcv), gcv_obj[i_gcv], t.coverage_gcv, t.len_gcv);
        ci_stats(t.eta_cv, path.tau_hat(t.eta_cv), path.gamma_hat(t.eta_cv), t.coverage_cv, t.len_cv);

        t.eta_star = optimal_eta(c.sigma_sq, r.mu0.norm_sq());
        const EffectiveParams p = solve_effective(problem_for(r, c, t.eta_star));
        for (std::size_t k = 0; k < 3; ++k)
          t.risk_oracle[k] = rmt_risk(kTunedKinds[k], p, c.sigma_sq, r.mu0.norm_sq(), phi_real);
        // Oracle CI: τ*, γ* at η*; its length is 2γ*(Σ⁻¹)₁₁^{1/2}z/√n.
        ci_stats(t.eta_star, p.tau, std::sqrt(p.gamma_sq), t.coverage_oracle, t.len_oracle);
        return t;
      },
      &failed, "tuning experiment");

  PhiSummary ps;
  ps.phi = phi;
  ps.m = m;
  ps.n = n;
  ps.etas = etas;
  ps.failed = failed;
  for (const auto& o : outs)
    if (o) ps.reps.push_back(*o);
  return ps;
}

inline TuningSummary run_tuning_experiment(const ExperimentConfig& c, int threads = 1) {
  c.validate();
  detail::require(!c.phis.empty(), "tuning experiment needs a nonempty phi sweep");
  detail::require(c.sigma_sq > 0, "tuning experiment needs sigma_sq > 0 (finite positive eta*)");
  detail::require(c.signal.radius > 0, "tuning experiment needs a nonzero signal");
  detail::require(c.phis.size() <= rng::Stream::kMaxSub, "phi sweep too long");
  TuningSummary s;
  s.reps = c.reps;
  s.seed = c.seed;
  for (std::size_t i = 0; i < c.phis.size(); ++i) s.per_phi.push_back(run_tuning_phi(c, i, threads));
  return s;
}

// ---- estimator consistency -------------------------------------------------------

struct EstimatorRep {
  int rep = 0;
  double sup_tau = 0.0;    // sup over η of |τ̂ − τ*|
  double sup_gamma = 0.0;  // sup over η of |γ̂ − γ*|
};

struct EstimatorSummary {
  std::vector<double> etas;
  std::vector<EstimatorRep> reps;
  int failed = 0;

  double fraction_tau_within(double bound) const { return fraction(bound, &EstimatorRep::sup_tau); }
  double fraction_gamma_within(double bound) const { return fraction(bound, &EstimatorRep::sup_gamma); }

 private:
  double fraction(double bound, double EstimatorRep::*field) const {
    if (reps.empty()) return 0.0;
    std::size_t ok = 0;
    for (const auto& r : reps) ok += r.*field <= bound;
    return static_cast<double>(ok) / static_cast<double>(reps.size());
  }
};

/// Sup-η deviations of (τ̂, γ̂) from the fixed point (τ*, γ*) at (m, n), slot sub = 0.
inline EstimatorSummary run_estimator_experiment(const ExperimentConfig& c, int threads = 1) {
  c.validate();
  const CovarianceModel model = c.model_for(c.n);
  const std::vector<double> etas = io::parse_grid(c.eta_grid);
  require_admissible_grid(etas, c.m, c.n);
  int failed = 0;
  const auto outs = run_reps<EstimatorRep>(
      c.reps, threads,
      [&](int rep) {
        const auto urep = static_cast<std::uint32_t>(rep);
        const Replication r = draw_replication(c, model, signal_for(c, c.n, urep, 0), c.m, urep, 0);
        const RidgePath path(r.X, r.Y, c.n);
        EstimatorRep e;
        e.rep = rep;
        for (double eta : etas) {
          const EffectiveParams p = solve_effective(problem_for(r, c, eta));
          e.sup_tau = std::max(e.sup_tau, std::abs(path.tau_hat(eta) - p.tau));
          e.sup_gamma = std::max(e.sup_gamma, std::abs(path.gamma_hat(eta) - std::sqrt(p.gamma_sq)));
        }
        return e;
      },
      &failed, "estimator experiment");
  EstimatorSummary s;
  s.etas = etas;
  s.failed = failed;
  for (const auto& o : outs)
    if (o) s.reps.push_back(*o);
  return s;
}

// ---- distributional proximity -------------------------------------------------

enum class Statistic { ScaledL1, L2Distance, Projection };
inline constexpr std::array<Statistic, 3> kAllStatistics = {Statistic::ScaledL1, Statistic::L2Distance,
                                                            Statistic::Projection};

inline std::string to_string(Statistic s) {
  switch (s) {
    case Statistic::ScaledL1: return "scaled_l1";
    case Statistic::L2Distance: return "l2_distance";
    case Statistic::Projection:
    default: return "projection";
  }
}

/// Built-in 1-Lipschitz statistics: n^{-1/2}‖μ̂−μ0‖₁, ‖μ̂−μ0‖, ⟨μ̂, μ0/‖μ0‖⟩.
inline double evaluate(Statistic s, const Vector& mu_hat, const Vector& mu0) {
  switch (s) {
    case Statistic::ScaledL1:
      return (mu_hat - mu0).lpNorm<1>() / std::sqrt(static_cast<double>(mu0.size()));
    case Statistic::L2Distance:
      return (mu_hat - mu0).norm();
    case Statistic::Projection:
    default: {
      const double nn = mu0.norm();
      return nn > 0 ? mu_hat.dot(mu0) / nn : 0.0;
    }
  }
}

struct DistributionalOptions {
  std::vector<Statistic> stats{kAllStatistics.begin(), kAllStatistics.end()};
  double threshold = 0.1;  // per-rep sup-η discrepancy bound
  double fraction = 0.9;   // required share of reps within the bound
  double self_z = 3.0;     // self-test bound in standard errors
};

struct StatisticReport {
  Statistic stat = Statistic::ScaledL1;
  std::vector<double> reference, reference_se;  // per η: MC mean of g(μ̂^seq) and its SE
  std::vector<double> mean_abs_discrepancy;     // per η, over reps
  std::vector<double> sup_discrepancy;          // per rep
  std::vector<double> self_z;                   // per η: |mean fresh − reference| / SE
  double pass_fraction = 0.0;
  double mean_sup = 0.0;
  double max_self_z = 0.0;
  bool passed = false;
};

struct DistributionalReport {
  std::vector<double> etas;
  std::vector<StatisticReport> stats;
  int reps = 0;
  int failed = 0;
  Dist design = Dist::Gaussian;
  bool passed = false;

  const StatisticReport& stat(Statistic s) const {
    for (const auto& r : stats)
      if (r.stat == s) return r;
    throw InvalidArgument("report has no statistic " + to_string(s));
  }
};

/// Compares g(μ̂_η) with E g(μ̂^seq(γ*, τ*)) across the η grid for one fixed μ0.
/// Reference draws read Stream(seed, j, Seq, η-index); the self-test draws use
/// Stream(seed, rep, Seq, 2^23 + η-index).
inline DistributionalReport distributional_check(const ExperimentConfig& c, const DistributionalOptions& opt = {},
                                                 int threads = 1) {
  c.validate();
  detail::require(!opt.stats.empty(), "distributional_check needs at least one statistic");
  const std::vector<double> etas = io::parse_grid(c.eta_grid);
  require_admissible_grid(etas, c.m, c.n);
  detail::require(etas.size() < (1u << 23), "eta grid too long");
  const CovarianceModel model = c.model_for(c.n);
  const SignalVector mu0 = signal_for(c, c.n, 0, 0);
  const double phi = static_cast<double>(c.m) / static_cast<double>(c.n);
  const std::size_t g = etas.size(), ns = opt.stats.size();

  std::vector<EffectiveParams> params;
  for (double eta : etas) params.push_back(solve_effective(ProblemConfig{phi, eta, c.sigma_sq, model, mu0}));

  // Reference means, one task per η.
  std::vector<std::vector<MCEstimate>> ref(g, std::vector<MCEstimate>(ns));
  parallel_for(static_cast<int>(g), threads, [&](int i) {
    const auto& p = params[static_cast<std::size_t>(i)];
    std::vector<std::vector<double>> vals(ns);
    for (int j = 0; j < c.seq_reps; ++j) {
      rng::Stream s(c.seed, static_cast<std::uint32_t>(j), rng::Role::Seq, static_cast<std::uint32_t>(i));
      const Vector mh = seq_model_sample(model, mu0.coords(), std::sqrt(p.gamma_sq), p.tau, s).mu_hat;
      for (std::size_t q = 0; q < ns; ++q) vals[q].push_back(evaluate(opt.stats[q], mh, mu0.coords()));
    }
    for (std::size_t q = 0; q < ns; ++q) ref[static_cast<std::size_t>(i)][q] = mean_and_se(vals[q]);
  });

  struct RepOut {
    std::vector<std::vector<double>> data, fresh;  // [stat][η]
  };
  int failed = 0;
  const auto outs = run_reps<RepOut>(
      c.reps, threads,
      [&](int rep) {
        const auto urep = static_cast<std::uint32_t>(rep);
        const Replication r = draw_replication(c, model, mu0, c.m, urep, 0);
        const RidgePath path(r.X, r.Y, c.n);
        RepOut o;
        o.data.assign(ns, std::vector<double>(g));
        o.fresh.assign(ns, std::vector<double>(g));
        for (std::size_t i = 0; i < g; ++i) {
          const Vector mh = path.mu_hat(etas[i]);
          rng::Stream s(c.seed, urep, rng::Role::Seq, (1u << 23) + static_cast<std::uint32_t>(i));
          const Vector sh = seq_model_sample(model, mu0.coords(), std::sqrt(params[i].gamma_sq), params[i].tau, s).mu_hat;
          for (std::size_t q = 0; q < ns; ++q) {
            o.data[q][i] = evaluate(opt.stats[q], mh, mu0.coords());
            o.fresh[q][i] = evaluate(opt.stats[q], sh, mu0.coords());
          }
        }
        return o;
      },
      &failed, "distributional check");

  DistributionalReport rep;
  rep.etas = etas;
  rep.reps = c.reps;
  rep.failed = failed;
  rep.design = c.design;
  rep.passed = true;
  for (std::size_t q = 0; q < ns; ++q) {
    StatisticReport sr;
    sr.stat = opt.stats[q];
    for (std::size_t i = 0; i < g; ++i) {
      sr.reference.push_back(ref[i][q].mean);
      sr.reference_se.push_back(ref[i][q].se);
    }
    sr.mean_abs_discrepancy.assign(g, 0.0);
    std::vector<std::vector<double>> fresh_by_eta(g);
    int within = 0;
    for (const auto& o : outs) {
      if (!o) continue;
      double sup = 0.0;
      for (std::size_t i = 0; i < g; ++i) {
        const double dev = std::abs(o->data[q][i] - sr.reference[i]);
        sr.mean_abs_discrepancy[i] += dev;
        sup = std::max(sup, dev);
        fresh_by_eta[i].push_back(o->fresh[q][i]);
      }
      sr.sup_discrepancy.push_back(sup);
      if (sup <= opt.threshold) ++within;
    }
    const auto used = static_cast<double>(sr.sup_discrepancy.size());
    for (double& v : sr.mean_abs_discrepancy) v /= used;
    for (std::size_t i = 0; i < g; ++i) {
      const MCEstimate f = mean_and_se(fresh_by_eta[i]);
      const double se = std::hypot(f.se, sr.reference_se[i]);
      const double diff = std::abs(f.mean - sr.reference[i]);
      sr.self_z.push_back(se > 0 ? diff / se : (diff == 0 ? 0.0 : INFINITY));
    }
    sr.max_self_z = *std::max_element(sr.self_z.begin(), sr.self_z.end());
    sr.pass_fraction = within / used;
    double total = 0.0;
    for (double v : sr.sup_discrepancy) total += v;
    sr.mean_sup = total / used;
    sr.passed = sr.pass_fraction >= opt.fraction && sr.max_self_z <= opt.self_z;
    rep.passed = rep.passed && sr.passed;
    rep.stats.push_back(std::move(sr));
  }
  return rep;
}

struct UniversalityReport {
  DistributionalReport gaussian, t10;
  std::vector<double> ratio;  // per statistic: max/min of the two mean sup-discrepancies
  double max_ratio = 0.0;
  bool passed = false;
};

/// Runs the check under both design laws (same seed); the mean sup-discrepancies must agree within 2×.
inline UniversalityReport universality_check(ExperimentConfig c, const DistributionalOptions& opt = {},
                                             int threads = 1, double max_ratio = 2.0) {
  UniversalityReport u;
  c.design = Dist::Gaussian;
  u.gaussian = distributional_check(c, opt, threads);
  c.design = Dist::ScaledT10;
  u.t10 = distributional_check(c, opt, threads);
  for (std::size_t q = 0; q < u.gaussian.stats.size(); ++q) {
    const double a = u.gaussian.stats[q].mean_sup, b = u.t10.stats[q].mean_sup;
    const double r = std::min(a, b) > 0 ? std::max(a, b) / std::min(a, b) : (a == b ? 1.0 : INFINITY);
    u.ratio.push_back(r);
    u.max_ratio = std::max(u.max_ratio, r);
  }
  u.passed = u.max_ratio <= max_ratio;
  return u;
}

}  // namespace simlab
}  // namespace ridgelab
