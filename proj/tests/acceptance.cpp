// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Tolerances are the pinned ones; seeds are fixed so the run is reproducible.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ridgelab/cli.hpp"
#include "ridgelab/fixedpoint.hpp"
#include "ridgelab/io.hpp"
#include "ridgelab/riskengine.hpp"
#include "ridgelab/simlab.hpp"

using namespace ridgelab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

ProblemConfig make_config(CovarianceModel model, double phi, double eta, double sigma_sq, Vector mu) {
  ProblemConfig c;
  c.phi = phi;
  c.eta = eta;
  c.sigma_sq = sigma_sq;
  c.model = std::move(model);
  c.signal = SignalVector(std::move(mu));
  return c;
}

Vector random_direction(Index n, double radius, std::mt19937_64& gen) {
  std::normal_distribution<double> nd;
  Vector v(n);
  for (Index j = 0; j < n; ++j) v(j) = nd(gen);
  return v * (radius / v.norm());
}

std::size_t argmin(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::min_element(v.begin(), v.end()) - v.begin());
}

std::size_t nearest(const std::vector<double>& grid, double x) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (std::abs(grid[i] - x) < std::abs(grid[best] - x)) best = i;
  return best;
}

// ---- analytic criteria -----------------------------------------------------------

Outcome fixed_point_exactness() {
  std::mt19937_64 gen(20240601);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<ProblemConfig> configs;
  for (int t = 0; t < 100; ++t) {
    const Index n = 5 + static_cast<Index>(u(gen) * 95);
    std::vector<double> ev(static_cast<std::size_t>(n));
    for (auto& x : ev) x = 0.2 + 4.8 * u(gen);
    const double phi = 0.3 + 2.7 * u(gen);
    double eta = 2.0 * u(gen);
    if (phi < 1.0 && t % 5 == 0) eta = 0.0;  // ridgeless configs, only where admissible
    configs.push_back(make_config(CovarianceModel::explicit_spectrum(ev), phi, eta, 2.0 * u(gen),
                                  random_direction(n, u(gen), gen)));
  }
  double worst = 0.0;
  bool in_bounds = true;
  const Clock clock;
  for (const auto& c : configs) {
    const EffectiveParams p = solve_effective(c);
    const auto [r1, r2] = fixed_point_residuals(c, p);
    worst = std::max({worst, std::abs(r1), std::abs(r2)});
    const TauBounds b = tau_bounds(c);
    in_bounds = in_bounds && p.tau >= b.lo && p.tau <= b.hi;
  }
  const double secs = clock.seconds();
  return {worst <= 1e-10 && in_bounds && secs <= 1.0,
          "max residual " + fmt(worst) + ", tau in bounds " + (in_bounds ? "yes" : "no") + ", " + fmt(secs) + " s"};
}

Outcome isotropic_closed_forms() {
  const auto one = CovarianceModel::isotropic(1);
  const Vector mu = Vector::Ones(1);
  const EffectiveParams p = solve_effective(make_config(one, 0.5, 0.0, 1.0, mu));
  const double e0 = std::max({std::abs(p.tau - 1.0), std::abs(p.gamma_sq - 5.0), std::abs(p.tau_prime - 4.0),
                              std::abs(p.tau_second + 16.0), std::abs(p.gamma_tilde_sq - 5.0)});
  const EffectiveParams q = solve_effective(make_config(one, 0.5, 1.0, 1.0, mu));
  const double e1 = std::abs(q.tau - (3.0 + std::sqrt(17.0)) / 2.0);
  return {e0 <= 1e-9 && e1 <= 1e-10, "eta=0 max error " + fmt(e0) + ", eta=1 tau error " + fmt(e1)};
}

Outcome rmt_equivalence() {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::vector<double> etas = io::parse_grid("0:1.5:161");
  double worst = 0.0;
  int points = 0;
  for (int t = 0; t < 10; ++t) {
    const Index n = t == 0 ? 200 : 10 + 20 * t;
    const double phi = t == 0 ? 0.5 : (t % 2 ? 0.3 + 0.6 * u(gen) : 1.1 + 1.5 * u(gen));
    const auto c = make_config(CovarianceModel::isotropic(n, t == 0 ? 1.0 : 0.3 + 3.0 * u(gen)), phi, 0.0,
                               t == 0 ? 1.0 : 2.0 * u(gen), random_direction(n, t == 0 ? 1.0 : u(gen), gen));
    for (double eta : etas) {
      if (eta == 0.0 && phi >= 1.0) continue;
      const EffectiveParams p = solve_effective(c.with_eta(eta));
      for (RiskKind k : kAllRiskKinds) {
        worst = std::max(worst, std::abs(rmt_risk(k, p, c.sigma_sq, c.signal.norm_sq(), phi) -
                                         theoretical_risk(k, p, c.model, c.signal, c.sigma_sq, phi)));
        ++points;
      }
    }
  }
  return {worst <= 1e-8, std::to_string(points) + " points, max |rmt - theoretical| " + fmt(worst)};
}

Outcome derivative_structure() {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double h = 1e-5;
  double worst_fd = 0.0, worst_zero = 0.0;
  bool argmins = true;
  const std::vector<double> etas = io::parse_grid("0:1.5:161");
  for (int t = 0; t < 6; ++t) {
    const Index n = 200;
    std::vector<double> ev(n);
    for (auto& x : ev) x = 0.2 + 4.8 * u(gen);
    const CovarianceModel model = t % 3 == 0   ? CovarianceModel::isotropic(n)
                                  : t % 3 == 1 ? CovarianceModel::spiked_uniform(n, 1.99, 0.01)
                                               : CovarianceModel::explicit_spectrum(ev);
    const double sigma_sq = t < 3 ? 1.0 : 0.5;
    const auto c = make_config(model, 0.4 + 0.25 * t, 0.0, sigma_sq, random_direction(n, 1.0, gen));
    const double eta_star = optimal_eta(sigma_sq, c.signal.norm_sq());
    for (double eta : {0.1, 0.3, 0.7, 1.3, 2.0}) {
      if (std::abs(eta - eta_star) < 0.05) continue;  // relative error is meaningless at the zero
      const EffectiveParams p = solve_effective(c.with_eta(eta));
      const EffectiveParams lo = solve_effective(c.with_eta(eta - h));
      const EffectiveParams hi = solve_effective(c.with_eta(eta + h));
      for (RiskKind k : simlab::kTunedKinds) {
        const double fd = (rmt_risk(k, hi, sigma_sq, 1.0, c.phi) - rmt_risk(k, lo, sigma_sq, 1.0, c.phi)) / (2 * h);
        const double d = risk_derivative(k, p, c.model, sigma_sq, 1.0, c.phi);
        worst_fd = std::max(worst_fd, std::abs(fd - d) / std::abs(d));
      }
    }
    const EffectiveParams ps = solve_effective(c.with_eta(eta_star));
    for (RiskKind k : simlab::kTunedKinds) {
      worst_zero = std::max(worst_zero, std::abs(risk_derivative(k, ps, c.model, sigma_sq, 1.0, c.phi)));
      std::vector<double> g = etas;
      if (c.phi >= 1.0) g.erase(g.begin());  // η = 0 is outside the domain there
      const RiskCurve curve = risk_curve(c, k, g);
      argmins = argmins && argmin(curve.rmt) == nearest(g, eta_star);
    }
  }
  return {worst_fd <= 1e-4 && worst_zero <= 1e-12 && argmins,
          "max rel FD error " + fmt(worst_fd) + ", |d risk| at eta* " + fmt(worst_zero) + ", shared argmin " +
              (argmins ? "yes" : "no")};
}

Outcome opt_identities() {
  const double tau = solve_tau(make_config(CovarianceModel::isotropic(1), 0.5, 1.0, 1.0, Vector::Ones(1)));
  const OptRisks o = opt_risks(0.5, 1.0, tau);
  // At φ = 1/2, η* = 1, τ = (3+√17)/2: OPT^pred = OPT^est = (√17−1)/4, OPT^ins = (5−√17)/4.
  const double pred = (std::sqrt(17.0) - 1.0) / 4.0;
  const double ins = (5.0 - std::sqrt(17.0)) / 4.0;
  double err = std::max({std::abs(o.pred - pred), std::abs(o.est - pred), std::abs(o.ins - ins)});
  err = std::max({err, std::abs(o.ins * (o.pred + 1.0) - 0.5 * o.pred)});
  const bool published = std::abs(o.pred - 0.7807764) <= 5e-8 && std::abs(o.ins - 0.2192236) <= 5e-8;
  bool monotone = true;
  for (const auto& model : {CovarianceModel::isotropic(100), CovarianceModel::spiked_uniform(100, 1.99, 0.01)}) {
    std::mt19937_64 gen(9);
    const Vector mu = random_direction(100, 1.0, gen);
    OptRisks prev{};
    for (int i = 0; i < 20; ++i) {
      const double phi = 0.2 + 0.15 * i;
      const OptRisks cur = opt_risks(phi, 1.0, solve_tau(make_config(model, phi, 1.0, 1.0, mu)));
      if (i > 0) monotone = monotone && cur.pred <= prev.pred + 1e-12 && cur.est <= prev.est + 1e-12 &&
                            cur.ins >= prev.ins - 1e-12;
      prev = cur;
    }
  }
  return {err <= 1e-10 && published && monotone,
          "OPT pred/est/ins " + fmt(o.pred, 8) + "/" + fmt(o.est, 8) + "/" + fmt(o.ins, 8) + ", identity error " +
              fmt(err) + ", monotone " + (monotone ? "yes" : "no")};
}

Outcome lq_cross_oracle() {
  const Clock clock;
  const Index n = 400;
  const auto model = CovarianceModel::spiked_uniform(n, 1.99, 0.01);
  const SignalVector mu0 = simlab::sample_signal({simlab::SignalMode::Sphere, 1.0}, n, 11);
  const EffectiveParams p = solve_effective(ProblemConfig{0.5, 1.0, 1.0, model, mu0});
  const Vector diag = lq_gamma_diag(LqWeight::identity(), model, p, mu0.norm());
  double worst = 0.0;
  for (double q : {1.0, 2.0, 4.0}) {
    const double exact = lq_risk(q, diag, n);
    const auto mc = simlab::seq_model_lq_mc(q, LqWeight::identity(), model, mu0, std::sqrt(p.gamma_sq), p.tau, 2000, 29);
    worst = std::max(worst, std::abs(mc.mean - exact) / exact);
  }
  const double q2 = std::abs(lq_risk(2.0, diag, n) - std::sqrt(diag.mean()));
  const double secs = clock.seconds();
  return {worst <= 0.05 && q2 <= 1e-12 && secs <= 30.0,
          "max rel MC gap " + fmt(worst) + ", q=2 identity error " + fmt(q2) + ", " + fmt(secs) + " s"};
}

// ---- Monte Carlo criteria --------------------------------------------------------

simlab::ExperimentConfig risk_setting() {
  simlab::ExperimentConfig c = simlab::fig1_defaults();  // spiked Σ, t₁₀, m=100, n=200, σ²=1, unit μ0
  c.reps = 200;
  return c;
}

Outcome risk_concentration(const simlab::MCSummary& s, double secs) {
  double worst = 0.0;
  bool argmin_ok = true;
  std::string where;
  const std::size_t star = nearest(s.etas, 1.0);
  for (RiskKind k : simlab::kTunedKinds) {
    const auto& c = s.curve(k);
    for (std::size_t i = 0; i < s.etas.size(); ++i)
      worst = std::max(worst, std::abs(c.emp_mean[i] - c.theoretical[i]) / c.theoretical[i]);
    const std::size_t a = argmin(c.emp_mean);
    const auto steps = static_cast<long>(a) - static_cast<long>(star);
    argmin_ok = argmin_ok && std::labs(steps) <= 2;
    where += " " + to_string(k) + "@" + fmt(s.etas[a]);
  }
  return {worst <= 0.10 && argmin_ok && secs <= 300.0 && s.failed == 0,
          "max rel gap " + fmt(worst) + ", argmins" + where + ", " + fmt(secs, 3) + " s"};
}

Outcome phase_transition(const simlab::MCSummary& noisy) {
  auto gap = [](const simlab::MCSummary& s) {
    const auto& c = s.curve(RiskKind::Pred).emp_mean;
    return c.front() - *std::min_element(c.begin(), c.end());
  };
  simlab::ExperimentConfig q = risk_setting();
  q.sigma_sq = 0.0;
  const simlab::MCSummary quiet = simlab::run_risk_experiment(q, simlab::resolve_threads(-1));
  const double g_noisy = gap(noisy), g_quiet = gap(quiet);
  const bool at_zero = argmin(quiet.curve(RiskKind::Pred).emp_mean) == 0;
  return {g_noisy >= 0.3 && g_quiet <= 0.02 && at_zero,
          "noisy gap " + fmt(g_noisy) + ", noiseless gap " + fmt(g_quiet) + ", noiseless argmin at 0 " +
              (at_zero ? "yes" : "no")};
}

Outcome estimator_consistency() {
  simlab::ExperimentConfig c = simlab::fig1_defaults();
  c.m = 200;
  c.n = 400;
  c.reps = 100;
  const auto s = simlab::run_estimator_experiment(c, simlab::resolve_threads(-1));
  const double bound = std::pow(400.0, -1.0 / 3.0);
  const double ft = s.fraction_tau_within(bound), fg = s.fraction_gamma_within(0.15);
  std::vector<double> sup_g;
  for (const auto& r : s.reps) sup_g.push_back(r.sup_gamma);
  std::nth_element(sup_g.begin(), sup_g.begin() + sup_g.size() / 2, sup_g.end());
  return {ft >= 0.95 && fg >= 0.90 && s.failed == 0,
          "tau within n^-1/3 in " + fmt(ft) + ", gamma within 0.15 in " + fmt(fg) + " of " +
              std::to_string(s.reps.size()) + " reps (median sup |gamma_hat - gamma*| " +
              fmt(sup_g[sup_g.size() / 2]) + ")"};
}

simlab::PhiSummary tuning_setting() {
  simlab::ExperimentConfig c = simlab::fig2_defaults();  // 31-point grid, k = 5, per-rep unit μ0, σ² = 1
  c.m = 200;
  c.phis = {2.0 / 3.0};
  c.reps = 100;
  c.alpha = 0.05;
  return simlab::run_tuning_phi(c, 0, simlab::resolve_threads(-1));
}

Outcome tuning_optimality(const simlab::PhiSummary& ps) {
  double worst = 1.0;
  std::string detail;
  for (const char* method : {"gcv", "cv"}) {
    for (std::size_t k = 0; k < 3; ++k) {
      int ok = 0;
      for (const auto& r : ps.reps) {
        const double got = std::string(method) == "gcv" ? r.risk_gcv[k] : r.risk_cv[k];
        ok += got - r.risk_min[k] <= std::max(0.10 * r.risk_min[k], 0.05);
      }
      const double frac = static_cast<double>(ok) / static_cast<double>(ps.reps.size());
      worst = std::min(worst, frac);
      detail += std::string(" ") + method + "/" + to_string(simlab::kTunedKinds[k]) + "=" + fmt(frac, 3);
    }
  }
  return {worst >= 0.85 && ps.failed == 0 && ps.n == 300, "n=" + std::to_string(ps.n) + "," + detail};
}

Outcome inference(const simlab::PhiSummary& ps) {
  const double cnt = static_cast<double>(ps.reps.size());
  double cov_g = 0, cov_c = 0, len_g = 0, len_c = 0, len_o = 0;
  for (const auto& r : ps.reps) {
    cov_g += r.coverage_gcv / cnt;
    cov_c += r.coverage_cv / cnt;
    len_g += r.len_gcv / cnt;
    len_c += r.len_cv / cnt;
    len_o += r.len_oracle / cnt;
  }
  const auto in = [](double v) { return v >= 0.92 && v <= 0.97; };
  const double dl = std::max(std::abs(len_g - len_o), std::abs(len_c - len_o)) / len_o;
  return {in(cov_g) && in(cov_c) && dl <= 0.10,
          "coverage gcv " + fmt(cov_g) + ", cv " + fmt(cov_c) + "; CI length gcv " + fmt(len_g) + ", cv " +
              fmt(len_c) + ", oracle " + fmt(len_o)};
}

Outcome distributional_proximity() {
  simlab::ExperimentConfig c = simlab::fig1_defaults();
  c.m = 200;
  c.n = 400;
  c.reps = 100;
  c.eta_grid = "0:1.5:16";
  const auto u = simlab::universality_check(c, {}, simlab::resolve_threads(-1));
  std::string detail;
  for (const auto* r : {&u.gaussian, &u.t10}) {
    detail += simlab::to_string(r->design) + ":";
    for (const auto& s : r->stats) detail += " " + simlab::to_string(s.stat) + "=" + fmt(s.pass_fraction, 3);
    detail += r->passed ? " [ok]; " : " [fail]; ";
  }
  detail += "max ratio " + fmt(u.max_ratio);
  return {u.gaussian.passed && u.t10.passed && u.passed, detail};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "ridgelab_acceptance_determinism";
  fs::remove_all(root);
  io::write_file(root / "fig1.json",
                 R"({"m":60,"n":120,"reps":40,"argmin_reps":20,"argmin_inner_reps":4,"eta_grid":"0:1.5:31",)"
                 R"("argmin_grid":"0:1.5:31"})");
  io::write_file(root / "fig2.json", R"({"m":60,"phis":[0.5,1.0,1.5],"reps":20})");
  const std::vector<std::pair<std::string, std::vector<std::string>>> pipelines = {
      {"fig1", {"risk_curves.csv", "argmin.csv", "run_meta.json"}},
      {"fig2", {"tuning.csv", "coverage.csv", "tuning_reps.csv", "run_meta.json"}}};
  bool same = true;
  std::string detail;
  for (const auto& [name, files] : pipelines) {
    const std::vector<std::pair<std::string, std::string>> runs = {{"a", "1"}, {"b", "1"}, {"c", "4"}};
    for (const auto& [tag, threads] : runs) {
      std::ostringstream out, err;
      const int code = cli::run({"sim", name, "--config", (root / (name + ".json")).string(), "--out-dir",
                                 (root / (name + tag)).string(), "--threads", threads},
                                out, err);
      if (code != 0) return {false, name + " run failed: " + err.str()};
    }
    std::size_t bytes = 0;
    for (const auto& f : files) {
      const std::string a = io::read_file(root / (name + "a") / f);
      bytes += a.size();
      same = same && a == io::read_file(root / (name + "b") / f) && a == io::read_file(root / (name + "c") / f);
    }
    detail += name + " " + std::to_string(bytes) + " bytes; ";
  }
  fs::remove_all(root);
  return {same, detail + (same ? "identical across runs and threads {1, 4}" : "outputs differ")};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("[%s] criterion %2d  %-28s %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "fixed-point exactness", fixed_point_exactness);
  report(2, "isotropic closed forms", isotropic_closed_forms);
  report(3, "rmt equivalence", rmt_equivalence);
  report(4, "derivative structure", derivative_structure);
  report(5, "optimal-risk identities", opt_identities);
  report(6, "l_q cross-oracle", lq_cross_oracle);

  simlab::MCSummary risk;
  double risk_secs = 0.0;
  bool have_risk = false;
  try {
    const Clock clock;
    risk = simlab::run_risk_experiment(risk_setting(), simlab::resolve_threads(-1));
    risk_secs = clock.seconds();
    have_risk = true;
  } catch (const std::exception& e) {
    std::printf("risk experiment failed: %s\n", e.what());
  }
  report(7, "risk concentration", [&] { return have_risk ? risk_concentration(risk, risk_secs) : Outcome{}; });
  report(8, "phase transition", [&] { return have_risk ? phase_transition(risk) : Outcome{}; });
  report(9, "estimator consistency", estimator_consistency);

  simlab::PhiSummary tuning;
  bool have_tuning = false;
  try {
    tuning = tuning_setting();
    have_tuning = true;
  } catch (const std::exception& e) {
    std::printf("tuning experiment failed: %s\n", e.what());
  }
  report(10, "tuning optimality", [&] { return have_tuning ? tuning_optimality(tuning) : Outcome{}; });
  report(11, "inference", [&] { return have_tuning ? inference(tuning) : Outcome{}; });
  report(12, "distributional proximity", distributional_proximity);
  report(13, "determinism", determinism);

  std::printf("%d of 13 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
