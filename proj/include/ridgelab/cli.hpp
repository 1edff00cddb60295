#pragma once

// Command-line front end. Every command computes all of its outputs in memory
// first and only then writes them, so a failing run leaves no files behind.
//
// Exit codes: 0 success, 1 usage/configuration error, 2 numerical failure.

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ridgelab/error.hpp"
#include "ridgelab/fixedpoint.hpp"
#include "ridgelab/io.hpp"
#include "ridgelab/regress.hpp"
#include "ridgelab/riskengine.hpp"
#include "ridgelab/simlab.hpp"
#include "ridgelab/spectrum.hpp"

#ifndef RIDGELAB_VERSION
#define RIDGELAB_VERSION "0.0.0"
#endif

namespace ridgelab {
namespace cli {

using json = nlohmann::json;
namespace fs = std::filesystem;
using io::format_double;

inline constexpr const char* kVersion = RIDGELAB_VERSION;

// ---- config files ----------------------------------------------------------------

/// Reads a JSON config; a run_meta.json ({"version", "command", "config"}) is unwrapped.
inline json load_config(const std::string& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw InvalidArgument("config '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw InvalidArgument("config '" + path + "' must be a JSON object");
  if (j.contains("version") && j.contains("config")) {
    detail::reject_unknown_keys(j, {"version", "command", "config"}, "run_meta");
    j = j.at("config");
    if (!j.is_object()) throw InvalidArgument("run_meta config must be a JSON object");
  }
  return j;
}

inline json run_meta(const std::string& command, const json& config) {
  return {{"version", kVersion}, {"command", command}, {"config", config}};
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("config key '") + key + "': " + e.what());
  }
}

/// Problem description shared by fpe, risk and lq.
struct ProblemSpec {
  double phi = 0.5;
  double sigma_sq = 1.0;
  json model = {{"kind", "isotropic"}, {"n", 200}, {"scale", 1.0}};
  json signal = {{"mode", "sphere"}, {"radius", 1.0}, {"seed", 0}};
  std::string eta_grid = "0:1.5:161";
  std::vector<std::string> kinds = {"pred", "est", "ins", "res"};
  double eta = 0.0;
  std::vector<double> q = {1.0, 2.0, 4.0};
  int mc_reps = 0;
  std::uint64_t mc_seed = 1;

  static ProblemSpec from_json(const json& j) {
    detail::reject_unknown_keys(j, {"phi", "m", "sigma_sq", "model", "signal", "eta_grid", "kinds", "eta", "q",
                                    "mc_reps", "mc_seed"},
                                "problem config");
    ProblemSpec s;
    if (j.contains("model")) s.model = j.at("model");
    if (j.contains("phi") && j.contains("m")) throw InvalidArgument("problem config: give phi or m, not both");
    s.phi = get_or(j, "phi", s.phi);
    s.sigma_sq = get_or(j, "sigma_sq", s.sigma_sq);
    if (j.contains("signal")) s.signal = j.at("signal");
    s.eta_grid = get_or(j, "eta_grid", s.eta_grid);
    s.kinds = get_or(j, "kinds", s.kinds);
    s.eta = get_or(j, "eta", s.eta);
    s.q = get_or(j, "q", s.q);
    s.mc_reps = get_or(j, "mc_reps", s.mc_reps);
    s.mc_seed = get_or(j, "mc_seed", s.mc_seed);
    if (j.contains("m")) s.phi = static_cast<double>(get_or<Index>(j, "m", 0)) / static_cast<double>(s.build_model().dim());
    return s;
  }

  json to_json() const {
    return {{"phi", phi},   {"sigma_sq", sigma_sq}, {"model", model}, {"signal", signal}, {"eta_grid", eta_grid},
            {"kinds", kinds}, {"eta", eta},         {"q", q},         {"mc_reps", mc_reps}, {"mc_seed", mc_seed}};
  }

  CovarianceModel build_model() const { return model_from_json(model); }

  /// {"coords": [...]} or {"mode": "sphere"|"ball_radial", "radius": r, "seed": s}.
  SignalVector build_signal(const CovarianceModel& m) const {
    if (!signal.is_object()) throw InvalidArgument("signal must be a JSON object");
    if (signal.contains("coords")) {
      detail::reject_unknown_keys(signal, {"coords"}, "signal");
      const auto c = get_or<std::vector<double>>(signal, "coords", {});
      m.check_dim(static_cast<Index>(c.size()));
      return SignalVector(Eigen::Map<const Vector>(c.data(), static_cast<Index>(c.size())));
    }
    detail::reject_unknown_keys(signal, {"mode", "radius", "seed"}, "signal");
    simlab::SignalSpec spec;
    spec.mode = simlab::parse_signal_mode(get_or<std::string>(signal, "mode", "sphere"));
    spec.radius = get_or(signal, "radius", 1.0);
    return simlab::sample_signal(spec, m.dim(), get_or<std::uint64_t>(signal, "seed", 0));
  }
};

// ---- output staging --------------------------------------------------------------

struct Outputs {
  std::vector<std::pair<fs::path, std::string>> files;

  void add(fs::path p, std::string content) { files.emplace_back(std::move(p), std::move(content)); }
  void add_json(fs::path p, const json& j) { add(std::move(p), j.dump(2) + "\n"); }
  void commit() const {
    for (const auto& [p, c] : files) io::write_file(p, c);
  }
};

inline fs::path meta_path_for(const fs::path& out) { return fs::path(out.string() + ".run_meta.json"); }

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  if (out.empty()) throw InvalidArgument("empty list '" + s + "'");
  return out;
}

// ---- commands ----------------------------------------------------------------

struct Context {
  std::ostream& out;
  bool quiet = false;
};

inline io::CsvTable fpe_table(const ProblemSpec& spec) {
  const CovarianceModel model = spec.build_model();
  const SignalVector mu0 = spec.build_signal(model);
  io::CsvTable t;
  t.header = {"eta", "tau", "gamma_sq", "tau_prime", "tau_second", "gamma_tilde_sq", "m", "m_prime", "m_second"};
  for (double eta : io::parse_grid(spec.eta_grid)) {
    const EffectiveParams p = solve_effective(ProblemConfig{spec.phi, eta, spec.sigma_sq, model, mu0});
    t.add_row({format_double(eta), format_double(p.tau), format_double(p.gamma_sq), format_double(p.tau_prime),
               format_double(p.tau_second), format_double(p.gamma_tilde_sq), format_double(p.m),
               format_double(p.m_prime), format_double(p.m_second)});
  }
  return t;
}

inline io::CsvTable risk_table(const ProblemSpec& spec) {
  const CovarianceModel model = spec.build_model();
  const SignalVector mu0 = spec.build_signal(model);
  const ProblemConfig base{spec.phi, 0.0, spec.sigma_sq, model, mu0};
  const std::vector<double> etas = io::parse_grid(spec.eta_grid);
  io::CsvTable t;
  t.header = {"eta", "kind", "theoretical", "rmt", "derivative"};
  for (const auto& name : spec.kinds) {
    const RiskKind kind = parse_risk_kind(name);
    const RiskCurve c = risk_curve(base, kind, etas);
    for (std::size_t i = 0; i < etas.size(); ++i)
      t.add_row({format_double(etas[i]), to_string(kind), format_double(c.theoretical[i]), format_double(c.rmt[i]),
                 c.derivative.empty() ? std::string() : format_double(c.derivative[i])});
  }
  return t;
}

inline io::CsvTable lq_table(const ProblemSpec& spec) {
  const CovarianceModel model = spec.build_model();
  const SignalVector mu0 = spec.build_signal(model);
  const EffectiveParams p = solve_effective(ProblemConfig{spec.phi, spec.eta, spec.sigma_sq, model, mu0});
  const Vector diag = lq_gamma_diag(LqWeight::identity(), model, p, mu0.norm());
  io::CsvTable t;
  t.header = {"q", "lq_risk"};
  if (spec.mc_reps > 0) t.header.insert(t.header.end(), {"mc_mean", "mc_se"});
  for (double q : spec.q) {
    std::vector<std::string> row{format_double(q), format_double(lq_risk(q, diag, model.dim()))};
    if (spec.mc_reps > 0) {
      const auto mc = simlab::seq_model_lq_mc(q, LqWeight::identity(), model, mu0, std::sqrt(p.gamma_sq), p.tau,
                                              spec.mc_reps, spec.mc_seed);
      row.push_back(format_double(mc.mean));
      row.push_back(format_double(mc.se));
    }
    t.add_row(std::move(row));
  }
  return t;
}

struct DataSpec {
  std::string data;
  double eta = 0.0;
  bool has_eta = false;
  std::string method = "gcv";
  int k = 5;
  std::string grid = "0:1.5:31";
  std::uint64_t seed = 7;
  double alpha = 0.05;

  static DataSpec from_json(const json& j) {
    detail::reject_unknown_keys(j, {"data", "eta", "method", "k", "grid", "seed", "alpha"}, "data config");
    DataSpec s;
    s.data = get_or(j, "data", s.data);
    if (j.contains("eta") && !j.at("eta").is_null()) {
      s.eta = get_or(j, "eta", 0.0);
      s.has_eta = true;
    }
    s.method = get_or(j, "method", s.method);
    s.k = get_or(j, "k", s.k);
    s.grid = get_or(j, "grid", s.grid);
    s.seed = get_or(j, "seed", s.seed);
    s.alpha = get_or(j, "alpha", s.alpha);
    return s;
  }

  json to_json() const {
    return {{"data", data},
            {"eta", has_eta ? json(eta) : json(nullptr)},
            {"method", method},
            {"k", k},
            {"grid", grid},
            {"seed", seed},
            {"alpha", alpha}};
  }

  Dataset load() const {
    if (data.empty()) throw InvalidArgument("no dataset given (use --data)");
    json j;
    try {
      j = json::parse(io::read_file(data));
    } catch (const json::parse_error& e) {
      throw InvalidArgument("dataset '" + data + "' is not valid JSON: " + e.what());
    }
    return io::dataset_from_json(j);
  }
};

inline TuningResult select_eta(const Dataset& d, const DataSpec& s) {
  const std::vector<double> grid = io::parse_grid(s.grid);
  if (s.method == "gcv") return gcv_select(d, grid);
  if (s.method == "cv") return kfold_select(d, grid, s.k, s.seed);
  throw InvalidArgument("unknown tuning method '" + s.method + "' (expected gcv or cv)");
}

inline json fit_summary(const Dataset& d, double eta) {
  const RidgeFit f = fit(d, eta);
  json j{{"m", d.m()}, {"n", d.n()}, {"phi", d.phi()}, {"eta", eta}, {"mu_hat_norm", f.mu_hat.norm()},
         {"r_hat_norm_sq", f.r_hat.squaredNorm()}, {"df_hat", df_hat(d, eta)}};
  if (!(eta == 0.0 && d.m() >= d.n())) {
    const double th = tau_hat(d, eta);
    const double gh = gamma_hat(d, f, eta);
    const NoiseEstimate s2 = sigma_hat_sq(gh, th, eta, d.phi(), f.mu_hat, d.model);
    j["tau_hat"] = th;
    j["gamma_hat"] = gh;
    j["sigma_hat_sq"] = s2.clamped;
    j["sigma_hat_sq_raw"] = s2.raw;
  }
  if (d.mu0) {
    json r;
    for (RiskKind k : kAllRiskKinds) r[to_string(k)] = empirical_risk(k, f, d);
    j["risks"] = r;
  }
  j["mu_hat"] = io::encode_vector(f.mu_hat);
  return j;
}

inline io::CsvTable ci_table(const Dataset& d, double eta, double alpha, double* coverage_out) {
  const RidgeFit f = fit(d, eta);
  const double th = tau_hat(d, eta);
  const double gh = gamma_hat(d, f, eta);
  CIReport rep = confidence_intervals(debias(f.mu_hat, th, d.model), gh, d.model, alpha, d.n());
  io::CsvTable t;
  t.header = {"j", "lower", "upper", "covered"};
  t.comments = {"eta=" + format_double(eta), "alpha=" + format_double(alpha), "tau_hat=" + format_double(th),
                "gamma_hat=" + format_double(gh)};
  for (Index j = 0; j < d.n(); ++j) {
    std::string covered;
    if (d.mu0) {
      const double v = d.mu0->coords()(j);
      covered = rep.lower(j) <= v && v <= rep.upper(j) ? "1" : "0";
    }
    t.add_row({std::to_string(j + 1), format_double(rep.lower(j)), format_double(rep.upper(j)), covered});
  }
  if (d.mu0) {
    const double cov = coverage(rep, d.mu0->coords());
    t.comments.push_back("coverage=" + format_double(cov));
    if (coverage_out) *coverage_out = cov;
  }
  return t;
}

// ---- simulation tables ---------------------------------------------------------

inline std::vector<std::string> seed_comments(const simlab::ExperimentConfig& c) {
  return {"seed=" + std::to_string(c.seed), std::string("ridgelab=") + kVersion};
}

inline io::CsvTable risk_curves_table(const simlab::ExperimentConfig& c, const simlab::MCSummary& s) {
  io::CsvTable t;
  t.comments = seed_comments(c);
  t.comments.push_back("reps=" + std::to_string(s.completed) + "/" + std::to_string(s.reps));
  t.header = {"eta", "kind", "emp_mean", "emp_sd", "theoretical", "rmt"};
  for (const auto& kc : s.curves)
    for (std::size_t i = 0; i < s.etas.size(); ++i)
      t.add_row({format_double(s.etas[i]), to_string(kc.kind), format_double(kc.emp_mean[i]),
                 format_double(kc.emp_sd[i]), format_double(kc.theoretical[i]), format_double(kc.rmt[i])});
  return t;
}

inline io::CsvTable argmin_table(const simlab::ExperimentConfig& c, const simlab::ArgminSummary& s) {
  io::CsvTable t;
  t.comments = seed_comments(c);
  t.comments.push_back("reps=" + std::to_string(s.reps - s.failed) + "/" + std::to_string(s.reps));
  t.header = {"rep", "kind", "eta_hat", "eta_star"};
  for (const auto& r : s.records)
    t.add_row({std::to_string(r.rep), to_string(r.kind), format_double(r.eta_hat), format_double(r.eta_star)});
  return t;
}

struct Fig2Tables {
  io::CsvTable tuning, coverage, reps;
};

inline Fig2Tables fig2_tables(const simlab::ExperimentConfig& c, const simlab::TuningSummary& s) {
  Fig2Tables out;
  for (auto* t : {&out.tuning, &out.coverage, &out.reps}) t->comments = seed_comments(c);
  out.tuning.header = {"phi", "method", "kind", "risk_mean", "risk_sd"};
  out.coverage.header = {"phi", "method", "coverage_mean", "ci_len_mean", "oracle_len"};
  out.reps.header = {"phi", "rep", "eta_gcv", "eta_cv", "eta_star", "coverage_gcv", "coverage_cv", "coverage_oracle"};
  auto stats = [](const std::vector<double>& v) {
    std::vector<double> mean, sd;
    std::vector<std::vector<double>> rows;
    for (double x : v) rows.push_back({x});
    simlab::column_mean_sd(rows, mean, sd);
    return std::pair<double, double>{mean.empty() ? 0.0 : mean[0], sd.empty() ? 0.0 : sd[0]};
  };
  for (const auto& ps : s.per_phi) {
    const std::string phi = format_double(ps.phi);
    for (const char* method : {"gcv", "cv", "oracle", "grid_min"}) {
      for (std::size_t k = 0; k < 3; ++k) {
        std::vector<double> v;
        for (const auto& r : ps.reps) {
          const std::string m = method;
          v.push_back(m == "gcv" ? r.risk_gcv[k] : m == "cv" ? r.risk_cv[k] : m == "oracle" ? r.risk_oracle[k]
                                                                                            : r.risk_min[k]);
        }
        const auto [mean, sd] = stats(v);
        out.tuning.add_row({phi, method, to_string(simlab::kTunedKinds[k]), format_double(mean), format_double(sd)});
      }
    }
    std::vector<double> len_o;
    for (const auto& r : ps.reps) len_o.push_back(r.len_oracle);
    const double oracle_len = stats(len_o).first;
    for (const char* method : {"gcv", "cv", "oracle"}) {
      std::vector<double> cov, len;
      for (const auto& r : ps.reps) {
        const std::string m = method;
        cov.push_back(m == "gcv" ? r.coverage_gcv : m == "cv" ? r.coverage_cv : r.coverage_oracle);
        len.push_back(m == "gcv" ? r.len_gcv : m == "cv" ? r.len_cv : r.len_oracle);
      }
      out.coverage.add_row({phi, method, format_double(stats(cov).first), format_double(stats(len).first),
                            format_double(oracle_len)});
    }
    for (const auto& r : ps.reps)
      out.reps.add_row({phi, std::to_string(r.rep), format_double(r.eta_gcv), format_double(r.eta_cv),
                        format_double(r.eta_star), format_double(r.coverage_gcv), format_double(r.coverage_cv),
                        format_double(r.coverage_oracle)});
  }
  return out;
}

inline io::CsvTable distributional_table(const simlab::ExperimentConfig& c, const simlab::DistributionalReport& r) {
  io::CsvTable t;
  t.comments = seed_comments(c);
  t.header = {"eta", "statistic", "reference", "reference_se", "mean_abs_discrepancy", "self_z"};
  for (const auto& s : r.stats)
    for (std::size_t i = 0; i < r.etas.size(); ++i)
      t.add_row({format_double(r.etas[i]), simlab::to_string(s.stat), format_double(s.reference[i]),
                 format_double(s.reference_se[i]), format_double(s.mean_abs_discrepancy[i]),
                 format_double(s.self_z[i])});
  return t;
}

// ---- dispatcher ------------------------------------------------------------------

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"ridgelab: exact risk curves, tuning and inference for high-dimensional ridge regression"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress the human-readable summary");

  // fpe / risk / lq share the problem-config options.
  std::string config_path, out_path, grid_flag, kinds_flag, q_flag;
  std::optional<std::uint64_t> seed_flag;
  std::optional<double> eta_flag;
  int mc_reps_flag = -1;
  auto add_problem_opts = [&](CLI::App* sub, bool grid, bool kinds) {
    sub->add_option("--config", config_path, "Problem config (JSON)")->required();
    sub->add_option("--out", out_path, "Output CSV")->required();
    sub->add_option("--seed", seed_flag, "Override the signal seed");
    if (grid) sub->add_option("--eta-grid", grid_flag, "Grid spec a:b:count");
    if (kinds) sub->add_option("--kinds", kinds_flag, "Comma list of pred,est,ins,res");
  };
  auto* fpe_cmd = app.add_subcommand("fpe", "Solve the fixed-point equations along an eta grid");
  add_problem_opts(fpe_cmd, true, false);
  auto* risk_cmd = app.add_subcommand("risk", "Theoretical and RMT risk curves with derivatives");
  add_problem_opts(risk_cmd, true, true);
  auto* lq_cmd = app.add_subcommand("lq", "Weighted l_q risks (closed form, optional Monte Carlo)");
  add_problem_opts(lq_cmd, false, false);
  lq_cmd->add_option("--eta", eta_flag, "Regularization");
  lq_cmd->add_option("--q", q_flag, "Comma list of q values");
  lq_cmd->add_option("--mc-reps", mc_reps_flag, "Sequence-model Monte Carlo reps (0 = off)");

  // fit / tune / ci operate on a dataset.
  std::string data_path, method_flag, data_config;
  std::optional<int> k_flag;
  std::optional<double> alpha_flag;
  std::string data_out;
  auto add_data_opts = [&](CLI::App* sub) {
    sub->add_option("--config", data_config, "Optional config (JSON) with the same keys as the flags");
    sub->add_option("--data", data_path, "Dataset JSON (base64 matrices)");
  };
  auto* fit_cmd = app.add_subcommand("fit", "Fit ridge at one eta and print a summary");
  add_data_opts(fit_cmd);
  fit_cmd->add_option("--eta", eta_flag, "Regularization");
  fit_cmd->add_option("--out", data_out, "Optional JSON summary");
  auto* tune_cmd = app.add_subcommand("tune", "Select eta by GCV or k-fold CV");
  add_data_opts(tune_cmd);
  tune_cmd->add_option("--method", method_flag, "gcv or cv");
  tune_cmd->add_option("--k", k_flag, "Folds for cv");
  tune_cmd->add_option("--grid", grid_flag, "Grid spec a:b:count");
  tune_cmd->add_option("--seed", seed_flag, "Fold seed");
  tune_cmd->add_option("--out", data_out, "Output CSV (eta,objective)")->required();
  auto* ci_cmd = app.add_subcommand("ci", "Debiased confidence intervals");
  add_data_opts(ci_cmd);
  ci_cmd->add_option("--eta", eta_flag, "Regularization (default: select by --method)");
  ci_cmd->add_option("--method", method_flag, "gcv or cv, used when --eta is absent");
  ci_cmd->add_option("--k", k_flag, "Folds for cv");
  ci_cmd->add_option("--grid", grid_flag, "Grid spec a:b:count");
  ci_cmd->add_option("--seed", seed_flag, "Fold seed");
  ci_cmd->add_option("--alpha", alpha_flag, "Miscoverage level");
  ci_cmd->add_option("--out", data_out, "Output CSV (j,lower,upper,covered)")->required();

  // sim fig1 / fig2 / dist / data.
  auto* sim_cmd = app.add_subcommand("sim", "Monte Carlo experiments");
  sim_cmd->require_subcommand(1);
  std::string sim_config, out_dir;
  int threads_flag = -1;
  std::optional<int> reps_flag;
  int data_rep = 0;
  auto add_sim_opts = [&](CLI::App* sub, bool dir) {
    sub->add_option("--config", sim_config, "Experiment config (JSON); defaults apply to missing keys");
    if (dir) sub->add_option("--out-dir", out_dir, "Output directory")->required();
    sub->add_option("--seed", seed_flag, "Override the master seed");
    sub->add_option("--reps", reps_flag, "Override the replication count");
    sub->add_option("--eta-grid", grid_flag, "Override the eta grid");
    sub->add_option("--threads", threads_flag, "Worker threads (0 = all cores; default RIDGELAB_THREADS)");
  };
  auto* fig1_cmd = sim_cmd->add_subcommand("fig1", "Risk curves and argmin deviations");
  add_sim_opts(fig1_cmd, true);
  auto* fig2_cmd = sim_cmd->add_subcommand("fig2", "GCV/CV tuning risks, coverage and CI lengths over a phi sweep");
  add_sim_opts(fig2_cmd, true);
  auto* dist_cmd = sim_cmd->add_subcommand("dist", "Distributional proximity to the sequence model");
  add_sim_opts(dist_cmd, true);
  auto* data_cmd = sim_cmd->add_subcommand("data", "Write one simulated dataset as JSON");
  add_sim_opts(data_cmd, false);
  data_cmd->add_option("--rep", data_rep, "Replication index")->check(CLI::NonNegativeNumber);
  data_cmd->add_option("--out", data_out, "Output dataset JSON")->required();

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  Context ctx{out, quiet};
  const auto say = [&](const std::string& s) {
    if (!ctx.quiet) ctx.out << s << "\n";
  };

  try {
    Outputs files;
    if (*fpe_cmd || *risk_cmd || *lq_cmd) {
      ProblemSpec spec = ProblemSpec::from_json(load_config(config_path));
      if (!grid_flag.empty()) spec.eta_grid = grid_flag;
      if (!kinds_flag.empty()) spec.kinds = split_list(kinds_flag);
      if (seed_flag) {
        if (spec.signal.contains("coords")) throw InvalidArgument("--seed has no effect on an explicit signal");
        spec.signal["seed"] = *seed_flag;
      }
      if (eta_flag) spec.eta = *eta_flag;
      if (!q_flag.empty()) {
        spec.q.clear();
        for (const auto& s : split_list(q_flag)) spec.q.push_back(io::parse_cell(s));
      }
      if (mc_reps_flag >= 0) spec.mc_reps = mc_reps_flag;
      const char* command = *fpe_cmd ? "fpe" : *risk_cmd ? "risk" : "lq";
      const io::CsvTable t = *fpe_cmd ? fpe_table(spec) : *risk_cmd ? risk_table(spec) : lq_table(spec);
      files.add(out_path, t.str());
      files.add_json(meta_path_for(out_path), run_meta(command, spec.to_json()));
      files.commit();
      say(std::string(command) + ": wrote " + std::to_string(t.rows.size()) + " rows to " + out_path);
      return 0;
    }

    if (*fit_cmd || *tune_cmd || *ci_cmd) {
      DataSpec spec = data_config.empty() ? DataSpec{} : DataSpec::from_json(load_config(data_config));
      if (!data_path.empty()) spec.data = data_path;
      if (eta_flag) {
        spec.eta = *eta_flag;
        spec.has_eta = true;
      }
      if (!method_flag.empty()) spec.method = method_flag;
      if (k_flag) spec.k = *k_flag;
      if (!grid_flag.empty()) spec.grid = grid_flag;
      if (seed_flag) spec.seed = *seed_flag;
      if (alpha_flag) spec.alpha = *alpha_flag;
      const Dataset d = spec.load();

      if (*fit_cmd) {
        if (!spec.has_eta) throw InvalidArgument("fit requires --eta");
        const json summary = fit_summary(d, spec.eta);
        if (!ctx.quiet) {
          for (const char* key : {"m", "n", "phi", "eta", "mu_hat_norm", "r_hat_norm_sq", "df_hat", "tau_hat",
                                  "gamma_hat", "sigma_hat_sq"})
            if (summary.contains(key)) ctx.out << key << ": " << summary.at(key).dump() << "\n";
          if (summary.contains("risks"))
            for (const auto& [k, v] : summary.at("risks").items()) ctx.out << "risk_" << k << ": " << v.dump() << "\n";
        }
        if (!data_out.empty()) {
          files.add_json(data_out, summary);
          files.add_json(meta_path_for(data_out), run_meta("fit", spec.to_json()));
        }
        files.commit();
        return 0;
      }
      if (*tune_cmd) {
        const TuningResult r = select_eta(d, spec);
        io::CsvTable t;
        t.comments = {"method=" + r.method, "eta_hat=" + format_double(r.eta_hat)};
        if (r.method == "cv") t.comments.insert(t.comments.begin(), "seed=" + std::to_string(spec.seed));
        t.header = {"eta", "objective"};
        for (std::size_t i = 0; i < r.etas.size(); ++i)
          t.add_row({format_double(r.etas[i]), format_double(r.objective[i])});
        files.add(data_out, t.str());
        files.add_json(meta_path_for(data_out), run_meta("tune", spec.to_json()));
        files.commit();
        say("eta_hat: " + format_double(r.eta_hat));
        return 0;
      }
      double eta = spec.eta;
      if (!spec.has_eta) {
        eta = select_eta(d, spec).eta_hat;
        say("selected eta (" + spec.method + "): " + format_double(eta));
      }
      double cov = -1;
      const io::CsvTable t = ci_table(d, eta, spec.alpha, &cov);
      files.add(data_out, t.str());
      files.add_json(meta_path_for(data_out), run_meta("ci", spec.to_json()));
      files.commit();
      if (cov >= 0) say("coverage: " + format_double(cov));
      return 0;
    }

    // sim
    const bool fig2 = static_cast<bool>(*fig2_cmd);
    simlab::ExperimentConfig cfg = fig2 ? simlab::fig2_defaults() : simlab::fig1_defaults();
    if (!sim_config.empty()) cfg = simlab::ExperimentConfig::from_json(load_config(sim_config), cfg);
    if (seed_flag) cfg.seed = *seed_flag;
    if (reps_flag) cfg.reps = *reps_flag;
    if (!grid_flag.empty()) cfg.eta_grid = grid_flag;
    cfg.validate();
    const int threads = simlab::resolve_threads(threads_flag);
    const fs::path dir(out_dir);
    if (*fig1_cmd) {
      const auto curves = simlab::run_risk_experiment(cfg, threads);
      const auto argmins = simlab::run_argmin_experiment(cfg, threads);
      files.add(dir / "risk_curves.csv", risk_curves_table(cfg, curves).str());
      files.add(dir / "argmin.csv", argmin_table(cfg, argmins).str());
      files.add_json(dir / "run_meta.json", run_meta("sim fig1", cfg.to_json()));
      files.commit();
      for (RiskKind k : simlab::kTunedKinds) {
        const auto& m = curves.curve(k).emp_mean;
        const auto i = static_cast<std::size_t>(std::min_element(m.begin(), m.end()) - m.begin());
        const auto q = argmins.quartiles(k);
        say(to_string(k) + ": argmin of mean curve at eta = " + format_double(curves.etas[i]) +
            "; eta^# - eta* quartiles " + format_double(q[0]) + ", " + format_double(q[1]) + ", " +
            format_double(q[2]));
      }
      say("failed reps: " + std::to_string(curves.failed) + " (curves), " + std::to_string(argmins.failed) +
          " (argmin)");
      return 0;
    }
    if (fig2) {
      const auto summary = simlab::run_tuning_experiment(cfg, threads);
      const Fig2Tables t = fig2_tables(cfg, summary);
      files.add(dir / "tuning.csv", t.tuning.str());
      files.add(dir / "coverage.csv", t.coverage.str());
      files.add(dir / "tuning_reps.csv", t.reps.str());
      files.add_json(dir / "run_meta.json", run_meta("sim fig2", cfg.to_json()));
      files.commit();
      say("fig2: " + std::to_string(summary.per_phi.size()) + " phi values, " + std::to_string(cfg.reps) +
          " reps each");
      return 0;
    }
    if (*dist_cmd) {
      const auto report = simlab::distributional_check(cfg, {}, threads);
      files.add(dir / "distributional.csv", distributional_table(cfg, report).str());
      json summary = json::array();
      for (const auto& s : report.stats)
        summary.push_back({{"statistic", simlab::to_string(s.stat)},
                           {"pass_fraction", s.pass_fraction},
                           {"mean_sup", s.mean_sup},
                           {"max_self_z", s.max_self_z},
                           {"passed", s.passed}});
      files.add_json(dir / "distributional_summary.json", summary);
      files.add_json(dir / "run_meta.json", run_meta("sim dist", cfg.to_json()));
      files.commit();
      for (const auto& s : report.stats)
        say(simlab::to_string(s.stat) + ": " + format_double(s.pass_fraction) + " of reps within bound, max self z " +
            format_double(s.max_self_z) + (s.passed ? " [pass]" : " [fail]"));
      return 0;
    }
    // sim data: one replication of the fig1 design (slot sub = 0).
    const CovarianceModel model = cfg.model_for(cfg.n);
    const auto rep = static_cast<std::uint32_t>(data_rep);
    const simlab::Replication r =
        simlab::draw_replication(cfg, model, simlab::signal_for(cfg, cfg.n, rep, 0), cfg.m, rep, 0);
    files.add_json(data_out, io::dataset_to_json(r.dataset()));
    json meta_cfg = cfg.to_json();
    files.add_json(meta_path_for(data_out), {{"version", kVersion}, {"command", "sim data"}, {"config", meta_cfg},
                                             {"rep", data_rep}});
    files.commit();
    say("wrote " + std::to_string(cfg.m) + "x" + std::to_string(cfg.n) + " dataset to " + data_out);
    return 0;
  } catch (const NumericalError& e) {
    err << "ridgelab: numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const InvalidArgument& e) {
    err << "ridgelab: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "ridgelab: " << e.what() << "\n";
    return 1;
  }
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace cli
}  // namespace ridgelab
