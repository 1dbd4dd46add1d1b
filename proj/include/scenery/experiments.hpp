#pragma once

// Config-driven experiment pipelines, acceptance checks and run manifests.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scenery/config.hpp"
#include "scenery/covariance.hpp"
#include "scenery/effective.hpp"
#include "scenery/errors.hpp"
#include "scenery/field.hpp"
#include "scenery/fk_solver.hpp"
#include "scenery/io.hpp"
#include "scenery/numerics.hpp"
#include "scenery/paths.hpp"
#include "scenery/quadrature.hpp"
#include "scenery/spde.hpp"

#ifndef SCENERY_VERSION
#define SCENERY_VERSION "0.0.0"
#endif

namespace scenery {

inline constexpr const char* kToolVersion = SCENERY_VERSION;

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string reason;
  nlohmann::json details = nlohmann::json::object();

  nlohmann::json to_json() const { return {{"name", name}, {"pass", pass}, {"reason", reason}, {"details", details}}; }
};

struct RunResult {
  std::vector<Table> tables;
  std::vector<CheckResult> checks;

  void append(RunResult other) {
    for (auto& t : other.tables) tables.push_back(std::move(t));
    for (auto& c : other.checks) checks.push_back(std::move(c));
  }
  const Table& table(const std::string& name) const {
    for (const auto& t : tables)
      if (t.name == name) return t;
    throw DomainError("RunResult: no table '" + name + "'");
  }
  const CheckResult& check(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return c;
    throw DomainError("RunResult: no check '" + name + "'");
  }
};

// Acceptance thresholds.
namespace tolerance {
inline constexpr double kClosedFormRel = 1e-8;
inline constexpr double kTrapezoidRel = 1e-6;
inline constexpr double kTwoRouteRel = 1e-6;
inline constexpr double kCorrectorFinalFraction = 0.05;
inline constexpr double kSigmaGapRel = 0.02;
inline constexpr double kResolventResidual = 1e-10;
inline constexpr double kFdGradient = 1e-4;
inline constexpr double kShrinkLow = 1.3;
inline constexpr double kShrinkHigh = 3.0;
inline constexpr double kDriftBoundFactor = 10.0;
inline constexpr double kStderrMultiple = 3.0;
inline constexpr double kCauchyRel = 0.02;
}  // namespace tolerance

namespace detail {

// stream ids under the master stream, one per pipeline piece
inline constexpr std::uint64_t kHomogenizeStream = 10;
inline constexpr std::uint64_t kSceneryStream = 20;
inline constexpr std::uint64_t kPairSameStream = 21;
inline constexpr std::uint64_t kPairIndependentStream = 22;
inline constexpr std::uint64_t kSecondMomentStream = 23;
inline constexpr std::uint64_t kExactnessStream = 30;
inline constexpr std::uint64_t kMartingaleStream = 31;
inline constexpr std::uint64_t kMomentStream = 40;
inline constexpr std::uint64_t kLimitStream = 41;
inline constexpr std::uint64_t kFieldProbeStream = 50;
inline constexpr std::uint64_t kGridBaseStream = 60;

inline std::vector<std::string> x_columns(const std::string& prefix, int d) {
  std::vector<std::string> out;
  for (int i = 1; i <= d; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

inline void append_x(std::vector<Cell>& row, std::span<const double> x) {
  for (double v : x) row.emplace_back(v);
}

inline std::vector<std::string> fk_columns(int d) {
  std::vector<std::string> c{"epsilon", "alpha", "t"};
  for (auto& x : x_columns("x", d)) c.push_back(x);
  for (const char* s : {"re_mean", "im_mean", "re_stderr", "im_stderr", "u0_ref", "abs_err", "n_paths", "n_fields", "master_seed"})
    c.emplace_back(s);
  return c;
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += x;
  const double m = s / n;
  double q = 0.0;
  for (double x : v) q += (x - m) * (x - m);
  return {m, n > 1 ? std::sqrt(q / (n - 1.0) / n) : 0.0};
}

inline double rel_err(double a, double ref) { return std::abs(a - ref) / std::abs(ref); }

inline double nan() { return std::numeric_limits<double>::quiet_NaN(); }

inline SamplerFactory make_factory(const ExperimentConfig& c, const std::string& backend, const RngStream& grid_base) {
  if (backend == "grid") return grid_factory(c.model, c.backend.grid_for(c.model), grid_base);
  return harmonic_factory(c.model, c.backend.modes);
}

inline CheckResult make_check(std::string name, bool pass, std::string reason, nlohmann::json details = nlohmann::json::object()) {
  return {std::move(name), pass, std::move(reason), std::move(details)};
}

// consecutive values with v[i+1] <= v[i] + k * combined stderr
inline bool non_increasing_within(std::span<const double> v, std::span<const double> se, double k, std::string& why) {
  for (std::size_t i = 0; i + 1 < v.size(); ++i) {
    const double slack = k * std::hypot(se[i], se[i + 1]);
    if (v[i + 1] > v[i] + slack) {
      why = "entry " + std::to_string(i + 1) + " exceeds entry " + std::to_string(i) + " by more than " +
            std::to_string(k) + " combined stderr";
      return false;
    }
  }
  return true;
}

// Independent check of the EQ2 coefficient for the separable Gaussian model:
// composite trapezoid of A e^{-t^2/2lt^2} (lx^2/(lx^2+t))^{d/2} on [0, 40 lt].
inline double trapezoid_eq2(const CovarianceModel& m, std::size_t n = 400000) {
  const double T = 40.0 * m.ell_t(), h = T / static_cast<double>(n);
  const double lx2 = m.ell_x() * m.ell_x(), lt2 = m.ell_t() * m.ell_t();
  auto f = [&](double t) { return std::exp(-0.5 * t * t / lt2) * std::pow(lx2 / (lx2 + t), 0.5 * m.d()); };
  double s = 0.5 * (f(0.0) + f(T));
  for (std::size_t i = 1; i < n; ++i) s += f(h * static_cast<double>(i));
  return m.amplitude() * h * s;
}

inline double closed_form_rho(const CovarianceModel& m, EffRegime r) {
  if (!m.separable()) return nan();
  if (r == EffRegime::G2) return m.amplitude() * m.ell_t() * std::sqrt(std::numbers::pi / 2.0);
  if (r == EffRegime::LT2 && m.d() >= 3) return 2.0 * m.amplitude() * m.ell_x() * m.ell_x() / (m.d() - 2.0);
  return nan();
}

inline double sigma2_reference(const CovarianceModel& m, double alpha) {
  return 2.0 * rho(m, eff_regime_for_alpha(alpha)).rho;
}

inline std::size_t steps_for(double horizon, double dt) { return static_cast<std::size_t>(std::ceil(horizon / dt - 1e-9)); }

}  // namespace detail

// ---------------------------------------------------------------- effective

inline RunResult run_effective(const ExperimentConfig& c) {
  const auto& p = c.as<EffectiveParams>();
  const auto& m = c.model;
  Table t{"effective",
          {"regime", "rho", "rho_error", "sigma2_spectral", "sigma2_error", "two_route_rel", "oracle", "oracle_rel_err"},
          {},
          {}};
  nlohmann::json oracle_detail = nlohmann::json::object(), route_detail = nlohmann::json::object();
  bool oracle_ok = true, route_ok = true, any_oracle = false, any_route = false;
  for (auto r : p.regimes) {
    const auto co = rho(m, r, QuadratureSpec{p.rel_tol, 1e-14, 10'000'000});
    double s2 = detail::nan(), s2e = detail::nan(), route = detail::nan();
    if (r != EffRegime::G2 && m.d() >= 3) {
      const auto q = sigma2_spectral(m, r, QuadratureSpec{p.spectral_rel_tol, 1e-14, 50'000'000});
      s2 = q.value;
      s2e = q.error;
      route = std::abs(2.0 * co.rho - s2) / std::abs(s2);
      any_route = true;
      route_detail[to_string(r)] = route;
      route_ok = route_ok && route <= tolerance::kTwoRouteRel;
    }
    double oracle = r == EffRegime::EQ2 && m.separable() ? detail::trapezoid_eq2(m) : detail::closed_form_rho(m, r);
    double orel = std::isfinite(oracle) ? detail::rel_err(co.rho, oracle) : detail::nan();
    if (std::isfinite(orel)) {
      any_oracle = true;
      const double tol = r == EffRegime::EQ2 ? tolerance::kTrapezoidRel : tolerance::kClosedFormRel;
      oracle_ok = oracle_ok && orel <= tol;
      oracle_detail[to_string(r)] = {{"rho", co.rho}, {"oracle", oracle}, {"rel_err", orel}, {"tol", tol}};
    }
    nlohmann::json extra{{"rho_evals", co.evals}};
    if (!co.warnings.empty()) extra["warnings"] = co.warnings;
    t.add_row({to_string(r), co.rho, co.rho_error, s2, s2e, route, oracle, orel}, extra);
  }
  RunResult out;
  out.tables.push_back(std::move(t));
  if (any_oracle)
    out.checks.push_back(detail::make_check("effective_oracles", oracle_ok,
                                            oracle_ok ? "all coefficients match their oracles"
                                                      : "a coefficient misses its oracle tolerance",
                                            oracle_detail));
  if (any_route)
    out.checks.push_back(detail::make_check("two_route", route_ok,
                                            route_ok ? "2 rho matches the spectral sigma^2"
                                                     : "2 rho and the spectral sigma^2 disagree",
                                            route_detail));
  return out;
}

// ---------------------------------------------------------------- corrector

inline RunResult run_corrector_scan(const ExperimentConfig& c) {
  const auto& p = c.as<CorrectorParams>();
  const double s2 = detail::sigma2_reference(c.model, p.alpha);
  Table t{"corrector_scan",
          {"lambda", "epsilon", "alpha", "corrector_norm", "corrector_norm_error", "sigma2_lambda", "sigma2_lambda_error",
           "sigma2_ref", "gap_rel"},
          {},
          {}};
  std::vector<double> norms, sig;
  for (double lam : p.lambdas) {
    const auto cs = CorrectorSpec::coupled(std::sqrt(lam), p.alpha);
    const auto n = corrector_norm(c.model, cs);
    const auto s = sigma2_lambda(c.model, cs);
    norms.push_back(n.value);
    sig.push_back(s.value);
    t.add_row({lam, cs.epsilon, p.alpha, n.value, n.error, s.value, s.error, s2, (s2 - s.value) / s2});
  }
  std::string why;
  bool ok = true;
  for (std::size_t i = 1; i < norms.size() && ok; ++i)
    if (!(norms[i] < norms[i - 1])) ok = false, why = "corrector norm not strictly decreasing";
  if (ok && !(norms.back() < tolerance::kCorrectorFinalFraction * norms.front()))
    ok = false, why = "final corrector norm not below 0.05 x initial";
  for (std::size_t i = 1; i < sig.size() && ok; ++i)
    if (!(sig[i] > sig[i - 1])) ok = false, why = "sigma_lambda^2 not strictly increasing";
  for (std::size_t i = 0; i < sig.size() && ok; ++i)
    if (!(sig[i] < s2)) ok = false, why = "sigma_lambda^2 not below sigma^2";
  const double gap = (s2 - sig.back()) / s2;
  if (ok && !(gap < tolerance::kSigmaGapRel)) ok = false, why = "relative gap sigma^2 - sigma_lambda^2 at the last lambda is not below 0.02";
  RunResult out;
  out.tables.push_back(std::move(t));
  out.checks.push_back(detail::make_check("corrector_scan", ok, ok ? "monotone scan within tolerance" : why,
                                          {{"norms", norms}, {"sigma2_lambda", sig}, {"sigma2", s2}, {"final_gap_rel", gap}}));
  return out;
}

inline RunResult run_corrector_exactness(const ExperimentConfig& c) {
  const auto& p = c.as<CorrectorParams>();
  const auto& e = p.exactness;
  const int d = c.model.d();
  const auto cs = CorrectorSpec::coupled(e.epsilon, p.alpha);
  const auto f = synth_harmonic(c.model, c.backend.modes, c.master().child(detail::kExactnessStream));
  StreamGenerator g(c.master().child(detail::kExactnessStream).child(1));
  std::vector<std::string> cols{"point", "t"};
  for (auto& x : detail::x_columns("x", d)) cols.push_back(x);
  cols.insert(cols.end(), {"residual", "fd_error", "fd_h"});
  Table t{"corrector_exactness", cols, {}, {}};
  double max_res = 0.0, max_fd = 0.0;
  std::vector<double> x(d), xp(d), xm(d);
  for (std::size_t i = 0; i < e.points; ++i) {
    const double tt = e.box * g.uniform();
    for (int k = 0; k < d; ++k) x[k] = e.box * (2.0 * g.uniform() - 1.0);
    const double res = std::abs(resolvent_residual(f, cs, tt, x));
    const auto val = corrector_eval(f, cs, tt, x);
    double fd = 0.0;
    for (int k = 0; k < d; ++k) {
      xp = x;
      xm = x;
      xp[k] += e.fd_h;
      xm[k] -= e.fd_h;
      const double num = (corrector_eval(f, cs, tt, xp).phi - corrector_eval(f, cs, tt, xm).phi) / (2.0 * e.fd_h);
      fd = std::max(fd, std::abs(num - val.grad[k]));
    }
    max_res = std::max(max_res, res);
    max_fd = std::max(max_fd, fd);
    std::vector<Cell> row{std::uint64_t{i}, tt};
    detail::append_x(row, x);
    row.insert(row.end(), {res, fd, e.fd_h});
    t.add_row(std::move(row));
  }
  const bool ok = max_res < tolerance::kResolventResidual && max_fd < tolerance::kFdGradient;
  RunResult out;
  out.tables.push_back(std::move(t));
  out.checks.push_back(detail::make_check(
      "corrector_exactness", ok,
      ok ? "resolvent identity and gradient hold" : (max_res >= tolerance::kResolventResidual ? "resolvent residual too large" : "finite-difference gradient mismatch"),
      {{"max_residual", max_res}, {"max_fd_error", max_fd}, {"points", e.points}}));
  return out;
}

inline RunResult run_martingale(const ExperimentConfig& c, unsigned workers) {
  const auto& p = c.as<CorrectorParams>();
  const auto& mp = p.martingale;
  const int d = c.model.d();
  const auto cs = CorrectorSpec::coupled(mp.epsilon, p.alpha);
  const double T = mp.t / (mp.epsilon * mp.epsilon);
  const std::size_t L = mp.levels;
  const std::size_t top = std::size_t{1} << (L - 1);
  const double fine_ds = mp.ds / static_cast<double>(top);
  // horizon rounded up to whole coarse steps so every level is a uniform grid
  const double horizon = static_cast<double>(detail::steps_for(T, mp.ds)) * mp.ds;
  const std::size_t np = mp.n_paths, nf = mp.n_fields;
  std::vector<double> res(nf * np * L), r2(nf * np), qv(nf * np);
  const RngStream base = c.master().child(detail::kMartingaleStream);
  for (std::size_t q = 0; q < nf; ++q) {
    const auto f = synth_harmonic(c.model, c.backend.modes, base.child(2 * q));
    parallel_for(np, workers, [&](std::size_t i) {
      const auto fine = BrownianPath::sample(d, horizon, fine_ds, base.child(2 * q + 1).child(i));
      for (std::size_t l = 0; l < L; ++l) {
        const auto path = l + 1 == L ? fine : fine.coarsened(top >> l);
        const auto r = martingale_decompose(f, path, cs, mp.t);
        res[(q * np + i) * L + l] = r.residual;
        if (l + 1 == L) {
          r2[q * np + i] = r.R_term * r.R_term;
          qv[q * np + i] = r.quadratic_variation;
        }
      }
    });
  }
  std::vector<double> rms(L);
  for (std::size_t l = 0; l < L; ++l) {
    double s = 0.0;
    for (std::size_t k = 0; k < nf * np; ++k) s += res[k * L + l] * res[k * L + l];
    rms[l] = std::sqrt(s / static_cast<double>(nf * np));
  }
  auto field_means = [&](const std::vector<double>& v) {
    std::vector<double> out(nf);
    for (std::size_t q = 0; q < nf; ++q) {
      double s = 0.0;
      for (std::size_t i = 0; i < np; ++i) s += v[q * np + i];
      out[q] = s / static_cast<double>(np);
    }
    return detail::mean_se(out);
  };
  const auto R2 = field_means(r2);
  const auto QV = field_means(qv);
  const double norm = corrector_norm(c.model, cs).value;
  const double bound = tolerance::kDriftBoundFactor * norm * (1.0 + mp.t);
  const double qv_ref = sigma2_lambda(c.model, cs).value * mp.t;

  Table t{"martingale",
          {"level", "ds", "residual_rms", "shrink_ratio", "r_term_sq_mean", "r_term_sq_stderr", "r_term_bound",
           "qv_mean", "qv_stderr", "qv_ref", "epsilon", "lambda", "t", "n_paths", "n_fields", "master_seed"},
          {},
          {}};
  std::vector<double> ratios;
  for (std::size_t l = 0; l < L; ++l) {
    const double ratio = l == 0 ? detail::nan() : rms[l - 1] / rms[l];
    if (l > 0) ratios.push_back(ratio);
    const bool last = l + 1 == L;
    t.add_row({std::uint64_t{l}, mp.ds / static_cast<double>(std::size_t{1} << l), rms[l], ratio,
               last ? R2.mean : detail::nan(), last ? R2.se : detail::nan(), bound, last ? QV.mean : detail::nan(),
               last ? QV.se : detail::nan(), qv_ref, mp.epsilon, cs.lambda, mp.t, std::uint64_t{np}, std::uint64_t{nf},
               c.master_seed});
  }
  bool shrink_ok = true;
  for (double r : ratios) shrink_ok = shrink_ok && r >= tolerance::kShrinkLow && r <= tolerance::kShrinkHigh;
  const bool bound_ok = R2.mean <= bound;
  RunResult out;
  out.tables.push_back(std::move(t));
  out.checks.push_back(detail::make_check(
      "martingale", shrink_ok && bound_ok,
      !shrink_ok ? "residual shrink ratio outside [1.3, 3]"
                 : (!bound_ok ? "E|R|^2 exceeds 10 lambda<Phi,Phi>(1+t)" : "residual shrinks and R term bounded"),
      {{"ratios", ratios}, {"r_term_sq_mean", R2.mean}, {"bound", bound}, {"qv_mean", QV.mean}, {"qv_ref", qv_ref}}));
  return out;
}

inline RunResult run_corrector(const ExperimentConfig& c, unsigned workers) {
  RunResult out = run_corrector_scan(c);
  out.append(run_corrector_exactness(c));
  out.append(run_martingale(c, workers));
  return out;
}

// ---------------------------------------------------------------- field_check

inline RunResult run_field_check(const ExperimentConfig& c, unsigned workers) {
  const auto& p = c.as<FieldCheckParams>();
  const int d = c.model.d();
  std::vector<std::string> cov_cols{"backend", "lag_t"};
  for (auto& x : detail::x_columns("lag_x", d)) cov_cols.push_back(x);
  cov_cols.insert(cov_cols.end(), {"estimate", "stderr", "target", "z", "n_realizations", "master_seed"});
  Table cov{"field_cov", cov_cols, {}, {}};
  Table wick{"field_wick", {"backend", "estimate", "stderr", "wick", "z", "n_realizations", "master_seed"}, {}, {}};
  double worst = 0.0;
  std::string worst_where = "none";
  auto z_of = [](double est, double target, double se) {
    if (se > 0.0) return (est - target) / se;
    return est == target ? 0.0 : std::numeric_limits<double>::infinity();
  };
  for (std::size_t b = 0; b < p.backends.size(); ++b) {
    const auto& name = p.backends[b];
    const auto factory = detail::make_factory(c, name, c.master().child(detail::kGridBaseStream + b));
    std::vector<SpaceTimePoint> pts{{0.0, std::vector<double>(d, 0.0)}};
    pts.insert(pts.end(), p.lags.begin(), p.lags.end());
    const bool with_wick = std::find(p.wick_backends.begin(), p.wick_backends.end(), name) != p.wick_backends.end();
    if (with_wick) pts.insert(pts.end(), p.wick_sites.begin(), p.wick_sites.end());
    const auto probes =
        probe_realizations(factory, pts, p.n_realizations, c.master().child(detail::kFieldProbeStream + b), workers);
    const auto rows = covariance_from_probes(probes, pts.size(), p.lags);
    for (const auto& r : rows) {
      const double target = c.model.r(r.lag.t, r.lag.x);
      const double z = z_of(r.estimate, target, r.stderr_);
      if (std::abs(z) > worst) worst = std::abs(z), worst_where = name + " covariance";
      std::vector<Cell> row{name, r.lag.t};
      detail::append_x(row, r.lag.x);
      row.insert(row.end(), {r.estimate, r.stderr_, target, z, std::uint64_t{r.n}, c.master_seed});
      cov.add_row(std::move(row));
    }
    if (with_wick) {
      const auto w = wick_from_probes(probes, pts.size(), 1 + p.lags.size(), c.model, p.wick_sites);
      const double z = z_of(w.estimate, w.wick, w.stderr_);
      if (std::abs(z) > worst) worst = std::abs(z), worst_where = name + " four-point";
      wick.add_row({name, w.estimate, w.stderr_, w.wick, z, std::uint64_t{p.n_realizations}, c.master_seed});
    }
  }
  const bool ok = worst <= tolerance::kStderrMultiple;
  RunResult out;
  out.tables.push_back(std::move(cov));
  if (!wick.rows.empty()) out.tables.push_back(std::move(wick));
  out.checks.push_back(detail::make_check("field_fidelity", ok,
                                          ok ? "all probes within 3 stderr" : "largest deviation in " + worst_where,
                                          {{"max_abs_z", worst}, {"where", worst_where}}));
  return out;
}

// ---------------------------------------------------------------- homogenize

inline RunResult run_homogenize(const ExperimentConfig& c, unsigned workers) {
  const auto& p = c.as<HomogenizeParams>();
  const int d = c.model.d();
  Table t{"homogenize", detail::fk_columns(d), {}, {}};
  nlohmann::json details = nlohmann::json::object();
  bool ok = true;
  std::string why;
  for (std::size_t a = 0; a < p.alphas.size(); ++a) {
    const RngStream s = c.master().child(detail::kHomogenizeStream).child(a);
    const SolveSpec tmpl{p.epsilons.front(), p.alphas[a], p.t, p.x, p.n_paths, p.dt, s};
    const auto factory = detail::make_factory(c, c.backend.kind, s.child(1ULL << 32));
    const auto rows = convergence_table(factory, c.model, p.initial, p.epsilons, tmpl, p.n_fields, static_cast<int>(workers));
    std::vector<double> errs, ses;
    for (const auto& r : rows) {
      std::vector<Cell> row{r.epsilon, r.alpha, r.t};
      detail::append_x(row, r.x);
      row.insert(row.end(), {r.re_mean, r.im_mean, r.re_stderr, r.im_stderr, r.u0_ref, r.abs_err, std::uint64_t{r.n_paths},
                             std::uint64_t{r.n_fields}, r.master_seed});
      t.add_row(std::move(row), {{"dt", r.dt},
                                 {"dt_delta", r.dt_delta},
                                 {"mean_abs2", r.mean_abs2},
                                 {"regime", to_string(eff_regime_for_alpha(r.alpha))},
                                 {"backend", c.backend.kind}});
      errs.push_back(r.abs_err);
      ses.push_back(std::hypot(r.re_stderr, r.im_stderr));
    }
    std::string w;
    const bool this_ok = detail::non_increasing_within(errs, ses, tolerance::kStderrMultiple, w);
    details[format_double(p.alphas[a])] = {{"abs_err", errs}, {"stderr", ses}, {"pass", this_ok}};
    if (!this_ok && ok) why = "alpha " + format_double(p.alphas[a]) + ": " + w;
    ok = ok && this_ok;
  }
  RunResult out;
  out.tables.push_back(std::move(t));
  out.checks.push_back(detail::make_check("homogenization", ok, ok ? "errors decrease across the schedule" : why, details));
  return out;
}

// ---------------------------------------------------------------- scenery

inline RunResult run_scenery_clt(const ExperimentConfig& c, unsigned workers) {
  const auto& p = c.as<SceneryParams>();
  const int d = c.model.d();
  const double sigma2 = 2.0 * rho(c.model, EffRegime::G2).rho * p.t;
  const RngStream master = c.master().child(detail::kSceneryStream);
  const auto factory = detail::make_factory(c, c.backend.kind, master.child(1ULL << 32));
  Table t{"scenery_clt",
          {"epsilon", "alpha", "t", "variance", "variance_stderr", "sigma2_ref", "abs_dev", "mean", "mean_stderr", "block_sum",
           "block_sum_stderr", "n_paths", "n_fields", "master_seed"},
          {},
          {}};
  std::vector<double> devs, dev_se, blocks;
  bool flagged = false;
  for (std::size_t e = 0; e < p.epsilons.size(); ++e) {
    const double eps = p.epsilons[e];
    const SceneryRegime reg{RegimeTag::G2, p.alpha, eps};
    const double ds = p.ds > 0.0 ? p.ds : default_micro_dt(c.model, reg);
    const double T = p.t / (eps * eps);
    std::vector<double> m1(p.n_fields), m2(p.n_fields), blk(p.n_fields);
    std::vector<double> x(p.n_paths), b2(p.n_paths);
    for (std::size_t q = 0; q < p.n_fields; ++q) {
      const FieldSampler v = factory(e * p.n_fields + q, field_stream(master, e, q));
      const RngStream ps = path_stream(master, e, q);
      parallel_for(p.n_paths, workers, [&](std::size_t i) {
        const auto path = BrownianPath::sample(d, T, ds, ps.child(i));
        const auto bs = block_split(v, path, eps, p.alpha, p.gamma1, p.gamma2, p.t);
        x[i] = bs.I + bs.II + bs.III;
        b2[i] = bs.II * bs.II + bs.III * bs.III;
        if (i == 0 && bs.gamma1_flag) flagged = true;
      });
      double s1 = 0.0, s2 = 0.0, sb = 0.0;
      for (std::size_t i = 0; i < p.n_paths; ++i) {
        s1 += x[i];
        s2 += x[i] * x[i];
        sb += b2[i];
      }
      const double n = static_cast<double>(p.n_paths);
      m1[q] = s1 / n;
      m2[q] = s2 / n;
      blk[q] = sb / n;
    }
    const auto M1 = detail::mean_se(m1), M2 = detail::mean_se(m2), B = detail::mean_se(blk);
    const double var = M2.mean - M1.mean * M1.mean;
    const double dev = std::abs(var - sigma2);
    devs.push_back(dev);
    dev_se.push_back(M2.se);
    blocks.push_back(B.mean);
    nlohmann::json extra{{"ds", ds}, {"gamma1", p.gamma1}, {"gamma2", p.gamma2}, {"backend", c.backend.kind}};
    if (flagged) extra["warning"] = "gamma1 >= 1/2";
    t.add_row({eps, p.alpha, p.t, var, M2.se, sigma2, dev, M1.mean, M1.se, B.mean, B.se, std::uint64_t{p.n_paths},
               std::uint64_t{p.n_fields}, c.master_seed},
              extra);
  }
  bool ok = true;
  std::string why;
  if (!(devs.back() <= tolerance::kStderrMultiple * dev_se.back()))
    ok = false, why = "variance at the smallest epsilon is more than 3 stderr from sigma^2 t";
  else if (!(devs.back() < devs.front()))
    ok = false, why = "deviation at the smallest epsilon is not below the largest";
  for (std::size_t i = 1; i < blocks.size() && ok; ++i)
    if (!(blocks[i] < blocks[i - 1])) ok = false, why = "E[II^2] + E[III^2] does not decrease as epsilon shrinks";
  RunResult out;
  out.tables.push_back(std::move(t));
  out.checks.push_back(detail::make_check("scenery_clt", ok, ok ? "variance approaches sigma^2 t" : why,
                                          {{"abs_dev", devs}, {"variance_stderr", dev_se}, {"block_sum", blocks}, {"sigma2", sigma2}}));
  return out;
}

inline RunResult run_pair_functional(const ExperimentConfig& c, unsigned workers) {
  const auto& p = c.as<SceneryParams>().pair;
  const int d = c.model.d();
  const double ref = 2.0 * rho(c.model, EffRegime::G2).rho;
  Table t{"pair_functional",
          {"mode", "epsilon", "beta", "gamma", "mean", "stderr", "reference", "n_paths", "master_seed"},
          {},
          {}};
  // same path on [0, eps^-gamma]
  std::vector<double> same(p.n_paths);
  const double H = std::pow(p.epsilon, -p.gamma);
  const RngStream ss = c.master().child(detail::kPairSameStream);
  parallel_for(p.n_paths, workers, [&](std::size_t i) {
    const auto b = BrownianPath::sample(d, H, p.ds, ss.child(i));
    same[i] = lemma_a2_functional(b, nullptr, c.model, p.epsilon, p.beta, p.gamma, LemmaA2Mode::same_path);
  });
  const auto S = detail::mean_se(same);
  t.add_row({std::string("same_path"), p.epsilon, p.beta, p.gamma, S.mean, S.se, ref, std::uint64_t{p.n_paths}, c.master_seed},
            {{"ds", p.ds}, {"horizon", H}});
  // independent pairs on [0, t/eps^2]
  std::vector<double> ind_means;
  const RngStream is = c.master().child(detail::kPairIndependentStream);
  for (std::size_t e = 0; e < p.independent_epsilons.size(); ++e) {
    const double eps = p.independent_epsilons[e];
    std::vector<double> v(p.independent_pairs);
    parallel_for(p.independent_pairs, workers, [&](std::size_t i) {
      const auto b = BrownianPath::sample(d, p.t / (eps * eps), p.ds, is.child(e).child(2 * i));
      const auto w = BrownianPath::sample(d, p.t / (eps * eps), p.ds, is.child(e).child(2 * i + 1));
      v[i] = lemma_a2_functional(b, &w, c.model, eps, p.beta, p.gamma, LemmaA2Mode::independent_paths, p.t);
    });
    const auto I = detail::mean_se(v);
    ind_means.push_back(I.mean);
    t.add_row({std::string("independent_paths"), eps, p.beta, p.gamma, I.mean, I.se, 0.0, std::uint64_t{p.independent_pairs},
               c.master_seed},
              {{"ds", p.ds}, {"t", p.t}});
  }
  bool ok = true;
  std::string why;
  if (!(std::abs(S.mean - ref) <= tolerance::kStderrMultiple * S.se))
    ok = false, why = "same-path mean is more than 3 stderr from 2 int_0^inf R(t,0) dt";
  for (std::size_t i = 1; i < ind_means.size() && ok; ++i)
    if (!(ind_means[i] < ind_means[i - 1])) ok = false, why = "independent-path functional does not decrease";
  RunResult out;
  out.tables.push_back(std::move(t));
  out.checks.push_back(detail::make_check("pair_functional", ok, ok ? "pair functional behaves as expected" : why,
                                          {{"same_path_mean", S.mean},
                                           {"same_path_stderr", S.se},
                                           {"reference", ref},
                                           {"independent_means", ind_means}}));
  return out;
}

/// t int g(x) |x|^{2-d} dx with g = sup_t |R(t, x)|, by radial quadrature.
inline double envelope_potential(const CovarianceModel& m, double t) {
  const auto q = integrate_semi_infinite([&](double r) { return r * m.sup_envelope_radial(r); }, QuadratureSpec{1e-9, 1e-14, 1'000'000});
  if (!q.converged) throw ConvergenceError("envelope_potential: quadrature did not converge", q.value, q.error);
  return t * unit_sphere_area(m.d()) * q.value;
}

inline RunResult run_second_moment(const ExperimentConfig& c, unsigned workers) {
  const auto& p = c.as<SceneryParams>().second_moment;
  const int d = c.model.d();
  const SceneryRegime reg{RegimeTag::LE2, p.alpha, p.epsilon};
  const double ds = p.ds > 0.0 ? p.ds : default_micro_dt(c.model, reg);
  const double T = p.t / (p.epsilon * p.epsilon);
  const RngStream master = c.master().child(detail::kSecondMomentStream);
  const auto factory = detail::make_factory(c, c.backend.kind, master.child(1ULL << 32));
  std::vector<double> per_field(p.n_fields), x(p.n_paths);
  for (std::size_t q = 0; q < p.n_fields; ++q) {
    const FieldSampler v = factory(q, field_stream(master, 0, q));
    const RngStream ps = path_stream(master, 0, q);
    parallel_for(p.n_paths, workers, [&](std::size_t i) {
      const auto path = BrownianPath::sample(d, T, ds, ps.child(i));
      const double val = scenery_integral(v, path, reg, p.t);
      x[i] = val * val;
    });
    double s = 0.0;
    for (double v2 : x) s += v2;
    per_field[q] = s / static_cast<double>(p.n_paths);
  }
  const auto M = detail::mean_se(per_field);
  const double integral = envelope_potential(c.model, p.t);
  const double bound = p.constant * integral;
  Table t{"second_moment",
          {"epsilon", "alpha", "t", "mean_sq", "stderr", "bound", "ratio", "n_paths", "n_fields", "master_seed"},
          {},
          {}};
  t.add_row({p.epsilon, p.alpha, p.t, M.mean, M.se, bound, M.mean / bound, std::uint64_t{p.n_paths}, std::uint64_t{p.n_fields},
             c.master_seed},
            {{"ds", ds}, {"constant", p.constant}, {"envelope_integral", integral}, {"backend", c.backend.kind}});
  const bool ok = M.mean <= bound;
  RunResult out;
  out.tables.push_back(std::move(t));
  out.checks.push_back(detail::make_check("second_moment_bound", ok,
                                          ok ? "second moment below the envelope bound" : "second moment exceeds the envelope bound",
                                          {{"mean_sq", M.mean}, {"stderr", M.se}, {"bound", bound}}));
  return out;
}

inline RunResult run_scenery(const ExperimentConfig& c, unsigned workers) {
  RunResult out = run_scenery_clt(c, workers);
  out.append(run_pair_functional(c, workers));
  out.append(run_second_moment(c, workers));
  return out;
}

// ---------------------------------------------------------------- spde

inline RunResult run_spde_cauchy(const ExperimentConfig& c) {
  const auto& p = c.as<SpdeParams>();
  const auto path = zero_path(c.model.d(), p.t, p.cauchy_dt);
  const double v = cauchy_variance(c.model, MollifierSpec{p.eps_moll}, path, p.t);
  const double ref = c.model.r_time_integral_radial(0.0) * p.t;
  const double rel = detail::rel_err(v, ref);
  Table t{"spde_cauchy", {"eps_moll", "t", "value", "reference", "rel_err", "dt"}, {}, {}};
  t.add_row({p.eps_moll, p.t, v, ref, rel, p.cauchy_dt});
  const bool ok = rel < tolerance::kCauchyRel;
  RunResult out;
  out.tables.push_back(std::move(t));
  out.checks.push_back(detail::make_check("spde_cauchy", ok, ok ? "mollified variance near R(0) t" : "mollified variance off by more than 2%",
                                          {{"value", v}, {"reference", ref}, {"rel_err", rel}}));
  return out;
}

inline RunResult run_spde_moments(const ExperimentConfig& c, unsigned workers) {
  const auto& p = c.as<SpdeParams>();
  const int d = c.model.d();
  std::vector<MomentSpec> specs;
  for (std::size_t i = 0; i < p.moments.size(); ++i)
    specs.push_back({p.moments[i][0], p.moments[i][1], p.limit_tuples, p.t, p.x,
                     c.master().child(detail::kLimitStream).child(i), p.limit_dt});
  const RngStream master = c.master().child(detail::kMomentStream);
  const auto factory = detail::make_factory(c, c.backend.kind, master.child(1ULL << 32));
  const auto rows =
      moment_compare(factory, c.model, p.initial, specs, p.epsilons, p.n_fields, p.n_path_tuples, master, p.dt,
                     static_cast<int>(workers));

  auto cols = detail::fk_columns(d);
  cols.push_back("N1");
  cols.push_back("N2");
  Table t{"spde_moments", cols, {}, {}};
  for (const auto& r : rows) {
    std::vector<Cell> row{r.epsilon, kAlphaInf, r.t};
    detail::append_x(row, r.x);
    row.insert(row.end(), {r.re_moment, r.im_moment, r.re_stderr, r.im_stderr, r.re_limit, r.abs_diff,
                           std::uint64_t{r.n_path_tuples}, std::uint64_t{r.n_fields}, r.master_seed,
                           std::int64_t{r.N1}, std::int64_t{r.N2}});
    t.add_row(std::move(row), {{"im_limit", r.im_limit}, {"limit_stderr", r.limit_stderr}, {"dt", r.dt}, {"backend", c.backend.kind}});
  }

  // first moments have a closed-form limit: e^{-R(0) t / 2} times the heat flow
  Table lim{"spde_limit", {"N1", "N2", "re_limit", "im_limit", "stderr", "closed_form", "n_path_tuples", "master_seed"}, {}, {}};
  const double damp = std::exp(-0.5 * c.model.r_time_integral_radial(0.0) * p.t);
  bool limit_ok = true;
  nlohmann::json limit_detail = nlohmann::json::array();
  for (std::size_t si = 0; si < specs.size(); ++si) {
    const auto& r = rows[si];
    const double closed = specs[si].order() == 1 ? damp * p.initial.heat(p.t, p.x) : detail::nan();
    lim.add_row({std::int64_t{r.N1}, std::int64_t{r.N2}, r.re_limit, r.im_limit, r.limit_stderr, closed,
                 std::uint64_t{specs[si].n_path_tuples}, c.master_seed},
                {{"dt", specs[si].dt}});
    if (std::isfinite(closed)) {
      const double diff = std::abs(std::complex<double>(r.re_limit, r.im_limit) - closed);
      const bool ok = diff <= tolerance::kStderrMultiple * r.limit_stderr + 1e-12;
      limit_ok = limit_ok && ok;
      limit_detail.push_back({{"N1", r.N1}, {"N2", r.N2}, {"diff", diff}, {"stderr", r.limit_stderr}});
    }
  }

  nlohmann::json mdetail = nlohmann::json::array();
  bool mom_ok = true;
  std::string why;
  const std::size_t ns = specs.size();
  for (std::size_t si = 0; si < ns; ++si) {
    std::vector<double> diffs, ses;
    for (std::size_t e = 0; e < p.epsilons.size(); ++e) {
      const auto& r = rows[e * ns + si];
      diffs.push_back(r.abs_diff);
      ses.push_back(std::sqrt(r.re_stderr * r.re_stderr + r.im_stderr * r.im_stderr + r.limit_stderr * r.limit_stderr));
    }
    std::string w;
    const bool ok = detail::non_increasing_within(diffs, ses, tolerance::kStderrMultiple, w);
    if (!ok && mom_ok) why = "moment (" + std::to_string(specs[si].N1) + "," + std::to_string(specs[si].N2) + "): " + w;
    mom_ok = mom_ok && ok;
    mdetail.push_back({{"N1", specs[si].N1}, {"N2", specs[si].N2}, {"abs_diff", diffs}, {"stderr", ses}, {"pass", ok}});
  }
  RunResult out;
  out.tables.push_back(std::move(t));
  out.tables.push_back(std::move(lim));
  if (!limit_detail.empty())
    out.checks.push_back(detail::make_check("spde_limit", limit_ok,
                                            limit_ok ? "first-moment limits match the closed form" : "first-moment limit off its closed form",
                                            {{"moments", limit_detail}}));
  out.checks.push_back(detail::make_check("spde_moments", mom_ok, mom_ok ? "moments approach their limits" : why, {{"moments", mdetail}}));
  return out;
}

inline RunResult run_spde(const ExperimentConfig& c, unsigned workers) {
  RunResult out = run_spde_cauchy(c);
  out.append(run_spde_moments(c, workers));
  return out;
}

// ---------------------------------------------------------------- dispatch

/// Rough count of field evaluations (plus lattice work) for the budget guard.
inline double estimate_work(const ExperimentConfig& c) {
  using detail::steps_for;
  double w = 0.0;
  const auto& m = c.model;
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, HomogenizeParams>) {
          for (double a : p.alphas)
            for (double e : p.epsilons) {
              const double dt = p.dt > 0.0 ? p.dt : default_macro_dt(m, a, e);
              w += 1.5 * static_cast<double>(p.n_fields * p.n_paths) * static_cast<double>(steps_for(p.t, dt));
            }
        } else if constexpr (std::is_same_v<P, SceneryParams>) {
          for (double e : p.epsilons) {
            const double ds = p.ds > 0.0 ? p.ds : default_micro_dt(m, {RegimeTag::G2, p.alpha, e});
            w += static_cast<double>(p.n_fields * p.n_paths) * static_cast<double>(steps_for(p.t / (e * e), ds));
          }
          const auto& a = p.pair;
          const double band = 2.0 * std::min(m.time_cutoff(), 12.0 * m.ell_t()) / a.ds + 1.0;
          w += static_cast<double>(a.n_paths) * std::pow(static_cast<double>(steps_for(std::pow(a.epsilon, -a.gamma), a.ds)), 1.0) * band;
          for (double e : a.independent_epsilons)
            w += static_cast<double>(a.independent_pairs) * static_cast<double>(steps_for(a.t / (e * e), a.ds)) * band;
          const auto& b = p.second_moment;
          const double ds = b.ds > 0.0 ? b.ds : default_micro_dt(m, {RegimeTag::LE2, b.alpha, b.epsilon});
          w += static_cast<double>(b.n_fields * b.n_paths) * static_cast<double>(steps_for(b.t / (b.epsilon * b.epsilon), ds));
        } else if constexpr (std::is_same_v<P, CorrectorParams>) {
          const auto& mp = p.martingale;
          const double fine = mp.ds / static_cast<double>(std::size_t{1} << (mp.levels - 1));
          w += 4.0 * static_cast<double>(mp.n_fields * mp.n_paths) *
               static_cast<double>(steps_for(mp.t / (mp.epsilon * mp.epsilon), fine));
        } else if constexpr (std::is_same_v<P, SpdeParams>) {
          int pool = 0;
          for (const auto& mo : p.moments) pool = std::max(pool, mo[0] + mo[1]);
          for (double e : p.epsilons) {
            SolveSpec s{e, kAlphaInf, p.t, p.x, 2, p.dt, {}};
            const double dt = p.dt > 0.0 ? p.dt : default_solve_dt(m, s);
            w += static_cast<double>(p.n_fields * p.n_path_tuples * static_cast<std::size_t>(pool)) *
                 static_cast<double>(steps_for(p.t, dt));
          }
          w += static_cast<double>(p.limit_tuples * p.moments.size() * static_cast<std::size_t>(pool * pool)) *
               static_cast<double>(steps_for(p.t, p.limit_dt));
        } else if constexpr (std::is_same_v<P, FieldCheckParams>) {
          for (const auto& b : p.backends) {
            w += static_cast<double>(p.n_realizations * (p.lags.size() + 5));
            if (b == "grid") {
              const double n = static_cast<double>(c.backend.grid_for(m).size());
              w += 0.5 * static_cast<double>(p.n_realizations) * n * std::log2(n);
            }
          }
        }
      },
      c.params);
  return w;
}

/// Runs the pipeline for the config's kind without touching the file system.
inline RunResult execute(const ExperimentConfig& c, unsigned workers) {
  const double work = estimate_work(c);
  if (work > c.max_work)
    throw ResourceError("estimated work " + format_double(work) + " exceeds max_work " + format_double(c.max_work));
  switch (c.kind) {
    case ExperimentKind::effective: return run_effective(c);
    case ExperimentKind::homogenize: return run_homogenize(c, workers);
    case ExperimentKind::scenery: return run_scenery(c, workers);
    case ExperimentKind::corrector: return run_corrector(c, workers);
    case ExperimentKind::spde: return run_spde(c, workers);
    default: return run_field_check(c, workers);
  }
}

struct RunManifest {
  std::string config_hash;
  std::string tool_version = kToolVersion;
  std::string started_utc;
  double wall_clock_seconds = 0.0;
  unsigned workers = 1;
  std::vector<std::string> outputs;
  std::vector<CheckResult> checks;
  nlohmann::json config;

  bool all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
  }

  nlohmann::json to_json() const {
    nlohmann::json ch = nlohmann::json::array();
    for (const auto& c : checks) ch.push_back(c.to_json());
    return {{"config_hash", config_hash}, {"tool_version", tool_version}, {"started_utc", started_utc},
            {"wall_clock_seconds", wall_clock_seconds}, {"workers", workers}, {"outputs", outputs},
            {"checks", ch}, {"config", config}};
  }
};

inline std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Executes the config and writes <output>/<table>.csv, <table>.json and
/// manifest.json. Checks are always evaluated; the caller decides what a
/// failed check means.
inline RunManifest run(const ExperimentConfig& c) {
  RunManifest man;
  man.started_utc = utc_now();
  man.config_hash = hex64(c.hash());
  man.config = c.to_json();
  man.workers = resolve_workers(c.workers);
  const auto t0 = std::chrono::steady_clock::now();
  auto result = execute(c, man.workers);
  man.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::filesystem::path dir(c.output);
  for (const auto& t : result.tables) {
    emit(t, TableFormat::csv, dir / (t.name + ".csv"));
    emit(t, TableFormat::json, dir / (t.name + ".json"));
    man.outputs.push_back(t.name + ".csv");
    man.outputs.push_back(t.name + ".json");
  }
  man.checks = std::move(result.checks);
  write_text(dir / "manifest.json", man.to_json().dump(2) + "\n");
  return man;
}

}  // namespace scenery
