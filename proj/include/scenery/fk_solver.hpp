#pragma once

// Feynman-Kac Monte Carlo for
//   du/dt = Laplacian u / 2 + i eps^{-delta} V(t / eps^alpha, x / eps) u,  u(0) = f,
// delta = max(alpha / 2, 1). alpha = +inf selects the potential eps^{-1/2} V(t / eps, x).
//
//   u_eps(t, x) = E_B f(x + B_t) exp(i eps^{-delta} int_0^t V(s / eps^alpha, (x + B_s) / eps) ds)
//   u_0(t, x)   = exp(-rho t) E_B f(x + B_t)

#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "scenery/effective.hpp"
#include "scenery/field.hpp"
#include "scenery/numerics.hpp"
#include "scenery/paths.hpp"

namespace scenery {

inline constexpr double kAlphaInf = std::numeric_limits<double>::infinity();

class InitialData {
 public:
  struct Cosine {
    std::vector<double> kappa;
  };
  struct GaussianBump {
    std::vector<double> center;
    double width = 1.0;
  };
  struct Constant {
    double c = 1.0;
  };

  static InitialData cosine(std::vector<double> kappa) {
    if (kappa.empty()) throw DomainError("InitialData: empty wave vector");
    return InitialData(Cosine{std::move(kappa)});
  }
  static InitialData gaussian_bump(std::vector<double> center, double width) {
    if (center.empty()) throw DomainError("InitialData: empty bump center");
    if (!(width > 0.0)) throw DomainError("InitialData: bump width must be > 0");
    return InitialData(GaussianBump{std::move(center), width});
  }
  static InitialData constant(double c) { return InitialData(Constant{c}); }

  /// 0 for constants (any dimension).
  int d() const {
    if (auto* c = std::get_if<Cosine>(&v_)) return static_cast<int>(c->kappa.size());
    if (auto* g = std::get_if<GaussianBump>(&v_)) return static_cast<int>(g->center.size());
    return 0;
  }

  double sup_abs() const {
    if (auto* c = std::get_if<Constant>(&v_)) return std::abs(c->c);
    return 1.0;
  }

  double operator()(std::span<const double> x) const {
    if (auto* c = std::get_if<Cosine>(&v_)) {
      double s = 0.0;
      for (std::size_t i = 0; i < c->kappa.size(); ++i) s += c->kappa[i] * x[i];
      return std::cos(s);
    }
    if (auto* g = std::get_if<GaussianBump>(&v_)) {
      double r2 = 0.0;
      for (std::size_t i = 0; i < g->center.size(); ++i) r2 += (x[i] - g->center[i]) * (x[i] - g->center[i]);
      return std::exp(-0.5 * r2 / (g->width * g->width));
    }
    return std::get<Constant>(v_).c;
  }

  /// E_B f(x + B_t) in closed form.
  double heat(double t, std::span<const double> x) const {
    if (t < 0.0) throw DomainError("heat_semigroup: t must be >= 0");
    if (auto* c = std::get_if<Cosine>(&v_)) {
      double k2 = 0.0;
      for (double k : c->kappa) k2 += k * k;
      return std::exp(-0.5 * k2 * t) * (*this)(x);
    }
    if (auto* g = std::get_if<GaussianBump>(&v_)) {
      const double w2 = g->width * g->width;
      const double d = static_cast<double>(g->center.size());
      double r2 = 0.0;
      for (std::size_t i = 0; i < g->center.size(); ++i) r2 += (x[i] - g->center[i]) * (x[i] - g->center[i]);
      return std::pow(w2 / (w2 + t), 0.5 * d) * std::exp(-0.5 * r2 / (w2 + t));
    }
    return std::get<Constant>(v_).c;
  }

  nlohmann::json to_json() const {
    if (auto* c = std::get_if<Cosine>(&v_)) return {{"kind", "cosine"}, {"kappa", c->kappa}};
    if (auto* g = std::get_if<GaussianBump>(&v_))
      return {{"kind", "gaussian_bump"}, {"center", g->center}, {"width", g->width}};
    return {{"kind", "constant"}, {"c", std::get<Constant>(v_).c}};
  }

  static InitialData from_json(const nlohmann::json& j) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "cosine") return cosine(j.at("kappa").get<std::vector<double>>());
    if (kind == "gaussian_bump") return gaussian_bump(j.at("center").get<std::vector<double>>(), j.at("width").get<double>());
    if (kind == "constant") return constant(j.at("c").get<double>());
    throw DomainError("InitialData: unknown kind '" + kind + "'");
  }

 private:
  explicit InitialData(std::variant<Cosine, GaussianBump, Constant> v) : v_(std::move(v)) {}
  std::variant<Cosine, GaussianBump, Constant> v_;
};

inline double heat_semigroup(const InitialData& f, double t, std::span<const double> x) { return f.heat(t, x); }

struct SolveSpec {
  double epsilon = 0.1;
  double alpha = 3.0;  // kAlphaInf for the white-in-time limit
  double t = 1.0;
  std::vector<double> x{0.0, 0.0, 0.0};
  std::size_t n_paths = 1000;
  double dt = 0.0;  // 0: default from the model
  RngStream stream{};

  bool infinite() const { return std::isinf(alpha); }
  double delta() const { return infinite() ? 0.5 : std::max(0.5 * alpha, 1.0); }

  void validate() const {
    if (!(epsilon > 0.0)) throw DomainError("SolveSpec: epsilon must be > 0");
    if (!infinite() && !(alpha >= 0.0)) throw DomainError("SolveSpec: alpha must be >= 0");
    if (!(t >= 0.0)) throw DomainError("SolveSpec: t must be >= 0");
    if (x.empty()) throw DomainError("SolveSpec: empty point");
    if (n_paths < 2) throw DomainError("SolveSpec: need at least 2 paths");
    if (!(dt >= 0.0)) throw DomainError("SolveSpec: dt must be >= 0");
  }
};

/// Macroscopic step bound. The white-in-time potential V(t/eps, x) only
/// oscillates on the time scale eps l_t and the space scale l_x.
inline double default_solve_dt(const CovarianceModel& m, const SolveSpec& s) {
  if (s.infinite()) return std::min(s.epsilon * m.ell_t(), m.ell_x() * m.ell_x()) / 8.0;
  return default_macro_dt(m, s.alpha, s.epsilon);
}

struct MonteCarloEstimate {
  std::complex<double> mean{};
  double stderr_re = 0.0;
  double stderr_im = 0.0;
  std::size_t n_paths = 0;
  RngStream stream{};
  double dt = 0.0;
  // same paths with pairs of steps merged (a trailing odd step stays single)
  std::optional<std::complex<double>> mean_2dt;
  std::vector<std::string> warnings;

  double dt_delta() const { return mean_2dt ? std::abs(mean - *mean_2dt) : std::numeric_limits<double>::quiet_NaN(); }

  nlohmann::json to_json() const {
    nlohmann::json j{{"re_mean", mean.real()},        {"im_mean", mean.imag()}, {"re_stderr", stderr_re},
                     {"im_stderr", stderr_im},        {"n_paths", n_paths},     {"master_seed", stream.master_seed},
                     {"stream_id", stream.stream_id}, {"dt", dt},               {"warnings", warnings}};
    if (mean_2dt) j["dt_delta"] = dt_delta();
    return j;
  }
};

namespace detail {

struct ComplexStats {
  std::complex<double> mean{};
  double se_re = 0.0, se_im = 0.0;
};

inline ComplexStats complex_stats(std::span<const std::complex<double>> v) {
  const double n = static_cast<double>(v.size());
  std::complex<double> s{};
  for (auto z : v) s += z;
  const auto m = s / n;
  double vr = 0.0, vi = 0.0;
  for (auto z : v) {
    vr += (z.real() - m.real()) * (z.real() - m.real());
    vi += (z.imag() - m.imag()) * (z.imag() - m.imag());
  }
  const double denom = n > 1 ? n * (n - 1.0) : 1.0;
  return {m, std::sqrt(vr / denom), std::sqrt(vi / denom)};
}

// Midpoint phase integral int_0^t V(s / eps^alpha, (x + B_s) / eps) ds (or the
// unscaled-space form for alpha = inf), and the same sum over merged step pairs.
inline std::pair<double, double> fk_phase(const FieldSampler& v, const BrownianPath& path, const SolveSpec& s, bool coarse) {
  const int d = v.d();
  const double inv_eps = 1.0 / s.epsilon;
  const double time_scale = s.infinite() ? inv_eps : std::pow(s.epsilon, -s.alpha);
  const double space_scale = s.infinite() ? 1.0 : inv_eps;
  std::array<double, 4> y{};
  auto eval = [&](double tm, std::span<const double> a, std::span<const double> b) {
    for (int k = 0; k < d; ++k) y[k] = (s.x[k] + 0.5 * (a[k] + b[k])) * space_scale;
    return v(tm * time_scale, std::span<const double>(y.data(), d));
  };
  const std::size_t n = path.steps();
  double fine = 0.0, rough = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s0 = path.time(i), s1 = path.time(i + 1);
    fine += eval(0.5 * (s0 + s1), path.at(i), path.at(i + 1)) * (s1 - s0);
  }
  if (coarse)
    for (std::size_t i = 0; i < n; i += 2) {
      const std::size_t j = std::min(i + 2, n);
      const double s0 = path.time(i), s1 = path.time(j);
      rough += eval(0.5 * (s0 + s1), path.at(i), path.at(j)) * (s1 - s0);
    }
  return {fine, rough};
}

}  // namespace detail

/// Monte Carlo estimate of u_eps(t, x) for one field realization. dt = 0 in
/// the spec takes the default bound from `model`; a dt more than 8x above that
/// bound is allowed but noted in the warnings.
inline MonteCarloEstimate solve_u_eps(const FieldSampler& v, const InitialData& f, const SolveSpec& spec,
                                      const CovarianceModel* model = nullptr, int workers = 0) {
  spec.validate();
  const int d = v.d();
  if (static_cast<int>(spec.x.size()) != d || (f.d() != 0 && f.d() != d))
    throw DomainError("solve_u_eps: dimension mismatch between field, initial data and point");
  MonteCarloEstimate est;
  est.n_paths = spec.n_paths;
  est.stream = spec.stream;
  double dt = spec.dt;
  if (model) {
    const double bound = default_solve_dt(*model, spec);
    if (dt == 0.0) dt = bound;
    if (dt > 8.0 * bound) est.warnings.push_back("dt exceeds 8x the default bound " + std::to_string(bound));
  }
  if (dt == 0.0) throw DomainError("solve_u_eps: dt = 0 needs a covariance model for the default");
  est.dt = dt;
  if (spec.t == 0.0) {
    est.mean = f(spec.x);
    return est;
  }
  const double amp = std::pow(spec.epsilon, -spec.delta());
  const bool coarse = PathSpec{d, spec.t, dt, 1, {}}.steps() >= 2;
  std::vector<std::complex<double>> fine(spec.n_paths), rough(coarse ? spec.n_paths : 0);
  parallel_for(spec.n_paths, resolve_workers(workers), [&](std::size_t i) {
    const auto path = BrownianPath::sample(d, spec.t, dt, spec.stream.child(i));
    std::array<double, 4> end{};
    for (int k = 0; k < d; ++k) end[k] = spec.x[k] + path.endpoint()[k];
    const double fx = f(std::span<const double>(end.data(), d));
    const auto [pf, pc] = detail::fk_phase(v, path, spec, coarse);
    fine[i] = fx * std::polar(1.0, amp * pf);
    if (coarse) rough[i] = fx * std::polar(1.0, amp * pc);
  });
  const auto st = detail::complex_stats(fine);
  est.mean = st.mean;
  est.stderr_re = st.se_re;
  est.stderr_im = st.se_im;
  if (coarse) est.mean_2dt = detail::complex_stats(rough).mean;
  return est;
}

/// e^{-rho t} heat_semigroup(f, t, x).
inline double solve_u0(const CovarianceModel& m, const InitialData& f, double t, std::span<const double> x, EffRegime regime) {
  if (t == 0.0) return f(x);
  return std::exp(-rho(m, regime).rho * t) * f.heat(t, x);
}

struct ConvergenceRow {
  double epsilon = 0.0;
  double alpha = 0.0;
  double t = 0.0;
  std::vector<double> x;
  double re_mean = 0.0, im_mean = 0.0, re_stderr = 0.0, im_stderr = 0.0;
  double u0_ref = 0.0;
  double abs_err = 0.0;
  std::size_t n_paths = 0, n_fields = 0;
  std::uint64_t master_seed = 0;
  double dt = 0.0;
  double dt_delta = 0.0;
  // environment variance of |u_eps|^2 means, for the annealed-vs-quenched split
  double mean_abs2 = 0.0;
};

/// Field-level stream for (epsilon index, field index) and the matching path stream.
inline RngStream field_stream(const RngStream& master, std::size_t eps_index, std::size_t field) {
  return master.child(eps_index).child(2 * field);
}
inline RngStream path_stream(const RngStream& master, std::size_t eps_index, std::size_t field) {
  return master.child(eps_index).child(2 * field + 1);
}

/// One row per epsilon: n_fields independent field realizations, each with an
/// n_paths ensemble. Statistics are taken over the per-field means, so the
/// stderr carries both environment and path noise.
inline std::vector<ConvergenceRow> convergence_table(const SamplerFactory& factory, const CovarianceModel& model,
                                                     const InitialData& f, std::span<const double> eps_schedule,
                                                     const SolveSpec& tmpl, std::size_t n_fields, int workers = 0,
                                                     std::optional<EffRegime> regime = std::nullopt) {
  if (eps_schedule.size() < 2) throw DomainError("convergence_table: need at least two epsilon values");
  for (std::size_t i = 1; i < eps_schedule.size(); ++i)
    if (!(eps_schedule[i] < eps_schedule[i - 1])) throw DomainError("convergence_table: epsilon schedule must decrease");
  if (n_fields < 1) throw DomainError("convergence_table: need at least one field");
  if (tmpl.infinite() && !regime) throw DomainError("convergence_table: alpha = inf has no rho regime; pass one");
  const EffRegime reg = regime.value_or(eff_regime_for_alpha(tmpl.alpha));
  const double u0 = solve_u0(model, f, tmpl.t, tmpl.x, reg);
  const unsigned w = resolve_workers(workers);

  std::vector<ConvergenceRow> rows;
  for (std::size_t e = 0; e < eps_schedule.size(); ++e) {
    std::vector<std::complex<double>> means(n_fields), coarse(n_fields);
    std::vector<MonteCarloEstimate> ests(n_fields);
    bool has_coarse = true;
    // parallelism sits at the path level inside solve_u_eps; fields run in order
    for (std::size_t q = 0; q < n_fields; ++q) {
      const FieldSampler v = factory(e * n_fields + q, field_stream(tmpl.stream, e, q));
      SolveSpec s = tmpl;
      s.epsilon = eps_schedule[e];
      s.stream = path_stream(tmpl.stream, e, q);
      ests[q] = solve_u_eps(v, f, s, &model, static_cast<int>(w));
      means[q] = ests[q].mean;
      if (ests[q].mean_2dt)
        coarse[q] = *ests[q].mean_2dt;
      else
        has_coarse = false;
    }
    ConvergenceRow row;
    row.epsilon = eps_schedule[e];
    row.alpha = tmpl.alpha;
    row.t = tmpl.t;
    row.x = tmpl.x;
    const auto st = detail::complex_stats(means);
    row.re_mean = st.mean.real();
    row.im_mean = st.mean.imag();
    row.re_stderr = n_fields > 1 ? st.se_re : ests[0].stderr_re;
    row.im_stderr = n_fields > 1 ? st.se_im : ests[0].stderr_im;
    row.u0_ref = u0;
    row.abs_err = std::abs(std::complex<double>(row.re_mean, row.im_mean) - u0);
    row.n_paths = tmpl.n_paths;
    row.n_fields = n_fields;
    row.master_seed = tmpl.stream.master_seed;
    row.dt = ests[0].dt;
    row.dt_delta = has_coarse ? std::abs(st.mean - detail::complex_stats(coarse).mean)
                              : std::numeric_limits<double>::quiet_NaN();
    double a2 = 0.0;
    for (auto z : means) a2 += std::norm(z);
    row.mean_abs2 = a2 / static_cast<double>(n_fields);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace scenery
