#pragma once

// White-in-time limit. The mollified noise W_e has covariance
//   ((e - |tau|) / e^2) 1_{|tau| < e} (2 pi)^{-d} int e^{-|xi|^2 e} Rt(xi) e^{i xi.x} dxi,
// where Rt is the spatial transform of Rt(x) = int_R R(t, x) dt. The limit moments are
//   E prod_j f(x + B^j_t) exp(-1/2 sum_{m,n} b_m b_n int_0^t Rt(B^m_s - B^n_s) ds),
// with b = +1 for the first N1 factors and -1 for the conjugated ones.

#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "scenery/covariance.hpp"
#include "scenery/fk_solver.hpp"
#include "scenery/numerics.hpp"
#include "scenery/paths.hpp"
#include "scenery/quadrature.hpp"

namespace scenery {

struct MollifierSpec {
  double eps_moll = 1e-3;

  void validate() const {
    if (!(eps_moll > 0.0)) throw DomainError("MollifierSpec: eps_moll must be > 0");
  }
};

namespace detail {

// (2 pi)^{-d} int e^{-|xi|^2 e} Rt(xi) e^{i xi.x} dxi by radial quadrature
inline double smoothed_time_integral_quadrature(const CovarianceModel& m, double e, double r) {
  const int d = m.d();
  const double c = std::pow(2.0 * std::numbers::pi, -d) * unit_sphere_area(d);
  auto g = [&](double k) {
    return c * std::pow(k, d - 1) * std::exp(-k * k * e) * m.r_hat_radial(0.0, k) * SpectralTable::radial_kernel(d, k * r);
  };
  const auto res = integrate_semi_infinite(g, {1e-10, 1e-14, 2'000'000});
  return res.value;
}

}  // namespace detail

/// Spatial factor of the mollified covariance: Rt smoothed by a Gaussian of
/// variance 2 e per coordinate. Closed form for the separable Gaussian family.
inline double smoothed_time_integral(const CovarianceModel& m, double e, double r) {
  if (!m.separable()) return detail::smoothed_time_integral_quadrature(m, e, r);
  const double lx2 = m.ell_x() * m.ell_x();
  const double s2 = lx2 + 2.0 * e;
  return m.amplitude() * m.ell_t() * std::sqrt(2.0 * std::numbers::pi) * std::pow(lx2 / s2, 0.5 * m.d()) *
         std::exp(-0.5 * r * r / s2);
}

inline double mollified_noise_cov(const CovarianceModel& m, const MollifierSpec& spec, double dt_lag,
                                  std::span<const double> dx_lag) {
  spec.validate();
  const double e = spec.eps_moll;
  const double a = std::abs(dt_lag);
  if (a >= e) return 0.0;
  return (e - a) / (e * e) * smoothed_time_integral(m, e, std::sqrt(norm2(dx_lag)));
}

/// int_0^t int_0^t Cov(W_e(t - s, x + B_s), W_e(t - u, x + B_u)) ds du along one frozen path.
/// Gauss-Legendre in both variables; outer panels have edges at e and t - e, where
/// the clipped window changes form, and the inner rule splits at the kink u = s.
inline double cauchy_variance(const CovarianceModel& m, const MollifierSpec& spec, const BrownianPath& path, double t) {
  spec.validate();
  if (path.horizon() < t * (1.0 - 1e-12)) throw DomainError("cauchy_variance: path horizon shorter than t");
  if (t <= 0.0) return 0.0;
  const int d = m.d();
  if (path.d() != d) throw DomainError("cauchy_variance: path and model dimensions differ");
  const double e = spec.eps_moll;
  const double h_target = std::min(path.dt(), 0.5 * e);

  std::vector<double> edges{0.0};
  auto split = [&](double a, double b) {
    if (b <= a) return;
    const auto n = static_cast<std::size_t>(std::ceil((b - a) / h_target - 1e-9));
    for (std::size_t i = 1; i <= n; ++i) edges.push_back(a + (b - a) * static_cast<double>(i) / static_cast<double>(n));
  };
  if (t > 2.0 * e) {
    split(0.0, e);
    split(e, t - e);
    split(t - e, t);
  } else {
    split(0.0, t);
  }

  static const GaussLegendre inner_gl(16, 0.0, 1.0);
  static const GaussLegendre outer_gl(4, 0.0, 1.0);
  std::array<double, 4> bs{}, bu{}, diff{};
  double total = 0.0;
  for (std::size_t p = 0; p + 1 < edges.size(); ++p) {
    const double a = edges[p], w = edges[p + 1] - edges[p];
    for (std::size_t o = 0; o < outer_gl.nodes.size(); ++o) {
      const double s = a + w * outer_gl.nodes[o];
      path.position(s, std::span<double>(bs.data(), d));
      double inner = 0.0;
      for (int side : {-1, 1}) {
        const double lo = side < 0 ? std::max(0.0, s - e) : s;
        const double hi = side < 0 ? s : std::min(t, s + e);
        if (hi <= lo) continue;
        for (std::size_t q = 0; q < inner_gl.nodes.size(); ++q) {
          const double u = lo + (hi - lo) * inner_gl.nodes[q];
          path.position(u, std::span<double>(bu.data(), d));
          for (int k = 0; k < d; ++k) diff[k] = bs[k] - bu[k];
          inner += (hi - lo) * inner_gl.weights[q] *
                   mollified_noise_cov(m, spec, s - u, std::span<const double>(diff.data(), d));
        }
      }
      total += w * outer_gl.weights[o] * inner;
    }
  }
  return total;
}

inline BrownianPath zero_path(int d, double horizon, double dt) {
  const std::size_t n = PathSpec{d, horizon, dt, 1, {}}.steps();
  return BrownianPath(d, dt, horizon, std::vector<double>((n + 1) * static_cast<std::size_t>(d), 0.0));
}

struct MomentSpec {
  int N1 = 1;
  int N2 = 0;
  std::size_t n_path_tuples = 1000;
  double t = 1.0;
  std::vector<double> x{0.0, 0.0, 0.0};
  RngStream stream{};
  double dt = 0.01;

  int order() const { return N1 + N2; }
  double sign(int j) const { return j < N1 ? 1.0 : -1.0; }

  void validate() const {
    if (N1 < 0 || N2 < 0 || N1 + N2 < 1) throw DomainError("MomentSpec: need N1, N2 >= 0 and N1 + N2 >= 1");
    if (n_path_tuples < 2) throw DomainError("MomentSpec: need at least 2 path tuples");
    if (!(t >= 0.0)) throw DomainError("MomentSpec: t must be >= 0");
    if (!(dt > 0.0)) throw DomainError("MomentSpec: dt must be > 0");
    if (x.empty()) throw DomainError("MomentSpec: empty point");
  }
};

struct MomentEstimate {
  std::complex<double> value{};
  double stderr_re = 0.0;
  double stderr_im = 0.0;
  std::size_t n = 0;
};

/// Stream for path j of tuple i. Path 0 reuses the single-path stream so the
/// first factor matches a plain Feynman-Kac ensemble on the same stream.
inline RngStream tuple_path_stream(const RngStream& s, std::size_t tuple, int j) {
  return j == 0 ? s.child(tuple) : s.child(tuple).child(static_cast<std::uint64_t>(j));
}

inline MomentEstimate limit_moment(const CovarianceModel& m, const InitialData& f, const MomentSpec& spec, int workers = 0) {
  spec.validate();
  const int d = m.d();
  if (static_cast<int>(spec.x.size()) != d || (f.d() != 0 && f.d() != d))
    throw DomainError("limit_moment: dimension mismatch");
  const int N = spec.order();
  const double r0 = m.r_time_integral_radial(0.0);
  std::vector<std::complex<double>> vals(spec.n_path_tuples);
  parallel_for(spec.n_path_tuples, resolve_workers(workers), [&](std::size_t i) {
    std::vector<BrownianPath> paths;
    paths.reserve(N);
    for (int j = 0; j < N; ++j) paths.push_back(BrownianPath::sample(d, spec.t, spec.dt, tuple_path_stream(spec.stream, i, j)));
    double prod = 1.0;
    std::array<double, 4> end{};
    for (int j = 0; j < N; ++j) {
      for (int k = 0; k < d; ++k) end[k] = spec.x[k] + paths[j].endpoint()[k];
      prod *= f(std::span<const double>(end.data(), d));
    }
    // diagonal terms: b_j^2 Rt(0) t
    double expo = static_cast<double>(N) * r0 * spec.t;
    for (int a = 0; a < N; ++a)
      for (int b = a + 1; b < N; ++b) {
        double acc = 0.0;
        const std::size_t n = paths[a].steps();
        for (std::size_t q = 0; q < n; ++q) {
          double r2 = 0.0;
          for (int k = 0; k < d; ++k) {
            const double mid_a = 0.5 * (paths[a].at(q)[k] + paths[a].at(q + 1)[k]);
            const double mid_b = 0.5 * (paths[b].at(q)[k] + paths[b].at(q + 1)[k]);
            r2 += (mid_a - mid_b) * (mid_a - mid_b);
          }
          acc += m.r_time_integral_radial(std::sqrt(r2)) * (paths[a].time(q + 1) - paths[a].time(q));
        }
        expo += 2.0 * spec.sign(a) * spec.sign(b) * acc;
      }
    vals[i] = prod * std::exp(-0.5 * expo);
  });
  const auto st = detail::complex_stats(vals);
  return {st.mean, st.se_re, st.se_im, vals.size()};
}

/// u_eps with potential eps^{-1/2} V(t / eps, x), x macroscopic.
inline MonteCarloEstimate u_eps_alpha_inf(const FieldSampler& v, const InitialData& f, double t, std::span<const double> x,
                                          double epsilon, std::size_t n_paths, const RngStream& stream, double dt = 0.0,
                                          const CovarianceModel* model = nullptr, int workers = 0) {
  SolveSpec s{epsilon, kAlphaInf, t, std::vector<double>(x.begin(), x.end()), n_paths, dt, stream};
  return solve_u_eps(v, f, s, model, workers);
}

struct MomentRow {
  double epsilon = 0.0;
  int N1 = 0, N2 = 0;
  double re_moment = 0.0, im_moment = 0.0, re_stderr = 0.0, im_stderr = 0.0;
  double re_limit = 0.0, im_limit = 0.0, limit_stderr = 0.0;
  double abs_diff = 0.0;
  double t = 0.0;
  std::vector<double> x;
  std::size_t n_path_tuples = 0, n_fields = 0;
  std::uint64_t master_seed = 0;
  double dt = 0.0;
};

/// Annealed moments E E_B prod_j f(x + B^j_t) exp(i b_j eps^{-1/2} int_0^t V(s/eps, x + B^j_s) ds)
/// over n_fields fields, each with n_path_tuples tuples sharing that field. One pool
/// of max(N1 + N2) paths per tuple serves every spec. Statistics are over per-field means.
/// Each spec's limit uses its own n_path_tuples and stream; dt = 0 picks the default bound.
inline std::vector<MomentRow> moment_compare(const SamplerFactory& factory, const CovarianceModel& m, const InitialData& f,
                                             std::span<const MomentSpec> specs, std::span<const double> eps_schedule,
                                             std::size_t n_fields, std::size_t n_path_tuples, const RngStream& master,
                                             double dt = 0.0, int workers = 0) {
  if (specs.empty()) throw DomainError("moment_compare: no moment specs");
  if (eps_schedule.empty()) throw DomainError("moment_compare: empty epsilon schedule");
  for (std::size_t i = 1; i < eps_schedule.size(); ++i)
    if (!(eps_schedule[i] < eps_schedule[i - 1])) throw DomainError("moment_compare: epsilon schedule must decrease");
  if (n_fields < 2 || n_path_tuples < 1) throw DomainError("moment_compare: need >= 2 fields and >= 1 tuple");
  const int d = m.d();
  int n_pool = 0;
  for (const auto& s : specs) {
    s.validate();
    if (s.t != specs[0].t || s.x != specs[0].x) throw DomainError("moment_compare: specs must share t and x");
    n_pool = std::max(n_pool, s.order());
  }
  const double t = specs[0].t;
  const auto& x = specs[0].x;
  const unsigned w = resolve_workers(workers);

  std::vector<MomentEstimate> limits;
  for (const auto& s : specs) limits.push_back(limit_moment(m, f, s, static_cast<int>(w)));

  std::vector<MomentRow> rows;
  for (std::size_t e = 0; e < eps_schedule.size(); ++e) {
    SolveSpec ss{eps_schedule[e], kAlphaInf, t, x, 2, dt, {}};
    if (ss.dt == 0.0) ss.dt = default_solve_dt(m, ss);
    const double amp = std::pow(ss.epsilon, -ss.delta());
    // field_means[spec][field]
    std::vector<std::vector<std::complex<double>>> field_means(specs.size(), std::vector<std::complex<double>>(n_fields));
    for (std::size_t q = 0; q < n_fields; ++q) {
      const FieldSampler v = factory(e * n_fields + q, field_stream(master, e, q));
      const RngStream ps = path_stream(master, e, q);
      std::vector<std::vector<std::complex<double>>> per_tuple(specs.size(), std::vector<std::complex<double>>(n_path_tuples));
      parallel_for(n_path_tuples, w, [&](std::size_t i) {
        std::vector<std::complex<double>> factor(n_pool);
        std::array<double, 4> end{};
        for (int j = 0; j < n_pool; ++j) {
          const auto path = BrownianPath::sample(d, t, ss.dt, tuple_path_stream(ps, i, j));
          for (int k = 0; k < d; ++k) end[k] = x[k] + path.endpoint()[k];
          const double phase = amp * detail::fk_phase(v, path, ss, false).first;
          factor[j] = f(std::span<const double>(end.data(), d)) * std::polar(1.0, phase);
        }
        for (std::size_t si = 0; si < specs.size(); ++si) {
          std::complex<double> prod{1.0, 0.0};
          for (int j = 0; j < specs[si].order(); ++j) prod *= j < specs[si].N1 ? factor[j] : std::conj(factor[j]);
          per_tuple[si][i] = prod;
        }
      });
      for (std::size_t si = 0; si < specs.size(); ++si) field_means[si][q] = detail::complex_stats(per_tuple[si]).mean;
    }
    for (std::size_t si = 0; si < specs.size(); ++si) {
      const auto st = detail::complex_stats(field_means[si]);
      MomentRow r;
      r.epsilon = ss.epsilon;
      r.N1 = specs[si].N1;
      r.N2 = specs[si].N2;
      r.re_moment = st.mean.real();
      r.im_moment = st.mean.imag();
      r.re_stderr = st.se_re;
      r.im_stderr = st.se_im;
      r.re_limit = limits[si].value.real();
      r.im_limit = limits[si].value.imag();
      r.limit_stderr = std::hypot(limits[si].stderr_re, limits[si].stderr_im);
      r.abs_diff = std::abs(st.mean - limits[si].value);
      r.t = t;
      r.x = x;
      r.n_path_tuples = n_path_tuples;
      r.n_fields = n_fields;
      r.master_seed = master.master_seed;
      r.dt = ss.dt;
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

}  // namespace scenery
