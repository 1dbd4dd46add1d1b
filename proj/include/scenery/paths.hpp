#pragma once

// Brownian path ensembles and scenery functionals X = eps int_0^{t/eps^2} V(.., ..) ds.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scenery/covariance.hpp"
#include "scenery/errors.hpp"
#include "scenery/field.hpp"
#include "scenery/numerics.hpp"
#include "scenery/rng.hpp"

namespace scenery {

struct PathSpec {
  int d = 3;
  double horizon = 1.0;
  double dt = 1e-2;
  std::size_t n_paths = 1;
  RngStream stream{};

  std::size_t steps() const { return static_cast<std::size_t>(std::ceil(horizon / dt - 1e-9)); }

  void validate() const {
    if (d < 1 || d > 4) throw DomainError("PathSpec: dimension must be in 1..4");
    if (!(dt > 0.0)) throw DomainError("PathSpec: dt must be > 0");
    if (!(horizon > 0.0)) throw DomainError("PathSpec: horizon must be > 0");
    if (horizon / dt > 1e8)
      throw ResourceError("PathSpec: horizon/dt = " + std::to_string(horizon / dt) + " exceeds the 1e8 step budget");
  }
};

/// Discretized Brownian path started at 0 on the grid s_i = i dt, with a
/// shortened last step ending exactly at the horizon.
class BrownianPath {
 public:
  BrownianPath(int d, double dt, double horizon, std::vector<double> points)
      : d_(d), dt_(dt), horizon_(horizon), points_(std::move(points)) {}

  static BrownianPath sample(int d, double horizon, double dt, const RngStream& stream) {
    const std::size_t n = PathSpec{d, horizon, dt, 1, stream}.steps();
    std::vector<double> pts((n + 1) * d, 0.0);
    StreamGenerator g(stream);
    for (std::size_t i = 0; i < n; ++i) {
      const double h = std::min(dt, horizon - static_cast<double>(i) * dt);
      const double sd = std::sqrt(std::max(h, 0.0));
      for (int k = 0; k < d; ++k) pts[(i + 1) * d + k] = pts[i * d + k] + sd * g.normal();
    }
    return BrownianPath(d, dt, horizon, std::move(pts));
  }

  int d() const noexcept { return d_; }
  double dt() const noexcept { return dt_; }
  double horizon() const noexcept { return horizon_; }
  std::size_t steps() const noexcept { return points_.size() / d_ - 1; }
  double time(std::size_t i) const { return std::min(static_cast<double>(i) * dt_, horizon_); }
  std::span<const double> at(std::size_t i) const { return {&points_[i * d_], static_cast<std::size_t>(d_)}; }
  std::span<const double> endpoint() const { return at(steps()); }

  /// Position at time s by linear interpolation between nodes.
  void position(double s, std::span<double> out) const {
    s = std::clamp(s, 0.0, horizon_);
    std::size_t i = std::min(static_cast<std::size_t>(s / dt_), steps() > 0 ? steps() - 1 : 0);
    const double h = time(i + 1) - time(i);
    const double w = h > 0.0 ? (s - time(i)) / h : 0.0;
    for (int k = 0; k < d_; ++k) out[k] = (1.0 - w) * points_[i * d_ + k] + w * points_[(i + 1) * d_ + k];
  }

  /// Every factor-th node; the result is an exact Brownian path on the coarse grid.
  BrownianPath coarsened(std::size_t factor) const {
    if (factor < 1) throw DomainError("BrownianPath: coarsening factor must be >= 1");
    const std::size_t n = steps();
    if (n % factor != 0 || std::abs(static_cast<double>(n) * dt_ - horizon_) > 1e-9 * horizon_)
      throw DomainError("BrownianPath: coarsening needs a uniform grid divisible by the factor");
    std::vector<double> pts;
    pts.reserve((n / factor + 1) * d_);
    for (std::size_t i = 0; i <= n; i += factor) pts.insert(pts.end(), points_.begin() + i * d_, points_.begin() + (i + 1) * d_);
    return BrownianPath(d_, dt_ * factor, horizon_, std::move(pts));
  }

 private:
  int d_;
  double dt_;
  double horizon_;
  std::vector<double> points_;
};

/// Lazily generated ensemble: path i depends only on (spec.stream, i).
class PathEnsemble {
 public:
  explicit PathEnsemble(PathSpec spec) : spec_(spec) { spec_.validate(); }
  const PathSpec& spec() const noexcept { return spec_; }
  std::size_t size() const noexcept { return spec_.n_paths; }
  BrownianPath path(std::size_t i) const { return BrownianPath::sample(spec_.d, spec_.horizon, spec_.dt, spec_.stream.child(i)); }

 private:
  PathSpec spec_;
};

inline PathEnsemble sample_paths(const PathSpec& spec) { return PathEnsemble(spec); }

enum class RegimeTag { G2, LE2, INF };

inline std::string to_string(RegimeTag r) {
  switch (r) {
    case RegimeTag::G2: return "G2";
    case RegimeTag::LE2: return "LE2";
    default: return "INF";
  }
}

struct SceneryRegime {
  RegimeTag tag = RegimeTag::G2;
  double alpha = 3.0;
  double epsilon = 0.1;

  void validate() const {
    if (!(epsilon > 0.0)) throw DomainError("SceneryRegime: epsilon must be > 0");
    if (tag == RegimeTag::G2 && !(alpha > 2.0)) throw DomainError("SceneryRegime: G2 requires alpha > 2");
    if (tag == RegimeTag::LE2 && !(alpha >= 0.0 && alpha <= 2.0)) throw DomainError("SceneryRegime: LE2 requires 0 <= alpha <= 2");
  }

  double beta() const { return tag == RegimeTag::G2 ? 1.0 - 2.0 / alpha : 0.0; }

  /// Exponent of the potential prefactor in the original equation.
  double delta() const { return tag == RegimeTag::INF ? 0.5 : std::max(alpha / 2.0, 1.0); }

  /// Field argument at micro time s and path position b.
  void map(double s, std::span<const double> b, double& t_out, std::span<double> x_out) const {
    double tscale = 1.0, xscale = 1.0;
    switch (tag) {
      case RegimeTag::G2: xscale = std::pow(epsilon, beta()); break;
      case RegimeTag::LE2: tscale = std::pow(epsilon, 2.0 - alpha); break;
      case RegimeTag::INF: xscale = epsilon; break;
    }
    t_out = tscale * s;
    for (std::size_t k = 0; k < b.size(); ++k) x_out[k] = xscale * b[k];
  }
};

/// Macroscopic time step min(eps^a, eps^2, ell_t eps^a, (ell_x eps)^2) / 8.
inline double default_macro_dt(const CovarianceModel& m, double alpha, double epsilon) {
  const double ea = std::pow(epsilon, alpha);
  return std::min({ea, epsilon * epsilon, m.ell_t() * ea, m.ell_x() * m.ell_x() * epsilon * epsilon}) / 8.0;
}

/// Default step for the micro-time scenery forms. For G2 the scenery epsilon is
/// eps^{alpha/2} of the original equation; for INF the temporal scale is eps.
inline double default_micro_dt(const CovarianceModel& m, const SceneryRegime& r) {
  r.validate();
  const double e = r.epsilon;
  switch (r.tag) {
    case RegimeTag::G2: {
      const double eps_orig = std::pow(e, 2.0 / r.alpha);
      return default_macro_dt(m, r.alpha, eps_orig) / (e * e);
    }
    case RegimeTag::LE2: return default_macro_dt(m, r.alpha, e) / (e * e);
    default: return std::min(m.ell_t(), m.ell_x() * m.ell_x()) / 8.0;
  }
}

namespace detail {

// Calls visit(step index, contribution) for every step of the left-point sum
// of V over micro time [0, T]. Nodes only: interpolated midpoints would carry
// Var(B_s - B_u) = |s-u| - ds/2 and bias every second moment.
template <class Visit>
void scenery_steps(const FieldSampler& v, const BrownianPath& path, const SceneryRegime& r, double T, Visit&& visit) {
  const int d = path.d();
  std::array<double, 4> x{};
  const std::span<double> xs(x.data(), d);
  const std::size_t n = path.steps();
  for (std::size_t i = 0; i < n; ++i) {
    const double s0 = path.time(i);
    if (s0 >= T) break;
    const double s1 = std::min(path.time(i + 1), T);
    double tm = 0.0;
    r.map(s0, path.at(i), tm, xs);
    visit(i, v(tm, xs) * (s1 - s0));
  }
}

inline void check_horizon(const BrownianPath& path, double T, const char* who) {
  if (path.horizon() < T * (1.0 - 1e-12))
    throw DomainError(std::string(who) + ": path horizon " + std::to_string(path.horizon()) + " shorter than t/eps^2 = " +
                      std::to_string(T));
}

}  // namespace detail

/// X_eps(t) = eps * left-point sum of the regime integrand over [0, t/eps^2].
inline double scenery_integral(const FieldSampler& v, const BrownianPath& path, const SceneryRegime& r, double t) {
  r.validate();
  const double T = t / (r.epsilon * r.epsilon);
  detail::check_horizon(path, T, "scenery_integral");
  double s = 0.0;
  detail::scenery_steps(v, path, r, T, [&](std::size_t, double c) { s += c; });
  return r.epsilon * s;
}

struct SceneryResult {
  std::vector<double> values;
  double mean = 0.0;
  double variance = 0.0;
  double mean_stderr = 0.0;
  double variance_stderr = 0.0;
  std::vector<double> c_grid;
  std::vector<std::complex<double>> characteristic;

  static SceneryResult from_values(std::vector<double> v, std::vector<double> c_grid = {}) {
    SceneryResult r;
    r.values = std::move(v);
    const double n = static_cast<double>(r.values.size());
    double s = 0.0;
    for (double x : r.values) s += x;
    r.mean = s / n;
    double m2 = 0.0, m4 = 0.0;
    for (double x : r.values) {
      const double dd = (x - r.mean) * (x - r.mean);
      m2 += dd;
      m4 += dd * dd;
    }
    r.variance = n > 1 ? m2 / (n - 1.0) : 0.0;
    r.mean_stderr = std::sqrt(r.variance / n);
    const double mu2 = m2 / n, mu4 = m4 / n;
    r.variance_stderr = std::sqrt(std::max(mu4 - mu2 * mu2, 0.0) / n);
    r.c_grid = std::move(c_grid);
    for (double c : r.c_grid) {
      std::complex<double> acc{0.0, 0.0};
      for (double x : r.values) acc += std::polar(1.0, c * x);
      r.characteristic.push_back(acc / n);
    }
    return r;
  }
};

inline SceneryResult scenery_ensemble(const FieldSampler& v, const PathEnsemble& paths, const SceneryRegime& r, double t,
                                      std::vector<double> c_grid = {}, unsigned workers = 1) {
  std::vector<double> vals(paths.size());
  parallel_for(paths.size(), workers, [&](std::size_t i) { vals[i] = scenery_integral(v, paths.path(i), r, t); });
  return SceneryResult::from_values(std::move(vals), std::move(c_grid));
}

struct BlockSplit {
  double I = 0.0;
  double II = 0.0;
  double III = 0.0;
  std::size_t N = 0;
  bool gamma1_flag = false;  // gamma1 >= 1/2: outside the range where the Taylor remainder bound is proven
};

/// Splits the G2 scenery sum over blocks I_k = [(k-1)D, (k-1)D + eps^{-g1}),
/// gaps J_k = [(k-1)D + eps^{-g1}, kD), tail [ND, t/eps^2], D = eps^{-g1} + eps^{-g2}.
/// Boundaries are rounded to the nearest grid node.
inline BlockSplit block_split(const FieldSampler& v, const BrownianPath& path, double epsilon, double alpha, double gamma1,
                              double gamma2, double t) {
  if (!(0.0 < gamma2 && gamma2 < gamma1 && gamma1 < 2.0))
    throw DomainError("block_split: need 0 < gamma2 < gamma1 < 2");
  const SceneryRegime r{RegimeTag::G2, alpha, epsilon};
  r.validate();
  const double T = t / (epsilon * epsilon);
  detail::check_horizon(path, T, "block_split");
  const double big = std::pow(epsilon, -gamma1), small = std::pow(epsilon, -gamma2);
  const double D = big + small;
  BlockSplit out;
  out.N = static_cast<std::size_t>(std::floor(T / D));
  out.gamma1_flag = gamma1 >= 0.5;
  const double h = path.dt();
  auto node = [h](double s) { return static_cast<std::size_t>(std::llround(s / h)); };
  const std::size_t tail_start = node(static_cast<double>(out.N) * D);
  detail::scenery_steps(v, path, r, T, [&](std::size_t i, double c) {
    if (i >= tail_start) {
      out.III += c;
      return;
    }
    // block index from the rounded boundaries
    const double s = (static_cast<double>(i) + 0.5) * h;
    auto k = static_cast<std::size_t>(std::floor(s / D));
    if (k >= out.N) k = out.N - 1;
    while (k > 0 && i < node(static_cast<double>(k) * D)) --k;
    while (k + 1 < out.N && i >= node(static_cast<double>(k + 1) * D)) ++k;
    const std::size_t gap_start = node(static_cast<double>(k) * D + big);
    (i < gap_start ? out.I : out.II) += c;
  });
  out.I *= epsilon;
  out.II *= epsilon;
  out.III *= epsilon;
  return out;
}

/// (1/T_run) int_0^{T_run} V(eps^{2-alpha} s, B_s) ds, left-point rule.
inline double ergodic_average(const FieldSampler& v, const BrownianPath& path, double epsilon, double alpha, double T_run) {
  if (alpha > 2.0) throw DomainError("ergodic_average: requires alpha <= 2");
  if (!(T_run > 0.0)) throw DomainError("ergodic_average: T_run must be > 0");
  detail::check_horizon(path, T_run, "ergodic_average");
  const SceneryRegime r{RegimeTag::LE2, alpha, epsilon};
  double s = 0.0;
  detail::scenery_steps(v, path, r, T_run, [&](std::size_t, double c) { s += c; });
  return s / T_run;
}

enum class LemmaA2Mode { same_path, independent_paths };

/// same_path:         eps^g int_0^{eps^-g} int_0^{eps^-g} R(s-u, eps^b (B_s - B_u)) ds du
/// independent_paths: eps^2 int_0^{t/eps^2} int_0^{t/eps^2} |R(s-u, eps^b (B_s - W_u))| ds du
/// Double left-point sums over path nodes; pairs with |s-u| beyond the model's
/// time cutoff are skipped (R vanishes or is below 1e-300 there).
inline double lemma_a2_functional(const BrownianPath& b, const BrownianPath* w, const CovarianceModel& model, double epsilon,
                                  double beta, double gamma, LemmaA2Mode mode, double t = 1.0) {
  if (!(beta > 0.0 && beta < 1.0)) throw DomainError("lemma_a2_functional: beta must be in (0, 1)");
  if (!(gamma > 0.0)) throw DomainError("lemma_a2_functional: gamma must be > 0");
  const bool same = mode == LemmaA2Mode::same_path;
  if (!same && !w) throw DomainError("lemma_a2_functional: independent mode needs a second path");
  const BrownianPath& other = same ? b : *w;
  if (std::abs(b.dt() - other.dt()) > 1e-15) throw DomainError("lemma_a2_functional: paths must share the grid");
  const double T = same ? std::pow(epsilon, -gamma) : t / (epsilon * epsilon);
  detail::check_horizon(b, T, "lemma_a2_functional");
  detail::check_horizon(other, T, "lemma_a2_functional");
  const int d = b.d();
  const double h = b.dt();
  const auto n = static_cast<std::size_t>(std::floor(T / h + 1e-9));
  const double scale = std::pow(epsilon, beta);
  auto nodes = [&](const BrownianPath& p) {
    std::vector<double> m(n * d);
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = p.at(i);
      for (int k = 0; k < d; ++k) m[i * d + k] = a[k];
    }
    return m;
  };
  const auto mb = nodes(b);
  const auto mw = same ? mb : nodes(other);
  const auto band = static_cast<std::size_t>(std::ceil(std::min(model.time_cutoff(), 12.0 * model.ell_t()) / h));
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i > band ? i - band : 0, hi = std::min(n, i + band + 1);
    for (std::size_t j = lo; j < hi; ++j) {
      double r2 = 0.0;
      for (int k = 0; k < d; ++k) {
        const double dx = scale * (mb[i * d + k] - mw[j * d + k]);
        r2 += dx * dx;
      }
      const double rv = model.r_radial((static_cast<double>(i) - static_cast<double>(j)) * h, std::sqrt(r2));
      s += same ? rv : std::abs(rv);
    }
  }
  s *= h * h;
  return same ? std::pow(epsilon, gamma) * s : epsilon * epsilon * s;
}

}  // namespace scenery
