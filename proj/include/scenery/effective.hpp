#pragma once

// Effective coefficients and the resolvent corrector.
//
//   rho(G2)  = int_0^inf R(t, 0) dt
//   rho(EQ2) = int_0^inf E_B R(t, B_t) dt
//   rho(LT2) = int_0^inf E_B R(0, B_t) dt
//
// Spectral forms use c_d = (2 pi)^{-(d+1)} and s = eps^{2 - alpha}:
//   sigma2(EQ2)      = c_d int |xi|^2 Rh / (|xi|^4 / 4 + xi0^2)
//   sigma2(LT2)      = 4 c_d int Rh / |xi|^2
//   sigma2_lambda    = c_d int |xi|^2 Rh / ((lambda + |xi|^2/2)^2 + s^2 xi0^2)
//   lambda <Phi,Phi> = c_d int lambda Rh / ((lambda + |xi|^2/2)^2 + s^2 xi0^2)

#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scenery/covariance.hpp"
#include "scenery/errors.hpp"
#include "scenery/field.hpp"
#include "scenery/paths.hpp"
#include "scenery/quadrature.hpp"

namespace scenery {

enum class EffRegime { G2, EQ2, LT2 };

inline std::string to_string(EffRegime r) {
  switch (r) {
    case EffRegime::G2: return "G2";
    case EffRegime::EQ2: return "EQ2";
    default: return "LT2";
  }
}

inline EffRegime eff_regime_for_alpha(double alpha) {
  if (alpha > 2.0) return EffRegime::G2;
  if (alpha == 2.0) return EffRegime::EQ2;
  return EffRegime::LT2;
}

struct EffectiveCoeffs {
  EffRegime regime = EffRegime::G2;
  double rho = 0.0;
  double sigma2 = 0.0;
  double rho_error = 0.0;
  double sigma2_error = 0.0;
  std::size_t evals = 0;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const {
    return {{"regime", to_string(regime)}, {"rho", rho},           {"sigma2", sigma2}, {"rho_error", rho_error},
            {"sigma2_error", sigma2_error}, {"evals", evals},      {"warnings", warnings}};
  }
};

namespace detail {

inline double spectral_prefactor(int d) { return std::pow(2.0 * std::numbers::pi, -(d + 1)); }

inline QuadResult require(const QuadResult& r, const std::string& what) {
  if (!r.converged) throw ConvergenceError(what + ": quadrature did not converge", r.value, r.error);
  return r;
}

// E_B R(t, B_t) = int R(t, x) q_t(x) dx
inline double heat_averaged_covariance(const CovarianceModel& m, double t, double time_arg, const QuadratureSpec& spec) {
  const int d = m.d();
  if (m.separable()) {
    const double lx2 = m.ell_x() * m.ell_x();
    return m.amplitude() * std::exp(-0.5 * time_arg * time_arg / (m.ell_t() * m.ell_t())) * std::pow(lx2 / (lx2 + t), 0.5 * d);
  }
  if (t <= 0.0) return m.r_radial(time_arg, 0.0);
  // r = sqrt(t) rho with rho distributed as |N(0, I_d)|
  const double st = std::sqrt(t);
  const double area = unit_sphere_area(d);
  const double norm = std::pow(2.0 * std::numbers::pi, -0.5 * d);
  const double rho_max = m.space_cutoff() / st;
  auto f = [&](double rho) { return area * std::pow(rho, d - 1) * norm * std::exp(-0.5 * rho * rho) * m.r_radial(time_arg, st * rho); };
  return integrate_interval(f, 0.0, std::min(rho_max, 40.0), spec).value;
}

}  // namespace detail

/// rho for one regime. Throws ConvergenceError when the quadrature fails
/// (e.g. LT2 in d <= 2, where the time integral diverges).
inline EffectiveCoeffs rho(const CovarianceModel& m, EffRegime regime, const QuadratureSpec& spec = {}) {
  EffectiveCoeffs out;
  out.regime = regime;
  if (m.d() < 3 && regime != EffRegime::G2)
    out.warnings.push_back("d < 3: the time integral of E_B R is not integrable in general");
  const QuadratureSpec inner{spec.rel_tol * 0.1, spec.abs_tol * 0.1, 100000};
  QuadResult r;
  switch (regime) {
    case EffRegime::G2:
      r = integrate_semi_infinite([&](double t) { return m.r_radial(t, 0.0); }, spec);
      break;
    case EffRegime::EQ2:
      r = integrate_semi_infinite([&](double t) { return detail::heat_averaged_covariance(m, t, t, inner); }, spec);
      break;
    case EffRegime::LT2:
      r = integrate_semi_infinite([&](double t) { return detail::heat_averaged_covariance(m, t, 0.0, inner); }, spec);
      break;
  }
  detail::require(r, "rho(" + to_string(regime) + ")");
  out.rho = r.value;
  out.rho_error = r.error;
  out.sigma2 = 2.0 * r.value;
  out.sigma2_error = 2.0 * r.error;
  out.evals = r.evals;
  return out;
}

/// sigma^2 through its spectral representation (EQ2 or LT2).
inline QuadResult sigma2_spectral(const CovarianceModel& m, EffRegime regime, const QuadratureSpec& spec = {}) {
  const int d = m.d();
  const double c = detail::spectral_prefactor(d);
  if (regime == EffRegime::G2) throw DomainError("sigma2_spectral: only EQ2 and LT2 have a spectral form here");
  if (regime == EffRegime::LT2 && d < 3) throw DomainError("sigma2_spectral: LT2 needs d >= 3 (1/|xi|^2 not integrable)");
  QuadResult r;
  if (regime == EffRegime::EQ2) {
    r = integrate_spectral(
        [&](double xi0, std::span<const double> xi) {
          const double k2 = norm2(xi);
          if (k2 == 0.0) return 0.0;
          return c * k2 * m.r_hat_radial(xi0, std::sqrt(k2)) / (0.25 * k2 * k2 + xi0 * xi0);
        },
        d, spec, Isotropy::radial);
  } else {
    r = integrate_spectral(
        [&](double xi0, std::span<const double> xi) {
          const double k2 = norm2(xi);
          if (k2 == 0.0) return 0.0;
          return 4.0 * c * m.r_hat_radial(xi0, std::sqrt(k2)) / k2;
        },
        d, spec, Isotropy::radial);
  }
  return detail::require(r, "sigma2_spectral(" + to_string(regime) + ")");
}

struct CorrectorSpec {
  double lambda = 0.01;
  double epsilon = 0.1;
  double alpha = 1.0;

  /// lambda = eps^2, the coupling used for the homogenization argument.
  static CorrectorSpec coupled(double epsilon, double alpha) { return {epsilon * epsilon, epsilon, alpha}; }

  void validate() const {
    if (!(lambda > 0.0)) throw DomainError("CorrectorSpec: lambda must be > 0");
    if (!(epsilon > 0.0)) throw DomainError("CorrectorSpec: epsilon must be > 0");
  }

  /// eps^{2 - alpha}, the time-derivative weight in L.
  double time_weight() const { return std::pow(epsilon, 2.0 - alpha); }
};

inline QuadResult sigma2_lambda(const CovarianceModel& m, const CorrectorSpec& cs, const QuadratureSpec& spec = {}) {
  cs.validate();
  const double c = detail::spectral_prefactor(m.d());
  const double s2 = cs.time_weight() * cs.time_weight();
  auto r = integrate_spectral(
      [&](double xi0, std::span<const double> xi) {
        const double k2 = norm2(xi);
        const double a = cs.lambda + 0.5 * k2;
        return c * k2 * m.r_hat_radial(xi0, std::sqrt(k2)) / (a * a + s2 * xi0 * xi0);
      },
      m.d(), spec, Isotropy::radial);
  return detail::require(r, "sigma2_lambda");
}

inline QuadResult corrector_norm(const CovarianceModel& m, const CorrectorSpec& cs, const QuadratureSpec& spec = {}) {
  cs.validate();
  const double c = detail::spectral_prefactor(m.d());
  const double s2 = cs.time_weight() * cs.time_weight();
  auto r = integrate_spectral(
      [&](double xi0, std::span<const double> xi) {
        const double k2 = norm2(xi);
        const double a = cs.lambda + 0.5 * k2;
        return c * cs.lambda * m.r_hat_radial(xi0, std::sqrt(k2)) / (a * a + s2 * xi0 * xi0);
      },
      m.d(), spec, Isotropy::radial);
  return detail::require(r, "corrector_norm");
}

struct CorrectorJet {
  double phi = 0.0;
  std::array<double, 4> grad{};
  double dt_phi = 0.0;       // time derivative
  double laplacian = 0.0;
  double v = 0.0;            // field value at the same point
};

/// Exact corrector of a harmonic field: per mode
/// z = amp e^{i(omega t + k.x + theta)} / (lambda + |k|^2/2 - i omega eps^{2-alpha}),
/// Phi = Re z, D_k Phi = -k_k Im z, dPhi/dt = Re(i omega z), Laplacian = -|k|^2 Re z.
inline CorrectorJet corrector_jet(const HarmonicField& f, const CorrectorSpec& cs, double t, std::span<const double> x) {
  const int d = f.d();
  const double s = cs.time_weight();
  CorrectorJet jet;
  for (std::size_t j = 0; j < f.modes(); ++j) {
    const auto k = f.k(j);
    double ph = f.omega(j) * t + f.theta(j);
    double k2 = 0.0;
    for (int i = 0; i < d; ++i) {
      ph += k[i] * x[i];
      k2 += k[i] * k[i];
    }
    const std::complex<double> e = std::polar(f.amp(j), ph);
    const std::complex<double> z = e / std::complex<double>(cs.lambda + 0.5 * k2, -f.omega(j) * s);
    jet.v += e.real();
    jet.phi += z.real();
    for (int i = 0; i < d; ++i) jet.grad[i] -= k[i] * z.imag();
    jet.dt_phi -= f.omega(j) * z.imag();
    jet.laplacian -= k2 * z.real();
  }
  return jet;
}

struct CorrectorValue {
  double phi = 0.0;
  std::vector<double> grad;
};

inline CorrectorValue corrector_eval(const HarmonicField& f, const CorrectorSpec& cs, double t, std::span<const double> x) {
  cs.validate();
  const auto jet = corrector_jet(f, cs, t, x);
  return {jet.phi, std::vector<double>(jet.grad.begin(), jet.grad.begin() + f.d())};
}

inline CorrectorValue corrector_eval(const FieldSampler& s, const CorrectorSpec& cs, double t, std::span<const double> x) {
  if (!s.harmonic()) throw UnsupportedBackend("corrector_eval: requires the harmonic backend");
  return corrector_eval(*s.harmonic(), cs, t, x);
}

/// (lambda - L) Phi - V at one point, L = eps^{2-alpha} d/dt + Laplacian / 2.
inline double resolvent_residual(const HarmonicField& f, const CorrectorSpec& cs, double t, std::span<const double> x) {
  const auto jet = corrector_jet(f, cs, t, x);
  return cs.lambda * jet.phi - cs.time_weight() * jet.dt_phi - 0.5 * jet.laplacian - jet.v;
}

struct DecompositionResult {
  double X = 0.0;
  double R_term = 0.0;
  double M_term = 0.0;
  double residual = 0.0;
  double quadratic_variation = 0.0;  // eps^2 int |grad Phi|^2 ds
  std::array<double, 4> drift{};     // eps^2 int D_k Phi ds
};

/// X = R + M along one path in the LE2 scaling y_s = (eps^{2-alpha} s, B_s),
/// s in [0, t/eps^2]:
///   R = eps sum lambda Phi(y_mid) ds - eps Phi(y_end) + eps Phi(y_0)
///   M = eps sum_k sum_n D_k Phi(y_n) dB_n^k   (Ito, left point)
inline DecompositionResult martingale_decompose(const HarmonicField& f, const BrownianPath& path, const CorrectorSpec& cs,
                                                double t) {
  cs.validate();
  const double eps = cs.epsilon;
  const double T = t / (eps * eps);
  detail::check_horizon(path, T, "martingale_decompose");
  const int d = f.d();
  const double s = cs.time_weight();
  DecompositionResult out;
  std::array<double, 4> mid{};
  const std::size_t n = path.steps();
  double x_sum = 0.0, lam_sum = 0.0, m_sum = 0.0, qv = 0.0;
  std::array<double, 4> drift{};
  double phi0 = 0.0, phi_end = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s0 = path.time(i);
    if (s0 >= T) break;
    const double s1 = std::min(path.time(i + 1), T);
    const double h = s1 - s0;
    const double frac = h / (path.time(i + 1) - s0);
    const auto a = path.at(i), b = path.at(i + 1);
    const auto left = corrector_jet(f, cs, s * s0, a);
    if (i == 0) phi0 = left.phi;
    for (int k = 0; k < d; ++k) {
      const double db = frac * (b[k] - a[k]);
      m_sum += left.grad[k] * db;
      qv += left.grad[k] * left.grad[k] * h;
      drift[k] += left.grad[k] * h;
      mid[k] = a[k] + 0.5 * db;
    }
    const auto m = corrector_jet(f, cs, s * 0.5 * (s0 + s1), std::span<const double>(mid.data(), d));
    x_sum += m.v * h;
    lam_sum += cs.lambda * m.phi * h;
    if (s1 >= T || i + 1 == n) {
      std::array<double, 4> end{};
      for (int k = 0; k < d; ++k) end[k] = a[k] + frac * (b[k] - a[k]);
      phi_end = corrector_jet(f, cs, s * s1, std::span<const double>(end.data(), d)).phi;
    }
  }
  out.X = eps * x_sum;
  out.R_term = eps * lam_sum - eps * phi_end + eps * phi0;
  out.M_term = eps * m_sum;
  out.residual = out.X - out.R_term - out.M_term;
  out.quadratic_variation = eps * eps * qv;
  for (int k = 0; k < d; ++k) out.drift[k] = eps * eps * drift[k];
  return out;
}

inline DecompositionResult martingale_decompose(const FieldSampler& sampler, const BrownianPath& path, const CorrectorSpec& cs,
                                                double t) {
  if (!sampler.harmonic()) throw UnsupportedBackend("martingale_decompose: requires the harmonic backend");
  return martingale_decompose(*sampler.harmonic(), path, cs, t);
}

}  // namespace scenery
