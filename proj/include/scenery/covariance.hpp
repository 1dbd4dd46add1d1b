#pragma once

// Space-time covariance models R(t, x) of a stationary field on R x R^d, with
// their power spectra. Both shipped families are isotropic in x and even in t.
//
// The tapered family multiplies the Gaussian by the Wendland function
// psi(s) = (1 - s)_+^7 (16 s^2 + 7 s + 1), s = sqrt(t^2 + |x|^2) / M, which is
// positive definite on R^n for n <= 5 and C^4; the product therefore keeps a
// non-negative spectrum and has compact support of radius M.

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scenery/errors.hpp"
#include "scenery/quadrature.hpp"

namespace scenery {

enum class CovarianceKind { gaussian_separable, tapered_gaussian };

inline std::string to_string(CovarianceKind k) {
  return k == CovarianceKind::gaussian_separable ? "gaussian_separable" : "tapered_gaussian";
}

inline double wendland_taper(double s) {
  if (s >= 1.0) return 0.0;
  const double u = 1.0 - s;
  const double u2 = u * u;
  const double u4 = u2 * u2;
  return u4 * u2 * u * ((16.0 * s + 7.0) * s + 1.0);
}

inline double norm2(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s;
}

namespace detail {

// R-hat(xi0, |xi|) of the tapered model on a uniform grid over
// [0, xi0_max] x [0, k_max], evaluated by Catmull-Rom bicubic interpolation.
class SpectralTable {
 public:
  static constexpr std::size_t kSize = 768;

  SpectralTable(double amplitude, double ell_t, double ell_x, int d, double radius)
      : xi0_max_(20.0 / ell_t), k_max_(20.0 / ell_x), values_(kSize * kSize) {
    dxi0_ = xi0_max_ / (kSize - 1);
    dk_ = k_max_ / (kSize - 1);
    const double t_max = std::min(radius, 9.0 * ell_t);
    constexpr std::size_t kNodes = 160;
    GaussLegendre gt(kNodes, 0.0, t_max);

    const double omega = unit_sphere_area(d);
    // S(t, k) = int_{R^d} e^{-i xi.x} R(t, x) dx for every time node and k column.
    std::vector<double> s(kNodes * kSize, 0.0);
    std::vector<double> rvals(kNodes);
    for (std::size_t it = 0; it < kNodes; ++it) {
      const double t = gt.nodes[it];
      const double r_max = std::min(std::sqrt(std::max(0.0, radius * radius - t * t)), 9.0 * ell_x);
      if (r_max <= 0.0) continue;
      GaussLegendre gr(kNodes, 0.0, r_max);
      for (std::size_t ir = 0; ir < kNodes; ++ir) {
        const double r = gr.nodes[ir];
        const double rho = std::sqrt(t * t + r * r) / radius;
        rvals[ir] = gr.weights[ir] * std::pow(r, d - 1) * amplitude *
                    std::exp(-0.5 * t * t / (ell_t * ell_t) - 0.5 * r * r / (ell_x * ell_x)) * wendland_taper(rho);
      }
      for (std::size_t jk = 0; jk < kSize; ++jk) {
        const double k = dk_ * static_cast<double>(jk);
        double acc = 0.0;
        for (std::size_t ir = 0; ir < kNodes; ++ir) acc += rvals[ir] * radial_kernel(d, k * gr.nodes[ir]);
        s[it * kSize + jk] = omega * acc;
      }
    }
    // R-hat(xi0, k) = 2 int_0^M cos(xi0 t) S(t, k) dt
    std::vector<double> c(kNodes);
    for (std::size_t i0 = 0; i0 < kSize; ++i0) {
      const double xi0 = dxi0_ * static_cast<double>(i0);
      for (std::size_t it = 0; it < kNodes; ++it) c[it] = 2.0 * gt.weights[it] * std::cos(xi0 * gt.nodes[it]);
      double* row = &values_[i0 * kSize];
      for (std::size_t it = 0; it < kNodes; ++it) {
        const double* srow = &s[it * kSize];
        for (std::size_t jk = 0; jk < kSize; ++jk) row[jk] += c[it] * srow[jk];
      }
    }
    for (double& v : values_) v = std::max(v, 0.0);
  }

  double operator()(double xi0, double k) const {
    xi0 = std::abs(xi0);
    if (xi0 >= xi0_max_ || k >= k_max_) return 0.0;
    const double u = xi0 / dxi0_, v = k / dk_;
    const auto i = static_cast<std::ptrdiff_t>(u);
    const auto j = static_cast<std::ptrdiff_t>(v);
    const double fu = u - static_cast<double>(i), fv = v - static_cast<double>(j);
    const auto wu = catmull_rom(fu), wv = catmull_rom(fv);
    double out = 0.0;
    for (int a = 0; a < 4; ++a) {
      double row = 0.0;
      for (int b = 0; b < 4; ++b) row += wv[b] * at(i - 1 + a, j - 1 + b);
      out += wu[a] * row;
    }
    return std::max(out, 0.0);
  }

  double at(std::ptrdiff_t i, std::ptrdiff_t j) const {
    // even extension across the axes, zero beyond the far edge
    i = std::abs(i);
    j = std::abs(j);
    const auto n = static_cast<std::ptrdiff_t>(kSize);
    if (i >= n || j >= n) return 0.0;
    return values_[static_cast<std::size_t>(i) * kSize + static_cast<std::size_t>(j)];
  }

  double xi0_max() const { return xi0_max_; }
  double k_max() const { return k_max_; }
  double dxi0() const { return dxi0_; }
  double dk() const { return dk_; }

  /// Sphere average of e^{i xi.x} as a function of z = |xi||x|.
  static double radial_kernel(int d, double z) {
    switch (d) {
      case 1:
        return std::cos(z);
      case 2:
        return std::cyl_bessel_j(0.0, z);
      case 3:
        return z < 1e-8 ? 1.0 - z * z / 6.0 : std::sin(z) / z;
      default:
        return z < 1e-8 ? 1.0 - z * z / 8.0 : 2.0 * std::cyl_bessel_j(1.0, z) / z;
    }
  }

 private:
  static std::array<double, 4> catmull_rom(double f) {
    const double f2 = f * f, f3 = f2 * f;
    return {-0.5 * f3 + f2 - 0.5 * f, 1.5 * f3 - 2.5 * f2 + 1.0, -1.5 * f3 + 2.0 * f2 + 0.5 * f, 0.5 * f3 - 0.5 * f2};
  }

  double xi0_max_, k_max_, dxi0_ = 0.0, dk_ = 0.0;
  std::vector<double> values_;
};

}  // namespace detail

class CovarianceModel {
 public:
  static CovarianceModel gaussian(double amplitude, double ell_t, double ell_x, int d) {
    return CovarianceModel(CovarianceKind::gaussian_separable, amplitude, ell_t, ell_x, d, std::nullopt);
  }

  static CovarianceModel tapered(double amplitude, double ell_t, double ell_x, int d, double taper_radius) {
    return CovarianceModel(CovarianceKind::tapered_gaussian, amplitude, ell_t, ell_x, d, taper_radius);
  }

  /// Same shape with a different amplitude (the tapered table is rescaled, not rebuilt).
  CovarianceModel with_amplitude(double amplitude) const {
    if (!(amplitude > 0.0)) throw DomainError("CovarianceModel: amplitude must be > 0");
    CovarianceModel m = *this;
    m.table_scale_ = table_scale_ * amplitude / amplitude_;
    m.amplitude_ = amplitude;
    return m;
  }

  CovarianceKind kind() const noexcept { return kind_; }
  double amplitude() const noexcept { return amplitude_; }
  double ell_t() const noexcept { return ell_t_; }
  double ell_x() const noexcept { return ell_x_; }
  int d() const noexcept { return d_; }
  std::optional<double> taper_radius() const noexcept { return taper_radius_; }
  bool separable() const noexcept { return kind_ == CovarianceKind::gaussian_separable; }

  /// R(t, r) with r = |x|.
  double r_radial(double t, double r) const {
    double v = amplitude_ * std::exp(-0.5 * t * t / (ell_t_ * ell_t_) - 0.5 * r * r / (ell_x_ * ell_x_));
    if (taper_radius_) v *= wendland_taper(std::sqrt(t * t + r * r) / *taper_radius_);
    return v;
  }

  double r(double t, std::span<const double> x) const { return r_radial(t, std::sqrt(norm2(x))); }

  /// R-hat(xi0, k) with k = |xi|.
  double r_hat_radial(double xi0, double k) const {
    if (table_) return table_scale_ * (*table_)(xi0, k);
    return amplitude_ * std::pow(2.0 * std::numbers::pi, 0.5 * (d_ + 1)) * ell_t_ * std::pow(ell_x_, d_) *
           std::exp(-0.5 * ell_t_ * ell_t_ * xi0 * xi0 - 0.5 * ell_x_ * ell_x_ * k * k);
  }

  double r_hat(double xi0, std::span<const double> xi) const { return r_hat_radial(xi0, std::sqrt(norm2(xi))); }

  /// Time-integrated covariance int_R R(t, x) dt as a function of r = |x|.
  double r_time_integral_radial(double r) const {
    if (!taper_radius_) return amplitude_ * ell_t_ * std::sqrt(2.0 * std::numbers::pi) * std::exp(-0.5 * r * r / (ell_x_ * ell_x_));
    const double m = *taper_radius_;
    if (r >= m) return 0.0;
    const double t_max = std::sqrt(m * m - r * r);
    const auto res = integrate_interval([&](double t) { return r_radial(t, r); }, 0.0, t_max, {1e-12, 1e-15, 100000});
    return 2.0 * res.value;
  }

  double r_time_integral(std::span<const double> x) const { return r_time_integral_radial(std::sqrt(norm2(x))); }

  /// sup_t |R(t, x)| as a function of r = |x|.
  double sup_envelope_radial(double r) const {
    if (separable()) return amplitude_ * std::exp(-0.5 * r * r / (ell_x_ * ell_x_));
    const double t_hi = time_cutoff();
    constexpr int kGrid = 256;
    int best = 0;
    double best_val = -1.0;
    for (int i = 0; i < kGrid; ++i) {
      const double v = std::abs(r_radial(t_hi * i / (kGrid - 1), r));
      if (v > best_val) {
        best_val = v;
        best = i;
      }
    }
    // golden-section refinement around the best grid node
    const double h = t_hi / (kGrid - 1);
    double a = std::max(0.0, h * (best - 1)), b = std::min(t_hi, h * (best + 1));
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = b - g * (b - a), e = a + g * (b - a);
    double fc = std::abs(r_radial(c, r)), fe = std::abs(r_radial(e, r));
    for (int it = 0; it < 80 && b - a > 1e-12 * std::max(1.0, t_hi); ++it) {
      if (fc > fe) {
        b = e;
        e = c;
        fe = fc;
        c = b - g * (b - a);
        fc = std::abs(r_radial(c, r));
      } else {
        a = c;
        c = e;
        fc = fe;
        e = a + g * (b - a);
        fe = std::abs(r_radial(e, r));
      }
    }
    return std::max({best_val, fc, fe, std::abs(r_radial(a, r)), std::abs(r_radial(b, r))});
  }

  double sup_envelope(std::span<const double> x) const { return sup_envelope_radial(std::sqrt(norm2(x))); }

  /// |t| beyond which R(t, .) is negligible (exactly zero for the tapered family).
  double time_cutoff() const { return taper_radius_ ? std::min(*taper_radius_, 40.0 * ell_t_) : 40.0 * ell_t_; }
  double space_cutoff() const { return taper_radius_ ? std::min(*taper_radius_, 40.0 * ell_x_) : 40.0 * ell_x_; }

  /// Spectral band used for tables and sampling: R-hat vanishes (or is
  /// numerically negligible) outside [0, xi0_band] x [0, k_band].
  double xi0_band() const { return table_ ? table_->xi0_max() : 14.0 / ell_t_; }
  double k_band() const { return table_ ? table_->k_max() : 14.0 / ell_x_; }
  const detail::SpectralTable* table() const noexcept { return table_.get(); }
  double table_scale() const noexcept { return table_scale_; }

  nlohmann::json to_json() const {
    nlohmann::json j{{"kind", to_string(kind_)}, {"amplitude", amplitude_}, {"ell_t", ell_t_}, {"ell_x", ell_x_}, {"d", d_}};
    j["taper_radius"] = taper_radius_ ? nlohmann::json(*taper_radius_) : nlohmann::json(nullptr);
    return j;
  }

  static CovarianceModel from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    const double a = j.at("amplitude").get<double>();
    const double lt = j.at("ell_t").get<double>();
    const double lx = j.at("ell_x").get<double>();
    const int d = j.at("d").get<int>();
    if (kind == "gaussian_separable") return gaussian(a, lt, lx, d);
    if (kind == "tapered_gaussian") {
      if (!j.contains("taper_radius") || j["taper_radius"].is_null())
        throw DomainError("CovarianceModel: tapered_gaussian requires taper_radius");
      return tapered(a, lt, lx, d, j["taper_radius"].get<double>());
    }
    throw DomainError("CovarianceModel: unknown kind '" + kind + "'");
  }

 private:
  CovarianceModel(CovarianceKind kind, double amplitude, double ell_t, double ell_x, int d, std::optional<double> radius)
      : kind_(kind), amplitude_(amplitude), ell_t_(ell_t), ell_x_(ell_x), d_(d), taper_radius_(radius) {
    if (!(amplitude > 0.0)) throw DomainError("CovarianceModel: amplitude must be > 0");
    if (!(ell_t > 0.0) || !(ell_x > 0.0)) throw DomainError("CovarianceModel: correlation lengths must be > 0");
    if (d < 1 || d > 4) throw DomainError("CovarianceModel: dimension must be in 1..4");
    if (radius) {
      if (!(*radius > 0.0)) throw DomainError("CovarianceModel: taper_radius must be > 0");
      table_ = std::make_shared<const detail::SpectralTable>(amplitude, ell_t, ell_x, d, *radius);
    }
  }

  CovarianceKind kind_;
  double amplitude_;
  double ell_t_;
  double ell_x_;
  int d_;
  std::optional<double> taper_radius_;
  std::shared_ptr<const detail::SpectralTable> table_;
  double table_scale_ = 1.0;
};

/// Power spectrum view with its natural decay scales.
struct SpectralDensity {
  const CovarianceModel* model;
  double xi0_scale() const { return 1.0 / model->ell_t(); }
  double xi_scale() const { return 1.0 / model->ell_x(); }
  double operator()(double xi0, std::span<const double> xi) const { return model->r_hat(xi0, xi); }
};

inline double r_eval(const CovarianceModel& m, double t, std::span<const double> x) { return m.r(t, x); }
inline double r_hat_eval(const CovarianceModel& m, double xi0, std::span<const double> xi) { return m.r_hat(xi0, xi); }
inline double r_time_integral(const CovarianceModel& m, std::span<const double> x) { return m.r_time_integral(x); }
inline double sup_envelope(const CovarianceModel& m, std::span<const double> x) { return m.sup_envelope(x); }

}  // namespace scenery
