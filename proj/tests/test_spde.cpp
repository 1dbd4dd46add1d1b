#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "scenery/spde.hpp"

using namespace scenery;

namespace {

const CovarianceModel& unit_model() {
  static const CovarianceModel m = CovarianceModel::gaussian(1.0, 1.0, 1.0, 3);
  return m;
}

const double kR0 = std::sqrt(2.0 * std::numbers::pi);
const std::array<double, 3> kOrigin{0.0, 0.0, 0.0};

}  // namespace

TEST(Mollifier, WindowAndSmallScaleLimit) {
  const MollifierSpec sp{1e-3};
  EXPECT_EQ(mollified_noise_cov(unit_model(), sp, 1e-3, kOrigin), 0.0);
  EXPECT_EQ(mollified_noise_cov(unit_model(), sp, -2e-3, kOrigin), 0.0);
  const std::array<double, 3> dx{0.3, -0.1, 0.2};
  EXPECT_EQ(mollified_noise_cov(unit_model(), sp, 4e-4, dx), mollified_noise_cov(unit_model(), sp, -4e-4, dx));
  EXPECT_NEAR(mollified_noise_cov(unit_model(), sp, 0.0, kOrigin) * 1e-3, kR0, 0.02 * kR0);
  EXPECT_THROW(mollified_noise_cov(unit_model(), MollifierSpec{0.0}, 0.0, kOrigin), DomainError);
}

TEST(Mollifier, QuadratureRouteMatchesClosedForm) {
  for (double e : {1e-3, 0.1}) {
    for (double r : {0.0, 0.7, 2.0}) {
      const double closed = smoothed_time_integral(unit_model(), e, r);
      EXPECT_NEAR(detail::smoothed_time_integral_quadrature(unit_model(), e, r), closed, 1e-7 * kR0) << e << " " << r;
    }
  }
  // tapered: vanishing smoothing recovers the time-integrated covariance
  const auto tp = CovarianceModel::tapered(1.0, 1.0, 1.0, 3, 4.0);
  EXPECT_NEAR(smoothed_time_integral(tp, 1e-6, 0.5), tp.r_time_integral_radial(0.5), 1e-4);
}

TEST(CauchyVariance, FrozenZeroPath) {
  const double e = 1e-3, t = 1.0;
  const auto p = zero_path(3, t, 0.01);
  const double v = cauchy_variance(unit_model(), MollifierSpec{e}, p, t);
  // int int of the triangular window over [0, t]^2 is t - e/3
  const double exact = kR0 * std::pow(1.0 / (1.0 + 2.0 * e), 1.5) * (t - e / 3.0);
  EXPECT_NEAR(v, exact, 1e-9);
  EXPECT_NEAR(v, kR0 * t, 0.02 * kR0 * t);
  EXPECT_EQ(cauchy_variance(unit_model(), MollifierSpec{e}, p, 0.0), 0.0);
  EXPECT_THROW(cauchy_variance(unit_model(), MollifierSpec{e}, p, 2.0), DomainError);
}

TEST(CauchyVariance, BrownianEnsemble) {
  const double e = 1e-3, t = 1.0;
  // E over B of the double integral: Gaussian average of the spatial factor at lag variance |tau|
  const double s2 = 1.0 + 2.0 * e;
  const auto q = integrate_interval(
      [&](double tau) { return 2.0 * (e - tau) / (e * e) * (t - tau) * std::pow(s2 / (s2 + tau), 1.5); }, 0.0, e,
      {1e-13, 1e-15, 100000});
  const double expected = kR0 * std::pow(1.0 / s2, 1.5) * q.value;
  std::vector<double> v;
  for (std::size_t i = 0; i < 60; ++i)
    v.push_back(cauchy_variance(unit_model(), MollifierSpec{e}, BrownianPath::sample(3, t, 1e-4, RngStream{41, i}), t));
  double mean = 0.0, m2 = 0.0;
  for (double x : v) mean += x / v.size();
  for (double x : v) m2 += (x - mean) * (x - mean);
  const double se = std::sqrt(m2 / (v.size() - 1.0) / v.size());
  EXPECT_NEAR(mean, kR0 * t, 0.02 * kR0 * t);
  // linear interpolation between path nodes lowers the increment variance by at most
  // dt / 2, a relative bias below (3/2)(dt/2)/(l^2 + 2e); R0 t dt bounds it
  const double interp_bias = kR0 * t * 1e-4;
  EXPECT_NEAR(mean, expected, 3.0 * se + interp_bias);
}

TEST(LimitMoment, ClosedFormCases) {
  const auto one = InitialData::constant(1.0);
  const MomentSpec m10{1, 0, 200, 1.0, {0.0, 0.0, 0.0}, RngStream{42, 0}, 0.01};
  const auto a = limit_moment(unit_model(), one, m10);
  EXPECT_NEAR(a.value.real(), std::exp(-0.5 * kR0), 1e-12);
  EXPECT_NEAR(std::exp(-0.5 * kR0), 0.2856, 5e-5);

  auto m11 = m10;
  m11.N2 = 1;
  const auto b = limit_moment(unit_model(), one, m11);
  EXPECT_GE(b.value.real(), std::exp(-kR0));
  EXPECT_LE(b.value.real(), 1.0);

  // Ito damping: first moment is e^{-Rt(0) t / 2} times the heat flow
  const auto c = InitialData::cosine({1.0, 0.0, 0.0});
  auto mc = m10;
  mc.n_path_tuples = 4000;
  const auto first = limit_moment(unit_model(), c, mc);
  EXPECT_NEAR(first.value.real(), std::exp(-0.5 * kR0) * std::exp(-0.5), 3.0 * first.stderr_re);

  // vanishing amplitude gives products of heat flows
  auto m20 = mc;
  m20.N1 = 2;
  const auto tiny = limit_moment(unit_model().with_amplitude(1e-12), c, m20);
  EXPECT_NEAR(tiny.value.real(), std::exp(-1.0), 3.0 * tiny.stderr_re);
  EXPECT_LE(std::abs(tiny.value), 1.0);
  EXPECT_THROW(limit_moment(unit_model(), c, MomentSpec{0, 0, 10, 1.0, {0.0, 0.0, 0.0}, {}, 0.01}), DomainError);
}

TEST(LimitMoment, ConjugateSymmetry) {
  const auto c = InitialData::cosine({1.0, 0.0, 0.0});
  const MomentSpec a{2, 1, 3000, 1.0, {0.0, 0.0, 0.0}, RngStream{43, 0}, 0.02};
  MomentSpec b = a;
  b.N1 = 1;
  b.N2 = 2;
  b.stream = RngStream{43, 1};
  const auto ma = limit_moment(unit_model(), c, a, 2);
  const auto mb = limit_moment(unit_model(), c, b, 2);
  EXPECT_NEAR(ma.value.real(), mb.value.real(), 3.0 * std::hypot(ma.stderr_re, mb.stderr_re));
}

TEST(AlphaInf, ZeroFieldAndModulus) {
  const auto c = InitialData::cosine({1.0, 0.0, 0.0});
  const auto z = u_eps_alpha_inf(FieldSampler(HarmonicField::zero(3)), c, 1.0, kOrigin, 0.1, 3000, RngStream{44, 0}, 0.05);
  EXPECT_NEAR(z.mean.real(), std::exp(-0.5), 3.0 * z.stderr_re);
  const FieldSampler v(synth_harmonic(unit_model(), 64, RngStream{44, 1}));
  const auto est = u_eps_alpha_inf(v, c, 1.0, kOrigin, 0.1, 300, RngStream{44, 2}, 0.0, &unit_model());
  EXPECT_LE(std::abs(est.mean), 1.0 + 3.0 * std::hypot(est.stderr_re, est.stderr_im));
  EXPECT_NEAR(est.dt, 0.1 / 8.0, 1e-15);
}

TEST(MomentCompare, FirstColumnAndDeterminism) {
  const auto c = InitialData::cosine({1.0, 0.0, 0.0});
  const std::vector<MomentSpec> specs{{1, 0, 200, 1.0, {0.0, 0.0, 0.0}, RngStream{45, 0}, 0.02},
                                      {1, 1, 200, 1.0, {0.0, 0.0, 0.0}, RngStream{45, 1}, 0.02}};
  const std::array<double, 2> eps{0.4, 0.2};
  const RngStream master{46, 0};
  const auto factory = harmonic_factory(unit_model(), 32);
  const auto rows = moment_compare(factory, unit_model(), c, specs, eps, 3, 20, master, 0.0, 1);
  ASSERT_EQ(rows.size(), 4u);

  // (1,0) column is the field average of plain Feynman-Kac means on the same streams
  std::complex<double> acc{};
  for (std::size_t q = 0; q < 3; ++q) {
    const auto v = factory(3 + q, field_stream(master, 1, q));
    acc += u_eps_alpha_inf(v, c, 1.0, kOrigin, 0.2, 20, path_stream(master, 1, q), 0.0, &unit_model()).mean;
  }
  EXPECT_NEAR(rows[2].re_moment, acc.real() / 3.0, 1e-14);
  EXPECT_NEAR(rows[2].im_moment, acc.imag() / 3.0, 1e-14);

  const auto again = moment_compare(factory, unit_model(), c, specs, eps, 3, 20, master, 0.0, 4);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].re_moment, again[i].re_moment);
    EXPECT_EQ(rows[i].re_limit, again[i].re_limit);
  }
}
