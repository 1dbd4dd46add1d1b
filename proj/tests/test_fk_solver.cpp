#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "scenery/fk_solver.hpp"

using namespace scenery;

namespace {

const CovarianceModel& unit_model() {
  static const CovarianceModel m = CovarianceModel::gaussian(1.0, 1.0, 1.0, 3);
  return m;
}

const std::array<double, 3> kOrigin{0.0, 0.0, 0.0};

double combined(double a, double b) { return std::sqrt(a * a + b * b); }

}  // namespace

TEST(Heat, ClosedForms) {
  const auto c = InitialData::cosine({1.0, 0.0, 0.0});
  EXPECT_NEAR(heat_semigroup(c, 1.0, kOrigin), 0.6065306597126334, 1e-12);
  EXPECT_EQ(heat_semigroup(InitialData::constant(2.5), 7.0, kOrigin), 2.5);
  EXPECT_THROW(heat_semigroup(c, -1.0, kOrigin), DomainError);

  // bump against direct quadrature of the 1-D convolution
  const auto b = InitialData::gaussian_bump({0.3}, 0.7);
  const std::array<double, 1> x{1.1};
  const double t = 0.9;
  const auto q = integrate_real_line([&](double y) {
    const std::array<double, 1> p{x[0] + y};
    return b(p) * std::exp(-0.5 * y * y / t) / std::sqrt(2.0 * std::numbers::pi * t);
  });
  EXPECT_NEAR(heat_semigroup(b, t, x), q.value, 1e-9);
}

TEST(Heat, JsonRoundTrip) {
  for (const auto& f : {InitialData::cosine({1.0, 2.0}), InitialData::gaussian_bump({0.0, 1.0}, 0.5),
                        InitialData::constant(-3.0)}) {
    EXPECT_EQ(InitialData::from_json(f.to_json()).to_json(), f.to_json());
  }
  EXPECT_THROW(InitialData::from_json({{"kind", "sawtooth"}}), DomainError);
  EXPECT_THROW(InitialData::gaussian_bump({0.0}, 0.0), DomainError);
}

TEST(SolveU0, Values) {
  const auto c = InitialData::cosine({1.0, 0.0, 0.0});
  EXPECT_NEAR(solve_u0(unit_model(), c, 1.0, kOrigin, EffRegime::G2),
              std::exp(-std::sqrt(std::numbers::pi / 2.0)) * std::exp(-0.5), 1e-9);
  const std::array<double, 3> x{0.4, 0.0, 0.0};
  EXPECT_EQ(solve_u0(unit_model(), c, 0.0, x, EffRegime::LT2), std::cos(0.4));
  EXPECT_NEAR(solve_u0(unit_model().with_amplitude(1e-12), c, 1.0, kOrigin, EffRegime::EQ2), std::exp(-0.5), 1e-11);
}

TEST(SolveUEps, ZeroAndConstantPotential) {
  const auto f = InitialData::cosine({1.0, 0.0, 0.0});
  SolveSpec s{0.25, 3.0, 1.0, {0.0, 0.0, 0.0}, 4000, 0.01, RngStream{31, 0}};
  const auto zero = solve_u_eps(FieldSampler(HarmonicField::zero(3)), f, s);
  EXPECT_NEAR(zero.mean.real(), std::exp(-0.5), 3.0 * zero.stderr_re);
  EXPECT_EQ(zero.mean.imag(), 0.0);

  const double c = 0.3;
  const auto cst = solve_u_eps(FieldSampler(HarmonicField::constant(c, 3)), f, s);
  const double phase = c * 1.0 / std::pow(0.25, s.delta());
  EXPECT_NEAR(std::abs(cst.mean), std::abs(zero.mean), 1e-12);
  EXPECT_NEAR(std::remainder(std::arg(cst.mean) - phase, 2.0 * std::numbers::pi), 0.0, 1e-9);

  s.t = 0.0;
  EXPECT_EQ(solve_u_eps(FieldSampler(HarmonicField::zero(3)), f, s).mean, std::complex<double>(1.0, 0.0));
}

TEST(SolveUEps, ModulusBoundAndWarnings) {
  const auto f = InitialData::cosine({1.0, 0.0, 0.0});
  const FieldSampler v(synth_harmonic(unit_model(), 32, RngStream{32, 0}));
  SolveSpec s{0.25, 3.0, 1.0, {0.0, 0.0, 0.0}, 400, 0.0, RngStream{32, 1}};
  const auto est = solve_u_eps(v, f, s, &unit_model());
  EXPECT_LE(std::abs(est.mean), 1.0 + 3.0 * combined(est.stderr_re, est.stderr_im));
  EXPECT_TRUE(est.warnings.empty());
  EXPECT_NEAR(est.dt, std::pow(0.25, 3) / 8.0, 1e-15);
  EXPECT_TRUE(est.mean_2dt.has_value());

  s.dt = 0.5;
  EXPECT_FALSE(solve_u_eps(v, f, s, &unit_model()).warnings.empty());
  s.dt = 0.0;
  EXPECT_THROW(solve_u_eps(v, f, s), DomainError);
  s.x = {0.0, 0.0};
  EXPECT_THROW(solve_u_eps(v, f, s, &unit_model()), DomainError);
}

TEST(SolveUEps, WorkerInvariance) {
  const auto f = InitialData::gaussian_bump({0.0, 0.0, 0.0}, 1.0);
  const FieldSampler v(synth_harmonic(unit_model(), 16, RngStream{33, 0}));
  SolveSpec s{0.5, 1.0, 1.0, {0.1, 0.2, 0.0}, 200, 0.0, RngStream{33, 1}};
  const auto a = solve_u_eps(v, f, s, &unit_model(), 1);
  const auto b = solve_u_eps(v, f, s, &unit_model(), 4);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.stderr_re, b.stderr_re);
}

TEST(SolveUEps, AlphaTwoMatchesMicroscopicRoute) {
  // at alpha = 2, u_eps(t, 0) = E f(eps B'_{t/eps^2}) exp(i eps int_0^{t/eps^2} V(r, B'_r) dr)
  const double eps = 0.5, t = 1.0;
  const auto f = InitialData::cosine({1.0, 0.0, 0.0});
  const FieldSampler v(synth_harmonic(unit_model(), 32, RngStream{34, 0}));
  SolveSpec s{eps, 2.0, t, {0.0, 0.0, 0.0}, 6000, 0.0, RngStream{34, 1}};
  const auto macro = solve_u_eps(v, f, s, &unit_model());

  const SceneryRegime r{RegimeTag::LE2, 2.0, eps};
  const double ds = default_micro_dt(unit_model(), r);
  std::vector<std::complex<double>> vals;
  for (std::size_t i = 0; i < 6000; ++i) {
    const auto p = BrownianPath::sample(3, t / (eps * eps), ds, RngStream{34, 2}.child(i));
    const std::array<double, 3> end{eps * p.endpoint()[0], eps * p.endpoint()[1], eps * p.endpoint()[2]};
    vals.push_back(f(end) * std::polar(1.0, scenery_integral(v, p, r, t)));
  }
  const auto micro = detail::complex_stats(vals);
  EXPECT_NEAR(macro.mean.real(), micro.mean.real(), 3.0 * combined(macro.stderr_re, micro.se_re));
  EXPECT_NEAR(macro.mean.imag(), micro.mean.imag(), 3.0 * combined(macro.stderr_im, micro.se_im));
}

TEST(ConvergenceTable, ZeroFieldPlumbingAndDeterminism) {
  const auto f = InitialData::cosine({1.0, 0.0, 0.0});
  const SamplerFactory zero = [](std::size_t, const RngStream&) { return FieldSampler(HarmonicField::zero(3)); };
  const std::array<double, 2> eps{0.5, 0.35};
  SolveSpec s{0.5, 3.0, 1.0, {0.0, 0.0, 0.0}, 500, 0.0, RngStream{35, 0}};
  const auto rows = convergence_table(zero, unit_model(), f, eps, s, 4);
  ASSERT_EQ(rows.size(), 2u);
  const double heat = std::exp(-0.5);
  const double u0 = std::exp(-std::sqrt(std::numbers::pi / 2.0)) * heat;
  for (const auto& r : rows) {
    EXPECT_NEAR(r.u0_ref, u0, 1e-9);
    EXPECT_NEAR(r.abs_err, heat - u0, 3.0 * r.re_stderr + 1e-12);
    EXPECT_EQ(r.n_fields, 4u);
    EXPECT_EQ(r.master_seed, 35u);
  }
  const SamplerFactory harm = harmonic_factory(unit_model(), 16);
  const auto a = convergence_table(harm, unit_model(), f, eps, s, 3, 1);
  const auto b = convergence_table(harm, unit_model(), f, eps, s, 3, 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].re_mean, b[i].re_mean);
    EXPECT_EQ(a[i].im_stderr, b[i].im_stderr);
    EXPECT_EQ(a[i].dt_delta, b[i].dt_delta);
  }
  const std::array<double, 2> bad{0.35, 0.5};
  EXPECT_THROW(convergence_table(zero, unit_model(), f, bad, s, 2), DomainError);
}
