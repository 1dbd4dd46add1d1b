#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "scenery/effective.hpp"

using namespace scenery;

namespace {

const CovarianceModel& unit_model() {
  static const CovarianceModel m = CovarianceModel::gaussian(1.0, 1.0, 1.0, 3);
  return m;
}

// scipy.integrate.quad of exp(-t^2/2) (1+t)^{-3/2} on [0, inf), abs err 5e-14
constexpr double kRhoEq2 = 0.6250846675811604;

}  // namespace

TEST(Rho, ClosedFormValues) {
  const auto g2 = rho(unit_model(), EffRegime::G2);
  EXPECT_NEAR(g2.rho, std::sqrt(std::numbers::pi / 2.0), 1e-8);
  EXPECT_DOUBLE_EQ(g2.sigma2, 2.0 * g2.rho);
  EXPECT_TRUE(g2.warnings.empty());
  EXPECT_NEAR(rho(unit_model(), EffRegime::LT2).rho, 2.0, 2e-8);
  EXPECT_NEAR(rho(unit_model(), EffRegime::EQ2).rho, kRhoEq2, 1e-8);
}

TEST(Rho, ScalesWithParameters) {
  // rho(G2) = A l_t sqrt(pi/2); rho(LT2) = 2 A l_x^2 in d = 3
  const auto m = CovarianceModel::gaussian(2.5, 0.7, 1.3, 3);
  EXPECT_NEAR(rho(m, EffRegime::G2).rho, 2.5 * 0.7 * std::sqrt(std::numbers::pi / 2.0), 1e-8);
  EXPECT_NEAR(rho(m, EffRegime::LT2).rho, 2.0 * 2.5 * 1.3 * 1.3, 1e-7);
}

TEST(Rho, TwoRoutesAgree) {
  for (auto reg : {EffRegime::EQ2, EffRegime::LT2}) {
    const auto direct = rho(unit_model(), reg);
    const auto spectral = sigma2_spectral(unit_model(), reg, QuadratureSpec{1e-9, 1e-13, 10'000'000});
    EXPECT_NEAR(spectral.value, direct.sigma2, 1e-6 * direct.sigma2) << to_string(reg);
  }
}

TEST(Rho, TaperedTwoRoutes) {
  const auto m = CovarianceModel::tapered(1.0, 1.0, 1.0, 3, 4.0);
  const auto direct = rho(m, EffRegime::EQ2, QuadratureSpec{1e-7, 1e-10, 10'000'000});
  const auto spectral = sigma2_spectral(m, EffRegime::EQ2, QuadratureSpec{1e-7, 1e-10, 10'000'000});
  EXPECT_GT(direct.rho, 0.0);
  EXPECT_NEAR(spectral.value, direct.sigma2, 2e-4 * direct.sigma2);
}

TEST(Rho, LowDimension) {
  const auto m2 = CovarianceModel::gaussian(1.0, 1.0, 1.0, 2);
  const auto eq = rho(m2, EffRegime::EQ2);
  EXPECT_FALSE(eq.warnings.empty());
  EXPECT_GT(eq.rho, 0.0);
  EXPECT_THROW(rho(m2, EffRegime::LT2), ConvergenceError);
  EXPECT_THROW(sigma2_spectral(m2, EffRegime::LT2), DomainError);
  EXPECT_THROW(sigma2_spectral(unit_model(), EffRegime::G2), DomainError);
}

TEST(Rho, Json) {
  const auto j = rho(unit_model(), EffRegime::G2).to_json();
  EXPECT_EQ(j.at("regime"), "G2");
  EXPECT_NEAR(j.at("sigma2").get<double>(), 2.0 * std::sqrt(std::numbers::pi / 2.0), 1e-8);
}

TEST(Corrector, LambdaScan) {
  // scipy dblquad of the radial sigma_lambda^2 integrand, eps^2 = lambda, alpha = 1
  constexpr std::array<double, 4> kSigmaOracle{1.4796749268654334, 2.585199287364548, 3.236218201740154,
                                               3.5810487590748865};
  double prev_norm = INFINITY, prev_sigma = 0.0, first_norm = 0.0;
  int idx = 0;
  for (double lam : {1e-1, 1e-2, 1e-3, 1e-4}) {
    const CorrectorSpec cs{lam, std::sqrt(lam), 1.0};
    const double nrm = corrector_norm(unit_model(), cs).value;
    const double sig = sigma2_lambda(unit_model(), cs).value;
    if (lam == 1e-1) first_norm = nrm;
    EXPECT_LT(nrm, prev_norm);
    EXPECT_GT(sig, prev_sigma);
    EXPECT_LT(sig, 4.0);
    EXPECT_NEAR(sig, kSigmaOracle[idx++], 1e-6 * sig);
    prev_norm = nrm;
    prev_sigma = sig;
  }
  EXPECT_LT(prev_norm, 0.05 * first_norm);
}

TEST(Corrector, ResolventResidualAndGradient) {
  const auto f = synth_harmonic(unit_model(), 64, RngStream{21, 0});
  const CorrectorSpec cs = CorrectorSpec::coupled(0.1, 1.0);
  StreamGenerator g(RngStream{21, 1});
  for (int trial = 0; trial < 20; ++trial) {
    const double t = 4.0 * g.normal();
    std::array<double, 3> x{3.0 * g.normal(), 3.0 * g.normal(), 3.0 * g.normal()};
    EXPECT_LT(std::abs(resolvent_residual(f, cs, t, x)), 1e-10);
    const auto c = corrector_eval(f, cs, t, x);
    for (int k = 0; k < 3; ++k) {
      const double h = 1e-5;
      auto xp = x, xm = x;
      xp[k] += h;
      xm[k] -= h;
      const double fd = (corrector_eval(f, cs, t, xp).phi - corrector_eval(f, cs, t, xm).phi) / (2.0 * h);
      EXPECT_LT(std::abs(fd - c.grad[k]), 1e-4 * std::max(1.0, std::abs(c.grad[k])));
    }
  }
}

TEST(Corrector, GridBackendUnsupported) {
  const auto grid = synth_grid(unit_model(), GridSpec{3, 32, 32, 0.25, 0.25}, RngStream{22, 0});
  const std::array<double, 3> x{};
  EXPECT_THROW(corrector_eval(FieldSampler(grid), CorrectorSpec{}, 0.0, x), UnsupportedBackend);
  EXPECT_THROW(corrector_eval(synth_harmonic(unit_model(), 4, RngStream{22, 1}), CorrectorSpec{0.0, 0.1, 1.0}, 0.0, x),
               DomainError);
}

TEST(Martingale, ConstantFieldIsAllDrift) {
  // Phi = c / lambda is constant, so M = 0 and X = R exactly
  const auto p = BrownianPath::sample(3, 100.0, 0.25, RngStream{23, 0});
  const auto r = martingale_decompose(HarmonicField::constant(0.8, 3), p, CorrectorSpec::coupled(0.1, 1.0), 1.0);
  EXPECT_NEAR(r.X, 8.0, 1e-12);
  EXPECT_EQ(r.M_term, 0.0);
  EXPECT_NEAR(r.residual, 0.0, 1e-12);
}

TEST(Martingale, ResidualShrinksAndQuadraticVariation) {
  const auto cs = CorrectorSpec::coupled(0.2, 1.0);
  const double t = 1.0, T = t / 0.04;
  std::vector<double> res[3];
  double qv = 0.0, qv2 = 0.0;
  const int n = 300;
  for (int i = 0; i < n; ++i) {
    const auto f = synth_harmonic(unit_model(), 32, RngStream{24, static_cast<std::uint64_t>(i)});
    const auto fine = BrownianPath::sample(3, T, 1.0 / 32.0, RngStream{25, static_cast<std::uint64_t>(i)});
    for (int l = 0; l < 3; ++l) res[l].push_back(martingale_decompose(f, fine.coarsened(4 >> l), cs, t).residual);
    const double q = martingale_decompose(f, fine, cs, t).quadratic_variation;
    qv += q;
    qv2 += q * q;
  }
  auto rms = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s / static_cast<double>(v.size()));
  };
  for (int l = 0; l < 2; ++l) {
    const double ratio = rms(res[l]) / rms(res[l + 1]);
    EXPECT_GE(ratio, 1.2);
    EXPECT_LE(ratio, 3.0);
  }
  const double mean = qv / n, se = std::sqrt((qv2 / n - mean * mean) / (n - 1));
  const double target = t * sigma2_lambda(unit_model(), cs).value;
  EXPECT_NEAR(mean, target, 4.0 * se);
}
