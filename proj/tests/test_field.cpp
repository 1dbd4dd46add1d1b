#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <vector>

#include "scenery/field.hpp"

using namespace scenery;

namespace {

constexpr double kPi = std::numbers::pi;

struct Moments {
  double mean = 0.0;
  double stderr_ = 0.0;
};

Moments moments(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double s = 0.0, s2 = 0.0;
  for (double x : v) {
    s += x;
    s2 += x * x;
  }
  const double m = s / n;
  return {m, std::sqrt((s2 / n - m * m) / (n - 1.0))};
}

const CovarianceModel& unit_model() {
  static const CovarianceModel m = CovarianceModel::gaussian(1.0, 1.0, 1.0, 3);
  return m;
}

}  // namespace

TEST(Harmonic, SingleModeAndConstant) {
  const auto f = synth_harmonic(unit_model(), 1, RngStream{1, 0});
  ASSERT_EQ(f.modes(), 1u);
  const std::array<double, 3> o{0, 0, 0};
  EXPECT_NEAR(f(0.0, o), std::sqrt(2.0) * std::cos(f.theta(0)), 1e-15);
  EXPECT_NEAR(f.amp(0), std::sqrt(2.0), 1e-15);

  const auto c = HarmonicField::constant(0.7, 3);
  const std::array<double, 3> x{1.0, -2.0, 5.5};
  EXPECT_EQ(c(3.3, x), 0.7);
  EXPECT_EQ(c(0.0, o), 0.7);
  EXPECT_EQ(HarmonicField::zero(2)(1.0, std::array<double, 2>{1.0, 2.0}), 0.0);
}

TEST(Harmonic, UniformBound) {
  const auto f = synth_harmonic(unit_model(), 64, RngStream{2, 0});
  EXPECT_NEAR(f.bound(), std::sqrt(2.0 * 64.0), 1e-12);
  StreamGenerator g(RngStream{2, 1});
  for (int i = 0; i < 1000; ++i) {
    const std::array<double, 3> x{10 * g.normal(), 10 * g.normal(), 10 * g.normal()};
    EXPECT_LE(std::abs(f(10 * g.normal(), x)), f.bound());
  }
}

TEST(Harmonic, EnsembleMeanAndCovariance) {
  const std::size_t n = 2000;
  const RngStream base{11, 0};
  std::vector<double> v0(n), prod(n);
  const std::array<double, 3> o{0, 0, 0};
  for (std::size_t r = 0; r < n; ++r) {
    const auto f = synth_harmonic(unit_model(), 64, base.child(r));
    v0[r] = f(0.0, o);
    prod[r] = v0[r] * f(1.0, o);
  }
  const auto m = moments(v0);
  EXPECT_LE(std::abs(m.mean), 3.0 * m.stderr_);
  const auto c = moments(prod);
  EXPECT_LE(std::abs(c.mean - std::exp(-0.5)), 3.0 * c.stderr_);
}

TEST(Harmonic, Stationarity) {
  // second-order moments at (p, q) and at (p + s, q + s) agree
  const std::size_t n = 2000;
  const RngStream base{12, 0};
  std::vector<double> a(n), b(n);
  const std::array<double, 3> p{0.1, 0.2, -0.3}, q{0.6, 0.2, 0.1};
  const std::array<double, 3> ps{3.1, -1.8, 4.7}, qs{3.6, -1.8, 5.1};
  for (std::size_t r = 0; r < n; ++r) {
    const auto f = synth_harmonic(unit_model(), 16, base.child(r));
    a[r] = f(0.2, p) * f(0.7, q);
    b[r] = f(5.2, ps) * f(5.7, qs);
  }
  std::vector<double> diff(n);
  for (std::size_t r = 0; r < n; ++r) diff[r] = a[r] - b[r];
  const auto m = moments(diff);
  EXPECT_LE(std::abs(m.mean), 3.0 * m.stderr_);
}

TEST(Harmonic, TaperedSpectrumSampling) {
  const auto tp = CovarianceModel::tapered(1.0, 1.0, 1.0, 3, 3.0);
  const auto rows = empirical_cov(harmonic_factory(tp, 32),
                                  {{0.0, {0, 0, 0}}, {0.5, {0.5, 0, 0}}, {0.0, {3.2, 0, 0}}, {2.0, {0, 2.5, 0}}}, 2000,
                                  RngStream{13, 0});
  for (const auto& row : rows) {
    const double want = tp.r(row.lag.t, row.lag.x);
    EXPECT_LE(std::abs(row.estimate - want), 3.0 * row.stderr_ + 1e-3) << row.lag.t << " " << row.lag.x[0];
  }
}

TEST(Grid, NodeExactnessAndLinearInterpolation) {
  GridSpec spec{1, 8, 8, 0.5, 0.25};
  std::vector<double> values(spec.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = std::sin(0.37 * static_cast<double>(i)) + 0.01 * i;
  const GridField f(spec, values);
  const std::array<std::size_t, 1> ix{3};
  const std::array<double, 1> x3{3 * 0.25};
  EXPECT_EQ(f(2 * 0.5, x3), f.node(2, ix));
  // midpoint along x of a fixed time slice
  const std::array<double, 1> mid{3.5 * 0.25};
  const std::array<std::size_t, 1> ix4{4};
  EXPECT_NEAR(f(2 * 0.5, mid), 0.5 * (f.node(2, ix) + f.node(2, ix4)), 1e-15);
  // periodic wrap
  const std::array<double, 1> wrapped{3 * 0.25 + 8 * 0.25};
  EXPECT_NEAR(f(2 * 0.5 - 8 * 0.5, wrapped), f.node(2, ix), 1e-14);
  const std::array<double, 1> last_mid{7.5 * 0.25};
  const std::array<std::size_t, 1> i7{7}, i0{0};
  EXPECT_NEAR(f(0.0, last_mid), 0.5 * (f.node(0, i7) + f.node(0, i0)), 1e-15);
}

TEST(Grid, LatticeCovarianceIsExact) {
  for (const auto& m : {unit_model(), CovarianceModel::tapered(1.0, 1.0, 1.0, 3, 4.0)}) {
    const GridSynthesizer synth(m, GridSpec::for_model(m));
    const auto c = synth.lattice_covariance();
    const auto target = synth.target_covariance();
    double worst = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) worst = std::max(worst, std::abs(c[i] - target[i]));
    EXPECT_LT(worst, 1e-10);
    EXPECT_NEAR(target[0], 1.0, 1e-12);
  }
}

TEST(Grid, DefaultLatticeFallsBackUnderBudget) {
  const auto g3 = GridSpec::for_model(unit_model());
  EXPECT_EQ(g3.nt, 32u);
  EXPECT_DOUBLE_EQ(g3.dx, 0.25);
  const auto g1 = GridSpec::for_model(CovarianceModel::gaussian(1.0, 1.0, 2.0, 1));
  EXPECT_EQ(g1.nt, 128u);
  EXPECT_DOUBLE_EQ(g1.dx, 0.25);
  EXPECT_DOUBLE_EQ(g1.period_x(), 32.0);
}

TEST(Grid, PreconditionsAndSpectrumCheck) {
  EXPECT_THROW(GridSynthesizer(unit_model(), GridSpec{3, 16, 16, 0.25, 0.25}), DomainError);  // period 4 ell
  EXPECT_THROW(GridSynthesizer(unit_model(), GridSpec{3, 16, 16, 0.5, 0.5}), DomainError);    // spacing ell/2
  std::vector<double> ok{1.0, 0.5, -1e-12, 0.2};
  EXPECT_DOUBLE_EQ(GridSynthesizer::clip_spectrum(ok), -1e-12);
  EXPECT_EQ(ok[2], 0.0);
  std::vector<double> bad{1.0, 0.5, -1e-6, 0.2};
  EXPECT_THROW(GridSynthesizer::clip_spectrum(bad), SynthesisError);
}

TEST(Grid, DeterministicSynthesis) {
  const GridSynthesizer synth(unit_model(), GridSpec::for_model(unit_model()));
  const auto a = synth.synthesize(RngStream{21, 4});
  const auto b = synth.synthesize(RngStream{21, 4});
  ASSERT_EQ(a.values().size(), b.values().size());
  EXPECT_EQ(std::memcmp(a.values().data(), b.values().data(), a.values().size_bytes()), 0);
  const auto c = synth.synthesize(RngStream{21, 5});
  EXPECT_NE(a.values()[0], c.values()[0]);
}

TEST(Grid, SiteVarianceAndWick) {
  // 500 realizations from 250 complex syntheses
  const auto factory = grid_factory(unit_model(), GridSpec::for_model(unit_model()), RngStream{31, 0});
  std::vector<double> sq(500);
  const std::array<double, 3> site{1.25, 0.5, 3.0};
  for (std::size_t r = 0; r < sq.size(); ++r) {
    const double v = factory(r, {})(2.0, site);
    sq[r] = v * v;
  }
  const auto m = moments(sq);
  EXPECT_LE(std::abs(m.mean - 1.0), 3.0 * m.stderr_);

  const std::array<SpaceTimePoint, 4> sites{SpaceTimePoint{0.0, {0, 0, 0}}, SpaceTimePoint{0.5, {0.25, 0, 0}},
                                            SpaceTimePoint{0.25, {0, 0.5, 0}}, SpaceTimePoint{0.75, {0.25, 0.25, 0.5}}};
  const auto w = wick_four_point(factory, unit_model(), sites, 500, RngStream{31, 1});
  EXPECT_LE(std::abs(w.estimate - w.wick), 3.0 * w.stderr_);
}

TEST(Grid, PairHalvesAreUncorrelated) {
  const auto factory = grid_factory(unit_model(), GridSpec::for_model(unit_model()), RngStream{32, 0});
  std::vector<double> p(400);
  const std::array<double, 3> o{0, 0, 0};
  for (std::size_t r = 0; r < p.size(); ++r) p[r] = factory(2 * r, {})(0.0, o) * factory(2 * r + 1, {})(0.0, o);
  const auto m = moments(p);
  EXPECT_LE(std::abs(m.mean), 3.0 * m.stderr_);
}

TEST(Grid, PersistenceRoundTrip) {
  GridSpec spec{2, 32, 32, 0.25, 0.25};
  const auto model = CovarianceModel::gaussian(1.0, 1.0, 1.0, 2);
  const auto f = synth_grid(model, spec, RngStream{41, 2});
  const auto path = (std::filesystem::temp_directory_path() / "scenery_grid_roundtrip.bin").string();
  save_grid(path, f, model, RngStream{41, 2});
  const auto back = load_grid(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.field.spec(), spec);
  EXPECT_EQ(std::memcmp(back.field.values().data(), f.values().data(), f.values().size_bytes()), 0);
  EXPECT_EQ(back.header.at("model"), model.to_json());
  EXPECT_EQ(back.header.at("seed").at("master_seed").get<std::uint64_t>(), 41u);
}

TEST(EmpiricalCov, TableAndScaling) {
  const auto factory = harmonic_factory(unit_model(), 64);
  EXPECT_THROW(empirical_cov(factory, {{0.0, {0, 0, 0}}}, 99, RngStream{}), DomainError);
  const auto small = empirical_cov(factory, {{0.0, {0, 0, 0}}, {0.0, {5.0, 0, 0}}}, 500, RngStream{51, 0});
  const auto big = empirical_cov(factory, {{0.0, {0, 0, 0}}, {0.0, {5.0, 0, 0}}}, 2000, RngStream{51, 1});
  EXPECT_LE(std::abs(big[0].estimate - 1.0), 3.0 * big[0].stderr_);
  EXPECT_LE(std::abs(big[1].estimate), 3.0 * big[1].stderr_ + 1e-5);
  const double ratio = small[0].stderr_ / big[0].stderr_;
  EXPECT_GT(ratio, 1.6);
  EXPECT_LT(ratio, 2.5);
}

TEST(EmpiricalCov, WorkerInvariance) {
  const auto factory = harmonic_factory(unit_model(), 8);
  const auto a = empirical_cov(factory, {{0.5, {0.5, 0, 0}}}, 300, RngStream{52, 0}, 1);
  const auto b = empirical_cov(factory, {{0.5, {0.5, 0, 0}}}, 300, RngStream{52, 0}, 3);
  EXPECT_EQ(a[0].estimate, b[0].estimate);
  EXPECT_EQ(a[0].stderr_, b[0].stderr_);
}

TEST(FieldSampler, Dispatch) {
  const FieldSampler h(HarmonicField::constant(2.0, 3));
  EXPECT_EQ(h.d(), 3);
  EXPECT_EQ(h.backend_name(), "harmonic");
  EXPECT_NE(h.harmonic(), nullptr);
  const std::array<double, 3> x{1, 2, 3};
  EXPECT_EQ(field_eval(h, 1.0, x), 2.0);
  GridSpec spec{3, 4, 4, 0.25, 0.25};
  const FieldSampler g(GridField(spec, std::vector<double>(spec.size(), 1.5)));
  EXPECT_EQ(g.backend_name(), "grid");
  EXPECT_EQ(g(0.3, x), 1.5);
  (void)kPi;
}
