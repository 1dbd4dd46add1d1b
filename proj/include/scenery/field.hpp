#pragma once

// Concrete realizations of a stationary mean-zero field V(t, x):
//   HarmonicField  V = sum_j amp_j cos(omega_j t + k_j.x + theta_j), bounded
//   GridField      Gaussian lattice field from circulant embedding, multilinear
//                  interpolation between nodes, periodic in every coordinate.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <fftw3.h>
#include <nlohmann/json.hpp>

#include "scenery/covariance.hpp"
#include "scenery/errors.hpp"
#include "scenery/numerics.hpp"
#include "scenery/rng.hpp"

namespace scenery {

class HarmonicField {
 public:
  HarmonicField() = default;
  explicit HarmonicField(int d) : d_(d) {
    if (d < 1 || d > 4) throw DomainError("HarmonicField: dimension must be in 1..4");
  }

  void add_mode(double omega, std::span<const double> k, double amp, double theta) {
    if (static_cast<int>(k.size()) != d_) throw DomainError("HarmonicField: wave vector dimension mismatch");
    omega_.push_back(omega);
    k_.insert(k_.end(), k.begin(), k.end());
    amp_.push_back(amp);
    theta_.push_back(theta);
  }

  /// V(t, x) = c everywhere.
  static HarmonicField constant(double c, int d) {
    HarmonicField f(d);
    const std::vector<double> zero(d, 0.0);
    f.add_mode(0.0, zero, c, 0.0);
    return f;
  }

  static HarmonicField zero(int d) { return constant(0.0, d); }

  double operator()(double t, std::span<const double> x) const {
    double s = 0.0;
    const std::size_t n = amp_.size();
    for (std::size_t j = 0; j < n; ++j) {
      double ph = omega_[j] * t + theta_[j];
      const double* kj = &k_[j * d_];
      for (int i = 0; i < d_; ++i) ph += kj[i] * x[i];
      s += amp_[j] * std::cos(ph);
    }
    return s;
  }

  int d() const noexcept { return d_; }
  std::size_t modes() const noexcept { return amp_.size(); }
  double omega(std::size_t j) const { return omega_[j]; }
  std::span<const double> k(std::size_t j) const { return {&k_[j * d_], static_cast<std::size_t>(d_)}; }
  double amp(std::size_t j) const { return amp_[j]; }
  double theta(std::size_t j) const { return theta_[j]; }

  /// Uniform bound sum_j |amp_j| >= |V| everywhere.
  double bound() const {
    double s = 0.0;
    for (double a : amp_) s += std::abs(a);
    return s;
  }

 private:
  int d_ = 1;
  std::vector<double> omega_, k_, amp_, theta_;
};

namespace detail {

// Cell-wise CDF over the tabulated (xi0 >= 0, |xi|) spectrum, weighted by the
// radial Jacobian |xi|^{d-1}.
class TableSampler {
 public:
  explicit TableSampler(const CovarianceModel& m) : table_(m.table()), d_(m.d()) {
    const std::size_t n = SpectralTable::kSize - 1;
    cdf_.resize(n * n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double k = (static_cast<double>(j) + 0.5) * table_->dk();
        const double v = 0.25 * (table_->at(i, j) + table_->at(i + 1, j) + table_->at(i, j + 1) + table_->at(i + 1, j + 1));
        acc += std::max(v, 0.0) * std::pow(k, d_ - 1);
        cdf_[i * n + j] = acc;
      }
    }
    for (double& c : cdf_) c /= acc;
  }

  // Returns (xi0 >= 0, |xi|).
  std::pair<double, double> draw(StreamGenerator& g) const {
    const double u = g.uniform();
    const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
    const auto cell = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cdf_.begin(), cdf_.size() - 1));
    const std::size_t n = SpectralTable::kSize - 1;
    const double xi0 = (static_cast<double>(cell / n) + g.uniform()) * table_->dxi0();
    const double k = (static_cast<double>(cell % n) + g.uniform()) * table_->dk();
    return {xi0, k};
  }

 private:
  const SpectralTable* table_;
  int d_;
  std::vector<double> cdf_;
};

}  // namespace detail

/// Harmonic superposition with J modes: frequencies i.i.d. from
/// R-hat / ((2 pi)^{d+1} A), amplitudes sqrt(2A/J), phases uniform.
/// Gaussian spectra are sampled exactly by per-coordinate inverse transform;
/// tapered spectra through the cell CDF of the cached table.
inline HarmonicField synth_harmonic(const CovarianceModel& model, std::size_t J, const RngStream& stream,
                                    const detail::TableSampler* sampler = nullptr) {
  if (J < 1) throw DomainError("synth_harmonic: J must be >= 1");
  const int d = model.d();
  HarmonicField f(d);
  StreamGenerator g(stream);
  const double amp = std::sqrt(2.0 * model.amplitude() / static_cast<double>(J));
  std::vector<double> k(d);
  const boost::math::normal_distribution<double> std_normal;
  std::unique_ptr<detail::TableSampler> owned;
  const detail::TableSampler* table = sampler;
  if (!model.separable() && !table) {
    owned = std::make_unique<detail::TableSampler>(model);
    table = owned.get();
  }
  for (std::size_t j = 0; j < J; ++j) {
    double omega = 0.0;
    if (!table) {
      omega = boost::math::quantile(std_normal, g.uniform()) / model.ell_t();
      for (int i = 0; i < d; ++i) k[i] = boost::math::quantile(std_normal, g.uniform()) / model.ell_x();
    } else {
      const auto [xi0, r] = table->draw(g);
      omega = g.uniform() < 0.5 ? -xi0 : xi0;
      double n2 = 0.0;
      for (int i = 0; i < d; ++i) {
        k[i] = g.normal();
        n2 += k[i] * k[i];
      }
      const double scale = n2 > 0.0 ? r / std::sqrt(n2) : 0.0;
      for (double& v : k) v *= scale;
    }
    const double theta = 2.0 * std::numbers::pi * g.uniform();
    f.add_mode(omega, k, amp, theta);
  }
  return f;
}

/// Periodic space-time lattice: nt x nx^d nodes with spacings (dt, dx).
struct GridSpec {
  int d = 3;
  std::size_t nt = 32;
  std::size_t nx = 32;
  double dt = 0.25;
  double dx = 0.25;

  double period_t() const { return static_cast<double>(nt) * dt; }
  double period_x() const { return static_cast<double>(nx) * dx; }
  std::size_t size() const {
    std::size_t n = nt;
    for (int i = 0; i < d; ++i) n *= nx;
    return n;
  }

  void validate() const {
    if (d < 1 || d > 4) throw DomainError("GridSpec: dimension must be in 1..4");
    if (nt < 2 || nx < 2) throw DomainError("GridSpec: need at least two nodes per axis");
    if (!(dt > 0.0) || !(dx > 0.0)) throw DomainError("GridSpec: spacings must be > 0");
  }

  /// Preferred lattice is periods 16 ell with spacing ell/8; when that exceeds
  /// max_points the lattice falls back to periods 8 ell, spacing ell/4.
  static GridSpec for_model(const CovarianceModel& m, std::size_t max_points = std::size_t{1} << 22) {
    GridSpec g{m.d(), 128, 128, m.ell_t() / 8.0, m.ell_x() / 8.0};
    if (g.size() > max_points) g = GridSpec{m.d(), 32, 32, m.ell_t() / 4.0, m.ell_x() / 4.0};
    if (m.taper_radius()) {
      // the minimal-image construction needs periods >= 2M
      while (g.period_t() < 2.0 * *m.taper_radius()) g.nt *= 2;
      while (g.period_x() < 2.0 * *m.taper_radius()) g.nx *= 2;
    }
    return g;
  }

  nlohmann::json to_json() const { return {{"d", d}, {"nt", nt}, {"nx", nx}, {"dt", dt}, {"dx", dx}}; }
  static GridSpec from_json(const nlohmann::json& j) {
    GridSpec g{j.at("d").get<int>(), j.at("nt").get<std::size_t>(), j.at("nx").get<std::size_t>(), j.at("dt").get<double>(),
               j.at("dx").get<double>()};
    g.validate();
    return g;
  }
  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

class GridField {
 public:
  GridField(GridSpec spec, std::vector<double> values) : spec_(spec), values_(std::move(values)) {
    spec_.validate();
    if (values_.size() != spec_.size()) throw DomainError("GridField: value array size mismatch");
  }

  const GridSpec& spec() const noexcept { return spec_; }
  std::span<const double> values() const noexcept { return values_; }

  double node(std::size_t it, std::span<const std::size_t> ix) const {
    std::size_t idx = it;
    for (int i = 0; i < spec_.d; ++i) idx = idx * spec_.nx + ix[i];
    return values_[idx];
  }

  /// Multilinear interpolation after periodic wrap of every coordinate.
  double operator()(double t, std::span<const double> x) const {
    const int n = spec_.d + 1;
    std::array<std::size_t, 5> lo{}, hi{};
    std::array<double, 5> w{};
    auto locate = [](double c, double h, std::size_t m, std::size_t& a, std::size_t& b, double& frac) {
      const double u = c / h;
      const double fl = std::floor(u);
      frac = u - fl;
      const auto mm = static_cast<std::int64_t>(m);
      std::int64_t i = static_cast<std::int64_t>(fl) % mm;
      if (i < 0) i += mm;
      a = static_cast<std::size_t>(i);
      b = (a + 1 == m) ? 0 : a + 1;
    };
    locate(t, spec_.dt, spec_.nt, lo[0], hi[0], w[0]);
    for (int i = 0; i < spec_.d; ++i) locate(x[i], spec_.dx, spec_.nx, lo[i + 1], hi[i + 1], w[i + 1]);

    double s = 0.0;
    for (unsigned corner = 0; corner < (1u << n); ++corner) {
      double weight = 1.0;
      std::size_t idx = 0;
      for (int a = 0; a < n; ++a) {
        const bool up = (corner >> (n - 1 - a)) & 1u;
        weight *= up ? w[a] : 1.0 - w[a];
        idx = idx * (a == 0 ? 1 : spec_.nx) + (up ? hi[a] : lo[a]);
      }
      if (weight != 0.0) s += weight * values_[idx];
    }
    return s;
  }

 private:
  GridSpec spec_;
  std::vector<double> values_;
};

namespace detail {

struct FftwFree {
  void operator()(fftw_complex* p) const noexcept { fftw_free(p); }
};
using FftwBuffer = std::unique_ptr<fftw_complex[], FftwFree>;

struct FftwPlanDeleter {
  void operator()(fftw_plan p) const noexcept {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(p);
  }
  static std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
  }
};
using FftwPlan = std::unique_ptr<std::remove_pointer_t<fftw_plan>, FftwPlanDeleter>;

inline FftwBuffer fftw_buffer(std::size_t n) {
  auto* p = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
  if (!p) throw ResourceError("fftw_malloc failed for " + std::to_string(n) + " points");
  return FftwBuffer(p);
}

inline FftwPlan fftw_plan_for(const GridSpec& g, fftw_complex* buf, int sign) {
  std::vector<int> dims(g.d + 1, static_cast<int>(g.nx));
  dims[0] = static_cast<int>(g.nt);
  std::lock_guard lock(FftwPlanDeleter::fftw_planner_mutex());
  fftw_plan p = fftw_plan_dft(g.d + 1, dims.data(), buf, buf, sign, FFTW_ESTIMATE);
  if (!p) throw ResourceError("FFTW planning failed");
  return FftwPlan(p);
}

// Lag of lattice index i on a periodic axis of m nodes, minimal image.
inline double minimal_image(std::size_t i, std::size_t m, double h) {
  const auto ii = static_cast<std::int64_t>(i), mm = static_cast<std::int64_t>(m);
  return static_cast<double>(ii <= mm / 2 ? ii : ii - mm) * h;
}

}  // namespace detail

/// Circulant-embedding synthesizer for one (model, lattice). The discrete
/// spectrum is computed once; each synthesis draws complex Gaussian spectral
/// amplitudes and applies one (d+1)-dimensional DFT, which yields two
/// independent real fields (real and imaginary parts).
class GridSynthesizer {
 public:
  GridSynthesizer(const CovarianceModel& model, const GridSpec& grid) : model_(model), grid_(grid) {
    grid_.validate();
    if (grid_.d != model.d()) throw DomainError("GridSynthesizer: grid and model dimensions differ");
    if (grid_.period_t() < 8.0 * model.ell_t() || grid_.period_x() < 8.0 * model.ell_x())
      throw DomainError("GridSynthesizer: periods must be >= 8 correlation lengths");
    if (grid_.dt > 0.25 * model.ell_t() + 1e-12 || grid_.dx > 0.25 * model.ell_x() + 1e-12)
      throw DomainError("GridSynthesizer: spacings must be <= ell/4");
    if (auto m = model.taper_radius(); m && (grid_.period_t() < 2.0 * *m || grid_.period_x() < 2.0 * *m))
      throw DomainError("GridSynthesizer: periods must be >= 2 taper radii");

    const std::size_t n = grid_.size();
    target_ = periodized_covariance();
    auto buf = detail::fftw_buffer(n);
    for (std::size_t i = 0; i < n; ++i) {
      buf[i][0] = target_[i];
      buf[i][1] = 0.0;
    }
    {
      auto plan = detail::fftw_plan_for(grid_, buf.get(), FFTW_FORWARD);
      fftw_execute(plan.get());
    }
    spectrum_.resize(n);
    for (std::size_t i = 0; i < n; ++i) spectrum_[i] = buf[i][0];
    min_raw_ = clip_spectrum(spectrum_);
    double max_v = 0.0;
    for (double v : spectrum_) max_v = std::max(max_v, v);
    for (std::size_t i = 0; i < n; ++i)
      if (spectrum_[i] > 1e-14 * max_v) active_.push_back(static_cast<std::uint32_t>(i));
    plan_buffer_ = detail::fftw_buffer(n);
    plan_ = detail::fftw_plan_for(grid_, plan_buffer_.get(), FFTW_BACKWARD);
  }

  const GridSpec& grid() const noexcept { return grid_; }
  const CovarianceModel& model() const noexcept { return model_; }
  std::span<const double> spectrum() const noexcept { return spectrum_; }
  double min_raw_spectrum() const noexcept { return min_raw_; }
  /// Periodization of R at lattice lags.
  std::span<const double> target_covariance() const noexcept { return target_; }

  /// Exact covariance of the synthesized lattice field (inverse DFT of the clipped spectrum).
  std::vector<double> lattice_covariance() const {
    const std::size_t n = grid_.size();
    auto buf = detail::fftw_buffer(n);
    for (std::size_t i = 0; i < n; ++i) {
      buf[i][0] = spectrum_[i];
      buf[i][1] = 0.0;
    }
    fftw_execute_dft(plan_.get(), buf.get(), buf.get());
    std::vector<double> c(n);
    for (std::size_t i = 0; i < n; ++i) c[i] = buf[i][0] / static_cast<double>(n);
    return c;
  }

  std::pair<GridField, GridField> synthesize_pair(const RngStream& stream) const {
    const std::size_t n = grid_.size();
    auto buf = detail::fftw_buffer(n);
    std::memset(buf.get(), 0, sizeof(fftw_complex) * n);
    StreamGenerator g(stream);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::uint32_t i : active_) {
      const double s = std::sqrt(spectrum_[i] * inv_n);
      buf[i][0] = s * g.normal();
      buf[i][1] = s * g.normal();
    }
    fftw_execute_dft(plan_.get(), buf.get(), buf.get());
    std::vector<double> re(n), im(n);
    for (std::size_t i = 0; i < n; ++i) {
      re[i] = buf[i][0];
      im[i] = buf[i][1];
    }
    return {GridField(grid_, std::move(re)), GridField(grid_, std::move(im))};
  }

  GridField synthesize(const RngStream& stream) const { return synthesize_pair(stream).first; }

  /// Clips entries in [-1e-9 max, 0) to zero and returns the raw minimum;
  /// anything more negative means the embedding is not a covariance.
  static double clip_spectrum(std::vector<double>& lambda) {
    double max_v = 0.0, min_v = 0.0;
    for (double v : lambda) {
      max_v = std::max(max_v, v);
      min_v = std::min(min_v, v);
    }
    if (min_v < -1e-9 * max_v)
      throw SynthesisError("discrete spectrum entry " + std::to_string(min_v) + " below -1e-9 * max (" +
                           std::to_string(max_v) + "); period too short for the model");
    for (double& v : lambda) v = std::max(v, 0.0);
    return min_v;
  }

 private:
  std::vector<double> periodized_covariance() const {
    const std::size_t n = grid_.size();
    std::vector<double> c(n);
    const int d = grid_.d;
    if (model_.separable()) {
      // product of periodized 1-D Gaussians
      auto axis = [](std::size_t m, double h, double ell, double amp) {
        std::vector<double> v(m);
        const double period = static_cast<double>(m) * h;
        const int images = static_cast<int>(std::ceil(12.0 * ell / period)) + 1;
        for (std::size_t i = 0; i < m; ++i) {
          const double lag = detail::minimal_image(i, m, h);
          double s = 0.0;
          for (int q = -images; q <= images; ++q) {
            const double l = lag + q * period;
            s += std::exp(-0.5 * l * l / (ell * ell));
          }
          v[i] = amp * s;
        }
        return v;
      };
      const auto ct = axis(grid_.nt, grid_.dt, model_.ell_t(), model_.amplitude());
      const auto cx = axis(grid_.nx, grid_.dx, model_.ell_x(), 1.0);
      for (std::size_t idx = 0; idx < n; ++idx) {
        std::size_t rest = idx;
        double v = 1.0;
        for (int a = d - 1; a >= 0; --a) {
          v *= cx[rest % grid_.nx];
          rest /= grid_.nx;
        }
        c[idx] = v * ct[rest];
      }
      return c;
    }
    // compact support within half a period: the periodization is the minimal image
    std::array<double, 4> x{};
    for (std::size_t idx = 0; idx < n; ++idx) {
      std::size_t rest = idx;
      for (int a = d - 1; a >= 0; --a) {
        x[a] = detail::minimal_image(rest % grid_.nx, grid_.nx, grid_.dx);
        rest /= grid_.nx;
      }
      const double t = detail::minimal_image(rest, grid_.nt, grid_.dt);
      c[idx] = model_.r(t, std::span<const double>(x.data(), d));
    }
    return c;
  }

  CovarianceModel model_;
  GridSpec grid_;
  std::vector<double> target_;
  std::vector<double> spectrum_;
  std::vector<std::uint32_t> active_;
  double min_raw_ = 0.0;
  detail::FftwBuffer plan_buffer_;
  detail::FftwPlan plan_;
};

inline GridField synth_grid(const CovarianceModel& model, const GridSpec& grid, const RngStream& stream) {
  return GridSynthesizer(model, grid).synthesize(stream);
}

/// Either backend behind one evaluation interface.
class FieldSampler {
 public:
  FieldSampler(HarmonicField f) : backend_(std::move(f)) {}  // NOLINT(google-explicit-constructor)
  FieldSampler(GridField f) : backend_(std::move(f)) {}      // NOLINT(google-explicit-constructor)

  double operator()(double t, std::span<const double> x) const {
    return std::visit([&](const auto& f) { return f(t, x); }, backend_);
  }

  int d() const {
    return std::visit(
        [](const auto& f) {
          if constexpr (std::is_same_v<std::decay_t<decltype(f)>, HarmonicField>)
            return f.d();
          else
            return f.spec().d;
        },
        backend_);
  }

  const HarmonicField* harmonic() const noexcept { return std::get_if<HarmonicField>(&backend_); }
  const GridField* grid() const noexcept { return std::get_if<GridField>(&backend_); }
  std::string backend_name() const { return harmonic() ? "harmonic" : "grid"; }

 private:
  std::variant<HarmonicField, GridField> backend_;
};

inline double field_eval(const FieldSampler& s, double t, std::span<const double> x) { return s(t, x); }

/// Builds realization i from its own stream; must be deterministic in (i, stream).
using SamplerFactory = std::function<FieldSampler(std::size_t realization, const RngStream& stream)>;

inline SamplerFactory harmonic_factory(const CovarianceModel& model, std::size_t J) {
  std::shared_ptr<const detail::TableSampler> table;
  if (!model.separable()) table = std::make_shared<const detail::TableSampler>(model);
  return [model, J, table](std::size_t, const RngStream& s) {
    return FieldSampler(synth_harmonic(model, J, s, table.get()));
  };
}

/// Realizations 2m and 2m+1 are the two halves of one complex synthesis drawn
/// from stream.child-of-pair; the last computed pair is cached per factory.
inline SamplerFactory grid_factory(const CovarianceModel& model, const GridSpec& grid, const RngStream& base) {
  struct State {
    explicit State(GridSynthesizer s) : synth(std::move(s)) {}
    GridSynthesizer synth;
    std::mutex mutex;
    std::size_t cached_pair = static_cast<std::size_t>(-1);
    std::shared_ptr<std::pair<GridField, GridField>> pair;
  };
  auto state = std::make_shared<State>(GridSynthesizer(model, grid));
  return [state, base](std::size_t i, const RngStream&) {
    const std::size_t p = i / 2;
    std::shared_ptr<std::pair<GridField, GridField>> pair;
    {
      std::lock_guard lock(state->mutex);
      if (state->cached_pair == p) pair = state->pair;
    }
    if (!pair) {
      pair = std::make_shared<std::pair<GridField, GridField>>(state->synth.synthesize_pair(base.child(p)));
      std::lock_guard lock(state->mutex);
      state->cached_pair = p;
      state->pair = pair;
    }
    return FieldSampler(i % 2 == 0 ? pair->first : pair->second);
  };
}

struct SpaceTimePoint {
  double t = 0.0;
  std::vector<double> x;
};

struct CovarianceRow {
  SpaceTimePoint lag;
  double estimate = 0.0;
  double stderr_ = 0.0;
  std::size_t n = 0;
};

/// Values of n_realizations independent realizations at fixed space-time points,
/// row-major (realization, point).
inline std::vector<double> probe_realizations(const SamplerFactory& factory, std::span<const SpaceTimePoint> points,
                                              std::size_t n_realizations, const RngStream& stream, unsigned workers = 1) {
  const std::size_t P = points.size();
  std::vector<double> out(n_realizations * P);
  parallel_for(n_realizations, workers, [&](std::size_t r) {
    const FieldSampler f = factory(r, stream.child(r));
    for (std::size_t p = 0; p < P; ++p) out[r * P + p] = f(points[p].t, points[p].x);
  });
  return out;
}

/// Sample covariance rows from probes whose column 0 is the origin and columns
/// 1..L the lags.
inline std::vector<CovarianceRow> covariance_from_probes(std::span<const double> probes, std::size_t stride,
                                                         const std::vector<SpaceTimePoint>& lags, std::size_t first_lag = 1) {
  const std::size_t n_realizations = probes.size() / stride;
  const double n = static_cast<double>(n_realizations);
  double m0 = 0.0;
  for (std::size_t r = 0; r < n_realizations; ++r) m0 += probes[r * stride];
  m0 /= n;
  std::vector<CovarianceRow> rows;
  for (std::size_t l = 0; l < lags.size(); ++l) {
    const std::size_t c = first_lag + l;
    double ml = 0.0;
    for (std::size_t r = 0; r < n_realizations; ++r) ml += probes[r * stride + c];
    ml /= n;
    double s = 0.0, s2 = 0.0;
    for (std::size_t r = 0; r < n_realizations; ++r) {
      const double p = (probes[r * stride] - m0) * (probes[r * stride + c] - ml);
      s += p;
      s2 += p * p;
    }
    const double est = s / (n - 1.0);
    const double mean_p = s / n;
    const double var_p = (s2 / n - mean_p * mean_p) * n / (n - 1.0);
    rows.push_back({lags[l], est, std::sqrt(std::max(var_p, 0.0) / n), n_realizations});
  }
  return rows;
}

/// Sample covariance of V(0,0) and V(lag) over independent realizations.
inline std::vector<CovarianceRow> empirical_cov(const SamplerFactory& factory, const std::vector<SpaceTimePoint>& lags,
                                                std::size_t n_realizations, const RngStream& stream, unsigned workers = 1) {
  if (n_realizations < 100) throw DomainError("empirical_cov: n_realizations must be >= 100");
  if (lags.empty()) return {};
  std::vector<SpaceTimePoint> pts{{0.0, std::vector<double>(lags.front().x.size(), 0.0)}};
  pts.insert(pts.end(), lags.begin(), lags.end());
  const auto probes = probe_realizations(factory, pts, n_realizations, stream, workers);
  return covariance_from_probes(probes, pts.size(), lags);
}

struct WickRow {
  double estimate = 0.0;
  double stderr_ = 0.0;
  double wick = 0.0;  // R12 R34 + R13 R24 + R14 R23
};

/// Four-point product statistics from probe columns first..first+3.
inline WickRow wick_from_probes(std::span<const double> probes, std::size_t stride, std::size_t first,
                                const CovarianceModel& model, const std::array<SpaceTimePoint, 4>& sites) {
  const std::size_t n_realizations = probes.size() / stride;
  const double n = static_cast<double>(n_realizations);
  double s = 0.0, s2 = 0.0;
  for (std::size_t r = 0; r < n_realizations; ++r) {
    double p = 1.0;
    for (std::size_t k = 0; k < 4; ++k) p *= probes[r * stride + first + k];
    s += p;
    s2 += p * p;
  }
  const double mean = s / n;
  const double var = (s2 / n - mean * mean) * n / (n - 1.0);
  auto cov = [&](int a, int b) {
    std::vector<double> dx(sites[a].x.size());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = sites[a].x[i] - sites[b].x[i];
    return model.r(sites[a].t - sites[b].t, dx);
  };
  const double w = cov(0, 1) * cov(2, 3) + cov(0, 2) * cov(1, 3) + cov(0, 3) * cov(1, 2);
  return {mean, std::sqrt(std::max(var, 0.0) / n), w};
}

/// Empirical E[V(p1)V(p2)V(p3)V(p4)] against the Gaussian (Wick) prediction.
inline WickRow wick_four_point(const SamplerFactory& factory, const CovarianceModel& model,
                               const std::array<SpaceTimePoint, 4>& sites, std::size_t n_realizations,
                               const RngStream& stream, unsigned workers = 1) {
  if (n_realizations < 100) throw DomainError("wick_four_point: n_realizations must be >= 100");
  const auto probes = probe_realizations(factory, sites, n_realizations, stream, workers);
  return wick_from_probes(probes, 4, 0, model, sites);
}

namespace detail {

inline void write_le64(std::ostream& os, std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap64(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline std::uint64_t read_le64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap64(v);
  return v;
}

inline constexpr char kGridMagic[8] = {'S', 'H', 'G', 'R', 'I', 'D', '0', '1'};

}  // namespace detail

/// Binary container: magic "SHGRID01", u64 LE header length, JSON header
/// {model, grid, seed}, then little-endian float64 values in row-major
/// (t, x1, ..., xd) order.
inline void save_grid(const std::string& path, const GridField& field, const CovarianceModel& model, const RngStream& seed) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_grid: cannot open " + path);
  const nlohmann::json header{{"model", model.to_json()},
                              {"grid", field.spec().to_json()},
                              {"seed", {{"master_seed", seed.master_seed}, {"stream_id", seed.stream_id}}}};
  const std::string h = header.dump();
  os.write(detail::kGridMagic, sizeof detail::kGridMagic);
  detail::write_le64(os, h.size());
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (double v : field.values()) detail::write_le64(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw std::runtime_error("save_grid: write failed for " + path);
}

struct LoadedGrid {
  GridField field;
  nlohmann::json header;
};

inline LoadedGrid load_grid(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_grid: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, detail::kGridMagic, sizeof magic) != 0)
    throw std::runtime_error("load_grid: bad magic in " + path);
  const std::uint64_t len = detail::read_le64(is);
  std::string h(len, '\0');
  is.read(h.data(), static_cast<std::streamsize>(len));
  auto header = nlohmann::json::parse(h);
  const GridSpec spec = GridSpec::from_json(header.at("grid"));
  std::vector<double> values(spec.size());
  for (double& v : values) v = std::bit_cast<double>(detail::read_le64(is));
  if (!is) throw std::runtime_error("load_grid: truncated data in " + path);
  return {GridField(spec, std::move(values)), std::move(header)};
}

}  // namespace scenery
