#pragma once

// Experiment configuration: parsing with JSON-pointer errors, defaults, and the
// resolved form that gets hashed and embedded in every run manifest.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "scenery/covariance.hpp"
#include "scenery/effective.hpp"
#include "scenery/errors.hpp"
#include "scenery/field.hpp"
#include "scenery/fk_solver.hpp"
#include "scenery/io.hpp"

namespace scenery {

enum class ExperimentKind { effective, homogenize, scenery, corrector, spde, field_check };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::effective: return "effective";
    case ExperimentKind::homogenize: return "homogenize";
    case ExperimentKind::scenery: return "scenery";
    case ExperimentKind::corrector: return "corrector";
    case ExperimentKind::spde: return "spde";
    default: return "field_check";
  }
}

/// Accepts the CLI spelling "field-check" as well.
inline std::optional<ExperimentKind> parse_kind(const std::string& s) {
  for (auto k : {ExperimentKind::effective, ExperimentKind::homogenize, ExperimentKind::scenery, ExperimentKind::corrector,
                 ExperimentKind::spde, ExperimentKind::field_check})
    if (s == to_string(k)) return k;
  if (s == "field-check") return ExperimentKind::field_check;
  return std::nullopt;
}

struct BackendConfig {
  std::string kind = "harmonic";  // harmonic | grid
  std::size_t modes = 32;
  std::optional<GridSpec> grid;   // unset: GridSpec::for_model

  GridSpec grid_for(const CovarianceModel& m) const { return grid.value_or(GridSpec::for_model(m)); }
};

struct EffectiveParams {
  std::vector<EffRegime> regimes{EffRegime::G2, EffRegime::EQ2, EffRegime::LT2};
  double rel_tol = 1e-10;
  double spectral_rel_tol = 1e-9;
};

struct HomogenizeParams {
  std::vector<double> alphas{3.0, 2.0, 1.0};
  std::vector<double> epsilons{0.5, 0.35, 0.25};
  std::size_t n_paths = 10000;
  std::size_t n_fields = 20;
  double dt = 0.0;  // 0: per-cell default
  double t = 1.0;
  std::vector<double> x;  // default: origin
  InitialData initial = InitialData::cosine({1.0});
};

struct PairFunctionalParams {
  double epsilon = 0.1;
  double beta = 0.5;
  double gamma = 1.0;
  std::size_t n_paths = 2000;
  std::vector<double> independent_epsilons{0.4, 0.2, 0.1, 0.05};
  std::size_t independent_pairs = 200;
  double ds = 0.1;
  double t = 1.0;
};

struct SecondMomentParams {
  double epsilon = 0.1;
  double alpha = 1.0;
  double t = 1.0;
  std::size_t n_fields = 200;
  std::size_t n_paths = 50;
  double ds = 0.0;
  double constant = 4.0;
};

struct SceneryParams {
  double alpha = 3.0;
  std::vector<double> epsilons{0.4, 0.2, 0.1};
  std::size_t n_paths = 20000;
  std::size_t n_fields = 20;
  // 0: default micro step per epsilon. The node sum loses only an
  // O(ds^2 eps^{2beta}) kink term, so the unit time scale allows 0.5.
  double ds = 0.5;
  double t = 1.0;
  double gamma1 = 0.4;
  double gamma2 = 0.2;
  PairFunctionalParams pair;
  SecondMomentParams second_moment;
};

struct ExactnessParams {
  double epsilon = 0.1;
  std::size_t points = 50;
  double fd_h = 1e-4;
  double box = 2.0;
};

struct MartingaleParams {
  double epsilon = 0.1;
  double t = 1.0;
  std::size_t n_fields = 200;
  std::size_t n_paths = 10;
  std::size_t levels = 4;
  double ds = 0.5;  // coarsest step; each level halves it
};

struct CorrectorParams {
  double alpha = 1.0;
  std::vector<double> lambdas{1e-1, 1e-2, 1e-3, 1e-4};
  ExactnessParams exactness;
  MartingaleParams martingale;
};

struct SpdeParams {
  double eps_moll = 1e-3;
  double cauchy_dt = 0.01;
  double t = 1.0;
  std::vector<double> x;
  InitialData initial = InitialData::constant(1.0);
  std::vector<std::array<int, 2>> moments{{1, 0}, {1, 1}, {2, 0}};
  std::vector<double> epsilons{0.2, 0.1, 0.05};
  std::size_t n_fields = 20;
  std::size_t n_path_tuples = 2000;
  double dt = 0.0;
  std::size_t limit_tuples = 20000;
  double limit_dt = 0.01;
};

struct FieldCheckParams {
  std::vector<std::string> backends{"harmonic", "grid"};
  std::size_t n_realizations = 2000;
  std::vector<SpaceTimePoint> lags;
  std::vector<std::string> wick_backends{"grid"};
  std::array<SpaceTimePoint, 4> wick_sites;
};

using KindParams =
    std::variant<EffectiveParams, HomogenizeParams, SceneryParams, CorrectorParams, SpdeParams, FieldCheckParams>;

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::effective;
  CovarianceModel model = CovarianceModel::gaussian(1.0, 1.0, 1.0, 3);
  BackendConfig backend;
  std::uint64_t master_seed = 1;
  int workers = 0;
  std::string output = "out";
  bool check = false;
  double max_work = 1e12;  // budget guard on field evaluations
  KindParams params = EffectiveParams{};

  template <class P>
  const P& as() const {
    return std::get<P>(params);
  }

  RngStream master() const { return RngStream{master_seed, 0}; }

  nlohmann::json to_json() const;

  /// Hash of the resolved config without the fields that cannot change outputs.
  std::uint64_t hash() const {
    auto j = to_json();
    for (const char* k : {"workers", "output", "check", "max_work"}) j.erase(k);
    return fnv1a(j.dump());
  }
};

namespace detail {

inline std::string pointer_escape(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~')
      out += "~0";
    else if (c == '/')
      out += "~1";
    else
      out += c;
  }
  return out;
}

// Typed access to one config object; every key read is marked, and finish()
// rejects whatever is left.
class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& j, std::string ptr) : j_(j), ptr_(std::move(ptr)) {
    if (!j.is_object()) throw ConfigError(where(), "expected an object");
  }

  std::string at(const std::string& key) const { return ptr_ + "/" + pointer_escape(key); }
  std::string where() const { return ptr_.empty() ? "/" : ptr_; }

  const nlohmann::json* find(const std::string& key) {
    used_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  double number(const std::string& key, double def, const std::function<bool(double)>& ok, const char* req) {
    const auto* v = find(key);
    if (!v) return def;
    if (!v->is_number()) throw ConfigError(at(key), "expected a number");
    const double x = v->get<double>();
    if (!ok(x)) throw ConfigError(at(key), req);
    return x;
  }

  double positive(const std::string& key, double def) {
    return number(key, def, [](double x) { return x > 0.0; }, "must be > 0");
  }
  double non_negative(const std::string& key, double def) {
    return number(key, def, [](double x) { return x >= 0.0; }, "must be >= 0");
  }

  std::uint64_t count(const std::string& key, std::uint64_t def, std::uint64_t min) {
    const auto* v = find(key);
    if (!v) return def;
    if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() && v->get<std::int64_t>() < 0))
      throw ConfigError(at(key), "expected a non-negative integer");
    const auto x = v->get<std::uint64_t>();
    if (x < min) throw ConfigError(at(key), "must be >= " + std::to_string(min));
    return x;
  }

  bool boolean(const std::string& key, bool def) {
    const auto* v = find(key);
    if (!v) return def;
    if (!v->is_boolean()) throw ConfigError(at(key), "expected a boolean");
    return v->get<bool>();
  }

  std::string choice(const std::string& key, const std::string& def, const std::vector<std::string>& allowed) {
    const auto* v = find(key);
    if (!v) return def;
    if (!v->is_string()) throw ConfigError(at(key), "expected a string");
    const auto s = v->get<std::string>();
    if (std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
      std::string msg = "must be one of";
      for (const auto& a : allowed) msg += " " + a;
      throw ConfigError(at(key), msg);
    }
    return s;
  }

  std::string string(const std::string& key, const std::string& def) {
    const auto* v = find(key);
    if (!v) return def;
    if (!v->is_string() || v->get<std::string>().empty()) throw ConfigError(at(key), "expected a non-empty string");
    return v->get<std::string>();
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> def, const std::function<bool(double)>& ok,
                              const char* req, std::size_t min_size = 1) {
    const auto* v = find(key);
    if (!v) return def;
    return numbers_of(*v, at(key), ok, req, min_size);
  }

  static std::vector<double> numbers_of(const nlohmann::json& v, const std::string& ptr, const std::function<bool(double)>& ok,
                                        const char* req, std::size_t min_size) {
    if (!v.is_array()) throw ConfigError(ptr, "expected an array of numbers");
    if (v.size() < min_size) throw ConfigError(ptr, "needs at least " + std::to_string(min_size) + " entries");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto p = ptr + "/" + std::to_string(i);
      if (!v[i].is_number()) throw ConfigError(p, "expected a number");
      if (!ok(v[i].get<double>())) throw ConfigError(p, req);
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  std::vector<std::string> choices(const std::string& key, std::vector<std::string> def, const std::vector<std::string>& allowed,
                                   std::size_t min_size) {
    const auto* v = find(key);
    if (!v) return def;
    if (!v->is_array()) throw ConfigError(at(key), "expected an array of strings");
    if (v->size() < min_size) throw ConfigError(at(key), "needs at least " + std::to_string(min_size) + " entries");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      const auto p = at(key) + "/" + std::to_string(i);
      const auto& e = (*v)[i];
      if (!e.is_string() || std::find(allowed.begin(), allowed.end(), e.get<std::string>()) == allowed.end())
        throw ConfigError(p, "unknown value");
      if (std::find(out.begin(), out.end(), e.get<std::string>()) != out.end()) throw ConfigError(p, "duplicate value");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  std::optional<ConfigReader> object(const std::string& key) {
    const auto* v = find(key);
    if (!v) return std::nullopt;
    return ConfigReader(*v, at(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!used_.contains(k)) throw ConfigError(at(k), "unknown property");
  }

 private:
  const nlohmann::json& j_;
  std::string ptr_;
  std::set<std::string> used_;
};

inline bool is_pos(double x) { return x > 0.0; }
inline bool in_unit(double x) { return x > 0.0 && x < 1.0; }

inline void require_decreasing(const std::vector<double>& v, const std::string& ptr) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (!(v[i] < v[i - 1])) throw ConfigError(ptr + "/" + std::to_string(i), "schedule must be strictly decreasing");
}

inline CovarianceModel parse_model(ConfigReader r) {
  const auto kind = r.choice("kind", "gaussian_separable", {"gaussian_separable", "tapered_gaussian"});
  const double a = r.positive("amplitude", 1.0);
  const double lt = r.positive("ell_t", 1.0);
  const double lx = r.positive("ell_x", 1.0);
  const auto d = static_cast<int>(r.count("d", 3, 1));
  if (d > 4) throw ConfigError(r.at("d"), "must be in 1..4");
  const auto* tr = r.find("taper_radius");
  r.finish();
  if (kind == "gaussian_separable") {
    if (tr && !tr->is_null()) throw ConfigError(r.at("taper_radius"), "only valid for tapered_gaussian");
    return CovarianceModel::gaussian(a, lt, lx, d);
  }
  if (!tr || tr->is_null()) throw ConfigError(r.at("taper_radius"), "required for tapered_gaussian");
  if (!tr->is_number() || !(tr->get<double>() > 0.0)) throw ConfigError(r.at("taper_radius"), "must be a number > 0");
  return CovarianceModel::tapered(a, lt, lx, d, tr->get<double>());
}

inline BackendConfig parse_backend(ConfigReader r, int d) {
  BackendConfig b;
  b.kind = r.choice("kind", "harmonic", {"harmonic", "grid"});
  b.modes = r.count("modes", 32, 1);
  if (auto g = r.object("grid")) {
    GridSpec s;
    s.d = d;
    s.nt = g->count("nt", 32, 2);
    s.nx = g->count("nx", 32, 2);
    s.dt = g->positive("dt", 0.25);
    s.dx = g->positive("dx", 0.25);
    g->finish();
    b.grid = s;
  }
  r.finish();
  return b;
}

inline InitialData parse_initial(const nlohmann::json* j, const std::string& ptr, InitialData def, int d) {
  InitialData f = std::move(def);
  if (j) {
    ConfigReader r(*j, ptr);
    const auto kind = r.choice("kind", "", {"cosine", "gaussian_bump", "constant"});
    if (kind == "cosine") {
      if (!j->contains("kappa")) throw ConfigError(r.at("kappa"), "required for cosine");
      f = InitialData::cosine(r.numbers("kappa", {}, [](double x) { return std::isfinite(x); }, "must be finite"));
    } else if (kind == "gaussian_bump") {
      if (!j->contains("center")) throw ConfigError(r.at("center"), "required for gaussian_bump");
      auto c = r.numbers("center", {}, [](double x) { return std::isfinite(x); }, "must be finite");
      f = InitialData::gaussian_bump(std::move(c), r.positive("width", 1.0));
    } else if (kind == "constant") {
      f = InitialData::constant(r.number("c", 1.0, [](double x) { return std::isfinite(x); }, "must be finite"));
    } else {
      throw ConfigError(r.at("kind"), "required");
    }
    r.finish();
  }
  if (f.d() != 0 && f.d() != d) throw ConfigError(ptr, "dimension does not match the model");
  return f;
}

inline std::vector<double> parse_point(ConfigReader& r, const std::string& key, int d) {
  const auto x = r.numbers(key, std::vector<double>(d, 0.0), [](double v) { return std::isfinite(v); }, "must be finite");
  if (static_cast<int>(x.size()) != d) throw ConfigError(r.at(key), "needs " + std::to_string(d) + " entries");
  return x;
}

// [t, x1..xd] entries
inline SpaceTimePoint parse_site(const nlohmann::json& j, const std::string& ptr, int d) {
  const auto v = ConfigReader::numbers_of(j, ptr, [](double x) { return std::isfinite(x); }, "must be finite", 1);
  if (static_cast<int>(v.size()) != d + 1) throw ConfigError(ptr, "needs [t, x1..x" + std::to_string(d) + "]");
  return {v[0], std::vector<double>(v.begin() + 1, v.end())};
}

inline nlohmann::json site_json(const SpaceTimePoint& p) {
  nlohmann::json a = nlohmann::json::array({p.t});
  for (double v : p.x) a.push_back(v);
  return a;
}

// defaults on the 0.25 lattice so grid probes sit on nodes
inline std::vector<SpaceTimePoint> default_lags(int d) {
  const std::vector<std::array<double, 5>> raw{{0.0, 0.0, 0.0, 0.0, 0.0},     {0.25, 0.0, 0.0, 0.0, 0.0},
                                               {0.0, 0.25, 0.0, 0.0, 0.0},    {0.5, 0.25, 0.25, 0.0, 0.0},
                                               {1.0, 0.0, 0.0, 0.0, 0.0},     {0.0, 0.0, 0.0, 1.0, 0.0},
                                               {0.75, 0.5, 0.0, -0.25, 0.0},  {1.5, 0.5, 0.5, 0.5, 0.0},
                                               {0.0, 1.0, 1.0, 0.0, 0.0},     {2.0, 0.0, 1.0, 0.0, 0.0}};
  std::vector<SpaceTimePoint> out;
  for (const auto& r : raw) out.push_back({r[0], std::vector<double>(r.begin() + 1, r.begin() + 1 + d)});
  return out;
}

inline std::array<SpaceTimePoint, 4> default_wick_sites(int d) {
  const std::array<std::array<double, 5>, 4> raw{{{0.0, 0.0, 0.0, 0.0, 0.0},
                                                  {0.25, 0.25, 0.0, 0.0, 0.0},
                                                  {0.5, 0.0, 0.25, 0.0, 0.0},
                                                  {0.25, 0.0, 0.0, 0.5, 0.0}}};
  std::array<SpaceTimePoint, 4> out;
  for (std::size_t i = 0; i < 4; ++i) out[i] = {raw[i][0], std::vector<double>(raw[i].begin() + 1, raw[i].begin() + 1 + d)};
  return out;
}

inline EffectiveParams parse_effective(ConfigReader r) {
  EffectiveParams p;
  const auto names = r.choices("regimes", {"G2", "EQ2", "LT2"}, {"G2", "EQ2", "LT2"}, 1);
  p.regimes.clear();
  for (const auto& n : names) p.regimes.push_back(n == "G2" ? EffRegime::G2 : n == "EQ2" ? EffRegime::EQ2 : EffRegime::LT2);
  p.rel_tol = r.number("rel_tol", p.rel_tol, in_unit, "must be in (0, 1)");
  p.spectral_rel_tol = r.number("spectral_rel_tol", p.spectral_rel_tol, in_unit, "must be in (0, 1)");
  r.finish();
  return p;
}

inline HomogenizeParams parse_homogenize(ConfigReader r, int d) {
  HomogenizeParams p;
  p.alphas = r.numbers("alphas", p.alphas, [](double a) { return a >= 0.0 && std::isfinite(a); }, "must be finite and >= 0");
  p.epsilons = r.numbers("epsilons", p.epsilons, in_unit, "must be in (0, 1)", 2);
  require_decreasing(p.epsilons, r.at("epsilons"));
  p.n_paths = r.count("n_paths", p.n_paths, 2);
  p.n_fields = r.count("n_fields", p.n_fields, 1);
  p.dt = r.non_negative("dt", p.dt);
  p.t = r.positive("t", p.t);
  p.x = parse_point(r, "x", d);
  std::vector<double> e1(d, 0.0);
  e1[0] = 1.0;
  p.initial = parse_initial(r.find("initial"), r.at("initial"), InitialData::cosine(e1), d);
  r.finish();
  return p;
}

inline SceneryParams parse_scenery(ConfigReader r) {
  SceneryParams p;
  p.alpha = r.number("alpha", p.alpha, [](double a) { return a > 2.0 && std::isfinite(a); }, "must be > 2 (block splitting)");
  p.epsilons = r.numbers("epsilons", p.epsilons, in_unit, "must be in (0, 1)", 2);
  require_decreasing(p.epsilons, r.at("epsilons"));
  p.n_paths = r.count("n_paths", p.n_paths, 2);
  p.n_fields = r.count("n_fields", p.n_fields, 2);
  p.ds = r.non_negative("ds", p.ds);
  p.t = r.positive("t", p.t);
  p.gamma1 = r.number("gamma1", p.gamma1, [](double g) { return g > 0.0 && g < 2.0; }, "must be in (0, 2)");
  p.gamma2 = r.number("gamma2", p.gamma2, [&](double g) { return g > 0.0 && g < p.gamma1; }, "must be in (0, gamma1)");
  if (auto q = r.object("pair_functional")) {
    auto& a = p.pair;
    a.epsilon = q->number("epsilon", a.epsilon, in_unit, "must be in (0, 1)");
    a.beta = q->number("beta", a.beta, in_unit, "must be in (0, 1)");
    a.gamma = q->positive("gamma", a.gamma);
    a.n_paths = q->count("n_paths", a.n_paths, 2);
    a.independent_epsilons = q->numbers("independent_epsilons", a.independent_epsilons, in_unit, "must be in (0, 1)", 2);
    require_decreasing(a.independent_epsilons, q->at("independent_epsilons"));
    a.independent_pairs = q->count("independent_pairs", a.independent_pairs, 2);
    a.ds = q->positive("ds", a.ds);
    a.t = q->positive("t", a.t);
    q->finish();
  }
  if (auto q = r.object("second_moment")) {
    auto& a = p.second_moment;
    a.epsilon = q->number("epsilon", a.epsilon, in_unit, "must be in (0, 1)");
    a.alpha = q->number("alpha", a.alpha, [](double x) { return x >= 0.0 && x <= 2.0; }, "must be in [0, 2]");
    a.t = q->positive("t", a.t);
    a.n_fields = q->count("n_fields", a.n_fields, 2);
    a.n_paths = q->count("n_paths", a.n_paths, 1);
    a.ds = q->non_negative("ds", a.ds);
    a.constant = q->positive("constant", a.constant);
    q->finish();
  }
  r.finish();
  return p;
}

inline CorrectorParams parse_corrector(ConfigReader r) {
  CorrectorParams p;
  p.alpha = r.number("alpha", p.alpha, [](double a) { return a >= 0.0 && a <= 2.0; }, "must be in [0, 2]");
  p.lambdas = r.numbers("lambdas", p.lambdas, in_unit, "must be in (0, 1)", 2);
  require_decreasing(p.lambdas, r.at("lambdas"));
  if (auto q = r.object("exactness")) {
    auto& a = p.exactness;
    a.epsilon = q->number("epsilon", a.epsilon, in_unit, "must be in (0, 1)");
    a.points = q->count("points", a.points, 1);
    a.fd_h = q->number("fd_h", a.fd_h, in_unit, "must be in (0, 1)");
    a.box = q->positive("box", a.box);
    q->finish();
  }
  if (auto q = r.object("martingale")) {
    auto& a = p.martingale;
    a.epsilon = q->number("epsilon", a.epsilon, in_unit, "must be in (0, 1)");
    a.t = q->positive("t", a.t);
    a.n_fields = q->count("n_fields", a.n_fields, 2);
    a.n_paths = q->count("n_paths", a.n_paths, 1);
    a.levels = q->count("levels", a.levels, 2);
    if (a.levels > 12) throw ConfigError(q->at("levels"), "must be <= 12");
    a.ds = q->positive("ds", a.ds);
    q->finish();
  }
  r.finish();
  return p;
}

inline SpdeParams parse_spde(ConfigReader r, int d) {
  SpdeParams p;
  p.eps_moll = r.number("eps_moll", p.eps_moll, in_unit, "must be in (0, 1)");
  p.cauchy_dt = r.positive("cauchy_dt", p.cauchy_dt);
  p.t = r.positive("t", p.t);
  p.x = parse_point(r, "x", d);
  p.initial = parse_initial(r.find("initial"), r.at("initial"), InitialData::constant(1.0), d);
  if (const auto* m = r.find("moments")) {
    const auto ptr = r.at("moments");
    if (!m->is_array() || m->empty()) throw ConfigError(ptr, "expected a non-empty array of [N1, N2] pairs");
    p.moments.clear();
    for (std::size_t i = 0; i < m->size(); ++i) {
      const auto& e = (*m)[i];
      const auto pi = ptr + "/" + std::to_string(i);
      auto nonneg = [](const nlohmann::json& v) { return v.is_number_integer() && v.get<std::int64_t>() >= 0; };
      if (!e.is_array() || e.size() != 2 || !nonneg(e[0]) || !nonneg(e[1]))
        throw ConfigError(pi, "expected [N1, N2] with non-negative integers");
      const int n1 = e[0].get<int>(), n2 = e[1].get<int>();
      if (n1 + n2 < 1 || n1 + n2 > 8) throw ConfigError(pi, "order N1 + N2 must be in 1..8");
      p.moments.push_back({n1, n2});
    }
  }
  p.epsilons = r.numbers("epsilons", p.epsilons, in_unit, "must be in (0, 1)", 2);
  require_decreasing(p.epsilons, r.at("epsilons"));
  p.n_fields = r.count("n_fields", p.n_fields, 2);
  p.n_path_tuples = r.count("n_path_tuples", p.n_path_tuples, 1);
  p.dt = r.non_negative("dt", p.dt);
  p.limit_tuples = r.count("limit_tuples", p.limit_tuples, 2);
  p.limit_dt = r.positive("limit_dt", p.limit_dt);
  r.finish();
  return p;
}

inline FieldCheckParams parse_field_check(ConfigReader r, int d) {
  FieldCheckParams p;
  p.backends = r.choices("backends", p.backends, {"harmonic", "grid"}, 1);
  p.n_realizations = r.count("n_realizations", p.n_realizations, 100);
  p.lags = default_lags(d);
  if (const auto* l = r.find("lags")) {
    if (!l->is_array() || l->empty()) throw ConfigError(r.at("lags"), "expected a non-empty array of [t, x...]");
    p.lags.clear();
    for (std::size_t i = 0; i < l->size(); ++i) p.lags.push_back(parse_site((*l)[i], r.at("lags") + "/" + std::to_string(i), d));
  }
  p.wick_backends = r.choices("wick_backends", p.wick_backends, {"harmonic", "grid"}, 0);
  p.wick_sites = default_wick_sites(d);
  if (const auto* w = r.find("wick_sites")) {
    if (!w->is_array() || w->size() != 4) throw ConfigError(r.at("wick_sites"), "expected exactly 4 sites");
    for (std::size_t i = 0; i < 4; ++i) p.wick_sites[i] = parse_site((*w)[i], r.at("wick_sites") + "/" + std::to_string(i), d);
  }
  r.finish();
  return p;
}

}  // namespace detail

/// Validates and resolves a config. `forced` is the kind named on the command
/// line; a different "kind" in the file is an error.
inline ExperimentConfig parse_config(const nlohmann::json& j, std::optional<ExperimentKind> forced = std::nullopt) {
  using detail::ConfigReader;
  ConfigReader r(j, "");
  ExperimentConfig c;
  const auto* kind = r.find("kind");
  if (kind) {
    if (!kind->is_string() || !parse_kind(kind->get<std::string>()))
      throw ConfigError("/kind", "must be one of effective homogenize scenery corrector spde field_check");
    c.kind = *parse_kind(kind->get<std::string>());
    if (forced && *forced != c.kind)
      throw ConfigError("/kind", "config is for '" + to_string(c.kind) + "' but '" + to_string(*forced) + "' was requested");
  } else if (forced) {
    c.kind = *forced;
  } else {
    throw ConfigError("/kind", "required");
  }

  auto empty = nlohmann::json::object();
  auto model_reader = r.object("model");
  c.model = detail::parse_model(model_reader ? std::move(*model_reader) : ConfigReader(empty, "/model"));
  const int d = c.model.d();
  auto backend_reader = r.object("backend");
  c.backend = detail::parse_backend(backend_reader ? std::move(*backend_reader) : ConfigReader(empty, "/backend"), d);
  c.master_seed = r.count("master_seed", c.master_seed, 0);
  c.workers = static_cast<int>(r.count("workers", 0, 0));
  c.output = r.string("output", c.output);
  c.check = r.boolean("check", false);
  c.max_work = r.positive("max_work", c.max_work);

  const std::string section = to_string(c.kind);
  for (auto k : {ExperimentKind::effective, ExperimentKind::homogenize, ExperimentKind::scenery, ExperimentKind::corrector,
                 ExperimentKind::spde, ExperimentKind::field_check})
    if (k != c.kind && j.contains(to_string(k)))
      throw ConfigError("/" + to_string(k), "section does not apply to kind '" + section + "'");
  auto sr = r.object(section);
  ConfigReader s = sr ? std::move(*sr) : ConfigReader(empty, "/" + section);
  switch (c.kind) {
    case ExperimentKind::effective: c.params = detail::parse_effective(std::move(s)); break;
    case ExperimentKind::homogenize: c.params = detail::parse_homogenize(std::move(s), d); break;
    case ExperimentKind::scenery: c.params = detail::parse_scenery(std::move(s)); break;
    case ExperimentKind::corrector: c.params = detail::parse_corrector(std::move(s)); break;
    case ExperimentKind::spde: c.params = detail::parse_spde(std::move(s), d); break;
    case ExperimentKind::field_check: c.params = detail::parse_field_check(std::move(s), d); break;
  }
  r.finish();

  if (c.kind == ExperimentKind::corrector && c.backend.kind != "harmonic")
    throw ConfigError("/backend/kind", "the corrector pipeline needs the harmonic backend");
  return c;
}

inline nlohmann::json ExperimentConfig::to_json() const {
  using nlohmann::json;
  json j;
  j["kind"] = to_string(kind);
  j["model"] = model.to_json();
  if (model.separable()) j["model"].erase("taper_radius");
  j["backend"] = {{"kind", backend.kind}, {"modes", backend.modes}};
  if (backend.grid) {
    auto g = backend.grid->to_json();
    g.erase("d");
    j["backend"]["grid"] = g;
  }
  j["master_seed"] = master_seed;
  j["workers"] = workers;
  j["output"] = output;
  j["check"] = check;
  j["max_work"] = max_work;
  json s;
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, EffectiveParams>) {
          std::vector<std::string> names;
          for (auto r : p.regimes) names.push_back(to_string(r));
          s = {{"regimes", names}, {"rel_tol", p.rel_tol}, {"spectral_rel_tol", p.spectral_rel_tol}};
        } else if constexpr (std::is_same_v<P, HomogenizeParams>) {
          s = {{"alphas", p.alphas}, {"epsilons", p.epsilons}, {"n_paths", p.n_paths}, {"n_fields", p.n_fields},
               {"dt", p.dt},         {"t", p.t},               {"x", p.x},             {"initial", p.initial.to_json()}};
        } else if constexpr (std::is_same_v<P, SceneryParams>) {
          const auto& a = p.pair;
          const auto& b = p.second_moment;
          s = {{"alpha", p.alpha},
               {"epsilons", p.epsilons},
               {"n_paths", p.n_paths},
               {"n_fields", p.n_fields},
               {"ds", p.ds},
               {"t", p.t},
               {"gamma1", p.gamma1},
               {"gamma2", p.gamma2},
               {"pair_functional",
                {{"epsilon", a.epsilon},
                 {"beta", a.beta},
                 {"gamma", a.gamma},
                 {"n_paths", a.n_paths},
                 {"independent_epsilons", a.independent_epsilons},
                 {"independent_pairs", a.independent_pairs},
                 {"ds", a.ds},
                 {"t", a.t}}},
               {"second_moment",
                {{"epsilon", b.epsilon},
                 {"alpha", b.alpha},
                 {"t", b.t},
                 {"n_fields", b.n_fields},
                 {"n_paths", b.n_paths},
                 {"ds", b.ds},
                 {"constant", b.constant}}}};
        } else if constexpr (std::is_same_v<P, CorrectorParams>) {
          const auto& e = p.exactness;
          const auto& m = p.martingale;
          s = {{"alpha", p.alpha},
               {"lambdas", p.lambdas},
               {"exactness", {{"epsilon", e.epsilon}, {"points", e.points}, {"fd_h", e.fd_h}, {"box", e.box}}},
               {"martingale",
                {{"epsilon", m.epsilon},
                 {"t", m.t},
                 {"n_fields", m.n_fields},
                 {"n_paths", m.n_paths},
                 {"levels", m.levels},
                 {"ds", m.ds}}}};
        } else if constexpr (std::is_same_v<P, SpdeParams>) {
          json moments = json::array();
          for (const auto& m : p.moments) moments.push_back({m[0], m[1]});
          s = {{"eps_moll", p.eps_moll},     {"cauchy_dt", p.cauchy_dt},         {"t", p.t},
               {"x", p.x},                   {"initial", p.initial.to_json()},   {"moments", moments},
               {"epsilons", p.epsilons},     {"n_fields", p.n_fields},           {"n_path_tuples", p.n_path_tuples},
               {"dt", p.dt},                 {"limit_tuples", p.limit_tuples},   {"limit_dt", p.limit_dt}};
        } else {
          json lags = json::array(), sites = json::array();
          for (const auto& l : p.lags) lags.push_back(detail::site_json(l));
          for (const auto& w : p.wick_sites) sites.push_back(detail::site_json(w));
          s = {{"backends", p.backends},
               {"n_realizations", p.n_realizations},
               {"lags", lags},
               {"wick_backends", p.wick_backends},
               {"wick_sites", sites}};
        }
      },
      params);
  j[to_string(kind)] = s;
  return j;
}

}  // namespace scenery
