#pragma once

// Adaptive quadrature for the smooth, rapidly decaying integrands that appear in
// effective-coefficient and spectral computations:
//   * 1-D: globally adaptive Gauss-Kronrod (7/15) with QUADPACK error scaling,
//   * semi-infinite ranges mapped by t = u / (1 - u) with grading near u = 1,
//   * (d+1)-D spectral integrals, either reduced to (xi0, |xi|) when the caller
//     declares radial symmetry in xi, or by adaptive Genz-Malik cubature.
// Every routine is deterministic: identical inputs give bit-identical outputs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <queue>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "scenery/errors.hpp"

namespace scenery {

struct QuadratureSpec {
  double rel_tol = 1e-8;
  double abs_tol = 1e-12;
  std::size_t max_evals = 10'000'000;

  void validate() const {
    if (!(rel_tol > 0.0)) throw DomainError("QuadratureSpec: rel_tol must be > 0");
    if (!(abs_tol >= 0.0)) throw DomainError("QuadratureSpec: abs_tol must be >= 0");
    if (max_evals < 100) throw DomainError("QuadratureSpec: max_evals must be >= 100");
  }
};

struct QuadResult {
  double value = 0.0;
  double error = 0.0;
  std::size_t evals = 0;
  bool converged = false;
};

enum class Isotropy { none, radial };

namespace detail {

// 15-point Kronrod abscissae (descending) and weights; 7-point Gauss weights
// for the odd Kronrod nodes, last entry is the centre.
inline constexpr std::array<double, 8> kXgk = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 8> kWgk = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr std::array<double, 4> kWg = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Panel {
  double a = 0.0;
  double b = 0.0;
  double value = 0.0;
  double error = 0.0;
};

template <class F>
Panel gauss_kronrod15(F& f, double a, double b) {
  constexpr double epmach = std::numeric_limits<double>::epsilon();
  constexpr double uflow = std::numeric_limits<double>::min();
  const double centr = 0.5 * (a + b);
  const double hlgth = 0.5 * (b - a);
  const double dhlgth = std::abs(hlgth);

  std::array<double, 7> fv1{}, fv2{};
  const double fc = f(centr);
  double resg = fc * kWg[3];
  double resk = fc * kWgk[7];
  double resabs = std::abs(resk);
  for (int j = 0; j < 3; ++j) {
    const int jtw = 2 * j + 1;
    const double absc = hlgth * kXgk[jtw];
    const double f1 = f(centr - absc);
    const double f2 = f(centr + absc);
    fv1[jtw] = f1;
    fv2[jtw] = f2;
    resg += kWg[j] * (f1 + f2);
    resk += kWgk[jtw] * (f1 + f2);
    resabs += kWgk[jtw] * (std::abs(f1) + std::abs(f2));
  }
  for (int j = 0; j < 4; ++j) {
    const int jtwm1 = 2 * j;
    const double absc = hlgth * kXgk[jtwm1];
    const double f1 = f(centr - absc);
    const double f2 = f(centr + absc);
    fv1[jtwm1] = f1;
    fv2[jtwm1] = f2;
    resk += kWgk[jtwm1] * (f1 + f2);
    resabs += kWgk[jtwm1] * (std::abs(f1) + std::abs(f2));
  }
  const double reskh = 0.5 * resk;
  double resasc = kWgk[7] * std::abs(fc - reskh);
  for (int j = 0; j < 7; ++j) resasc += kWgk[j] * (std::abs(fv1[j] - reskh) + std::abs(fv2[j] - reskh));

  Panel p{a, b, resk * hlgth, std::abs((resk - resg) * hlgth)};
  resabs *= dhlgth;
  resasc *= dhlgth;
  if (resasc != 0.0 && p.error != 0.0) p.error = resasc * std::min(1.0, std::pow(200.0 * p.error / resasc, 1.5));
  if (resabs > uflow / (50.0 * epmach)) p.error = std::max(epmach * 50.0 * resabs, p.error);
  if (!std::isfinite(p.value)) p.error = std::numeric_limits<double>::infinity();
  return p;
}

inline double tolerance(const QuadratureSpec& spec, double value) {
  return std::max(spec.abs_tol, spec.rel_tol * std::abs(value));
}

}  // namespace detail

/// Globally adaptive Gauss-Kronrod integration of f over [a, b].
/// On budget exhaustion the best estimate is returned with converged = false.
template <class F>
QuadResult integrate_interval(F&& f, double a, double b, const QuadratureSpec& spec = {}) {
  spec.validate();
  if (a == b) return {0.0, 0.0, 0, true};

  std::vector<detail::Panel> panels;
  panels.push_back(detail::gauss_kronrod15(f, a, b));
  std::size_t evals = 15;

  auto by_error = [&panels](std::size_t i, std::size_t j) { return panels[i].error < panels[j].error; };
  std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(by_error)> heap(by_error);
  heap.push(0);

  double total = panels[0].value;
  double total_err = panels[0].error;
  bool converged = false;
  std::size_t iterations = 0;

  while (true) {
    if (total_err <= detail::tolerance(spec, total)) {
      converged = true;
      break;
    }
    if (heap.empty() || evals + 30 > spec.max_evals) break;

    const std::size_t worst = heap.top();
    heap.pop();
    const detail::Panel p = panels[worst];
    const double mid = 0.5 * (p.a + p.b);
    // Panels too narrow to split further stay in the sum with their error.
    if (std::abs(p.b - p.a) <= 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(mid))) continue;

    const detail::Panel left = detail::gauss_kronrod15(f, p.a, mid);
    const detail::Panel right = detail::gauss_kronrod15(f, mid, p.b);
    evals += 30;
    panels[worst] = left;
    panels.push_back(right);
    heap.push(worst);
    heap.push(panels.size() - 1);

    if (++iterations % 64 == 0) {
      total = 0.0;
      total_err = 0.0;
      for (const auto& q : panels) {
        total += q.value;
        total_err += q.error;
      }
    } else {
      total += left.value + right.value - p.value;
      total_err += left.error + right.error - p.error;
    }
  }

  total = 0.0;
  total_err = 0.0;
  for (const auto& q : panels) {
    total += q.value;
    total_err += q.error;
  }
  if (!converged) converged = total_err <= detail::tolerance(spec, total);
  return {total, total_err, evals, converged};
}

/// Integral of f over [0, inf) via t = u / (1 - u). The map variable is graded
/// toward the endpoint, u = 1 - (1 - v)^2, so algebraic tails down to t^{-3/2}
/// give a bounded integrand in v.
template <class F>
QuadResult integrate_semi_infinite(F&& f, const QuadratureSpec& spec = {}) {
  auto mapped = [&f](double v) {
    const double w = 1.0 - v;
    const double om = w * w;
    const double t = (1.0 - om) / om;
    if (!std::isfinite(t)) return 0.0;
    const double val = f(t) * 2.0 / (om * w);
    return std::isfinite(val) ? val : 0.0;
  };
  return integrate_interval(mapped, 0.0, 1.0, spec);
}

/// Integral of f over the whole real line, folded onto [0, inf).
template <class F>
QuadResult integrate_real_line(F&& f, const QuadratureSpec& spec = {}) {
  auto folded = [&f](double t) { return f(t) + f(-t); };
  return integrate_semi_infinite(folded, spec);
}

/// Surface area of the unit sphere S^{d-1} in R^d.
inline double unit_sphere_area(int d) {
  return 2.0 * std::pow(std::numbers::pi, 0.5 * d) / std::tgamma(0.5 * d);
}

namespace detail {

// Adaptive Genz-Malik (degree 7 with embedded degree 5) cubature on the box
// (-1, 1)^n, n >= 2.
template <class F>
QuadResult genz_malik(F& f, int n, const QuadratureSpec& spec) {
  constexpr int kMax = 5;
  const double lambda2 = std::sqrt(9.0 / 70.0);
  const double lambda4 = std::sqrt(9.0 / 10.0);
  const double lambda5 = std::sqrt(9.0 / 19.0);
  const double nn = static_cast<double>(n);
  const double w1 = (12824.0 - 9120.0 * nn + 400.0 * nn * nn) / 19683.0;
  const double w2 = 980.0 / 6561.0;
  const double w3 = (1820.0 - 400.0 * nn) / 19683.0;
  const double w4 = 200.0 / 19683.0;
  const double w5 = 6859.0 / 19683.0 / static_cast<double>(1u << n);
  const double e1 = (729.0 - 950.0 * nn + 50.0 * nn * nn) / 729.0;
  const double e2 = 245.0 / 486.0;
  const double e3 = (265.0 - 100.0 * nn) / 1458.0;
  const double e4 = 25.0 / 729.0;
  const double ratio = (lambda2 * lambda2) / (lambda4 * lambda4);
  const std::size_t points_per_box = 1 + 4 * n + 2 * n * (n - 1) + (1u << n);

  struct Box {
    std::array<double, kMax> c{};
    std::array<double, kMax> h{};
    double value = 0.0;
    double error = 0.0;
    int split = 0;
  };

  auto evaluate = [&](Box& b) {
    std::array<double, kMax> p{};
    auto at = [&](const std::array<double, kMax>& q) { return f(std::span<const double>(q.data(), n)); };
    double vol = 1.0;
    for (int i = 0; i < n; ++i) vol *= 2.0 * b.h[i];
    p = b.c;
    const double f0 = at(p);
    double s2 = 0.0, s3 = 0.0, s4 = 0.0, s5 = 0.0;
    double best_diff = -1.0;
    for (int i = 0; i < n; ++i) {
      p = b.c;
      p[i] = b.c[i] - lambda2 * b.h[i];
      const double a2m = at(p);
      p[i] = b.c[i] + lambda2 * b.h[i];
      const double a2p = at(p);
      p[i] = b.c[i] - lambda4 * b.h[i];
      const double a4m = at(p);
      p[i] = b.c[i] + lambda4 * b.h[i];
      const double a4p = at(p);
      s2 += a2m + a2p;
      s3 += a4m + a4p;
      const double diff = std::abs(a2m + a2p - 2.0 * f0 - ratio * (a4m + a4p - 2.0 * f0));
      if (diff > best_diff * (1.0 + 1e-12) || (std::abs(diff - best_diff) <= 1e-12 * best_diff && b.h[i] > b.h[b.split])) {
        best_diff = diff;
        b.split = i;
      }
    }
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        for (int si = -1; si <= 1; si += 2) {
          for (int sj = -1; sj <= 1; sj += 2) {
            p = b.c;
            p[i] = b.c[i] + si * lambda4 * b.h[i];
            p[j] = b.c[j] + sj * lambda4 * b.h[j];
            s4 += at(p);
          }
        }
      }
    }
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
      p = b.c;
      for (int i = 0; i < n; ++i) p[i] = b.c[i] + ((mask >> i) & 1u ? lambda5 : -lambda5) * b.h[i];
      s5 += at(p);
    }
    const double r7 = vol * (w1 * f0 + w2 * s2 + w3 * s3 + w4 * s4 + w5 * s5);
    const double r5 = vol * (e1 * f0 + e2 * s2 + e3 * s3 + e4 * s4);
    b.value = r7;
    b.error = std::isfinite(r7) ? std::abs(r7 - r5) : std::numeric_limits<double>::infinity();
  };

  std::vector<Box> boxes(1);
  for (int i = 0; i < n; ++i) {
    boxes[0].c[i] = 0.0;
    boxes[0].h[i] = 1.0;
  }
  evaluate(boxes[0]);
  std::size_t evals = points_per_box;

  auto by_error = [&boxes](std::size_t i, std::size_t j) { return boxes[i].error < boxes[j].error; };
  std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(by_error)> heap(by_error);
  heap.push(0);
  double total = boxes[0].value;
  double total_err = boxes[0].error;
  bool converged = false;
  std::size_t iterations = 0;

  while (true) {
    if (total_err <= tolerance(spec, total)) {
      converged = true;
      break;
    }
    if (evals + 2 * points_per_box > spec.max_evals) break;
    const std::size_t worst = heap.top();
    heap.pop();
    Box lo = boxes[worst];
    Box hi = boxes[worst];
    const int k = lo.split;
    lo.h[k] *= 0.5;
    hi.h[k] *= 0.5;
    lo.c[k] -= lo.h[k];
    hi.c[k] += hi.h[k];
    evaluate(lo);
    evaluate(hi);
    evals += 2 * points_per_box;
    const double old_value = boxes[worst].value, old_err = boxes[worst].error;
    boxes[worst] = lo;
    boxes.push_back(hi);
    heap.push(worst);
    heap.push(boxes.size() - 1);
    if (++iterations % 64 == 0) {
      total = 0.0;
      total_err = 0.0;
      for (const auto& b : boxes) {
        total += b.value;
        total_err += b.error;
      }
    } else {
      total += lo.value + hi.value - old_value;
      total_err += lo.error + hi.error - old_err;
    }
  }
  total = 0.0;
  total_err = 0.0;
  for (const auto& b : boxes) {
    total += b.value;
    total_err += b.error;
  }
  if (!converged) converged = total_err <= tolerance(spec, total);
  return {total, total_err, evals, converged};
}

}  // namespace detail

/// Integral of g(xi0, xi) over R x R^d.
///
/// g is called as g(double xi0, std::span<const double> xi) with xi.size() == d.
/// With Isotropy::radial the caller asserts g depends on xi only through |xi|;
/// the integral is then reduced to S_{d-1} * int_0^inf r^{d-1} int_R g(xi0, r e_1).
/// Otherwise every coordinate is mapped by x = u / (1 - u^2) and integrated by
/// adaptive Genz-Malik cubature.
template <class G>
QuadResult integrate_spectral(G&& g, int d, const QuadratureSpec& spec = {}, Isotropy iso = Isotropy::none) {
  spec.validate();
  if (d < 1 || d > 4) throw DomainError("integrate_spectral: dimension must be in 1..4");

  if (iso == Isotropy::radial) {
    QuadratureSpec inner_spec{spec.rel_tol * 0.1, spec.abs_tol * 0.1, std::max<std::size_t>(1000, spec.max_evals / 50)};
    std::size_t inner_evals = 0;
    bool inner_ok = true;
    const double area = unit_sphere_area(d);
    std::array<double, 4> xi{};
    auto inner = [&](double r) {
      xi.fill(0.0);
      xi[0] = r;
      const std::span<const double> view(xi.data(), static_cast<std::size_t>(d));
      const QuadResult in = integrate_real_line([&](double xi0) { return g(xi0, view); }, inner_spec);
      inner_evals += in.evals;
      inner_ok = inner_ok && in.converged;
      return in;
    };
    QuadResult out = integrate_semi_infinite([&](double r) { return area * std::pow(r, d - 1) * inner(r).value; }, spec);
    // inner errors propagate through the radial weight; a coarse pass is enough for an estimate
    const QuadResult err = integrate_semi_infinite([&](double r) { return area * std::pow(r, d - 1) * inner(r).error; },
                                                   QuadratureSpec{0.1, spec.abs_tol, spec.max_evals});
    out.evals += inner_evals;
    out.error += std::abs(err.value);
    out.converged = out.converged && inner_ok && out.evals <= spec.max_evals;
    return out;
  }

  const int n = d + 1;
  auto mapped = [&g, d](std::span<const double> u) {
    std::array<double, 4> xi{};
    double jac = 1.0;
    double x[5];
    for (int i = 0; i <= d; ++i) {
      const double ui = u[i];
      const double om = 1.0 - ui * ui;
      x[i] = ui / om;
      jac *= (1.0 + ui * ui) / (om * om);
    }
    for (int i = 0; i < d; ++i) xi[i] = x[i + 1];
    const double v = g(x[0], std::span<const double>(xi.data(), static_cast<std::size_t>(d))) * jac;
    return std::isfinite(v) ? v : 0.0;
  };
  return detail::genz_malik(mapped, n, spec);
}

/// Gauss-Legendre nodes and weights on [a, b].
struct GaussLegendre {
  std::vector<double> nodes;
  std::vector<double> weights;

  GaussLegendre(std::size_t n, double a, double b) : nodes(n), weights(n) {
    if (n == 0) throw DomainError("GaussLegendre: need at least one node");
    const std::size_t m = (n + 1) / 2;
    const double xm = 0.5 * (b + a), xl = 0.5 * (b - a);
    for (std::size_t i = 0; i < m; ++i) {
      double z = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
      double pp = 0.0;
      for (int iter = 0; iter < 100; ++iter) {
        double p1 = 1.0, p2 = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double p3 = p2;
          p2 = p1;
          p1 = ((2.0 * j + 1.0) * z * p2 - j * p3) / (j + 1.0);
        }
        pp = n * (z * p1 - p2) / (z * z - 1.0);
        const double z1 = z;
        z = z1 - p1 / pp;
        if (std::abs(z - z1) <= 1e-15) break;
      }
      nodes[i] = xm - xl * z;
      nodes[n - 1 - i] = xm + xl * z;
      weights[i] = 2.0 * xl / ((1.0 - z * z) * pp * pp);
      weights[n - 1 - i] = weights[i];
    }
  }
};

}  // namespace scenery
