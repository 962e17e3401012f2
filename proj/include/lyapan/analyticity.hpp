#pragma once

// Complex perturbations mu_z = mu + z nu with nu of mass zero: the exact
// polynomial dependence of Q^n on z, and Taylor coefficients of the top
// exponent's holomorphic extension from values on a circle.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "lyapan/lyapunov.hpp"

namespace lyapan {

struct PerturbationDirection {
  ComplexAtomicMeasure nu;
  bool normalized = false;

  /// Validates |mass(nu)| < 1e-12; with normalize, rescales nu to total variation 1.
  static PerturbationDirection make(const ComplexAtomicMeasure& nu, bool normalize = false) {
    const Complex m = mass(nu);
    if (std::abs(m) >= 1e-12)
      throw DomainError("perturbation direction must have mass zero, got |mass| = " + std::to_string(std::abs(m)));
    PerturbationDirection out{nu, normalize};
    if (normalize) {
      const double tv = total_variation(nu);
      if (!(tv > 0.0)) throw DomainError("cannot normalize the zero direction");
      out.nu = scale(1.0 / tv, nu);
    }
    return out;
  }
  double tv() const { return total_variation(nu); }
};

enum class ObservableConvention { perturbed, frozen };

inline const char* to_string(ObservableConvention c) {
  return c == ObservableConvention::perturbed ? "perturbed" : "frozen";
}

/// Degree bound of Q^n_{mu_z} phi in z: n letters, plus one for phi_{mu_z} = phi_mu + z phi_nu.
inline int degree_bound(int n, ObservableConvention c) { return c == ObservableConvention::perturbed ? n + 1 : n; }

struct ZPolynomial {
  std::vector<Complex> coefficients;  // ascending degree, trailing entries below 1e-12 trimmed
  int n = 0;
  double pruned_variation = 0.0;
  ObservableConvention convention = ObservableConvention::perturbed;

  int degree() const { return static_cast<int>(coefficients.size()) - 1; }
  Complex operator()(Complex z) const {
    Complex acc{};
    for (auto it = coefficients.rbegin(); it != coefficients.rend(); ++it) acc = acc * z + *it;
    return acc;
  }
};

namespace detail {

inline AtomicMeasure<Matrix, ZPoly> tagged_alphabet(const ComplexAtomicMeasure& mu, const ComplexAtomicMeasure& nu) {
  std::vector<AtomicMeasure<Matrix, ZPoly>::Atom> atoms;
  for (const auto& a : mu) atoms.push_back({a.point, ZPoly::constant(a.weight)});
  for (const auto& a : nu) atoms.push_back({a.point, ZPoly::linear(0.0, a.weight)});
  return AtomicMeasure<Matrix, ZPoly>(std::move(atoms), mu.dedup_tolerance());
}

inline std::vector<Complex> trim(std::vector<Complex> c, double tol = 1e-12) {
  while (c.size() > 1 && std::abs(c.back()) < tol) c.pop_back();
  if (c.empty()) c.push_back(0.0);
  return c;
}

}  // namespace detail

/// Coefficients in z of (Q^n_{mu + z nu} phi_z)(v0), where phi_z is phi_{mu+z nu}
/// (perturbed) or phi_mu (frozen). Each letter carries weight w_mu(g) + z w_nu(g).
inline ZPolynomial qn_polynomial(const ComplexAtomicMeasure& mu, const PerturbationDirection& dir, int n,
                                 const ProjectivePoint& v0, const PrunePolicy& prune = PrunePolicy::none(),
                                 ObservableConvention convention = ObservableConvention::perturbed) {
  if (n < 0) throw DomainError("qn_polynomial needs n >= 0");
  const auto alphabet = detail::tagged_alphabet(mu, dir.nu);
  std::vector<Letter<ZPoly>> letters;
  for (const auto& a : alphabet) letters.push_back({a.point.eigen(), a.weight});
  ProjectiveOrbit<ZPoly> orbit({{v0, ZPoly::constant(1.0)}}, mu.dedup_tolerance());
  double pruned = 0.0;
  double letters_tv = 0.0;  // bound on the weight size at unit |z|
  for (const auto& l : letters)
    for (const auto& c : l.w.c) letters_tv += std::abs(c);
  for (int k = 1; k <= n; ++k) {
    orbit = orbit_step(letters, orbit, prune.capacity, mu.dedup_tolerance());
    pruned += detail::prune_atoms(orbit, prune) * std::pow(letters_tv, n - k);
  }
  const Observable phi_mu = phi_observable(mu);
  const Observable phi_nu = phi_observable(dir.nu);
  const auto total = integrate(orbit, [&](const ProjectivePoint& p) {
    if (convention == ObservableConvention::frozen) return ZPoly::constant(phi_mu(p));
    return ZPoly::linear(phi_mu(p), phi_nu(p));
  });
  ZPolynomial out;
  out.coefficients = detail::trim(total.c);
  out.n = n;
  out.pruned_variation = pruned;
  out.convention = convention;
  return out;
}

struct DegreeReport {
  int n = 0;
  int nodes = 0;
  int degree_bound = 0;
  ObservableConvention convention = ObservableConvention::perturbed;
  std::vector<Complex> interpolated;  // all `nodes` DFT coefficients
  double spurious_ratio = 0.0;        // max |c_j|, j > bound, over max |c_j|
  double crosscheck = 0.0;            // max |c_j - polynomial_j| over max |c_j|
  int observed_degree = 0;            // highest j with |c_j| above 1e-8 * max
  bool passed = false;
};

/// Evaluates Q^n at z on a circle of roots of unity by direct measure arithmetic
/// (convolution powers of mu + z nu), interpolates, and checks the degree bound.
inline DegreeReport degree_check(const ComplexAtomicMeasure& mu, const PerturbationDirection& dir, int n,
                                 const ProjectivePoint& v0, int nodes,
                                 ObservableConvention convention = ObservableConvention::perturbed,
                                 double radius = 1.0) {
  if (nodes < n + 3) throw DomainError("degree_check needs nodes >= n + 3");
  DegreeReport rep;
  rep.n = n;
  rep.nodes = nodes;
  rep.convention = convention;
  rep.degree_bound = degree_bound(n, convention);
  if (std::pow(radius, -rep.degree_bound) > 1e8 || std::pow(radius, rep.degree_bound) > 1e8)
    throw NumericError("degree_check: radius " + std::to_string(radius) +
                       " makes the interpolation ill-conditioned; use a radius closer to 1");
  std::vector<Complex> values(static_cast<std::size_t>(nodes));
  const Observable phi_mu = phi_observable(mu);
  for (int k = 0; k < nodes; ++k) {
    const Complex z = std::polar(radius, 2.0 * std::numbers::pi * k / nodes);
    const auto mz = add(mu, dir.nu, z);
    const Observable phi = convention == ObservableConvention::perturbed ? phi_observable(mz) : phi_mu;
    values[static_cast<std::size_t>(k)] = n == 0 ? phi(v0) : apply_Qn_exact(mz, phi, v0, n).value;
    if (!std::isfinite(values[static_cast<std::size_t>(k)].real()) ||
        !std::isfinite(values[static_cast<std::size_t>(k)].imag()))
      throw NumericError("degree_check: non-finite value at node " + std::to_string(k) + "; use a smaller radius");
  }
  rep.interpolated.assign(static_cast<std::size_t>(nodes), Complex{});
  double cmax = 0.0;
  for (int j = 0; j < nodes; ++j) {
    Complex s{};
    for (int k = 0; k < nodes; ++k)
      s += values[static_cast<std::size_t>(k)] * std::polar(1.0, -2.0 * std::numbers::pi * double(j) * k / nodes);
    rep.interpolated[static_cast<std::size_t>(j)] = s / double(nodes) / std::pow(radius, j);
    cmax = std::max(cmax, std::abs(rep.interpolated[static_cast<std::size_t>(j)]));
  }
  double spurious = 0.0;
  for (int j = 0; j < nodes; ++j) {
    const double a = std::abs(rep.interpolated[static_cast<std::size_t>(j)]);
    if (j > rep.degree_bound) spurious = std::max(spurious, a);
    if (a > 1e-8 * cmax) rep.observed_degree = j;
  }
  rep.spurious_ratio = cmax > 0.0 ? spurious / cmax : 0.0;
  const auto poly = qn_polynomial(mu, dir, n, v0, PrunePolicy::none(), convention);
  double diff = 0.0;
  for (int j = 0; j < nodes; ++j) {
    const Complex pj = j < static_cast<int>(poly.coefficients.size()) ? poly.coefficients[static_cast<std::size_t>(j)]
                                                                      : Complex{};
    diff = std::max(diff, std::abs(pj - rep.interpolated[static_cast<std::size_t>(j)]));
  }
  rep.crosscheck = cmax > 0.0 ? diff / cmax : diff;
  rep.passed = rep.spurious_ratio < 1e-8 && rep.crosscheck < 1e-8;
  return rep;
}

struct CauchyResult {
  std::vector<Complex> coefficients;  // c_0 .. c_{m-1} of the interpolating polynomial
  std::vector<Complex> nodes, values;
  std::vector<Complex> heldout_nodes, heldout_values, heldout_reconstruction;
  double residual = 0.0;  // max |reconstruction - value| at held-out circle points
};

/// Taylor coefficients of f at 0 from m equispaced samples on |z| = r:
/// c_j = (1/m) sum_i f(z_i) z_i^{-j}. Held-out points at half-step angles
/// measure the aliasing of the degree m-1 reconstruction.
inline CauchyResult cauchy_taylor(const std::function<Complex(Complex)>& f, double r, int m,
                                  bool heldout = true) {
  if (!(r > 0.0)) throw DomainError("circle radius must be positive");
  if (m < 2) throw DomainError("need at least two circle points");
  CauchyResult out;
  for (int i = 0; i < m; ++i) {
    const Complex z = std::polar(r, 2.0 * std::numbers::pi * i / m);
    out.nodes.push_back(z);
    out.values.push_back(f(z));
  }
  out.coefficients.assign(static_cast<std::size_t>(m), Complex{});
  for (int j = 0; j < m; ++j) {
    Complex s{};
    for (int i = 0; i < m; ++i)
      s += out.values[static_cast<std::size_t>(i)] * std::polar(1.0, -2.0 * std::numbers::pi * double(j) * i / m);
    out.coefficients[static_cast<std::size_t>(j)] = s / double(m) / std::pow(r, j);
  }
  if (heldout) {
    for (int i = 0; i < m; ++i) {
      const Complex z = std::polar(r, 2.0 * std::numbers::pi * (i + 0.5) / m);
      const Complex v = f(z);
      Complex rec{};
      for (int j = m - 1; j >= 0; --j) rec = rec * z + out.coefficients[static_cast<std::size_t>(j)];
      out.heldout_nodes.push_back(z);
      out.heldout_values.push_back(v);
      out.heldout_reconstruction.push_back(rec);
      out.residual = std::max(out.residual, std::abs(rec - v));
    }
  }
  return out;
}

struct TaylorReport {
  std::vector<Complex> coefficients;  // c_0 .. c_k
  double circle_radius = 0.0;
  int n_used = 0;  // largest iteration count over circle points
  double reconstruction_residual = 0.0;
  double certified_radius = 0.0;  // TV radius of the certified neighborhood (0 when not certified)
  std::string radius_source;      // "certificate", "reduction" or "explicit"
  double center_value = 0.0;
  double center_mismatch = 0.0;  // |c_0 - L1(center)|
  double max_mass_defect = 0.0;  // max |mass(mu_z) - 1| over evaluated measures
  CauchyResult circle;
};

struct TaylorOptions {
  int order = 2;
  std::optional<double> radius;  // in units of z
  double tol = 1e-9;
  int nodes = 0;  // 0 means max(16, 4 * order)
  std::optional<ContractionCertificate> certificate;
  std::optional<ReductionPlan> reduction;
  IterationOptions iteration{};
};

namespace detail {

inline Complex lyapunov_value_at(const ComplexAtomicMeasure& mu, const ComplexAtomicMeasure& nu, Complex z,
                                 double tol, const IterationOptions& iter, double& mass_defect, int& steps) {
  const auto mz = add(mu, nu, z);
  mass_defect = std::max(mass_defect, std::abs(mass(mz) - 1.0));
  if (std::abs(mass(mz) - 1.0) > 1e-10)
    throw DomainError("perturbed measure left the mass-one space at z = (" + std::to_string(z.real()) + ", " +
                      std::to_string(z.imag()) + ")");
  try {
    IterationOptions o = iter;
    o.extra_base_points = 0;
    const auto r = lyapunov_iterative(mz, tol, std::nullopt, std::nullopt, o);
    steps = std::max(steps, r.n_used);
    return r.value;
  } catch (const std::exception& e) {
    throw ConvergenceError("iteration failed at z = (" + std::to_string(z.real()) + ", " +
                           std::to_string(z.imag()) + "), which may lie outside the contraction region: " +
                           e.what());
  }
}

}  // namespace detail

/// Taylor coefficients in z of L1(mu + z nu), extracted on a circle. The
/// radius comes from the certificate (half its TV radius by default), from a
/// reduction to the dominant invariant block, or is given explicitly.
inline TaylorReport taylor_coefficients(const ComplexAtomicMeasure& mu, const PerturbationDirection& dir,
                                        const TaylorOptions& opt) {
  require_probability(mu, "taylor_coefficients");
  if (opt.order < 1) throw DomainError("taylor_coefficients needs order >= 1");
  TaylorReport rep;
  const double tvnu = dir.tv();
  ComplexAtomicMeasure center = mu, direction = dir.nu;
  if (opt.certificate) {
    rep.certified_radius = opt.certificate->tv_radius;
    rep.radius_source = "certificate";
    const double limit = tvnu > 0.0 ? rep.certified_radius / tvnu : std::numeric_limits<double>::infinity();
    rep.circle_radius = opt.radius ? *opt.radius : (tvnu > 0.0 ? 0.5 * limit : 1.0);
    if (rep.circle_radius > limit)
      throw DomainError("radius " + std::to_string(rep.circle_radius) + " exceeds the certified limit " +
                        std::to_string(limit));
  } else if (opt.reduction && !opt.reduction->identity) {
    center = opt.reduction->apply(mu);
    direction = opt.reduction->apply(dir.nu);
    rep.radius_source = "reduction";
    rep.circle_radius = opt.radius ? *opt.radius : (tvnu > 0.0 ? 0.1 / tvnu : 1.0);
  } else if (opt.radius) {
    rep.radius_source = "explicit";
    rep.circle_radius = *opt.radius;
  } else {
    throw DomainError("taylor_coefficients needs a certificate, a reduction plan or an explicit radius");
  }
  if (!(rep.circle_radius > 0.0)) throw DomainError("circle radius must be positive");

  const double inner_tol = opt.tol / 10.0;
  int steps = 0;
  double defect = 0.0;
  auto f = [&](Complex z) {
    return detail::lyapunov_value_at(center, direction, z, inner_tol, opt.iteration, defect, steps);
  };
  const int m = opt.nodes > 0 ? opt.nodes : std::max(16, 4 * opt.order);
  rep.circle = cauchy_taylor(f, rep.circle_radius, m);
  rep.coefficients.assign(rep.circle.coefficients.begin(),
                          rep.circle.coefficients.begin() + std::min(m, opt.order + 1));
  rep.reconstruction_residual = rep.circle.residual;
  rep.n_used = steps;
  rep.max_mass_defect = defect;
  IterationOptions o = opt.iteration;
  o.extra_base_points = 0;
  rep.center_value = lyapunov_iterative(center, inner_tol, std::nullopt, std::nullopt, o).L1;
  rep.center_mismatch = std::abs(rep.coefficients[0] - rep.center_value);
  return rep;
}

/// Max over interior points |w| = r/2 of |f(w) - Cauchy reconstruction from circle values|.
inline double holomorphy_residual(const std::function<Complex(Complex)>& f, double r, int samples,
                                  int circle_nodes = 32) {
  const auto circle = cauchy_taylor(f, r, circle_nodes, false);
  double worst = 0.0;
  for (int i = 0; i < samples; ++i) {
    const Complex w = std::polar(0.5 * r, 2.0 * std::numbers::pi * (i + 0.25) / samples);
    Complex rec{};
    for (int j = circle_nodes - 1; j >= 0; --j) rec = rec * w + circle.coefficients[static_cast<std::size_t>(j)];
    worst = std::max(worst, std::abs(rec - f(w)));
  }
  return worst;
}

/// holomorphy_residual for z -> L1(mu + z nu), evaluated like taylor_coefficients.
inline double holomorphy_residual(const ComplexAtomicMeasure& mu, const PerturbationDirection& dir, double r,
                                  int samples, double tol = 1e-10, const std::optional<ReductionPlan>& plan = {},
                                  const IterationOptions& iter = {}) {
  const ComplexAtomicMeasure center = plan && !plan->identity ? plan->apply(mu) : mu;
  const ComplexAtomicMeasure direction = plan && !plan->identity ? plan->apply(dir.nu) : dir.nu;
  int steps = 0;
  double defect = 0.0;
  return holomorphy_residual(
      [&](Complex z) { return detail::lyapunov_value_at(center, direction, z, tol, iter, defect, steps); }, r,
      samples);
}

}  // namespace lyapan
