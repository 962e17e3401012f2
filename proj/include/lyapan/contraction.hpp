#pragma once

// Average Hoelder constant k_alpha of the projective action: certified upper
// bounds through the single-point singular-value integrand, sampled pairwise
// lower bounds, and the search for a contraction certificate.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <queue>
#include <vector>

#include "lyapan/measures.hpp"
#include "lyapan/projective_grid.hpp"

namespace lyapan {

/// Branch-and-bound over cells of projective space. Each cell carries an upper
/// bound of the integrand valid on the whole cell; cells are split until the
/// largest remaining upper bound is within rel_gap of the best sampled value.
struct SupGridSpec {
  int cells_2d = 2048;              // initial angular cells for d = 2
  int cells_nd = 8192;              // target initial cell count for d >= 3
  double rel_gap = 1e-9;            // stop when max cell bound <= best value * (1 + rel_gap)
  std::size_t max_splits = 400000;  // budget; the bound stays certified, only looser
  double max_work = 2e8;            // budget in atom evaluations, for measures with many atoms
  // Stop refining once a sampled value reaches this level: the sup is then
  // known to be at least this large and the returned bound is merely loose.
  double abandon_above = std::numeric_limits<double>::infinity();
};

struct KalphaBound {
  double value = 0.0;        // certified upper bound
  double best_sampled = 0.0; // integrand value at the best evaluated point (a lower bound for the sup)
  std::size_t splits = 0;
  bool gap_met = false;
};

namespace detail {

struct SupAtom {
  double weight;  // |w| (s1 s2)^alpha
  double s1sq, s2sq, t1;  // d = 2: ||g v||^2 = s1sq cos^2(t - t1) + s2sq sin^2(t - t1)
  double s1, smin;
  Eigen::MatrixXd g;
};

inline std::vector<SupAtom> sup_atoms(const ComplexAtomicMeasure& mu, double alpha) {
  std::vector<SupAtom> out;
  for (const auto& a : mu) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a.point.eigen(), Eigen::ComputeFullV);
    const auto& s = svd.singularValues();
    const double s1 = s(0), s2 = s.size() > 1 ? s(1) : s(0);
    SupAtom at;
    at.weight = std::abs(a.weight) * std::pow(s1 * s2, alpha);
    at.s1sq = s1 * s1;
    at.s2sq = s2 * s2;
    at.s1 = s1;
    at.smin = s(s.size() - 1);
    at.t1 = s.size() == 2 ? std::atan2(svd.matrixV()(1, 0), svd.matrixV()(0, 0)) : 0.0;
    at.g = a.point.eigen();
    out.push_back(std::move(at));
  }
  return out;
}

// min over u in [lo, hi] of cos^2(u)
inline double min_cos2(double lo, double hi) {
  const double half_pi = std::numbers::pi / 2.0;
  const double k = std::ceil((lo - half_pi) / std::numbers::pi);
  if (half_pi + k * std::numbers::pi <= hi) return 0.0;
  const double a = std::cos(lo), b = std::cos(hi);
  return std::min(a * a, b * b);
}

struct Cell {
  double ub;
  std::vector<double> lo, hi;  // d = 2: angle interval; d >= 3: face coordinates
  int face;
  bool operator<(const Cell& o) const { return ub < o.ub; }
};

inline KalphaBound sup_2d(const std::vector<SupAtom>& atoms, double alpha, const SupGridSpec& spec) {
  auto value_at = [&](double t) {
    double s = 0.0;
    for (const auto& a : atoms) {
      const double c = std::cos(t - a.t1), sn = std::sin(t - a.t1);
      s += a.weight / std::pow(a.s1sq * c * c + a.s2sq * sn * sn, alpha);
    }
    return s;
  };
  auto bound_on = [&](double lo, double hi) {
    double s = 0.0;
    for (const auto& a : atoms) {
      const double qmin = a.s2sq + (a.s1sq - a.s2sq) * min_cos2(lo - a.t1, hi - a.t1);
      s += a.weight / std::pow(qmin, alpha);
    }
    return s;
  };
  KalphaBound out;
  std::priority_queue<Cell> heap;
  const double split_work = 4.0 * double(atoms.size());
  const double h = std::numbers::pi / spec.cells_2d;
  for (int i = 0; i < spec.cells_2d; ++i) {
    const double lo = i * h, hi = (i + 1) * h;
    out.best_sampled = std::max({out.best_sampled, value_at(lo), value_at(0.5 * (lo + hi))});
    heap.push(Cell{bound_on(lo, hi), {lo}, {hi}, 0});
  }
  while (true) {
    Cell top = heap.top();
    if (top.ub <= out.best_sampled * (1.0 + spec.rel_gap)) {
      out.gap_met = true;
      break;
    }
    if (out.splits >= spec.max_splits || out.best_sampled >= spec.abandon_above ||
        double(out.splits) * split_work >= spec.max_work)
      break;
    heap.pop();
    ++out.splits;
    const double mid = 0.5 * (top.lo[0] + top.hi[0]);
    for (auto [lo, hi] : {std::pair{top.lo[0], mid}, std::pair{mid, top.hi[0]}}) {
      out.best_sampled = std::max(out.best_sampled, value_at(0.5 * (lo + hi)));
      heap.push(Cell{bound_on(lo, hi), {lo}, {hi}, 0});
    }
  }
  out.value = heap.top().ub * (1.0 + 1e-12);
  return out;
}

inline KalphaBound sup_nd(const std::vector<SupAtom>& atoms, double alpha, std::size_t d,
                          const SupGridSpec& spec) {
  const auto D = static_cast<Eigen::Index>(d);
  const int free = static_cast<int>(d) - 1;
  const int m = std::max(2, static_cast<int>(std::floor(std::pow(double(spec.cells_nd) / d, 1.0 / free))));
  // cell on face x_face = 1 with the other coordinates in [lo, hi]
  auto center_of = [&](int face, const std::vector<double>& lo, const std::vector<double>& hi) {
    Eigen::VectorXd x(D);
    int k = 0;
    for (Eigen::Index j = 0; j < D; ++j) {
      if (j == face) {
        x(j) = 1.0;
      } else {
        x(j) = 0.5 * (lo[k] + hi[k]);
        ++k;
      }
    }
    return x;
  };
  auto bound_on = [&](int face, const std::vector<double>& lo, const std::vector<double>& hi, double& sampled) {
    const Eigen::VectorXd c = center_of(face, lo, hi);
    double rho2 = 0.0;
    for (int k = 0; k < free; ++k) rho2 += 0.25 * (hi[k] - lo[k]) * (hi[k] - lo[k]);
    const double rho = std::sqrt(rho2), cn = c.norm();
    double s = 0.0, sv = 0.0;
    for (const auto& a : atoms) {
      const double gc = (a.g * c).norm();
      const double lower = std::max(a.smin, (gc - a.s1 * rho) / (cn + rho));
      s += a.weight / std::pow(lower * lower, alpha);
      sv += a.weight / std::pow(gc * gc / (cn * cn), alpha);
    }
    sampled = sv;
    return s;
  };
  KalphaBound out;
  std::priority_queue<Cell> heap;
  const double split_work = double(1 << free) * double(atoms.size()) * double(d);
  for (int face = 0; face < static_cast<int>(d); ++face) {
    std::vector<int> idx(static_cast<std::size_t>(free), 0);
    while (true) {
      std::vector<double> lo(free), hi(free);
      for (int k = 0; k < free; ++k) {
        lo[k] = -1.0 + 2.0 * idx[k] / m;
        hi[k] = -1.0 + 2.0 * (idx[k] + 1) / m;
      }
      double sampled = 0.0;
      const double ub = bound_on(face, lo, hi, sampled);
      out.best_sampled = std::max(out.best_sampled, sampled);
      heap.push(Cell{ub, lo, hi, face});
      int k = 0;
      while (k < free && ++idx[k] == m) idx[k++] = 0;
      if (k == free) break;
    }
  }
  while (true) {
    const Cell& top = heap.top();
    if (top.ub <= out.best_sampled * (1.0 + spec.rel_gap)) {
      out.gap_met = true;
      break;
    }
    if (out.splits >= spec.max_splits || out.best_sampled >= spec.abandon_above ||
        double(out.splits) * split_work >= spec.max_work)
      break;
    Cell cell = top;
    heap.pop();
    ++out.splits;
    for (int mask = 0; mask < (1 << free); ++mask) {
      std::vector<double> lo(free), hi(free);
      for (int k = 0; k < free; ++k) {
        const double mid = 0.5 * (cell.lo[k] + cell.hi[k]);
        lo[k] = (mask >> k) & 1 ? mid : cell.lo[k];
        hi[k] = (mask >> k) & 1 ? cell.hi[k] : mid;
      }
      double sampled = 0.0;
      const double ub = bound_on(cell.face, lo, hi, sampled);
      out.best_sampled = std::max(out.best_sampled, sampled);
      heap.push(Cell{ub, std::move(lo), std::move(hi), cell.face});
    }
  }
  out.value = heap.top().ub * (1.0 + 1e-12);
  return out;
}

}  // namespace detail

/// Certified upper bound for sup_v sum |w| (s1 s2 / ||g v||^2)^alpha, which
/// dominates k_alpha(mu).
inline KalphaBound kalpha_upper_bound_detail(const ComplexAtomicMeasure& mu, double alpha,
                                             const SupGridSpec& spec = {}) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw DomainError("alpha must lie in (0, 1]");
  if (mu.empty()) return {};
  const std::size_t d = dimension(mu);
  if (d < 2) throw DomainError("k_alpha needs d >= 2");
  const auto atoms = detail::sup_atoms(mu, alpha);
  return d == 2 ? detail::sup_2d(atoms, alpha, spec) : detail::sup_nd(atoms, alpha, d, spec);
}

inline double kalpha_upper_bound(const ComplexAtomicMeasure& mu, double alpha, const SupGridSpec& spec = {}) {
  return kalpha_upper_bound_detail(mu, alpha, spec).value;
}

/// Sampled lower bound: max over pairs of sum |w| (delta(gp, gq) / delta(p, q))^alpha.
inline double kalpha_empirical(const ComplexAtomicMeasure& mu, double alpha, const PairPlan& plan = {}) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw DomainError("alpha must lie in (0, 1]");
  if (mu.empty()) return 0.0;
  const std::size_t d = dimension(mu);
  std::vector<Eigen::MatrixXd> mats;
  std::vector<double> weights;
  for (const auto& a : mu) {
    mats.push_back(a.point.eigen());
    weights.push_back(std::abs(a.weight));
  }
  const auto best = maximize_pair(d, plan, [&](const ProjectivePoint& p, const ProjectivePoint& q) {
    double s = 0.0;
    for (std::size_t i = 0; i < mats.size(); ++i)
      s += weights[i] * std::pow(detail::unit_ratio(mats[i], p.vec(), q.vec()), alpha);
    return s;
  });
  return best.value;
}

struct SubmultiplicativityReport {
  double lhs = 0.0;   // empirical k_alpha(mu^{*(m+n)})
  double ub_m = 0.0;  // upper bound on k_alpha(mu^{*m})
  double ub_n = 0.0;
  double slack = 0.0;  // ub_m * ub_n - lhs
  bool holds = false;
};

inline SubmultiplicativityReport check_submultiplicativity(const ComplexAtomicMeasure& mu, double alpha, int m,
                                                           int n, const PairPlan& plan = {},
                                                           const SupGridSpec& spec = {},
                                                           const PrunePolicy& cap = PrunePolicy::none()) {
  if (m < 1 || n < 1) throw DomainError("check_submultiplicativity needs m, n >= 1");
  SubmultiplicativityReport r;
  r.lhs = kalpha_empirical(convolve_power(mu, m + n, cap).measure, alpha, plan);
  r.ub_m = kalpha_upper_bound(convolve_power(mu, m, cap).measure, alpha, spec);
  r.ub_n = m == n ? r.ub_m : kalpha_upper_bound(convolve_power(mu, n, cap).measure, alpha, spec);
  r.slack = r.ub_m * r.ub_n - r.lhs;
  r.holds = r.slack >= -1e-8;
  return r;
}

struct ContractionCertificate {
  double alpha = 1.0;
  int n0 = 1;
  double kappa = 1.0;  // certified bound on k_alpha(mu^{*n0})
  double theta = 1.0;  // kappa^{-1/n0}
  double C = 1.0;      // k_alpha(mu^{*n}) <= C theta^{-n} for all n >= 0
  double tv_radius = 0.0;
  double kappa_neighborhood = 1.0;  // bound valid on the TV ball of radius tv_radius
  std::vector<double> power_bounds;  // upper bounds at j = 0 .. n0

  double bound(int n) const { return C * std::pow(theta, -n); }
};

struct CertificateSearch {
  std::optional<ContractionCertificate> certificate;
  double best_alpha = 0.0;
  int best_n = 0;
  double best_value = std::numeric_limits<double>::infinity();
  std::string stop_reason;
};

struct CertificateOptions {
  std::vector<double> alpha_grid{1.0, 0.5, 0.25, 0.125, 0.0625};
  int n_max = 12;
  SupGridSpec grid{};
  std::size_t capacity = 1u << 16;  // atoms of mu^{*n} kept during the scan
  std::size_t max_words = 100000;   // enumerate words for the radius constant below this count
  /// Extra matrices allowed in the support of perturbed measures (e.g. a
  /// perturbation direction); the radius is valid for measures on supp(mu) and these.
  std::vector<Matrix> extra_symbols;
};

namespace detail {

// max over words of length n in the alphabet of s1 s2 / s_d^2
inline double word_distortion(const std::vector<Matrix>& alphabet, int n, std::size_t max_words) {
  const double words = std::pow(static_cast<double>(alphabet.size()), n);
  if (words > static_cast<double>(max_words)) {
    double per = 0.0;
    for (const auto& g : alphabet) {
      const auto sv = singular_values(g);
      per = std::max(per, sv.s1() * sv.s2() / (sv.smin() * sv.smin()));
    }
    return std::pow(per, n);
  }
  std::vector<Matrix> layer{Matrix::identity(alphabet.front().dim())};
  for (int k = 0; k < n; ++k) {
    std::vector<Matrix> next;
    next.reserve(layer.size() * alphabet.size());
    for (const auto& w : layer)
      for (const auto& g : alphabet) next.push_back(g * w);
    layer = std::move(next);
  }
  double best = 0.0;
  for (const auto& w : layer) {
    const auto sv = singular_values(w);
    best = std::max(best, sv.s1() * sv.s2() / (sv.smin() * sv.smin()));
  }
  return best;
}

// Radius of the TV ball on which the bound at n0 stays below (1 + kappa)/2.
// A measure within rho of one with total variation tv changes the n0-fold
// path measure by at most (tv + rho)^n0 - tv^n0, and each changed word
// contributes at most its distortion to the integrand.
inline void set_neighborhood(ContractionCertificate& c, double kappa_abs, double tv,
                             const std::vector<Matrix>& alphabet, std::size_t max_words) {
  const int n = c.n0;
  const double target = 0.5 * (1.0 + c.kappa);
  const double distortion = std::pow(word_distortion(alphabet, n, max_words), c.alpha);
  const double room = target - kappa_abs;
  c.kappa_neighborhood = target;
  c.tv_radius = room > 0.0 ? std::pow(std::pow(tv, n) + room / distortion, 1.0 / n) - tv : 0.0;
}

}  // namespace detail

/// Scans n = 1..n_max and, for each n, the alpha grid in order; the first
/// upper bound kappa < 1 yields the certificate.
inline CertificateSearch find_certificate(const ComplexAtomicMeasure& mu, const CertificateOptions& opt = {}) {
  if (opt.alpha_grid.empty()) throw DomainError("find_certificate needs a nonempty alpha grid");
  for (double a : opt.alpha_grid)
    if (!(a > 0.0 && a <= 1.0)) throw DomainError("alpha grid values must lie in (0, 1]");
  if (opt.n_max < 1) throw DomainError("find_certificate needs n_max >= 1");
  CertificateSearch out;
  const PrunePolicy cap = PrunePolicy::none(opt.capacity);
  std::vector<ComplexAtomicMeasure> powers{dirac(Matrix::identity(dimension(mu)))};
  for (int n = 1; n <= opt.n_max; ++n) {
    try {
      detail::check_capacity(powers.back().size() * mu.size(), cap, "find_certificate");
    } catch (const CapacityError& e) {
      out.stop_reason = e.what();
      return out;
    }
    powers.push_back(convolve(powers.back(), mu));
    SupGridSpec scan = opt.grid;
    scan.abandon_above = std::min(scan.abandon_above, 1.0);
    for (double alpha : opt.alpha_grid) {
      const double kappa = kalpha_upper_bound(powers[n], alpha, scan);
      if (kappa < out.best_value) {
        out.best_value = kappa;
        out.best_alpha = alpha;
        out.best_n = n;
      }
      if (!(kappa < 1.0)) continue;
      ContractionCertificate c;
      c.alpha = alpha;
      c.n0 = n;
      c.kappa = kappa;
      c.theta = std::pow(kappa, -1.0 / n);
      c.power_bounds.push_back(1.0);
      double worst = 1.0;
      for (int j = 1; j < n; ++j) {
        c.power_bounds.push_back(kalpha_upper_bound(powers[j], alpha, opt.grid));
        worst = std::max(worst, c.power_bounds.back());
      }
      c.power_bounds.push_back(kappa);
      c.C = worst * std::pow(c.theta, n);

      std::vector<Matrix> alphabet;
      for (const auto& a : mu) alphabet.push_back(a.point);
      for (const auto& g : opt.extra_symbols) alphabet.push_back(g);
      const double kappa_abs =
          is_probability(mu) ? kappa
                             : kalpha_upper_bound(convolve_power(abs_measure(mu), n, cap).measure, alpha, opt.grid);
      detail::set_neighborhood(c, kappa_abs, total_variation(mu), alphabet, opt.max_words);
      out.certificate = c;
      out.stop_reason = "found";
      return out;
    }
  }
  out.stop_reason = "no kappa < 1 up to n_max";
  return out;
}

}  // namespace lyapan
