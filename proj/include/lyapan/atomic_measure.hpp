#pragma once

// Finitely supported measures with tolerance-based atom merging.
//
// AtomicMeasure<Point, Weight> is shared by measures on matrices, on
// projective space (orbits of a base point), on state x projective space
// (Markov paths) and by the polynomial-weighted expansions in z.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "lyapan/projlin.hpp"

namespace lyapan {

using Complex = std::complex<double>;

inline constexpr double kDedupTol = 1e-12;
inline constexpr std::size_t kDefaultCapacity = 1'000'000;

template <class Point>
struct PointTraits;

// Besides order and distance, traits expose a group (points in different
// groups never merge) and numeric keys: two points within the merge tolerance
// have every key within tol * scale, or within tol relative to the keys when
// relative_keys is set. Merging sweeps along whichever key separates the
// points best.
template <>
struct PointTraits<Matrix> {
  static constexpr bool relative_keys = false;
  static long group(const Matrix& g) { return static_cast<long>(g.dim()); }
  static std::size_t key_count(const Matrix& g) { return g.dim() * g.dim(); }
  static double key(const Matrix& g, std::size_t c) { return g.eigen()(c / g.dim(), c % g.dim()); }
  static double scale(const Matrix& g) { return g.max_abs(); }
  static bool less(const Matrix& a, const Matrix& b) {
    if (a.dim() != b.dim()) return a.dim() < b.dim();
    // row-major order so that the first sort key is entry (0,0), matching key()
    const auto d = static_cast<Eigen::Index>(a.dim());
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) {
        const double u = a(i, j), v = b(i, j);
        if (u < v) return true;
        if (v < u) return false;
      }
    return false;
  }
  static double distance(const Matrix& a, const Matrix& b) {
    if (a.dim() != b.dim()) return std::numeric_limits<double>::infinity();
    return (a.eigen() - b.eigen()).cwiseAbs().maxCoeff();
  }
};

namespace detail {

// Coordinatewise relative difference. Absolute closeness is not enough on
// projective space: near a repelling line the dynamics expands differences
// in the small coordinates, so points are merged only when every coordinate
// agrees to relative precision.
inline double relative_gap(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double g = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double diff = std::abs(a(i) - b(i));
    if (diff == 0.0) continue;
    g = std::max(g, diff / std::max(std::abs(a(i)), std::abs(b(i))));
  }
  return g;
}

}  // namespace detail

template <>
struct PointTraits<ProjectivePoint> {
  static constexpr bool relative_keys = true;
  static long group(const ProjectivePoint& p) { return static_cast<long>(p.dim()); }
  static std::size_t key_count(const ProjectivePoint& p) { return p.dim(); }
  static double key(const ProjectivePoint& p, std::size_t c) { return p[c]; }
  static double scale(const ProjectivePoint&) { return 1.0; }
  static bool less(const ProjectivePoint& a, const ProjectivePoint& b) {
    return detail::lex_less(a.vec(), b.vec());
  }
  static double distance(const ProjectivePoint& a, const ProjectivePoint& b) {
    return detail::relative_gap(a.vec(), b.vec());
  }
};

/// A Markov state paired with a projective point.
struct StatePoint {
  int state = 0;
  ProjectivePoint point;
};

template <>
struct PointTraits<StatePoint> {
  static constexpr bool relative_keys = true;
  static long group(const StatePoint& s) { return s.state; }
  static std::size_t key_count(const StatePoint& s) { return s.point.dim(); }
  static double key(const StatePoint& s, std::size_t c) { return s.point[c]; }
  static double scale(const StatePoint&) { return 1.0; }
  static bool less(const StatePoint& a, const StatePoint& b) {
    if (a.state != b.state) return a.state < b.state;
    return detail::lex_less(a.point.vec(), b.point.vec());
  }
  static double distance(const StatePoint& a, const StatePoint& b) {
    if (a.state != b.state) return std::numeric_limits<double>::infinity();
    return detail::relative_gap(a.point.vec(), b.point.vec());
  }
};

template <>
struct PointTraits<int> {
  static constexpr bool relative_keys = false;
  static long group(int s) { return s; }
  static std::size_t key_count(int) { return 1; }
  static double key(int, std::size_t) { return 0.0; }
  static double scale(int) { return 1.0; }
  static bool less(int a, int b) { return a < b; }
  static double distance(int a, int b) { return a == b ? 0.0 : std::numeric_limits<double>::infinity(); }
};

/// Polynomial in z with complex coefficients (ascending degree), used as an atom weight.
struct ZPoly {
  std::vector<Complex> c;

  ZPoly() = default;
  explicit ZPoly(std::vector<Complex> coeffs) : c(std::move(coeffs)) {}
  static ZPoly constant(Complex a) { return ZPoly({a}); }
  static ZPoly linear(Complex a, Complex b) { return ZPoly({a, b}); }

  ZPoly& operator+=(const ZPoly& o) {
    if (o.c.size() > c.size()) c.resize(o.c.size(), Complex{});
    for (std::size_t i = 0; i < o.c.size(); ++i) c[i] += o.c[i];
    return *this;
  }
  friend ZPoly operator*(const ZPoly& a, const ZPoly& b) {
    if (a.c.empty() || b.c.empty()) return ZPoly{};
    std::vector<Complex> r(a.c.size() + b.c.size() - 1, Complex{});
    for (std::size_t i = 0; i < a.c.size(); ++i)
      for (std::size_t j = 0; j < b.c.size(); ++j) r[i + j] += a.c[i] * b.c[j];
    return ZPoly(std::move(r));
  }
  friend ZPoly operator*(Complex s, const ZPoly& a) {
    ZPoly r = a;
    for (auto& x : r.c) x *= s;
    return r;
  }
  Complex operator()(Complex z) const {
    Complex acc{};
    for (auto it = c.rbegin(); it != c.rend(); ++it) acc = acc * z + *it;
    return acc;
  }
  double max_abs() const {
    double m = 0.0;
    for (const auto& x : c) m = std::max(m, std::abs(x));
    return m;
  }
};

template <class Weight>
struct WeightTraits;

template <>
struct WeightTraits<Complex> {
  static bool is_zero(const Complex& w) { return w == Complex{}; }
  static double magnitude(const Complex& w) { return std::abs(w); }
};

template <>
struct WeightTraits<ZPoly> {
  static bool is_zero(const ZPoly& w) {
    return std::all_of(w.c.begin(), w.c.end(), [](const Complex& x) { return x == Complex{}; });
  }
  static double magnitude(const ZPoly& w) { return w.max_abs(); }
};

template <class Point, class Weight = Complex>
class AtomicMeasure {
 public:
  struct Atom {
    Point point;
    Weight weight;
  };

  AtomicMeasure() = default;

  /// Merges atoms closer than `tol` (relative to max(1, entry scale)) by
  /// summing their weights and drops atoms whose weight is exactly zero.
  /// The result is sorted in a canonical order, independent of input order
  /// up to the choice of cluster representative.
  explicit AtomicMeasure(std::vector<Atom> atoms, double tol = kDedupTol) : tol_(tol) {
    canonicalize(std::move(atoms));
  }

  const std::vector<Atom>& atoms() const { return atoms_; }
  std::size_t size() const { return atoms_.size(); }
  bool empty() const { return atoms_.empty(); }
  double dedup_tolerance() const { return tol_; }

  auto begin() const { return atoms_.begin(); }
  auto end() const { return atoms_.end(); }

 private:
  void canonicalize(std::vector<Atom> in) {
    using PT = PointTraits<Point>;
    const std::size_t n = in.size();
    double global_scale = 1.0;
    std::size_t key_count = std::numeric_limits<std::size_t>::max();
    for (const auto& a : in) {
      global_scale = std::max(global_scale, PT::scale(a.point));
      key_count = std::min(key_count, PT::key_count(a.point));
    }
    const double window = tol_ * global_scale;
    auto within = [&](double a, double b) {
      return b - a <= (PT::relative_keys ? tol_ * std::max(std::abs(a), std::abs(b)) : window);
    };

    // sweep key: the one with the most separated consecutive values
    std::size_t best = 0;
    if (n > 1 && key_count > 1) {
      std::size_t best_count = 0;
      std::vector<std::pair<long, double>> v(n);
      for (std::size_t c = 0; c < key_count; ++c) {
        for (std::size_t i = 0; i < n; ++i) v[i] = {PT::group(in[i].point), PT::key(in[i].point, c)};
        std::sort(v.begin(), v.end());
        std::size_t count = 0;
        for (std::size_t i = 1; i < n; ++i)
          if (v[i].first != v[i - 1].first || !within(v[i - 1].second, v[i].second)) ++count;
        if (count > best_count) best_count = count, best = c;
        if (count == n - 1) break;
      }
    }

    std::vector<long> groups(n);
    std::vector<double> keys(n), scales(n);
    for (std::size_t i = 0; i < n; ++i) {
      groups[i] = PT::group(in[i].point);
      keys[i] = key_count == 0 ? 0.0 : PT::key(in[i].point, best);
      scales[i] = PT::scale(in[i].point);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (groups[a] != groups[b]) return groups[a] < groups[b];
      if (keys[a] != keys[b]) return keys[a] < keys[b];
      return PT::less(in[a].point, in[b].point);
    });

    std::vector<char> taken(n, 0);
    atoms_.clear();
    atoms_.reserve(n);
    for (std::size_t ii = 0; ii < n; ++ii) {
      const std::size_t i = order[ii];
      if (taken[i]) continue;
      Atom& rep = in[i];
      Weight w = rep.weight;
      for (std::size_t jj = ii + 1; jj < n; ++jj) {
        const std::size_t j = order[jj];
        if (groups[j] != groups[i] || !within(keys[i], keys[j])) break;
        if (taken[j]) continue;
        const double local = tol_ * std::max({1.0, scales[i], scales[j]});
        if (PT::distance(rep.point, in[j].point) <= local) {
          w += in[j].weight;
          taken[j] = 1;
        }
      }
      if (!WeightTraits<Weight>::is_zero(w)) atoms_.push_back(Atom{std::move(rep.point), std::move(w)});
    }
    std::sort(atoms_.begin(), atoms_.end(), [](const Atom& a, const Atom& b) { return PT::less(a.point, b.point); });
  }

  std::vector<Atom> atoms_;
  double tol_ = kDedupTol;
};

}  // namespace lyapan
