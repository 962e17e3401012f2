#pragma once

// Complex atomic measures on invertible matrices: total variation, mass
// class, convolution and convolution powers with explicit pruning.

#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "lyapan/atomic_measure.hpp"
#include "lyapan/errors.hpp"
#include "lyapan/projlin.hpp"

namespace lyapan {

using ComplexAtomicMeasure = AtomicMeasure<Matrix, Complex>;
using MatrixAtom = ComplexAtomicMeasure::Atom;

inline ComplexAtomicMeasure dirac(const Matrix& g, Complex w = 1.0) {
  return ComplexAtomicMeasure({MatrixAtom{g, w}});
}

/// Ambient dimension of the atoms; throws on an empty or mixed-dimension measure.
template <class Weight>
std::size_t dimension(const AtomicMeasure<Matrix, Weight>& mu) {
  if (mu.empty()) throw DomainError("dimension of the zero measure is undefined");
  const std::size_t d = mu.atoms().front().point.dim();
  for (const auto& a : mu)
    if (a.point.dim() != d) throw DomainError("measure mixes matrix dimensions");
  return d;
}

template <class Point>
double total_variation(const AtomicMeasure<Point, Complex>& mu) {
  double tv = 0.0;
  for (const auto& a : mu) tv += std::abs(a.weight);
  return tv;
}

template <class Point>
Complex mass(const AtomicMeasure<Point, Complex>& mu) {
  Complex m{};
  for (const auto& a : mu) m += a.weight;
  return m;
}

struct MassClass {
  enum class Tag { probability, mass_one_complex, mass_zero, other };
  Tag tag = Tag::other;
  Complex mass{};
};

inline const char* to_string(MassClass::Tag t) {
  switch (t) {
    case MassClass::Tag::probability: return "probability";
    case MassClass::Tag::mass_one_complex: return "mass_one_complex";
    case MassClass::Tag::mass_zero: return "mass_zero";
    case MassClass::Tag::other: return "other";
  }
  return "other";
}

inline constexpr double kMassTol = 1e-12;

template <class Point>
MassClass mass_class(const AtomicMeasure<Point, Complex>& mu) {
  MassClass out;
  out.mass = mass(mu);
  // summing many weights loses a few ulps per atom; scale the tolerance with TV
  const double tol = kMassTol * std::max(1.0, total_variation(mu));
  if (std::abs(out.mass - 1.0) <= tol) {
    bool nonneg = true;
    for (const auto& a : mu)
      if (std::abs(a.weight.imag()) > kMassTol || a.weight.real() < -kMassTol) nonneg = false;
    out.tag = nonneg ? MassClass::Tag::probability : MassClass::Tag::mass_one_complex;
  } else if (std::abs(out.mass) <= tol) {
    out.tag = MassClass::Tag::mass_zero;
  } else {
    out.tag = MassClass::Tag::other;
  }
  return out;
}

inline bool is_probability(const ComplexAtomicMeasure& mu) {
  return mass_class(mu).tag == MassClass::Tag::probability;
}

inline void require_probability(const ComplexAtomicMeasure& mu, const char* who) {
  if (!is_probability(mu)) {
    const auto mc = mass_class(mu);
    throw DomainError(std::string(who) + " needs a probability measure, got class " + to_string(mc.tag) +
                      " with mass (" + std::to_string(mc.mass.real()) + ", " +
                      std::to_string(mc.mass.imag()) + ")");
  }
}

/// |mu| as a measure with the moduli as weights.
inline ComplexAtomicMeasure abs_measure(const ComplexAtomicMeasure& mu) {
  std::vector<MatrixAtom> atoms;
  atoms.reserve(mu.size());
  for (const auto& a : mu) atoms.push_back({a.point, std::abs(a.weight)});
  return ComplexAtomicMeasure(std::move(atoms), mu.dedup_tolerance());
}

/// mu + c * nu.
inline ComplexAtomicMeasure add(const ComplexAtomicMeasure& mu, const ComplexAtomicMeasure& nu,
                                Complex c = 1.0) {
  std::vector<MatrixAtom> atoms(mu.atoms().begin(), mu.atoms().end());
  for (const auto& a : nu) atoms.push_back({a.point, c * a.weight});
  return ComplexAtomicMeasure(std::move(atoms), mu.dedup_tolerance());
}

inline ComplexAtomicMeasure scale(Complex c, const ComplexAtomicMeasure& mu) {
  std::vector<MatrixAtom> atoms;
  atoms.reserve(mu.size());
  for (const auto& a : mu) atoms.push_back({a.point, c * a.weight});
  return ComplexAtomicMeasure(std::move(atoms), mu.dedup_tolerance());
}

/// Push-forward under a map on matrices (e.g. the second exterior power).
inline ComplexAtomicMeasure pushforward(const ComplexAtomicMeasure& mu,
                                        const std::function<Matrix(const Matrix&)>& f) {
  std::vector<MatrixAtom> atoms;
  atoms.reserve(mu.size());
  for (const auto& a : mu) atoms.push_back({f(a.point), a.weight});
  return ComplexAtomicMeasure(std::move(atoms), mu.dedup_tolerance());
}

/// Left factor from mu, right factor from nu: atoms g*h with weight w(g) w(h).
inline ComplexAtomicMeasure convolve(const ComplexAtomicMeasure& mu, const ComplexAtomicMeasure& nu) {
  std::vector<MatrixAtom> atoms;
  atoms.reserve(mu.size() * nu.size());
  for (const auto& a : mu)
    for (const auto& b : nu) atoms.push_back({a.point * b.point, a.weight * b.weight});
  return ComplexAtomicMeasure(std::move(atoms), std::max(mu.dedup_tolerance(), nu.dedup_tolerance()));
}

struct PrunePolicy {
  enum class Kind { none, weight_floor };
  Kind kind = Kind::none;
  double floor = 0.0;
  std::size_t capacity = kDefaultCapacity;

  static PrunePolicy none(std::size_t cap = kDefaultCapacity) { return {Kind::none, 0.0, cap}; }
  static PrunePolicy weight_floor(double eps, std::size_t cap = kDefaultCapacity) {
    if (!(eps > 0.0)) throw DomainError("weight_floor needs a positive threshold");
    return {Kind::weight_floor, eps, cap};
  }
};

struct PowerResult {
  ComplexAtomicMeasure measure;
  /// Upper bound on the total variation of (exact power - returned measure).
  double pruned_variation = 0.0;
};

namespace detail {

// Drops atoms of modulus below the floor and returns the dropped variation.
template <class Point, class Weight>
double prune_atoms(AtomicMeasure<Point, Weight>& m, const PrunePolicy& policy) {
  if (policy.kind != PrunePolicy::Kind::weight_floor) return 0.0;
  std::vector<typename AtomicMeasure<Point, Weight>::Atom> kept;
  double dropped = 0.0;
  for (const auto& a : m) {
    const double w = WeightTraits<Weight>::magnitude(a.weight);
    if (w < policy.floor) {
      dropped += w;
    } else {
      kept.push_back(a);
    }
  }
  if (dropped > 0.0) m = AtomicMeasure<Point, Weight>(std::move(kept), m.dedup_tolerance());
  return dropped;
}

inline void check_capacity(std::size_t count, const PrunePolicy& policy, const char* what) {
  if (count > policy.capacity && policy.kind == PrunePolicy::Kind::none)
    throw CapacityError(std::string(what) + ": expansion needs " + std::to_string(count) +
                        " atoms, above the capacity " + std::to_string(policy.capacity) +
                        "; use a weight_floor pruning policy or raise the capacity");
}

}  // namespace detail

/// mu^{*n}. With weight_floor pruning the dropped mass at step k is propagated
/// through the remaining n-k factors, so pruned_variation bounds the total error.
inline PowerResult convolve_power(const ComplexAtomicMeasure& mu, int n,
                                  const PrunePolicy& prune = PrunePolicy::none()) {
  if (n < 1) throw DomainError("convolve_power needs n >= 1, got " + std::to_string(n));
  const double tv = total_variation(mu);
  PowerResult out{mu, 0.0};
  out.pruned_variation = detail::prune_atoms(out.measure, prune) * std::pow(tv, n - 1);
  for (int k = 2; k <= n; ++k) {
    detail::check_capacity(out.measure.size() * mu.size(), prune, "convolve_power");
    out.measure = convolve(out.measure, mu);
    out.pruned_variation += detail::prune_atoms(out.measure, prune) * std::pow(tv, n - k);
  }
  return out;
}

/// Every atom of mu with |w| > tol lies within tol of an atom of nu with |w| > tol.
inline bool support_leq(const ComplexAtomicMeasure& mu, const ComplexAtomicMeasure& nu) {
  const double tol = std::max(mu.dedup_tolerance(), nu.dedup_tolerance());
  for (const auto& a : mu) {
    if (std::abs(a.weight) <= tol) continue;
    bool found = false;
    for (const auto& b : nu) {
      if (std::abs(b.weight) <= tol) continue;
      if (PointTraits<Matrix>::distance(a.point, b.point) <= tol) {
        found = true;
        break;
      }
    }
    if (!found) return false;
  }
  return true;
}

}  // namespace lyapan
