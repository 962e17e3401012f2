#pragma once

// Push-forward of a weighted point cloud on projective space by a weighted
// alphabet: orbit_{n+1} = sum_g w(g) (g . orbit_n). Starting from a Dirac mass
// at v0 this is the law of the word g_n ... g_1 applied to v0, so
// sum_x w(x) phi(x) = (Q^n phi)(v0) without forming mu^{*n}.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "lyapan/atomic_measure.hpp"
#include "lyapan/errors.hpp"

namespace lyapan {

template <class Weight>
using ProjectiveOrbit = AtomicMeasure<ProjectivePoint, Weight>;

template <class Weight>
struct Letter {
  Eigen::MatrixXd g;
  Weight w;
};

template <class Weight>
ProjectiveOrbit<Weight> orbit_step(const std::vector<Letter<Weight>>& letters, const ProjectiveOrbit<Weight>& orbit,
                                   std::size_t capacity, double merge_tol = kDedupTol) {
  const std::size_t count = orbit.size() * letters.size();
  if (count > capacity)
    throw CapacityError("orbit expansion needs " + std::to_string(count) + " points, above the capacity " +
                        std::to_string(capacity));
  std::vector<typename ProjectiveOrbit<Weight>::Atom> next;
  next.reserve(count);
  for (const auto& l : letters)
    for (const auto& x : orbit) next.push_back({project_unchecked(l.g * x.point.vec()), l.w * x.weight});
  return ProjectiveOrbit<Weight>(std::move(next), merge_tol);
}

template <class Point, class Weight, class Fn>
auto integrate(const AtomicMeasure<Point, Weight>& orbit, Fn&& f) {
  using R = decltype(orbit.atoms().front().weight * f(orbit.atoms().front().point));
  R total{};
  for (const auto& x : orbit) total += x.weight * f(x.point);
  return total;
}

}  // namespace lyapan
