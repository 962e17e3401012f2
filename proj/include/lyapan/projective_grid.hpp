#pragma once

// Deterministic point sets on projective space and a pair-quotient maximizer
// used for sampled (lower-bound) suprema such as Hoelder seminorms and the
// pairwise average contraction.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <vector>

#include "lyapan/projlin.hpp"
#include "lyapan/random.hpp"

namespace lyapan {

/// Sampling plan for sup over pairs (p, q) with p != q.
struct PairPlan {
  int coarse = 64;        // all pairs among this many spread-out points
  int fine = 2048;        // points each paired with nearby neighbours
  int neighbours = 4;     // d = 2: grid offsets 1..neighbours; d >= 3: offset scales
  int refine_iters = 60;  // pattern-search steps around the best pair
  std::uint64_t seed = 0x9a1f5eedULL;
};

/// d = 2: angles pi*i/n in [0, pi). d >= 3: Halton points in the unit ball, normalized.
inline std::vector<ProjectivePoint> projective_points(std::size_t d, int n) {
  std::vector<ProjectivePoint> out;
  out.reserve(static_cast<std::size_t>(n));
  if (d == 2) {
    for (int i = 0; i < n; ++i) {
      const double t = std::numbers::pi * i / n;
      Eigen::VectorXd v(2);
      v << std::cos(t), std::sin(t);
      out.push_back(project_unchecked(v));
    }
    return out;
  }
  static constexpr unsigned primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};
  if (d > std::size(primes)) throw DomainError("projective point sets support d <= 16");
  Eigen::VectorXd v(static_cast<Eigen::Index>(d));
  for (std::uint64_t i = 1; static_cast<int>(out.size()) < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) v(static_cast<Eigen::Index>(j)) = 2.0 * radical_inverse(i, primes[j]) - 1.0;
    const double r = v.norm();
    if (r > 1.0 || r < 0.05) continue;
    out.push_back(project_unchecked(v));
  }
  return out;
}

struct PairMax {
  double value = 0.0;
  ProjectivePoint p, q;
  long evaluations = 0;
};

inline constexpr double kMinPairDistance = 1e-9;

/// Maximizes f(p, q) over sampled pairs with delta(p, q) > kMinPairDistance.
/// The result is a lower bound for the true supremum.
inline PairMax maximize_pair(std::size_t d, const PairPlan& plan,
                             const std::function<double(const ProjectivePoint&, const ProjectivePoint&)>& f) {
  PairMax best;
  best.value = -std::numeric_limits<double>::infinity();
  auto consider = [&](const ProjectivePoint& p, const ProjectivePoint& q) {
    if (projective_distance(p, q) <= kMinPairDistance) return;
    const double v = f(p, q);
    ++best.evaluations;
    if (v > best.value) {
      best.value = v;
      best.p = p;
      best.q = q;
    }
  };

  const auto coarse = projective_points(d, plan.coarse);
  for (std::size_t i = 0; i < coarse.size(); ++i)
    for (std::size_t j = i + 1; j < coarse.size(); ++j) consider(coarse[i], coarse[j]);

  const auto fine = projective_points(d, plan.fine);
  if (d == 2) {
    for (std::size_t i = 0; i < fine.size(); ++i)
      for (int k = 1; k <= plan.neighbours; ++k) consider(fine[i], fine[(i + k) % fine.size()]);
  } else {
    Rng rng(plan.seed);
    for (const auto& x : fine) {
      Eigen::VectorXd t = rng.normal_vector(static_cast<Eigen::Index>(d));
      t -= t.dot(x.vec()) * x.vec();
      if (t.norm() < 1e-12) continue;
      t.normalize();
      double h = 0.1;
      for (int k = 0; k < plan.neighbours; ++k, h *= 0.1) consider(x, project_unchecked(x.vec() + h * t));
    }
  }
  if (!std::isfinite(best.value)) return best;

  // Pattern search: move p, q, or both along coordinate directions.
  double step = d == 2 ? std::numbers::pi / plan.fine : 0.05;
  const auto D = static_cast<Eigen::Index>(d);
  for (int it = 0; it < plan.refine_iters && step > 1e-12; ++it) {
    bool improved = false;
    for (Eigen::Index j = 0; j < D && !improved; ++j)
      for (double s : {step, -step})
        for (int which = 0; which < 3 && !improved; ++which) {
          Eigen::VectorXd p = best.p.vec(), q = best.q.vec();
          if (which != 1) p(j) += s;
          if (which != 0) q(j) += s;
          const double before = best.value;
          consider(project_unchecked(p), project_unchecked(q));
          improved = best.value > before;
        }
    if (!improved) step *= 0.5;
  }
  return best;
}

}  // namespace lyapan
