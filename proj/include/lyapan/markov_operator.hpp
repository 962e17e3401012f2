#pragma once

// The averaging operator (Q phi)(v) = sum_g w(g) phi(g.v) on projective
// observables: exact evaluation of Q^n through convolution powers, an
// importance-sampled Monte Carlo estimator, and sampled Hoelder seminorms.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "lyapan/measures.hpp"
#include "lyapan/parallel.hpp"
#include "lyapan/projective_grid.hpp"
#include "lyapan/random.hpp"

namespace lyapan {

template <class Point>
struct BasicObservable {
  std::function<Complex(const Point&)> eval;
  std::string label;
  std::optional<double> holder_alpha_hint;

  Complex operator()(const Point& p) const { return eval(p); }
};

using Observable = BasicObservable<ProjectivePoint>;

inline Observable constant_observable(Complex c) {
  return {[c](const ProjectivePoint&) { return c; }, "constant", 1.0};
}

/// phi(v) = sum_i w_i log ||g_i v|| on unit representatives.
inline Observable phi_observable(const ComplexAtomicMeasure& mu) {
  std::vector<Eigen::MatrixXd> mats;
  std::vector<Complex> weights;
  for (const auto& a : mu) {
    mats.push_back(a.point.eigen());
    weights.push_back(a.weight);
  }
  auto eval = [mats = std::move(mats), weights = std::move(weights)](const ProjectivePoint& p) {
    Complex s{};
    for (std::size_t i = 0; i < mats.size(); ++i) s += weights[i] * std::log((mats[i] * p.vec()).norm());
    return s;
  };
  return {std::move(eval), "phi", 1.0};
}

/// Upper bound for the alpha-Hoelder seminorm of phi_observable(mu).
/// Each term log||g v|| is (s1/sd)-Lipschitz in angle and has oscillation at
/// most log(s1/sd); the angle is at most (pi/2) delta, and interpolating the
/// two bounds gives |w| (L pi/2)^alpha R^(1-alpha) per atom.
inline double phi_holder_upper_bound(const ComplexAtomicMeasure& mu, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw DomainError("alpha must lie in (0, 1]");
  double total = 0.0;
  for (const auto& a : mu) {
    const auto sv = singular_values(a.point);
    const double lip = sv.condition();
    const double osc = std::log(lip);
    if (osc <= 0.0) continue;
    total += std::abs(a.weight) * std::pow(lip * std::numbers::pi / 2.0, alpha) * std::pow(osc, 1.0 - alpha);
  }
  return total;
}

struct QnEvaluation {
  enum class Method { exact_expansion, monte_carlo };
  Complex value{};
  int n = 0;
  Method method = Method::exact_expansion;
  std::optional<double> stat_error;
  double pruned_variation = 0.0;
  std::size_t atoms = 0;
};

/// Sum over atoms of mu^{*n} of w(g) phi(g.p); n = 0 returns phi(p).
inline QnEvaluation apply_Qn_exact(const ComplexAtomicMeasure& mu, const Observable& phi,
                                   const ProjectivePoint& p, int n,
                                   const PrunePolicy& prune = PrunePolicy::none()) {
  if (n < 0) throw DomainError("apply_Qn_exact needs n >= 0");
  QnEvaluation out;
  out.n = n;
  if (n == 0) {
    out.value = phi(p);
    return out;
  }
  const auto power = convolve_power(mu, n, prune);
  for (const auto& a : power.measure) out.value += a.weight * phi(act(a.point, p));
  out.pruned_variation = power.pruned_variation;
  out.atoms = power.measure.size();
  return out;
}

/// (Q phi) as an observable; nesting this n times is the reference for Q^n.
inline Observable apply_Q(const ComplexAtomicMeasure& mu, Observable phi) {
  std::vector<MatrixAtom> atoms(mu.atoms().begin(), mu.atoms().end());
  auto inner = phi.eval;
  return {[atoms = std::move(atoms), inner = std::move(inner)](const ProjectivePoint& p) {
            Complex s{};
            for (const auto& a : atoms) s += a.weight * inner(act(a.point, p));
            return s;
          },
          "Q(" + phi.label + ")", phi.holder_alpha_hint};
}

struct McOptions {
  std::size_t replica_size = 1024;
  unsigned threads = 1;
};

namespace detail {

// Letter sampler for |mu| / ||mu|| with per-letter phase and a cumulative table.
struct LetterSampler {
  std::vector<Eigen::MatrixXd> mats;
  std::vector<Complex> phase;
  std::vector<double> cumulative;
  double tv = 0.0;

  template <class Measure>
  explicit LetterSampler(const Measure& mu) {
    for (const auto& a : mu) {
      mats.push_back(a.point.eigen());
      const double m = std::abs(a.weight);
      phase.push_back(a.weight / m);
      tv += m;
      cumulative.push_back(tv);
    }
    for (auto& c : cumulative) c /= tv;
    cumulative.back() = 1.0;
  }
  std::size_t draw(Rng& rng) const {
    const double u = rng.uniform();
    return static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
  }
};

}  // namespace detail

/// Importance-sampled estimate of Q^n phi(p): letters drawn from |mu|/||mu||,
/// each sample carries the product of weight phases times ||mu||^n.
/// Replicas of fixed size are seeded from (seed, replica index) and reduced in
/// index order, so the result does not depend on the worker count.
inline QnEvaluation apply_Qn_mc(const ComplexAtomicMeasure& mu, const Observable& phi, const ProjectivePoint& p,
                                int n, std::size_t samples, std::uint64_t seed, const McOptions& opt = {}) {
  if (n < 0) throw DomainError("apply_Qn_mc needs n >= 0");
  if (samples < 1) throw DomainError("apply_Qn_mc needs samples >= 1");
  if (!(total_variation(mu) > 0.0)) throw DomainError("apply_Qn_mc needs a nonzero measure");
  const detail::LetterSampler sampler(mu);
  const Complex scale_n = std::pow(sampler.tv, n);
  const std::size_t replicas = (samples + opt.replica_size - 1) / opt.replica_size;
  std::vector<ComplexAccumulator> acc(replicas);
  parallel_for(replicas, opt.threads, [&](std::size_t r) {
    Rng rng(derive_seed(seed, r));
    const std::size_t begin = r * opt.replica_size;
    const std::size_t count = std::min(opt.replica_size, samples - begin);
    for (std::size_t s = 0; s < count; ++s) {
      Eigen::VectorXd v = p.vec();
      Complex ph = 1.0;
      for (int k = 0; k < n; ++k) {
        const std::size_t i = sampler.draw(rng);
        v = sampler.mats[i] * v;
        v /= v.norm();
        ph *= sampler.phase[i];
      }
      acc[r].add(ph * scale_n * phi(project_unchecked(v)));
    }
  });
  ComplexAccumulator total;
  for (const auto& a : acc) total.merge(a);
  QnEvaluation out;
  out.n = n;
  out.method = QnEvaluation::Method::monte_carlo;
  out.value = total.mean;
  out.stat_error = total.standard_error();
  return out;
}

/// Sampled lower bound for sup |phi(p) - phi(q)| / delta(p, q)^alpha.
inline double holder_seminorm_lb(const Observable& phi, double alpha, std::size_t d, const PairPlan& plan = {}) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw DomainError("alpha must lie in (0, 1]");
  const auto best = maximize_pair(d, plan, [&](const ProjectivePoint& p, const ProjectivePoint& q) {
    return std::abs(phi(p) - phi(q)) / std::pow(projective_distance(p, q), alpha);
  });
  return std::max(0.0, best.value);
}

/// The same quotient maximized over an explicit list of pairs.
inline double holder_seminorm_on_pairs(const Observable& phi, double alpha,
                                       const std::vector<std::pair<ProjectivePoint, ProjectivePoint>>& pairs) {
  double best = 0.0;
  for (const auto& [p, q] : pairs) {
    const double dist = projective_distance(p, q);
    if (dist <= kMinPairDistance) continue;
    best = std::max(best, std::abs(phi(p) - phi(q)) / std::pow(dist, alpha));
  }
  return best;
}

}  // namespace lyapan
