#pragma once

// Matrix cocycles over a finite-state Markov chain. A kernel K has complex
// rows K(from, .); the cocycle A(to, from) acts on the transition from -> to.
// Q_K phi(s, v) = sum_t K(s, t) phi(t, A(t, s) v) and everything reduces to
// weighted path expansions over state x projective space.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lyapan/analyticity.hpp"
#include "lyapan/lyapunov.hpp"

namespace lyapan {

using StateMeasure = AtomicMeasure<int, Complex>;

class FiniteKernel {
 public:
  FiniteKernel() = default;

  /// w(from, to) is the weight of the transition from -> to.
  explicit FiniteKernel(Eigen::MatrixXcd w) : w_(std::move(w)) {
    if (w_.rows() < 1 || w_.rows() != w_.cols()) throw DomainError("kernel needs a square weight table with S >= 1");
    for (Eigen::Index i = 0; i < w_.rows(); ++i)
      for (Eigen::Index j = 0; j < w_.cols(); ++j)
        if (!std::isfinite(w_(i, j).real()) || !std::isfinite(w_(i, j).imag()))
          throw DomainError("kernel weight (" + std::to_string(i) + ", " + std::to_string(j) + ") is not finite");
  }

  static FiniteKernel from_real(const std::vector<std::vector<double>>& rows) {
    const auto s = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXcd w = Eigen::MatrixXcd::Zero(s, s);
    for (Eigen::Index i = 0; i < s; ++i) {
      if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)].size()) != s)
        throw DomainError("kernel row " + std::to_string(i) + " has the wrong length");
      for (Eigen::Index j = 0; j < s; ++j) w(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    return FiniteKernel(std::move(w));
  }

  static FiniteKernel identity(int states) {
    return FiniteKernel(Eigen::MatrixXcd::Identity(states, states));
  }

  /// Every row equal to `row`.
  static FiniteKernel constant_rows(const std::vector<Complex>& row) {
    const auto s = static_cast<Eigen::Index>(row.size());
    Eigen::MatrixXcd w(s, s);
    for (Eigen::Index i = 0; i < s; ++i)
      for (Eigen::Index j = 0; j < s; ++j) w(i, j) = row[static_cast<std::size_t>(j)];
    return FiniteKernel(std::move(w));
  }

  int states() const { return static_cast<int>(w_.rows()); }
  const Eigen::MatrixXcd& weights() const { return w_; }
  Complex operator()(int from, int to) const { return w_(from, to); }

  StateMeasure row(int from) const {
    std::vector<StateMeasure::Atom> atoms;
    for (int t = 0; t < states(); ++t) atoms.push_back({t, w_(from, t)});
    return StateMeasure(std::move(atoms));
  }

  bool is_stochastic(double tol = 1e-12) const {
    for (Eigen::Index i = 0; i < w_.rows(); ++i) {
      double sum = 0.0;
      for (Eigen::Index j = 0; j < w_.cols(); ++j) {
        if (std::abs(w_(i, j).imag()) > tol || w_(i, j).real() < -tol) return false;
        sum += w_(i, j).real();
      }
      if (std::abs(sum - 1.0) > tol) return false;
    }
    return true;
  }

 private:
  Eigen::MatrixXcd w_;
};

/// K + z L.
inline FiniteKernel kernel_add(const FiniteKernel& k, const FiniteKernel& l, Complex z = 1.0) {
  if (k.states() != l.states()) throw DomainError("kernels have different state counts");
  return FiniteKernel(k.weights() + z * l.weights());
}

/// Invertible matrices A(to, from) on every state pair.
class CocycleMap {
 public:
  CocycleMap() = default;

  /// mats[to * S + from].
  CocycleMap(int states, std::vector<Matrix> mats) : s_(states), a_(std::move(mats)) {
    if (s_ < 1 || a_.size() != static_cast<std::size_t>(s_) * static_cast<std::size_t>(s_))
      throw DomainError("cocycle needs S * S matrices");
    for (const auto& g : a_)
      if (g.dim() != a_.front().dim()) throw DomainError("cocycle matrices have different dimensions");
  }

  static CocycleMap from_function(int states, const std::function<Matrix(int, int)>& f) {
    std::vector<Matrix> mats;
    for (int to = 0; to < states; ++to)
      for (int from = 0; from < states; ++from) mats.push_back(f(to, from));
    return CocycleMap(states, std::move(mats));
  }

  /// A(to, from) = g[to].
  static CocycleMap arrival_only(const std::vector<Matrix>& g) {
    const int s = static_cast<int>(g.size());
    return from_function(s, [&](int to, int) { return g[static_cast<std::size_t>(to)]; });
  }

  int states() const { return s_; }
  std::size_t dim() const { return a_.front().dim(); }
  const Matrix& operator()(int to, int from) const {
    return a_[static_cast<std::size_t>(to) * static_cast<std::size_t>(s_) + static_cast<std::size_t>(from)];
  }
  const std::vector<Matrix>& all() const { return a_; }

 private:
  int s_ = 0;
  std::vector<Matrix> a_;
};

/// sup over rows of the row's total variation.
inline double kernel_norm(const FiniteKernel& k) {
  double best = 0.0;
  for (Eigen::Index i = 0; i < k.weights().rows(); ++i) best = std::max(best, k.weights().row(i).cwiseAbs().sum());
  return best;
}

inline FiniteKernel iterate_kernel(const FiniteKernel& k, int n) {
  if (n < 1) throw DomainError("iterate_kernel needs n >= 1");
  Eigen::MatrixXcd p = k.weights();
  for (int i = 1; i < n; ++i) p = p * k.weights();
  return FiniteKernel(std::move(p));
}

struct ErgodicityReport {
  bool uniformly_ergodic = false;
  std::vector<double> stationary;
  double rate_rho = 1.0;
  int n_star = -1;                // first n with sup-row distance < 1/2, -1 if never
  std::vector<double> distances;  // sup over rows of TV(K^n(s, .) - stationary), n = 1, 2, ...
  std::string note;
};

namespace detail {

// Row vector pi with pi W = pi and sum pi = 1, by least squares.
inline Eigen::VectorXcd stationary_row(const Eigen::MatrixXcd& w) {
  const Eigen::Index s = w.rows();
  Eigen::MatrixXcd m(s + 1, s);
  m.topRows(s) = w.transpose() - Eigen::MatrixXcd::Identity(s, s);
  m.row(s).setOnes();
  Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(s + 1);
  rhs(s) = 1.0;
  return m.colPivHouseholderQr().solve(rhs);
}

}  // namespace detail

/// Measures sup-row TV distance of K^n to the stationary row until it falls
/// below 1e-10 (uniformly ergodic) or n_max is reached.
inline ErgodicityReport ergodicity_check(const FiniteKernel& k, int n_max = 2000) {
  if (!k.is_stochastic()) throw DomainError("ergodicity_check needs a stochastic kernel");
  const Eigen::Index s = k.states();
  const Eigen::MatrixXd p = k.weights().real();
  const Eigen::VectorXcd pi_c = detail::stationary_row(k.weights());
  ErgodicityReport rep;
  Eigen::RowVectorXd pi = pi_c.real().transpose();
  for (Eigen::Index j = 0; j < s; ++j) pi(j) = std::max(0.0, pi(j));
  pi /= pi.sum();
  rep.stationary.assign(pi.data(), pi.data() + s);
  const double residual = (pi * p - pi).cwiseAbs().maxCoeff();

  Eigen::MatrixXd power = p;
  for (int n = 1; n <= n_max; ++n) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < s; ++i) worst = std::max(worst, (power.row(i) - pi).cwiseAbs().sum());
    rep.distances.push_back(worst);
    if (rep.n_star < 0 && worst < 0.5) rep.n_star = n;
    if (worst < 1e-10) {
      rep.uniformly_ergodic = residual <= 1e-10;
      break;
    }
    power = power * p;
  }
  // geometric rate from the second half of the recorded decay
  const auto& d = rep.distances;
  const std::size_t last = d.size() - 1;
  if (d.front() < 1e-10) {
    rep.rate_rho = 0.0;
  } else {
    std::size_t hi = last;
    while (hi > 0 && d[hi] < 1e-14) --hi;
    const std::size_t lo = hi / 2;
    rep.rate_rho = hi > lo && d[lo] > 0.0 ? std::pow(d[hi] / d[lo], 1.0 / static_cast<double>(hi - lo)) : 1.0;
  }
  if (!rep.uniformly_ergodic) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "sup-row distance to the stationary row is %.3e after %zu steps", d.back(),
                  d.size());
    rep.note = buf;
  }
  return rep;
}

using StateObservable = BasicObservable<StatePoint>;
using StateOrbit = AtomicMeasure<StatePoint, Complex>;

namespace detail {

inline void check_pair(const FiniteKernel& k, const CocycleMap& a) {
  if (k.states() != a.states()) throw DomainError("kernel and cocycle have different state counts");
}

}  // namespace detail

/// phi(s, v) = sum_t K(s, t) log ||A(t, s) v|| on unit representatives.
inline StateObservable phi_markov(const FiniteKernel& k, const CocycleMap& a) {
  detail::check_pair(k, a);
  auto eval = [k, a](const StatePoint& x) {
    Complex sum{};
    for (int t = 0; t < k.states(); ++t) {
      const Complex w = k(x.state, t);
      if (w == Complex{}) continue;
      sum += w * std::log((a(t, x.state).eigen() * x.point.vec()).norm());
    }
    return sum;
  };
  return {std::move(eval), "phi_K", 1.0};
}

/// One transition applied to every atom of a state-projective cloud.
inline StateOrbit markov_orbit_step(const FiniteKernel& k, const CocycleMap& a, const StateOrbit& orbit,
                                    std::size_t capacity, double merge_tol = kDedupTol) {
  std::vector<StateOrbit::Atom> next;
  for (const auto& x : orbit)
    for (int t = 0; t < k.states(); ++t) {
      const Complex w = k(x.point.state, t);
      if (w == Complex{}) continue;
      if (next.size() >= capacity)
        throw CapacityError("path expansion exceeds the capacity " + std::to_string(capacity));
      next.push_back({StatePoint{t, project_unchecked(a(t, x.point.state).eigen() * x.point.point.vec())},
                      w * x.weight});
    }
  return StateOrbit(std::move(next), merge_tol);
}

/// (Q_K^n phi)(start) by expanding all length-n paths.
inline QnEvaluation apply_QK_n(const FiniteKernel& k, const CocycleMap& a, const StateObservable& phi,
                               const StatePoint& start, int n, const PrunePolicy& prune = PrunePolicy::none()) {
  detail::check_pair(k, a);
  if (n < 0) throw DomainError("apply_QK_n needs n >= 0");
  if (start.state < 0 || start.state >= k.states()) throw DomainError("start state out of range");
  StateOrbit orbit({{start, Complex(1.0)}});
  double pruned = 0.0;
  const double tv = kernel_norm(k);
  for (int step = 1; step <= n; ++step) {
    orbit = markov_orbit_step(k, a, orbit, prune.capacity);
    pruned += detail::prune_atoms(orbit, prune) * std::pow(tv, n - step);
  }
  QnEvaluation out;
  out.n = n;
  out.value = integrate(orbit, [&](const StatePoint& x) { return phi(x); });
  out.pruned_variation = pruned;
  out.atoms = orbit.size();
  return out;
}

/// Q_K phi as an observable; nesting is the reference for apply_QK_n.
inline StateObservable apply_QK(const FiniteKernel& k, const CocycleMap& a, StateObservable phi) {
  detail::check_pair(k, a);
  auto inner = phi.eval;
  return {[k, a, inner = std::move(inner)](const StatePoint& x) {
            Complex sum{};
            for (int t = 0; t < k.states(); ++t) {
              const Complex w = k(x.state, t);
              if (w == Complex{}) continue;
              sum += w * inner(StatePoint{t, act(a(t, x.state), x.point)});
            }
            return sum;
          },
          "Q_K(" + phi.label + ")", phi.holder_alpha_hint};
}

namespace detail {

// Samples the next state from |K(s, .)| with the phase and row mass carried along.
struct RowSampler {
  std::vector<std::vector<int>> to;
  std::vector<std::vector<Complex>> phase;
  std::vector<std::vector<double>> cumulative;
  std::vector<double> tv;

  explicit RowSampler(const FiniteKernel& k) {
    const int s = k.states();
    to.resize(static_cast<std::size_t>(s));
    phase.resize(static_cast<std::size_t>(s));
    cumulative.resize(static_cast<std::size_t>(s));
    tv.assign(static_cast<std::size_t>(s), 0.0);
    for (int i = 0; i < s; ++i) {
      const auto u = static_cast<std::size_t>(i);
      for (int j = 0; j < s; ++j) {
        const Complex w = k(i, j);
        if (w == Complex{}) continue;
        to[u].push_back(j);
        phase[u].push_back(w / std::abs(w));
        tv[u] += std::abs(w);
        cumulative[u].push_back(tv[u]);
      }
      for (auto& c : cumulative[u]) c /= tv[u];
      if (!cumulative[u].empty()) cumulative[u].back() = 1.0;
    }
  }
  // index into to[s]; the row must be nonzero
  std::size_t draw(int s, Rng& rng) const {
    const auto& c = cumulative[static_cast<std::size_t>(s)];
    return static_cast<std::size_t>(std::upper_bound(c.begin(), c.end(), rng.uniform()) - c.begin());
  }
};

}  // namespace detail

/// Path sampling estimate of (Q_K^n phi)(start): next states drawn from
/// |K(s, .)|, each sample weighted by the phases and row masses along its path.
inline QnEvaluation apply_QK_n_mc(const FiniteKernel& k, const CocycleMap& a, const StateObservable& phi,
                                  const StatePoint& start, int n, std::size_t samples, std::uint64_t seed,
                                  const McOptions& opt = {}) {
  detail::check_pair(k, a);
  if (n < 0 || samples < 1) throw DomainError("apply_QK_n_mc needs n >= 0 and samples >= 1");
  const detail::RowSampler sampler(k);
  const std::size_t replicas = (samples + opt.replica_size - 1) / opt.replica_size;
  std::vector<ComplexAccumulator> acc(replicas);
  parallel_for(replicas, opt.threads, [&](std::size_t r) {
    Rng rng(derive_seed(seed, r));
    const std::size_t begin = r * opt.replica_size;
    const std::size_t count = std::min(opt.replica_size, samples - begin);
    for (std::size_t i = 0; i < count; ++i) {
      int s = start.state;
      Eigen::VectorXd v = start.point.vec();
      Complex w = 1.0;
      bool dead = false;
      for (int step = 0; step < n; ++step) {
        const auto u = static_cast<std::size_t>(s);
        if (sampler.to[u].empty()) {
          dead = true;
          break;
        }
        const std::size_t j = sampler.draw(s, rng);
        const int t = sampler.to[u][j];
        w *= sampler.phase[u][j] * sampler.tv[u];
        v = a(t, s).eigen() * v;
        v.normalize();
        s = t;
      }
      acc[r].add(dead ? Complex{} : w * phi(StatePoint{s, project_unchecked(v)}));
    }
  });
  ComplexAccumulator total;
  for (const auto& x : acc) total.merge(x);
  QnEvaluation out;
  out.n = n;
  out.method = QnEvaluation::Method::monte_carlo;
  out.value = total.mean;
  out.stat_error = total.standard_error();
  return out;
}

namespace detail {

// Law of the matrix word over length-n paths from `from`, weighted by |K| along the path.
inline ComplexAtomicMeasure path_measure(const FiniteKernel& k, const CocycleMap& a, int from, int n,
                                         std::size_t capacity) {
  struct Path {
    int state;
    Eigen::MatrixXd word;
    double w;
  };
  const auto d = static_cast<Eigen::Index>(a.dim());
  std::vector<Path> layer{{from, Eigen::MatrixXd::Identity(d, d), 1.0}};
  for (int step = 0; step < n; ++step) {
    std::vector<Path> next;
    for (const auto& p : layer)
      for (int t = 0; t < k.states(); ++t) {
        const double w = std::abs(k(p.state, t));
        if (w == 0.0) continue;
        if (next.size() >= capacity) throw CapacityError("path measure exceeds the capacity " + std::to_string(capacity));
        next.push_back({t, a(t, p.state).eigen() * p.word, p.w * w});
      }
    layer = std::move(next);
  }
  std::vector<MatrixAtom> atoms;
  for (const auto& p : layer) atoms.push_back({Matrix::trusted(p.word), p.w});
  return ComplexAtomicMeasure(std::move(atoms));
}

}  // namespace detail

/// Certified upper bound for the n-step Markov k_alpha: the single-point
/// singular-value bound applied to each state's |K|-weighted path measure,
/// maximized over starting states.
inline double kalpha_markov_bound(const FiniteKernel& k, const CocycleMap& a, double alpha, int n = 1,
                                  const SupGridSpec& grid = {}, std::size_t capacity = 1u << 16) {
  detail::check_pair(k, a);
  if (!(alpha > 0.0 && alpha <= 1.0)) throw DomainError("alpha must lie in (0, 1]");
  if (n < 1) throw DomainError("kalpha_markov_bound needs n >= 1");
  double best = 0.0;
  for (int s = 0; s < k.states(); ++s) {
    const auto m = detail::path_measure(k, a, s, n, capacity);
    if (!m.empty()) best = std::max(best, kalpha_upper_bound(m, alpha, grid));
  }
  return best;
}

/// Sampled lower bound for the same quantity.
inline double kalpha_markov_empirical(const FiniteKernel& k, const CocycleMap& a, double alpha, int n = 1,
                                      const PairPlan& plan = {}, std::size_t capacity = 1u << 16) {
  detail::check_pair(k, a);
  double best = 0.0;
  for (int s = 0; s < k.states(); ++s) {
    const auto m = detail::path_measure(k, a, s, n, capacity);
    if (!m.empty()) best = std::max(best, kalpha_empirical(m, alpha, plan));
  }
  return best;
}

/// Same scan as find_certificate with the Markov bound; the radius is in the
/// kernel norm, over kernels with the same cocycle.
inline CertificateSearch find_certificate_markov(const FiniteKernel& k, const CocycleMap& a,
                                                 const CertificateOptions& opt = {}) {
  detail::check_pair(k, a);
  if (opt.alpha_grid.empty() || opt.n_max < 1) throw DomainError("find_certificate_markov needs a grid and n_max >= 1");
  CertificateSearch out;
  std::vector<std::vector<double>> bounds(opt.alpha_grid.size());  // bounds[alpha][n - 1]
  for (int n = 1; n <= opt.n_max; ++n) {
    for (std::size_t ai = 0; ai < opt.alpha_grid.size(); ++ai) {
      const double alpha = opt.alpha_grid[ai];
      double kappa = 0.0;
      try {
        kappa = kalpha_markov_bound(k, a, alpha, n, opt.grid, opt.capacity);
      } catch (const CapacityError& e) {
        out.stop_reason = e.what();
        return out;
      }
      bounds[ai].push_back(kappa);
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
        c.power_bounds.push_back(bounds[ai][static_cast<std::size_t>(j - 1)]);
        worst = std::max(worst, c.power_bounds.back());
      }
      c.power_bounds.push_back(kappa);
      c.C = worst * std::pow(c.theta, n);
      const FiniteKernel abs_k(k.weights().cwiseAbs().cast<Complex>());
      const double kappa_abs = k.is_stochastic() ? kappa : kalpha_markov_bound(abs_k, a, alpha, n, opt.grid, opt.capacity);
      detail::set_neighborhood(c, kappa_abs, kernel_norm(k), a.all(), opt.max_words);
      out.certificate = c;
      out.stop_reason = "found";
      return out;
    }
  }
  out.stop_reason = "no kappa < 1 up to n_max";
  return out;
}

struct MarkovIterationOptions {
  IterationOptions iteration{};
  bool per_state_runs = true;  // also iterate from each single state to report the spread
  int ergodicity_n_max = 2000;
};

namespace detail {

inline ProjectivePoint markov_base_point(const CocycleMap& a, const std::optional<ProjectivePoint>& v0) {
  const ProjectivePoint p = v0 ? *v0 : all_ones(a.dim());
  if (p.dim() != a.dim()) throw DomainError("base point dimension differs from the cocycle");
  return p;
}

// Iteration for any kernel with a stationary row; the start is the
// stationary mixture of (s, v0), which removes the state-mixing transient.
inline OrbitRun markov_run(const FiniteKernel& k, const CocycleMap& a, double tol, const ProjectivePoint& v0,
                           const std::optional<int>& single_state, const IterationOptions& opt) {
  const auto phi = phi_markov(k, a);
  auto phi_eval = [&phi](const StatePoint& x) { return phi(x); };
  std::vector<StateOrbit::Atom> start;
  if (single_state) {
    start.push_back({StatePoint{*single_state, v0}, Complex(1.0)});
  } else {
    const Eigen::VectorXcd pi = stationary_row(k.weights());
    for (int s = 0; s < k.states(); ++s)
      if (pi(s) != Complex{}) start.push_back({StatePoint{s, v0}, pi(s)});
  }
  auto step = [&](const StateOrbit& o) { return markov_orbit_step(k, a, o, opt.capacity, opt.merge_tol); };
  return run_orbit(StateOrbit(std::move(start), opt.merge_tol), step, phi_eval, tol, std::nullopt, 1.0, opt);
}

inline LyapunovResult to_result(const OrbitRun& run) {
  LyapunovResult out;
  out.method = LyapunovResult::Method::operator_iteration;
  out.value = run.value;
  out.L1 = run.value.real();
  out.n_used = run.n;
  out.error_bound = run.error_bound;
  out.trace = run.trace;
  out.diagnostics["value_re"] = run.value.real();
  out.diagnostics["value_im"] = run.value.imag();
  out.diagnostics["last_increment"] = run.last_increment;
  out.diagnostics["ratio_estimate"] = run.ratio;
  out.diagnostics["orbit_points"] = static_cast<double>(run.orbit_points);
  out.diagnostics["tol_met"] = run.tol_met ? 1.0 : 0.0;
  out.diagnostics["certified"] = 0.0;
  return out;
}

}  // namespace detail

/// L1 of the cocycle over the stationary chain, by iterating Q_K^n phi_K.
/// Stopping is empirical; a certificate is recorded in the diagnostics but
/// does not bound the error, since the state-mixing part of the tail is not
/// controlled by k_alpha alone.
inline LyapunovResult lyapunov_markov(const FiniteKernel& k, const CocycleMap& a, double tol,
                                      const std::optional<ContractionCertificate>& cert = std::nullopt,
                                      const std::optional<ProjectivePoint>& v0 = std::nullopt,
                                      const MarkovIterationOptions& opt = {}) {
  detail::check_pair(k, a);
  if (!(tol > 0.0)) throw DomainError("lyapunov_markov needs tol > 0");
  const auto erg = ergodicity_check(k, opt.ergodicity_n_max);
  if (!erg.uniformly_ergodic) throw DomainError("lyapunov_markov needs a uniformly ergodic kernel: " + erg.note);
  const ProjectivePoint p = detail::markov_base_point(a, v0);
  const auto main = detail::markov_run(k, a, tol, p, std::nullopt, opt.iteration);
  LyapunovResult out = detail::to_result(main);
  out.diagnostics["mixing_rate"] = erg.rate_rho;
  if (cert) {
    out.diagnostics["certificate_kappa"] = cert->kappa;
    out.diagnostics["certificate_n0"] = cert->n0;
  }
  if (opt.per_state_runs && k.states() > 1) {
    double spread = 0.0, combined = main.error_bound;
    for (int s = 0; s < k.states(); ++s) {
      const auto run = detail::markov_run(k, a, tol, p, s, opt.iteration);
      spread = std::max(spread, std::abs(run.value - main.value));
      combined = std::max(combined, main.error_bound + run.error_bound);
    }
    out.diagnostics["state_spread"] = spread;
    out.diagnostics["uniformity_ok"] = spread <= combined + tol ? 1.0 : 0.0;
  }
  return out;
}

/// Mean over stationary paths of (1/n) log ||A(w_n, w_{n-1}) ... A(w_1, w_0)||.
inline LyapunovResult lyapunov_markov_mc(const FiniteKernel& k, const CocycleMap& a, int n, int trials,
                                         std::uint64_t seed, const McLyapunovOptions& opt = {}) {
  detail::check_pair(k, a);
  if (n < 1 || trials < 1) throw DomainError("lyapunov_markov_mc needs n, trials >= 1");
  const auto erg = ergodicity_check(k);
  if (!erg.uniformly_ergodic) throw DomainError("lyapunov_markov_mc needs a uniformly ergodic kernel: " + erg.note);
  const detail::RowSampler sampler(k);
  std::vector<double> start_cdf;
  double acc_pi = 0.0;
  for (double x : erg.stationary) start_cdf.push_back(acc_pi += x);
  start_cdf.back() = 1.0;
  double max_cond = 1.0;
  for (const auto& g : a.all()) max_cond = std::max(max_cond, singular_values(g).condition());
  const auto d = static_cast<Eigen::Index>(a.dim());
  const std::size_t replicas = (static_cast<std::size_t>(trials) + opt.replica_size - 1) / opt.replica_size;
  std::vector<ComplexAccumulator> acc(replicas);
  parallel_for(replicas, opt.threads, [&](std::size_t r) {
    Rng rng(derive_seed(seed, r));
    const std::size_t begin = r * opt.replica_size;
    const std::size_t count = std::min<std::size_t>(opt.replica_size, static_cast<std::size_t>(trials) - begin);
    for (std::size_t i = 0; i < count; ++i) {
      int s = static_cast<int>(std::upper_bound(start_cdf.begin(), start_cdf.end(), rng.uniform()) - start_cdf.begin());
      Eigen::MatrixXd prod = Eigen::MatrixXd::Identity(d, d);
      double log_scale = 0.0;
      for (int step = 1; step <= n; ++step) {
        const int t = sampler.to[static_cast<std::size_t>(s)][sampler.draw(s, rng)];
        prod = a(t, s).eigen() * prod;
        s = t;
        if (step % opt.rescale_every == 0) {
          const double f = prod.norm();
          prod /= f;
          log_scale += std::log(f);
        }
      }
      const double top = Eigen::JacobiSVD<Eigen::MatrixXd>(prod).singularValues()(0);
      acc[r].add((log_scale + std::log(top)) / n);
    }
  });
  ComplexAccumulator total;
  for (const auto& x : acc) total.merge(x);
  LyapunovResult out;
  out.method = LyapunovResult::Method::monte_carlo;
  out.L1 = total.mean.real();
  out.value = out.L1;
  out.n_used = n;
  const double stat = total.standard_error();
  const double bias = std::log(max_cond) / n;
  out.error_bound = stat + bias;
  out.diagnostics["stat_error"] = stat;
  out.diagnostics["bias_bound"] = bias;
  out.diagnostics["trials"] = trials;
  return out;
}

/// Average of phi_K along particle paths of the chain after a burn-in; the
/// particles start at stationary states with random directions.
inline LyapunovResult lyapunov_markov_furstenberg(const FiniteKernel& k, const CocycleMap& a, int particles,
                                                  int burn_in, int iters, std::uint64_t seed,
                                                  const FurstenbergOptions& opt = {}) {
  detail::check_pair(k, a);
  if (particles < 1 || iters < 1 || burn_in < 0) throw DomainError("lyapunov_markov_furstenberg needs positive sizes");
  const auto erg = ergodicity_check(k);
  if (!erg.uniformly_ergodic)
    throw DomainError("lyapunov_markov_furstenberg needs a uniformly ergodic kernel: " + erg.note);
  const detail::RowSampler sampler(k);
  const auto phi = phi_markov(k, a);
  std::vector<double> start_cdf;
  double acc_pi = 0.0;
  for (double x : erg.stationary) start_cdf.push_back(acc_pi += x);
  start_cdf.back() = 1.0;
  const auto d = static_cast<Eigen::Index>(a.dim());
  const std::size_t replicas = (static_cast<std::size_t>(particles) + opt.replica_size - 1) / opt.replica_size;
  std::vector<ComplexAccumulator> acc(replicas);
  parallel_for(replicas, opt.threads, [&](std::size_t r) {
    Rng rng(derive_seed(seed, r));
    const std::size_t begin = r * opt.replica_size;
    const std::size_t count = std::min<std::size_t>(opt.replica_size, static_cast<std::size_t>(particles) - begin);
    for (std::size_t i = 0; i < count; ++i) {
      int s = static_cast<int>(std::upper_bound(start_cdf.begin(), start_cdf.end(), rng.uniform()) - start_cdf.begin());
      Eigen::VectorXd v = rng.normal_vector(d);
      v.normalize();
      double sum = 0.0;
      for (int step = 0; step < burn_in + iters; ++step) {
        if (step >= burn_in) sum += phi(StatePoint{s, project_unchecked(v)}).real();
        const int t = sampler.to[static_cast<std::size_t>(s)][sampler.draw(s, rng)];
        v = a(t, s).eigen() * v;
        v.normalize();
        s = t;
      }
      acc[r].add(sum / iters);
    }
  });
  ComplexAccumulator total;
  for (const auto& x : acc) total.merge(x);
  LyapunovResult out;
  out.method = LyapunovResult::Method::furstenberg_formula;
  out.L1 = total.mean.real();
  out.value = out.L1;
  out.n_used = iters;
  out.error_bound = total.standard_error();
  out.diagnostics["stat_error"] = out.error_bound;
  out.diagnostics["particles"] = particles;
  return out;
}

struct KernelTaylorOptions {
  int order = 2;
  std::optional<double> radius;  // in units of z
  double tol = 1e-9;
  int nodes = 0;                 // 0 means max(16, 4 * order)
  bool support_constrained = false;  // require supp L(s, .) inside supp K(s, .)
  std::optional<ContractionCertificate> certificate;
  IterationOptions iteration{};
};

/// Taylor coefficients in z of L1 for the kernels K + z L, extracted on a circle
/// like taylor_coefficients. Values off the real axis come from iterating the
/// complex kernel from its (complex) stationary row.
inline TaylorReport kernel_taylor(const FiniteKernel& k, const FiniteKernel& l, const CocycleMap& a,
                                  const KernelTaylorOptions& opt) {
  detail::check_pair(k, a);
  detail::check_pair(l, a);
  if (!k.is_stochastic()) throw DomainError("kernel_taylor needs a stochastic center kernel");
  if (opt.order < 1) throw DomainError("kernel_taylor needs order >= 1");
  for (int s = 0; s < l.states(); ++s) {
    const Complex m = l.weights().row(s).sum();
    if (std::abs(m) >= 1e-12) throw DomainError("direction row " + std::to_string(s) + " has nonzero mass");
    if (opt.support_constrained)
      for (int t = 0; t < l.states(); ++t)
        if (l(s, t) != Complex{} && k(s, t) == Complex{})
          throw DomainError("direction charges the transition " + std::to_string(s) + " -> " + std::to_string(t) +
                            " outside the support of the kernel");
  }
  const auto erg = ergodicity_check(k);
  if (!erg.uniformly_ergodic) throw DomainError("kernel_taylor needs a uniformly ergodic kernel: " + erg.note);

  TaylorReport rep;
  const double lnorm = kernel_norm(l);
  if (opt.certificate) {
    rep.certified_radius = opt.certificate->tv_radius;
    rep.radius_source = "certificate";
    const double limit = lnorm > 0.0 ? rep.certified_radius / lnorm : std::numeric_limits<double>::infinity();
    rep.circle_radius = opt.radius ? *opt.radius : (lnorm > 0.0 ? 0.5 * limit : 1.0);
    if (rep.circle_radius > limit)
      throw DomainError("radius " + std::to_string(rep.circle_radius) + " exceeds the certified limit " +
                        std::to_string(limit));
  } else if (opt.radius) {
    rep.radius_source = "explicit";
    rep.circle_radius = *opt.radius;
  } else {
    throw DomainError("kernel_taylor needs a certificate or an explicit radius");
  }
  if (!(rep.circle_radius > 0.0)) throw DomainError("circle radius must be positive");

  const double inner_tol = opt.tol / 10.0;
  const ProjectivePoint v0 = detail::all_ones(a.dim());
  int steps = 0;
  auto f = [&](Complex z) {
    const FiniteKernel kz = kernel_add(k, l, z);
    for (int s = 0; s < kz.states(); ++s)
      rep.max_mass_defect = std::max(rep.max_mass_defect, std::abs(kz.weights().row(s).sum() - 1.0));
    try {
      const auto run = detail::markov_run(kz, a, inner_tol, v0, std::nullopt, opt.iteration);
      steps = std::max(steps, run.n);
      return run.value;
    } catch (const std::exception& e) {
      throw ConvergenceError("iteration failed at z = (" + std::to_string(z.real()) + ", " +
                             std::to_string(z.imag()) + "), which may lie outside the contraction region: " +
                             e.what());
    }
  };
  const int m = opt.nodes > 0 ? opt.nodes : std::max(16, 4 * opt.order);
  rep.circle = cauchy_taylor(f, rep.circle_radius, m);
  rep.coefficients.assign(rep.circle.coefficients.begin(),
                          rep.circle.coefficients.begin() + std::min(m, opt.order + 1));
  rep.reconstruction_residual = rep.circle.residual;
  rep.n_used = steps;
  rep.center_value = detail::markov_run(k, a, inner_tol, v0, std::nullopt, opt.iteration).value.real();
  rep.center_mismatch = std::abs(rep.coefficients[0] - rep.center_value);
  return rep;
}

// ---------------------------------------------------------------------------
// Invariant sections

struct SectionReport {
  enum class Status { found, none, inconclusive };
  Status status = Status::inconclusive;
  /// sections[i][s]: orthonormal basis of the subspace at state s
  std::vector<std::vector<Eigen::MatrixXd>> sections;
  bool all_lines_invariant = false;
  std::optional<std::vector<double>> restricted_L1;
  std::optional<double> L1;
  std::optional<bool> quasi_irreducible;
  std::optional<int> loop_span_dimension;
  std::string note;
};

inline const char* to_string(SectionReport::Status s) {
  switch (s) {
    case SectionReport::Status::found: return "found";
    case SectionReport::Status::none: return "none";
    case SectionReport::Status::inconclusive: return "inconclusive";
  }
  return "inconclusive";
}

struct SectionOptions {
  double eig_tol = 1e-8;
  double verify_tol = 1e-9;
  std::size_t max_loops = 4096;
  bool compute_exponents = true;
  double lyapunov_tol = 1e-8;
  double quasi_tol = 1e-6;
};

namespace detail {

inline bool strongly_connected(const FiniteKernel& k) {
  const int s = k.states();
  for (int root = 0; root < s; ++root) {
    std::vector<char> seen(static_cast<std::size_t>(s), 0);
    std::vector<int> stack{root};
    seen[static_cast<std::size_t>(root)] = 1;
    while (!stack.empty()) {
      const int x = stack.back();
      stack.pop_back();
      for (int t = 0; t < s; ++t)
        if (k(x, t) != Complex{} && !seen[static_cast<std::size_t>(t)]) {
          seen[static_cast<std::size_t>(t)] = 1;
          stack.push_back(t);
        }
    }
    if (std::find(seen.begin(), seen.end(), 0) != seen.end()) return false;
  }
  return true;
}

// Products along closed walks at state 0 of length <= 2 S.
inline std::vector<Eigen::MatrixXd> loop_products(const FiniteKernel& k, const CocycleMap& a, std::size_t cap) {
  struct Walk {
    int state;
    Eigen::MatrixXd word;
  };
  const auto d = static_cast<Eigen::Index>(a.dim());
  std::vector<Eigen::MatrixXd> loops;
  std::vector<Walk> layer{{0, Eigen::MatrixXd::Identity(d, d)}};
  for (int len = 1; len <= 2 * k.states() && !layer.empty(); ++len) {
    std::vector<Walk> next;
    for (const auto& w : layer)
      for (int t = 0; t < k.states(); ++t) {
        if (k(w.state, t) == Complex{}) continue;
        Eigen::MatrixXd x = a(t, w.state).eigen() * w.word;
        x /= x.norm();
        if (t == 0) {
          if (loops.size() < cap) loops.push_back(x);
        } else if (next.size() < cap) {
          next.push_back({t, x});
        }
      }
    layer = std::move(next);
  }
  return loops;
}

// Propagates a subspace at state 0 along support edges and checks closure on every edge.
inline std::optional<std::vector<Eigen::MatrixXd>> propagate_section(const FiniteKernel& k, const CocycleMap& a,
                                                                     const Eigen::MatrixXd& root, double tol) {
  const int s = k.states();
  std::vector<std::optional<Eigen::MatrixXd>> v(static_cast<std::size_t>(s));
  v[0] = root;
  std::vector<int> queue{0};
  for (std::size_t qi = 0; qi < queue.size(); ++qi) {
    const int x = queue[qi];
    for (int t = 0; t < s; ++t) {
      if (k(x, t) == Complex{}) continue;
      const Eigen::MatrixXd image = orthonormalize(a(t, x).eigen() * *v[static_cast<std::size_t>(x)]);
      auto& slot = v[static_cast<std::size_t>(t)];
      if (!slot) {
        slot = image;
        queue.push_back(t);
      } else if ((image * image.transpose() - *slot * slot->transpose()).norm() > tol) {
        return std::nullopt;
      }
    }
  }
  std::vector<Eigen::MatrixXd> out;
  for (auto& x : v) out.push_back(*x);
  return out;
}

}  // namespace detail

/// Subspace-valued maps V with A(t, s) V(s) = V(t) on every support edge.
/// Any such V(0) is invariant under all loop products at state 0, so the
/// candidates are their common eigenspaces (and, for d >= 3, complements of
/// common left eigenvectors); each candidate is propagated and verified. For
/// d = 2 this is exhaustive; for d >= 3 a full loop span rules sections out
/// and anything else is reported as inconclusive.
inline SectionReport invariant_section_check(const FiniteKernel& k, const CocycleMap& a,
                                             const SectionOptions& opt = {}) {
  detail::check_pair(k, a);
  SectionReport rep;
  const auto d = static_cast<Eigen::Index>(a.dim());
  if (d == 1) {
    rep.status = SectionReport::Status::none;
    rep.note = "dimension 1";
    return rep;
  }
  if (!detail::strongly_connected(k)) {
    rep.note = "support graph is not strongly connected";
    return rep;
  }
  const auto loops = detail::loop_products(k, a, opt.max_loops);
  std::vector<Eigen::MatrixXd> candidates;
  if (std::all_of(loops.begin(), loops.end(), detail::is_scalar)) {
    rep.all_lines_invariant = true;
    for (Eigen::Index i = 0; i < d; ++i) candidates.push_back(Eigen::MatrixXd::Identity(d, d).col(i));
    rep.note = "every loop product is scalar; every line at state 0 extends, coordinate lines listed";
  } else {
    for (auto& e : detail::common_eigenspaces(loops, opt.eig_tol)) {
      if (e.cols() == d) continue;
      if (e.cols() > 1)
        for (Eigen::Index j = 0; j < e.cols(); ++j) candidates.push_back(e.col(j));
      candidates.push_back(e);
    }
    if (d >= 3) {
      std::vector<Eigen::MatrixXd> transposed;
      for (const auto& g : loops) transposed.push_back(g.transpose());
      for (auto& w : detail::common_eigenspaces(transposed, opt.eig_tol))
        candidates.push_back(detail::null_space(w.transpose(), 1e-10));
    }
  }
  for (const auto& c : candidates) {
    if (c.cols() == 0 || c.cols() == d) continue;
    auto sec = detail::propagate_section(k, a, c, opt.verify_tol);
    if (!sec) continue;
    const bool dup = std::any_of(rep.sections.begin(), rep.sections.end(), [&](const auto& other) {
      return detail::same_subspace(other.front(), sec->front());
    });
    if (!dup) rep.sections.push_back(std::move(*sec));
  }
  if (d >= 3 && !rep.all_lines_invariant)
    rep.loop_span_dimension = detail::word_span_dimension(loops, static_cast<int>(2 * d * d));

  if (!rep.sections.empty()) {
    rep.status = SectionReport::Status::found;
  } else if (d == 2 || (rep.loop_span_dimension && *rep.loop_span_dimension == d * d)) {
    rep.status = SectionReport::Status::none;
  } else {
    rep.status = SectionReport::Status::inconclusive;
    rep.note = "proper loop span without a detected section";
  }
  std::stable_sort(rep.sections.begin(), rep.sections.end(),
                   [](const auto& x, const auto& y) { return x.front().cols() < y.front().cols(); });

  if (rep.status == SectionReport::Status::found && opt.compute_exponents && k.is_stochastic() &&
      ergodicity_check(k).uniformly_ergodic) {
    MarkovIterationOptions mo;
    mo.per_state_runs = false;
    rep.L1 = lyapunov_markov(k, a, opt.lyapunov_tol, std::nullopt, std::nullopt, mo).L1;
    std::vector<double> restricted;
    bool quasi = true;
    for (const auto& sec : rep.sections) {
      const auto block = CocycleMap::from_function(k.states(), [&](int to, int from) {
        return Matrix::trusted(sec[static_cast<std::size_t>(to)].transpose() * a(to, from).eigen() *
                               sec[static_cast<std::size_t>(from)]);
      });
      const double l = lyapunov_markov(k, block, opt.lyapunov_tol, std::nullopt, std::nullopt, mo).L1;
      restricted.push_back(l);
      if (l < *rep.L1 - opt.quasi_tol) quasi = false;
    }
    rep.restricted_L1 = restricted;
    rep.quasi_irreducible = quasi;
  }
  return rep;
}

}  // namespace lyapan
