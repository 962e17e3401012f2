#pragma once

// Top Lyapunov exponent of i.i.d. matrix products: operator iteration
// a_n = (Q^n phi)(v0) with certified or empirical stopping, Monte Carlo
// products, the stationary-cloud (Furstenberg) average, the second exponent
// through the exterior square, and detection of invariant subspaces.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lyapan/contraction.hpp"
#include "lyapan/markov_operator.hpp"
#include "lyapan/orbit.hpp"
#include "lyapan/parallel.hpp"
#include "lyapan/random.hpp"

namespace lyapan {

struct LyapunovResult {
  enum class Method { operator_iteration, monte_carlo, furstenberg_formula };
  double L1 = 0.0;
  int n_used = 0;
  double error_bound = 0.0;
  Method method = Method::operator_iteration;
  bool certified = false;
  Complex value{};  // complex limit for mass-one complex measures
  std::map<std::string, double> diagnostics;
  std::vector<Complex> trace;  // a_0, a_1, ... of the main run
};

inline const char* to_string(LyapunovResult::Method m) {
  switch (m) {
    case LyapunovResult::Method::operator_iteration: return "operator_iteration";
    case LyapunovResult::Method::monte_carlo: return "monte_carlo";
    case LyapunovResult::Method::furstenberg_formula: return "furstenberg_formula";
  }
  return "operator_iteration";
}

struct IterationOptions {
  int n_max = 20000;
  std::size_t capacity = 1u << 20;  // orbit points
  double merge_tol = kDedupTol;
  int extra_base_points = 3;
  int ratio_window = 4;       // envelope window for the ratio estimate
  int divergence_window = 8;  // no decay across two such windows means no contraction
  int min_iters = 3;
  int n_max_certified = 400;  // certified stopping only when it needs at most this many steps
};

namespace detail {

struct OrbitRun {
  Complex value{};
  int n = 0;
  double error_bound = 0.0;
  bool certified = false;
  bool tol_met = false;
  double ratio = 0.0;
  double last_increment = 0.0;
  double certified_tail = std::numeric_limits<double>::infinity();
  double certified_needed_n = 0.0;
  std::size_t orbit_points = 0;
  std::vector<Complex> trace;
};

inline std::string tol_text(double tol) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", tol);
  return buf;
}

inline std::string increments_text(const std::vector<double>& inc, std::size_t count) {
  std::string s;
  const std::size_t from = inc.size() > count ? inc.size() - count : 0;
  char buf[32];
  for (std::size_t i = from; i < inc.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s%.3e", s.empty() ? "" : ", ", inc[i]);
    s += buf;
  }
  return s;
}

// Iterates orbit <- step(orbit) and a_n = integral of phi against the orbit.
template <class Orbit, class Step, class Phi>
OrbitRun run_orbit(Orbit orbit, const Step& step, const Phi& phi, double tol,
                   const std::optional<double>& cert_prefactor, double cert_theta, const IterationOptions& opt) {
  OrbitRun run;
  // The certified tail decays like theta^{-n}; when theta is close to 1 the
  // required n is out of reach and the empirical rule is used instead, with
  // the certified tail still reported.
  bool use_certificate = false;
  if (cert_prefactor) {
    const double needed = std::log(*cert_prefactor * cert_theta / (cert_theta - 1.0) / tol) / std::log(cert_theta);
    use_certificate = needed <= opt.n_max_certified;
    run.certified_needed_n = needed;
  }
  Complex prev = integrate(orbit, phi);
  run.trace.push_back(prev);
  std::vector<double> inc;
  int tiny = 0;
  for (int n = 1; n <= opt.n_max; ++n) {
    try {
      orbit = step(orbit);
    } catch (const CapacityError& e) {
      if (run.certified) return run;  // honest certified bound at the last n, tol not met
      throw ConvergenceError(std::string("operator iteration ran out of room before tolerance ") +
                             tol_text(tol) + " at n = " + std::to_string(n - 1) +
                             "; last increments: " + increments_text(inc, 6) + " (" + e.what() + ")");
    }
    const Complex a = integrate(orbit, phi);
    run.trace.push_back(a);
    inc.push_back(std::abs(a - prev));
    prev = a;
    run.value = a;
    run.n = n;
    run.orbit_points = orbit.size();
    run.last_increment = inc.back();

    if (cert_prefactor) {
      run.certified_tail = *cert_prefactor * std::pow(cert_theta, -n) * cert_theta / (cert_theta - 1.0);
      if (use_certificate) {
        run.certified = true;
        run.error_bound = run.certified_tail;
        if (run.certified_tail < tol) {
          run.tol_met = true;
          return run;
        }
        continue;
      }
    }

    const double floor = 4e-15 * std::max(1.0, std::abs(a));
    if (inc.back() == 0.0 || (inc.back() <= floor && ++tiny >= 2)) {
      run.ratio = 0.0;
      run.error_bound = inc.back();
      run.tol_met = true;
      return run;
    }
    if (inc.back() > floor) tiny = 0;
    // Increments of these sequences are rarely monotone, so both the ratio and
    // the stopping test use the running max over the last `ratio_window` steps.
    const int w4 = opt.ratio_window;
    if (n >= std::max(opt.min_iters, 2 * w4)) {
      const auto end = inc.end();
      const double env = *std::max_element(end - w4, end);
      const double env_prev = *std::max_element(end - 2 * w4, end - w4);
      const double r = env_prev > 0.0 ? std::pow(env / env_prev, 1.0 / w4) : 0.0;
      run.ratio = r;
      if (r < 1.0 && env < tol * (1.0 - r)) {
        run.error_bound = env * r / (1.0 - r);
        run.tol_met = true;
        return run;
      }
    }
    const int w = opt.divergence_window;
    if (n >= 8 * w && inc.back() > tol) {
      const auto end = inc.end();
      const double recent = *std::max_element(end - w, end);
      const double earlier = *std::max_element(end - 2 * w, end - w);
      if (recent >= earlier)
        throw ConvergenceError("no empirical contraction of the increments at n = " + std::to_string(n) +
                               "; last increments: " + increments_text(inc, 2 * w));
    }
  }
  throw ConvergenceError("operator iteration did not reach tolerance " + tol_text(tol) + " within " +
                         std::to_string(opt.n_max) + " steps; last increments: " + increments_text(inc, 6));
}

inline std::vector<Letter<Complex>> letters_of(const ComplexAtomicMeasure& mu) {
  std::vector<Letter<Complex>> out;
  for (const auto& a : mu) out.push_back({a.point.eigen(), a.weight});
  return out;
}

inline ProjectivePoint all_ones(std::size_t d) {
  return project_unchecked(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(d)));
}

// Quasi-random base points distinct from the all-ones direction.
inline std::vector<ProjectivePoint> extra_base_points(std::size_t d, int count) {
  std::vector<ProjectivePoint> out;
  if (count <= 0) return out;
  if (d == 1) return out;
  const auto pts = projective_points(d, 4 * count + 3);
  for (int i = 0; static_cast<int>(out.size()) < count; ++i)
    out.push_back(pts[static_cast<std::size_t>((2 * i + 1) * (d == 2 ? 2 : 1)) % pts.size()]);
  return out;
}

}  // namespace detail

/// Iterates a_n = (Q^n phi_mu)(v0) for a mass-one measure. With a certificate
/// (probability mu only) the stopping rule is the geometric tail
/// v_alpha(phi) C theta^{-n} theta / (theta - 1); otherwise the increments'
/// fitted ratio r gives the empirical rule |a_n - a_{n-1}| < tol (1 - r).
inline LyapunovResult lyapunov_iterative(const ComplexAtomicMeasure& mu, double tol,
                                         const std::optional<ContractionCertificate>& cert = std::nullopt,
                                         const std::optional<ProjectivePoint>& v0 = std::nullopt,
                                         const IterationOptions& opt = {}) {
  if (!(tol > 0.0)) throw DomainError("lyapunov_iterative needs tol > 0");
  const auto mc = mass_class(mu);
  if (mc.tag != MassClass::Tag::probability && mc.tag != MassClass::Tag::mass_one_complex)
    throw DomainError(std::string("lyapunov_iterative needs a mass-one measure, got class ") + to_string(mc.tag));
  const std::size_t d = dimension(mu);
  const auto letters = detail::letters_of(mu);
  const Observable phi = phi_observable(mu);
  auto phi_eval = [&phi](const ProjectivePoint& p) { return phi(p); };

  std::optional<double> prefactor;
  double theta = 1.0;
  if (cert && mc.tag == MassClass::Tag::probability && d >= 2) {
    prefactor = phi_holder_upper_bound(mu, cert->alpha) * cert->C;
    theta = cert->theta;
  }
  const ProjectivePoint start = v0 ? *v0 : detail::all_ones(d);
  if (start.dim() != d) throw DomainError("base point dimension differs from the measure");
  auto step = [&](const ProjectiveOrbit<Complex>& o) { return orbit_step(letters, o, opt.capacity, opt.merge_tol); };
  auto dirac_at = [&](const ProjectivePoint& p) { return ProjectiveOrbit<Complex>({{p, Complex(1.0)}}, opt.merge_tol); };
  const auto main = detail::run_orbit(dirac_at(start), step, phi_eval, tol, prefactor, theta, opt);

  LyapunovResult out;
  out.method = LyapunovResult::Method::operator_iteration;
  out.value = main.value;
  out.L1 = main.value.real();
  out.n_used = main.n;
  out.error_bound = main.error_bound;
  out.certified = main.certified;
  out.trace = main.trace;
  out.diagnostics["value_re"] = main.value.real();
  out.diagnostics["value_im"] = main.value.imag();
  out.diagnostics["last_increment"] = main.last_increment;
  out.diagnostics["ratio_estimate"] = main.ratio;
  out.diagnostics["orbit_points"] = static_cast<double>(main.orbit_points);
  out.diagnostics["tol_met"] = main.tol_met ? 1.0 : 0.0;
  out.diagnostics["certified"] = main.certified ? 1.0 : 0.0;
  if (prefactor) {
    out.diagnostics["certified_tail"] = main.certified_tail;
    out.diagnostics["certified_steps_needed"] = main.certified_needed_n;
  }

  double spread = 0.0, combined = main.error_bound;
  for (const auto& p : detail::extra_base_points(d, opt.extra_base_points)) {
    const auto extra = detail::run_orbit(dirac_at(p), step, phi_eval, tol, prefactor, theta, opt);
    spread = std::max(spread, std::abs(extra.value - main.value));
    combined = std::max(combined, main.error_bound + extra.error_bound);
  }
  out.diagnostics["base_point_spread"] = spread;
  out.diagnostics["uniformity_ok"] = spread <= combined + tol ? 1.0 : 0.0;
  return out;
}

struct McLyapunovOptions {
  int rescale_every = 32;
  std::size_t replica_size = 64;  // trials per seeded replica
  unsigned threads = 1;
};

/// Mean over trials of (1/n) log ||g_n ... g_1|| with letters drawn from mu.
inline LyapunovResult lyapunov_mc(const ComplexAtomicMeasure& mu, int n, int trials, std::uint64_t seed,
                                  const McLyapunovOptions& opt = {}) {
  require_probability(mu, "lyapunov_mc");
  if (n < 1 || trials < 1) throw DomainError("lyapunov_mc needs n, trials >= 1");
  const detail::LetterSampler sampler(mu);
  const std::size_t d = dimension(mu);
  const std::size_t dd = d * d;
  // row-major copies for the hot loop
  std::vector<std::vector<double>> mats;
  double max_cond = 1.0;
  for (const auto& a : mu) {
    std::vector<double> m(dd);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) m[i * d + j] = a.point(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    mats.push_back(std::move(m));
    max_cond = std::max(max_cond, singular_values(a.point).condition());
  }
  const std::size_t replicas = (static_cast<std::size_t>(trials) + opt.replica_size - 1) / opt.replica_size;
  std::vector<ComplexAccumulator> acc(replicas);
  parallel_for(replicas, opt.threads, [&](std::size_t r) {
    Rng rng(derive_seed(seed, r));
    std::vector<double> cur(dd), nxt(dd);
    const std::size_t begin = r * opt.replica_size;
    const std::size_t count = std::min<std::size_t>(opt.replica_size, static_cast<std::size_t>(trials) - begin);
    for (std::size_t t = 0; t < count; ++t) {
      std::fill(cur.begin(), cur.end(), 0.0);
      for (std::size_t i = 0; i < d; ++i) cur[i * d + i] = 1.0;
      double log_scale = 0.0;
      for (int k = 1; k <= n; ++k) {
        const auto& g = mats[sampler.draw(rng)];
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (std::size_t l = 0; l < d; ++l) s += g[i * d + l] * cur[l * d + j];
            nxt[i * d + j] = s;
          }
        std::swap(cur, nxt);
        if (k % opt.rescale_every == 0) {
          double f = 0.0;
          for (double x : cur) f += x * x;
          f = std::sqrt(f);
          for (double& x : cur) x /= f;
          log_scale += std::log(f);
        }
      }
      Eigen::MatrixXd m(d, d);
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cur[i * d + j];
      const double top = Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
      acc[r].add((log_scale + std::log(top)) / n);
    }
  });
  ComplexAccumulator total;
  for (const auto& a : acc) total.merge(a);
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

struct FurstenbergOptions {
  std::size_t replica_size = 16;  // particles per seeded replica
  unsigned threads = 1;
};

/// Average of phi_mu along independent particle paths v_{k+1} = g_k . v_k
/// after a burn-in, i.e. the integral of phi_mu against the stationary measure.
inline LyapunovResult lyapunov_furstenberg(const ComplexAtomicMeasure& mu, int particles, int burn_in, int iters,
                                           std::uint64_t seed, const FurstenbergOptions& opt = {}) {
  require_probability(mu, "lyapunov_furstenberg");
  if (particles < 1 || iters < 1 || burn_in < 0) throw DomainError("lyapunov_furstenberg needs positive sizes");
  const detail::LetterSampler sampler(mu);
  const std::size_t d = dimension(mu);
  std::vector<double> weights;
  for (const auto& a : mu) weights.push_back(a.weight.real());
  const std::size_t replicas = (static_cast<std::size_t>(particles) + opt.replica_size - 1) / opt.replica_size;
  std::vector<ComplexAccumulator> acc(replicas);
  parallel_for(replicas, opt.threads, [&](std::size_t r) {
    Rng rng(derive_seed(seed, r));
    const std::size_t begin = r * opt.replica_size;
    const std::size_t count = std::min<std::size_t>(opt.replica_size, static_cast<std::size_t>(particles) - begin);
    for (std::size_t t = 0; t < count; ++t) {
      Eigen::VectorXd v = rng.normal_vector(static_cast<Eigen::Index>(d));
      v.normalize();
      double sum = 0.0;
      for (int k = 0; k < burn_in + iters; ++k) {
        if (k >= burn_in) {
          double phi = 0.0;
          for (std::size_t i = 0; i < sampler.mats.size(); ++i) phi += weights[i] * std::log((sampler.mats[i] * v).norm());
          sum += phi;
        }
        v = sampler.mats[sampler.draw(rng)] * v;
        v.normalize();
      }
      acc[r].add(sum / iters);
    }
  });
  ComplexAccumulator total;
  for (const auto& a : acc) total.merge(a);
  LyapunovResult out;
  out.method = LyapunovResult::Method::furstenberg_formula;
  out.L1 = total.mean.real();
  out.value = out.L1;
  out.n_used = iters;
  out.error_bound = total.standard_error();
  out.diagnostics["stat_error"] = out.error_bound;
  out.diagnostics["particles"] = particles;
  out.diagnostics["burn_in"] = burn_in;
  return out;
}

struct SecondExponent {
  double L1 = 0.0;
  double L1_plus_L2 = 0.0;  // exterior-square route
  double L2 = 0.0;
  double gap = 0.0;
  std::optional<double> det_average;  // sum w log|det g|, d = 2
  bool routes_agree = true;
  double error_bound = 0.0;
};

inline double log_det_average(const ComplexAtomicMeasure& mu) {
  double s = 0.0;
  for (const auto& a : mu) s += a.weight.real() * std::log(std::abs(a.point.determinant()));
  return s;
}

/// L1 + L2 as the top exponent of the exterior square; for d = 2 the
/// determinant identity gives the same number in closed form.
inline SecondExponent second_exponent(const ComplexAtomicMeasure& mu, double tol,
                                      const std::optional<ContractionCertificate>& cert = std::nullopt) {
  require_probability(mu, "second_exponent");
  const std::size_t d = dimension(mu);
  if (d < 2) throw DomainError("second_exponent needs d >= 2");
  SecondExponent out;
  const auto top = lyapunov_iterative(mu, tol, cert);
  const auto wedge = pushforward(mu, [](const Matrix& g) { return exterior2(g); });
  const auto sum = lyapunov_iterative(wedge, tol);
  out.L1 = top.L1;
  out.L1_plus_L2 = sum.L1;
  out.L2 = sum.L1 - top.L1;
  out.gap = top.L1 - out.L2;
  out.error_bound = top.error_bound + sum.error_bound;
  if (d == 2) {
    out.det_average = log_det_average(mu);
    out.routes_agree = std::abs(*out.det_average - sum.L1) <= sum.error_bound + tol;
    out.L2 = *out.det_average - top.L1;
    out.gap = top.L1 - out.L2;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Invariant subspaces

struct ReducibilityReport {
  enum class Status { irreducible, reducible, inconclusive };
  Status status = Status::inconclusive;
  std::vector<Eigen::MatrixXd> invariant_subspaces;  // orthonormal column bases
  bool all_lines_invariant = false;
  std::optional<std::vector<double>> restricted_L1;
  std::optional<double> L1;
  std::optional<bool> quasi_irreducible;
  std::optional<int> span_dimension;
  std::string note;
};

inline const char* to_string(ReducibilityReport::Status s) {
  switch (s) {
    case ReducibilityReport::Status::irreducible: return "irreducible";
    case ReducibilityReport::Status::reducible: return "reducible";
    case ReducibilityReport::Status::inconclusive: return "inconclusive";
  }
  return "inconclusive";
}

struct ReducibilityOptions {
  double eig_tol = 1e-8;         // relative tolerance for real eigenvalues and null spaces
  double verify_tol = 1e-9;      // invariance check ||(I - P) g B|| / ||g||
  int word_length_cap = 0;       // 0 means 2 d^2
  double quasi_tol = 1e-6;
  double lyapunov_tol = 1e-8;
  bool compute_exponents = true;
};

namespace detail {

inline Eigen::MatrixXd null_space(const Eigen::MatrixXd& m, double rel_tol) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  const double scale = std::max(1.0, s.size() ? s(0) : 0.0);
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > rel_tol * scale) ++rank;
  return svd.matrixV().rightCols(m.cols() - rank);
}

inline Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& b, double rel_tol = 1e-10) {
  if (b.cols() == 0) return b;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeThinU);
  const auto& s = svd.singularValues();
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > rel_tol * std::max(1.0, s(0))) ++rank;
  return svd.matrixU().leftCols(rank);
}

// Intersection of two subspaces given by orthonormal bases.
inline Eigen::MatrixXd intersect(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double tol) {
  if (a.cols() == 0 || b.cols() == 0) return Eigen::MatrixXd(a.rows(), 0);
  Eigen::MatrixXd m(a.rows(), a.cols() + b.cols());
  m << a, -b;
  const Eigen::MatrixXd ns = null_space(m, tol);
  return orthonormalize(a * ns.topRows(a.cols()));
}

// Real eigenspaces of g, as orthonormal bases.
inline std::vector<Eigen::MatrixXd> real_eigenspaces(const Eigen::MatrixXd& g, double tol) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(g, false);
  const double scale = std::max(1.0, g.cwiseAbs().maxCoeff());
  std::vector<double> lambdas;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const auto l = es.eigenvalues()(i);
    if (std::abs(l.imag()) > tol * scale) continue;
    bool seen = false;
    for (double x : lambdas) seen = seen || std::abs(x - l.real()) <= 1e3 * tol * scale;
    if (!seen) lambdas.push_back(l.real());
  }
  std::vector<Eigen::MatrixXd> out;
  const auto I = Eigen::MatrixXd::Identity(g.rows(), g.cols());
  for (double l : lambdas) {
    // loosen the tolerance until the eigenvalue's null space shows up (defective or clustered roots)
    for (double t = tol; t <= 1e-4; t *= 10.0) {
      Eigen::MatrixXd ns = null_space(g - l * I, t);
      if (ns.cols() > 0) {
        out.push_back(orthonormalize(ns));
        break;
      }
    }
  }
  return out;
}

// Subspaces on which every matrix acts as a scalar.
inline std::vector<Eigen::MatrixXd> common_eigenspaces(const std::vector<Eigen::MatrixXd>& mats, double tol) {
  std::vector<Eigen::MatrixXd> cur = real_eigenspaces(mats.front(), tol);
  for (std::size_t k = 1; k < mats.size(); ++k) {
    const auto spaces = real_eigenspaces(mats[k], tol);
    std::vector<Eigen::MatrixXd> next;
    for (const auto& a : cur)
      for (const auto& b : spaces) {
        auto c = intersect(a, b, tol);
        if (c.cols() > 0) next.push_back(std::move(c));
      }
    cur = std::move(next);
  }
  return cur;
}

inline bool same_subspace(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) return false;
  return (a * a.transpose() - b * b.transpose()).norm() < 1e-8;
}

inline double invariance_defect(const Eigen::MatrixXd& g, const Eigen::MatrixXd& basis) {
  const Eigen::MatrixXd gb = g * basis;
  const Eigen::MatrixXd off = gb - basis * (basis.transpose() * gb);
  return off.norm() / g.norm();
}

// Dimension of the linear span of all words of length <= cap (Burnside test).
inline int word_span_dimension(const std::vector<Eigen::MatrixXd>& mats, int cap) {
  const Eigen::Index d = mats.front().rows();
  const Eigen::Index dd = d * d;
  std::vector<Eigen::VectorXd> basis;  // orthonormal, in vectorized form
  auto add = [&](const Eigen::MatrixXd& w) {
    Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(w.data(), dd);
    const double n0 = v.norm();
    for (const auto& b : basis) v -= b.dot(v) * b;
    for (const auto& b : basis) v -= b.dot(v) * b;
    if (v.norm() > 1e-9 * n0) {
      basis.push_back(v / v.norm());
      return true;
    }
    return false;
  };
  std::vector<Eigen::MatrixXd> frontier{Eigen::MatrixXd::Identity(d, d)};
  add(frontier.front());
  for (int len = 1; len <= cap && static_cast<Eigen::Index>(basis.size()) < dd; ++len) {
    std::vector<Eigen::MatrixXd> next;
    for (const auto& w : frontier)
      for (const auto& g : mats) {
        Eigen::MatrixXd x = g * w;
        x /= x.norm();
        if (add(x)) next.push_back(std::move(x));
      }
    if (next.empty()) break;  // span stabilized
    frontier = std::move(next);
  }
  return static_cast<int>(basis.size());
}

inline ComplexAtomicMeasure block_measure(const ComplexAtomicMeasure& mu, const Eigen::MatrixXd& basis) {
  std::vector<MatrixAtom> atoms;
  for (const auto& a : mu) atoms.push_back({Matrix::trusted(basis.transpose() * a.point.eigen() * basis), a.weight});
  return ComplexAtomicMeasure(std::move(atoms), mu.dedup_tolerance());
}

inline bool is_scalar(const Eigen::MatrixXd& g) {
  const double c = g(0, 0);
  return (g - c * Eigen::MatrixXd::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff() <=
         1e-12 * std::max(1.0, std::abs(c));
}

}  // namespace detail

/// Finds subspaces invariant under every atom. Common eigenvector lines and
/// complements of common left eigenvectors are exhaustive for d <= 3; for
/// d >= 3 the span of words decides irreducibility (Burnside).
inline ReducibilityReport reducibility_check(const ComplexAtomicMeasure& mu, const ReducibilityOptions& opt = {}) {
  if (mu.empty()) throw DomainError("reducibility_check needs a nonempty measure");
  const std::size_t d = dimension(mu);
  ReducibilityReport rep;
  std::vector<Eigen::MatrixXd> mats;
  for (const auto& a : mu) mats.push_back(a.point.eigen());
  const auto D = static_cast<Eigen::Index>(d);

  if (d == 1) {
    rep.status = ReducibilityReport::Status::irreducible;
    rep.note = "dimension 1";
    return rep;
  }

  std::vector<Eigen::MatrixXd> found;
  auto consider = [&](Eigen::MatrixXd b) {
    if (b.cols() == 0 || b.cols() == D) return;
    for (const auto& g : mats)
      if (detail::invariance_defect(g, b) > opt.verify_tol) return;
    for (const auto& f : found)
      if (detail::same_subspace(f, b)) return;
    found.push_back(std::move(b));
  };

  const bool all_scalar = std::all_of(mats.begin(), mats.end(), detail::is_scalar);
  if (all_scalar) {
    rep.all_lines_invariant = true;
    for (Eigen::Index i = 0; i < D; ++i) consider(Eigen::MatrixXd::Identity(D, D).col(i));
    rep.note = "every atom is scalar; every line is invariant, coordinate lines listed";
  } else {
    for (auto& s : detail::common_eigenspaces(mats, opt.eig_tol)) {
      if (s.cols() == 1) {
        consider(s);
      } else {
        // any line inside is invariant: list the basis lines and the space itself
        for (Eigen::Index j = 0; j < s.cols(); ++j) consider(s.col(j));
        consider(s);
      }
    }
    std::vector<Eigen::MatrixXd> transposed;
    for (const auto& g : mats) transposed.push_back(g.transpose());
    for (auto& w : detail::common_eigenspaces(transposed, opt.eig_tol)) {
      consider(detail::null_space(w.transpose(), 1e-10));
    }
  }

  if (d >= 3 && !all_scalar) {
    const int cap = opt.word_length_cap > 0 ? opt.word_length_cap : static_cast<int>(2 * d * d);
    rep.span_dimension = detail::word_span_dimension(mats, cap);
  }

  if (!found.empty()) {
    rep.status = ReducibilityReport::Status::reducible;
  } else if (d == 2 || (rep.span_dimension && *rep.span_dimension == static_cast<int>(d * d))) {
    rep.status = ReducibilityReport::Status::irreducible;
  } else {
    rep.status = ReducibilityReport::Status::inconclusive;
    rep.note = "proper word span without a detected invariant subspace";
  }
  // sort by dimension, then as found
  std::stable_sort(found.begin(), found.end(),
                   [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return a.cols() < b.cols(); });
  rep.invariant_subspaces = std::move(found);

  if (rep.status == ReducibilityReport::Status::reducible && opt.compute_exponents && is_probability(mu)) {
    const auto full = lyapunov_iterative(mu, opt.lyapunov_tol);
    rep.L1 = full.L1;
    std::vector<double> restricted;
    bool quasi = true;
    for (const auto& b : rep.invariant_subspaces) {
      const auto block = detail::block_measure(mu, b);
      const double l = lyapunov_iterative(block, opt.lyapunov_tol).L1;
      restricted.push_back(l);
      if (l < full.L1 - opt.quasi_tol) quasi = false;
    }
    rep.restricted_L1 = restricted;
    rep.quasi_irreducible = quasi;
  }
  return rep;
}

struct ReductionStep {
  std::string kind;  // "restrict" or "quotient"
  int from_dim = 0;
  int to_dim = 0;
  double exponent = 0.0;  // top exponent of the chosen block
  double other = 0.0;     // top exponent of the discarded block
};

/// Chain of invariant blocks ending at the block that carries L1.
/// Block matrices are transform^T g transform.
struct ReductionPlan {
  Eigen::MatrixXd transform;  // d x k, orthonormal columns
  std::vector<ReductionStep> steps;
  bool identity = true;
  double dominant_exponent = 0.0;
  bool strict = true;  // dominant block's exponent exceeds the discarded ones by more than the tie tolerance

  ComplexAtomicMeasure apply(const ComplexAtomicMeasure& m) const { return detail::block_measure(m, transform); }
};

inline ReductionPlan full_support_reduction(const ComplexAtomicMeasure& mu0, const ComplexAtomicMeasure& nu,
                                            const ReducibilityOptions& opt = {}) {
  require_probability(mu0, "full_support_reduction");
  if (!support_leq(nu, mu0))
    throw DomainError("full_support_reduction needs supp(direction) inside supp(center)");
  const std::size_t d = dimension(mu0);
  ReductionPlan plan;
  plan.transform = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  ComplexAtomicMeasure cur = mu0;
  ReducibilityOptions ropt = opt;
  ropt.compute_exponents = false;
  while (plan.transform.cols() > 1) {
    const auto rep = reducibility_check(cur, ropt);
    if (rep.status == ReducibilityReport::Status::inconclusive)
      throw DomainError("full_support_reduction: reducibility is inconclusive (" + rep.note + ")");
    if (rep.status == ReducibilityReport::Status::irreducible) break;
    const Eigen::MatrixXd v = rep.invariant_subspaces.front();
    const Eigen::MatrixXd complement = detail::null_space(v.transpose(), 1e-10);
    const auto restricted = detail::block_measure(cur, v);
    const auto quotient = detail::block_measure(cur, complement);
    const double lr = lyapunov_iterative(restricted, opt.lyapunov_tol).L1;
    const double lq = lyapunov_iterative(quotient, opt.lyapunov_tol).L1;
    ReductionStep step;
    step.from_dim = static_cast<int>(v.rows());
    const bool take_restricted = lr >= lq;
    step.kind = take_restricted ? "restrict" : "quotient";
    step.exponent = take_restricted ? lr : lq;
    step.other = take_restricted ? lq : lr;
    const Eigen::MatrixXd& b = take_restricted ? v : complement;
    step.to_dim = static_cast<int>(b.cols());
    if (std::abs(lr - lq) <= opt.quasi_tol) plan.strict = false;
    plan.steps.push_back(step);
    plan.transform = plan.transform * b;
    plan.identity = false;
    plan.dominant_exponent = step.exponent;
    cur = take_restricted ? restricted : quotient;
  }
  if (plan.identity) plan.dominant_exponent = lyapunov_iterative(mu0, opt.lyapunov_tol).L1;
  return plan;
}

}  // namespace lyapan
