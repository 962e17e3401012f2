#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "generators.hpp"
#include "lyapan/markov_cocycle.hpp"

using namespace lyapan;
using testgen::irreducible_pair;

namespace {

const FiniteKernel kSticky = FiniteKernel::from_real({{0.9, 0.1}, {0.2, 0.8}});
const FiniteKernel kSwap = FiniteKernel::from_real({{0.0, 1.0}, {1.0, 0.0}});

// arrival-only cocycle with rows equal to the weights of mu: the chain is i.i.d. with law mu
std::pair<FiniteKernel, CocycleMap> bernoulli_chain(const ComplexAtomicMeasure& mu) {
  std::vector<Complex> row;
  std::vector<Matrix> mats;
  for (const auto& a : mu) {
    row.push_back(a.weight);
    mats.push_back(a.point);
  }
  return {FiniteKernel::constant_rows(row), CocycleMap::arrival_only(mats)};
}

// A(to, from) = diag(a[to][from], 1/2): the first coordinate dominates on every edge
CocycleMap diagonal_cocycle(const double (&a)[2][2]) {
  return CocycleMap::from_function(2, [&](int to, int from) { return diagonal({a[to][from], 0.5}); });
}

// sum_s pi_s sum_t K(s, t) log a[t][s] for a two-state kernel
Complex diagonal_L1(const Eigen::MatrixXcd& k, const double (&a)[2][2]) {
  const Complex pi0 = k(1, 0) / (k(0, 1) + k(1, 0)), pi1 = 1.0 - pi0;
  Complex sum{};
  for (int t = 0; t < 2; ++t) {
    sum += pi0 * k(0, t) * std::log(a[t][0]);
    sum += pi1 * k(1, t) * std::log(a[t][1]);
  }
  return sum;
}

const double kDiag[2][2] = {{2.0, 3.0}, {1.5, 2.5}};

}  // namespace

TEST(FiniteKernel, ConstructionAndStochasticity) {
  EXPECT_THROW(FiniteKernel(Eigen::MatrixXcd::Zero(2, 3)), DomainError);
  EXPECT_THROW(FiniteKernel::from_real({{1.0, 0.0}, {1.0}}), DomainError);
  Eigen::MatrixXcd bad = Eigen::MatrixXcd::Identity(2, 2);
  bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(FiniteKernel{bad}, DomainError);
  EXPECT_TRUE(kSticky.is_stochastic());
  EXPECT_TRUE(FiniteKernel::identity(3).is_stochastic());
  EXPECT_FALSE(FiniteKernel::from_real({{0.5, 0.6}, {0.5, 0.5}}).is_stochastic());
  EXPECT_FALSE(FiniteKernel::from_real({{1.5, -0.5}, {0.5, 0.5}}).is_stochastic());
  EXPECT_THROW(CocycleMap(2, {Matrix::identity(2)}), DomainError);
}

TEST(KernelNorm, ExamplesAndProperties) {
  EXPECT_EQ(kernel_norm(FiniteKernel(Eigen::MatrixXcd::Constant(1, 1, Complex(0.0, 2.0)))), 2.0);
  EXPECT_NEAR(kernel_norm(FiniteKernel::from_real({{0.5, -0.5}, {1.0, 0.0}})), 1.0, 1e-15);
  EXPECT_NEAR(kernel_norm(kSticky), 1.0, 1e-15);
  testgen::Gen gen(31);
  for (int trial = 0; trial < 50; ++trial) {
    const auto k = gen.complex_kernel(3), l = gen.complex_kernel(3);
    EXPECT_LE(kernel_norm(kernel_add(k, l)), kernel_norm(k) + kernel_norm(l) + 1e-12);
    EXPECT_LE(kernel_norm(iterate_kernel(k, 2)), kernel_norm(k) * kernel_norm(k) + 1e-12);
  }
}

TEST(IterateKernel, Examples) {
  EXPECT_TRUE(iterate_kernel(kSwap, 2).weights().isApprox(Eigen::MatrixXcd::Identity(2, 2)));
  EXPECT_TRUE(iterate_kernel(kSwap, 3).weights().isApprox(kSwap.weights()));
  const auto rows = FiniteKernel::constant_rows({0.3, 0.7});
  EXPECT_TRUE(iterate_kernel(rows, 5).weights().isApprox(rows.weights()));
  EXPECT_THROW(iterate_kernel(rows, 0), DomainError);
}

TEST(Ergodicity, Examples) {
  const auto rows = ergodicity_check(FiniteKernel::constant_rows({0.3, 0.7}));
  EXPECT_TRUE(rows.uniformly_ergodic);
  EXPECT_EQ(rows.n_star, 1);
  EXPECT_EQ(rows.rate_rho, 0.0);
  EXPECT_NEAR(rows.stationary[1], 0.7, 1e-14);

  const auto swap = ergodicity_check(kSwap, 50);
  EXPECT_FALSE(swap.uniformly_ergodic);
  EXPECT_EQ(swap.n_star, -1);
  EXPECT_FALSE(swap.note.empty());

  const auto sticky = ergodicity_check(kSticky);
  EXPECT_TRUE(sticky.uniformly_ergodic);
  EXPECT_NEAR(sticky.stationary[0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(sticky.stationary[1], 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(sticky.rate_rho, 0.7, 1e-6);  // second eigenvalue
}

TEST(PhiMarkov, Example) {
  const auto a = diagonal_cocycle(kDiag);
  const auto phi = phi_markov(kSticky, a);
  const auto v = project({1.0, 2.0});
  const double x = v[0], y = v[1];
  auto logn = [&](double g) { return 0.5 * std::log(g * g * x * x + 0.25 * y * y); };
  EXPECT_NEAR(std::abs(phi(StatePoint{0, v}) - (0.9 * logn(2.0) + 0.1 * logn(1.5))), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(phi(StatePoint{1, v}) - (0.2 * logn(3.0) + 0.8 * logn(2.5))), 0.0, 1e-15);
  EXPECT_THROW(phi_markov(FiniteKernel::identity(3), a), DomainError);
}

TEST(ApplyQK, MatchesNestedApplication) {
  testgen::Gen gen(32);
  for (int trial = 0; trial < 4; ++trial) {
    const auto k = trial % 2 == 0 ? gen.stochastic_kernel(3) : gen.complex_kernel(3);
    const auto a = gen.cocycle(3, 2);
    const auto phi = phi_markov(k, a);
    const StatePoint start{trial % 3, gen.point(2)};
    StateObservable nested = phi;
    for (int n = 0; n <= 4; ++n) {
      const Complex direct = apply_QK_n(k, a, phi, start, n).value;
      EXPECT_NEAR(std::abs(direct - nested(start)), 0.0, 1e-12 * std::max(1.0, std::abs(direct)));
      nested = apply_QK(k, a, nested);
    }
  }
}

TEST(ApplyQK, ReducesToBernoulli) {
  const auto mu = irreducible_pair();
  const auto v = project({0.4, 1.0});
  const auto [k, a] = bernoulli_chain(mu);
  const auto phi = phi_markov(k, a);
  for (int n = 0; n <= 5; ++n) {
    const Complex bern = apply_Qn_exact(mu, phi_observable(mu), v, n).value;
    for (int s = 0; s < 2; ++s)
      EXPECT_NEAR(std::abs(apply_QK_n(k, a, phi, StatePoint{s, v}, n).value - bern), 0.0, 1e-13);
  }
  // a single state is a Dirac measure
  const Matrix g = matrix2(1.5, 0.4, -0.2, 0.8);
  const FiniteKernel one = FiniteKernel::identity(1);
  const CocycleMap single(1, {g});
  for (int n = 0; n <= 4; ++n)
    EXPECT_NEAR(std::abs(apply_QK_n(one, single, phi_markov(one, single), StatePoint{0, v}, n).value -
                         apply_Qn_exact(dirac(g), phi_observable(dirac(g)), v, n).value),
                0.0, 1e-14);
}

TEST(ApplyQK, TwoCycleFollowsItsOnlyPath) {
  const Matrix b = matrix2(2.0, 1.0, 0.0, 1.0), c = rotation(0.7);
  const auto a = CocycleMap::from_function(2, [&](int to, int) { return to == 1 ? b : c; });
  const auto phi = phi_markov(kSwap, a);
  const auto v = project({1.0, -0.5});
  Eigen::VectorXd w = v.vec();
  int s = 0;
  for (int n = 0; n <= 6; ++n) {
    const auto r = apply_QK_n(kSwap, a, phi, StatePoint{0, v}, n);
    EXPECT_EQ(r.atoms, 1u);
    EXPECT_NEAR(std::abs(r.value - phi(StatePoint{s, project(w)})), 0.0, 1e-14);
    w = (s == 0 ? b : c).eigen() * w;
    s = 1 - s;
  }
}

TEST(ApplyQK, StochasticKernelsPreserveConstants) {
  testgen::Gen gen(33);
  const auto k = gen.stochastic_kernel(3);
  const auto a = gen.cocycle(3, 2);
  const StateObservable one{[](const StatePoint&) { return Complex(1.0); }, "1", 1.0};
  for (int n = 0; n <= 4; ++n)
    EXPECT_NEAR(std::abs(apply_QK_n(k, a, one, StatePoint{1, gen.point(2)}, n).value - 1.0), 0.0, 1e-13);
}

TEST(ApplyQK, MonteCarloAgreesWithExact) {
  testgen::Gen gen(34);
  for (int trial = 0; trial < 2; ++trial) {
    const auto k = trial == 0 ? gen.stochastic_kernel(2) : gen.complex_kernel(2);
    const auto a = gen.cocycle(2, 2);
    const auto phi = phi_markov(k, a);
    const StatePoint start{0, gen.point(2)};
    const auto exact = apply_QK_n(k, a, phi, start, 6);
    const auto mc = apply_QK_n_mc(k, a, phi, start, 6, 40000, 7);
    EXPECT_LE(std::abs(mc.value - exact.value), 4.0 * mc.stat_error.value() + 1e-12) << "trial " << trial;
    EXPECT_EQ(mc.value, apply_QK_n_mc(k, a, phi, start, 6, 40000, 7, McOptions{1024, 3}).value);
  }
}

TEST(KalphaMarkov, ReducesToKnownCases) {
  const auto rot = CocycleMap::from_function(2, [](int to, int from) { return rotation(0.3 * (to + 2 * from + 1)); });
  for (double alpha : {0.25, 1.0}) EXPECT_NEAR(kalpha_markov_bound(kSticky, rot, alpha), 1.0, 1e-9);

  const Matrix g = matrix2(1.5, 0.4, -0.2, 0.8);
  const CocycleMap single(1, {g});
  EXPECT_NEAR(kalpha_markov_bound(FiniteKernel::identity(1), single, 0.5, 2),
              kalpha_upper_bound(dirac(g * g), 0.5), 1e-12);

  const auto mu = irreducible_pair();
  const auto [k, a] = bernoulli_chain(mu);
  for (int n : {1, 3}) {
    const double bern = kalpha_upper_bound(convolve_power(mu, n).measure, 0.5);
    EXPECT_NEAR(kalpha_markov_bound(k, a, 0.5, n), bern, 1e-9 * bern);
    EXPECT_LE(kalpha_markov_empirical(k, a, 0.5, n), bern * (1.0 + 1e-9));
  }
}

TEST(FindCertificateMarkov, BernoulliChainCertifiesLikeTheMeasure) {
  const auto mu = irreducible_pair();
  const auto [k, a] = bernoulli_chain(mu);
  const auto chain = find_certificate_markov(k, a);
  const auto bern = find_certificate(mu);
  ASSERT_TRUE(chain.certificate && bern.certificate);
  EXPECT_EQ(chain.certificate->n0, bern.certificate->n0);
  EXPECT_EQ(chain.certificate->alpha, bern.certificate->alpha);
  EXPECT_NEAR(chain.certificate->kappa, bern.certificate->kappa, 1e-9);
  EXPECT_GT(chain.certificate->tv_radius, 0.0);

  const auto rot = CocycleMap::from_function(2, [](int to, int) { return rotation(0.5 + to); });
  CertificateOptions opt;
  opt.n_max = 3;
  EXPECT_FALSE(find_certificate_markov(kSticky, rot, opt).certificate);
}

TEST(LyapunovMarkov, DiagonalCocycleClosedForm) {
  const auto a = diagonal_cocycle(kDiag);
  const auto r = lyapunov_markov(kSticky, a, 1e-11);
  EXPECT_NEAR(r.L1, diagonal_L1(kSticky.weights(), kDiag).real(), 1e-10);
  EXPECT_EQ(r.diagnostics.at("uniformity_ok"), 1.0);
  EXPECT_NEAR(r.diagnostics.at("mixing_rate"), 0.7, 1e-6);
}

TEST(LyapunovMarkov, BernoulliChainAndScalars) {
  const auto mu = irreducible_pair();
  const auto [k, a] = bernoulli_chain(mu);
  EXPECT_NEAR(lyapunov_markov(k, a, 1e-10).L1, lyapunov_iterative(mu, 1e-10).L1, 1e-9);
  const auto scalar = CocycleMap::from_function(2, [](int, int) { return 2.5 * Matrix::identity(2); });
  EXPECT_NEAR(lyapunov_markov(kSticky, scalar, 1e-12).L1, std::log(2.5), 1e-14);
}

TEST(LyapunovMarkov, PeriodicChainWithHolding) {
  // holding probability eps; moving applies B, holding applies the identity
  const double eps = 0.5;
  const Matrix b = diagonal({3.0, 0.5});
  const auto k = FiniteKernel::from_real({{eps, 1.0 - eps}, {1.0 - eps, eps}});
  const auto a = CocycleMap::from_function(2, [&](int to, int from) { return to == from ? Matrix::identity(2) : b; });
  EXPECT_NEAR(lyapunov_markov(k, a, 1e-11).L1, (1.0 - eps) * std::log(3.0), 1e-10);
  EXPECT_THROW(lyapunov_markov(kSwap, a, 1e-8), DomainError);
}

TEST(LyapunovMarkov, OraclesAgree) {
  const auto mu = irreducible_pair();
  const auto k = FiniteKernel::from_real({{0.3, 0.7}, {0.6, 0.4}});
  std::vector<Matrix> g;
  for (const auto& x : mu) g.push_back(x.point);
  const auto a = CocycleMap::arrival_only(g);
  const auto it = lyapunov_markov(k, a, 1e-9);
  const auto mc = lyapunov_markov_mc(k, a, 300, 3000, 3);
  const auto fu = lyapunov_markov_furstenberg(k, a, 64, 50, 2000, 3);
  EXPECT_LE(std::abs(mc.L1 - it.L1), 4.0 * mc.diagnostics.at("stat_error") + mc.diagnostics.at("bias_bound"));
  EXPECT_LE(std::abs(fu.L1 - it.L1), std::max(1e-2, 4.0 * fu.error_bound));
  EXPECT_THROW(lyapunov_markov_mc(kSwap, a, 10, 10, 1), DomainError);
}

TEST(KernelTaylor, ZeroDirectionAndClosedForm) {
  const auto a = diagonal_cocycle(kDiag);
  KernelTaylorOptions opt;
  opt.order = 3;
  opt.radius = 0.02;
  opt.tol = 1e-10;
  const auto zero = kernel_taylor(kSticky, FiniteKernel(Eigen::MatrixXcd::Zero(2, 2)), a, opt);
  EXPECT_NEAR(std::abs(zero.coefficients[0] - diagonal_L1(kSticky.weights(), kDiag)), 0.0, 1e-10);
  for (std::size_t j = 1; j < zero.coefficients.size(); ++j)
    EXPECT_NEAR(std::abs(zero.coefficients[j]), 0.0, 1e-10 / std::pow(0.02, double(j)));

  // K + z L moves mass from 0 -> 1 to 0 -> 0; L1 is rational in z
  const auto l = FiniteKernel::from_real({{1.0, -1.0}, {0.0, 0.0}});
  const auto rep = kernel_taylor(kSticky, l, a, opt);
  const auto exact = cauchy_taylor(
      [&](Complex z) { return diagonal_L1(kernel_add(kSticky, l, z).weights(), kDiag); }, 0.02, 16);
  for (std::size_t j = 0; j < rep.coefficients.size(); ++j)
    EXPECT_NEAR(std::abs(rep.coefficients[j] - exact.coefficients[j]), 0.0, 1e-11 / std::pow(0.02, double(j)))
        << "j = " << j;
  EXPECT_LT(rep.max_mass_defect, 1e-14);
  EXPECT_LT(rep.center_mismatch, 1e-10);
}

TEST(KernelTaylor, BernoulliChainMatchesMeasureTaylor) {
  const auto mu = irreducible_pair();
  const auto [k, a] = bernoulli_chain(mu);
  const auto l = FiniteKernel::constant_rows({1.0, -1.0});
  KernelTaylorOptions kopt;
  kopt.radius = 0.02;
  const auto chain = kernel_taylor(k, l, a, kopt);
  TaylorOptions topt;
  topt.radius = 0.02;
  const auto dir = PerturbationDirection::make(ComplexAtomicMeasure({{mu.atoms()[0].point, 1.0}, {mu.atoms()[1].point, -1.0}}));
  const auto bern = taylor_coefficients(mu, dir, topt);
  for (std::size_t j = 0; j < 3; ++j)
    EXPECT_NEAR(std::abs(chain.coefficients[j] - bern.coefficients[j]), 0.0, 1e-9 / std::pow(0.02, double(j)));
}

TEST(KernelTaylor, RejectsBadDirections) {
  const auto a = diagonal_cocycle(kDiag);
  KernelTaylorOptions opt;
  opt.radius = 0.01;
  EXPECT_THROW(kernel_taylor(kSticky, FiniteKernel::from_real({{1.0, 0.0}, {0.0, 0.0}}), a, opt), DomainError);
  const auto rows = FiniteKernel::from_real({{1.0, 0.0}, {0.5, 0.5}});
  KernelTaylorOptions constrained = opt;
  constrained.support_constrained = true;
  EXPECT_THROW(kernel_taylor(rows, FiniteKernel::from_real({{-1.0, 1.0}, {0.0, 0.0}}), a, constrained), DomainError);
  EXPECT_THROW(kernel_taylor(kSticky, FiniteKernel::from_real({{1.0, -1.0}, {0.0, 0.0}}), a, {}), DomainError);
}

TEST(InvariantSections, Examples) {
  const auto diag = invariant_section_check(kSticky, diagonal_cocycle(kDiag));
  EXPECT_EQ(diag.status, SectionReport::Status::found);
  EXPECT_EQ(diag.sections.size(), 2u);
  ASSERT_TRUE(diag.quasi_irreducible);
  EXPECT_FALSE(*diag.quasi_irreducible);
  EXPECT_NEAR(*diag.L1, diagonal_L1(kSticky.weights(), kDiag).real(), 1e-7);

  const auto [k, a] = bernoulli_chain(irreducible_pair());
  EXPECT_EQ(invariant_section_check(k, a).status, SectionReport::Status::none);

  // loops at state 0 are powers of a rotation, which fixes no line
  const auto edge = CocycleMap::from_function(2, [](int to, int from) {
    return to == 1 && from == 0 ? rotation(0.9) : Matrix::identity(2);
  });
  EXPECT_EQ(invariant_section_check(kSticky, edge).status, SectionReport::Status::none);

  const auto trivial = CocycleMap::from_function(2, [](int, int) { return Matrix::identity(2); });
  const auto all = invariant_section_check(kSticky, trivial);
  EXPECT_EQ(all.status, SectionReport::Status::found);
  EXPECT_TRUE(all.all_lines_invariant);

  const auto disconnected = FiniteKernel::from_real({{1.0, 0.0}, {0.5, 0.5}});
  EXPECT_EQ(invariant_section_check(disconnected, trivial).status, SectionReport::Status::inconclusive);
}

TEST(InvariantSections, SectionsAreInvariantOnEveryEdge) {
  // conjugated diagonal cocycle: the sections are the images of the coordinate lines
  testgen::Gen gen(35);
  std::vector<Matrix> h{gen.matrix(2), gen.matrix(2)};
  const auto a = CocycleMap::from_function(2, [&](int to, int from) {
    return Matrix(h[static_cast<std::size_t>(to)].eigen() * diagonal({kDiag[to][from], 0.5}).eigen() *
                  h[static_cast<std::size_t>(from)].eigen().inverse());
  });
  SectionOptions opt;
  opt.compute_exponents = false;
  const auto rep = invariant_section_check(kSticky, a, opt);
  ASSERT_EQ(rep.status, SectionReport::Status::found);
  ASSERT_EQ(rep.sections.size(), 2u);
  for (const auto& sec : rep.sections)
    for (int s = 0; s < 2; ++s)
      for (int t = 0; t < 2; ++t) {
        const Eigen::MatrixXd img = a(t, s).eigen() * sec[static_cast<std::size_t>(s)];
        const Eigen::MatrixXd& v = sec[static_cast<std::size_t>(t)];
        EXPECT_LT((img - v * (v.transpose() * img)).norm() / img.norm(), 1e-9);
      }
}
