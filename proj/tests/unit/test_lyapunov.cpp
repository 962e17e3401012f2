#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "generators.hpp"
#include "lyapan/lyapunov.hpp"

using namespace lyapan;
using testgen::diagonal_family;
using testgen::diagonal_family_L1;
using testgen::irreducible_pair;
using testgen::rotation_diagonal_pair;

namespace {

ComplexAtomicMeasure scaled(const ComplexAtomicMeasure& mu, double c) {
  return pushforward(mu, [c](const Matrix& g) { return c * g; });
}

// block-diagonal embedding g -> diag(g, c) in one dimension more
ComplexAtomicMeasure with_extra_block(const ComplexAtomicMeasure& mu, double c) {
  return pushforward(mu, [c](const Matrix& g) {
    const auto d = static_cast<Eigen::Index>(g.dim());
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d + 1, d + 1);
    m.topLeftCorner(d, d) = g.eigen();
    m(d, d) = c;
    return Matrix(m);
  });
}

// two hyperbolic atoms with axes 0.8 rad apart: irreducible, contracts quickly
ComplexAtomicMeasure hyperbolic_axes_pair() {
  const Matrix d = diagonal({3.0, 1.0 / 3.0});
  return ComplexAtomicMeasure({{d, 0.5}, {rotation(0.8) * d * rotation(-0.8), 0.5}});
}

bool spans_line(const Eigen::MatrixXd& basis, const Eigen::VectorXd& v) {
  return basis.cols() == 1 && std::abs(std::abs(basis.col(0).dot(v.normalized())) - 1.0) < 1e-9;
}

}  // namespace

TEST(LyapunovIterative, DiracExamples) {
  EXPECT_NEAR(lyapunov_iterative(dirac(diagonal({2.0, 1.0})), 1e-12).L1, std::log(2.0), 1e-11);
  EXPECT_NEAR(lyapunov_iterative(dirac(matrix2(2.0, 1.0, 0.0, 0.5)), 1e-12).L1, std::log(2.0), 1e-11);
  const auto scalar = lyapunov_iterative(dirac(3.0 * Matrix::identity(2)), 1e-12);
  EXPECT_NEAR(scalar.L1, std::log(3.0), 1e-15);
  EXPECT_LE(scalar.n_used, 3);
  EXPECT_NEAR(lyapunov_iterative(dirac(rotation(0.4)), 1e-12).L1, 0.0, 1e-15);
}

TEST(LyapunovIterative, DiagonalFamilyClosedForm) {
  const double cases[][5] = {{0.6, 3.0, 1.0, 2.0, 1.5}, {0.5, 2.0, 1.0, 1.0, 0.8}, {0.3, 1.0, 4.0, 2.0, 0.25}};
  for (const auto& c : cases) {
    const auto r = lyapunov_iterative(diagonal_family(c[0], c[1], c[2], c[3], c[4]), 1e-10);
    EXPECT_NEAR(r.L1, diagonal_family_L1(c[0], c[1], c[2], c[3], c[4]), 1e-9);
    EXPECT_EQ(r.diagnostics.at("tol_met"), 1.0);
    EXPECT_NEAR(r.value.imag(), 0.0, 1e-15);
  }
}

TEST(LyapunovIterative, ComplexMassOneDiagonalIsAffineInTheWeights) {
  // every atom expands e1, so the iteration converges to sum w log a
  const Complex w1(0.5, 0.7), w2(0.5, -0.3), w3(0.0, -0.4);
  const ComplexAtomicMeasure mu({{diagonal({3.0, 1.0}), w1}, {diagonal({2.0, 0.5}), w2}, {diagonal({4.0, 1.0}), w3}});
  const auto r = lyapunov_iterative(mu, 1e-11);
  const Complex expected = w1 * std::log(3.0) + w2 * std::log(2.0) + w3 * std::log(4.0);
  EXPECT_NEAR(std::abs(r.value - expected), 0.0, 1e-9);
  EXPECT_EQ(r.L1, r.value.real());
  EXPECT_EQ(r.diagnostics.at("value_im"), r.value.imag());
  EXPECT_FALSE(r.certified);
}

TEST(LyapunovIterative, RejectsMeasuresWithoutUnitMass) {
  EXPECT_THROW(lyapunov_iterative(dirac(diagonal({2.0, 1.0}), 0.5), 1e-8), DomainError);
  const ComplexAtomicMeasure zero({{diagonal({2.0, 1.0}), 1.0}, {diagonal({3.0, 1.0}), -1.0}});
  EXPECT_THROW(lyapunov_iterative(zero, 1e-8), DomainError);
  EXPECT_THROW(lyapunov_iterative(irreducible_pair(), 0.0), DomainError);
  EXPECT_THROW(lyapunov_iterative(irreducible_pair(), 1e-8, std::nullopt, project({1.0, 0.0, 0.0})), DomainError);
}

TEST(LyapunovIterative, IndependentOfTheBasePoint) {
  const auto mu = irreducible_pair();
  const auto r = lyapunov_iterative(mu, 1e-10);
  EXPECT_EQ(r.diagnostics.at("uniformity_ok"), 1.0);
  EXPECT_LE(r.diagnostics.at("base_point_spread"), 1e-8);
  for (const auto& v : {project({1.0, 0.0}), project({0.2, -1.0})})
    EXPECT_NEAR(lyapunov_iterative(mu, 1e-10, std::nullopt, v).L1, r.L1, 1e-8);
}

TEST(LyapunovIterative, ScaleEquivariant) {
  for (const auto& mu : {irreducible_pair(), hyperbolic_axes_pair()}) {
    const double l = lyapunov_iterative(mu, 1e-9).L1;
    EXPECT_NEAR(lyapunov_iterative(scaled(mu, 3.0), 1e-9).L1, l + std::log(3.0), 1e-6);
  }
}

TEST(LyapunovIterative, BlockDiagonalTakesTheLargerBlock) {
  const auto mu = irreducible_pair();
  const double l = lyapunov_iterative(mu, 1e-10).L1;
  // a dominated scalar block leaves L1 unchanged; a dominating one replaces it
  EXPECT_NEAR(lyapunov_iterative(with_extra_block(mu, 0.5), 1e-6).L1, l, 1e-5);
  EXPECT_NEAR(lyapunov_iterative(with_extra_block(mu, 8.0), 1e-6).L1, std::log(8.0), 1e-5);
}

TEST(LyapunovIterative, ReportsBudgetExhaustion) {
  IterationOptions opt;
  opt.n_max = 2;
  EXPECT_THROW(lyapunov_iterative(irreducible_pair(), 1e-12, std::nullopt, std::nullopt, opt), ConvergenceError);
  opt = {};
  opt.capacity = 64;
  EXPECT_THROW(lyapunov_iterative(irreducible_pair(), 1e-14, std::nullopt, std::nullopt, opt), ConvergenceError);
}

TEST(LyapunovIterative, CertifiedTailFollowsTheGeometricFormula) {
  const auto mu = irreducible_pair();
  const auto search = find_certificate(mu);
  ASSERT_TRUE(search.certificate);
  const auto& c = *search.certificate;
  const double prefactor = phi_holder_upper_bound(mu, c.alpha) * c.C;
  const auto r = lyapunov_iterative(mu, 1e-9, c);
  const double tail = prefactor * std::pow(c.theta, -r.n_used) * c.theta / (c.theta - 1.0);
  EXPECT_NEAR(r.diagnostics.at("certified_tail"), tail, 1e-12 * tail);
  EXPECT_NEAR(r.diagnostics.at("certified_steps_needed"),
              std::log(prefactor * c.theta / (c.theta - 1.0) / 1e-9) / std::log(c.theta), 1e-9);
  // the certified tail is a valid error bound at every step of the run
  const double truth = lyapunov_iterative(mu, 1e-11).L1;
  for (std::size_t n = 1; n < r.trace.size(); ++n)
    EXPECT_LE(std::abs(r.trace[n].real() - truth),
              prefactor * std::pow(c.theta, -double(n)) * c.theta / (c.theta - 1.0) + 1e-11);
}

TEST(LyapunovIterative, CertifiedStoppingUsesTheTail) {
  // a hand-made certificate with fast decay puts the run on the certified rule
  const auto mu = irreducible_pair();
  ContractionCertificate c;
  c.alpha = 1.0;
  c.n0 = 1;
  c.theta = 4.0;
  c.kappa = 0.25;
  c.C = 1.0;
  const double prefactor = phi_holder_upper_bound(mu, 1.0);
  const double tol = 1e-6;
  const auto r = lyapunov_iterative(mu, tol, c);
  EXPECT_TRUE(r.certified);
  EXPECT_EQ(r.diagnostics.at("certified"), 1.0);
  const double needed = std::log(prefactor * 4.0 / 3.0 / tol) / std::log(4.0);
  EXPECT_EQ(r.n_used, static_cast<int>(std::floor(needed)) + 1);
  EXPECT_NEAR(r.error_bound, prefactor * std::pow(4.0, -r.n_used) * 4.0 / 3.0, 1e-15);
  EXPECT_LT(r.error_bound, tol);
  // a certificate is ignored for complex measures
  const ComplexAtomicMeasure complex({{diagonal({3.0, 1.0}), Complex(0.5, 0.5)}, {diagonal({2.0, 1.0}), Complex(0.5, -0.5)}});
  EXPECT_FALSE(lyapunov_iterative(complex, 1e-9, c).certified);
}

TEST(LyapunovMc, DiracAndRotation) {
  const auto r = lyapunov_mc(dirac(matrix2(2.0, 1.0, 0.0, 0.5)), 200, 8, 1);
  EXPECT_NEAR(r.L1, std::log(2.0), 2.0 / 200);
  EXPECT_LE(std::abs(r.L1 - std::log(2.0)), r.error_bound);
  EXPECT_EQ(r.diagnostics.at("stat_error"), 0.0);
  EXPECT_NEAR(lyapunov_mc(dirac(rotation(1.3)), 500, 4, 2).L1, 0.0, 1e-12);
}

TEST(LyapunovMc, DiagonalFamilyWithinStatisticalAndBiasBounds) {
  const auto mu = diagonal_family(0.6, 3.0, 1.0, 2.0, 1.5);
  const auto r = lyapunov_mc(mu, 400, 2000, 17);
  const double truth = diagonal_family_L1(0.6, 3.0, 1.0, 2.0, 1.5);
  EXPECT_LE(std::abs(r.L1 - truth), 4.0 * r.diagnostics.at("stat_error") + r.diagnostics.at("bias_bound"));
  EXPECT_NEAR(r.diagnostics.at("bias_bound"), std::log(3.0) / 400, 1e-15);
}

TEST(LyapunovMc, DeterministicAndIndependentOfThreads) {
  const auto mu = irreducible_pair();
  McLyapunovOptions one, four;
  four.threads = 4;
  const auto a = lyapunov_mc(mu, 100, 300, 9, one);
  const auto b = lyapunov_mc(mu, 100, 300, 9, four);
  EXPECT_EQ(a.L1, b.L1);
  EXPECT_EQ(a.error_bound, b.error_bound);
  EXPECT_NE(a.L1, lyapunov_mc(mu, 100, 300, 10, one).L1);
}

TEST(LyapunovMc, RejectsBadInput) {
  EXPECT_THROW(lyapunov_mc(dirac(diagonal({2.0, 1.0}), Complex(0.0, 1.0)), 10, 10, 1), DomainError);
  EXPECT_THROW(lyapunov_mc(irreducible_pair(), 0, 10, 1), DomainError);
  EXPECT_THROW(lyapunov_furstenberg(irreducible_pair(), 0, 10, 10, 1), DomainError);
}

TEST(LyapunovFurstenberg, Examples) {
  EXPECT_NEAR(lyapunov_furstenberg(dirac(2.5 * Matrix::identity(2)), 8, 0, 10, 1).L1, std::log(2.5), 1e-14);
  EXPECT_NEAR(lyapunov_furstenberg(dirac(diagonal({2.0, 0.5})), 8, 60, 50, 1).L1, std::log(2.0), 1e-12);
}

TEST(OracleTriangle, IterationMonteCarloAndStationaryAverageAgree) {
  for (const auto& mu : {irreducible_pair(), hyperbolic_axes_pair()}) {
    const auto it = lyapunov_iterative(mu, 1e-9);
    const auto mc = lyapunov_mc(mu, 300, 3000, 5);
    const auto fu = lyapunov_furstenberg(mu, 64, 50, 2000, 5);
    EXPECT_LE(std::abs(mc.L1 - it.L1), 4.0 * mc.diagnostics.at("stat_error") + mc.diagnostics.at("bias_bound"));
    EXPECT_LE(std::abs(fu.L1 - it.L1), std::max(1e-2, 4.0 * fu.error_bound));
  }
}

TEST(SecondExponent, Examples) {
  const auto two = second_exponent(dirac(diagonal({3.0, 0.5})), 1e-11);
  EXPECT_NEAR(two.L1, std::log(3.0), 1e-10);
  EXPECT_NEAR(two.L2, std::log(0.5), 1e-10);
  EXPECT_NEAR(two.gap, std::log(6.0), 1e-10);
  EXPECT_TRUE(two.routes_agree);
  ASSERT_TRUE(two.det_average);
  EXPECT_NEAR(*two.det_average, std::log(1.5), 1e-14);

  const auto three = second_exponent(dirac(diagonal({4.0, 2.0, 1.0})), 1e-11);
  EXPECT_NEAR(three.L1_plus_L2, std::log(8.0), 1e-10);
  EXPECT_NEAR(three.L2, std::log(2.0), 1e-10);
  EXPECT_FALSE(three.det_average);
}

TEST(SecondExponent, ExteriorSquareMatchesTheDeterminant) {
  for (const auto& mu : {irreducible_pair(), hyperbolic_axes_pair()}) {
    const auto s = second_exponent(mu, 1e-9);
    EXPECT_TRUE(s.routes_agree);
    EXPECT_NEAR(s.L1_plus_L2, log_det_average(mu), 1e-8);
    EXPECT_GE(s.gap, 0.0);
  }
}

TEST(Reducibility, DiagonalFamily) {
  const auto mu = diagonal_family(0.6, 3.0, 1.0, 2.0, 1.5);
  const auto rep = reducibility_check(mu);
  EXPECT_EQ(rep.status, ReducibilityReport::Status::reducible);
  ASSERT_EQ(rep.invariant_subspaces.size(), 2u);
  ASSERT_TRUE(rep.restricted_L1 && rep.L1 && rep.quasi_irreducible);
  EXPECT_NEAR(*rep.L1, diagonal_family_L1(0.6, 3.0, 1.0, 2.0, 1.5), 1e-7);
  EXPECT_FALSE(*rep.quasi_irreducible);
  EXPECT_FALSE(rep.all_lines_invariant);
}

TEST(Reducibility, UpperTriangularQuasiIrreducibility) {
  // e1 is the only invariant line; it carries L1 exactly when the top-left entries dominate
  const ComplexAtomicMeasure top({{matrix2(3.0, 1.0, 0.0, 0.5), 0.5}, {matrix2(2.0, -1.0, 0.0, 1.0), 0.5}});
  const ComplexAtomicMeasure bottom({{matrix2(0.5, 1.0, 0.0, 2.0), 0.5}, {matrix2(1.0, 0.3, 0.0, 3.0), 0.5}});
  // the orbit approaches e1 at rate 1/2 per step, so the tolerance stays moderate
  ReducibilityOptions opt;
  opt.lyapunov_tol = 1e-5;
  opt.quasi_tol = 1e-4;
  const auto a = reducibility_check(top, opt);
  ASSERT_EQ(a.invariant_subspaces.size(), 1u);
  EXPECT_TRUE(spans_line(a.invariant_subspaces[0], Eigen::Vector2d(1.0, 0.0)));
  EXPECT_TRUE(*a.quasi_irreducible);
  EXPECT_NEAR((*a.restricted_L1)[0], 0.5 * std::log(6.0), 1e-12);
  EXPECT_NEAR(*a.L1, 0.5 * std::log(6.0), 1e-4);
  const auto b = reducibility_check(bottom, opt);
  ASSERT_EQ(b.invariant_subspaces.size(), 1u);
  EXPECT_FALSE(*b.quasi_irreducible);
  EXPECT_NEAR(*b.L1, 0.5 * std::log(6.0), 1e-4);
}

TEST(Reducibility, IrreducibleAndScalarExamples) {
  EXPECT_EQ(reducibility_check(rotation_diagonal_pair()).status, ReducibilityReport::Status::irreducible);
  EXPECT_EQ(reducibility_check(irreducible_pair()).status, ReducibilityReport::Status::irreducible);
  const auto scalar = reducibility_check(dirac(2.0 * Matrix::identity(2)));
  EXPECT_EQ(scalar.status, ReducibilityReport::Status::reducible);
  EXPECT_TRUE(scalar.all_lines_invariant);
  EXPECT_TRUE(*scalar.quasi_irreducible);
  EXPECT_EQ(reducibility_check(dirac(diagonal({2.0}))).status, ReducibilityReport::Status::irreducible);
}

TEST(Reducibility, ThreeDimensionalBlocks) {
  ReducibilityOptions opt;
  opt.compute_exponents = false;
  const auto mu = with_extra_block(irreducible_pair(), 1.0);
  const auto rep = reducibility_check(mu, opt);
  EXPECT_EQ(rep.status, ReducibilityReport::Status::reducible);
  bool line = false, plane = false;
  for (const auto& b : rep.invariant_subspaces) {
    line = line || spans_line(b, Eigen::Vector3d(0.0, 0.0, 1.0));
    plane = plane || (b.cols() == 2 && std::abs(b.row(2).norm()) < 1e-9);
  }
  EXPECT_TRUE(line);
  EXPECT_TRUE(plane);

  // a generic triple is irreducible by the word span
  testgen::Gen gen(4);
  const ComplexAtomicMeasure generic({{gen.matrix(3), 0.5}, {gen.matrix(3), 0.5}});
  const auto g = reducibility_check(generic, opt);
  EXPECT_EQ(g.status, ReducibilityReport::Status::irreducible);
  EXPECT_EQ(g.span_dimension, 9);
}

TEST(FullSupportReduction, Examples) {
  const auto diag = diagonal_family(0.6, 3.0, 1.0, 2.0, 1.5);
  const auto a = full_support_reduction(diag, diag);
  EXPECT_FALSE(a.identity);
  ASSERT_EQ(a.steps.size(), 1u);
  EXPECT_EQ(a.transform.cols(), 1);
  EXPECT_NEAR(std::abs(a.transform(0, 0)), 1.0, 1e-12);
  EXPECT_NEAR(a.dominant_exponent, diagonal_family_L1(0.6, 3.0, 1.0, 2.0, 1.5), 1e-7);
  EXPECT_TRUE(a.strict);

  const auto irr = irreducible_pair();
  const auto b = full_support_reduction(irr, irr);
  EXPECT_TRUE(b.identity);
  EXPECT_TRUE(b.steps.empty());
  EXPECT_NEAR(b.dominant_exponent, lyapunov_iterative(irr, 1e-9).L1, 1e-7);

  const ComplexAtomicMeasure bottom({{matrix2(0.5, 1.0, 0.0, 2.0), 0.5}, {matrix2(1.0, 0.3, 0.0, 3.0), 0.5}});
  const auto c = full_support_reduction(bottom, bottom);
  ASSERT_EQ(c.steps.size(), 1u);
  EXPECT_EQ(c.steps[0].kind, "quotient");
  EXPECT_NEAR(c.dominant_exponent, 0.5 * std::log(6.0), 1e-7);
  EXPECT_NEAR(c.steps[0].other, 0.5 * std::log(0.5), 1e-7);
}

TEST(FullSupportReduction, RejectsDirectionsOutsideTheSupport) {
  EXPECT_THROW(full_support_reduction(irreducible_pair(), dirac(rotation(0.2))), DomainError);
  EXPECT_THROW(full_support_reduction(dirac(diagonal({2.0, 1.0}), 0.5), dirac(diagonal({2.0, 1.0}))), DomainError);
}
