#include "support.hpp"

#include <gtest/gtest.h>

using namespace palflow;
using palflow::testing::one_d_quadratic;

namespace {

// f(x) = 1/2 x'Hx with H = diag(h), E a 1 x 2 row, no nonsmooth part.
SaddleProblem two_block_quadratic(double h1, double h2, double e1, double e2, double mu = 1.0) {
  SaddleProblem P;
  P.mu = mu;
  P.q = VectorXd::Zero(1);
  P.E = BlockOperator(1);
  P.F = BlockOperator(1);
  P.smooth.push_back(make_quadratic_block(MatrixXd::Constant(1, 1, h1), VectorXd::Zero(1)));
  P.smooth.push_back(make_quadratic_block(MatrixXd::Constant(1, 1, h2), VectorXd::Zero(1)));
  P.E.push_back(LinearOperator::from_dense(MatrixXd::Constant(1, 1, e1)));
  P.E.push_back(LinearOperator::from_dense(MatrixXd::Constant(1, 1, e2)));
  P.validate();
  return P;
}

double hessian_modulus(double h1, double h2, double e1, double e2, double mu) {
  Eigen::Matrix2d H;
  H << h1 + e1 * e1 / mu, e1 * e2 / mu, e1 * e2 / mu, h2 + e2 * e2 / mu;
  return Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(H).eigenvalues().minCoeff();
}

}  // namespace

TEST(SaddleProblem, ValidateRejectsInconsistentShapes) {
  auto P = one_d_quadratic();
  P.q = VectorXd::Ones(2);
  EXPECT_THROW(P.validate(), DimensionError);
  P = one_d_quadratic();
  P.mu = 0.0;
  EXPECT_THROW(P.validate(), std::invalid_argument);
  P = one_d_quadratic();
  P.smooth.push_back(make_zero_block(Shape::vector(2)));
  EXPECT_THROW(P.validate(), DimensionError);
  P = one_d_quadratic();
  P.g.blocks.push_back(make_l1(1));
  EXPECT_THROW(P.validate(), DimensionError);
}

TEST(SaddleProblem, QuadraticBlockConstantsFromEigenvalues) {
  MatrixXd H(2, 2);
  H << 2.0, 1.0, 1.0, 2.0;  // eigenvalues 1 and 3
  auto b = make_quadratic_block(H, VectorXd::Zero(2));
  EXPECT_NEAR(b.lipschitz, 3.0, 1e-14);
  EXPECT_NEAR(b.strong_convexity, 1.0, 1e-14);
  auto ls = make_least_squares_block(MatrixXd::Identity(2, 2), VectorXd::Ones(2));
  EXPECT_NEAR(ls.value(VectorXd::Zero(2)), 1.0, 1e-15);
  EXPECT_LT((ls.gradient(VectorXd::Zero(2)) + VectorXd::Ones(2)).norm(), 1e-15);
}

TEST(PrimalDualState, PackUnpackRoundTrip) {
  auto ri = random_convex_instance(3);
  Rng rng(1);
  auto s = palflow::testing::random_state(ri.prob, rng);
  auto v = s.pack();
  EXPECT_EQ(v.size(), ri.prob.state_dim());
  auto t = PrimalDualState::unpack(ri.prob, v);
  EXPECT_EQ(t.x, s.x);
  EXPECT_EQ(t.z, s.z);
  EXPECT_EQ(t.y, s.y);
  EXPECT_EQ(t.lam, s.lam);
  EXPECT_THROW(PrimalDualState::unpack(ri.prob, VectorXd::Zero(3)), DimensionError);
  s.x.resize(1);
  EXPECT_THROW(s.check(ri.prob), DimensionError);
}

TEST(Kkt, VanishesAtConstructedSolutions) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    RandomInstanceOptions o;
    o.nonsmooth_blocks = 4;
    o.strongly_convex_g = seed % 2 == 0;
    auto ri = random_convex_instance(seed, o);
    EXPECT_LT(kkt_residual(ri.prob, ri.ref.state()), 1e-12) << "seed " << seed;
    auto s = ri.ref.state();
    s.x[0] += 1e-3;
    EXPECT_GT(kkt_residual(ri.prob, s), 1e-5);
  }
}

TEST(Kkt, OneDimensionalClosedForm) {
  auto P = one_d_quadratic();
  PrimalDualState s{VectorXd::Ones(1), VectorXd(), VectorXd(), -VectorXd::Ones(1)};
  EXPECT_LT(kkt_residual(P, s), 1e-15);
  s.x[0] = 2.0;
  // grad f + lam = 1, residual x - 1 = 1
  EXPECT_NEAR(kkt_residual(P, s), std::sqrt(2.0), 1e-15);
}

TEST(Assumptions, StronglyConvexSmoothPartSatisfiesA4) {
  auto ri = random_convex_instance(5);
  auto a4 = check_assumption4(ri.prob);
  EXPECT_TRUE(a4.holds);
  EXPECT_TRUE(a4.I.empty());
  EXPECT_FALSE(check_assumption5(ri.prob));  // R(F) is generic, not inside R(E)
}

TEST(Assumptions, WideNonStronglyConvexBlocksFailA4) {
  RandomInstanceOptions o;
  o.strongly_convex = false;
  auto ri = random_convex_instance(5, o);
  auto a4 = check_assumption4(ri.prob);
  EXPECT_FALSE(a4.holds);
  EXPECT_EQ(a4.I.size(), 2u);
}

TEST(Assumptions, CounterexampleFailsA5) {
  auto P = counterexample_problem();
  EXPECT_TRUE(check_assumption4(P).holds);
  EXPECT_FALSE(check_assumption5(P));
  try {
    ges_certificate(P);
    FAIL() << "certificate should fail";
  } catch (const CertificateError& e) {
    EXPECT_NE(std::string(e.what()).find("Assumption 5"), std::string::npos);
  }
}

TEST(Certificate, HandComputedScalarCase) {
  auto P = one_d_quadratic();
  P.alpha = 0.05;
  auto c = ges_certificate(P);
  EXPECT_TRUE(c.empty_set_convention);
  EXPECT_NEAR(c.m_xz, 1.0, 1e-14);
  EXPECT_NEAR(c.alpha_bar2, 0.1, 1e-14);  // 0.5 * 1 / (1 + 4)
  EXPECT_NEAR(c.L_f, 1.0, 1e-14);
  EXPECT_NEAR(c.L_xz, 3.0, 1e-14);
  EXPECT_NEAR(c.c1, 2.5, 1e-14);
  EXPECT_NEAR(c.c2, 2.0, 1e-14);
  EXPECT_NEAR(c.c3, 2.0, 1e-14);
  EXPECT_NEAR(c.M2, 6.0 / 0.05, 1e-10);
  EXPECT_NEAR(c.rho2, 0.05 / 54.0, 1e-16);
  EXPECT_TRUE(c.alpha_admissible);
  P.alpha = 0.2;
  EXPECT_FALSE(ges_certificate(P).alpha_admissible);
  EXPECT_NE(c.report().find("alpha_bar2"), std::string::npos);
}

TEST(Certificate, ModulusIsCappedByComplementTerm) {
  // block 1 strongly convex (m = 1), block 2 not; lo = 10, hi = 0.1 makes
  // the ratio about 96, above the true Hessian modulus of about 1
  auto P = two_block_quadratic(1.0, 0.0, 0.1, 10.0);
  auto a4 = check_assumption4(P);
  ASSERT_TRUE(a4.holds);
  double m = strong_convexity_xz(P, a4);
  EXPECT_NEAR(m, 0.25, 1e-14);
  EXPECT_LE(m, hessian_modulus(1.0, 0.0, 0.1, 10.0, 1.0));
}

TEST(Certificate, ModulusUsesRatioWhenSmaller) {
  auto P = two_block_quadratic(1.0, 0.0, 10.0, 0.1);
  auto a4 = check_assumption4(P);
  double m = strong_convexity_xz(P, a4);
  EXPECT_NEAR(m, 0.01 / (1.0 + 400.0), 1e-15);
  EXPECT_LE(m, hessian_modulus(1.0, 0.0, 10.0, 0.1, 1.0));
}

TEST(Certificate, NoStronglyConvexBlockUsesSmallestSingularValue) {
  SaddleProblem P;
  P.mu = 0.5;
  P.q = VectorXd::Zero(2);
  P.E = BlockOperator(2);
  P.F = BlockOperator(2);
  P.smooth.push_back(make_quadratic_block(MatrixXd::Zero(1, 1), VectorXd::Zero(1)));
  P.E.push_back(LinearOperator::from_dense(MatrixXd::Ones(2, 1)));
  P.validate();
  auto a4 = check_assumption4(P);
  ASSERT_TRUE(a4.holds);
  EXPECT_NEAR(strong_convexity_xz(P, a4), 2.0 / 0.5, 1e-13);
}

TEST(Certificate, MissingLipschitzConstantIsReported) {
  auto P = one_d_quadratic();
  P.smooth[0].lipschitz = kNaN;
  try {
    ges_certificate(P);
    FAIL() << "certificate should fail";
  } catch (const CertificateError& e) {
    EXPECT_NE(std::string(e.what()).find("L_f"), std::string::npos);
  }
}

TEST(Certificate, RejectsLargeMuTimesModulus) {
  SaddleProblem P = one_d_quadratic(2.0);
  P.g.blocks.push_back(make_quadratic(VectorXd::Zero(1), 1.0));
  P.F.push_back(LinearOperator::identity(1));
  P.validate();
  EXPECT_THROW(ges_certificate(P), CertificateError);
}

TEST(DeclaredConstants, TruthfulBlocksPassAndFalseOnesWarn) {
  auto ri = random_convex_instance(9);
  EXPECT_TRUE(verify_declared_constants(ri.prob).warnings.empty());
  auto P = ri.prob;
  P.smooth[0].lipschitz *= 0.5;
  auto chk = verify_declared_constants(P);
  EXPECT_GT(chk.worst_lipschitz_ratio, 1.0);
  EXPECT_FALSE(chk.warnings.empty());
  P = ri.prob;
  P.smooth[1].strong_convexity *= 3.0;
  EXPECT_FALSE(verify_declared_constants(P).warnings.empty());
}

TEST(Lifted, KktVanishesWithCopyEqualToZ) {
  auto ri = random_convex_instance(4);
  auto L = build_lifted(ri.prob);
  EXPECT_EQ(L.primal_dim(), ri.prob.m() + 2 * ri.prob.n());
  const auto& r = ri.ref;
  EXPECT_LT(L.kkt_residual(r.x, r.z, r.z, r.y, r.lam0), 1e-12);
  EXPECT_NEAR(L.objective(r.x, r.z), ri.prob.objective(r.x, r.z), 1e-14);
  VectorXd w = r.z;
  w[0] += 0.1;
  EXPECT_GT(L.kkt_residual(r.x, r.z, w, r.y, r.lam0), 0.05);
}

TEST(SaddleProblem, TrackedObjectiveDropsIndicators) {
  auto P = counterexample_problem();
  VectorXd x = VectorXd::Constant(1, 2.0), z = VectorXd::Ones(2);
  EXPECT_TRUE(std::isinf(P.objective(x, z)));
  EXPECT_NEAR(P.tracked_objective(x, z), 2.0, 1e-15);
}
