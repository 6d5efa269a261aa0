#include "support.hpp"

#include <gtest/gtest.h>

using namespace palflow;
using palflow::testing::one_d_quadratic;
using palflow::testing::random_state;

namespace {

RandomInstance instance(std::uint64_t seed) {
  RandomInstanceOptions o;
  o.nonsmooth_blocks = 4;
  return random_convex_instance(seed, o);
}

// d(lam) for min 1/2 x^2 s.t. x = 1, worked out by hand:
// x_bar = (1 - mu lam) / (1 + mu), d = (1 - mu lam)^2 / (2(1 + mu)) - mu lam^2 / 2.
double scalar_dual(double lam, double mu) {
  double a = 1.0 - mu * lam;
  return a * a / (2.0 * (1.0 + mu)) - 0.5 * mu * lam * lam;
}

}  // namespace

TEST(V1, ZeroAtReferenceAndWeightsPrimalByAlpha) {
  auto ri = instance(1);
  EXPECT_EQ(lyapunov_v1(ri.ref, ri.prob, ri.ref.state()), 0.0);
  auto s = ri.ref.state();
  s.x[0] += 1.0;
  s.lam[0] += 1.0;
  ri.prob.alpha = 2.0;
  EXPECT_NEAR(lyapunov_v1(ri.ref, ri.prob, s), 0.5 * (2.0 + 1.0), 1e-14);
}

TEST(V1, RateRespectsDecayBound) {
  Rng rng(2);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto ri = instance(seed);
    ri.prob.alpha = 0.3 + rng.uniform();
    for (int k = 0; k < 40; ++k) {
      auto s = random_state(ri.prob, rng);
      double rate = lyapunov_v1_rate(ri.ref, ri.prob, s);
      double bound = v1_decay_bound(ri.ref, ri.prob, s);
      EXPECT_LE(rate, bound + 1e-8 * std::max(1.0, std::abs(bound))) << seed;
    }
  }
}

TEST(V1, NonincreasingAlongTrajectory) {
  auto ri = instance(3);
  IntegratorConfig cfg;
  cfg.t_end = 30.0;
  cfg.stop_kkt = 0.0;
  auto tr = integrate(ri.prob, PrimalDualState::zeros(ri.prob), cfg);
  double prev = kInf;
  for (const auto& v : tr.states) {
    double cur = lyapunov_v1(ri.ref, ri.prob, PrimalDualState::unpack(ri.prob, v));
    EXPECT_LE(cur, prev + 1e-9);
    prev = cur;
  }
}

TEST(DualFunction, ScalarClosedForm) {
  for (double mu : {0.5, 1.0, 2.0}) {
    auto P = one_d_quadratic(mu);
    for (double lam : {-2.0, -1.0, 0.0, 0.5}) {
      auto de = dual_function(P, VectorXd(), VectorXd::Constant(1, lam));
      EXPECT_NEAR(de.d, scalar_dual(lam, mu), 1e-12);
      EXPECT_NEAR(de.xbar[0], (1.0 - mu * lam) / (1.0 + mu), 1e-10);
      EXPECT_NEAR(de.grad_lam[0], -mu * (1.0 + lam) / (1.0 + mu), 1e-10);
    }
    // maximized at lam* = -1 with d* = f* = 1/2
    EXPECT_NEAR(scalar_dual(-1.0, mu), 0.5, 1e-15);
  }
}

TEST(DualFunction, OptimalAtReference) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto ri = instance(seed);
    auto de = dual_function(ri.prob, ri.ref.y, ri.ref.lam0);
    EXPECT_NEAR(de.d, ri.ref.optimal_value, 1e-8 * std::max(1.0, std::abs(ri.ref.optimal_value)));
    EXPECT_LT(de.grad_y.norm() + de.grad_lam.norm(), 1e-8);
    EXPECT_LT((de.xbar - ri.ref.x).norm(), 1e-8);
  }
}

TEST(DualFunction, GradientIsMuLipschitzAndStartIndependent) {
  Rng rng(4);
  auto ri = instance(6);
  const auto& P = ri.prob;
  for (int k = 0; k < 20; ++k) {
    VectorXd y1 = rng.normal_vector(P.n()), l1 = rng.normal_vector(P.p());
    VectorXd y2 = rng.normal_vector(P.n()), l2 = rng.normal_vector(P.p());
    auto a = dual_function(P, y1, l1), b = dual_function(P, y2, l2);
    VectorXd ga(P.n() + P.p()), gb(P.n() + P.p()), wa(P.n() + P.p()), wb(P.n() + P.p());
    ga << a.grad_y, a.grad_lam;
    gb << b.grad_y, b.grad_lam;
    wa << y1, l1;
    wb << y2, l2;
    EXPECT_LE((ga - gb).norm(), (1.0 + 1e-6) * P.mu * (wa - wb).norm());

    DualOptions o;
    o.x_start = 5.0 * rng.normal_vector(P.m());
    o.z_start = 5.0 * rng.normal_vector(P.n());
    auto c = dual_function(P, y1, l1, o);
    EXPECT_LT((c.grad_y - a.grad_y).norm() + (c.grad_lam - a.grad_lam).norm(), 1e-8);
    EXPECT_NEAR(c.d, a.d, 1e-9 * std::max(1.0, std::abs(a.d)));
  }
}

TEST(DualFunction, RejectsBadInput) {
  auto ri = instance(7);
  EXPECT_THROW(dual_function(ri.prob, VectorXd::Zero(1), ri.ref.lam0), DimensionError);
  auto P = ri.prob;
  P.smooth[0].lipschitz = kNaN;
  EXPECT_THROW(dual_function(P, ri.ref.y, ri.ref.lam0), DualError);
}

TEST(V2, ZeroAtSaddleNonnegativeElsewhere) {
  auto ri = instance(8);
  auto at = lyapunov_v2(ri.prob, ri.ref.state(), ri.ref.d_star);
  EXPECT_LT(std::abs(at.v2), 1e-8);
  Rng rng(5);
  for (int k = 0; k < 20; ++k) {
    auto s = random_state(ri.prob, rng);
    auto v = lyapunov_v2(ri.prob, s, ri.ref.d_star);
    EXPECT_GE(v.primal_gap, -1e-9);
    EXPECT_GE(v.dual_gap, -1e-9);
    // concave d with mu-Lipschitz gradient: d* - d <= (mu/2) dist^2
    auto dist = distance_to_solution(ri.ref, s);
    EXPECT_LE(v.dual_gap, 0.5 * ri.prob.mu * dist.dual * dist.dual + 1e-8);
  }
}

TEST(Distance, IgnoresNullSpaceOfConstraints) {
  Network net = palflow::testing::cycle_consensus(4, 1, 2);
  auto P = assemble_consensus(net);
  // consensus optimum: x_i = sum c_i / sum h_i. Build it from the blocks.
  double hs = 0.0;
  VectorXd cs = VectorXd::Zero(1);
  for (const auto& a : net.agents) {
    hs += a.f.lipschitz;
    cs -= a.f.gradient(VectorXd::Zero(1));
  }
  double xbar = cs[0] / hs;
  PrimalDualState s = PrimalDualState::zeros(P);
  s.x.setConstant(xbar);
  // lam solves T' lam = -grad f_i(xbar); least squares on the incidence
  MatrixXd T = incidence_matrix(net);
  VectorXd rhs(4);
  for (int i = 0; i < 4; ++i) rhs[i] = -net.agents[i].f.gradient(VectorXd::Constant(1, xbar))[0];
  s.lam = T.transpose().colPivHouseholderQr().solve(rhs);
  ASSERT_LT(kkt_residual(P, s), 1e-12);
  auto ref = make_reference(P, s, "hand");
  ASSERT_EQ(ref.null_basis.cols(), 1);
  auto moved = s;
  moved.lam += 3.0 * ref.null_basis.col(0);
  EXPECT_LT(distance_to_solution(ref, moved).dual, 1e-12);
  moved.x[0] += 0.5;
  EXPECT_NEAR(distance_to_solution(ref, moved).primal, 0.5, 1e-14);
}

TEST(RateFit, SyntheticExponential) {
  std::vector<double> t, v;
  for (int i = 0; i <= 50; ++i) {
    t.push_back(0.1 * i);
    v.push_back(9.0 * std::exp(-2.0 * t.back()));
  }
  auto f = fit_log_linear(t, v, 1.0);
  EXPECT_NEAR(f.rate, 2.0, 1e-12);
  EXPECT_NEAR(f.r2, 1.0, 1e-12);
  EXPECT_NEAR(f.M_emp, 1.0, 1e-10);
  EXPECT_EQ(f.points, 51u);
  auto half = fit_log_linear(t, v, 0.5);
  EXPECT_NEAR(half.rate, 2.0, 1e-12);
  EXPECT_LT(half.points, 30u);
}

TEST(RateFit, TooFewPointsIsAnError) {
  std::vector<double> t = {0, 1, 2, 3}, v = {1, 0.5, 0.25, 0.125};
  EXPECT_THROW(fit_log_linear(t, v, 1.0), std::invalid_argument);
  // values at the floor are dropped before counting
  std::vector<double> t2 = {0, 1, 2, 3, 4, 5}, v2 = {1, 0.5, 0.25, 0.0, 0.0, 0.0};
  EXPECT_THROW(fit_log_linear(t2, v2, 1.0), std::invalid_argument);
}

TEST(RateFit, LeastSquaresLineExact) {
  auto f = least_squares_line({0, 1, 2, 3}, {1, 3, 5, 7});
  EXPECT_NEAR(f.slope, 2.0, 1e-14);
  EXPECT_NEAR(f.intercept, 1.0, 1e-14);
  EXPECT_NEAR(f.r2, 1.0, 1e-14);
}

TEST(Reference, FlowReferenceMatchesConstructedSolution) {
  auto ri = instance(9);
  auto ref = reference_from_flow(ri.prob, PrimalDualState::zeros(ri.prob), 1e-10, 1e4);
  EXPECT_LT((ref.x - ri.ref.x).norm(), 1e-7);
  EXPECT_LT((ref.z - ri.ref.z).norm(), 1e-7);
  EXPECT_NEAR(ref.optimal_value, ri.ref.optimal_value, 1e-7);
  EXPECT_NE(ref.provenance.find("flow"), std::string::npos);
}
