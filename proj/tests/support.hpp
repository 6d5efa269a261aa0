#pragma once

// Shared helpers for the unit tests and the acceptance binary.

#include "palflow/examples.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace palflow::testing {

inline double rel_err(const VectorXd& a, const VectorXd& b) {
  double s = std::max(a.norm(), b.norm());
  return s == 0.0 ? 0.0 : (a - b).norm() / s;
}

inline PrimalDualState random_state(const SaddleProblem& prob, Rng& rng, double scale = 1.0) {
  return {scale * rng.normal_vector(prob.m()), scale * rng.normal_vector(prob.n()),
          scale * rng.normal_vector(prob.n()), scale * rng.normal_vector(prob.p())};
}

/// Central difference of a scalar function along every coordinate.
inline VectorXd central_gradient(const std::function<double(const VectorXd&)>& f, const VectorXd& v, double h) {
  VectorXd g(v.size());
  VectorXd w = v;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    w[i] = v[i] + h;
    double fp = f(w);
    w[i] = v[i] - h;
    double fm = f(w);
    w[i] = v[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// The six prox kinds exercised by the property suite.
struct ProxCase {
  std::string name;
  ProximableFunction g;
};

inline std::vector<ProxCase> prox_cases() {
  MatrixXd mask(3, 4);
  mask << 1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 0, 1;
  GroupPartition part;
  part.groups = {{0, 1, 2}, {3, 4}, {5}};
  part.weights = {0.7, 1.3, 0.4};
  part.eta = 0.3;
  return {
      {"l1", make_l1(6, 0.8)},
      {"group_lasso", make_group_lasso(6, part)},
      {"nuclear", make_nuclear(4, 3, 1.2)},
      {"indicator_nonneg", make_indicator(Orthant::nonneg, 5)},
      {"indicator_nonpos", make_indicator(Orthant::nonpos, 5)},
      {"frobenius_ball_masked", make_frobenius_ball_masked(1.5, mask)},
  };
}

struct ProxPropertyCounts {
  long cases = 0;
  long firm_fail = 0;
  long optimality_fail = 0;
  long moreau_fail = 0;
  double worst_moreau_rel = 0.0;
};

/// One random case of each property for g:
///  - firm nonexpansiveness <P(u)-P(v), u-v> >= |P(u)-P(v)|^2,
///  - argmin optimality: the prox objective at P(v) is no larger than at
///    feasible random perturbations of P(v),
///  - grad of the Moreau envelope equals its central difference (1e-5 rel).
inline void check_prox_properties(const ProximableFunction& g, Rng& rng, ProxPropertyCounts& c) {
  const Eigen::Index n = g.dim();
  const double mu = 0.2 + 2.0 * rng.uniform();
  const double scale = 0.3 + 3.0 * rng.uniform();
  VectorXd u = scale * rng.normal_vector(n), v = scale * rng.normal_vector(n);
  ++c.cases;

  VectorXd pu = prox(g, mu, u), pv = prox(g, mu, v);
  VectorXd dp = pu - pv;
  double lhs = dp.dot(u - v), rhs = dp.squaredNorm();
  if (lhs < rhs - 1e-10 * std::max(1.0, (u - v).squaredNorm())) ++c.firm_fail;

  auto obj = [&](const VectorXd& w) { return g.value(w) + (w - v).squaredNorm() / (2.0 * mu); };
  const double base = obj(pv);
  for (int k = 0; k < 4; ++k) {
    double eps = std::pow(10.0, -1.0 - 2.0 * rng.uniform());
    VectorXd w = pv + eps * rng.normal_vector(n);
    double ow = obj(w);
    if (!std::isfinite(ow)) continue;  // outside an indicator's set
    if (ow < base - 1e-12 * std::max(1.0, std::abs(base))) {
      ++c.optimality_fail;
      break;
    }
  }

  VectorXd gm = moreau_grad(g, mu, v);
  const double h = 1e-6 * std::max(1.0, v.norm());
  VectorXd fd = central_gradient([&](const VectorXd& w) { return moreau_value(g, mu, w); }, v, h);
  double denom = std::max(gm.norm(), 1e-3 * std::max(1.0, v.norm()));
  double rel = (fd - gm).norm() / denom;
  c.worst_moreau_rel = std::max(c.worst_moreau_rel, rel);
  if (rel > 1e-5) ++c.moreau_fail;
}

/// min 1/2 x^2 s.t. x = 1; x* = 1, lam* = -1, f* = 1/2.
inline SaddleProblem one_d_quadratic(double mu = 1.0) {
  SaddleProblem P;
  P.mu = mu;
  P.q = VectorXd::Ones(1);
  P.E = BlockOperator(1);
  P.F = BlockOperator(1);
  P.smooth.push_back(make_quadratic_block(MatrixXd::Identity(1, 1), VectorXd::Zero(1)));
  P.E.push_back(LinearOperator::identity(1));
  P.validate();
  return P;
}

/// Strongly convex quadratic f with a full-row-rank E and F = 0.
inline RandomInstance strongly_convex_full_row_rank(std::uint64_t seed, int m = 6, int p = 3, double alpha_fraction = 0.9) {
  Rng rng(seed);
  RandomInstance ri;
  auto& P = ri.prob;
  P.q = VectorXd::Zero(p);
  P.E = BlockOperator(p);
  P.F = BlockOperator(p);
  MatrixXd G = rng.normal_matrix(m, m);
  MatrixXd H = G.transpose() * G / m + 0.5 * MatrixXd::Identity(m, m);
  MatrixXd E = rng.normal_matrix(p, m) / std::sqrt(static_cast<double>(m));
  VectorXd xs = rng.normal_vector(m), lam = rng.normal_vector(p);
  P.smooth.push_back(make_quadratic_block(H, -H * xs - E.transpose() * lam));
  P.E.push_back(LinearOperator::from_dense(E));
  P.q = E * xs;
  P.validate();
  auto cert = ges_certificate(P);
  P.alpha = alpha_fraction * cert.alpha_bar2;
  ri.ref = make_reference(P, PrimalDualState{xs, VectorXd(), VectorXd(), lam}, "closed-form KKT point");
  return ri;
}

/// Cycle of k agents with f_0 = 1/2|x - c_0|^2 (strongly convex) and
/// f_i = 1/2 |x - c_i|^2 + 0 elsewhere, no nonsmooth terms. N(T') is
/// one-dimensional per coordinate, so lam has a free component.
inline Network cycle_consensus(int k, int d, std::uint64_t seed) {
  Rng rng(seed);
  Network net;
  net.k = k;
  for (int i = 0; i < k; ++i) net.edges.emplace_back(i, (i + 1) % k);
  for (int i = 0; i < k; ++i) {
    Agent a;
    a.f = make_quadratic_block((0.5 + rng.uniform()) * MatrixXd::Identity(d, d), rng.normal_vector(d));
    a.g = make_zero(0);
    a.C = MatrixXd::Zero(0, d);
    net.agents.push_back(std::move(a));
  }
  return net;
}

}  // namespace palflow::testing
