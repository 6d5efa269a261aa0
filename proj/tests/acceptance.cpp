// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "support.hpp"

#include <chrono>
#include <functional>
#include <iostream>

using namespace palflow;
using palflow::testing::random_state;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(3) << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1. The counterexample leaves C at t = beta, matching the closed form.
Outcome escape_time() {
  Outcome o;
  auto t0 = std::chrono::steady_clock::now();
  double worst_t = 0.0, worst_path = 0.0;
  for (double beta : {1.0, 5.0, 10.0, 20.0}) {
    IntegratorConfig cfg;
    cfg.rel_tol = 1e-12;
    cfg.abs_tol = 1e-14;
    cfg.event_tol = 1e-12;
    auto run = counterexample_run(beta, 1.0, 1.0, cfg);
    o.require(std::isfinite(run.escape_time), "no escape for beta " + fmt(beta));
    if (!std::isfinite(run.escape_time)) continue;
    worst_t = std::max(worst_t, std::abs(run.escape_time - beta));
    auto modes = counterexample_modes(1.0, 1.0);
    Eigen::Vector3d p0(0.0, 2.0 * beta + 2.0, 2.0 * beta + 2.0);
    Eigen::Vector3d phi0 = modes.Vinv * p0;
    o.require(std::abs(counterexample_exit_time(phi0[2], 1.0, 1.0) - beta) < 1e-12, "closed-form exit time");
    for (std::size_t i = 0; i < run.ode.t.size(); ++i) {
      auto ap = analytic_counterexample(phi0, 1.0, 1.0, run.ode.t[i]);
      worst_path = std::max(worst_path, (ap.p - Eigen::Vector3d(run.ode.y[i])).norm());
    }
  }
  double secs = seconds_since(t0);
  o.require(worst_t <= 1e-6, "escape time off by " + fmt(worst_t));
  o.require(worst_path <= 1e-7, "analytic path off by " + fmt(worst_path));
  o.require(secs < 5.0, "took " + fmt(secs) + " s");
  o.detail = "max |t_exit - beta| = " + fmt(worst_t) + ", max path error = " + fmt(worst_path) + ", " + fmt(secs) +
             " s" + (o.detail.empty() ? "" : " | " + o.detail);
  return o;
}

// 2. Certified envelope |w(t) - w*|^2 <= M2 |w(0) - w*|^2 exp(-rho2 t), and a
//    fitted rate no slower than rho2.
Outcome certified_rate() {
  Outcome o;
  auto t0 = std::chrono::steady_clock::now();
  double worst_ratio = 0.0, min_rate_ratio = kInf;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto ri = palflow::testing::strongly_convex_full_row_rank(seed);
    auto cert = ges_certificate(ri.prob);
    o.require(cert.alpha_admissible, "alpha not admissible");
    Rng rng(100 + seed);
    auto s0 = random_state(ri.prob, rng, 3.0);
    IntegratorConfig cfg;
    cfg.rel_tol = 1e-11;
    cfg.abs_tol = 1e-14;
    cfg.t_end = 20000.0;
    cfg.stop_kkt = 1e-11;
    cfg.record_dt = 1.0;
    auto tr = integrate(ri.prob, s0, cfg);
    auto d2 = squared_distances(ri.prob, ri.ref, tr);
    for (std::size_t i = 0; i < d2.size(); ++i) {
      double env = cert.M2 * d2.front() * std::exp(-cert.rho2 * tr.times[i]);
      worst_ratio = std::max(worst_ratio, d2[i] / env);
    }
    // whole run: the tail sits below the fit's floor once KKT < 1e-11
    auto fit = fit_log_linear(tr.times, d2, 1.0);
    min_rate_ratio = std::min(min_rate_ratio, fit.rate / cert.rho2);
  }
  double secs = seconds_since(t0);
  o.require(worst_ratio <= 1.0, "envelope exceeded");
  o.require(min_rate_ratio >= 1.0, "fitted rate below rho2");
  o.require(secs < 10.0, "took " + fmt(secs) + " s");
  o.detail = "max dist^2/envelope = " + fmt(worst_ratio) + ", min fitted rate/rho2 = " + fmt(min_rate_ratio) + ", " +
             fmt(secs) + " s" + (o.detail.empty() ? "" : " | " + o.detail);
  return o;
}

// 3. dV1/dt respects the Lyapunov bound and V1 never increases.
Outcome lyapunov_decrease() {
  Outcome o;
  double worst = -kInf, worst_rise = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    RandomInstanceOptions opt;
    opt.nonsmooth_blocks = 3;
    opt.strongly_convex = seed % 2 == 1;
    auto ri = random_convex_instance(seed, opt);
    Rng rng(200 + seed);
    ri.prob.alpha = 0.2 + 2.0 * rng.uniform();
    for (int k = 0; k < 200; ++k) {
      auto s = random_state(ri.prob, rng, 0.5 + 2.0 * rng.uniform());
      double rate = lyapunov_v1_rate(ri.ref, ri.prob, s), bound = v1_decay_bound(ri.ref, ri.prob, s);
      worst = std::max(worst, (rate - bound) / std::max(1.0, std::abs(bound)));
    }
    IntegratorConfig cfg;
    cfg.t_end = 50.0;
    cfg.stop_kkt = 0.0;
    auto tr = integrate(ri.prob, random_state(ri.prob, rng, 2.0), cfg);
    double prev = kInf;
    for (const auto& v : tr.states) {
      double cur = lyapunov_v1(ri.ref, ri.prob, PrimalDualState::unpack(ri.prob, v));
      if (std::isfinite(prev)) worst_rise = std::max(worst_rise, (cur - prev) / std::max(1.0, prev));
      prev = cur;
    }
  }
  o.require(worst <= 1e-8, "bound violated");
  o.require(worst_rise <= 1e-9, "V1 increased");
  o.detail = "max (rate - bound)/scale = " + fmt(worst) + ", max relative V1 rise = " + fmt(worst_rise);
  return o;
}

// 4. Decentralized and centralized fields agree, and so do their flows.
Outcome distributed_equivalence() {
  Outcome o;
  auto inst = gen_lasso_network(5, 8, 3, 4);
  const auto& net = inst.net;
  auto P = assemble_consensus(net, 0.9, 1.1);
  Rng rng(300);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    auto s = random_state(P, rng);
    VectorXd expect = pack_agents(agents_from_central(net, vector_field(P, s)));
    VectorXd got = pack_agents(decentralized_field(net, agents_from_central(net, s), P.alpha, P.mu));
    worst = std::max(worst, (got - expect).norm() / std::max(1.0, expect.norm()));
  }
  IntegratorConfig cfg;
  cfg.t_end = 10.0;
  cfg.stop_kkt = 0.0;
  cfg.rel_tol = 1e-11;
  cfg.abs_tol = 1e-13;
  auto s0 = random_state(P, rng);
  auto tr = integrate(P, s0, cfg);
  auto sim = simulate(net, agents_from_central(net, s0), P.alpha, P.mu, cfg);
  double flow_gap = (pack_agents(sim.final_state) - pack_agents(agents_from_central(net, tr.final_state))).norm();
  o.require(worst <= 1e-14, "field mismatch " + fmt(worst));
  o.require(flow_gap <= 1e-7, "flow mismatch " + fmt(flow_gap));
  o.detail = "max field mismatch = " + fmt(worst) + ", state gap at t=10 = " + fmt(flow_gap);
  return o;
}

// 5. Prox operators: firm nonexpansiveness, optimality, Moreau gradient.
Outcome prox_properties() {
  Outcome o;
  auto t0 = std::chrono::steady_clock::now();
  Rng rng(400);
  std::string counts;
  for (const auto& pc : palflow::testing::prox_cases()) {
    palflow::testing::ProxPropertyCounts c;
    for (int k = 0; k < 1000; ++k) palflow::testing::check_prox_properties(pc.g, rng, c);
    long bad = c.firm_fail + c.optimality_fail + c.moreau_fail;
    o.require(bad == 0, pc.name + ": " + std::to_string(bad) + " violations");
    counts += (counts.empty() ? "" : ", ") + pc.name + " " + std::to_string(c.cases);
  }
  double secs = seconds_since(t0);
  o.require(secs < 30.0, "took " + fmt(secs) + " s");
  o.detail = "cases: " + counts + "; " + fmt(secs) + " s" + (o.detail.empty() ? "" : " | " + o.detail);
  return o;
}

// 6. The four desk examples converge.
Outcome examples_converge() {
  Outcome o;
  auto t0 = std::chrono::steady_clock::now();
  std::string det;
  for (auto k : {ExampleKind::lasso_network, ExampleKind::pcp, ExampleKind::covariance_completion,
                 ExampleKind::sparse_group_lasso}) {
    ExampleSpec spec;
    spec.which = k;
    auto ex = make_example(spec);
    IntegratorConfig cfg;
    cfg.t_end = ex.t_end;
    cfg.stop_kkt = 1e-9;
    auto rep = run_example(ex, cfg);
    std::string name = to_string(k);
    if (rep.self_reference) {
      o.require(rep.monotone_tail, name + " not monotone");
      o.require(rep.final_kkt < 1e-6, name + " kkt " + fmt(rep.final_kkt));
      o.require(rep.fit.r2 > 0.95, name + " r2 " + fmt(rep.fit.r2));
      det += name + ": kkt " + fmt(rep.final_kkt) + " r2 " + fmt(rep.fit.r2) + "; ";
    } else {
      o.require(rep.final_rel_error < 1e-6, name + " rel error " + fmt(rep.final_rel_error));
      det += name + ": rel error " + fmt(rep.final_rel_error) + "; ";
    }
  }
  double secs = seconds_since(t0);
  o.require(secs < 180.0, "took " + fmt(secs) + " s");
  o.detail = det + fmt(secs) + " s" + (o.detail.empty() ? "" : " | " + o.detail);
  return o;
}

// 7. lam never moves in N([E F]^T), and ends at the projection of lam(0)
//    onto the optimal affine set.
Outcome null_space_invariance() {
  Outcome o;
  double worst_null = 0.0, worst_end = 0.0;
  auto track = [&](const SaddleProblem& P, const ReferenceSolution& ref, const PrimalDualState& s0,
                   double t_end) {
    IntegratorConfig cfg;
    cfg.rel_tol = 1e-11;
    cfg.abs_tol = 1e-14;
    cfg.t_end = t_end;
    cfg.stop_kkt = 1e-11;
    auto tr = integrate(P, s0, cfg);
    const MatrixXd& N = ref.null_basis;
    for (const auto& v : tr.states) {
      VectorXd dl = PrimalDualState::unpack(P, v).lam - s0.lam;
      if (N.cols() > 0) worst_null = std::max(worst_null, (N.transpose() * dl).norm());
    }
    VectorXd target = ref.lam0;
    if (N.cols() > 0) target += N * (N.transpose() * (s0.lam - ref.lam0));
    worst_end = std::max(worst_end, (tr.final_state.lam - target).norm());
  };

  for (std::uint64_t seed = 1; seed <= 2; ++seed) {
    auto ri = palflow::testing::strongly_convex_full_row_rank(seed);
    Rng rng(500 + seed);
    track(ri.prob, ri.ref, random_state(ri.prob, rng, 3.0), 20000.0);
  }
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto net = palflow::testing::cycle_consensus(5, 2, seed);
    auto P = assemble_consensus(net);
    // consensus optimum, then the least-norm multiplier for it
    MatrixXd Hs = MatrixXd::Zero(2, 2);
    VectorXd cs = VectorXd::Zero(2);
    for (const auto& a : net.agents) {
      MatrixXd H(2, 2);
      for (int j = 0; j < 2; ++j) H.col(j) = a.f.gradient(VectorXd::Unit(2, j)) - a.f.gradient(VectorXd::Zero(2));
      Hs += H;
      cs += a.f.gradient(VectorXd::Zero(2));
    }
    VectorXd xbar = -Hs.ldlt().solve(cs);
    auto star = PrimalDualState::zeros(P);
    VectorXd grad(P.m());
    for (int i = 0; i < 5; ++i) {
      star.x.segment(2 * i, 2) = xbar;
      grad.segment(2 * i, 2) = net.agents[i].f.gradient(xbar);
    }
    MatrixXd K = P.E.dense();
    star.lam = K.transpose().completeOrthogonalDecomposition().solve(-grad);
    o.require(kkt_residual(P, star) < 1e-10, "consensus reference not optimal");
    auto ref = make_reference(P, star, "closed-form consensus optimum");
    o.require(ref.null_basis.cols() == 2, "expected a 2-dimensional null space");
    Rng rng(600 + seed);
    track(P, ref, random_state(P, rng, 2.0), 5000.0);
  }
  o.require(worst_null <= 1e-8, "null component moved");
  o.require(worst_end <= 1e-6, "final lam off the projection");
  o.detail = "max null-space drift = " + fmt(worst_null) + ", final lam error = " + fmt(worst_end);
  return o;
}

// 8. The dual function is smooth with modulus mu and optimal at the saddle.
Outcome dual_smoothness() {
  Outcome o;
  double worst_ratio = 0.0, worst_grad = 0.0, worst_gap = 0.0;
  Rng rng(700);
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    RandomInstanceOptions opt;
    opt.strongly_convex_g = seed % 2 == 0;
    opt.mu = 0.5 + rng.uniform();
    auto ri = random_convex_instance(seed, opt);
    const auto& P = ri.prob;
    for (int k = 0; k < 50; ++k) {
      VectorXd y1 = rng.normal_vector(P.n()), l1 = rng.normal_vector(P.p());
      VectorXd y2 = rng.normal_vector(P.n()), l2 = rng.normal_vector(P.p());
      auto a = dual_function(P, y1, l1), b = dual_function(P, y2, l2);
      double gd = std::sqrt((a.grad_y - b.grad_y).squaredNorm() + (a.grad_lam - b.grad_lam).squaredNorm());
      double wd = std::sqrt((y1 - y2).squaredNorm() + (l1 - l2).squaredNorm());
      worst_ratio = std::max(worst_ratio, gd / (P.mu * wd));
    }
    auto at = dual_function(P, ri.ref.y, ri.ref.lam0);
    worst_grad = std::max(worst_grad, std::sqrt(at.grad_y.squaredNorm() + at.grad_lam.squaredNorm()));
    worst_gap = std::max(worst_gap, std::abs(at.d - ri.ref.optimal_value));
  }
  o.require(worst_ratio <= 1.0 + 1e-6, "gradient not mu-Lipschitz");
  o.require(worst_grad < 1e-7, "gradient nonzero at the saddle");
  o.require(worst_gap < 1e-7, "duality gap at the saddle");
  o.detail = "max |grad diff|/(mu |w diff|) = " + fmt(worst_ratio) + " over 200 pairs, |grad d*| = " +
             fmt(worst_grad) + ", |d* - p*| = " + fmt(worst_gap);
  return o;
}

}  // namespace

int main() {
  std::vector<std::pair<std::string, std::function<Outcome()>>> checks = {
      {"escape time of the counterexample", escape_time},
      {"certified exponential envelope", certified_rate},
      {"Lyapunov decrease", lyapunov_decrease},
      {"distributed equivalence", distributed_equivalence},
      {"prox properties", prox_properties},
      {"desk examples converge", examples_converge},
      {"null-space invariance of lam", null_space_invariance},
      {"dual smoothness", dual_smoothness},
  };
  int failed = 0;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    Outcome o;
    try {
      o = checks[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.pass;
    std::cout << "criterion " << i + 1 << " (" << checks[i].first << "): " << (o.pass ? "PASS" : "FAIL") << "  "
              << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
