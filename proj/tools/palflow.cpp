// palflow: solve, certify and benchmark proximal augmented Lagrangian flows.

#include "palflow/config.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

using namespace palflow;
namespace fs = std::filesystem;

namespace {

struct CommonOpts {
  std::string config;
  std::string example;
  std::string out = "palflow_out";
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha, mu, t_end, stop_kkt;
  std::optional<std::string> method;
  bool svg = false;
};

void add_common(CLI::App* app, CommonOpts& o) {
  app->add_option("--config", o.config, "run configuration file");
  app->add_option("--example", o.example, "preset to use when no --config is given");
  app->add_option("--seed", o.seed, "problem seed");
  app->add_option("--alpha", o.alpha, "dual time-scale alpha");
  app->add_option("--mu", o.mu, "augmentation parameter mu");
}

Config load(const CommonOpts& o) {
  Config c;
  if (!o.config.empty()) {
    c = load_config(o.config);
  } else {
    if (o.example.empty()) throw ConfigError("example", "give --config or --example");
    c.source = "<command line>";
    c.ensure("problem").set("example", o.example);
  }
  Overrides ov;
  ov.seed = o.seed;
  ov.alpha = o.alpha;
  ov.mu = o.mu;
  ov.t_end = o.t_end;
  ov.stop_kkt = o.stop_kkt;
  ov.method = o.method;
  ov.svg = o.svg;
  apply_overrides(c, ov);
  return c;
}

// ------------------------------------------------------------------ svg

void write_log_svg(const std::string& path, const std::string& title, const std::vector<double>& t,
                   const std::vector<double>& v) {
  const double W = 640, H = 400, pad = 50;
  std::vector<std::pair<double, double>> pts;
  double lo = kInf, hi = -kInf;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(v[i])) continue;
    double lv = std::log10(std::max(v[i], 1e-16));
    pts.emplace_back(t[i], lv);
    lo = std::min(lo, lv);
    hi = std::max(hi, lv);
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<text x=\"" << pad << "\" y=\"25\" font-family=\"sans-serif\" font-size=\"14\">" << title
     << " (log10)</text>\n";
  os << "<rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << W - 2 * pad << "\" height=\"" << H - 2 * pad
     << "\" fill=\"none\" stroke=\"#888\"/>\n";
  if (pts.size() >= 2) {
    if (hi - lo < 1e-12) hi = lo + 1.0;
    double t0 = pts.front().first, t1 = std::max(pts.back().first, t0 + 1e-300);
    os << "<text x=\"5\" y=\"" << pad + 5 << "\" font-size=\"11\">" << std::setprecision(3) << hi << "</text>\n";
    os << "<text x=\"5\" y=\"" << H - pad << "\" font-size=\"11\">" << lo << "</text>\n";
    os << "<text x=\"" << W - pad - 40 << "\" y=\"" << H - pad + 18 << "\" font-size=\"11\">t=" << t1 << "</text>\n";
    os << "<polyline fill=\"none\" stroke=\"#1f5fbf\" stroke-width=\"1.5\" points=\"" << std::setprecision(6);
    for (const auto& [tt, lv] : pts) {
      double x = pad + (W - 2 * pad) * (tt - t0) / (t1 - t0);
      double y = H - pad - (H - 2 * pad) * (lv - lo) / (hi - lo);
      os << x << "," << y << " ";
    }
    os << "\"/>\n";
  }
  os << "</svg>\n";
}

void write_text(const std::string& path, const std::string& s) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << s;
}

// ---------------------------------------------------------------- solve

int solve_counterexample(const RunSpec& rs, const std::string& out, std::ostringstream& summary) {
  const double mu = rs.ex.prob.mu, alpha = rs.ex.prob.alpha;
  auto run = counterexample_run(rs.beta, mu, alpha, rs.cfg);
  const auto& o = run.ode;
  std::vector<std::vector<double>> cols(8);
  for (std::size_t i = 0; i < o.t.size(); ++i) {
    const auto& p = o.y[i];
    auto n = counterexample_measurements(p, mu);
    double vals[8] = {o.t[i], p[0], p[1], p[2], n[0], n[1], o.field_norm[i],
                      (o.event_time && i + 1 == o.t.size()) ? 1.0 : 0.0};
    for (int j = 0; j < 8; ++j) cols[j].push_back(vals[j]);
  }
  write_csv(out + "/trajectory.csv", {"t", "x", "y1", "y2", "n1", "n2", "field_norm", "event"}, cols);
  summary << "example = counterexample\nbeta = " << rs.beta << "\n";
  if (o.event_time) {
    summary << "escape_time = " << *o.event_time << "\n";
  } else {
    summary << "escape_time = none (stayed in n >= 0 up to t = " << o.t_final << ")\n";
  }
  summary << "reason = " << to_string(o.reason) << "\nsteps = " << o.steps << "\n";
  return o.reason == Termination::max_steps ? 2 : 0;
}

int cmd_solve(const CommonOpts& co) {
  Config c = load(co);
  RunSpec rs = resolve_run(c);
  fs::create_directories(co.out);
  const std::string out = co.out;
  write_text(out + "/manifest.cfg", serialize_config(resolved_config(c, rs)));

  std::ostringstream summary;
  summary << std::setprecision(10);
  if (rs.is_counterexample) {
    int code = solve_counterexample(rs, out, summary);
    write_text(out + "/summary.txt", summary.str());
    std::cout << summary.str();
    return code;
  }

  const auto& P = rs.ex.prob;
  Trajectory tr;
  std::vector<double> messages;
  if (rs.distributed) {
    const Network& net = *rs.ex.net;
    auto sim = simulate(net, agents_from_central(net, rs.ex.init), P.alpha, P.mu, rs.cfg);
    tr.times = sim.times;
    tr.kkt = sim.kkt;
    tr.field_norm = sim.field_norm;
    tr.reason = sim.reason;
    tr.fevals = sim.fevals;
    for (const auto& v : sim.states) tr.states.push_back(central_from_agents(net, unpack_agents(net, v)).pack());
    tr.final_state = central_from_agents(net, sim.final_state);
    for (long m : sim.messages_total) messages.push_back(static_cast<double>(m));
  } else {
    tr = integrate(P, rs.ex.init, rs.cfg);
  }

  ReferenceSolution ref;
  if (rs.ex.ref) {
    ref = *rs.ex.ref;
    ref.optimal_value = P.tracked_objective(ref.x, ref.z);
  } else {
    ref = make_reference(P, tr.final_state, "self-reference (end of run)", P.E.num_blocks() == 0);
    ref.optimal_value = P.tracked_objective(ref.x, ref.z);
  }

  bool v2 = rs.v2 == V2Mode::on || (rs.v2 == V2Mode::automatic && P.state_dim() <= 200);
  double d_star = kNaN;
  if (v2) {
    try {
      d_star = dual_function(P, ref.y, ref.lam0).d;
    } catch (const std::exception& e) {
      std::cerr << "warning: V2 disabled: " << e.what() << "\n";
      v2 = false;
    }
  }

  const std::size_t N = tr.times.size();
  std::vector<double> V1(N), V2(N, kNaN), pg(N, kNaN), dg(N, kNaN), pd(N), dd(N), rfe(N), rse(N);
  const double fscale = std::max(std::abs(ref.optimal_value), 1.0);
  const double xscale = std::max(std::sqrt(ref.x.squaredNorm() + ref.z.squaredNorm()), 1.0);
  for (std::size_t i = 0; i < N; ++i) {
    auto s = PrimalDualState::unpack(P, tr.states[i]);
    V1[i] = lyapunov_v1(ref, P, s);
    if (v2) {
      auto e = lyapunov_v2(P, s, d_star);
      V2[i] = e.v2;
      pg[i] = e.primal_gap;
      dg[i] = e.dual_gap;
    }
    auto d = distance_to_solution(ref, s);
    pd[i] = d.primal;
    dd[i] = d.dual;
    rse[i] = d.primal / xscale;
    rfe[i] = std::abs(P.tracked_objective(s.x, s.z) - ref.optimal_value) / fscale;
  }
  std::vector<std::string> header = {"t",           "kkt_residual", "field_norm", "V1",        "V2",
                                     "primal_gap",  "dual_gap",     "primal_dist", "dual_dist", "rel_function_error"};
  std::vector<std::vector<double>> cols = {tr.times, tr.kkt, tr.field_norm, V1, V2, pg, dg, pd, dd, rfe};
  if (rs.distributed) {
    header.push_back("messages_total");
    cols.push_back(messages);
  }
  write_csv(out + "/trajectory.csv", header, cols);
  if (rs.states) write_state_sidecar(out + "/states.bin", tr);
  if (rs.svg && N > 0) {
    write_log_svg(out + "/state_error.svg", "relative state error", tr.times, rse);
    write_log_svg(out + "/function_error.svg", "relative function error", tr.times, rfe);
  }

  summary << "example = " << rs.ex.name << (rs.distributed ? " (distributed)" : "") << "\n"
          << "reference = " << ref.provenance << "\n"
          << "reason = " << to_string(tr.reason) << "\n"
          << "t_final = " << (N ? tr.times.back() : 0.0) << "\n"
          << "steps = " << tr.steps << "\nfevals = " << tr.fevals << "\n"
          << "final_kkt = " << (N ? tr.kkt.back() : kNaN) << "\n"
          << "final_rel_function_error = " << (N ? rfe.back() : kNaN) << "\n"
          << "final_rel_state_error = " << (N ? rse.back() : kNaN) << "\n";
  if (rs.distributed && !messages.empty()) summary << "messages_total = " << static_cast<long>(messages.back()) << "\n";
  try {
    std::vector<double> sq(N);
    // primal only: the multiplier set can be larger than the reference's affine set
    for (std::size_t i = 0; i < N; ++i) sq[i] = pd[i] * pd[i];
    auto f = fit_log_linear(tr.times, sq, 0.5);
    summary << "fitted_rate = " << f.rate << "  (primal squared distance, r2 = " << f.r2 << ")\n";
  } catch (const std::exception&) {
    summary << "fitted_rate = n/a\n";
  }
  write_text(out + "/summary.txt", summary.str());
  std::cout << summary.str();
  if (tr.reason == Termination::max_steps) {
    std::cerr << "error: max_steps reached before t_end or stop_kkt\n";
    return 2;
  }
  return 0;
}

// -------------------------------------------------------------- certify

int cmd_certify(const CommonOpts& co) {
  RunSpec rs = resolve_run(load(co));
  const auto& P = rs.ex.prob;
  bool a4 = check_assumption4(P).holds;
  bool a5 = check_assumption5(P);
  std::cout << "problem = " << rs.ex.name << "  (mu = " << P.mu << ", alpha = " << P.alpha << ")\n";
  std::cout << "Assumption 4: " << (a4 ? "PASS" : "FAIL") << "\n";
  std::cout << "Assumption 5: " << (a5 ? "PASS" : "FAIL") << "\n";
  if (!a4 || !a5) {
    std::cout << "no certificate: the flow need not converge exponentially\n";
    return 2;
  }
  if (!P.lipschitz_f()) {
    std::cerr << "error: lipschitz is undeclared for a smooth block; L_xz cannot be derived\n";
    return 1;
  }
  try {
    auto cert = ges_certificate(P);
    std::cout << cert.report();
  } catch (const CertificateError& e) {
    std::cout << "no certificate: " << e.what() << "\n";
    return 2;
  }
  for (const auto& w : verify_declared_constants(P).warnings) std::cout << "warning: " << w << "\n";
  return 0;
}

// ---------------------------------------------------------------- bench

struct BenchRow {
  std::string name;
  std::vector<std::string> fields;
  bool pass = false;
};

void write_rows(const std::string& path, const std::string& header, const std::vector<BenchRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << header << "\n" << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.name;
    for (const auto& f : r.fields) os << "," << f;
    os << "\n";
  }
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(8) << v;
  return os.str();
}

std::vector<BenchRow> bench_examples() {
  std::vector<BenchRow> rows;
  for (auto k : {ExampleKind::lasso_network, ExampleKind::pcp, ExampleKind::covariance_completion,
                 ExampleKind::sparse_group_lasso}) {
    BenchRow r;
    r.name = to_string(k);
    try {
      ExampleSpec spec;
      spec.which = k;
      auto ex = make_example(spec);
      IntegratorConfig cfg;
      cfg.t_end = ex.t_end;
      cfg.stop_kkt = 1e-9;
      auto rep = run_example(ex, cfg);
      if (rep.self_reference) {
        r.pass = rep.monotone_tail && rep.final_kkt < 1e-6 && rep.fit.r2 > 0.95;
      } else {
        r.pass = rep.final_rel_error < 1e-6;
      }
      r.fields = {num(rep.fit.rate), num(rep.fit.r2), num(rep.final_kkt), num(rep.final_rel_error),
                  num(rep.wall_seconds), r.pass ? "pass" : "fail"};
    } catch (const std::exception& e) {
      r.fields = {"nan", "nan", "nan", "nan", "0", "error"};
      std::cerr << r.name << ": " << e.what() << "\n";
    }
    std::cout << r.name << ": " << r.fields.back() << "\n";
    rows.push_back(r);
  }
  return rows;
}

// Quick property checks. Each row counts violations over random cases.
std::vector<BenchRow> bench_invariants() {
  std::vector<BenchRow> rows;
  auto add = [&](const std::string& name, int cases, int bad) {
    BenchRow r{name, {std::to_string(cases), std::to_string(bad), bad == 0 ? "pass" : "fail"}, bad == 0};
    std::cout << name << ": " << r.fields.back() << " (" << bad << "/" << cases << " violations)\n";
    rows.push_back(r);
  };

  // prox: firm nonexpansiveness and the Moreau gradient identity
  {
    Rng rng(11);
    GroupPartition part;
    part.groups = {{0, 1, 2}, {3, 4}, {5}};
    part.weights = {0.7, 1.3, 0.4};
    part.eta = 0.3;
    MatrixXd mask = MatrixXd::Ones(3, 4);
    mask(0, 1) = mask(2, 3) = 0.0;
    std::vector<ProximableFunction> gs = {make_l1(6, 0.8),
                                          make_group_lasso(6, part),
                                          make_nuclear(4, 3, 1.2),
                                          make_indicator(Orthant::nonneg, 5),
                                          make_indicator(Orthant::nonpos, 5),
                                          make_frobenius_ball_masked(1.5, mask)};
    int cases = 0, bad = 0;
    for (const auto& g : gs) {
      for (int k = 0; k < 200; ++k) {
        double mu = 0.05 + 3.0 * rng.uniform();
        VectorXd u = 3.0 * rng.normal_vector(g.dim()), v = 3.0 * rng.normal_vector(g.dim());
        VectorXd pu = prox(g, mu, u), pv = prox(g, mu, v);
        ++cases;
        if ((pu - pv).squaredNorm() > (pu - pv).dot(u - v) + 1e-10 * std::max(1.0, (u - v).squaredNorm())) ++bad;
        VectorXd gm = moreau_grad(g, mu, u);
        VectorXd fd(g.dim());
        double h = 1e-6 * std::max(1.0, u.norm());
        for (Eigen::Index i = 0; i < g.dim(); ++i) {
          VectorXd a = u, b = u;
          a[i] += h;
          b[i] -= h;
          fd[i] = (moreau_value(g, mu, a) - moreau_value(g, mu, b)) / (2.0 * h);
        }
        ++cases;
        if ((fd - gm).norm() > 1e-5 * std::max(gm.norm(), 1e-3 * std::max(1.0, u.norm()))) ++bad;
      }
    }
    add("prox_properties", cases, bad);
  }

  // V1 never increases faster than the Lyapunov bound
  {
    Rng rng(12);
    int cases = 0, bad = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      auto ri = random_convex_instance(seed, {});
      for (int k = 0; k < 100; ++k) {
        PrimalDualState s = PrimalDualState::zeros(ri.prob);
        s.x = rng.normal_vector(ri.prob.m());
        s.z = rng.normal_vector(ri.prob.n());
        s.y = rng.normal_vector(ri.prob.n());
        s.lam = rng.normal_vector(ri.prob.p());
        double rate = lyapunov_v1_rate(ri.ref, ri.prob, s), bound = v1_decay_bound(ri.ref, ri.prob, s);
        ++cases;
        if (rate > bound + 1e-8 * std::max(1.0, std::abs(bound))) ++bad;
      }
    }
    add("lyapunov_bound", cases, bad);
  }

  // decentralized field agrees with the centralized one
  {
    Rng rng(13);
    int cases = 0, bad = 0;
    auto inst = gen_lasso_network(4, 6, 3, 5);
    auto P = assemble_consensus(inst.net, 0.8, 1.4);
    for (int k = 0; k < 50; ++k) {
      auto s = PrimalDualState::unpack(P, rng.normal_vector(P.state_dim()));
      VectorXd expect = pack_agents(agents_from_central(inst.net, vector_field(P, s)));
      VectorXd got = pack_agents(decentralized_field(inst.net, agents_from_central(inst.net, s), P.alpha, P.mu));
      ++cases;
      if ((got - expect).norm() > 1e-12 * std::max(1.0, expect.norm())) ++bad;
    }
    add("decentralized_field", cases, bad);
  }

  // dual gradient is mu-Lipschitz
  {
    Rng rng(14);
    int cases = 0, bad = 0;
    auto ri = random_convex_instance(3, {});
    const auto& P = ri.prob;
    for (int k = 0; k < 30; ++k) {
      VectorXd y1 = rng.normal_vector(P.n()), l1 = rng.normal_vector(P.p());
      VectorXd y2 = rng.normal_vector(P.n()), l2 = rng.normal_vector(P.p());
      auto a = dual_function(P, y1, l1), b = dual_function(P, y2, l2);
      double gd = std::sqrt((a.grad_y - b.grad_y).squaredNorm() + (a.grad_lam - b.grad_lam).squaredNorm());
      double wd = std::sqrt((y1 - y2).squaredNorm() + (l1 - l2).squaredNorm());
      ++cases;
      if (gd > (1.0 + 1e-6) * P.mu * wd) ++bad;
    }
    add("dual_lipschitz", cases, bad);
  }
  return rows;
}

int cmd_bench(const std::string& suite, const std::string& out) {
  std::vector<BenchRow> rows;
  std::string header;
  if (suite == "examples") {
    rows = bench_examples();
    header = "example,rate,r2,final_kkt,final_rel_error,wall_seconds,status";
  } else if (suite == "invariants") {
    rows = bench_invariants();
    header = "suite,cases,violations,status";
  } else {
    std::cerr << "error: unknown bench suite '" << suite << "' (expected examples or invariants)\n";
    return 1;
  }
  fs::create_directories(out);
  write_rows(out + "/bench_" + suite + ".csv", header, rows);
  std::size_t passed = 0;
  for (const auto& r : rows) passed += r.pass;
  std::cout << suite << ": " << passed << "/" << rows.size() << " passed\n";
  return passed == 0 ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"palflow: proximal augmented Lagrangian flows"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  CommonOpts solve_o, cert_o;
  auto* solve = app.add_subcommand("solve", "integrate the flow and write trajectory.csv, manifest.cfg, summary.txt");
  add_common(solve, solve_o);
  solve->add_option("--out", solve_o.out, "output directory")->capture_default_str();
  solve->add_option("--method", solve_o.method, "euler, rk4 or rk45");
  solve->add_option("--t-end", solve_o.t_end, "final time");
  solve->add_option("--stop-kkt", solve_o.stop_kkt, "stop when the KKT residual drops below this");
  solve->add_flag("--svg", solve_o.svg, "also write error plots as SVG");

  auto* certify = app.add_subcommand("certify", "check the assumptions and print the exponential-rate certificate");
  add_common(certify, cert_o);

  std::string suite = "examples", bench_out = "palflow_out";
  auto* bench = app.add_subcommand("bench", "run a benchmark suite (examples or invariants)");
  bench->add_option("--suite", suite, "examples or invariants")->capture_default_str();
  bench->add_option("--out", bench_out, "output directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (solve->parsed()) return cmd_solve(solve_o);
    if (certify->parsed()) return cmd_certify(cert_o);
    if (bench->parsed()) return cmd_bench(suite, bench_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const IntegrationError& e) {
    std::cerr << "integration failed: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
