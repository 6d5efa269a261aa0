#pragma once

// Lyapunov functions, the dual function, distances to the solution set and
// log-linear rate fits.

#include "palflow/flow.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace palflow {

struct ReferenceSolution {
  VectorXd x, z, y, lam0;
  MatrixXd null_basis;  // orthonormal basis of N([E F]^T); lam* = lam0 + null_basis * c
  double optimal_value = kNaN;
  double d_star = kNaN;
  std::string provenance;

  PrimalDualState state() const { return {x, z, y, lam0}; }
};

/// Reference built from a (numerically) optimal state. Pass
/// trivial_null = true when N([E F]^T) = {0} is known, which skips a dense SVD.
inline ReferenceSolution make_reference(const SaddleProblem& prob, const PrimalDualState& s, std::string provenance,
                                        bool trivial_null = false) {
  s.check(prob);
  ReferenceSolution ref;
  ref.x = s.x;
  ref.z = s.z;
  ref.y = s.y;
  // Store the component of lam in R([E F]) so that lam0 is canonical.
  ref.null_basis = trivial_null ? MatrixXd(prob.p(), 0) : left_null_basis(prob.EF_dense());
  ref.lam0 = s.lam - ref.null_basis * (ref.null_basis.transpose() * s.lam);
  // At a solution z = prox(z + mu y); the prox point is feasible for
  // indicator blocks even when s.z is only approximately optimal.
  ref.optimal_value = prob.objective(s.x, prob.prox_g(s.z + prob.mu * s.y));
  ref.d_star = ref.optimal_value;
  ref.provenance = std::move(provenance);
  return ref;
}

/// Runs the flow itself to a tight KKT residual. Used only where no
/// independent oracle exists.
inline ReferenceSolution reference_from_flow(const SaddleProblem& prob, const PrimalDualState& s0, double kkt_tol = 1e-10,
                                             double t_end = 1e5, bool trivial_null = false) {
  IntegratorConfig cfg;
  cfg.stop_kkt = kkt_tol;
  cfg.t_end = t_end;
  cfg.keep_states = false;
  auto tr = integrate(prob, s0, cfg);
  if (tr.reason != Termination::stop_kkt) throw std::runtime_error("reference_from_flow: KKT tolerance not reached");
  return make_reference(prob, tr.final_state, "flow self-reference (kkt < " + std::to_string(kkt_tol) + ")",
                        trivial_null);
}

// ------------------------------------------------------------------- V1

inline double lyapunov_v1(const ReferenceSolution& ref, const SaddleProblem& prob, const PrimalDualState& s) {
  s.check(prob);
  return 0.5 * (prob.alpha * (s.x - ref.x).squaredNorm() + prob.alpha * (s.z - ref.z).squaredNorm() +
                (s.y - ref.y).squaredNorm() + (s.lam - ref.lam0).squaredNorm());
}

/// dV1/dt = <grad V1, field> evaluated exactly at s.
inline double lyapunov_v1_rate(const ReferenceSolution& ref, const SaddleProblem& prob, const PrimalDualState& s) {
  auto d = vector_field(prob, s);
  return prob.alpha * (s.x - ref.x).dot(d.x) + prob.alpha * (s.z - ref.z).dot(d.z) + (s.y - ref.y).dot(d.y) +
         (s.lam - ref.lam0).dot(d.lam);
}

/// -alpha / max(L_f, mu) * (|grad f(x) - grad f(x*)|^2 + |gy|^2 + |glam|^2).
inline double v1_decay_bound(const ReferenceSolution& ref, const SaddleProblem& prob, const PrimalDualState& s) {
  auto lf = prob.lipschitz_f();
  if (!lf) throw std::invalid_argument("v1_decay_bound: L_f must be declared");
  auto g = pal_gradient(prob, s);
  double df = (prob.f_grad(s.x) - prob.f_grad(ref.x)).squaredNorm();
  return -prob.alpha / std::max(*lf, prob.mu) * (df + g.gy.squaredNorm() + g.glam.squaredNorm());
}

// ---------------------------------------------------------- dual function

struct DualEval {
  double d = kNaN;
  VectorXd xbar, zbar;
  VectorXd grad_y, grad_lam;
  long iterations = 0;
  double inner_residual = kNaN;
};

struct DualOptions {
  double inner_tol = 1e-10;
  long max_iter = 100000;
  std::optional<double> lipschitz;  // default: L_f + (1 + smax^2([E F]))/mu
  std::optional<VectorXd> x_start, z_start;
};

class DualError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double lagrangian_xz_lipschitz(const SaddleProblem& prob) {
  auto lf = prob.lipschitz_f();
  if (!lf) throw DualError("dual_function: L_f must be declared for the inner step size");
  auto s = singular_extremes(prob.EF_dense());
  return *lf + (1.0 + s.sigma_max * s.sigma_max) / prob.mu;
}

/// d(y, lam) = min over (x, z) of L(x, z; y, lam), by accelerated gradient
/// with step 1/L and function-value restart.
inline DualEval dual_function(const SaddleProblem& prob, const VectorXd& y, const VectorXd& lam,
                              const DualOptions& opt = {}) {
  if (y.size() != prob.n() || lam.size() != prob.p()) throw DimensionError("dual_function: dual shape mismatch");
  if (!(opt.inner_tol > 0.0)) throw std::invalid_argument("dual_function: inner_tol must be > 0");
  const double L = opt.lipschitz ? *opt.lipschitz : lagrangian_xz_lipschitz(prob);
  const double step = 1.0 / L;
  const Eigen::Index m = prob.m(), n = prob.n();

  PrimalDualState s{opt.x_start ? *opt.x_start : VectorXd::Zero(m), opt.z_start ? *opt.z_start : VectorXd::Zero(n), y,
                    lam};
  auto value_grad = [&](const PrimalDualState& st, VectorXd& grad) {
    auto parts = pal_parts(prob, st);
    auto g = pal_gradient_from(prob, st, parts);
    grad.resize(m + n);
    grad << g.gx, g.gz;
    const double mu = prob.mu;
    return prob.f_value(st.x) + prob.g_value(parts.w) + (parts.w - parts.u).squaredNorm() / (2.0 * mu) +
           (parts.r + mu * st.lam).squaredNorm() / (2.0 * mu) - 0.5 * mu * st.y.squaredNorm() -
           0.5 * mu * st.lam.squaredNorm();
  };

  VectorXd v(m + n);
  v << s.x, s.z;
  VectorXd w = v, grad;
  auto at = [&](const VectorXd& vv) {
    PrimalDualState st = s;
    st.x = vv.head(m);
    st.z = vv.tail(n);
    return st;
  };
  double fv = value_grad(at(v), grad);
  double tk = 1.0;
  bool restarted = false;
  DualEval out;
  for (long it = 0;; ++it) {
    if (it >= opt.max_iter) throw DualError("inner solve failed: iteration cap reached");
    VectorXd gw;
    value_grad(at(w), gw);
    VectorXd v_new = w - step * gw;
    VectorXd g_new;
    double f_new = value_grad(at(v_new), g_new);
    if (!std::isfinite(f_new)) throw DualError("dual_function: non-finite Lagrangian value");
    if (f_new < -1e12) throw DualError("dual unbounded");
    double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
    if (f_new > fv && !restarted) {
      // restart from the last iterate with a plain gradient step
      tk = 1.0;
      w = v;
      restarted = true;
      continue;
    }
    // A plain gradient step that still increases f only does so by
    // roundoff; accept it so the loop cannot stall.
    restarted = false;
    VectorXd w_new = v_new + ((tk - 1.0) / t_new) * (v_new - v);
    v = std::move(v_new);
    fv = f_new;
    grad = std::move(g_new);
    w = std::move(w_new);
    tk = t_new;
    out.iterations = it + 1;
    double gn = grad.norm();
    if (gn <= opt.inner_tol) {
      out.inner_residual = gn;
      break;
    }
  }
  auto st = at(v);
  out.d = fv;
  out.xbar = st.x;
  out.zbar = st.z;
  out.grad_y = st.z - prob.prox_g(st.z + prob.mu * y);
  out.grad_lam = prob.constraint_residual(st.x, st.z);
  return out;
}

struct V2Eval {
  double v2 = kNaN;
  double primal_gap = kNaN;  // L(x,z;y,lam) - d(y,lam)
  double dual_gap = kNaN;    // d* - d(y,lam)
};

inline V2Eval lyapunov_v2(const SaddleProblem& prob, const PrimalDualState& s, double d_star,
                          const DualOptions& opt = {}) {
  DualOptions o = opt;
  if (!o.x_start) o.x_start = s.x;
  if (!o.z_start) o.z_start = s.z;
  auto de = dual_function(prob, s.y, s.lam, o);
  V2Eval r;
  r.primal_gap = pal_value(prob, s) - de.d;
  r.dual_gap = d_star - de.d;
  r.v2 = r.primal_gap + r.dual_gap;
  return r;
}

// ---------------------------------------------------------------- distances

struct Distance {
  double primal = 0.0;
  double dual = 0.0;

  double squared() const { return primal * primal + dual * dual; }
};

/// Distance to {(x*, z*, y*, lam0 + v) : v in N([E F]^T)}.
inline Distance distance_to_solution(const ReferenceSolution& ref, const PrimalDualState& s) {
  Distance d;
  d.primal = std::sqrt((s.x - ref.x).squaredNorm() + (s.z - ref.z).squaredNorm());
  VectorXd dl = s.lam - ref.lam0;
  if (ref.null_basis.cols() > 0) dl -= ref.null_basis * (ref.null_basis.transpose() * dl);
  d.dual = std::sqrt((s.y - ref.y).squaredNorm() + dl.squaredNorm());
  return d;
}

// ------------------------------------------------------------- rate fitting

struct LineFit {
  double slope = kNaN;
  double intercept = kNaN;
  double r2 = kNaN;
  std::size_t points = 0;
};

inline LineFit least_squares_line(const std::vector<double>& t, const std::vector<double>& v) {
  if (t.size() != v.size()) throw std::invalid_argument("least_squares_line: size mismatch");
  LineFit f;
  f.points = t.size();
  if (t.size() < 2) throw std::invalid_argument("least_squares_line: need at least two points");
  double n = static_cast<double>(t.size());
  double mt = 0.0, mv = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    mt += t[i];
    mv += v[i];
  }
  mt /= n;
  mv /= n;
  double stt = 0.0, stv = 0.0, svv = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    stt += (t[i] - mt) * (t[i] - mt);
    stv += (t[i] - mt) * (v[i] - mv);
    svv += (v[i] - mv) * (v[i] - mv);
  }
  f.slope = stt > 0.0 ? stv / stt : 0.0;
  f.intercept = mv - f.slope * mt;
  double sse = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    double e = v[i] - (f.intercept + f.slope * t[i]);
    sse += e * e;
  }
  f.r2 = svv > 0.0 ? 1.0 - sse / svv : 1.0;
  return f;
}

struct RateFit {
  double rate = kNaN;
  double r2 = kNaN;
  double M_emp = kNaN;
  std::size_t points = 0;
};

/// Fits log(values) ~ a - rate * t over the trailing `window` fraction of
/// the time span. Values at or below 100 eps are dropped.
inline RateFit fit_log_linear(const std::vector<double>& times, const std::vector<double>& values, double window) {
  if (times.size() != values.size()) throw std::invalid_argument("fit_log_linear: size mismatch");
  if (times.empty()) throw std::invalid_argument("fit_log_linear: fewer than 5 usable points");
  if (!(window > 0.0 && window <= 1.0)) throw std::invalid_argument("fit_log_linear: window must be in (0, 1]");
  const double floor = 100.0 * std::numeric_limits<double>::epsilon();
  double t0 = times.front(), t1 = times.back();
  double cut = t1 - window * (t1 - t0);
  std::vector<double> tt, lv;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] + 1e-12 * std::max(1.0, std::abs(t1)) < cut) continue;
    if (!(values[i] > floor) || !std::isfinite(values[i])) continue;
    tt.push_back(times[i]);
    lv.push_back(std::log(values[i]));
  }
  if (tt.size() < 5) throw std::invalid_argument("fit_log_linear: fewer than 5 usable points");
  auto lf = least_squares_line(tt, lv);
  RateFit r;
  r.rate = -lf.slope;
  r.r2 = lf.r2;
  r.points = tt.size();
  double v0 = values.front();
  r.M_emp = v0 > 0.0 ? std::exp(lf.intercept) / v0 : kNaN;
  return r;
}

/// Squared distance to the solution set along a stored trajectory.
inline std::vector<double> squared_distances(const SaddleProblem& prob, const ReferenceSolution& ref,
                                             const Trajectory& tr) {
  std::vector<double> out;
  out.reserve(tr.states.size());
  for (const auto& v : tr.states) out.push_back(distance_to_solution(ref, PrimalDualState::unpack(prob, v)).squared());
  return out;
}

inline RateFit fit_exponential_rate(const SaddleProblem& prob, const Trajectory& tr, const ReferenceSolution& ref,
                                    double window) {
  if (tr.states.size() != tr.times.size()) throw std::invalid_argument("fit_exponential_rate: trajectory has no states");
  return fit_log_linear(tr.times, squared_distances(prob, ref, tr), window);
}

}  // namespace palflow
