#pragma once

// Proximal augmented Lagrangian
//   L(x,z;y,lam) = f(x) + M_{mu g}(z + mu y) + (1/2mu)|Ex + Fz - q + mu lam|^2
//                  - (mu/2)|y|^2 - (mu/2)|lam|^2
// and its primal-descent dual-ascent gradient flow, plus ODE integrators.

#include "palflow/parallel.hpp"
#include "palflow/problem.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace palflow {

/// Quantities shared by the value and the four partial gradients.
struct PalParts {
  VectorXd r;  // Ex + Fz - q
  VectorXd u;  // z + mu y
  VectorXd w;  // prox_{mu g}(u)
};

inline PalParts pal_parts(const SaddleProblem& prob, const PrimalDualState& s) {
  s.check(prob);
  PalParts p;
  p.r = prob.constraint_residual(s.x, s.z);
  p.u = s.z + prob.mu * s.y;
  p.w = prob.prox_g(p.u);
  return p;
}

inline double pal_value(const SaddleProblem& prob, const PrimalDualState& s) {
  const double mu = prob.mu;
  auto p = pal_parts(prob, s);
  double moreau = prob.g_value(p.w) + (p.w - p.u).squaredNorm() / (2.0 * mu);
  return prob.f_value(s.x) + moreau + (p.r + mu * s.lam).squaredNorm() / (2.0 * mu) -
         0.5 * mu * s.y.squaredNorm() - 0.5 * mu * s.lam.squaredNorm();
}

struct PalGradient {
  VectorXd gx, gz, gy, glam;
};

inline PalGradient pal_gradient_from(const SaddleProblem& prob, const PrimalDualState& s, const PalParts& p) {
  const double mu = prob.mu;
  VectorXd dual = s.lam + p.r / mu;
  PalGradient g;
  g.gx = prob.f_grad(s.x) + prob.E.adjoint(dual);
  g.gy = s.z - p.w;
  g.gz = s.y + g.gy / mu + prob.F.adjoint(dual);
  g.glam = p.r;
  return g;
}

/// The four partial derivatives of L. They simplify to
/// gy = z - prox(z + mu y) and glam = Ex + Fz - q.
inline PalGradient pal_gradient(const SaddleProblem& prob, const PrimalDualState& s) {
  return pal_gradient_from(prob, s, pal_parts(prob, s));
}

inline PrimalDualState field_from_gradient(const SaddleProblem& prob, const PalGradient& g) {
  return {-g.gx, -g.gz, prob.alpha * g.gy, prob.alpha * g.glam};
}

/// (xdot, zdot, ydot, lamdot) = (-gx, -gz, alpha gy, alpha glam).
inline PrimalDualState vector_field(const SaddleProblem& prob, const PrimalDualState& s) {
  return field_from_gradient(prob, pal_gradient(prob, s));
}

/// Same field evaluated block by block: lamdot first, then each (ydot_j,
/// zdot_j), then each xdot_i, reusing lamdot and ydot_j.
inline PrimalDualState blockwise_field(const SaddleProblem& prob, const PrimalDualState& s) {
  s.check(prob);
  const double mu = prob.mu;
  const double alpha = prob.alpha;
  const double am = alpha * mu;
  PrimalDualState d;
  d.lam = alpha * prob.constraint_residual(s.x, s.z);
  VectorXd lam_mix = s.lam + d.lam / am;

  d.y.resize(prob.n());
  d.z.resize(prob.n());
  auto zoff = prob.z_offsets();
  parallel_for(prob.g.blocks.size(), [&](std::size_t j) {
    const auto& gj = prob.g.blocks[j];
    auto o = zoff[j];
    auto nj = gj.dim();
    VectorXd zj = s.z.segment(o, nj);
    VectorXd yj = s.y.segment(o, nj);
    VectorXd ydj = alpha * (zj - prox(gj, mu, zj + mu * yj));
    d.y.segment(o, nj) = ydj;
    d.z.segment(o, nj) = -(yj + ydj / am) - prob.F.block(j).adjoint(lam_mix);
  });

  d.x.resize(prob.m());
  auto xoff = prob.x_offsets();
  parallel_for(prob.smooth.size(), [&](std::size_t i) {
    const auto& fi = prob.smooth[i];
    auto o = xoff[i];
    d.x.segment(o, fi.dim()) = -fi.gradient(s.x.segment(o, fi.dim())) - prob.E.block(i).adjoint(lam_mix);
  });
  return d;
}

/// Field evaluator that remembers the last state's residual and prox output.
class FlowField {
 public:
  explicit FlowField(const SaddleProblem& prob) : prob_(&prob) {}

  const SaddleProblem& problem() const { return *prob_; }

  const PalParts& parts(const PrimalDualState& s) {
    VectorXd key = s.pack();
    if (!has_ || key.size() != key_.size() || key != key_) {
      parts_ = pal_parts(*prob_, s);
      key_ = std::move(key);
      has_ = true;
      ++misses_;
    } else {
      ++hits_;
    }
    return parts_;
  }

  PalGradient gradient(const PrimalDualState& s) { return pal_gradient_from(*prob_, s, parts(s)); }

  PrimalDualState field(const PrimalDualState& s) { return field_from_gradient(*prob_, gradient(s)); }

  VectorXd packed_field(const VectorXd& v) {
    return field(PrimalDualState::unpack(*prob_, v)).pack();
  }

  /// KKT residual reusing the cached residual and prox output.
  double kkt(const PrimalDualState& s) {
    const auto& p = parts(s);
    double a = (prob_->f_grad(s.x) + prob_->E.adjoint(s.lam)).squaredNorm();
    double b = (s.y + prob_->F.adjoint(s.lam)).squaredNorm();
    double c = (s.z - p.w).squaredNorm();
    double d = p.r.squaredNorm();
    return std::sqrt(a + b + c + d);
  }

  long hits() const { return hits_; }
  long misses() const { return misses_; }

 private:
  const SaddleProblem* prob_;
  VectorXd key_;
  PalParts parts_;
  bool has_ = false;
  long hits_ = 0;
  long misses_ = 0;
};

// ---------------------------------------------------------------- integrators

enum class Method { euler, rk4, rk45 };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::euler: return "euler";
    case Method::rk4: return "rk4";
    case Method::rk45: return "rk45";
  }
  return "?";
}

inline std::optional<Method> parse_method(const std::string& s) {
  if (s == "euler") return Method::euler;
  if (s == "rk4") return Method::rk4;
  if (s == "rk45") return Method::rk45;
  return std::nullopt;
}

enum class Termination { t_end, stop_kkt, max_steps, event };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::t_end: return "t_end";
    case Termination::stop_kkt: return "stop_kkt";
    case Termination::max_steps: return "max_steps";
    case Termination::event: return "event";
  }
  return "?";
}

/// Event function e(t, y); integration stops where it first goes from >= 0
/// to < 0.
using EventFn = std::function<double(double, const VectorXd&)>;

struct IntegratorConfig {
  Method method = Method::rk45;
  double h = 1e-2;  // fixed step for euler and rk4
  double rel_tol = 1e-9;
  double abs_tol = 1e-12;
  double t0 = 0.0;
  double t_end = 100.0;
  double stop_kkt = 1e-9;  // <= 0 disables
  long max_steps = 5'000'000;
  int record_stride = 1;  // record every n-th accepted step
  double record_dt = 0.0; // if > 0, record only when t advanced by this much
  bool keep_states = true;
  EventFn event;
  double event_tol = 1e-9;

  void validate() const {
    if (!(rel_tol > 0.0) || !(abs_tol > 0.0)) throw std::invalid_argument("IntegratorConfig: tolerances must be > 0");
    if (method != Method::rk45 && !(h > 0.0)) throw std::invalid_argument("IntegratorConfig: h must be > 0");
    if (!(t_end > t0)) throw std::invalid_argument("IntegratorConfig: t_end must exceed t0");
    if (record_stride < 1) throw std::invalid_argument("IntegratorConfig: record_stride must be >= 1");
    if (max_steps < 1) throw std::invalid_argument("IntegratorConfig: max_steps must be >= 1");
  }
};

class IntegrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OdeResult {
  std::vector<double> t;
  std::vector<VectorXd> y;  // empty when keep_states is false
  std::vector<double> field_norm;
  std::vector<long> fevals_at;  // cumulative right-hand-side evaluations per sample
  VectorXd y_final;
  double t_final = 0.0;
  Termination reason = Termination::t_end;
  std::optional<double> event_time;
  long steps = 0;
  long rejected = 0;
  long fevals = 0;
};

namespace detail {

// Dormand-Prince 5(4) coefficients.
struct DP {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                          a76 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                          e6 = 22.0 / 525, e7 = -1.0 / 40;
  // continuous extension
  static constexpr double d1 = -12715105075.0 / 11282082432, d3 = 87487479700.0 / 32700410799,
                          d4 = -10690763975.0 / 1880347072, d5 = 701980252875.0 / 199316789632,
                          d6 = -1453857185.0 / 822651844, d7 = 69997945.0 / 29380423;
};

struct DenseStep {
  double t0 = 0.0, h = 0.0;
  VectorXd r1, r2, r3, r4, r5;

  VectorXd at(double t) const {
    double th = (t - t0) / h;
    double th1 = 1.0 - th;
    return r1 + th * (r2 + th1 * (r3 + th * (r4 + th1 * r5)));
  }
};

inline double err_norm(const VectorXd& err, const VectorXd& y0, const VectorXd& y1, double atol, double rtol) {
  if (err.size() == 0) return 0.0;
  double s = 0.0;
  for (Eigen::Index i = 0; i < err.size(); ++i) {
    double sc = atol + rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    double e = err[i] / sc;
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(err.size()));
}

inline double scaled_norm(const VectorXd& v, const VectorXd& y, double atol, double rtol) {
  return err_norm(v, y, y, atol, rtol);
}

}  // namespace detail

/// Integrates y' = f(t, y). `stop(t, y)` is polled after every accepted step
/// and ends the run when it returns true.
template <class Rhs, class Stop>
OdeResult integrate_ode(Rhs&& f, const VectorXd& y_init, const IntegratorConfig& cfg, Stop&& stop) {
  cfg.validate();
  OdeResult res;
  double t = cfg.t0;
  VectorXd y = y_init;
  if (!y.allFinite()) throw IntegrationError("non-finite initial state");
  const double t_end = cfg.t_end;
  const double t_scale = std::max({1.0, std::abs(cfg.t0), std::abs(t_end)});

  auto eval = [&](double tt, const VectorXd& yy) {
    ++res.fevals;
    return VectorXd(f(tt, yy));
  };

  double last_rec_t = -kInf;
  long accepted_since_rec = 0;
  auto record = [&](double tt, const VectorXd& yy, const VectorXd& fy, bool force) {
    ++accepted_since_rec;
    bool due = force || (accepted_since_rec >= cfg.record_stride &&
                         (cfg.record_dt <= 0.0 || tt - last_rec_t >= cfg.record_dt * (1.0 - 1e-12)));
    if (!due) return;
    if (!res.t.empty() && tt <= res.t.back()) return;
    accepted_since_rec = 0;
    last_rec_t = tt;
    res.t.push_back(tt);
    res.field_norm.push_back(fy.norm());
    res.fevals_at.push_back(res.fevals);
    if (cfg.keep_states) res.y.push_back(yy);
  };

  double e_prev = cfg.event ? cfg.event(t, y) : 0.0;

  auto finish = [&](Termination why) {
    res.reason = why;
    res.y_final = y;
    res.t_final = t;
    return res;
  };

  VectorXd k1 = eval(t, y);
  record(t, y, k1, true);
  if (stop(t, y)) return finish(Termination::stop_kkt);

  if (cfg.method != Method::rk45) {
    const double h0 = cfg.h;
    while (res.steps < cfg.max_steps) {
      if (t >= t_end - 1e-14 * t_scale) return finish(Termination::t_end);
      double h = std::min(h0, t_end - t);
      VectorXd y_new;
      if (cfg.method == Method::euler) {
        y_new = y + h * k1;
      } else {
        VectorXd a = k1;
        VectorXd b = eval(t + 0.5 * h, y + 0.5 * h * a);
        VectorXd c = eval(t + 0.5 * h, y + 0.5 * h * b);
        VectorXd d = eval(t + h, y + h * c);
        y_new = y + (h / 6.0) * (a + 2.0 * b + 2.0 * c + d);
      }
      if (!y_new.allFinite()) {
        std::ostringstream os;
        os << "non-finite state at t=" << t + h;
        throw IntegrationError(os.str());
      }
      double t_new = (h == t_end - t) ? t_end : t + h;
      ++res.steps;
      if (cfg.event) {
        double e_new = cfg.event(t_new, y_new);
        if (e_prev >= 0.0 && e_new < 0.0) {
          // linear interpolation inside a fixed step
          double th = e_prev / (e_prev - e_new);
          t = t + th * h;
          y = y + th * (y_new - y);
          res.event_time = t;
          k1 = eval(t, y);
          record(t, y, k1, true);
          return finish(Termination::event);
        }
        e_prev = e_new;
      }
      t = t_new;
      y = std::move(y_new);
      k1 = eval(t, y);
      bool done = stop(t, y);
      bool last = done || t >= t_end - 1e-14 * t_scale;
      record(t, y, k1, last);
      if (done) return finish(Termination::stop_kkt);
    }
    return finish(Termination::max_steps);
  }

  // Dormand-Prince 4(5), FSAL, PI step control.
  using C = detail::DP;
  const double atol = cfg.abs_tol, rtol = cfg.rel_tol;
  const double safe = 0.9, beta = 0.04, expo1 = 0.2 - beta * 0.75;
  const double facc1 = 1.0 / 0.2, facc2 = 1.0 / 10.0;
  double facold = 1e-4;

  // Initial step size.
  double h;
  {
    double d0 = detail::scaled_norm(y, y, atol, rtol);
    double d1 = detail::scaled_norm(k1, y, atol, rtol);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, t_end - t);
    VectorXd y1 = y + h0 * k1;
    VectorXd f1 = eval(t + h0, y1);
    double d2 = f1.allFinite() ? detail::scaled_norm(f1 - k1, y, atol, rtol) / h0 : kInf;
    double dm = std::max(d1, d2);
    double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 0.2);
    h = std::min(100.0 * h0, h1);
    if (!std::isfinite(h) || h <= 0.0) h = 1e-6;
    h = std::min(h, t_end - t);
  }

  bool reject_prev = false;
  while (true) {
    if (res.steps >= cfg.max_steps) return finish(Termination::max_steps);
    if (t >= t_end - 1e-14 * t_scale) return finish(Termination::t_end);
    if (h < 1e-14 * t_scale) {
      std::ostringstream os;
      os << "stiff/failed: step size underflow (h=" << h << ") at t=" << t;
      throw IntegrationError(os.str());
    }
    bool last = false;
    if (t + h >= t_end) {
      h = t_end - t;
      last = true;
    }
    VectorXd k2 = eval(t + C::c2 * h, y + h * (C::a21 * k1));
    VectorXd k3 = eval(t + C::c3 * h, y + h * (C::a31 * k1 + C::a32 * k2));
    VectorXd k4 = eval(t + C::c4 * h, y + h * (C::a41 * k1 + C::a42 * k2 + C::a43 * k3));
    VectorXd k5 = eval(t + C::c5 * h, y + h * (C::a51 * k1 + C::a52 * k2 + C::a53 * k3 + C::a54 * k4));
    VectorXd k6 = eval(t + h, y + h * (C::a61 * k1 + C::a62 * k2 + C::a63 * k3 + C::a64 * k4 + C::a65 * k5));
    VectorXd y_new = y + h * (C::a71 * k1 + C::a73 * k3 + C::a74 * k4 + C::a75 * k5 + C::a76 * k6);
    VectorXd k7 = eval(t + h, y_new);
    ++res.steps;

    if (!y_new.allFinite() || !k7.allFinite()) {
      ++res.rejected;
      h *= 0.25;
      reject_prev = true;
      continue;
    }

    VectorXd err = h * (C::e1 * k1 + C::e3 * k3 + C::e4 * k4 + C::e5 * k5 + C::e6 * k6 + C::e7 * k7);
    double e = detail::err_norm(err, y, y_new, atol, rtol);
    double fac11 = std::pow(std::max(e, 1e-300), expo1);

    if (e > 1.0) {
      ++res.rejected;
      h /= std::min(facc1, fac11 / safe);
      reject_prev = true;
      continue;
    }

    double fac = fac11 / std::pow(facold, beta);
    fac = std::max(facc2, std::min(facc1, fac / safe));
    double h_new = h / fac;
    if (reject_prev) h_new = std::min(h_new, h);
    facold = std::max(e, 1e-4);
    reject_prev = false;

    double t_new = last ? t_end : t + h;

    if (cfg.event) {
      double e_new = cfg.event(t_new, y_new);
      if (e_prev >= 0.0 && e_new < 0.0) {
        detail::DenseStep ds;
        ds.t0 = t;
        ds.h = h;
        ds.r1 = y;
        VectorXd ydiff = y_new - y;
        ds.r2 = ydiff;
        VectorXd bspl = h * k1 - ydiff;
        ds.r3 = bspl;
        ds.r4 = ydiff - h * k7 - bspl;
        ds.r5 = h * (C::d1 * k1 + C::d3 * k3 + C::d4 * k4 + C::d5 * k5 + C::d6 * k6 + C::d7 * k7);
        double lo = t, hi = t_new;
        while (hi - lo > cfg.event_tol) {
          double mid = 0.5 * (lo + hi);
          if (cfg.event(mid, ds.at(mid)) >= 0.0) lo = mid; else hi = mid;
        }
        double te = 0.5 * (lo + hi);
        y = ds.at(te);
        t = te;
        res.event_time = te;
        k1 = eval(t, y);
        record(t, y, k1, true);
        return finish(Termination::event);
      }
      e_prev = e_new;
    }

    t = t_new;
    y = std::move(y_new);
    k1 = std::move(k7);
    bool done = stop(t, y);
    record(t, y, k1, done || last);
    if (done) return finish(Termination::stop_kkt);
    if (last) return finish(Termination::t_end);
    h = h_new;
  }
}

template <class Rhs>
OdeResult integrate_ode(Rhs&& f, const VectorXd& y_init, const IntegratorConfig& cfg) {
  return integrate_ode(std::forward<Rhs>(f), y_init, cfg, [](double, const VectorXd&) { return false; });
}

struct Trajectory {
  std::vector<double> times;
  std::vector<VectorXd> states;  // packed (x, z, y, lam); may be empty
  std::vector<double> kkt;
  std::vector<double> field_norm;
  Termination reason = Termination::t_end;
  std::optional<double> event_time;
  PrimalDualState final_state;
  long steps = 0, rejected = 0, fevals = 0;
  double wall_seconds = 0.0;
  std::string packing = "x,z,y,lam";

  std::size_t size() const { return times.size(); }
};

/// Integrates the flow from s0. Stops at t_end, when the KKT residual falls
/// below cfg.stop_kkt, at max_steps, or at the configured event.
inline Trajectory integrate(const SaddleProblem& prob, const PrimalDualState& s0, const IntegratorConfig& cfg) {
  prob.validate();
  s0.check(prob);
  auto start = std::chrono::steady_clock::now();
  FlowField ff(prob);
  auto rhs = [&](double, const VectorXd& v) { return ff.packed_field(v); };
  auto stop = [&](double, const VectorXd& v) {
    if (cfg.stop_kkt <= 0.0) return false;
    return ff.kkt(PrimalDualState::unpack(prob, v)) < cfg.stop_kkt;
  };
  OdeResult r = integrate_ode(rhs, s0.pack(), cfg, stop);
  Trajectory tr;
  tr.times = std::move(r.t);
  tr.field_norm = std::move(r.field_norm);
  tr.reason = r.reason;
  tr.event_time = r.event_time;
  tr.steps = r.steps;
  tr.rejected = r.rejected;
  tr.fevals = r.fevals;
  tr.final_state = PrimalDualState::unpack(prob, r.y_final);
  if (cfg.keep_states) {
    tr.kkt.reserve(r.y.size());
    for (const auto& v : r.y) tr.kkt.push_back(kkt_residual(prob, PrimalDualState::unpack(prob, v)));
    tr.states = std::move(r.y);
  }
  tr.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return tr;
}

// ------------------------------------------------------------------- export

/// Writes a CSV with the given header; columns are equal-length series.
inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& columns) {
  if (header.size() != columns.size()) throw std::invalid_argument("write_csv: header/column count mismatch");
  std::size_t rows = columns.empty() ? 0 : columns.front().size();
  for (const auto& c : columns) {
    if (c.size() != rows) throw std::invalid_argument("write_csv: ragged columns");
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_csv: cannot open " + path);
  for (std::size_t j = 0; j < header.size(); ++j) os << (j ? "," : "") << header[j];
  os << "\n" << std::setprecision(17);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < columns.size(); ++j) os << (j ? "," : "") << columns[j][i];
    os << "\n";
  }
}

/// Raw snapshot file: for each sample, t followed by the packed state, all
/// little-endian 64-bit floats.
inline void write_state_sidecar(const std::string& path, const Trajectory& tr) {
  static_assert(std::endian::native == std::endian::little, "sidecar layout assumes a little-endian host");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_state_sidecar: cannot open " + path);
  for (std::size_t i = 0; i < tr.states.size(); ++i) {
    os.write(reinterpret_cast<const char*>(&tr.times[i]), sizeof(double));
    os.write(reinterpret_cast<const char*>(tr.states[i].data()),
             static_cast<std::streamsize>(sizeof(double) * tr.states[i].size()));
  }
}

}  // namespace palflow
