#pragma once

// Problem container for  min f(x) + g(z)  s.t.  E x + F z = q,
// KKT residual, structural assumption checks and exponential-stability
// certificate constants.

#include "palflow/linops.hpp"
#include "palflow/prox.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace palflow {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct SmoothBlock {
  Shape shape;
  std::function<double(const VectorXd&)> value;
  std::function<VectorXd(const VectorXd&)> gradient;
  double lipschitz = kNaN;  // NaN: not declared
  double strong_convexity = 0.0;
  std::string label;

  Eigen::Index dim() const { return shape.size(); }
};

/// f(x) = 1/2 x'Hx + c'x. Lipschitz and strong convexity constants are
/// taken from the extreme eigenvalues of H.
inline SmoothBlock make_quadratic_block(const MatrixXd& h, const VectorXd& c) {
  if (h.rows() != h.cols() || h.rows() != c.size()) throw DimensionError("make_quadratic_block: size mismatch");
  MatrixXd hs = 0.5 * (h + h.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(hs, Eigen::EigenvaluesOnly);
  SmoothBlock b;
  b.shape = Shape::vector(h.rows());
  b.label = "quadratic";
  b.lipschitz = h.rows() > 0 ? std::max(0.0, es.eigenvalues().maxCoeff()) : 0.0;
  b.strong_convexity = h.rows() > 0 ? std::max(0.0, es.eigenvalues().minCoeff()) : 0.0;
  if (b.strong_convexity < 1e-12 * std::max(1.0, b.lipschitz)) b.strong_convexity = 0.0;
  auto H = std::make_shared<const MatrixXd>(hs);
  b.value = [H, c](const VectorXd& x) { return 0.5 * x.dot((*H) * x) + c.dot(x); };
  b.gradient = [H, c](const VectorXd& x) -> VectorXd { return (*H) * x + c; };
  return b;
}

/// f(x) = 1/2 |G x - h|^2.
inline SmoothBlock make_least_squares_block(const MatrixXd& g, const VectorXd& h) {
  if (g.rows() != h.size()) throw DimensionError("make_least_squares_block: size mismatch");
  SmoothBlock b = make_quadratic_block(g.transpose() * g, -(g.transpose() * h));
  auto G = std::make_shared<const MatrixXd>(g);
  b.label = "least_squares";
  b.value = [G, h](const VectorXd& x) { return 0.5 * ((*G) * x - h).squaredNorm(); };
  return b;
}

inline SmoothBlock make_zero_block(Shape s) {
  SmoothBlock b;
  b.shape = s;
  b.label = "zero";
  b.lipschitz = 0.0;
  b.value = [](const VectorXd&) { return 0.0; };
  auto n = s.size();
  b.gradient = [n](const VectorXd&) -> VectorXd { return VectorXd::Zero(n); };
  return b;
}

struct SaddleProblem {
  std::vector<SmoothBlock> smooth;  // f_1..f_k, one per E block
  SeparableFunction g;              // g_1..g_l, one per F block
  BlockOperator E;
  BlockOperator F;
  VectorXd q;
  double mu = 1.0;
  double alpha = 1.0;

  Eigen::Index m() const { return E.domain_dim(); }
  Eigen::Index n() const { return F.domain_dim(); }
  Eigen::Index p() const { return q.size(); }
  Eigen::Index state_dim() const { return m() + 2 * n() + p(); }

  void validate() const {
    if (!(mu > 0.0)) throw std::invalid_argument("SaddleProblem: mu must be > 0");
    if (!(alpha > 0.0)) throw std::invalid_argument("SaddleProblem: alpha must be > 0");
    if (E.codomain_dim() != p() || F.codomain_dim() != p()) {
      throw DimensionError("SaddleProblem: E and F codomains must equal dim(q)");
    }
    if (E.num_blocks() != smooth.size()) throw DimensionError("SaddleProblem: one E block per smooth block");
    if (F.num_blocks() != g.blocks.size()) throw DimensionError("SaddleProblem: one F block per nonsmooth block");
    for (std::size_t i = 0; i < smooth.size(); ++i) {
      if (E.block(i).in_dim() != smooth[i].dim()) throw DimensionError("SaddleProblem: E block width != dim(x_i)");
    }
    for (std::size_t j = 0; j < g.blocks.size(); ++j) {
      if (F.block(j).in_dim() != g.blocks[j].dim()) throw DimensionError("SaddleProblem: F block width != dim(z_j)");
    }
  }

  std::vector<Eigen::Index> x_offsets() const {
    std::vector<Eigen::Index> off;
    Eigen::Index o = 0;
    for (const auto& b : smooth) {
      off.push_back(o);
      o += b.dim();
    }
    return off;
  }

  std::vector<Eigen::Index> z_offsets() const { return g.offsets(); }

  double f_value(const VectorXd& x) const {
    double s = 0.0;
    Eigen::Index o = 0;
    for (const auto& b : smooth) {
      s += b.value(x.segment(o, b.dim()));
      o += b.dim();
    }
    return s;
  }

  VectorXd f_grad(const VectorXd& x) const {
    VectorXd out(x.size());
    Eigen::Index o = 0;
    for (const auto& b : smooth) {
      out.segment(o, b.dim()) = b.gradient(x.segment(o, b.dim()));
      o += b.dim();
    }
    return out;
  }

  double g_value(const VectorXd& z) const { return separable_value(g, z); }

  double objective(const VectorXd& x, const VectorXd& z) const { return f_value(x) + g_value(z); }

  /// Objective with indicator blocks dropped. Along a trajectory z need not
  /// lie in the constraint sets, so this is the finite quantity to track.
  double tracked_objective(const VectorXd& x, const VectorXd& z) const {
    double s = f_value(x);
    Eigen::Index o = 0;
    for (const auto& b : g.blocks) {
      if (!is_indicator(b.kind)) s += b.value(z.segment(o, b.dim()));
      o += b.dim();
    }
    return s;
  }

  VectorXd prox_g(const VectorXd& v) const { return separable_prox(g, mu, v); }

  VectorXd constraint_residual(const VectorXd& x, const VectorXd& z) const {
    return E.apply(x) + F.apply(z) - q;
  }

  /// max_i L_i, or nullopt when some block does not declare it.
  std::optional<double> lipschitz_f() const {
    double l = 0.0;
    for (const auto& b : smooth) {
      if (std::isnan(b.lipschitz)) return std::nullopt;
      l = std::max(l, b.lipschitz);
    }
    return l;
  }

  MatrixXd EF_dense() const { return hstack(E.dense(), F.dense()); }
};

/// p = (x, z, y, lam); packed in that order.
struct PrimalDualState {
  VectorXd x, z, y, lam;

  static PrimalDualState zeros(const SaddleProblem& prob) {
    return {VectorXd::Zero(prob.m()), VectorXd::Zero(prob.n()), VectorXd::Zero(prob.n()),
            VectorXd::Zero(prob.p())};
  }

  Eigen::Index size() const { return x.size() + z.size() + y.size() + lam.size(); }

  VectorXd pack() const {
    VectorXd v(size());
    v << x, z, y, lam;
    return v;
  }

  static PrimalDualState unpack(const SaddleProblem& prob, const VectorXd& v) {
    if (v.size() != prob.state_dim()) throw DimensionError("PrimalDualState::unpack: size mismatch");
    PrimalDualState s;
    Eigen::Index o = 0;
    s.x = v.segment(o, prob.m());
    o += prob.m();
    s.z = v.segment(o, prob.n());
    o += prob.n();
    s.y = v.segment(o, prob.n());
    o += prob.n();
    s.lam = v.segment(o, prob.p());
    return s;
  }

  void check(const SaddleProblem& prob) const {
    if (x.size() != prob.m() || z.size() != prob.n() || y.size() != prob.n() || lam.size() != prob.p()) {
      throw DimensionError("PrimalDualState: shapes do not match the problem");
    }
  }
};

/// Stacked KKT violations
///   grad f(x) + E'lam,  y + F'lam,  z - prox(z + mu y),  Ex + Fz - q.
inline VectorXd kkt_vector(const SaddleProblem& prob, const PrimalDualState& s) {
  s.check(prob);
  VectorXd r(prob.m() + 2 * prob.n() + prob.p());
  r << prob.f_grad(s.x) + prob.E.adjoint(s.lam), s.y + prob.F.adjoint(s.lam),
      s.z - prob.prox_g(s.z + prob.mu * s.y), prob.constraint_residual(s.x, s.z);
  return r;
}

inline double kkt_residual(const SaddleProblem& prob, const PrimalDualState& s) {
  return kkt_vector(prob, s).norm();
}

struct Assumption4Result {
  bool holds = false;
  std::vector<std::size_t> I;  // smooth blocks with m_i = 0
  std::vector<std::size_t> J;  // nonsmooth blocks with m_g,j = 0
};

/// [E_I F_J] of the non-strongly-convex blocks must have full column rank.
inline Assumption4Result check_assumption4(const SaddleProblem& prob, double tol_rank = kDefaultRankTol) {
  Assumption4Result r;
  for (std::size_t i = 0; i < prob.smooth.size(); ++i) {
    if (prob.smooth[i].strong_convexity <= 0.0) r.I.push_back(i);
  }
  for (std::size_t j = 0; j < prob.g.blocks.size(); ++j) {
    if (prob.g.blocks[j].strong_convexity <= 0.0) r.J.push_back(j);
  }
  MatrixXd m = hstack(prob.E.dense_subset(r.I), prob.F.dense_subset(r.J));
  if (m.cols() == 0) {
    r.holds = true;
    return r;
  }
  auto se = singular_extremes(m, tol_rank);
  r.holds = !se.zero_operator && se.rank == m.cols();
  return r;
}

/// R(F) contained in R(E).
inline bool check_assumption5(const SaddleProblem& prob, double tol_rank = kDefaultRankTol) {
  return range_contained(prob.F.dense(), prob.E.dense(), tol_rank);
}

class CertificateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GesCertificate {
  double m_xz = 0.0;
  double alpha_bar2 = 0.0;
  double M2 = 0.0;
  double rho2 = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
  double c3 = 0.0;
  double L_f = 0.0;
  double L_xz = 0.0;
  double m_fg = 0.0;
  bool empty_set_convention = false;
  bool alpha_admissible = false;  // 0 < alpha < alpha_bar2
  std::vector<std::size_t> I, J;

  std::string report() const {
    std::ostringstream os;
    os.precision(10);
    os << "m_xz = " << m_xz << (empty_set_convention ? "  (empty-set convention)" : "") << "\n"
       << "alpha_bar2 = " << alpha_bar2 << "\n"
       << "M2 = " << M2 << "\n"
       << "rho2 = " << rho2 << "\n"
       << "c1 = " << c1 << "\n"
       << "c2 = " << c2 << "\n"
       << "c3 = " << c3 << "\n"
       << "L_f = " << L_f << "\n"
       << "L_xz = " << L_xz << "  (bound L_f + (1 + smax^2([E F]))/mu)\n"
       << "alpha within (0, alpha_bar2): " << (alpha_admissible ? "yes" : "no") << "\n";
    return os.str();
  }
};

/// Strong convexity modulus of the augmented Lagrangian in (x, z).
///
/// With both I and J empty every block is strongly convex and the modulus
/// is the smallest of m_i and m_g,j / (1 + mu m_g,j). Otherwise the
/// complement blocks contribute m_fg/4 and the rank-deficient part the
/// usual ratio; the smaller of the two is returned.
inline double strong_convexity_xz(const SaddleProblem& prob, const Assumption4Result& a4, bool* empty_convention = nullptr,
                                  double* m_fg_out = nullptr) {
  const double mu = prob.mu;
  double m_f = 0.0, m_g = 0.0;
  bool have_f = false, have_g = false;
  std::vector<std::size_t> Ic, Jc;
  for (std::size_t i = 0; i < prob.smooth.size(); ++i) {
    double mi = prob.smooth[i].strong_convexity;
    if (mi > 0.0) {
      m_f = have_f ? std::min(m_f, mi) : mi;
      have_f = true;
      Ic.push_back(i);
    }
  }
  for (std::size_t j = 0; j < prob.g.blocks.size(); ++j) {
    double mj = prob.g.blocks[j].strong_convexity;
    if (mj > 0.0) {
      m_g = have_g ? std::min(m_g, mj) : mj;
      have_g = true;
      Jc.push_back(j);
    }
  }
  double m_fg = (have_f && have_g) ? std::min(m_f, m_g) : (have_f ? m_f : (have_g ? m_g : 0.0));
  if (m_fg_out) *m_fg_out = m_fg;
  if (empty_convention) *empty_convention = false;

  if (m_fg == 0.0) {
    auto se = singular_extremes(prob.EF_dense());
    return se.sigma_min_nonzero * se.sigma_min_nonzero / mu;
  }
  if (a4.I.empty() && a4.J.empty()) {
    if (empty_convention) *empty_convention = true;
    double m = kInf;
    for (const auto& b : prob.smooth) m = std::min(m, b.strong_convexity);
    for (const auto& b : prob.g.blocks) m = std::min(m, b.strong_convexity / (1.0 + mu * b.strong_convexity));
    return m;
  }
  auto s_ij = singular_extremes(hstack(prob.E.dense_subset(a4.I), prob.F.dense_subset(a4.J)));
  auto s_c = singular_extremes(hstack(prob.E.dense_subset(Ic), prob.F.dense_subset(Jc)));
  double lo = s_ij.sigma_min_nonzero;
  double hi = s_c.sigma_max;
  double ratio = m_fg * lo * lo / (m_fg * mu + 4.0 * hi * hi);
  return std::min(0.25 * m_fg, ratio);
}

inline GesCertificate ges_certificate(const SaddleProblem& prob) {
  prob.validate();
  auto a4 = check_assumption4(prob);
  if (!a4.holds) throw CertificateError("Assumption 4 fails: [E_I F_J] is not full column rank");
  if (!check_assumption5(prob)) throw CertificateError("Assumption 5 fails: R(F) is not contained in R(E)");
  for (const auto& b : prob.g.blocks) {
    if (prob.mu * b.strong_convexity > 1.0) {
      throw CertificateError("mu * m_g <= 1 is required for the certificate");
    }
  }
  auto lf = prob.lipschitz_f();
  if (!lf) throw CertificateError("L_xz is not derivable: declare the Lipschitz constant L_f of every smooth block");

  GesCertificate c;
  c.I = a4.I;
  c.J = a4.J;
  const double mu = prob.mu;
  const double alpha = prob.alpha;
  c.L_f = *lf;
  auto s_ef = singular_extremes(prob.EF_dense());
  auto s_e = singular_extremes(prob.E.dense());
  auto s_f = singular_extremes(prob.F.dense());
  double sef2 = s_ef.sigma_max * s_ef.sigma_max;
  double sf2 = s_f.sigma_max * s_f.sigma_max;

  c.m_xz = strong_convexity_xz(prob, a4, &c.empty_set_convention, &c.m_fg);
  c.L_xz = c.L_f + (1.0 + sef2) / mu;
  c.c1 = (0.5 * c.L_xz + 1.0) * std::max(1.0, mu);
  double c2a = 0.0;
  if (c.L_f > 0.0) {
    if (s_e.zero_operator) throw CertificateError("c2 undefined: E is zero while L_f > 0");
    c2a = 2.0 * c.L_f * c.L_f / (s_e.sigma_min_nonzero * s_e.sigma_min_nonzero);
  }
  c.c2 = std::max(c2a, 1.0 / (mu * mu));
  c.c3 = (2.0 / (mu * mu)) * std::max({1.0, sf2, mu * mu * sf2});
  c.alpha_bar2 = 0.5 * c.m_xz * c.m_xz / (sef2 + 4.0);
  c.M2 = (2.0 * c.c1 + 1.0) / alpha;
  c.rho2 = std::min({0.5, alpha, alpha * c.m_xz}) / ((2.0 * c.c1 + 1.0) * (c.c2 + 1.0) * (c.c3 + 1.0));
  c.alpha_admissible = alpha > 0.0 && alpha < c.alpha_bar2;
  return c;
}

struct ConstantCheck {
  double worst_lipschitz_ratio = 0.0;  // max |grad diff| / (L |x diff|)
  double worst_convexity_ratio = kInf;  // min <grad diff, x diff> / (m |x diff|^2)
  std::vector<std::string> warnings;
};

/// Samples random pairs per smooth block and compares against the declared
/// L_i and m_i. Violations beyond a 1e-8 relative margin become warnings.
inline ConstantCheck verify_declared_constants(const SaddleProblem& prob, int pairs = 100, std::uint64_t seed = 7,
                                               double scale = 1.0) {
  ConstantCheck out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  for (const auto& b : prob.smooth) {
    for (int k = 0; k < pairs; ++k) {
      VectorXd u(b.dim()), v(b.dim());
      for (Eigen::Index i = 0; i < b.dim(); ++i) {
        u[i] = scale * nd(rng);
        v[i] = scale * nd(rng);
      }
      VectorXd du = u - v;
      double dn = du.norm();
      if (dn == 0.0) continue;
      VectorXd dg = b.gradient(u) - b.gradient(v);
      if (!std::isnan(b.lipschitz) && b.lipschitz > 0.0) {
        out.worst_lipschitz_ratio = std::max(out.worst_lipschitz_ratio, dg.norm() / (b.lipschitz * dn));
      }
      if (b.strong_convexity > 0.0) {
        out.worst_convexity_ratio = std::min(out.worst_convexity_ratio, dg.dot(du) / (b.strong_convexity * dn * dn));
      }
    }
    if (out.worst_lipschitz_ratio > 1.0 + 1e-8) out.warnings.push_back("declared L_f violated by block " + b.label);
    if (out.worst_convexity_ratio < 1.0 - 1e-8) out.warnings.push_back("declared m_f violated by block " + b.label);
  }
  return out;
}

/// Lifted form with an explicit copy w of z:
///   min f(x) + g(w)  s.t.  Ex + Fz = q,  z - w = 0.
/// Its primal variable is (x, z, w) of dimension m + 2n.
struct LiftedProblem {
  const SaddleProblem* base = nullptr;

  Eigen::Index primal_dim() const { return base->m() + 2 * base->n(); }

  double objective(const VectorXd& x, const VectorXd& w) const { return base->f_value(x) + base->g_value(w); }

  /// Residual of the lifted KKT system at (x, z, w, y, lam) with
  /// y in dg(w) written as w - prox(w + mu y) = 0.
  VectorXd kkt_vector(const VectorXd& x, const VectorXd& z, const VectorXd& w, const VectorXd& y,
                      const VectorXd& lam) const {
    const auto& P = *base;
    VectorXd r(P.m() + 3 * P.n() + P.p());
    r << P.f_grad(x) + P.E.adjoint(lam), y + P.F.adjoint(lam), w - P.prox_g(w + P.mu * y), z - w,
        P.constraint_residual(x, z);
    return r;
  }

  double kkt_residual(const VectorXd& x, const VectorXd& z, const VectorXd& w, const VectorXd& y,
                      const VectorXd& lam) const {
    return kkt_vector(x, z, w, y, lam).norm();
  }
};

inline LiftedProblem build_lifted(const SaddleProblem& prob) {
  prob.validate();
  return LiftedProblem{&prob};
}

}  // namespace palflow
