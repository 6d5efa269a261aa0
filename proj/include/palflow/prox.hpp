#pragma once

// Proximal operators and Moreau envelopes for the nonsmooth terms.
// prox(mu, v) = argmin_w g(w) + (1/2mu)|w - v|^2 on the vectorized block.

#include "palflow/linops.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace palflow {

enum class ProxKind {
  l1,
  group_lasso,
  nuclear,
  indicator_nonneg,
  indicator_nonpos,
  frobenius_ball_masked,
  zero,
  custom
};

inline const char* to_string(ProxKind k) {
  switch (k) {
    case ProxKind::l1: return "l1";
    case ProxKind::group_lasso: return "group_lasso";
    case ProxKind::nuclear: return "nuclear";
    case ProxKind::indicator_nonneg: return "indicator_nonneg";
    case ProxKind::indicator_nonpos: return "indicator_nonpos";
    case ProxKind::frobenius_ball_masked: return "frobenius_ball_masked";
    case ProxKind::zero: return "zero";
    case ProxKind::custom: return "custom";
  }
  return "?";
}

inline bool is_indicator(ProxKind k) {
  return k == ProxKind::indicator_nonneg || k == ProxKind::indicator_nonpos ||
         k == ProxKind::frobenius_ball_masked;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Disjoint groups covering 0..n-1, one weight per group, plus an optional
/// l1 weight eta applied to every entry.
struct GroupPartition {
  std::vector<std::vector<Eigen::Index>> groups;
  std::vector<double> weights;
  double eta = 0.0;

  /// Contiguous equal-width groups.
  static GroupPartition uniform(Eigen::Index n, Eigen::Index width, double weight, double eta = 0.0) {
    if (width <= 0 || n % width != 0) throw std::invalid_argument("GroupPartition: width must divide n");
    GroupPartition p;
    p.eta = eta;
    for (Eigen::Index s = 0; s < n; s += width) {
      std::vector<Eigen::Index> g(width);
      std::iota(g.begin(), g.end(), s);
      p.groups.push_back(std::move(g));
      p.weights.push_back(weight);
    }
    return p;
  }

  /// Throws unless the groups partition 0..n-1 and weights are positive.
  void validate(Eigen::Index n) const {
    if (weights.size() != groups.size()) throw std::invalid_argument("GroupPartition: one weight per group");
    if (eta < 0.0) throw std::invalid_argument("GroupPartition: eta must be >= 0");
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    Eigen::Index count = 0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (!(weights[g] > 0.0)) throw std::invalid_argument("GroupPartition: weights must be > 0");
      for (auto i : groups[g]) {
        if (i < 0 || i >= n) throw std::invalid_argument("GroupPartition: index out of range");
        if (seen[static_cast<std::size_t>(i)]) throw std::invalid_argument("GroupPartition: groups overlap");
        seen[static_cast<std::size_t>(i)] = 1;
        ++count;
      }
    }
    if (count != n) throw std::invalid_argument("GroupPartition: groups do not cover all indices");
  }
};

inline VectorXd soft_threshold(const VectorXd& v, double t) {
  return v.unaryExpr([t](double a) { return std::copysign(std::max(std::abs(a) - t, 0.0), a); });
}

inline VectorXd prox_l1(double mu, const VectorXd& v, double weight = 1.0) {
  if (!(mu > 0.0)) throw std::invalid_argument("prox_l1: mu must be > 0");
  return soft_threshold(v, mu * weight);
}

inline VectorXd prox_group_lasso(double mu, const GroupPartition& part, const VectorXd& v) {
  if (!(mu > 0.0)) throw std::invalid_argument("prox_group_lasso: mu must be > 0");
  part.validate(v.size());
  VectorXd out = part.eta > 0.0 ? soft_threshold(v, part.eta * mu) : v;
  for (std::size_t g = 0; g < part.groups.size(); ++g) {
    double sq = 0.0;
    for (auto i : part.groups[g]) sq += out[i] * out[i];
    double nrm = std::sqrt(sq);
    double scale = nrm > 0.0 ? std::max(0.0, 1.0 - part.weights[g] * mu / nrm) : 0.0;
    for (auto i : part.groups[g]) out[i] *= scale;
  }
  return out;
}

/// Singular value shrinkage. When sigma_max / mu is moderate the shrink
/// factors max(1 - mu/sigma, 0) are taken from the eigendecomposition of the
/// smaller Gram matrix, which is several times cheaper than an SVD; their
/// relative error is about eps (sigma_max / mu)^2. Otherwise a full SVD.
inline MatrixXd prox_nuclear(double mu, const MatrixXd& x) {
  if (!(mu > 0.0)) throw std::invalid_argument("prox_nuclear: mu must be > 0");
  if (x.size() == 0) return x;
  const bool tall = x.rows() >= x.cols();
  MatrixXd gram = tall ? MatrixXd(x.transpose() * x) : MatrixXd(x * x.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(gram);
  if (es.info() == Eigen::Success) {
    double smax2 = std::max(es.eigenvalues().maxCoeff(), 0.0);
    if (smax2 <= 1e4 * mu * mu) {
      VectorXd d(es.eigenvalues().size());
      for (Eigen::Index i = 0; i < d.size(); ++i) {
        double sv = std::sqrt(std::max(es.eigenvalues()[i], 0.0));
        d[i] = sv > mu ? 1.0 - mu / sv : 0.0;
      }
      const MatrixXd& V = es.eigenvectors();
      MatrixXd shrink = V * d.asDiagonal() * V.transpose();
      return tall ? MatrixXd(x * shrink) : MatrixXd(shrink * x);
    }
  }
  Eigen::BDCSVD<MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) throw std::runtime_error("prox_nuclear: SVD failed");
  VectorXd s = (svd.singularValues().array() - mu).max(0.0).matrix();
  return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

enum class Orthant { nonneg, nonpos };

inline VectorXd prox_indicator_orthant(Orthant sign, const VectorXd& v) {
  return sign == Orthant::nonneg ? VectorXd(v.cwiseMax(0.0)) : VectorXd(v.cwiseMin(0.0));
}

/// Projection onto {X : |X o mask|_F <= radius}; entries outside the mask
/// pass through unchanged.
inline MatrixXd prox_frobenius_ball_masked(double radius, const MatrixXd& mask, const MatrixXd& x) {
  if (!(radius > 0.0)) throw std::invalid_argument("prox_frobenius_ball_masked: radius must be > 0");
  if (mask.rows() != x.rows() || mask.cols() != x.cols()) {
    throw DimensionError("prox_frobenius_ball_masked: mask shape mismatch");
  }
  MatrixXd inside = x.cwiseProduct(mask);
  double nrm = inside.norm();
  if (nrm == 0.0) return x;
  double scale = std::min(1.0, radius / nrm);
  return x - inside + scale * inside;
}

/// A nonsmooth block g_j with its value and prox oracles.
struct ProximableFunction {
  using Value = std::function<double(const VectorXd&)>;
  using Prox = std::function<VectorXd(double, const VectorXd&)>;

  ProxKind kind = ProxKind::zero;
  Shape shape;
  Value value;
  Prox prox;
  double strong_convexity = 0.0;
  std::string label;

  Eigen::Index dim() const { return shape.size(); }
};

namespace detail {
inline void check_dim(const ProximableFunction& g, const VectorXd& v) {
  if (v.size() != g.dim()) throw DimensionError("prox: block dimension mismatch for " + g.label);
}
}  // namespace detail

inline ProximableFunction make_l1(Shape s, double weight = 1.0) {
  ProximableFunction g;
  g.kind = ProxKind::l1;
  g.shape = s;
  g.label = "l1";
  g.value = [weight](const VectorXd& w) { return weight * w.lpNorm<1>(); };
  g.prox = [weight](double mu, const VectorXd& v) { return prox_l1(mu, v, weight); };
  return g;
}

inline ProximableFunction make_l1(Eigen::Index n, double weight = 1.0) {
  return make_l1(Shape::vector(n), weight);
}

inline ProximableFunction make_group_lasso(Eigen::Index n, GroupPartition part) {
  part.validate(n);
  auto p = std::make_shared<const GroupPartition>(std::move(part));
  ProximableFunction g;
  g.kind = ProxKind::group_lasso;
  g.shape = Shape::vector(n);
  g.label = "group_lasso";
  g.value = [p](const VectorXd& w) {
    double s = p->eta * w.lpNorm<1>();
    for (std::size_t k = 0; k < p->groups.size(); ++k) {
      double sq = 0.0;
      for (auto i : p->groups[k]) sq += w[i] * w[i];
      s += p->weights[k] * std::sqrt(sq);
    }
    return s;
  };
  g.prox = [p](double mu, const VectorXd& v) { return prox_group_lasso(mu, *p, v); };
  return g;
}

inline ProximableFunction make_nuclear(Eigen::Index rows, Eigen::Index cols, double weight = 1.0) {
  Shape s = Shape::matrix(rows, cols);
  ProximableFunction g;
  g.kind = ProxKind::nuclear;
  g.shape = s;
  g.label = "nuclear";
  g.value = [s, weight](const VectorXd& w) {
    if (w.size() == 0) return 0.0;
    Eigen::BDCSVD<MatrixXd> svd(as_matrix(w, s));
    return weight * svd.singularValues().sum();
  };
  g.prox = [s, weight](double mu, const VectorXd& v) {
    return vec(prox_nuclear(mu * weight, as_matrix(v, s)));
  };
  return g;
}

inline ProximableFunction make_indicator(Orthant sign, Shape s) {
  ProximableFunction g;
  g.kind = sign == Orthant::nonneg ? ProxKind::indicator_nonneg : ProxKind::indicator_nonpos;
  g.shape = s;
  g.label = sign == Orthant::nonneg ? "indicator_nonneg" : "indicator_nonpos";
  g.value = [sign](const VectorXd& w) {
    bool ok = sign == Orthant::nonneg ? (w.array() >= 0.0).all() : (w.array() <= 0.0).all();
    return ok ? 0.0 : kInf;
  };
  g.prox = [sign](double, const VectorXd& v) { return prox_indicator_orthant(sign, v); };
  return g;
}

inline ProximableFunction make_indicator(Orthant sign, Eigen::Index n) {
  return make_indicator(sign, Shape::vector(n));
}

inline ProximableFunction make_frobenius_ball_masked(double radius, const MatrixXd& mask) {
  if (!(radius > 0.0)) throw std::invalid_argument("make_frobenius_ball_masked: radius must be > 0");
  Shape s = Shape::matrix(mask.rows(), mask.cols());
  auto m = std::make_shared<const MatrixXd>(mask);
  ProximableFunction g;
  g.kind = ProxKind::frobenius_ball_masked;
  g.shape = s;
  g.label = "frobenius_ball_masked";
  // Small relative slack so projected points read as feasible.
  g.value = [s, m, radius](const VectorXd& w) {
    double n = as_matrix(w, s).cwiseProduct(*m).norm();
    return n <= radius * (1.0 + 1e-12) ? 0.0 : kInf;
  };
  g.prox = [s, m, radius](double, const VectorXd& v) {
    return vec(prox_frobenius_ball_masked(radius, *m, as_matrix(v, s)));
  };
  return g;
}

inline ProximableFunction make_zero(Shape s) {
  ProximableFunction g;
  g.kind = ProxKind::zero;
  g.shape = s;
  g.label = "zero";
  g.value = [](const VectorXd&) { return 0.0; };
  g.prox = [](double, const VectorXd& v) { return v; };
  return g;
}

inline ProximableFunction make_zero(Eigen::Index n) { return make_zero(Shape::vector(n)); }

/// g(w) = (m/2)|w - c|^2, strongly convex with modulus m.
inline ProximableFunction make_quadratic(const VectorXd& c, double m) {
  if (!(m > 0.0)) throw std::invalid_argument("make_quadratic: m must be > 0");
  ProximableFunction g;
  g.kind = ProxKind::custom;
  g.shape = Shape::vector(c.size());
  g.label = "quadratic";
  g.strong_convexity = m;
  g.value = [c, m](const VectorXd& w) { return 0.5 * m * (w - c).squaredNorm(); };
  g.prox = [c, m](double mu, const VectorXd& v) -> VectorXd { return (v + mu * m * c) / (1.0 + mu * m); };
  return g;
}

inline VectorXd prox(const ProximableFunction& g, double mu, const VectorXd& v) {
  if (!(mu > 0.0)) throw std::invalid_argument("prox: mu must be > 0");
  detail::check_dim(g, v);
  return g.prox(mu, v);
}

inline double moreau_value(const ProximableFunction& g, double mu, const VectorXd& v) {
  VectorXd p = prox(g, mu, v);
  double gv = g.value(p);
  if (!std::isfinite(gv)) {
    throw std::runtime_error("moreau_value: g is not finite at its own prox output (" + g.label + ")");
  }
  return gv + (p - v).squaredNorm() / (2.0 * mu);
}

inline VectorXd moreau_grad(const ProximableFunction& g, double mu, const VectorXd& v) {
  return (v - prox(g, mu, v)) / mu;
}

/// g_1 ... g_l laid out back to back over one concatenated vector.
struct SeparableFunction {
  std::vector<ProximableFunction> blocks;

  Eigen::Index dim() const {
    Eigen::Index n = 0;
    for (const auto& b : blocks) n += b.dim();
    return n;
  }

  std::vector<Eigen::Index> offsets() const {
    std::vector<Eigen::Index> off;
    Eigen::Index o = 0;
    for (const auto& b : blocks) {
      off.push_back(o);
      o += b.dim();
    }
    return off;
  }

  double strong_convexity() const {
    if (blocks.empty()) return 0.0;
    double m = kInf;
    for (const auto& b : blocks) m = std::min(m, b.strong_convexity);
    return m;
  }
};

inline VectorXd separable_prox(const SeparableFunction& gs, double mu, const VectorXd& v) {
  if (v.size() != gs.dim()) throw DimensionError("separable_prox: blocks do not cover the vector");
  VectorXd out(v.size());
  Eigen::Index off = 0;
  for (const auto& g : gs.blocks) {
    out.segment(off, g.dim()) = prox(g, mu, v.segment(off, g.dim()));
    off += g.dim();
  }
  return out;
}

inline double separable_value(const SeparableFunction& gs, const VectorXd& v) {
  if (v.size() != gs.dim()) throw DimensionError("separable_value: blocks do not cover the vector");
  double s = 0.0;
  Eigen::Index off = 0;
  for (const auto& g : gs.blocks) {
    s += g.value(v.segment(off, g.dim()));
    off += g.dim();
  }
  return s;
}

inline double separable_moreau_value(const SeparableFunction& gs, double mu, const VectorXd& v) {
  if (v.size() != gs.dim()) throw DimensionError("separable_moreau_value: blocks do not cover the vector");
  double s = 0.0;
  Eigen::Index off = 0;
  for (const auto& g : gs.blocks) {
    s += moreau_value(g, mu, v.segment(off, g.dim()));
    off += g.dim();
  }
  return s;
}

}  // namespace palflow
