#pragma once

/// Linear operators between finite-dimensional (vector or matrix shaped)
/// spaces, together with the dense spectral queries used by the assumption
/// checks and certificates.
///
/// Matrix-shaped variables are vectorized column-major everywhere in this
/// library and use the trace inner product <U,V> = tr(U^T V), which equals
/// the Euclidean inner product of the vectorizations.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace palflow {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Rank threshold relative to the largest singular value.
inline constexpr double kDefaultRankTol = 1e-9;

/// Shape of a variable block; vectors have cols == 1.
struct Shape {
  Eigen::Index rows = 0;
  Eigen::Index cols = 1;

  static Shape vector(Eigen::Index n) { return {n, 1}; }
  static Shape matrix(Eigen::Index r, Eigen::Index c) { return {r, c}; }

  Eigen::Index size() const { return rows * cols; }
  bool is_matrix() const { return cols != 1; }
  bool operator==(const Shape&) const = default;
};

inline Eigen::Map<const MatrixXd> as_matrix(const VectorXd& v, Shape s) {
  return {v.data(), s.rows, s.cols};
}

inline VectorXd vec(const MatrixXd& m) {
  return Eigen::Map<const VectorXd>(m.data(), m.size());
}

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A linear map with its adjoint. The dense column-major materialization is
/// built on demand by applying the map to canonical basis vectors and is
/// cached once per operator (copies share the cache).
class LinearOperator {
 public:
  using Map = std::function<VectorXd(const VectorXd&)>;

  LinearOperator() : LinearOperator(Shape::vector(0), Shape::vector(0), nullptr, nullptr) {}

  LinearOperator(Shape in, Shape out, Map apply, Map adjoint, bool materializable = true)
      : in_(in),
        out_(out),
        apply_(std::move(apply)),
        adjoint_(std::move(adjoint)),
        materializable_(materializable),
        cache_(std::make_shared<DenseCache>()) {}

  static LinearOperator from_dense(MatrixXd m) {
    Shape in = Shape::vector(m.cols());
    Shape out = Shape::vector(m.rows());
    return from_dense(std::move(m), in, out);
  }

  /// Dense operator with explicit (possibly matrix) domain/codomain shapes.
  static LinearOperator from_dense(MatrixXd m, Shape in, Shape out) {
    if (m.rows() != out.size() || m.cols() != in.size()) {
      throw DimensionError("from_dense: matrix size does not match shapes");
    }
    auto shared = std::make_shared<const MatrixXd>(std::move(m));
    LinearOperator op(
        in, out, [shared](const VectorXd& u) -> VectorXd { return (*shared) * u; },
        [shared](const VectorXd& v) -> VectorXd { return shared->transpose() * v; });
    std::call_once(op.cache_->once, [&] { op.cache_->dense = *shared; });
    return op;
  }

  static LinearOperator identity(Eigen::Index n) {
    return {Shape::vector(n), Shape::vector(n), [](const VectorXd& u) { return u; },
            [](const VectorXd& v) { return v; }};
  }

  static LinearOperator identity(Shape s) {
    return {s, s, [](const VectorXd& u) { return u; }, [](const VectorXd& v) { return v; }};
  }

  static LinearOperator zero(Shape in, Shape out) {
    auto n_out = out.size();
    auto n_in = in.size();
    return {in, out, [n_out](const VectorXd&) -> VectorXd { return VectorXd::Zero(n_out); },
            [n_in](const VectorXd&) -> VectorXd { return VectorXd::Zero(n_in); }};
  }

  static LinearOperator zero(Eigen::Index in, Eigen::Index out) {
    return zero(Shape::vector(in), Shape::vector(out));
  }

  Shape in_shape() const { return in_; }
  Shape out_shape() const { return out_; }
  Eigen::Index in_dim() const { return in_.size(); }
  Eigen::Index out_dim() const { return out_.size(); }

  VectorXd apply(const VectorXd& u) const {
    if (u.size() != in_dim()) throw DimensionError("LinearOperator::apply: dimension mismatch");
    return apply_(u);
  }

  VectorXd adjoint(const VectorXd& v) const {
    if (v.size() != out_dim()) throw DimensionError("LinearOperator::adjoint: dimension mismatch");
    return adjoint_(v);
  }

  LinearOperator transposed() const {
    return {out_, in_, adjoint_, apply_, materializable_};
  }

  LinearOperator scaled(double s) const {
    auto a = apply_;
    auto b = adjoint_;
    return {in_, out_, [a, s](const VectorXd& u) -> VectorXd { return s * a(u); },
            [b, s](const VectorXd& v) -> VectorXd { return s * b(v); }, materializable_};
  }

  bool materializable() const { return materializable_; }

  /// Dense out_dim x in_dim matrix. Throws for operators declared
  /// non-materializable.
  const MatrixXd& dense() const {
    if (!materializable_) throw std::logic_error("LinearOperator: operator is not materializable");
    std::call_once(cache_->once, [this] {
      MatrixXd m(out_dim(), in_dim());
      VectorXd e = VectorXd::Zero(in_dim());
      for (Eigen::Index j = 0; j < in_dim(); ++j) {
        e[j] = 1.0;
        m.col(j) = apply_(e);
        e[j] = 0.0;
      }
      cache_->dense = std::move(m);
    });
    return cache_->dense;
  }

 private:
  struct DenseCache {
    std::once_flag once;
    MatrixXd dense;
  };

  Shape in_;
  Shape out_;
  Map apply_;
  Map adjoint_;
  bool materializable_;
  std::shared_ptr<DenseCache> cache_;
};

/// Column partition [A_1 ... A_k] sharing one codomain of dimension p.
class BlockOperator {
 public:
  BlockOperator() = default;

  explicit BlockOperator(Eigen::Index codomain_dim) : p_(codomain_dim) {}

  BlockOperator(Eigen::Index codomain_dim, std::vector<LinearOperator> blocks)
      : p_(codomain_dim), blocks_(std::move(blocks)) {
    for (const auto& b : blocks_) check_block(b);
  }

  void push_back(LinearOperator b) {
    check_block(b);
    blocks_.push_back(std::move(b));
  }

  Eigen::Index codomain_dim() const { return p_; }
  std::size_t num_blocks() const { return blocks_.size(); }
  const LinearOperator& block(std::size_t i) const { return blocks_.at(i); }
  const std::vector<LinearOperator>& blocks() const { return blocks_; }

  Eigen::Index domain_dim() const {
    Eigen::Index n = 0;
    for (const auto& b : blocks_) n += b.in_dim();
    return n;
  }

  /// Sum of per-block applies over the concatenated domain vector.
  VectorXd apply(const VectorXd& u) const {
    if (u.size() != domain_dim()) throw DimensionError("BlockOperator::apply: dimension mismatch");
    VectorXd out = VectorXd::Zero(p_);
    Eigen::Index off = 0;
    for (const auto& b : blocks_) {
      out += b.apply(u.segment(off, b.in_dim()));
      off += b.in_dim();
    }
    return out;
  }

  VectorXd adjoint(const VectorXd& v) const {
    if (v.size() != p_) throw DimensionError("BlockOperator::adjoint: dimension mismatch");
    VectorXd out(domain_dim());
    Eigen::Index off = 0;
    for (const auto& b : blocks_) {
      out.segment(off, b.in_dim()) = b.adjoint(v);
      off += b.in_dim();
    }
    return out;
  }

  /// Dense p x n matrix with the block columns side by side.
  MatrixXd dense() const { return dense_subset(all_indices()); }

  /// Dense matrix with only the listed blocks, in the listed order.
  MatrixXd dense_subset(const std::vector<std::size_t>& which) const {
    Eigen::Index n = 0;
    for (auto i : which) n += blocks_.at(i).in_dim();
    MatrixXd m(p_, n);
    Eigen::Index off = 0;
    for (auto i : which) {
      const auto& b = blocks_.at(i);
      if (b.in_dim() > 0) m.middleCols(off, b.in_dim()) = b.dense();
      off += b.in_dim();
    }
    return m;
  }

  LinearOperator as_operator() const {
    auto self = std::make_shared<BlockOperator>(*this);
    return {Shape::vector(domain_dim()), Shape::vector(p_),
            [self](const VectorXd& u) { return self->apply(u); },
            [self](const VectorXd& v) { return self->adjoint(v); }};
  }

 private:
  void check_block(const LinearOperator& b) const {
    if (b.out_dim() != p_) throw DimensionError("BlockOperator: block codomain differs from p");
  }

  std::vector<std::size_t> all_indices() const {
    std::vector<std::size_t> idx(blocks_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
  }

  Eigen::Index p_ = 0;
  std::vector<LinearOperator> blocks_;
};

/// Horizontal concatenation [A B] of two dense matrices with equal row count.
inline MatrixXd hstack(const MatrixXd& a, const MatrixXd& b) {
  if (a.rows() != b.rows()) throw DimensionError("hstack: row mismatch");
  MatrixXd m(a.rows(), a.cols() + b.cols());
  m << a, b;
  return m;
}

struct SingularExtremes {
  double sigma_max = 0.0;
  double sigma_min_nonzero = 0.0;
  bool zero_operator = false;
  Eigen::Index rank = 0;
};

/// Largest and smallest nonzero singular values of a dense matrix. Values
/// below tol_rank * sigma_max count as zero.
inline SingularExtremes singular_extremes(const MatrixXd& m, double tol_rank = kDefaultRankTol) {
  SingularExtremes out;
  if (m.size() == 0) {
    out.zero_operator = true;
    return out;
  }
  Eigen::BDCSVD<MatrixXd> svd(m);
  const VectorXd& s = svd.singularValues();
  if (s.size() == 0 || s[0] == 0.0) {
    out.zero_operator = true;
    return out;
  }
  out.sigma_max = s[0];
  double cutoff = tol_rank * s[0];
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s[i] > cutoff) {
      out.sigma_min_nonzero = s[i];
      out.rank = i + 1;
    }
  }
  return out;
}

inline SingularExtremes singular_extremes(const LinearOperator& op,
                                          double tol_rank = kDefaultRankTol) {
  return singular_extremes(op.dense(), tol_rank);
}

/// True iff every column of f has a least-squares residual against R(e)
/// below tol times the column norm, i.e. R(F) is contained in R(E).
inline bool range_contained(const MatrixXd& f, const MatrixXd& e, double tol = kDefaultRankTol) {
  if (f.rows() != e.rows()) throw DimensionError("range_contained: codomain mismatch");
  if (f.cols() == 0) return true;
  // Orthonormal basis of R(E) from the SVD, rank decided relative to sigma_max.
  MatrixXd basis;
  if (e.cols() > 0) {
    Eigen::BDCSVD<MatrixXd> svd(e, Eigen::ComputeThinU);
    auto r = singular_extremes(e).rank;
    basis = svd.matrixU().leftCols(r);
  } else {
    basis.resize(e.rows(), 0);
  }
  for (Eigen::Index j = 0; j < f.cols(); ++j) {
    VectorXd col = f.col(j);
    double n = col.norm();
    if (n == 0.0) continue;
    VectorXd resid = col - basis * (basis.transpose() * col);
    if (resid.norm() > tol * n) return false;
  }
  return true;
}

inline bool range_contained(const LinearOperator& f, const LinearOperator& e,
                            double tol = kDefaultRankTol) {
  if (f.out_dim() != e.out_dim()) throw DimensionError("range_contained: codomain mismatch");
  return range_contained(f.dense(), e.dense(), tol);
}

/// Orthonormal basis (columns) of N(M^T) for a dense p x n matrix M.
inline MatrixXd left_null_basis(const MatrixXd& m, double tol_rank = kDefaultRankTol) {
  const Eigen::Index p = m.rows();
  if (m.cols() == 0) return MatrixXd::Identity(p, p);
  Eigen::BDCSVD<MatrixXd> svd(m, Eigen::ComputeFullU);
  auto r = singular_extremes(m, tol_rank).rank;
  return svd.matrixU().rightCols(p - r);
}

/// Orthogonal projection of v onto N(M^T).
inline VectorXd null_projection(const MatrixXd& m, const VectorXd& v,
                                double tol_rank = kDefaultRankTol) {
  if (v.size() != m.rows()) throw DimensionError("null_projection: dimension mismatch");
  MatrixXd n = left_null_basis(m, tol_rank);
  return n * (n.transpose() * v);
}

inline VectorXd null_projection(const LinearOperator& op, const VectorXd& v,
                                double tol_rank = kDefaultRankTol) {
  if (v.size() != op.out_dim()) throw DimensionError("null_projection: dimension mismatch");
  return null_projection(op.dense(), v, tol_rank);
}

/// X -> A X + X A^T on n x n matrices; adjoint V -> A^T V + V A.
inline LinearOperator lyapunov_operator(const MatrixXd& a) {
  if (a.rows() != a.cols()) throw DimensionError("lyapunov_operator: A must be square");
  auto A = std::make_shared<const MatrixXd>(a);
  Shape s = Shape::matrix(a.rows(), a.cols());
  return {s, s,
          [A, s](const VectorXd& u) -> VectorXd {
            auto X = as_matrix(u, s);
            MatrixXd r = (*A) * X + X * A->transpose();
            return vec(r);
          },
          [A, s](const VectorXd& v) -> VectorXd {
            auto V = as_matrix(v, s);
            MatrixXd r = A->transpose() * V + V * (*A);
            return vec(r);
          }};
}

/// X -> (B X B^T) o C for X of size n x n, B of size r x n, C an r x r mask;
/// adjoint V -> B^T (V o C) B.
inline LinearOperator masked_congruence_operator(const MatrixXd& b, const MatrixXd& c) {
  if (c.rows() != b.rows() || c.cols() != b.rows()) {
    throw DimensionError("masked_congruence_operator: mask must be r x r");
  }
  auto B = std::make_shared<const MatrixXd>(b);
  auto C = std::make_shared<const MatrixXd>(c);
  Shape in = Shape::matrix(b.cols(), b.cols());
  Shape out = Shape::matrix(b.rows(), b.rows());
  return {in, out,
          [B, C, in](const VectorXd& u) -> VectorXd {
            auto X = as_matrix(u, in);
            MatrixXd r = ((*B) * X * B->transpose()).cwiseProduct(*C);
            return vec(r);
          },
          [B, C, out](const VectorXd& v) -> VectorXd {
            auto V = as_matrix(v, out);
            MatrixXd r = B->transpose() * V.cwiseProduct(*C) * (*B);
            return vec(r);
          }};
}

}  // namespace palflow
