#pragma once
#include <Eigen/Dense>

namespace varlocal {

// Deformation gradients and their perturbations are m x d real matrices.
using Matrix = Eigen::MatrixXd;

// Spatial points. Coordinates beyond the domain dimension are zero.
using Point = Eigen::Vector3d;

inline double frob_inner(const Matrix& a, const Matrix& b) {
  return (a.array() * b.array()).sum();
}

// Symmetric fourth-order tensor L[i,j,k,l] acting on m x d matrices, stored as a
// symmetric (m*d) x (m*d) matrix over the row-major pair index (i,j) -> i*d + j.
// The symmetry L[i,j,k,l] = L[k,l,i,j] holds by construction.
class QuadTensor {
 public:
  QuadTensor() : m_(0), d_(0) {}
  QuadTensor(int m, int d) : m_(m), d_(d), flat_(Eigen::MatrixXd::Zero(m * d, m * d)) {}

  static QuadTensor identity(int m, int d);
  // Symmetrizes the input: flat = (M + M^T)/2.
  static QuadTensor from_flat(int m, int d, const Eigen::MatrixXd& M);
  // Diagonal tensor with per-entry weights w[i*d+j] on the (i,j) directions.
  static QuadTensor diagonal(int m, int d, const Eigen::VectorXd& weights);

  int rows() const { return m_; }
  int cols() const { return d_; }

  double entry(int i, int j, int k, int l) const { return flat_(i * d_ + j, k * d_ + l); }
  // Writes the (i,j,k,l) and (k,l,i,j) slots together so symmetry is preserved.
  void set_sym(int i, int j, int k, int l, double v);

  // (L F, F)
  double quadratic_form(const Matrix& F) const;
  // L F as an m x d matrix.
  Matrix apply(const Matrix& F) const;

  const Eigen::MatrixXd& flat() const { return flat_; }
  double max_asymmetry() const { return (flat_ - flat_.transpose()).cwiseAbs().maxCoeff(); }
  double frob_norm() const { return flat_.norm(); }

  QuadTensor& operator+=(const QuadTensor& o) { flat_ += o.flat_; return *this; }
  QuadTensor& operator*=(double s) { flat_ *= s; return *this; }
  friend QuadTensor operator+(QuadTensor a, const QuadTensor& b) { a += b; return a; }
  friend QuadTensor operator*(double s, QuadTensor t) { t *= s; return t; }

 private:
  int m_, d_;
  Eigen::MatrixXd flat_;
};

// vec(F) with the same pair index used by QuadTensor.
Eigen::VectorXd vectorize(const Matrix& F);
Matrix unvectorize(int m, int d, const Eigen::VectorXd& v);

}  // namespace varlocal
