#include "varlocal/quadtensor.hpp"

namespace varlocal {

QuadTensor QuadTensor::identity(int m, int d) {
  QuadTensor t(m, d);
  t.flat_.setIdentity();
  return t;
}

QuadTensor QuadTensor::from_flat(int m, int d, const Eigen::MatrixXd& M) {
  QuadTensor t(m, d);
  t.flat_ = 0.5 * (M + M.transpose());
  return t;
}

QuadTensor QuadTensor::diagonal(int m, int d, const Eigen::VectorXd& weights) {
  QuadTensor t(m, d);
  t.flat_ = weights.asDiagonal();
  return t;
}

void QuadTensor::set_sym(int i, int j, int k, int l, double v) {
  flat_(i * d_ + j, k * d_ + l) = v;
  flat_(k * d_ + l, i * d_ + j) = v;
}

double QuadTensor::quadratic_form(const Matrix& F) const {
  Eigen::VectorXd v = vectorize(F);
  return v.dot(flat_ * v);
}

Matrix QuadTensor::apply(const Matrix& F) const {
  return unvectorize(m_, d_, flat_ * vectorize(F));
}

Eigen::VectorXd vectorize(const Matrix& F) {
  Eigen::VectorXd v(F.rows() * F.cols());
  for (int i = 0; i < F.rows(); ++i)
    for (int j = 0; j < F.cols(); ++j) v(i * F.cols() + j) = F(i, j);
  return v;
}

Matrix unvectorize(int m, int d, const Eigen::VectorXd& v) {
  Matrix F(m, d);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) F(i, j) = v(i * d + j);
  return F;
}

}  // namespace varlocal
