#pragma once
#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "varlocal/errors.hpp"
#include "varlocal/quadtensor.hpp"

namespace varlocal {

using Index = std::int64_t;

enum class FaceLabel { dirichlet, free_face };

// Axis-aligned box [origin, origin + lengths] with a uniform grid per axis and a
// Dirichlet/free label on each of the 2*dim faces.  Face slot = axis*2 + side,
// side 0 = low coordinate, side 1 = high coordinate.
class Domain {
 public:
  Domain() = default;
  Domain(int dim, std::array<double, 3> lengths, std::array<int, 3> cells,
         std::array<FaceLabel, 6> faces, std::array<double, 3> origin = {0.0, 0.0, 0.0});

  // Unit box [0,1]^dim with n cells per axis and one label on every face.
  static Domain unit_box(int dim, int n, FaceLabel all = FaceLabel::dirichlet);
  // Box [-1,1]^dim, used by probe geometries.
  static Domain centered_box(int dim, int n, FaceLabel all = FaceLabel::dirichlet);

  int dim() const { return dim_; }
  double length(int axis) const { return lengths_[axis]; }
  double origin(int axis) const { return origin_[axis]; }
  int cells(int axis) const { return cells_[axis]; }
  int nodes(int axis) const { return cells_[axis] + 1; }
  double spacing(int axis) const { return lengths_[axis] / cells_[axis]; }
  double min_spacing() const;

  Index num_cells() const;
  Index num_nodes() const;
  double cell_volume() const;
  double volume() const;

  std::array<int, 3> cell_multi(Index c) const;
  Index cell_index(const std::array<int, 3>& mc) const;
  std::array<int, 3> node_multi(Index p) const;
  Index node_index(const std::array<int, 3>& mp) const;

  Point node_coord(Index p) const;
  Point cell_center(Index c) const;
  // Node of cell c at corner b (bit a of b = high side along axis a).
  Index cell_node(Index c, int corner) const;

  FaceLabel face(int axis, int side) const { return faces_[axis * 2 + side]; }
  bool has_dirichlet_face() const;
  bool node_on_face(Index p, int axis, int side) const;
  bool node_on_boundary(Index p) const;
  // Nodes on any Dirichlet face carry prescribed values; a node lying on both a
  // Dirichlet and a free face is assigned to the Dirichlet part.
  bool node_dirichlet(Index p) const;
  // Dirichlet nodes that also touch a free face (the convention above applied).
  bool node_junction(Index p) const;
  std::vector<Index> junction_nodes() const;

  // Cell containing x (clamped to the grid on boundary/outside points).
  Index locate_cell(const Point& x) const;

  bool same_grid(const Domain& o) const;

 private:
  int dim_ = 0;
  std::array<double, 3> lengths_{};
  std::array<int, 3> cells_{};
  std::array<FaceLabel, 6> faces_{};
  std::array<double, 3> origin_{};
};

// Tensor Gauss-Legendre rule on [0,1], 1..5 points.
struct GaussRule {
  std::vector<double> nodes;    // in (0,1)
  std::vector<double> weights;  // sum to 1
};
const GaussRule& gauss_rule(int npts);

// Precomputed multilinear shape data at the tensor quadrature points of one cell.
// Identical for every cell of a uniform grid.
struct CellQuadrature {
  int dim = 0, qpa = 0, nq = 0, ncorner = 0;
  std::vector<double> weight;        // nq, includes the cell volume factor
  std::vector<double> local;         // nq*dim local coordinates in [0,1]
  std::vector<double> shape;         // nq*ncorner
  std::vector<double> dshape;        // nq*ncorner*dim, physical-space gradients
  static CellQuadrature make(const Domain& dom, int qpa);
};

// Nodal field with values in R^m, interpreted through cellwise multilinear
// interpolation.
class DiscreteField {
 public:
  DiscreteField() = default;
  DiscreteField(Domain dom, int m);
  static DiscreteField from_function(const Domain& dom, int m,
                                     const std::function<Eigen::VectorXd(const Point&)>& f);

  const Domain& domain() const { return dom_; }
  int m() const { return m_; }
  Index num_nodes() const { return vals_.rows(); }

  double value(Index node, int comp) const { return vals_(node, comp); }
  double& value(Index node, int comp) { return vals_(node, comp); }
  Eigen::VectorXd node_value(Index node) const { return vals_.row(node).transpose(); }
  void set_node_value(Index node, const Eigen::VectorXd& v) { vals_.row(node) = v.transpose(); }

  const Eigen::MatrixXd& values() const { return vals_; }
  Eigen::MatrixXd& values() { return vals_; }

  Eigen::VectorXd interpolate(const Point& x) const;
  // Gradient of the multilinear interpolant at x (inside the cell containing x).
  Matrix gradient_at(const Point& x) const;

  DiscreteField scaled(double s) const;
  DiscreteField plus(const DiscreteField& o, double coeff = 1.0) const;

  double max_dirichlet_trace() const;  // max |value| over Dirichlet nodes

 private:
  Domain dom_;
  int m_ = 0;
  Eigen::MatrixXd vals_;  // num_nodes x m
};

// Per-cell, per-quadrature-point gradients of a discrete field.
class GradientField {
 public:
  GradientField() = default;
  GradientField(Domain dom, int m, int qpa);

  const Domain& domain() const { return dom_; }
  int m() const { return m_; }
  int qpa() const { return qpa_; }
  int nq() const { return quad_.nq; }
  const CellQuadrature& quadrature() const { return quad_; }

  const Matrix& at(Index cell, int q) const { return data_[cell * quad_.nq + q]; }
  Matrix& at(Index cell, int q) { return data_[cell * quad_.nq + q]; }
  double weight(int q) const { return quad_.weight[q]; }
  Point quad_point(Index cell, int q) const;

  double grad_l2sq() const;
  double grad_linf() const;

 private:
  Domain dom_;
  int m_ = 0, qpa_ = 0;
  CellQuadrature quad_;
  std::vector<Matrix> data_;
};

GradientField gradient(const DiscreteField& y, int qpa = 2);

// Compensated (Neumaier) sum of per-(cell, quadrature point) samples against the
// tensor Gauss weights.  samples.size() == num_cells * qpa^dim, cell-major.
double integrate(const Domain& dom, int qpa, const std::vector<double>& samples);
double integrate(const Domain& dom, int qpa,
                 const std::function<double(Index cell, int q, const Point& x)>& f);
double neumaier_sum(const std::vector<double>& terms);

struct FieldNorms {
  double grad_l2 = 0.0;
  double grad_linf = 0.0;
  double value_linf = 0.0;
};
FieldNorms norms(const DiscreteField& y, int qpa = 2);

struct RescaledVariation {
  double alpha = 0.0;   // ||grad phi||_2
  DiscreteField psi;    // phi / alpha
};
// Throws ZeroVariation when ||grad phi||_2 = 0.
RescaledVariation rescale_variation(const DiscreteField& phi, int qpa = 2);

// Prescribed values on the Dirichlet nodes of a domain.
struct BoundaryData {
  std::vector<Index> nodes;
  Eigen::MatrixXd values;  // nodes.size() x m
  static BoundaryData from_affine(const Domain& dom, const Matrix& A, const Eigen::VectorXd& b);
};

// CSV: header "node,x,y,z,c0,...", one row per node.  The raw format is
// self-describing: magic "VLF1", dim, m, cells per axis, lengths, origin, then the
// nodal values as little-endian float64, node-major.
void write_field_csv(const std::string& path, const DiscreteField& f);
DiscreteField read_field_csv(const std::string& path, const Domain& dom, int m);
void write_field_raw(const std::string& path, const DiscreteField& f);
DiscreteField read_field_raw(const std::string& path,
                             const std::array<FaceLabel, 6>& faces);

}  // namespace varlocal
