#include "varlocal/fields.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace varlocal {

Domain::Domain(int dim, std::array<double, 3> lengths, std::array<int, 3> cells,
               std::array<FaceLabel, 6> faces, std::array<double, 3> origin)
    : dim_(dim), lengths_(lengths), cells_(cells), faces_(faces), origin_(origin) {
  if (dim < 1 || dim > 3) throw ValidationError("domain dimension must be 1, 2 or 3");
  for (int a = 0; a < dim; ++a) {
    if (cells_[a] < 1) throw ValidationError("domain resolution must be >= 1 per axis");
    if (!(lengths_[a] > 0.0)) throw ValidationError("domain lengths must be positive");
  }
  for (int a = dim; a < 3; ++a) {
    lengths_[a] = 0.0;
    cells_[a] = 1;
    origin_[a] = 0.0;
  }
}

Domain Domain::unit_box(int dim, int n, FaceLabel all) {
  std::array<FaceLabel, 6> faces;
  faces.fill(all);
  return Domain(dim, {1.0, 1.0, 1.0}, {n, n, n}, faces);
}

Domain Domain::centered_box(int dim, int n, FaceLabel all) {
  std::array<FaceLabel, 6> faces;
  faces.fill(all);
  return Domain(dim, {2.0, 2.0, 2.0}, {n, n, n}, faces, {-1.0, -1.0, -1.0});
}

double Domain::min_spacing() const {
  double h = spacing(0);
  for (int a = 1; a < dim_; ++a) h = std::min(h, spacing(a));
  return h;
}

Index Domain::num_cells() const {
  Index n = 1;
  for (int a = 0; a < dim_; ++a) n *= cells_[a];
  return n;
}

Index Domain::num_nodes() const {
  Index n = 1;
  for (int a = 0; a < dim_; ++a) n *= cells_[a] + 1;
  return n;
}

double Domain::cell_volume() const {
  double v = 1.0;
  for (int a = 0; a < dim_; ++a) v *= spacing(a);
  return v;
}

double Domain::volume() const {
  double v = 1.0;
  for (int a = 0; a < dim_; ++a) v *= lengths_[a];
  return v;
}

std::array<int, 3> Domain::cell_multi(Index c) const {
  std::array<int, 3> mc{0, 0, 0};
  for (int a = 0; a < dim_; ++a) {
    mc[a] = static_cast<int>(c % cells_[a]);
    c /= cells_[a];
  }
  return mc;
}

Index Domain::cell_index(const std::array<int, 3>& mc) const {
  Index c = 0;
  for (int a = dim_ - 1; a >= 0; --a) c = c * cells_[a] + mc[a];
  return c;
}

std::array<int, 3> Domain::node_multi(Index p) const {
  std::array<int, 3> mp{0, 0, 0};
  for (int a = 0; a < dim_; ++a) {
    mp[a] = static_cast<int>(p % (cells_[a] + 1));
    p /= cells_[a] + 1;
  }
  return mp;
}

Index Domain::node_index(const std::array<int, 3>& mp) const {
  Index p = 0;
  for (int a = dim_ - 1; a >= 0; --a) p = p * (cells_[a] + 1) + mp[a];
  return p;
}

Point Domain::node_coord(Index p) const {
  auto mp = node_multi(p);
  Point x = Point::Zero();
  for (int a = 0; a < dim_; ++a) x[a] = origin_[a] + mp[a] * spacing(a);
  return x;
}

Point Domain::cell_center(Index c) const {
  auto mc = cell_multi(c);
  Point x = Point::Zero();
  for (int a = 0; a < dim_; ++a) x[a] = origin_[a] + (mc[a] + 0.5) * spacing(a);
  return x;
}

Index Domain::cell_node(Index c, int corner) const {
  auto mc = cell_multi(c);
  std::array<int, 3> mp{0, 0, 0};
  for (int a = 0; a < dim_; ++a) mp[a] = mc[a] + ((corner >> a) & 1);
  return node_index(mp);
}

bool Domain::has_dirichlet_face() const {
  for (int a = 0; a < dim_; ++a)
    for (int s = 0; s < 2; ++s)
      if (face(a, s) == FaceLabel::dirichlet) return true;
  return false;
}

bool Domain::node_on_face(Index p, int axis, int side) const {
  auto mp = node_multi(p);
  return mp[axis] == (side == 0 ? 0 : cells_[axis]);
}

bool Domain::node_on_boundary(Index p) const {
  auto mp = node_multi(p);
  for (int a = 0; a < dim_; ++a)
    if (mp[a] == 0 || mp[a] == cells_[a]) return true;
  return false;
}

bool Domain::node_dirichlet(Index p) const {
  for (int a = 0; a < dim_; ++a)
    for (int s = 0; s < 2; ++s)
      if (face(a, s) == FaceLabel::dirichlet && node_on_face(p, a, s)) return true;
  return false;
}

bool Domain::node_junction(Index p) const {
  if (!node_dirichlet(p)) return false;
  for (int a = 0; a < dim_; ++a)
    for (int s = 0; s < 2; ++s)
      if (face(a, s) == FaceLabel::free_face && node_on_face(p, a, s)) return true;
  return false;
}

std::vector<Index> Domain::junction_nodes() const {
  std::vector<Index> out;
  for (Index p = 0; p < num_nodes(); ++p)
    if (node_junction(p)) out.push_back(p);
  return out;
}

Index Domain::locate_cell(const Point& x) const {
  std::array<int, 3> mc{0, 0, 0};
  for (int a = 0; a < dim_; ++a) {
    int i = static_cast<int>(std::floor((x[a] - origin_[a]) / spacing(a)));
    mc[a] = std::clamp(i, 0, cells_[a] - 1);
  }
  return cell_index(mc);
}

bool Domain::same_grid(const Domain& o) const {
  if (dim_ != o.dim_) return false;
  for (int a = 0; a < dim_; ++a)
    if (cells_[a] != o.cells_[a] || lengths_[a] != o.lengths_[a] || origin_[a] != o.origin_[a])
      return false;
  return true;
}

const GaussRule& gauss_rule(int npts) {
  static const std::array<GaussRule, 5> rules = [] {
    std::array<GaussRule, 5> r;
    auto fill = [&](int n, std::vector<double> xs, std::vector<double> ws) {
      GaussRule g;
      for (size_t i = 0; i < xs.size(); ++i) {
        g.nodes.push_back(0.5 * (1.0 + xs[i]));
        g.weights.push_back(0.5 * ws[i]);
      }
      r[n - 1] = g;
    };
    fill(1, {0.0}, {2.0});
    const double s3 = 1.0 / std::sqrt(3.0);
    fill(2, {-s3, s3}, {1.0, 1.0});
    const double s35 = std::sqrt(3.0 / 5.0);
    fill(3, {-s35, 0.0, s35}, {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0});
    fill(4, {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526},
         {0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538});
    fill(5,
         {-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831, 0.9061798459386640},
         {0.2369268850561891, 0.4786286704993665, 0.5688888888888889, 0.4786286704993665,
          0.2369268850561891});
    return r;
  }();
  if (npts < 1 || npts > 5) throw ValidationError("quadrature order must be 1..5 points per axis");
  return rules[npts - 1];
}

CellQuadrature CellQuadrature::make(const Domain& dom, int qpa) {
  const GaussRule& g = gauss_rule(qpa);
  CellQuadrature cq;
  cq.dim = dom.dim();
  cq.qpa = qpa;
  cq.ncorner = 1 << cq.dim;
  cq.nq = 1;
  for (int a = 0; a < cq.dim; ++a) cq.nq *= qpa;

  cq.weight.resize(cq.nq);
  cq.local.resize(cq.nq * cq.dim);
  cq.shape.resize(cq.nq * cq.ncorner);
  cq.dshape.resize(cq.nq * cq.ncorner * cq.dim);

  const double vol = dom.cell_volume();
  for (int q = 0; q < cq.nq; ++q) {
    int rem = q;
    double w = vol;
    std::array<double, 3> t{0, 0, 0};
    for (int a = 0; a < cq.dim; ++a) {
      int ia = rem % qpa;
      rem /= qpa;
      t[a] = g.nodes[ia];
      w *= g.weights[ia];
      cq.local[q * cq.dim + a] = t[a];
    }
    cq.weight[q] = w;
    for (int b = 0; b < cq.ncorner; ++b) {
      double n = 1.0;
      for (int a = 0; a < cq.dim; ++a) n *= ((b >> a) & 1) ? t[a] : 1.0 - t[a];
      cq.shape[q * cq.ncorner + b] = n;
      for (int a = 0; a < cq.dim; ++a) {
        double dn = ((b >> a) & 1) ? 1.0 : -1.0;
        dn /= dom.spacing(a);
        for (int c = 0; c < cq.dim; ++c) {
          if (c == a) continue;
          dn *= ((b >> c) & 1) ? t[c] : 1.0 - t[c];
        }
        cq.dshape[(q * cq.ncorner + b) * cq.dim + a] = dn;
      }
    }
  }
  return cq;
}

DiscreteField::DiscreteField(Domain dom, int m)
    : dom_(std::move(dom)), m_(m), vals_(Eigen::MatrixXd::Zero(dom_.num_nodes(), m)) {}

DiscreteField DiscreteField::from_function(
    const Domain& dom, int m, const std::function<Eigen::VectorXd(const Point&)>& f) {
  DiscreteField out(dom, m);
  for (Index p = 0; p < dom.num_nodes(); ++p) {
    Eigen::VectorXd v = f(dom.node_coord(p));
    if (v.size() != m) throw ValidationError("field function returned wrong component count");
    out.vals_.row(p) = v.transpose();
  }
  return out;
}

namespace {
// Local coordinates of x inside cell c, clamped to [0,1].
std::array<double, 3> local_coords(const Domain& dom, Index c, const Point& x) {
  auto mc = dom.cell_multi(c);
  std::array<double, 3> t{0, 0, 0};
  for (int a = 0; a < dom.dim(); ++a) {
    double lo = dom.origin(a) + mc[a] * dom.spacing(a);
    t[a] = std::clamp((x[a] - lo) / dom.spacing(a), 0.0, 1.0);
  }
  return t;
}
}  // namespace

Eigen::VectorXd DiscreteField::interpolate(const Point& x) const {
  Index c = dom_.locate_cell(x);
  auto t = local_coords(dom_, c, x);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(m_);
  for (int b = 0; b < (1 << dom_.dim()); ++b) {
    double n = 1.0;
    for (int a = 0; a < dom_.dim(); ++a) n *= ((b >> a) & 1) ? t[a] : 1.0 - t[a];
    v += n * vals_.row(dom_.cell_node(c, b)).transpose();
  }
  return v;
}

Matrix DiscreteField::gradient_at(const Point& x) const {
  Index c = dom_.locate_cell(x);
  auto t = local_coords(dom_, c, x);
  Matrix G = Matrix::Zero(m_, dom_.dim());
  for (int b = 0; b < (1 << dom_.dim()); ++b) {
    Eigen::VectorXd nodal = vals_.row(dom_.cell_node(c, b)).transpose();
    for (int a = 0; a < dom_.dim(); ++a) {
      double dn = ((b >> a) & 1) ? 1.0 : -1.0;
      dn /= dom_.spacing(a);
      for (int cc = 0; cc < dom_.dim(); ++cc) {
        if (cc == a) continue;
        dn *= ((b >> cc) & 1) ? t[cc] : 1.0 - t[cc];
      }
      G.col(a) += dn * nodal;
    }
  }
  return G;
}

DiscreteField DiscreteField::scaled(double s) const {
  DiscreteField out = *this;
  out.vals_ *= s;
  return out;
}

DiscreteField DiscreteField::plus(const DiscreteField& o, double coeff) const {
  if (!dom_.same_grid(o.dom_) || m_ != o.m_)
    throw ValidationError("field addition requires matching grids and component counts");
  DiscreteField out = *this;
  out.vals_ += coeff * o.vals_;
  return out;
}

double DiscreteField::max_dirichlet_trace() const {
  double mx = 0.0;
  for (Index p = 0; p < dom_.num_nodes(); ++p)
    if (dom_.node_dirichlet(p)) mx = std::max(mx, vals_.row(p).cwiseAbs().maxCoeff());
  return mx;
}

GradientField::GradientField(Domain dom, int m, int qpa)
    : dom_(std::move(dom)), m_(m), qpa_(qpa), quad_(CellQuadrature::make(dom_, qpa)) {
  data_.assign(dom_.num_cells() * quad_.nq, Matrix::Zero(m_, dom_.dim()));
}

Point GradientField::quad_point(Index cell, int q) const {
  auto mc = dom_.cell_multi(cell);
  Point x = Point::Zero();
  for (int a = 0; a < dom_.dim(); ++a)
    x[a] = dom_.origin(a) + (mc[a] + quad_.local[q * quad_.dim + a]) * dom_.spacing(a);
  return x;
}

double GradientField::grad_l2sq() const {
  std::vector<double> terms;
  terms.reserve(data_.size());
  for (Index c = 0; c < dom_.num_cells(); ++c)
    for (int q = 0; q < quad_.nq; ++q) terms.push_back(quad_.weight[q] * at(c, q).squaredNorm());
  return neumaier_sum(terms);
}

double GradientField::grad_linf() const {
  double mx = 0.0;
  for (const Matrix& g : data_) mx = std::max(mx, g.norm());
  return mx;
}

GradientField gradient(const DiscreteField& y, int qpa) {
  const Domain& dom = y.domain();
  GradientField gf(dom, y.m(), qpa);
  const CellQuadrature& cq = gf.quadrature();
  const int nc = cq.ncorner;
  std::vector<Eigen::VectorXd> corner(nc);
  for (Index c = 0; c < dom.num_cells(); ++c) {
    for (int b = 0; b < nc; ++b) corner[b] = y.node_value(dom.cell_node(c, b));
    for (int q = 0; q < cq.nq; ++q) {
      Matrix& G = gf.at(c, q);
      G.setZero();
      for (int b = 0; b < nc; ++b)
        for (int a = 0; a < dom.dim(); ++a)
          G.col(a) += cq.dshape[(q * nc + b) * cq.dim + a] * corner[b];
    }
  }
  return gf;
}

double neumaier_sum(const std::vector<double>& terms) {
  double sum = 0.0, comp = 0.0;
  for (double t : terms) {
    double s = sum + t;
    if (std::abs(sum) >= std::abs(t))
      comp += (sum - s) + t;
    else
      comp += (t - s) + sum;
    sum = s;
  }
  return sum + comp;
}

double integrate(const Domain& dom, int qpa, const std::vector<double>& samples) {
  CellQuadrature cq = CellQuadrature::make(dom, qpa);
  if (static_cast<Index>(samples.size()) != dom.num_cells() * cq.nq)
    throw ValidationError("integrate: sample count does not match cells x quadrature points");
  std::vector<double> terms(samples.size());
  for (Index c = 0; c < dom.num_cells(); ++c)
    for (int q = 0; q < cq.nq; ++q)
      terms[c * cq.nq + q] = cq.weight[q] * samples[c * cq.nq + q];
  return neumaier_sum(terms);
}

double integrate(const Domain& dom, int qpa,
                 const std::function<double(Index, int, const Point&)>& f) {
  GradientField probe(dom, 1, qpa);  // reuse quadrature-point bookkeeping
  const CellQuadrature& cq = probe.quadrature();
  std::vector<double> terms;
  terms.reserve(dom.num_cells() * cq.nq);
  for (Index c = 0; c < dom.num_cells(); ++c)
    for (int q = 0; q < cq.nq; ++q)
      terms.push_back(cq.weight[q] * f(c, q, probe.quad_point(c, q)));
  return neumaier_sum(terms);
}

FieldNorms norms(const DiscreteField& y, int qpa) {
  GradientField g = gradient(y, qpa);
  FieldNorms n;
  n.grad_l2 = std::sqrt(std::max(0.0, g.grad_l2sq()));
  n.grad_linf = g.grad_linf();
  n.value_linf = y.values().size() ? y.values().cwiseAbs().maxCoeff() : 0.0;
  return n;
}

RescaledVariation rescale_variation(const DiscreteField& phi, int qpa) {
  double l2sq = gradient(phi, qpa).grad_l2sq();
  double alpha = std::sqrt(std::max(0.0, l2sq));
  if (alpha == 0.0) throw ZeroVariation("rescale_variation: ||grad phi||_2 = 0");
  RescaledVariation r;
  r.alpha = alpha;
  r.psi = phi.scaled(1.0 / alpha);
  return r;
}

BoundaryData BoundaryData::from_affine(const Domain& dom, const Matrix& A,
                                       const Eigen::VectorXd& b) {
  BoundaryData bd;
  for (Index p = 0; p < dom.num_nodes(); ++p)
    if (dom.node_dirichlet(p)) bd.nodes.push_back(p);
  bd.values.resize(static_cast<Index>(bd.nodes.size()), A.rows());
  for (size_t i = 0; i < bd.nodes.size(); ++i) {
    Point x = dom.node_coord(bd.nodes[i]);
    Eigen::VectorXd v = A * x.head(dom.dim()) + b;
    bd.values.row(static_cast<Index>(i)) = v.transpose();
  }
  return bd;
}

namespace {
std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

void write_field_csv(const std::string& path, const DiscreteField& f) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "node,x,y,z";
  for (int i = 0; i < f.m(); ++i) os << ",c" << i;
  os << "\n";
  for (Index p = 0; p < f.num_nodes(); ++p) {
    Point x = f.domain().node_coord(p);
    os << p << "," << fmt_double(x[0]) << "," << fmt_double(x[1]) << "," << fmt_double(x[2]);
    for (int i = 0; i < f.m(); ++i) os << "," << fmt_double(f.value(p, i));
    os << "\n";
  }
  if (!os) throw IoError("write failed: " + path);
}

DiscreteField read_field_csv(const std::string& path, const Domain& dom, int m) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty field csv: " + path);
  DiscreteField f(dom, m);
  Index count = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    std::vector<double> row;
    while (std::getline(ss, tok, ',')) row.push_back(std::stod(tok));
    if (static_cast<int>(row.size()) != 4 + m)
      throw ParseError("field csv row has wrong column count: " + path);
    Index p = static_cast<Index>(row[0]);
    if (p < 0 || p >= dom.num_nodes()) throw ParseError("field csv node index out of range");
    for (int i = 0; i < m; ++i) f.value(p, i) = row[4 + i];
    ++count;
  }
  if (count != dom.num_nodes()) throw ParseError("field csv row count does not match grid");
  return f;
}

void write_field_raw(const std::string& path, const DiscreteField& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  const Domain& d = f.domain();
  os.write("VLF1", 4);
  auto wi = [&](std::int32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
  auto wd = [&](double v) { os.write(reinterpret_cast<const char*>(&v), 8); };
  wi(d.dim());
  wi(f.m());
  for (int a = 0; a < d.dim(); ++a) wi(d.cells(a));
  for (int a = 0; a < d.dim(); ++a) wd(d.length(a));
  for (int a = 0; a < d.dim(); ++a) wd(d.origin(a));
  for (Index p = 0; p < f.num_nodes(); ++p)
    for (int i = 0; i < f.m(); ++i) wd(f.value(p, i));
  if (!os) throw IoError("write failed: " + path);
}

DiscreteField read_field_raw(const std::string& path, const std::array<FaceLabel, 6>& faces) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "VLF1", 4) != 0) throw ParseError("bad field file magic: " + path);
  auto ri = [&]() {
    std::int32_t v;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  auto rd = [&]() {
    double v;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  int dim = ri(), m = ri();
  if (!is || dim < 1 || dim > 3 || m < 1) throw ParseError("bad field file header: " + path);
  std::array<int, 3> cells{1, 1, 1};
  std::array<double, 3> lengths{0, 0, 0}, origin{0, 0, 0};
  for (int a = 0; a < dim; ++a) cells[a] = ri();
  for (int a = 0; a < dim; ++a) lengths[a] = rd();
  for (int a = 0; a < dim; ++a) origin[a] = rd();
  Domain dom(dim, lengths, cells, faces, origin);
  DiscreteField f(dom, m);
  for (Index p = 0; p < dom.num_nodes(); ++p)
    for (int i = 0; i < m; ++i) f.value(p, i) = rd();
  if (!is) throw ParseError("truncated field file: " + path);
  return f;
}

}  // namespace varlocal
