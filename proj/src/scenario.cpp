#include "varlocal/scenario.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include "varlocal/util.hpp"

namespace varlocal {

namespace {

using nlohmann::json;

const char* kFaceKeys[6] = {"x_low", "x_high", "y_low", "y_high", "z_low", "z_high"};

void check_keys(const json& j, const std::string& path,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ValidationError(path + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) ok = true;
    if (!ok) throw ParseError("unknown key '" + it.key() + "' in " + path);
  }
}

const json& need(const json& j, const std::string& path, const char* key) {
  if (!j.contains(key)) throw ValidationError(path + "." + key + ": missing");
  return j.at(key);
}

double num_at(const json& v, const std::string& path) {
  if (!v.is_number()) throw ValidationError(path + ": expected a number");
  return v.get<double>();
}

int int_at(const json& v, const std::string& path) {
  if (!v.is_number_integer()) throw ValidationError(path + ": expected an integer");
  return v.get<int>();
}

bool bool_at(const json& v, const std::string& path) {
  if (!v.is_boolean()) throw ValidationError(path + ": expected a boolean");
  return v.get<bool>();
}

std::string str_at(const json& v, const std::string& path) {
  if (!v.is_string()) throw ValidationError(path + ": expected a string");
  return v.get<std::string>();
}

std::vector<double> dvec_at(const json& v, const std::string& path) {
  if (!v.is_array()) throw ValidationError(path + ": expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(num_at(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

std::vector<int> ivec_at(const json& v, const std::string& path) {
  if (!v.is_array()) throw ValidationError(path + ": expected an array of integers");
  std::vector<int> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(int_at(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

Point point_at(const json& v, int dim, const std::string& path) {
  const std::vector<double> c = dvec_at(v, path);
  if (static_cast<int>(c.size()) != dim)
    throw ValidationError(path + ": expected " + std::to_string(dim) + " coordinates");
  Point p = Point::Zero();
  for (int a = 0; a < dim; ++a) p[a] = c[a];
  return p;
}

Matrix mat_at(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) throw ValidationError(path + ": expected an array of rows");
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < v.size(); ++i)
    rows.push_back(dvec_at(v[i], path + "[" + std::to_string(i) + "]"));
  const std::size_t cols = rows[0].size();
  for (const auto& r : rows)
    if (r.size() != cols) throw ValidationError(path + ": ragged rows");
  Matrix M(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols; ++j) M(i, j) = rows[i][j];
  return M;
}

json point_json(const Point& p, int dim) {
  json a = json::array();
  for (int i = 0; i < dim; ++i) a.push_back(p[i]);
  return a;
}

json matrix_json(const Matrix& M) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) r.push_back(M(i, j));
    rows.push_back(r);
  }
  return rows;
}

Domain parse_domain(const json& jd) {
  check_keys(jd, "domain", {"dim", "cells", "lengths", "origin", "faces"});
  const int dim = int_at(need(jd, "domain", "dim"), "domain.dim");
  if (dim < 1 || dim > 3) throw ValidationError("domain.dim: must be 1, 2 or 3");

  const std::vector<int> cells = ivec_at(need(jd, "domain", "cells"), "domain.cells");
  if (static_cast<int>(cells.size()) != dim)
    throw ValidationError("domain.cells: one entry per axis required");

  std::vector<double> lengths(dim, 1.0), origin(dim, 0.0);
  if (jd.contains("lengths")) {
    lengths = dvec_at(jd.at("lengths"), "domain.lengths");
    if (static_cast<int>(lengths.size()) != dim)
      throw ValidationError("domain.lengths: one entry per axis required");
  }
  if (jd.contains("origin")) {
    origin = dvec_at(jd.at("origin"), "domain.origin");
    if (static_cast<int>(origin.size()) != dim)
      throw ValidationError("domain.origin: one entry per axis required");
  }

  std::array<FaceLabel, 6> faces;
  faces.fill(FaceLabel::dirichlet);
  if (jd.contains("faces")) {
    const json& jf = jd.at("faces");
    check_keys(jf, "domain.faces",
               {kFaceKeys[0], kFaceKeys[1], kFaceKeys[2], kFaceKeys[3], kFaceKeys[4], kFaceKeys[5]});
    for (int slot = 0; slot < 6; ++slot) {
      if (!jf.contains(kFaceKeys[slot])) continue;
      if (slot / 2 >= dim)
        throw ValidationError(std::string("domain.faces.") + kFaceKeys[slot] +
                              ": domain has no such axis");
      const std::string lab = str_at(jf.at(kFaceKeys[slot]),
                                     std::string("domain.faces.") + kFaceKeys[slot]);
      if (lab == "dirichlet")
        faces[slot] = FaceLabel::dirichlet;
      else if (lab == "free")
        faces[slot] = FaceLabel::free_face;
      else
        throw ValidationError(std::string("domain.faces.") + kFaceKeys[slot] +
                              ": expected 'dirichlet' or 'free'");
    }
  }

  std::array<double, 3> alen{0, 0, 0}, aor{0, 0, 0};
  std::array<int, 3> acell{1, 1, 1};
  for (int a = 0; a < dim; ++a) {
    alen[a] = lengths[a];
    aor[a] = origin[a];
    acell[a] = cells[a];
  }
  return Domain(dim, alen, acell, faces, aor);
}

Lagrangian parse_lagrangian(const json& jl, int m, int d, json& echo) {
  const std::string kind = str_at(need(jl, "lagrangian", "kind"), "lagrangian.kind");
  echo["kind"] = kind;
  if (kind == "quad") {
    check_keys(jl, "lagrangian", {"kind", "c"});
    const double c = jl.contains("c") ? num_at(jl.at("c"), "lagrangian.c") : 1.0;
    echo["c"] = c;
    return make_quadratic(m, d, c);
  }
  if (kind == "det2") {
    check_keys(jl, "lagrangian", {"kind"});
    if (m != 2 || d != 2) throw ValidationError("lagrangian.kind: det2 needs m = d = 2");
    return make_det2();
  }
  if (kind == "poly") {
    check_keys(jl, "lagrangian", {"kind", "monomials"});
    const json& jm = need(jl, "lagrangian", "monomials");
    if (!jm.is_array() || jm.empty())
      throw ValidationError("lagrangian.monomials: nonempty array required");
    std::vector<Monomial> monos;
    json em = json::array();
    for (std::size_t i = 0; i < jm.size(); ++i) {
      const std::string p = "lagrangian.monomials[" + std::to_string(i) + "]";
      check_keys(jm[i], p, {"coeff", "powers"});
      Monomial mono;
      mono.coeff = num_at(need(jm[i], p, "coeff"), p + ".coeff");
      mono.powers = ivec_at(need(jm[i], p, "powers"), p + ".powers");
      if (static_cast<int>(mono.powers.size()) != m * d)
        throw ValidationError(p + ".powers: needs m*d entries");
      for (int pw : mono.powers)
        if (pw < 0) throw ValidationError(p + ".powers: exponents must be nonnegative");
      em.push_back(json{{"coeff", mono.coeff}, {"powers", mono.powers}});
      monos.push_back(std::move(mono));
    }
    echo["monomials"] = em;
    return make_polynomial(m, d, std::move(monos));
  }
  if (kind == "minquad") {
    check_keys(jl, "lagrangian", {"kind", "branches"});
    const json& jb = need(jl, "lagrangian", "branches");
    if (!jb.is_array() || jb.empty())
      throw ValidationError("lagrangian.branches: nonempty array required");
    std::vector<QuadBranch> branches;
    json eb = json::array();
    for (std::size_t i = 0; i < jb.size(); ++i) {
      const std::string p = "lagrangian.branches[" + std::to_string(i) + "]";
      check_keys(jb[i], p, {"shift", "offset", "curvature"});
      QuadBranch br;
      br.shift = mat_at(need(jb[i], p, "shift"), p + ".shift");
      if (br.shift.rows() != m || br.shift.cols() != d)
        throw ValidationError(p + ".shift: needs shape m x d");
      br.offset = jb[i].contains("offset") ? num_at(jb[i]["offset"], p + ".offset") : 0.0;
      br.curvature =
          jb[i].contains("curvature") ? num_at(jb[i]["curvature"], p + ".curvature") : 1.0;
      if (!(br.curvature > 0.0)) throw ValidationError(p + ".curvature: must be positive");
      eb.push_back(json{{"shift", matrix_json(br.shift)},
                        {"offset", br.offset},
                        {"curvature", br.curvature}});
      branches.push_back(std::move(br));
    }
    echo["branches"] = eb;
    return make_min_quadratic(m, d, std::move(branches));
  }
  if (kind == "quadform") {
    check_keys(jl, "lagrangian", {"kind", "diag", "flat"});
    if (jl.contains("diag") == jl.contains("flat"))
      throw ValidationError("lagrangian: quadform needs exactly one of 'diag' or 'flat'");
    QuadTensor L(m, d);
    if (jl.contains("diag")) {
      const std::vector<double> w = dvec_at(jl.at("diag"), "lagrangian.diag");
      if (static_cast<int>(w.size()) != m * d)
        throw ValidationError("lagrangian.diag: needs m*d entries");
      Eigen::VectorXd wv = Eigen::Map<const Eigen::VectorXd>(w.data(), w.size());
      L = QuadTensor::diagonal(m, d, wv);
      echo["diag"] = w;
    } else {
      const Matrix M = mat_at(jl.at("flat"), "lagrangian.flat");
      if (M.rows() != m * d || M.cols() != m * d)
        throw ValidationError("lagrangian.flat: needs shape (m*d) x (m*d)");
      L = QuadTensor::from_flat(m, d, M);
      echo["flat"] = matrix_json(M);
    }
    return make_quadratic_form(m, d, L);
  }
  throw ValidationError("lagrangian.kind: unknown kind '" + kind + "'");
}

// Free-face membership of a boundary point; returns (axis, sign).
std::array<int, 2> free_face_of(const Domain& dom, const Point& p, const std::string& path) {
  for (int a = 0; a < dom.dim(); ++a) {
    const double tol = 1e-12 * (1.0 + dom.length(a));
    for (int side = 0; side < 2; ++side) {
      const double face = dom.origin(a) + (side == 1 ? dom.length(a) : 0.0);
      if (std::abs(p[a] - face) <= tol && dom.face(a, side) == FaceLabel::free_face)
        return {a, side == 1 ? 1 : -1};
    }
  }
  std::ostringstream os;
  os << path << ": point (";
  for (int a = 0; a < dom.dim(); ++a) os << (a ? ", " : "") << p[a];
  os << ") does not lie on a free face";
  throw ValidationError(os.str());
}

SequenceSpec parse_sequence(const json& js, const Domain& dom, int m, const std::string& path) {
  SequenceSpec sp;
  sp.kind = str_at(need(js, path, "kind"), path + ".kind");
  if (sp.kind == "weak" || sp.kind == "needle") {
    check_keys(js, path, {"kind", "eps", "x0", "amplitude"});
    sp.eps = dvec_at(need(js, path, "eps"), path + ".eps");
    if (sp.eps.empty()) throw ValidationError(path + ".eps: nonempty schedule required");
    for (double e : sp.eps)
      if (!(e > 0.0)) throw ValidationError(path + ".eps: entries must be positive");
    sp.amplitude = Eigen::VectorXd::Ones(m);
    if (js.contains("amplitude")) {
      const std::vector<double> a = dvec_at(js.at("amplitude"), path + ".amplitude");
      if (static_cast<int>(a.size()) != m)
        throw ValidationError(path + ".amplitude: one entry per component required");
      sp.amplitude = Eigen::Map<const Eigen::VectorXd>(a.data(), a.size());
    }
    if (sp.kind == "needle") {
      sp.x0 = point_at(need(js, path, "x0"), dom.dim(), path + ".x0");
    } else if (js.contains("x0")) {
      throw ParseError("unknown key 'x0' in " + path);
    }
    return sp;
  }
  if (sp.kind == "ball_murat") {
    check_keys(js, path, {"kind", "n"});
    sp.ns = ivec_at(need(js, path, "n"), path + ".n");
    if (sp.ns.empty()) throw ValidationError(path + ".n: nonempty schedule required");
    for (int n : sp.ns)
      if (n < 2) throw ValidationError(path + ".n: entries must be at least 2");
    return sp;
  }
  throw ValidationError(path + ".kind: unknown kind '" + sp.kind + "'");
}

VariationSequence build_sequence(const Scenario& s, const SequenceSpec& sp, int qpa) {
  if (sp.kind == "ball_murat") return ball_murat_sequence(sp.ns);
  const NeedleProfile prof = bump_profile(s.dom.dim(), s.m, sp.amplitude);
  if (sp.kind == "needle") return needle_variation(s.dom, prof, sp.x0, sp.eps, qpa);

  // Weak kind: a fixed bump inscribed in the box, shrunk in amplitude.
  Point ctr = Point::Zero();
  double rho = s.dom.length(0) / 2.0;
  for (int a = 0; a < s.dom.dim(); ++a) {
    ctr[a] = s.dom.origin(a) + 0.5 * s.dom.length(a);
    rho = std::min(rho, s.dom.length(a) / 2.0);
  }
  DiscreteField phi = DiscreteField::from_function(s.dom, s.m, [&](const Point& x) {
    Point z = Point::Zero();
    for (int a = 0; a < s.dom.dim(); ++a) z[a] = (x[a] - ctr[a]) / rho;
    return prof.value(z);
  });
  return weak_variation(phi, sp.eps, qpa);
}

DiscreteField build_extremal(const Scenario& s) {
  const ExtremalSpec& ex = s.extremal;
  if (ex.kind == "affine") {
    return DiscreteField::from_function(s.dom, s.m, [&](const Point& x) {
      return Eigen::VectorXd(ex.A * x.head(s.dom.dim()) + ex.b);
    });
  }
  if (ex.kind == "file") return read_field_csv(ex.path, s.dom, s.m);
  return solve_extremal(s.W, s.dom, BoundaryData::from_affine(s.dom, ex.A, ex.b));
}

json el_json(const ElResidual& el) {
  return json{{"interior_l2", el.interior_l2},     {"interior_linf", el.interior_linf},
              {"boundary_l2", el.boundary_l2},     {"boundary_linf", el.boundary_linf},
              {"worst_node", el.worst_node},       {"worst_comp", el.worst_comp},
              {"max_linf", el.max_linf()}};
}

json rayleigh_json(const RayleighResult& r) {
  return json{{"beta", r.beta},
              {"converged", r.converged},
              {"iterations", r.iterations},
              {"residual", r.residual},
              {"interval", json::array({r.interval_lo, r.interval_hi})}};
}

json probe_json(const QCProbeResult& p, int dim) {
  return json{{"x0", point_json(p.x0, dim)},
              {"geometry", p.geometry},
              {"best_value", p.best_value},
              {"best_restart", p.best_restart},
              {"restart_values", p.restart_values},
              {"violation", p.violation},
              {"seed", p.seed}};
}

template <typename Fn>
json guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    return json{{"error", e.what()}};
  } catch (const std::exception& e) {
    return json{{"error", std::string("unexpected: ") + e.what()}};
  }
}

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out.good()) throw IoError("short write on '" + path + "'");
}

}  // namespace

Scenario parse_scenario_json(const json& j) {
  check_keys(j, "scenario", {"seed", "qpa", "domain", "lagrangian", "extremal", "battery",
                             "budgets", "output"});
  Scenario s;
  s.dom = parse_domain(need(j, "scenario", "domain"));
  if (j.contains("seed")) {
    const json& sv = j.at("seed");
    if (!sv.is_number_integer() || sv.get<std::int64_t>() < 0)
      throw ValidationError("seed: expected a nonnegative integer");
    s.seed = sv.get<std::uint64_t>();
  }
  if (j.contains("qpa")) {
    s.qpa = int_at(j.at("qpa"), "qpa");
    if (s.qpa < 1 || s.qpa > 5) throw ValidationError("qpa: must be between 1 and 5");
  }

  const json& je = need(j, "scenario", "extremal");
  check_keys(je, "extremal", {"kind", "m", "A", "b", "path"});
  s.extremal.kind = str_at(need(je, "extremal", "kind"), "extremal.kind");
  if (s.extremal.kind == "affine" || s.extremal.kind == "solve_el") {
    s.extremal.A = mat_at(need(je, "extremal", "A"), "extremal.A");
    if (s.extremal.A.cols() != s.dom.dim())
      throw ValidationError("extremal.A: column count must equal the domain dimension");
    s.m = static_cast<int>(s.extremal.A.rows());
    s.extremal.b = Eigen::VectorXd::Zero(s.m);
    if (je.contains("b")) {
      const std::vector<double> b = dvec_at(je.at("b"), "extremal.b");
      if (static_cast<int>(b.size()) != s.m)
        throw ValidationError("extremal.b: one entry per component required");
      s.extremal.b = Eigen::Map<const Eigen::VectorXd>(b.data(), b.size());
    }
    if (s.extremal.kind == "solve_el" && !s.dom.has_dirichlet_face())
      throw ValidationError("extremal.kind: solve_el needs at least one Dirichlet face");
  } else if (s.extremal.kind == "file") {
    s.extremal.path = str_at(need(je, "extremal", "path"), "extremal.path");
    s.m = int_at(need(je, "extremal", "m"), "extremal.m");
    if (s.m < 1) throw ValidationError("extremal.m: must be positive");
    if (!std::filesystem::exists(s.extremal.path))
      throw ValidationError("extremal.path: file '" + s.extremal.path + "' does not exist");
  } else {
    throw ValidationError("extremal.kind: unknown kind '" + s.extremal.kind + "'");
  }
  s.extremal.m = s.m;

  s.lagrangian_spec = json::object();
  s.W = parse_lagrangian(need(j, "scenario", "lagrangian"), s.m, s.dom.dim(),
                         s.lagrangian_spec);
  s.lagrangian_kind = s.lagrangian_spec["kind"].get<std::string>();

  if (j.contains("battery")) {
    const json& jb = j.at("battery");
    check_keys(jb, "battery",
               {"el", "secvar", "qc_interior", "qc_boundary", "sequences", "decomposition",
                "measures", "localization"});
    if (jb.contains("el")) s.run_el = bool_at(jb.at("el"), "battery.el");
    if (jb.contains("secvar")) s.run_secvar = bool_at(jb.at("secvar"), "battery.secvar");
    if (jb.contains("qc_interior")) {
      const json& jq = jb.at("qc_interior");
      if (!jq.is_array()) throw ValidationError("battery.qc_interior: expected an array");
      for (std::size_t i = 0; i < jq.size(); ++i)
        s.qc_interior.push_back(
            point_at(jq[i], s.dom.dim(), "battery.qc_interior[" + std::to_string(i) + "]"));
    }
    if (jb.contains("qc_boundary")) {
      const json& jq = jb.at("qc_boundary");
      if (!jq.is_array()) throw ValidationError("battery.qc_boundary: expected an array");
      for (std::size_t i = 0; i < jq.size(); ++i) {
        const std::string p = "battery.qc_boundary[" + std::to_string(i) + "]";
        const Point x0 = point_at(jq[i], s.dom.dim(), p);
        s.qc_boundary_face.push_back(free_face_of(s.dom, x0, p));
        s.qc_boundary.push_back(x0);
      }
    }
    if (jb.contains("sequences")) {
      const json& jq = jb.at("sequences");
      if (!jq.is_array()) throw ValidationError("battery.sequences: expected an array");
      for (std::size_t i = 0; i < jq.size(); ++i)
        s.sequences.push_back(
            parse_sequence(jq[i], s.dom, s.m, "battery.sequences[" + std::to_string(i) + "]"));
    }
    const auto seq_index = [&](const json& v, const std::string& p) {
      const int idx = int_at(v, p);
      if (idx < 0 || idx >= static_cast<int>(s.sequences.size()))
        throw ValidationError(p + ": no such sequence");
      return idx;
    };
    if (jb.contains("decomposition")) {
      const json& jq = jb.at("decomposition");
      check_keys(jq, "battery.decomposition", {"sequence", "j", "pool_tail"});
      DecompositionSpec ds;
      ds.sequence = seq_index(need(jq, "battery.decomposition", "sequence"),
                              "battery.decomposition.sequence");
      ds.j = dvec_at(need(jq, "battery.decomposition", "j"), "battery.decomposition.j");
      for (double jj : ds.j)
        if (!(jj > 0.0))
          throw ValidationError("battery.decomposition.j: levels must be positive");
      if (jq.contains("pool_tail")) {
        ds.pool_tail = int_at(jq.at("pool_tail"), "battery.decomposition.pool_tail");
        if (ds.pool_tail < 1)
          throw ValidationError("battery.decomposition.pool_tail: must be positive");
      }
      s.decomposition = ds;
    }
    if (jb.contains("measures")) {
      const json& jq = jb.at("measures");
      check_keys(jq, "battery.measures", {"sequence", "pool_tail"});
      MeasuresSpec ms;
      ms.sequence = seq_index(need(jq, "battery.measures", "sequence"),
                              "battery.measures.sequence");
      if (jq.contains("pool_tail")) {
        ms.pool_tail = int_at(jq.at("pool_tail"), "battery.measures.pool_tail");
        if (ms.pool_tail < 1) throw ValidationError("battery.measures.pool_tail: must be positive");
      }
      s.measures = ms;
    }
    if (jb.contains("localization")) {
      const json& jq = jb.at("localization");
      check_keys(jq, "battery.localization", {"sequence", "x0", "r", "k"});
      LocalizationSpec ls;
      ls.sequence = seq_index(need(jq, "battery.localization", "sequence"),
                              "battery.localization.sequence");
      ls.x0 = point_at(need(jq, "battery.localization", "x0"), s.dom.dim(),
                       "battery.localization.x0");
      ls.r = dvec_at(need(jq, "battery.localization", "r"), "battery.localization.r");
      ls.k = ivec_at(need(jq, "battery.localization", "k"), "battery.localization.k");
      if (ls.r.empty() || ls.k.empty())
        throw ValidationError("battery.localization: r and k schedules must be nonempty");
      for (double r : ls.r)
        if (!(r > 0.0)) throw ValidationError("battery.localization.r: radii must be positive");
      for (int k : ls.k)
        if (k < 1) throw ValidationError("battery.localization.k: steepness must be >= 1");
      s.localization = ls;
    }
  }

  if (j.contains("budgets")) {
    const json& jq = j.at("budgets");
    check_keys(jq, "budgets", {"multistarts", "iters", "grid_res"});
    if (jq.contains("multistarts"))
      s.budget.multistarts = int_at(jq.at("multistarts"), "budgets.multistarts");
    if (jq.contains("iters")) s.budget.iters = int_at(jq.at("iters"), "budgets.iters");
    if (jq.contains("grid_res")) s.budget.grid_res = int_at(jq.at("grid_res"), "budgets.grid_res");
    if (s.budget.multistarts < 1 || s.budget.iters < 1 || s.budget.grid_res < 4)
      throw ValidationError("budgets: multistarts/iters must be >= 1, grid_res >= 4");
  }

  if (j.contains("output")) {
    const json& jq = j.at("output");
    check_keys(jq, "output", {"dir", "format"});
    if (jq.contains("dir")) s.out_dir = str_at(jq.at("dir"), "output.dir");
    if (jq.contains("format")) s.format = str_at(jq.at("format"), "output.format");
    if (s.format != "json" && s.format != "csv")
      throw ValidationError("output.format: expected 'json' or 'csv'");
  }
  return s;
}

Scenario parse_scenario(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open scenario file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("scenario syntax: ") + e.what());
  }
  return parse_scenario_json(j);
}

json Scenario::to_json() const {
  json j;
  j["seed"] = seed;
  j["qpa"] = qpa;

  json jd;
  jd["dim"] = dom.dim();
  json cells = json::array(), lengths = json::array(), origin = json::array();
  for (int a = 0; a < dom.dim(); ++a) {
    cells.push_back(dom.cells(a));
    lengths.push_back(dom.length(a));
    origin.push_back(dom.origin(a));
  }
  jd["cells"] = cells;
  jd["lengths"] = lengths;
  jd["origin"] = origin;
  json jf;
  for (int slot = 0; slot < 2 * dom.dim(); ++slot)
    jf[kFaceKeys[slot]] =
        dom.face(slot / 2, slot % 2) == FaceLabel::dirichlet ? "dirichlet" : "free";
  jd["faces"] = jf;
  j["domain"] = jd;

  j["lagrangian"] = lagrangian_spec;

  json je;
  je["kind"] = extremal.kind;
  if (extremal.kind == "file") {
    je["path"] = extremal.path;
    je["m"] = extremal.m;
  } else {
    je["A"] = matrix_json(extremal.A);
    json b = json::array();
    for (int i = 0; i < extremal.b.size(); ++i) b.push_back(extremal.b[i]);
    je["b"] = b;
  }
  j["extremal"] = je;

  json jb;
  jb["el"] = run_el;
  jb["secvar"] = run_secvar;
  json qi = json::array();
  for (const Point& p : qc_interior) qi.push_back(point_json(p, dom.dim()));
  jb["qc_interior"] = qi;
  json qb = json::array();
  for (const Point& p : qc_boundary) qb.push_back(point_json(p, dom.dim()));
  jb["qc_boundary"] = qb;
  json sq = json::array();
  for (const SequenceSpec& sp : sequences) {
    json js;
    js["kind"] = sp.kind;
    if (sp.kind == "ball_murat") {
      js["n"] = sp.ns;
    } else {
      js["eps"] = sp.eps;
      json amp = json::array();
      for (int i = 0; i < sp.amplitude.size(); ++i) amp.push_back(sp.amplitude[i]);
      js["amplitude"] = amp;
      if (sp.kind == "needle") js["x0"] = point_json(sp.x0, dom.dim());
    }
    sq.push_back(js);
  }
  jb["sequences"] = sq;
  if (decomposition) {
    jb["decomposition"] = json{{"sequence", decomposition->sequence},
                               {"j", decomposition->j},
                               {"pool_tail", decomposition->pool_tail}};
  }
  if (measures) {
    jb["measures"] = json{{"sequence", measures->sequence}, {"pool_tail", measures->pool_tail}};
  }
  if (localization) {
    jb["localization"] = json{{"sequence", localization->sequence},
                              {"x0", point_json(localization->x0, dom.dim())},
                              {"r", localization->r},
                              {"k", localization->k}};
  }
  j["battery"] = jb;

  j["budgets"] = json{{"multistarts", budget.multistarts},
                      {"iters", budget.iters},
                      {"grid_res", budget.grid_res}};
  j["output"] = json{{"dir", out_dir}, {"format", format}};
  return j;
}

Report run_scenario(const Scenario& s) {
  json doc;
  doc["schema"] = "varlocal-report/1";
  doc["seed"] = s.seed;
  doc["scenario"] = s.to_json();
  json bat = json::object();

  DiscreteField y(s.dom, s.m);
  bool have_y = false;
  std::string y_err;
  try {
    y = build_extremal(s);
    have_y = true;
  } catch (const std::exception& e) {
    y_err = e.what();
    doc["extremal_error"] = y_err;
  }
  const auto skipped = [&] { return json{{"skipped", "extremal unavailable: " + y_err}}; };

  std::optional<ReducedLagrangian> R;
  if (have_y) R = reduce_at_field(s.W, y);

  if (s.run_el)
    bat["el"] = !have_y ? skipped() : guarded([&] {
      json e = el_json(el_residual(s.W, y, s.qpa));
      e["pass"] = e["max_linf"].get<double>() <= 1e-8;
      return e;
    });

  if (s.run_secvar)
    bat["secvar"] = !have_y ? skipped() : guarded([&] {
      const ReducedLagrangian& red = *R;
      auto lfn = [red](const Point& x) { return red.L_at(x); };
      SecondVariationForm form = SecondVariationForm::assemble(s.dom, s.m, lfn, s.qpa);
      RayleighOptions ropts;
      ropts.seed = substream(s.seed, 11);
      return rayleigh_json(second_variation_min_rayleigh(form, ropts));
    });

  if (!s.qc_interior.empty() || !s.qc_boundary.empty()) {
    json probes = json::object();
    json ji = json::array();
    for (std::size_t i = 0; i < s.qc_interior.size(); ++i)
      ji.push_back(!have_y ? skipped() : guarded([&] {
        return probe_json(
            qc_interior_probe(*R, s.qc_interior[i], s.budget, substream(s.seed, 100 + i)),
            s.dom.dim());
      }));
    json jbd = json::array();
    for (std::size_t i = 0; i < s.qc_boundary.size(); ++i)
      jbd.push_back(!have_y ? skipped() : guarded([&] {
        return probe_json(qc_boundary_probe(*R, s.qc_boundary[i], s.qc_boundary_face[i][0],
                                            s.qc_boundary_face[i][1], s.budget,
                                            substream(s.seed, 200 + i)),
                          s.dom.dim());
      }));
    probes["interior"] = ji;
    probes["boundary"] = jbd;
    bat["qc"] = probes;
  }

  if (s.run_increments && !s.sequences.empty()) {
    json arr = json::array();
    for (std::size_t i = 0; i < s.sequences.size(); ++i) {
      arr.push_back(!have_y ? skipped() : guarded([&] {
        const VariationSequence seq = build_sequence(s, s.sequences[i], s.qpa);
        const IncrementTrace trace = increments(s.W, y, seq, s.qpa);
        const DeltaPrimeEstimate est = delta_prime_estimator(trace);
        json rows = json::array();
        for (const IncrementRecord& r : trace.records)
          rows.push_back(json{{"n", r.label},
                              {"alpha", r.alpha},
                              {"dE", r.dE},
                              {"dE_prime", r.dE_prime},
                              {"l2sq", r.l2sq},
                              {"ratio", r.ratio},
                              {"prime_ratio", r.prime_ratio},
                              {"fcal_ratio", r.fcal_ratio},
                              {"identity_gap", r.identity_gap}});
        return json{{"kind", s.sequences[i].kind},
                    {"rows", rows},
                    {"estimator", json{{"tail_min", est.tail_min},
                                       {"converged", est.converged},
                                       {"tail_len", est.tail_len}}}};
      }));
    }
    bat["sequences"] = arr;
  }

  if (s.decomposition)
    bat["decomposition"] = guarded([&] {
      const DecompositionSpec& ds = *s.decomposition;
      const VariationSequence seq = build_sequence(s, s.sequences[ds.sequence], s.qpa);
      const PiDecomposition pd = pi_decomposition_check(seq, ds.j, ds.pool_tail, s.qpa);
      json rows = json::array();
      for (const PiRow& r : pd.rows)
        rows.push_back(json{{"n", r.label},
                            {"j", r.j},
                            {"pi", r.pi},
                            {"m_part", r.m_part},
                            {"pi_tilde", r.pi_tilde},
                            {"cross", r.cross},
                            {"gap", r.gap}});
      return json{{"rows", rows},
                  {"pooled", json{{"pi", pd.pooled_pi},
                                  {"m_part", pd.pooled_m},
                                  {"pi_tilde", pd.pooled_pi_tilde},
                                  {"cross", pd.pooled_cross},
                                  {"gap", pd.pooled_gap},
                                  {"tail", pd.pool_tail}}}};
    });

  if (s.measures)
    bat["measures"] = guarded([&] {
      const MeasuresSpec& ms = *s.measures;
      const VariationSequence seq = build_sequence(s, s.sequences[ms.sequence], s.qpa);
      const LimitBundle lb = limit_bundle(seq, ms.pool_tail, s.qpa);
      json masses = json::array();
      for (const CellMeasure& cm : lb.pooled.cells) masses.push_back(cm.mass);
      json out{{"cell_masses", masses},
               {"mass_drift", lb.mass_drift},
               {"pooled_labels", lb.pooled_labels},
               {"total_mass", lb.pooled.total_mass()},
               {"R", lb.pooled.R}};
      const SequenceTerm last = seq.term(seq.size() - 1);
      if (last.field && R && last.alpha > 0.0) {
        const RepresentationCheck rc =
            representation_check(last.alpha, last.field->scaled(1.0 / last.alpha), *R, s.qpa);
        out["representation"] = json{{"lhs", rc.lhs}, {"rhs", rc.rhs}, {"gap", rc.gap}};
      } else {
        out["representation"] = json{{"skipped", "needs a grid term and an extremal"}};
      }
      return out;
    });

  if (s.localization)
    bat["localization"] = !have_y ? skipped() : guarded([&] {
      const LocalizationSpec& ls = *s.localization;
      const VariationSequence seq = build_sequence(s, s.sequences[ls.sequence], s.qpa);
      const LocalizationResult lr = localization_check(seq, ls.x0, ls.r, ls.k, *R, s.qpa);
      json rows = json::array();
      for (const LocalizationRecord& r : lr.records)
        rows.push_back(json{{"r", r.r}, {"k", r.k}, {"n", r.label}, {"value", r.value}});
      return json{{"rows", rows},
                  {"extrapolated", lr.extrapolated},
                  {"I_at_x0", lr.I_at_x0},
                  {"pi_mass_zero", lr.pi_mass_zero},
                  {"note", lr.note}};
    });

  // Verdict block from the batteries that ran. The positive outcome stays a
  // candidate: probes are searches, not proofs.
  json verdict;
  const bool el_ok = bat.contains("el") && bat["el"].contains("pass");
  const bool sv_ok = bat.contains("secvar") && bat["secvar"].contains("converged");
  if (!el_ok || !sv_ok) {
    verdict["verdict"] = "inconclusive";
    verdict["reason"] = "verdict needs the el and secvar batteries";
  } else if (!bat["el"]["pass"].get<bool>()) {
    verdict["verdict"] = "inconclusive";
    verdict["reason"] = "EL residual above tolerance";
  } else if (!bat["secvar"]["converged"].get<bool>()) {
    verdict["verdict"] = "inconclusive";
    verdict["reason"] = "second-variation eigeniteration did not converge";
  } else {
    const double beta_pencil = bat["secvar"]["beta"].get<double>();
    double beta = 0.5 * beta_pencil;
    bool probe_violation = false;
    std::string probe_reason;
    if (bat.contains("qc")) {
      for (const char* side : {"interior", "boundary"}) {
        for (const json& p : bat["qc"][side]) {
          if (!p.contains("best_value")) continue;
          beta = std::min(beta, p["best_value"].get<double>());
          if (p["violation"].get<bool>()) {
            probe_violation = true;
            probe_reason = std::string(side) +
                           " quasiconvexity probe found a negative direction";
          }
        }
      }
    }
    verdict["beta_candidate"] = beta;
    if (beta_pencil < -1e-9) {
      verdict["verdict"] = "violated";
      verdict["reason"] = "second variation attains negative values";
    } else if (probe_violation) {
      verdict["verdict"] = "violated";
      verdict["reason"] = probe_reason;
    } else {
      verdict["verdict"] = "sufficient-candidate";
      verdict["reason"] = "all probes nonnegative; search-based candidate, not a proof";
    }
  }

  doc["batteries"] = bat;
  doc["verdict"] = verdict;
  Report rep;
  rep.doc = doc;
  return rep;
}

std::vector<std::string> emit(const Report& rep, const std::string& dir,
                              const std::string& format) {
  if (format != "json" && format != "csv")
    throw ValidationError("emit: format must be 'json' or 'csv'");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "'");

  std::vector<std::string> written;
  const std::string report_path = dir + "/report.json";
  write_text(report_path, rep.doc.dump(2) + "\n");
  written.push_back(report_path);
  if (format == "json") return written;

  const json& bat = rep.doc.contains("batteries") ? rep.doc.at("batteries") : json::object();
  if (bat.contains("sequences")) {
    const json& arr = bat.at("sequences");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      if (!arr[i].contains("rows")) continue;
      std::string csv = "n,alpha,dE,dE_prime,l2sq,ratio\n";
      for (const json& r : arr[i]["rows"]) {
        csv += format_g17(r["n"].get<double>()) + "," + format_g17(r["alpha"].get<double>()) +
               "," + format_g17(r["dE"].get<double>()) + "," +
               format_g17(r["dE_prime"].get<double>()) + "," +
               format_g17(r["l2sq"].get<double>()) + "," + format_g17(r["ratio"].get<double>()) +
               "\n";
      }
      const std::string path = dir + "/increments_" + std::to_string(i) + ".csv";
      write_text(path, csv);
      written.push_back(path);
    }
  }
  if (bat.contains("decomposition") && bat.at("decomposition").contains("rows")) {
    std::string csv = "n,j,pi,m_part,pi_tilde,cross,gap\n";
    for (const json& r : bat.at("decomposition").at("rows")) {
      csv += format_g17(r["n"].get<double>()) + "," + format_g17(r["j"].get<double>()) + "," +
             format_g17(r["pi"].get<double>()) + "," + format_g17(r["m_part"].get<double>()) +
             "," + format_g17(r["pi_tilde"].get<double>()) + "," +
             format_g17(r["cross"].get<double>()) + "," + format_g17(r["gap"].get<double>()) +
             "\n";
    }
    const std::string path = dir + "/decomposition.csv";
    write_text(path, csv);
    written.push_back(path);
  }
  if (bat.contains("measures") && bat.at("measures").contains("cell_masses")) {
    std::string csv = "cell,mass\n";
    const json& masses = bat.at("measures").at("cell_masses");
    for (std::size_t c = 0; c < masses.size(); ++c)
      csv += std::to_string(c) + "," + format_g17(masses[c].get<double>()) + "\n";
    const std::string path = dir + "/measures_masses.csv";
    write_text(path, csv);
    written.push_back(path);
  }
  if (bat.contains("localization") && bat.at("localization").contains("rows")) {
    std::string csv = "r,k,n,value\n";
    for (const json& r : bat.at("localization").at("rows")) {
      csv += format_g17(r["r"].get<double>()) + "," + std::to_string(r["k"].get<int>()) + "," +
             format_g17(r["n"].get<double>()) + "," + format_g17(r["value"].get<double>()) + "\n";
    }
    const std::string path = dir + "/localization.csv";
    write_text(path, csv);
    written.push_back(path);
  }
  return written;
}

}  // namespace varlocal
