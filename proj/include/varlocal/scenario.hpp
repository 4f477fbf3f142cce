#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "varlocal/conditions.hpp"
#include "varlocal/decomposition.hpp"
#include "varlocal/fields.hpp"
#include "varlocal/lagrangian.hpp"
#include "varlocal/measures.hpp"
#include "varlocal/variations.hpp"

namespace varlocal {

struct SequenceSpec {
  std::string kind;            // weak | needle | ball_murat
  std::vector<double> eps;     // weak, needle
  std::vector<int> ns;         // ball_murat
  Point x0 = Point::Zero();    // needle
  Eigen::VectorXd amplitude;   // bump profile amplitude per component
};

struct DecompositionSpec {
  int sequence = 0;
  std::vector<double> j;
  int pool_tail = 2;
};

struct MeasuresSpec {
  int sequence = 0;
  int pool_tail = 2;
};

struct LocalizationSpec {
  int sequence = 0;
  Point x0 = Point::Zero();
  std::vector<double> r;
  std::vector<int> k;
};

struct ExtremalSpec {
  std::string kind;  // affine | file | solve_el
  int m = 0;
  Matrix A;
  Eigen::VectorXd b;
  std::string path;
};

struct Scenario {
  Domain dom = Domain::unit_box(1, 1);
  int m = 1;
  std::string lagrangian_kind;
  nlohmann::json lagrangian_spec;  // normalized echo of the lagrangian block
  Lagrangian W;
  ExtremalSpec extremal;

  bool run_el = true;
  bool run_secvar = true;
  bool run_increments = true;  // CLI focus switch, not part of the schema
  std::vector<Point> qc_interior;
  std::vector<Point> qc_boundary;
  std::vector<std::array<int, 2>> qc_boundary_face;  // (axis, sign) per point
  std::vector<SequenceSpec> sequences;
  std::optional<DecompositionSpec> decomposition;
  std::optional<MeasuresSpec> measures;
  std::optional<LocalizationSpec> localization;

  std::uint64_t seed = 0;
  int qpa = 2;
  ProbeBudget budget;
  std::string out_dir = "out";
  std::string format = "json";

  // Canonical form with every default materialized; parsing it back yields
  // the same canonical form.
  nlohmann::json to_json() const;
};

// Strict parse: unknown keys are ParseErrors naming the key and path, value
// problems are ValidationErrors naming the field.
Scenario parse_scenario(const std::string& path);
Scenario parse_scenario_json(const nlohmann::json& j);

struct Report {
  nlohmann::json doc;
};

// Batteries in dependency order, each caught independently: a failed battery
// records its error and the rest still run. RNG consumers draw from fixed
// substreams of the scenario seed, so disabling one battery never changes
// another's numbers.
Report run_scenario(const Scenario& s);

// report.json always; format "csv" adds one plot-ready file per trace.
// Returns the paths written.
std::vector<std::string> emit(const Report& rep, const std::string& dir,
                              const std::string& format);

}  // namespace varlocal
