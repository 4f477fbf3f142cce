#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "varlocal/errors.hpp"
#include "varlocal/scenario.hpp"

using namespace varlocal;
using nlohmann::json;

namespace {

json base_scenario() {
  return json{
      {"domain", {{"dim", 2}, {"cells", {8, 8}}}},
      {"lagrangian", {{"kind", "quad"}}},
      {"extremal", {{"kind", "affine"}, {"A", {{1.0, 0.0}, {0.5, 0.0}}}}},
  };
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

std::size_t line_count(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_CASE("a minimal scenario fills in every default") {
  const Scenario s = parse_scenario_json(base_scenario());
  CHECK(s.seed == 0);
  CHECK(s.qpa == 2);
  CHECK(s.m == 2);
  CHECK(s.dom.dim() == 2);
  CHECK(s.dom.cells(0) == 8);
  CHECK(s.dom.face(0, 0) == FaceLabel::dirichlet);
  CHECK(s.run_el);
  CHECK(s.run_secvar);
  CHECK(s.qc_interior.empty());
  CHECK(s.sequences.empty());
  CHECK(!s.decomposition);
  CHECK(!s.measures);
  CHECK(!s.localization);
  CHECK(s.budget.multistarts == 12);
  CHECK(s.budget.iters == 400);
  CHECK(s.budget.grid_res == 16);
  CHECK(s.out_dir == "out");
  CHECK(s.format == "json");
  CHECK(s.lagrangian_spec["kind"] == "quad");
  CHECK(s.lagrangian_spec["c"] == 1.0);
}

TEST_CASE("unknown keys and bad values are named") {
  json j = base_scenario();
  j["bogus"] = 1;
  CHECK_THROWS_WITH_AS(parse_scenario_json(j), doctest::Contains("unknown key 'bogus'"),
                       ParseError);

  j = base_scenario();
  j["battery"] = json{{"tuning", 3}};
  CHECK_THROWS_WITH_AS(parse_scenario_json(j),
                       doctest::Contains("unknown key 'tuning' in battery"), ParseError);

  j = base_scenario();
  j["domain"]["dim"] = 5;
  CHECK_THROWS_WITH_AS(parse_scenario_json(j), doctest::Contains("domain.dim"),
                       ValidationError);

  j = base_scenario();
  j["domain"]["cells"] = {8};
  CHECK_THROWS_WITH_AS(parse_scenario_json(j), doctest::Contains("one entry per axis"),
                       ValidationError);

  j = base_scenario();
  j["seed"] = -4;
  CHECK_THROWS_AS(parse_scenario_json(j), ValidationError);
  j["seed"] = 1.5;
  CHECK_THROWS_AS(parse_scenario_json(j), ValidationError);

  j = base_scenario();
  j["qpa"] = 0;
  CHECK_THROWS_WITH_AS(parse_scenario_json(j), doctest::Contains("qpa"), ValidationError);

  j = base_scenario();
  j["lagrangian"] = json{{"kind", "mystery"}};
  CHECK_THROWS_WITH_AS(parse_scenario_json(j), doctest::Contains("unknown kind"),
                       ValidationError);

  j = base_scenario();
  j["extremal"]["A"] = {{1.0, 0.0, 0.0}};
  CHECK_THROWS_WITH_AS(parse_scenario_json(j),
                       doctest::Contains("column count must equal the domain dimension"),
                       ValidationError);

  j = base_scenario();
  j["extremal"]["b"] = {1.0};
  CHECK_THROWS_WITH_AS(parse_scenario_json(j), doctest::Contains("extremal.b"),
                       ValidationError);

  j = base_scenario();
  j["extremal"] = json{{"kind", "teleport"}};
  CHECK_THROWS_WITH_AS(parse_scenario_json(j), doctest::Contains("extremal.kind"),
                       ValidationError);

  j = base_scenario();
  j["lagrangian"] = json{{"kind", "det2"}};
  j["extremal"]["A"] = {{1.0, 0.0}};
  CHECK_THROWS_WITH_AS(parse_scenario_json(j), doctest::Contains("det2 needs m = d = 2"),
                       ValidationError);

  j = base_scenario();
  j["lagrangian"] = json{{"kind", "quadform"},
                         {"diag", {1.0, 1.0, 1.0, 1.0}},
                         {"flat", {{1.0}}}};
  CHECK_THROWS_WITH_AS(parse_scenario_json(j), doctest::Contains("exactly one"),
                       ValidationError);

  j = base_scenario();
  j["output"] = json{{"format", "yaml"}};
  CHECK_THROWS_WITH_AS(parse_scenario_json(j), doctest::Contains("output.format"),
                       ValidationError);

  j = base_scenario();
  j["budgets"] = json{{"grid_res", 3}};
  CHECK_THROWS_WITH_AS(parse_scenario_json(j), doctest::Contains("budgets"), ValidationError);

  j = base_scenario();
  j["battery"] = json{{"sequences", json::array({json{{"kind", "weak"}}})}};
  CHECK_THROWS_WITH_AS(parse_scenario_json(j), doctest::Contains("eps"), ValidationError);

  j["battery"]["sequences"][0] = json{{"kind", "weak"}, {"eps", {0.5}}, {"x0", {0.5, 0.5}}};
  CHECK_THROWS_WITH_AS(parse_scenario_json(j), doctest::Contains("unknown key 'x0'"),
                       ParseError);

  j["battery"]["sequences"][0] = json{{"kind", "ball_murat"}, {"n", {1}}};
  CHECK_THROWS_WITH_AS(parse_scenario_json(j), doctest::Contains("at least 2"),
                       ValidationError);

  j["battery"]["sequences"][0] = json{{"kind", "weak"}, {"eps", {0.5}}};
  j["battery"]["decomposition"] = json{{"sequence", 4}, {"j", {1.0}}};
  CHECK_THROWS_WITH_AS(parse_scenario_json(j), doctest::Contains("no such sequence"),
                       ValidationError);

  j["battery"]["decomposition"] = json{{"sequence", 0}, {"j", {0.0}}};
  CHECK_THROWS_WITH_AS(parse_scenario_json(j), doctest::Contains("levels must be positive"),
                       ValidationError);

  j = base_scenario();
  j["extremal"] = json{{"kind", "solve_el"}, {"A", {{1.0, 0.0}, {0.0, 1.0}}}};
  j["domain"]["faces"] = json{{"x_low", "free"}, {"x_high", "free"},
                              {"y_low", "free"}, {"y_high", "free"}};
  CHECK_THROWS_WITH_AS(parse_scenario_json(j),
                       doctest::Contains("needs at least one Dirichlet face"), ValidationError);

  j = base_scenario();
  j["extremal"] = json{{"kind", "file"}, {"path", "/no/such/field.csv"}, {"m", 2}};
  CHECK_THROWS_WITH_AS(parse_scenario_json(j), doctest::Contains("does not exist"),
                       ValidationError);
}

TEST_CASE("boundary probe points must sit on a free face") {
  json j = base_scenario();
  j["domain"]["faces"] = json{{"y_high", "free"}};
  j["battery"] = json{{"qc_boundary", json::array({{0.5, 1.0}})}};
  const Scenario ok = parse_scenario_json(j);
  REQUIRE(ok.qc_boundary.size() == 1);
  CHECK(ok.qc_boundary_face[0][0] == 1);
  CHECK(ok.qc_boundary_face[0][1] == 1);

  j["battery"]["qc_boundary"] = json::array({{0.5, 0.0}});
  CHECK_THROWS_WITH_AS(parse_scenario_json(j),
                       doctest::Contains("does not lie on a free face"), ValidationError);

  j["battery"]["qc_boundary"] = json::array({{0.5, 0.5}});
  CHECK_THROWS_WITH_AS(parse_scenario_json(j),
                       doctest::Contains("does not lie on a free face"), ValidationError);
}

TEST_CASE("the canonical form survives a round trip") {
  json j = base_scenario();
  j["seed"] = 31;
  j["qpa"] = 3;
  j["domain"]["faces"] = json{{"y_low", "free"}, {"y_high", "free"}};
  j["lagrangian"] =
      json{{"kind", "poly"},
           {"monomials", json::array({json{{"coeff", 1.0}, {"powers", {2, 0, 0, 0}}},
                                      json{{"coeff", 0.5}, {"powers", {0, 0, 0, 2}}}})}};
  j["battery"] = json{
      {"el", true},
      {"secvar", false},
      {"qc_interior", json::array({{0.25, 0.5}})},
      {"qc_boundary", json::array({{0.5, 1.0}})},
      {"sequences",
       json::array({json{{"kind", "weak"}, {"eps", {0.5, 0.25}}},
                    json{{"kind", "needle"}, {"eps", {0.25}}, {"x0", {0.5, 0.5}}},
                    json{{"kind", "ball_murat"}, {"n", {4, 8}}}})},
      {"decomposition", json{{"sequence", 2}, {"j", {0.5, 1.0}}, {"pool_tail", 1}}},
      {"measures", json{{"sequence", 0}}},
      {"localization",
       json{{"sequence", 0}, {"x0", {0.5, 0.5}}, {"r", {0.3, 0.2}}, {"k", {1, 2}}}}};
  j["budgets"] = json{{"multistarts", 4}, {"iters", 100}};
  j["output"] = json{{"dir", "scratch"}, {"format", "csv"}};

  const Scenario s = parse_scenario_json(j);
  const json canon = s.to_json();
  const json canon2 = parse_scenario_json(canon).to_json();
  CHECK(canon == canon2);

  // Defaults are materialized in the canonical form.
  const json mini = parse_scenario_json(base_scenario()).to_json();
  CHECK(mini["seed"] == 0);
  CHECK(mini["battery"]["el"] == true);
  CHECK(mini["battery"]["secvar"] == true);
  CHECK(mini["budgets"]["grid_res"] == 16);
  CHECK(mini["output"]["format"] == "json");
  CHECK(parse_scenario_json(mini).to_json() == mini);
}

TEST_CASE("a quadratic extremal earns its candidate verdict") {
  json j = base_scenario();
  j["seed"] = 5;
  j["domain"]["cells"] = {12, 12};
  j["domain"]["faces"] = json{{"y_low", "free"}, {"y_high", "free"}};
  j["battery"] = json{{"el", true},
                      {"secvar", true},
                      {"qc_interior", json::array({{0.5, 0.5}})},
                      {"qc_boundary", json::array({{0.5, 0.0}})},
                      {"sequences", json::array({json{{"kind", "weak"}, {"eps", {0.5, 0.25}}}})}};

  const Report rep = run_scenario(parse_scenario_json(j));
  const json& bat = rep.doc["batteries"];

  CHECK(bat["el"]["pass"] == true);
  CHECK(bat["el"]["max_linf"].get<double>() < 1e-10);
  CHECK(bat["secvar"]["converged"] == true);
  CHECK(bat["secvar"]["beta"].get<double>() == doctest::Approx(2.0).epsilon(1e-8));

  for (const char* side : {"interior", "boundary"})
    for (const json& p : bat["qc"][side]) {
      CHECK(p["violation"] == false);
      CHECK(p["best_value"].get<double>() == doctest::Approx(1.0).epsilon(1e-8));
    }

  REQUIRE(bat["sequences"].size() == 1);
  CHECK(bat["sequences"][0]["estimator"]["tail_min"].get<double>() ==
        doctest::Approx(1.0).epsilon(1e-10));
  CHECK(bat["sequences"][0]["estimator"]["converged"] == true);
  CHECK(bat["sequences"][0]["rows"].size() == 2);

  const json& v = rep.doc["verdict"];
  CHECK(v["verdict"] == "sufficient-candidate");
  CHECK(v["reason"] == "all probes nonnegative; search-based candidate, not a proof");
  CHECK(v["beta_candidate"].get<double>() >= 0.99);
}

TEST_CASE("an indefinite direction flips the verdict") {
  json j = base_scenario();
  j["lagrangian"] = json{{"kind", "quadform"}, {"diag", {1.0, 1.0, 1.0, -1.0}}};
  j["extremal"] = json{{"kind", "affine"}, {"A", {{0.0, 0.0}, {0.0, 0.0}}}};

  const Report rep = run_scenario(parse_scenario_json(j));
  CHECK(rep.doc["batteries"]["el"]["pass"] == true);
  CHECK(rep.doc["batteries"]["secvar"]["beta"].get<double>() < -0.5);
  CHECK(rep.doc["verdict"]["verdict"] == "violated");
  CHECK(rep.doc["verdict"]["reason"] == "second variation attains negative values");
  CHECK(rep.doc["verdict"]["beta_candidate"].get<double>() < 0.0);
}

TEST_CASE("a field on disk can serve as the extremal") {
  Domain dom = Domain::unit_box(2, 8);
  DiscreteField y = DiscreteField::from_function(dom, 2, [](const Point& x) {
    Eigen::VectorXd v(2);
    v[0] = x[0];
    v[1] = 0.5 * x[0];
    return v;
  });
  const std::string path = temp_file("varlocal_test_field.csv").string();
  write_field_csv(path, y);

  json j = base_scenario();
  j["extremal"] = json{{"kind", "file"}, {"path", path}, {"m", 2}};
  const Report rep = run_scenario(parse_scenario_json(j));
  CHECK(!rep.doc.contains("extremal_error"));
  CHECK(rep.doc["batteries"]["el"]["pass"] == true);
  CHECK(rep.doc["verdict"]["verdict"] == "sufficient-candidate");

  // A malformed file surfaces as an extremal error and skips the dependent
  // batteries instead of aborting the run.
  const std::string bad = temp_file("varlocal_test_bad.csv").string();
  {
    std::ofstream out(bad);
    out << "not,a,field\n1,2\n";
  }
  j["extremal"]["path"] = bad;
  const Report broken = run_scenario(parse_scenario_json(j));
  CHECK(broken.doc.contains("extremal_error"));
  CHECK(broken.doc["batteries"]["el"].contains("skipped"));
  CHECK(broken.doc["verdict"]["verdict"] == "inconclusive");
  std::filesystem::remove(path);
  std::filesystem::remove(bad);
}

TEST_CASE("reports are deterministic and batteries are independent") {
  json j = base_scenario();
  j["seed"] = 7;
  j["domain"]["faces"] = json{{"y_high", "free"}};
  j["battery"] = json{{"el", true},
                      {"secvar", true},
                      {"qc_interior", json::array({{0.4, 0.6}, {0.7, 0.3}})},
                      {"qc_boundary", json::array({{0.5, 1.0}})}};

  const Scenario s = parse_scenario_json(j);
  const Report a = run_scenario(s);
  const Report b = run_scenario(s);
  CHECK(a.doc.dump() == b.doc.dump());

  // Turning the other batteries off must not move the probe numbers: each
  // consumer draws from its own substream of the scenario seed.
  json focused = j;
  focused["battery"]["el"] = false;
  focused["battery"]["secvar"] = false;
  const Report c = run_scenario(parse_scenario_json(focused));
  CHECK(c.doc["batteries"]["qc"] == a.doc["batteries"]["qc"]);
  CHECK(!c.doc["batteries"].contains("el"));
  CHECK(c.doc["verdict"]["verdict"] == "inconclusive");
  CHECK(c.doc["verdict"]["reason"] == "verdict needs the el and secvar batteries");
}

TEST_CASE("emission writes the promised files") {
  json j = base_scenario();
  j["domain"]["cells"] = {12, 12};
  j["extremal"] = json{{"kind", "affine"}, {"A", {{0.0, 0.0}, {0.0, 0.0}}}};
  j["battery"] =
      json{{"sequences", json::array({json{{"kind", "weak"}, {"eps", {0.5, 0.25}}}})},
           {"decomposition", json{{"sequence", 0}, {"j", {2.0}}, {"pool_tail", 1}}},
           {"measures", json{{"sequence", 0}, {"pool_tail", 1}}},
           {"localization", json{{"sequence", 0},
                                 {"x0", {0.5, 0.5}},
                                 {"r", {0.3, 0.2}},
                                 {"k", {1, 2}}}}};

  const Scenario s = parse_scenario_json(j);
  const Report rep = run_scenario(s);

  const std::string dir = (std::filesystem::temp_directory_path() / "varlocal_emit").string();
  std::filesystem::remove_all(dir);
  const std::vector<std::string> files = emit(rep, dir, "csv");

  REQUIRE(files.size() == 5);
  CHECK(files[0] == dir + "/report.json");
  for (const std::string& f : files) CHECK(std::filesystem::exists(f));

  CHECK(line_count(dir + "/increments_0.csv") == 3);     // header + one row per eps
  CHECK(line_count(dir + "/decomposition.csv") == 3);    // header + one row per term
  CHECK(line_count(dir + "/measures_masses.csv") == 1 + 12 * 12);
  CHECK(line_count(dir + "/localization.csv") == 1 + 2 * 2 * 2);

  std::ifstream in(dir + "/report.json");
  const json back = json::parse(in);
  CHECK(back == rep.doc);

  const std::vector<std::string> only_json = emit(rep, dir, "json");
  REQUIRE(only_json.size() == 1);
  CHECK_THROWS_AS(emit(rep, dir, "yaml"), ValidationError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("a failing battery records its error and the rest still run") {
  json j = base_scenario();
  j["battery"] = json{
      {"el", true},
      {"secvar", true},
      // The grid is far too coarse for this needle width, so the sequence
      // battery fails while everything else proceeds.
      {"sequences",
       json::array({json{{"kind", "needle"}, {"eps", {0.125}}, {"x0", {0.5, 0.5}}}})},
      {"measures", json{{"sequence", 0}}}};

  const Report rep = run_scenario(parse_scenario_json(j));
  const json& bat = rep.doc["batteries"];
  CHECK(bat["sequences"][0].contains("error"));
  CHECK(bat["measures"].contains("error"));
  CHECK(bat["el"]["pass"] == true);
  CHECK(bat["secvar"]["converged"] == true);
  CHECK(rep.doc["verdict"]["verdict"] == "sufficient-candidate");
}
