#include <gtest/gtest.h>

#include <sstream>

#include "hem/experiment.hpp"

using namespace hem;

namespace {

std::string config_path(const char* name) { return std::string(HEM_SOURCE_DIR) + "/configs/" + name; }

template <class F>
std::string usage_message(F&& f) {
  try {
    f();
  } catch (const UsageError& e) {
    return e.what();
  }
  return "";
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n' ? 1 : 0;
  return n;
}

const char* kSmall = R"({"mesh":{"n":16},"partition":{"H_cells":4,"delta_layers":1},
  "alpha":{"benchmark":{"name":"channels","c":1}},
  "sweep":{"contrast":[1,100],"type":["ms","shem","nshem-sin"],"m":[1,2]}})";

}  // namespace

TEST(Config, MinimalGetsDefaults) {
  const auto c = parse_config(R"({"mesh":{"n":8},"partition":{"H_cells":4,"delta_layers":2},"coarse":{"type":"ms"}})");
  EXPECT_EQ(c.n, 8u);
  EXPECT_EQ(c.h_cells, 4u);
  EXPECT_EQ(c.delta_layers, 2u);
  EXPECT_EQ(c.coarse_type, "ms");
  EXPECT_EQ(c.solver.tol, 1e-6);
  EXPECT_EQ(c.solver.maxit, 2000u);
  EXPECT_EQ(c.background, 1.0);
  EXPECT_EQ(c.contrast, 1.0);
  EXPECT_EQ(c.source, 1.0);
  EXPECT_FALSE(c.adaptive.has_value());
  EXPECT_EQ(c.base_method(), "ms");
}

TEST(Config, ErrorsNameTheField) {
  EXPECT_NE(usage_message([] { parse_config(R"({"mesh":{"n":8},"partition":{"H_cells":3}})"); }).find("H_cells"), std::string::npos);
  EXPECT_NE(usage_message([] { parse_config(R"({"mesh":{"n":8},"partition":{"H_cells":4},"solver":{"tol":0}})"); }).find("solver.tol"),
            std::string::npos);
  EXPECT_NE(usage_message([] { parse_config(R"({"partition":{"H_cells":4}})"); }).find("mesh"), std::string::npos);
  EXPECT_NE(usage_message([] { parse_config(R"({"mesh":{"n":8},"partition":{"H_cells":4},"coarse":{"type":"x"}})"); }).find("coarse.type"),
            std::string::npos);
  EXPECT_NE(usage_message([] { parse_config(R"({"mesh":{"n":8},"partition":{"H_cells":4},"coarse":{"m":4}})"); }).find("coarse.m"),
            std::string::npos);
  EXPECT_NE(usage_message([] { parse_config(R"({"mesh":{"n":8},"partition":{"H_cells":4},"alpha":{"contrast":0.5}})"); }).find("contrast"),
            std::string::npos);
  EXPECT_NE(usage_message([] { parse_config(R"({"mesh":{"n":8},"partition":{"H_cells":4},"sweep":{"contrast":[0.1]}})"); })
                .find("sweep.contrast"),
            std::string::npos);
  EXPECT_NE(usage_message([] { parse_config(R"({"mesh":{"n":8},"partition":{"H_cells":4,"delta_layers":-1}})"); }).find("delta_layers"),
            std::string::npos);
  EXPECT_FALSE(usage_message([] { parse_config("{not json"); }).empty());
  EXPECT_FALSE(usage_message([] { parse_config(R"({"mesh":{"n":8},"partition":{"H_cells":8}})"); }).empty());
}

TEST(Config, InclusionsAndAdaptive) {
  const auto c = parse_config(R"({"mesh":{"n":8},"partition":{"H_cells":4},
    "alpha":{"contrast":1e4,"inclusions":[{"x0":0,"y0":0,"x1":0.5,"y1":0.5,"value":"contrast"},{"x0":0.5,"y0":0.5,"x1":1,"y1":1,"value":3}]},
    "coarse":{"type":"shem-adapt","adaptive":{"tau":0.1}}})");
  ASSERT_EQ(c.inclusions.size(), 2u);
  EXPECT_TRUE(c.inclusions[0].uses_contrast);
  EXPECT_EQ(c.inclusions[1].box.value, 3.0);
  ASSERT_TRUE(c.adaptive.has_value());
  EXPECT_EQ(c.adaptive->tau, 0.1);
  EXPECT_TRUE(c.adaptive->min_one);
  EXPECT_EQ(c.base_method(), "shem-adapt");
  const Mesh mesh(8);
  const auto f = build_field(c, mesh, 1e4);
  EXPECT_EQ(f.max(), 1e4);
  EXPECT_EQ(f.min(), 1.0);
}

TEST(Config, RasterPathResolvedAgainstConfigDirectory) {
  const auto c = load_config(config_path("raster_field.json"));
  ASSERT_TRUE(c.raster_path.has_value());
  EXPECT_EQ(*c.raster_path, config_path("raster_8x8.csv"));
  const auto f = build_field(c, Mesh(c.n), c.contrast);
  EXPECT_GT(f.max() / f.min(), 10.0);
  EXPECT_THROW(load_config(config_path("does_not_exist.json")), UsageError);
}

TEST(Benchmark, ChannelsCrossEveryVerticalInterface) {
  const auto incs = benchmark_field({"channels", 3, {}}, 64, 16, 1e6);
  ASSERT_EQ(incs.size(), 3u * 4u);  // three strips in each of the four subdomain rows
  const double h = 1.0 / 64;
  for (const auto& s : incs) {
    EXPECT_NEAR(s.y1 - s.y0, 2 * h, 1e-15);
    EXPECT_NEAR(s.x0, h, 1e-15);
    EXPECT_NEAR(s.x1, 1 - h, 1e-15);
    EXPECT_EQ(s.value, 1e6);
  }
  // strips in the first subdomain row are centred at 2, 6 and 10 cells
  EXPECT_NEAR(incs[0].y0, 1 * h, 1e-15);
  EXPECT_NEAR(incs[1].y0, 5 * h, 1e-15);
  EXPECT_NEAR(incs[2].y0, 9 * h, 1e-15);

  // every vertical interface meets exactly three strips, as interface beta shows
  const Mesh mesh(64);
  const auto p = build_partition(mesh, 16);
  const auto field = build_coefficient_field(mesh, 1.0, incs);
  for (const auto& f : p.interfaces) {
    if (f.orientation != Orientation::vertical) continue;
    const auto forms = build_trace_forms(mesh, field, p, f.id);
    std::size_t runs = 0;
    for (std::size_t k = 0; k < forms.size(); ++k) {
      const bool high = forms.beta[k] > 1e5;
      const bool prev = k > 0 && forms.beta[k - 1] > 1e5;
      runs += high && !prev ? 1 : 0;
    }
    EXPECT_EQ(runs, 3u);
  }
}

TEST(Benchmark, EmptyCheckerAndErrors) {
  EXPECT_TRUE(benchmark_field({"channels", 0, {}}, 64, 16, 1e6).empty());
  EXPECT_EQ(benchmark_field({"checker", 3, {}}, 8, 4, 10).size(), 2u);
  EXPECT_THROW(benchmark_field({"spiral", 3, {}}, 8, 4, 10), UsageError);
  EXPECT_THROW(benchmark_field({"channels", 3, {}}, 16, 4, 10), UsageError);  // no room in 4 cells
  EXPECT_THROW(parse_config(R"({"mesh":{"n":8},"partition":{"H_cells":4},"alpha":{"benchmark":{"name":"spiral"}}})"), UsageError);
}

TEST(Benchmark, InclusionsStraddleInterfaces) {
  const auto incs = benchmark_field({"inclusions-crossing", 3, {1, 2, 3}}, 32, 16, 1e5);
  // 2x2 partition: 4 interfaces, three rectangles each
  EXPECT_EQ(incs.size(), 12u);
  const Mesh mesh(32);
  const auto p = build_partition(mesh, 16);
  const auto field = build_coefficient_field(mesh, 1.0, incs);
  for (const auto& f : p.interfaces) {
    const auto forms = build_trace_forms(mesh, field, p, f.id);
    std::size_t high_i = 0, high_j = 0;
    for (std::size_t k = 0; k < forms.coeff.size(); ++k) {
      high_i += forms.coeff_i[k] > 1e4 ? 1 : 0;
      high_j += forms.coeff_j[k] > 1e4 ? 1 : 0;
    }
    EXPECT_GT(high_i, 0u);
    EXPECT_EQ(high_i, high_j);
  }
}

TEST(Sweep, PointOrderAndCounts) {
  auto c = parse_config(R"({"mesh":{"n":16},"partition":{"H_cells":4},"coarse":{"m":3},
    "sweep":{"contrast":[1,1e2,1e4,1e6],"type":["ms","shem"]}})");
  const auto pts = sweep_points(c);
  ASSERT_EQ(pts.size(), 8u);
  EXPECT_EQ(pts[0].method, "ms");
  EXPECT_EQ(pts[3].contrast, 1e6);
  EXPECT_EQ(pts[4].method, "shem");
  EXPECT_EQ(pts[4].m, 3u);
  c.sweep_m = {1, 2};
  c.sweep_delta = {1, 2, 3};
  EXPECT_EQ(sweep_points(c).size(), 4u * 3u * (1u + 2u));
}

TEST(Sweep, RowsAreDeterministicAcrossThreadCounts) {
  const auto c = parse_config(kSmall);
  const auto a = run_sweep(c, 1), b = run_sweep(c, 3);
  ASSERT_EQ(a.rows.size(), 2u * (1u + 2u + 2u));
  EXPECT_EQ(emit_report(a.rows, ReportFormat::csv), emit_report(b.rows, ReportFormat::csv));
  EXPECT_FALSE(a.any_numerical_failure());
  for (const auto& r : a.rows) {
    EXPECT_TRUE(r.error.empty()) << r.error;
    EXPECT_TRUE(r.converged);
    EXPECT_GE(r.kappa, 1.0);
    // n_nu + sum of m_ij over the 24 interfaces of a 4x4 partition
    EXPECT_EQ(r.coarse_dim, 9u + (r.method == "ms" ? 0u : 24u * r.m));
  }
}

TEST(Sweep, FailuresStayInTheirRow) {
  auto c = parse_config(kSmall);
  c.sweep_m = {1, 7};  // 7 exceeds the 3 interface modes; bypasses parse validation
  c.sweep_type = {"shem", "ms"};
  const auto res = run_sweep(c, 2);
  ASSERT_EQ(res.rows.size(), 6u);
  EXPECT_TRUE(res.rows[0].error.empty());
  EXPECT_FALSE(res.rows[2].error.empty());
  EXPECT_FALSE(res.rows[2].numerical_failure);
  EXPECT_TRUE(res.rows[4].error.empty());
  EXPECT_NE(emit_report(res.rows, ReportFormat::markdown).find("failed"), std::string::npos);
}

TEST(Sweep, NonoverlappingOhemIsOneIteration) {
  const auto c = load_config(config_path("ohem_nonoverlapping.json"));
  const auto res = run_sweep(c, 2);
  ASSERT_FALSE(res.rows.empty());
  for (const auto& r : res.rows) {
    EXPECT_EQ(r.method, "ohem");
    EXPECT_EQ(r.iterations, 1u);
    EXPECT_TRUE(r.converged);
  }
}

TEST(Report, Formatting) {
  EXPECT_EQ(format_sci(3.64e6), "3.64e6");
  EXPECT_EQ(format_sci(0.01), "1.00e-2");
  EXPECT_EQ(format_sci(1.0), "1.00e0");
  EXPECT_EQ(format_sci(123.456), "1.23e2");
  EXPECT_EQ(format_sci(std::numeric_limits<double>::infinity()), "inf");
  EXPECT_EQ(format_compact(1e6), "1e6");
  EXPECT_EQ(format_compact(100), "100");
  EXPECT_EQ(format_compact(1e4), "1e4");
  EXPECT_EQ(format_compact(2.5e6), "2.5e6");
  EXPECT_EQ(format_compact(1e-4), "1e-4");
  EXPECT_EQ(format_compact(0.5), "0.5");
  EXPECT_EQ(report_format_from_string("markdown"), ReportFormat::markdown);
  EXPECT_THROW(report_format_from_string("xml"), UsageError);
}

TEST(Report, CsvShape) {
  EXPECT_EQ(emit_report({}, ReportFormat::csv), std::string(kCsvHeader) + "\n");
  ResultRow r;
  r.method = "shem";
  r.m = 3;
  r.contrast = 1e6;
  r.delta = 2;
  r.coarse_dim = 81;
  r.iterations = 610;
  r.kappa = 3.64e6;
  r.lambda_m_plus_1 = 0.25;
  r.final_relres = 9.1e-7;
  r.converged = true;
  const auto csv = emit_report({r}, ReportFormat::csv);
  EXPECT_EQ(count_lines(csv), 2u);
  EXPECT_EQ(csv.substr(csv.find('\n') + 1), "shem,3,1e6,2,81,610,3.64e6,2.500000e-1,9.10e-7,true\n");
}

TEST(Report, MarkdownCells) {
  ResultRow a;
  a.method = "ms";
  a.contrast = 1e6;
  a.iterations = 610;
  a.kappa = 3.64e6;
  a.converged = true;
  ResultRow b = a;
  b.method = "shem";
  b.m = 3;
  b.iterations = 2000;
  b.kappa = 12.0;
  b.converged = false;
  const auto md = emit_report({a, b}, ReportFormat::markdown);
  EXPECT_NE(md.find("| contrast | ms | shem_3 |"), std::string::npos);
  EXPECT_NE(md.find("| 1e6 | 610 (3.64e6) | 2000* (1.20e1) |"), std::string::npos);
  EXPECT_NE(md.find("not converged"), std::string::npos);
}

TEST(Report, SpectrumDump) {
  const auto c = parse_config(R"({"mesh":{"n":8},"partition":{"H_cells":4}})");
  const Problem prob(c, c.contrast, 1);
  const auto text = emit_spectrum(prob.ctx);
  EXPECT_EQ(text.substr(0, text.find('\n')), "interface_id,k,lambda");
  EXPECT_EQ(count_lines(text), 1u + 4u * 3u);
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  EXPECT_EQ(line.substr(0, 4), "0,1,");
  EXPECT_NEAR(std::stod(line.substr(4)), std::sqrt(2.0) / 6.0 * (2.0 - std::sqrt(2.0)), 1e-11);
}

TEST(Checks, MinimalConfigPassesEveryCheck) {
  const auto c = load_config(config_path("minimal.json"));
  const auto results = run_checks(c, 7, 2);
  EXPECT_GE(results.size(), 7u);
  for (const auto& r : results) EXPECT_TRUE(r.passed) << r.name << ": " << r.detail;
}
