#pragma once

// Experiment runner: JSON configs, benchmark coefficient fields, parameter
// sweeps and report formatting shared by the command line tool and the tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hem/coarse.hpp"
#include "hem/error.hpp"
#include "hem/schwarz.hpp"

namespace hem {

struct BenchmarkSpec {
  std::string name;                       // channels | inclusions-crossing | checker
  std::size_t channels = 3;               // strips per subdomain row
  std::vector<std::size_t> sizes{1, 2, 3};  // inclusion half-widths in cells
};

struct InclusionSpec {
  Inclusion box;
  bool uses_contrast = false;
};

/// One point of a sweep; `method` is a coarse type name or "shem-adapt".
struct SweepPoint {
  std::string method;
  std::size_t m = 0;
  std::size_t delta = 0;
  double contrast = 1.0;
};

struct ExperimentConfig {
  std::size_t n = 0;
  std::size_t h_cells = 0;
  std::size_t delta_layers = 0;
  double background = 1.0;
  double contrast = 1.0;
  double source = 1.0;
  std::vector<InclusionSpec> inclusions;
  std::optional<std::string> raster_path;
  std::optional<BenchmarkSpec> benchmark;
  std::string coarse_type = "ms";
  std::size_t m = 0;
  std::optional<AdaptiveSpec> adaptive;
  PcgOptions solver;
  std::vector<double> sweep_contrast;
  std::vector<std::size_t> sweep_m;
  std::vector<std::size_t> sweep_delta;
  std::vector<std::string> sweep_type;

  /// The single run described without the sweep lists.
  SweepPoint base_point() const { return {base_method(), m, delta_layers, contrast}; }
  std::string base_method() const { return coarse_type == "shem" && adaptive ? "shem-adapt" : coarse_type; }
};

namespace detail {

using nlohmann::json;

inline const json* member(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

inline const json& object_at(const json& obj, const char* key, const std::string& path, bool required) {
  static const json empty = json::object();
  const auto* v = member(obj, key);
  if (v == nullptr) {
    if (required) throw UsageError("config: missing required field '" + path + "'");
    return empty;
  }
  if (!v->is_object()) throw UsageError("config: field '" + path + "' must be an object");
  return *v;
}

inline double number_at(const json& obj, const char* key, const std::string& path, std::optional<double> fallback) {
  const auto* v = member(obj, key);
  if (v == nullptr) {
    if (!fallback) throw UsageError("config: missing required field '" + path + "'");
    return *fallback;
  }
  if (!v->is_number()) throw UsageError("config: field '" + path + "' must be a number");
  return v->get<double>();
}

inline std::size_t count_value(const json& v, const std::string& path) {
  if (!v.is_number_integer() || v.get<long long>() < 0) throw UsageError("config: field '" + path + "' must be a non-negative integer");
  return static_cast<std::size_t>(v.get<long long>());
}

inline std::size_t count_at(const json& obj, const char* key, const std::string& path, std::optional<std::size_t> fallback) {
  const auto* v = member(obj, key);
  if (v == nullptr) {
    if (!fallback) throw UsageError("config: missing required field '" + path + "'");
    return *fallback;
  }
  return count_value(*v, path);
}

inline bool bool_at(const json& obj, const char* key, const std::string& path, bool fallback) {
  const auto* v = member(obj, key);
  if (v == nullptr) return fallback;
  if (!v->is_boolean()) throw UsageError("config: field '" + path + "' must be true or false");
  return v->get<bool>();
}

inline const json* array_at(const json& obj, const char* key, const std::string& path) {
  const auto* v = member(obj, key);
  if (v != nullptr && !v->is_array()) throw UsageError("config: field '" + path + "' must be an array");
  return v;
}

inline bool known_method(const std::string& s) {
  return s == "ms" || s == "shem" || s == "nshem-alt" || s == "nshem-sin" || s == "nshem-hier" || s == "ohem" || s == "shem-adapt";
}

}  // namespace detail

inline ExperimentConfig parse_config(const std::string& text) {
  using detail::json;
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw UsageError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!root.is_object()) throw UsageError("config: top level must be an object");

  ExperimentConfig c;
  const auto& mesh = detail::object_at(root, "mesh", "mesh", true);
  c.n = detail::count_at(mesh, "n", "mesh.n", std::nullopt);
  const auto& part = detail::object_at(root, "partition", "partition", true);
  c.h_cells = detail::count_at(part, "H_cells", "partition.H_cells", std::nullopt);
  c.delta_layers = detail::count_at(part, "delta_layers", "partition.delta_layers", 0);
  if (c.n < 2) throw UsageError("config: mesh.n must be at least 2");
  if (c.h_cells == 0 || c.n % c.h_cells != 0) {
    throw UsageError("config: partition.H_cells=" + std::to_string(c.h_cells) + " must divide mesh.n=" + std::to_string(c.n));
  }
  if (c.n / c.h_cells < 2) throw UsageError("config: partition.H_cells must leave at least 2 subdomains per side");

  const auto& alpha = detail::object_at(root, "alpha", "alpha", false);
  c.background = detail::number_at(alpha, "background", "alpha.background", 1.0);
  c.contrast = detail::number_at(alpha, "contrast", "alpha.contrast", 1.0);
  c.source = detail::number_at(root, "source", "source", 1.0);
  if (!(c.background > 0.0)) throw UsageError("config: alpha.background must be positive");
  if (!(c.contrast >= 1.0)) throw UsageError("config: alpha.contrast must be >= 1");
  if (const auto* incs = detail::array_at(alpha, "inclusions", "alpha.inclusions")) {
    for (std::size_t k = 0; k < incs->size(); ++k) {
      const auto path = "alpha.inclusions[" + std::to_string(k) + "]";
      const auto& item = (*incs)[k];
      if (!item.is_object()) throw UsageError("config: field '" + path + "' must be an object");
      InclusionSpec s;
      s.box.x0 = detail::number_at(item, "x0", path + ".x0", std::nullopt);
      s.box.y0 = detail::number_at(item, "y0", path + ".y0", std::nullopt);
      s.box.x1 = detail::number_at(item, "x1", path + ".x1", std::nullopt);
      s.box.y1 = detail::number_at(item, "y1", path + ".y1", std::nullopt);
      const auto* value = detail::member(item, "value");
      if (value == nullptr || (value->is_string() && value->get<std::string>() == "contrast")) {
        s.uses_contrast = true;
      } else if (value->is_number() && value->get<double>() > 0.0) {
        s.box.value = value->get<double>();
      } else {
        throw UsageError("config: field '" + path + ".value' must be a positive number or \"contrast\"");
      }
      if (!(s.box.x0 <= s.box.x1 && s.box.y0 <= s.box.y1)) throw UsageError("config: field '" + path + "' has inverted bounds");
      c.inclusions.push_back(s);
    }
  }
  if (const auto* rp = detail::member(alpha, "raster_path")) {
    if (!rp->is_string()) throw UsageError("config: field 'alpha.raster_path' must be a string");
    c.raster_path = rp->get<std::string>();
  }
  if (const auto* bm = detail::member(alpha, "benchmark")) {
    if (!bm->is_object()) throw UsageError("config: field 'alpha.benchmark' must be an object");
    BenchmarkSpec b;
    const auto* name = detail::member(*bm, "name");
    if (name == nullptr || !name->is_string()) throw UsageError("config: field 'alpha.benchmark.name' must be a string");
    b.name = name->get<std::string>();
    if (b.name != "channels" && b.name != "inclusions-crossing" && b.name != "checker") {
      throw UsageError("config: unknown benchmark '" + b.name + "' in 'alpha.benchmark.name'");
    }
    b.channels = detail::count_at(*bm, "c", "alpha.benchmark.c", 3);
    if (const auto* sz = detail::array_at(*bm, "sizes", "alpha.benchmark.sizes")) {
      b.sizes.clear();
      for (std::size_t k = 0; k < sz->size(); ++k) b.sizes.push_back(detail::count_value((*sz)[k], "alpha.benchmark.sizes"));
    }
    c.benchmark = b;
  }

  const auto& coarse = detail::object_at(root, "coarse", "coarse", false);
  if (const auto* t = detail::member(coarse, "type")) {
    if (!t->is_string() || !detail::known_method(t->get<std::string>())) {
      throw UsageError("config: field 'coarse.type' must be one of ms, shem, shem-adapt, nshem-alt, nshem-sin, nshem-hier, ohem");
    }
    c.coarse_type = t->get<std::string>();
  }
  c.m = detail::count_at(coarse, "m", "coarse.m", 0);
  if (const auto* ad = detail::member(coarse, "adaptive")) {
    if (!ad->is_object()) throw UsageError("config: field 'coarse.adaptive' must be an object");
    AdaptiveSpec a;
    a.tau = detail::number_at(*ad, "tau", "coarse.adaptive.tau", a.tau);
    a.min_one = detail::bool_at(*ad, "min_one", "coarse.adaptive.min_one", true);
    a.laplacian_relative = detail::bool_at(*ad, "laplacian_relative", "coarse.adaptive.laplacian_relative", false);
    if (!(a.tau > 0.0)) throw UsageError("config: field 'coarse.adaptive.tau' must be positive");
    c.adaptive = a;
  }
  if (c.coarse_type == "shem-adapt" && !c.adaptive) c.adaptive = AdaptiveSpec{};

  const auto& solver = detail::object_at(root, "solver", "solver", false);
  c.solver.tol = detail::number_at(solver, "tol", "solver.tol", 1e-6);
  c.solver.maxit = detail::count_at(solver, "maxit", "solver.maxit", 2000);
  if (!(c.solver.tol > 0.0 && c.solver.tol < 1.0)) throw UsageError("config: field 'solver.tol' must lie in (0, 1)");
  if (c.solver.maxit == 0) throw UsageError("config: field 'solver.maxit' must be positive");

  const auto& sweep = detail::object_at(root, "sweep", "sweep", false);
  if (const auto* v = detail::array_at(sweep, "contrast", "sweep.contrast")) {
    for (const auto& x : *v) {
      if (!x.is_number() || !(x.get<double>() >= 1.0)) throw UsageError("config: field 'sweep.contrast' entries must be numbers >= 1");
      c.sweep_contrast.push_back(x.get<double>());
    }
  }
  if (const auto* v = detail::array_at(sweep, "m", "sweep.m")) {
    for (const auto& x : *v) c.sweep_m.push_back(detail::count_value(x, "sweep.m"));
  }
  if (const auto* v = detail::array_at(sweep, "delta", "sweep.delta")) {
    for (const auto& x : *v) c.sweep_delta.push_back(detail::count_value(x, "sweep.delta"));
  }
  if (const auto* v = detail::array_at(sweep, "type", "sweep.type")) {
    for (const auto& x : *v) {
      if (!x.is_string() || !detail::known_method(x.get<std::string>())) {
        throw UsageError("config: field 'sweep.type' entries must be coarse space names");
      }
      c.sweep_type.push_back(x.get<std::string>());
    }
  }
  const auto modes = c.h_cells - 1;
  auto check_m = [&](std::size_t m, const char* field) {
    if (m > modes) {
      throw UsageError(std::string("config: field '") + field + "' = " + std::to_string(m) + " exceeds the " + std::to_string(modes) +
                       " interior nodes per interface");
    }
  };
  check_m(c.m, "coarse.m");
  for (auto m : c.sweep_m) check_m(m, "sweep.m");
  return c;
}

/// Reads a config file; a relative raster path is resolved against the
/// directory of the config.
inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  auto cfg = parse_config(buf.str());
  if (cfg.raster_path && std::filesystem::path(*cfg.raster_path).is_relative()) {
    cfg.raster_path = (std::filesystem::path(path).parent_path() / *cfg.raster_path).string();
  }
  return cfg;
}

/// Inclusions of a named benchmark geometry at the given contrast. Lengths
/// are in cells of size h; `h_cells` is the subdomain width.
///  - channels: `c` horizontal strips of height 2h per subdomain row, spanning
///    the width up to one cell from the Dirichlet boundary, so each crosses
///    every vertical interface and floats (is not pinned to zero).
///  - inclusions-crossing: on every interface, one rectangle per entry of
///    `sizes` reaching `size` cells into both neighbours and 2 cells long.
///  - checker: subdomains with odd sx + sy.
inline std::vector<Inclusion> benchmark_field(const BenchmarkSpec& spec, std::size_t n, std::size_t h_cells, double contrast) {
  if (h_cells == 0 || n % h_cells != 0) throw UsageError("benchmark_field: H_cells must divide n");
  const double h = 1.0 / static_cast<double>(n);
  const auto per_side = n / h_cells;
  std::vector<Inclusion> out;
  // centres of `c` equally spaced slots inside one subdomain, in cells: the
  // first at 2, spacing (H-2)/c. The gap above the last slot is wider than
  // the one below the first, so the field has no mirror symmetry that would
  // hide eigenvectors from the f = 1 load.
  auto slots = [&](std::size_t c, std::size_t half_width, const char* what) {
    std::vector<std::size_t> centre;
    const auto spacing = h_cells > 2 ? (h_cells - 2) / c : 0;
    for (std::size_t k = 0; k < c; ++k) centre.push_back(2 + k * spacing);
    for (std::size_t k = 0; k < c; ++k) {
      const bool clear_low = centre[k] >= half_width + 1;
      const bool clear_high = centre[k] + half_width + 1 <= h_cells;
      const bool clear_next = k + 1 == c || centre[k] + 2 * half_width < centre[k + 1];
      if (!clear_low || !clear_high || !clear_next) {
        throw UsageError(std::string("benchmark_field: ") + what + " do not fit in a subdomain of " + std::to_string(h_cells) +
                         " cells without touching each other or the subdomain boundary");
      }
    }
    return centre;
  };
  if (spec.name == "channels") {
    if (spec.channels == 0) return out;
    const auto centre = slots(spec.channels, 1, "channels");
    for (std::size_t sy = 0; sy < per_side; ++sy) {
      for (auto c : centre) {
        const auto mid = static_cast<double>(sy * h_cells + c);
        out.push_back({h, (mid - 1.0) * h, 1.0 - h, (mid + 1.0) * h, contrast});
      }
    }
  } else if (spec.name == "inclusions-crossing") {
    if (spec.sizes.empty()) return out;
    const auto centre = slots(spec.sizes.size(), 1, "inclusions");
    for (auto s : spec.sizes) {
      if (s == 0 || s >= h_cells) throw UsageError("benchmark_field: inclusion sizes must lie in [1, H_cells)");
    }
    for (std::size_t sy = 0; sy < per_side; ++sy) {
      for (std::size_t sx = 0; sx < per_side; ++sx) {
        const auto x0 = static_cast<double>(sx * h_cells), y0 = static_cast<double>(sy * h_cells);
        const auto xe = x0 + static_cast<double>(h_cells), ye = y0 + static_cast<double>(h_cells);
        for (std::size_t k = 0; k < centre.size(); ++k) {
          const auto along = static_cast<double>(centre[k]);
          const auto across = static_cast<double>(spec.sizes[k]);
          if (sx + 1 < per_side) out.push_back({(xe - across) * h, (y0 + along - 1.0) * h, (xe + across) * h, (y0 + along + 1.0) * h, contrast});
          if (sy + 1 < per_side) out.push_back({(x0 + along - 1.0) * h, (ye - across) * h, (x0 + along + 1.0) * h, (ye + across) * h, contrast});
        }
      }
    }
  } else if (spec.name == "checker") {
    for (std::size_t sy = 0; sy < per_side; ++sy) {
      for (std::size_t sx = 0; sx < per_side; ++sx) {
        if ((sx + sy) % 2 == 1) {
          out.push_back({static_cast<double>(sx * h_cells) * h, static_cast<double>(sy * h_cells) * h,
                         static_cast<double>((sx + 1) * h_cells) * h, static_cast<double>((sy + 1) * h_cells) * h, contrast});
        }
      }
    }
  } else {
    throw UsageError("benchmark_field: unknown benchmark '" + spec.name + "'");
  }
  return out;
}

inline CoefficientField build_field(const ExperimentConfig& cfg, const Mesh& mesh, double contrast) {
  std::vector<Inclusion> incs;
  if (cfg.benchmark) incs = benchmark_field(*cfg.benchmark, cfg.n, cfg.h_cells, contrast);
  for (const auto& s : cfg.inclusions) {
    auto box = s.box;
    if (s.uses_contrast) box.value = contrast;
    incs.push_back(box);
  }
  if (!cfg.raster_path) return build_coefficient_field(mesh, cfg.background, incs);
  auto field = load_raster_field(mesh, read_raster_csv(*cfg.raster_path));
  for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
    for (const auto& inc : incs) {
      if (inc.contains(mesh.centroid(e))) field.values[e] = inc.value;
    }
  }
  return field;
}

/// A discretized problem with its interface spectra, shared by all sweep
/// points of one contrast.
struct Problem {
  Discretization disc;
  CoarseContext ctx;

  Problem(const ExperimentConfig& cfg, double contrast, std::size_t threads)
      : disc(Mesh(cfg.n), build_field(cfg, Mesh(cfg.n), contrast), cfg.h_cells, cfg.source), ctx(disc, threads) {}
  Problem(const Problem&) = delete;
  Problem& operator=(const Problem&) = delete;
};

inline CoarseSpec coarse_spec_for(const ExperimentConfig& cfg, const SweepPoint& pt) {
  if (pt.method == "shem-adapt") return {CoarseType::shem, 0, cfg.adaptive.value_or(AdaptiveSpec{})};
  return {coarse_type_from_string(pt.method), pt.m, std::nullopt};
}

/// Local dof sets of the overlapping subdomains.
inline std::vector<std::vector<std::size_t>> local_dof_sets(const Discretization& d, std::size_t delta) {
  const auto overlap = extend_overlap(d.mesh, d.partition, delta);
  std::vector<std::vector<std::size_t>> out(overlap.nodes.size());
  for (std::size_t s = 0; s < out.size(); ++s) {
    for (auto v : overlap.nodes[s]) out[s].push_back(d.system.dof(v));
  }
  return out;
}

struct ResultRow {
  std::string method;
  std::size_t m = 0;
  double contrast = 1.0;
  std::size_t delta = 0;
  std::size_t coarse_dim = 0;
  std::size_t iterations = 0;
  double kappa = std::nan("");
  double lambda_m_plus_1 = std::numeric_limits<double>::infinity();
  double final_relres = std::nan("");
  bool converged = false;
  std::string error;  // set when the point could not be run
  bool numerical_failure = false;
};

struct PointRun {
  ResultRow row;
  CoarseSpace coarse;
  SolveReport report;
};

/// Builds the coarse space and preconditioner for one sweep point and solves.
inline PointRun run_point(const ExperimentConfig& cfg, const Problem& prob, const SweepPoint& pt, std::size_t threads = 1) {
  PointRun out;
  out.coarse = build_coarse_space(prob.ctx, coarse_spec_for(cfg, pt));
  const auto& sys = prob.disc.system;
  const Preconditioner prec(sys.A, local_dof_sets(prob.disc, pt.delta), out.coarse.basis, SchwarzMode::two_level, threads);
  out.report = pcg(sys.A, prec, sys.b, cfg.solver);
  out.report.coarse_dim = out.coarse.dimension();
  out.report.lambda_m_plus_1 = out.coarse.lambda_m_plus_1;

  auto& r = out.row;
  r.method = pt.method;
  r.m = pt.m;
  if (pt.method == "ms") r.m = 0;
  if (pt.method == "ohem" || pt.method == "shem-adapt") {
    r.m = out.coarse.enrichment.empty() ? 0 : *std::max_element(out.coarse.enrichment.begin(), out.coarse.enrichment.end());
  }
  r.contrast = pt.contrast;
  r.delta = pt.delta;
  r.coarse_dim = out.coarse.dimension();
  r.iterations = out.report.iterations;
  r.kappa = out.report.kappa_estimate;
  r.lambda_m_plus_1 = out.coarse.lambda_m_plus_1;
  r.final_relres = out.report.final_relres;
  r.converged = out.report.converged;
  return out;
}

/// Sweep points in the order type, m, delta, contrast (contrast fastest).
/// The m list only multiplies methods that use it.
inline std::vector<SweepPoint> sweep_points(const ExperimentConfig& cfg) {
  const auto types = cfg.sweep_type.empty() ? std::vector<std::string>{cfg.base_method()} : cfg.sweep_type;
  const auto ms = cfg.sweep_m.empty() ? std::vector<std::size_t>{cfg.m} : cfg.sweep_m;
  const auto deltas = cfg.sweep_delta.empty() ? std::vector<std::size_t>{cfg.delta_layers} : cfg.sweep_delta;
  const auto contrasts = cfg.sweep_contrast.empty() ? std::vector<double>{cfg.contrast} : cfg.sweep_contrast;
  std::vector<SweepPoint> pts;
  for (const auto& t : types) {
    const bool uses_m = t == "shem" || t.rfind("nshem", 0) == 0;
    const auto m_list = uses_m ? ms : std::vector<std::size_t>{0};
    for (auto m : m_list) {
      for (auto d : deltas) {
        for (auto c : contrasts) pts.push_back({t, m, d, c});
      }
    }
  }
  return pts;
}

struct SweepResult {
  std::vector<ResultRow> rows;
  bool any_numerical_failure() const {
    return std::any_of(rows.begin(), rows.end(), [](const ResultRow& r) { return r.numerical_failure; });
  }
};

/// Runs every sweep point; failures are recorded in their row.
inline SweepResult run_sweep(const ExperimentConfig& cfg, std::size_t threads = 1) {
  const auto pts = sweep_points(cfg);
  std::vector<double> contrasts;
  for (const auto& p : pts) {
    if (std::find(contrasts.begin(), contrasts.end(), p.contrast) == contrasts.end()) contrasts.push_back(p.contrast);
  }
  std::vector<std::unique_ptr<Problem>> problems(contrasts.size());
  std::vector<std::string> problem_error(contrasts.size());
  std::vector<char> problem_numerical(contrasts.size(), 0);
  parallel_for(contrasts.size(), threads, [&](std::size_t k) {
    try {
      problems[k] = std::make_unique<Problem>(cfg, contrasts[k], 1);
    } catch (const UsageError& e) {
      problem_error[k] = e.what();
    } catch (const std::exception& e) {
      problem_error[k] = e.what();
      problem_numerical[k] = 1;
    }
  });
  SweepResult res;
  res.rows.resize(pts.size());
  parallel_for(pts.size(), threads, [&](std::size_t i) {
    const auto& pt = pts[i];
    const auto k = static_cast<std::size_t>(std::find(contrasts.begin(), contrasts.end(), pt.contrast) - contrasts.begin());
    auto& row = res.rows[i];
    row.method = pt.method;
    row.m = pt.m;
    row.delta = pt.delta;
    row.contrast = pt.contrast;
    if (!problems[k]) {
      row.error = problem_error[k];
      row.numerical_failure = problem_numerical[k] != 0;
      return;
    }
    try {
      row = run_point(cfg, *problems[k], pt, 1).row;
    } catch (const UsageError& e) {
      row.error = e.what();
    } catch (const std::exception& e) {
      row.error = e.what();
      row.numerical_failure = true;
    }
  });
  return res;
}

/// Scientific notation with three significant digits and a bare exponent,
/// e.g. 3.64e6 or 1.00e-2.
inline std::string format_sci(double v, int digits = 2) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*e", digits, v);
  std::string s(buf);
  const auto e = s.find('e');
  std::string mant = s.substr(0, e);
  std::string exp = s.substr(e + 1);
  bool neg = exp[0] == '-';
  exp = exp.substr(1);
  exp.erase(0, std::min(exp.find_first_not_of('0'), exp.size() - 1));
  return mant + "e" + (neg ? "-" : "") + exp;
}

/// Short formatting with a bare exponent from 1e3 upward (100, 1e4, 2.5e6).
inline std::string format_compact(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const double mag = std::abs(v);
  if (mag != 0.0 && (mag >= 1e3 || mag < 1e-3)) {
    std::snprintf(buf, sizeof buf, "%.6e", v);
  } else {
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
  }
  std::string s(buf);
  const auto e = s.find('e');
  std::string mant = s.substr(0, e);
  mant.erase(mant.find_last_not_of('0') + 1);
  if (mant.back() == '.') mant.pop_back();
  std::string exp = s.substr(e + 1);
  const bool neg = exp[0] == '-';
  exp = exp.substr(1);
  exp.erase(0, std::min(exp.find_first_not_of('0'), exp.size() - 1));
  return mant + "e" + (neg ? "-" : "") + exp;
}

enum class ReportFormat { csv, markdown };

inline ReportFormat report_format_from_string(const std::string& s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "markdown") return ReportFormat::markdown;
  throw UsageError("unknown format '" + s + "' (expected csv or markdown)");
}

inline constexpr const char* kCsvHeader = "method,m,contrast,delta,coarse_dim,iterations,kappa,lambda_m_plus_1,final_relres,converged";

inline std::string method_label(const ResultRow& r) {
  if (r.method == "ms" || r.method == "ohem" || r.method == "shem-adapt") return r.method;
  return r.method + "_" + std::to_string(r.m);
}

inline std::string emit_report(const std::vector<ResultRow>& rows, ReportFormat fmt) {
  std::ostringstream out;
  if (fmt == ReportFormat::csv) {
    out << kCsvHeader << '\n';
    for (const auto& r : rows) {
      out << r.method << ',' << r.m << ',' << format_compact(r.contrast) << ',' << r.delta << ',' << r.coarse_dim << ',' << r.iterations
          << ',' << format_sci(r.kappa) << ',' << format_sci(r.lambda_m_plus_1, 6) << ',' << format_sci(r.final_relres) << ','
          << (r.converged ? "true" : "false") << '\n';
    }
    return out.str();
  }
  // one row per contrast, one column per (method, delta); cells "#it. (kappa)"
  std::vector<std::string> columns;
  std::vector<double> contrasts;
  std::map<std::pair<std::string, double>, std::string> cells;
  std::set<std::size_t> deltas;
  for (const auto& r : rows) deltas.insert(r.delta);
  for (const auto& r : rows) {
    auto col = method_label(r);
    if (deltas.size() > 1) col += " δ=" + std::to_string(r.delta);
    if (std::find(columns.begin(), columns.end(), col) == columns.end()) columns.push_back(col);
    if (std::find(contrasts.begin(), contrasts.end(), r.contrast) == contrasts.end()) contrasts.push_back(r.contrast);
    std::string cell;
    if (!r.error.empty()) {
      cell = "failed";
    } else {
      cell = std::to_string(r.iterations) + (r.converged ? "" : "*") + " (" + format_sci(r.kappa) + ")";
    }
    cells[{col, r.contrast}] = cell;
  }
  out << "| contrast |";
  for (const auto& c : columns) out << ' ' << c << " |";
  out << "\n|---|";
  for (std::size_t k = 0; k < columns.size(); ++k) out << "---|";
  out << '\n';
  for (auto c : contrasts) {
    out << "| " << format_compact(c) << " |";
    for (const auto& col : columns) {
      auto it = cells.find({col, c});
      out << ' ' << (it == cells.end() ? "" : it->second) << " |";
    }
    out << '\n';
  }
  if (std::any_of(rows.begin(), rows.end(), [](const ResultRow& r) { return r.error.empty() && !r.converged; })) {
    out << "\n\\* not converged within maxit\n";
  }
  return out.str();
}

/// CSV dump of every interface spectrum, k counted from 1.
inline std::string emit_spectrum(const CoarseContext& ctx) {
  std::ostringstream out;
  out << "interface_id,k,lambda\n";
  char buf[64];
  for (const auto& s : ctx.spectra()) {
    for (std::size_t k = 0; k < s.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.12e", s.eigenvalues[k]);
      out << s.interface_id << ',' << k + 1 << ',' << buf << '\n';
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Invariant suite

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

inline Vector random_vector(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Vector v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

/// Relative A-norm distance between `x` and the direct solution of A y = b.
inline double direct_solve_error(const LinearSystem& sys, std::span<const double> x) {
  const auto exact = SpdFactorization(sys.A).solve(sys.b);
  Vector diff(x.begin(), x.end());
  axpy(-1.0, exact, diff);
  const double denom = energy(sys.A, exact);
  return denom > 0.0 ? std::sqrt(energy(sys.A, diff) / denom) : std::sqrt(energy(sys.A, diff));
}

/// Interface projection properties for `samples` random traces on every
/// interface, for enrichment counts 0..M. Returns the worst slack seen.
inline double worst_projection_slack(const CoarseContext& ctx, std::size_t samples, std::mt19937_64& rng) {
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t f = 0; f < ctx.forms().size(); ++f) {
    const auto& forms = ctx.forms()[f];
    const auto& spec = ctx.spectra()[f];
    for (std::size_t s = 0; s < samples; ++s) {
      const auto v = random_vector(rng, forms.size());
      for (std::size_t m = 0; m <= spec.size(); ++m) {
        const auto c = check_trace_projection(forms, spec, m, v);
        worst = std::max({worst, c.stability_excess(), c.pythagoras_defect(), c.approximation_excess()});
      }
    }
  }
  return worst;
}

inline std::vector<CheckResult> run_checks(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t threads = 1) {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(seed);
  const auto pt = cfg.base_point();
  const Problem prob(cfg, pt.contrast, threads);
  const auto& sys = prob.disc.system;
  char buf[160];

  const double slack = worst_projection_slack(prob.ctx, 200, rng);
  std::snprintf(buf, sizeof buf, "worst relative slack %.3e over 200 traces per interface", slack);
  out.push_back({"interface_projection", slack <= 1e-10, buf});

  const auto cs = build_coarse_space(prob.ctx, coarse_spec_for(cfg, pt));
  double worst_h = 0.0;
  double a_norm = 0.0;
  for (std::size_t i = 0; i < sys.A.rows(); ++i) {
    double row = 0.0;
    for (std::size_t k = sys.A.row_offsets()[i]; k < sys.A.row_offsets()[i + 1]; ++k) row += std::abs(sys.A.values()[k]);
    a_norm = std::max(a_norm, row);
  }
  for (const auto& v : cs.basis) {
    const auto dense = v.to_dense(sys.size());
    const double scale = a_norm * std::max(norm2(dense), 1e-300);
    worst_h = std::max(worst_h, harmonic_residual(prob.ctx, dense) / scale);
  }
  std::snprintf(buf, sizeof buf, "max interior residual %.3e relative to |A||v| over %zu basis vectors", worst_h, cs.dimension());
  out.push_back({"coarse_basis_harmonic", worst_h <= 1e-10, buf});

  const Preconditioner prec(sys.A, local_dof_sets(prob.disc, pt.delta), cs.basis, SchwarzMode::two_level, threads);
  double worst_sym = 0.0;
  for (int s = 0; s < 10; ++s) {
    const auto r1 = random_vector(rng, sys.size());
    const auto r2 = random_vector(rng, sys.size());
    const double a = dot(r1, prec.apply(r2)), b = dot(r2, prec.apply(r1));
    worst_sym = std::max(worst_sym, std::abs(a - b) / std::max(std::abs(a), std::abs(b)));
  }
  std::snprintf(buf, sizeof buf, "max relative asymmetry %.3e over 10 random pairs", worst_sym);
  out.push_back({"preconditioner_symmetric", worst_sym <= 1e-12, buf});

  const auto rep = pcg(sys.A, prec, sys.b, cfg.solver);
  const double bound = 100.0 * (1.0 + 1.0 / cs.lambda_m_plus_1);
  std::snprintf(buf, sizeof buf, "kappa %.4e, bound 100(1+1/lambda) = %.4e", rep.kappa_estimate, bound);
  out.push_back({"condition_bound", rep.kappa_estimate <= bound, buf});

  if (rep.converged) {
    const double err = direct_solve_error(sys, rep.solution);
    std::snprintf(buf, sizeof buf, "%zu iterations, relative A-norm error %.3e", rep.iterations, err);
    out.push_back({"solution_matches_direct", err <= 1e-5, buf});
  } else {
    out.push_back({"solution_matches_direct", false, "pcg did not converge"});
  }

  if (sys.size() <= kOracleMaxSize) {
    const auto oracle = dense_condition_oracle(sys.A, prec);
    const double rel = std::abs(rep.kappa_estimate - oracle.kappa) / oracle.kappa;
    std::snprintf(buf, sizeof buf, "estimate %.4e, oracle %.4e, relative gap %.3e", rep.kappa_estimate, oracle.kappa, rel);
    out.push_back({"kappa_estimate_vs_oracle", rel <= 0.05, buf});
  }

  if (cs.eigen_based() && pt.delta >= 1) {
    const auto overlap = extend_overlap(prob.disc.mesh, prob.disc.partition, pt.delta);
    const auto pou = build_partition_of_unity(prob.disc.mesh, prob.disc.partition, overlap);
    double worst_ratio = 0.0, worst_defect = 0.0;
    for (int s = 0; s < 20; ++s) {
      const auto u = random_vector(rng, sys.size());
      const auto d = verify_stable_decomposition(prob.ctx, cs, overlap, pou, u);
      worst_ratio = std::max(worst_ratio, d.ratio);
      worst_defect = std::max(worst_defect, d.partition_defect);
    }
    std::snprintf(buf, sizeof buf, "max energy ratio %.4e (bound %.4e), max partition defect %.1e", worst_ratio, bound, worst_defect);
    out.push_back({"stable_decomposition", worst_ratio <= bound && worst_defect <= 1e-12, buf});
  }
  return out;
}

}  // namespace hem
