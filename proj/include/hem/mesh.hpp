#pragma once

// Structured P1 triangulation of the unit square and piecewise constant
// coefficient fields on it.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hem/error.hpp"
#include "hem/linalg.hpp"

namespace hem {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Uniform triangulation of (0,1)^2 with n cells per side. Each cell is cut
/// along its lower-left to upper-right diagonal. Node (ix, iy) has id
/// iy*(n+1)+ix; cell (cx, cy) owns triangles 2*(cy*n+cx) (lower-right half)
/// and 2*(cy*n+cx)+1 (upper-left half).
class Mesh {
 public:
  using Triangle = std::array<std::size_t, 3>;

  explicit Mesh(std::size_t n) : n_(n) {
    if (n < 2) throw UsageError("build_structured_mesh: need at least 2 cells per side, got " + std::to_string(n));
    h_ = 1.0 / static_cast<double>(n);
    const auto nv = (n + 1) * (n + 1);
    vertices_.resize(nv);
    boundary_.resize(nv);
    for (std::size_t iy = 0; iy <= n; ++iy) {
      for (std::size_t ix = 0; ix <= n; ++ix) {
        const auto id = node(ix, iy);
        vertices_[id] = {static_cast<double>(ix) * h_, static_cast<double>(iy) * h_};
        boundary_[id] = ix == 0 || iy == 0 || ix == n || iy == n;
      }
    }
    triangles_.reserve(2 * n * n);
    for (std::size_t cy = 0; cy < n; ++cy) {
      for (std::size_t cx = 0; cx < n; ++cx) {
        const auto ll = node(cx, cy);
        const auto lr = node(cx + 1, cy);
        const auto ur = node(cx + 1, cy + 1);
        const auto ul = node(cx, cy + 1);
        triangles_.push_back({ll, lr, ur});
        triangles_.push_back({ll, ur, ul});
      }
    }
    node_elements_.resize(nv);
    for (std::size_t e = 0; e < triangles_.size(); ++e) {
      for (auto v : triangles_[e]) node_elements_[v].push_back(e);
    }
  }

  std::size_t cells_per_side() const noexcept { return n_; }
  double h() const noexcept { return h_; }
  std::size_t num_nodes() const noexcept { return vertices_.size(); }
  std::size_t num_elements() const noexcept { return triangles_.size(); }

  std::size_t node(std::size_t ix, std::size_t iy) const noexcept { return iy * (n_ + 1) + ix; }
  std::size_t node_ix(std::size_t id) const noexcept { return id % (n_ + 1); }
  std::size_t node_iy(std::size_t id) const noexcept { return id / (n_ + 1); }
  std::size_t cell_of_element(std::size_t e) const noexcept { return e / 2; }

  const std::vector<Point>& vertices() const noexcept { return vertices_; }
  const std::vector<Triangle>& triangles() const noexcept { return triangles_; }
  bool is_boundary(std::size_t node_id) const { return boundary_[node_id]; }
  /// Elements incident to a node, in increasing element id.
  const std::vector<std::size_t>& elements_of_node(std::size_t node_id) const { return node_elements_[node_id]; }

  Point centroid(std::size_t e) const {
    const auto& t = triangles_[e];
    return {(vertices_[t[0]].x + vertices_[t[1]].x + vertices_[t[2]].x) / 3.0,
            (vertices_[t[0]].y + vertices_[t[1]].y + vertices_[t[2]].y) / 3.0};
  }

  double area(std::size_t e) const {
    const auto& t = triangles_[e];
    const auto& a = vertices_[t[0]];
    const auto& b = vertices_[t[1]];
    const auto& c = vertices_[t[2]];
    return 0.5 * std::abs((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
  }

  /// Longest edge.
  double diameter(std::size_t e) const {
    const auto& t = triangles_[e];
    double d = 0.0;
    for (int k = 0; k < 3; ++k) {
      const auto& p = vertices_[t[k]];
      const auto& q = vertices_[t[(k + 1) % 3]];
      d = std::max(d, std::hypot(p.x - q.x, p.y - q.y));
    }
    return d;
  }

 private:
  std::size_t n_;
  double h_;
  std::vector<Point> vertices_;
  std::vector<Triangle> triangles_;
  std::vector<bool> boundary_;
  std::vector<std::vector<std::size_t>> node_elements_;
};

inline Mesh build_structured_mesh(std::size_t n) { return Mesh(n); }

/// Per-element coefficient values.
struct CoefficientField {
  Vector values;

  double operator[](std::size_t e) const { return values[e]; }
  std::size_t size() const noexcept { return values.size(); }
  double min() const { return values.empty() ? 0.0 : *std::min_element(values.begin(), values.end()); }
  double max() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }
};

/// Axis-aligned closed rectangle carrying a coefficient value.
struct Inclusion {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;
  double value = 1.0;

  bool contains(Point p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
};

/// Background value everywhere except where an inclusion contains the element
/// centroid; the last listed inclusion wins on overlap.
inline CoefficientField build_coefficient_field(const Mesh& mesh, double background, std::span<const Inclusion> inclusions) {
  if (!(background > 0.0)) throw UsageError("build_coefficient_field: background must be positive");
  for (std::size_t k = 0; k < inclusions.size(); ++k) {
    if (!(inclusions[k].value > 0.0)) {
      throw UsageError("build_coefficient_field: inclusion " + std::to_string(k) + " has a non-positive value");
    }
  }
  CoefficientField field{Vector(mesh.num_elements(), background)};
  for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
    const auto c = mesh.centroid(e);
    for (const auto& inc : inclusions) {
      if (inc.contains(c)) field.values[e] = inc.value;
    }
  }
  return field;
}

/// m x m cell values; row 0 is the top of the domain.
struct RasterGrid {
  std::size_t m = 0;
  Vector values;  // row-major

  double at(std::size_t row, std::size_t col) const { return values[row * m + col]; }
};

inline RasterGrid parse_raster_csv(const std::string& text) {
  RasterGrid grid;
  std::istringstream lines(text);
  std::string line;
  std::size_t rows = 0;
  while (std::getline(lines, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream cells(line);
    std::string cell;
    std::size_t cols = 0;
    while (std::getline(cells, cell, ',')) {
      try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(cell);
        grid.values.push_back(v);
      } catch (const std::exception&) {
        throw UsageError("raster: row " + std::to_string(rows + 1) + " has a non-numeric cell '" + cell + "'");
      }
      ++cols;
    }
    if (rows == 0) grid.m = cols;
    if (cols != grid.m) throw UsageError("raster: row " + std::to_string(rows + 1) + " has " + std::to_string(cols) + " cells");
    ++rows;
  }
  if (rows == 0 || rows != grid.m) throw UsageError("raster: expected a square grid, got " + std::to_string(rows) + " rows");
  return grid;
}

inline RasterGrid read_raster_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("raster: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_raster_csv(buf.str());
}

/// Samples a raster at element centroids using half-open cells [x0, x1).
inline CoefficientField load_raster_field(const Mesh& mesh, const RasterGrid& raster) {
  if (raster.m == 0 || raster.values.size() != raster.m * raster.m) throw UsageError("load_raster_field: malformed raster");
  for (std::size_t k = 0; k < raster.values.size(); ++k) {
    if (!(raster.values[k] > 0.0)) throw UsageError("load_raster_field: raster value " + std::to_string(k) + " is not positive");
  }
  const auto m = raster.m;
  auto cell_index = [m](double t) {
    const auto k = static_cast<std::size_t>(std::floor(t * static_cast<double>(m)));
    return std::min(k, m - 1);
  };
  CoefficientField field{Vector(mesh.num_elements())};
  for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
    const auto c = mesh.centroid(e);
    const auto col = cell_index(c.x);
    const auto row_from_bottom = cell_index(c.y);
    field.values[e] = raster.at(m - 1 - row_from_bottom, col);
  }
  return field;
}

}  // namespace hem
