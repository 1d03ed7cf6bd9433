#pragma once

// Square nonoverlapping subdomains, their overlapping extensions, the
// interfaces between them and the weighted trace forms living on those
// interfaces.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "hem/error.hpp"
#include "hem/linalg.hpp"
#include "hem/mesh.hpp"

namespace hem {

struct Subdomain {
  std::size_t sx = 0;
  std::size_t sy = 0;
  // node index ranges of the closed square [x_lo, x_hi] x [y_lo, y_hi]
  std::size_t x_lo = 0, x_hi = 0, y_lo = 0, y_hi = 0;
  std::vector<std::size_t> elements;
  std::vector<std::size_t> interior_nodes;  // strictly inside, ascending
  std::vector<std::size_t> boundary_nodes;  // on the subdomain boundary, ascending (includes nodes on the outer boundary)
  std::vector<std::size_t> closure_nodes;   // ascending
  double h_layer = 0.0;                     // min diameter over elements touching the subdomain boundary

  bool contains_closed(std::size_t ix, std::size_t iy) const {
    return ix >= x_lo && ix <= x_hi && iy >= y_lo && iy <= y_hi;
  }
};

/// Interior coarse vertex (subdomain corner not on the outer boundary).
struct CoarseVertex {
  std::size_t node = 0;
  std::size_t gx = 0;  // corner grid coordinates
  std::size_t gy = 0;
};

enum class Orientation { vertical, horizontal };

/// Open edge shared by subdomains i and j. Nodes run from the lower-left
/// endpoint to the upper-right endpoint and exclude both endpoints.
struct Interface {
  std::size_t id = 0;
  std::size_t i = 0;  // lower-left subdomain
  std::size_t j = 0;
  Orientation orientation = Orientation::vertical;
  std::vector<std::size_t> nodes;
  std::array<std::size_t, 2> endpoint_nodes{};
  std::array<std::size_t, 2> endpoint_vertex{npos, npos};  // coarse vertex ids, npos on the outer boundary

  std::size_t size() const noexcept { return nodes.size(); }
};

struct Partition {
  std::size_t n = 0;        // fine cells per side
  std::size_t h_cells = 0;  // fine cells per subdomain side
  std::size_t per_side = 0;
  std::vector<Subdomain> subdomains;
  std::vector<std::size_t> element_subdomain;
  std::vector<CoarseVertex> vertices;
  std::vector<Interface> interfaces;
  std::vector<std::size_t> node_vertex;  // coarse vertex id or npos

  std::size_t subdomain_id(std::size_t sx, std::size_t sy) const { return sy * per_side + sx; }
  std::size_t num_subdomains() const noexcept { return subdomains.size(); }

  /// Interfaces touching coarse vertex `v`.
  std::vector<std::size_t> interfaces_at_vertex(std::size_t v) const {
    std::vector<std::size_t> out;
    for (const auto& f : interfaces) {
      if (f.endpoint_vertex[0] == v || f.endpoint_vertex[1] == v) out.push_back(f.id);
    }
    return out;
  }

  /// Subdomains having coarse vertex `v` as a corner.
  std::vector<std::size_t> subdomains_at_vertex(std::size_t v) const {
    const auto& cv = vertices[v];
    std::vector<std::size_t> out;
    for (std::size_t dy = 0; dy < 2; ++dy) {
      for (std::size_t dx = 0; dx < 2; ++dx) out.push_back(subdomain_id(cv.gx - 1 + dx, cv.gy - 1 + dy));
    }
    return out;
  }
};

inline Partition build_partition(const Mesh& mesh, std::size_t h_cells) {
  const auto n = mesh.cells_per_side();
  if (h_cells == 0 || n % h_cells != 0) {
    throw UsageError("build_partition: n=" + std::to_string(n) + " is not divisible by H_cells=" + std::to_string(h_cells));
  }
  if (n / h_cells < 2) throw UsageError("build_partition: need at least 2 subdomains per side");
  Partition p;
  p.n = n;
  p.h_cells = h_cells;
  p.per_side = n / h_cells;
  const auto ns = p.per_side;

  p.subdomains.resize(ns * ns);
  for (std::size_t sy = 0; sy < ns; ++sy) {
    for (std::size_t sx = 0; sx < ns; ++sx) {
      auto& s = p.subdomains[p.subdomain_id(sx, sy)];
      s.sx = sx;
      s.sy = sy;
      s.x_lo = sx * h_cells;
      s.x_hi = (sx + 1) * h_cells;
      s.y_lo = sy * h_cells;
      s.y_hi = (sy + 1) * h_cells;
      for (std::size_t iy = s.y_lo; iy <= s.y_hi; ++iy) {
        for (std::size_t ix = s.x_lo; ix <= s.x_hi; ++ix) {
          const auto v = mesh.node(ix, iy);
          s.closure_nodes.push_back(v);
          const bool inside = ix > s.x_lo && ix < s.x_hi && iy > s.y_lo && iy < s.y_hi;
          (inside ? s.interior_nodes : s.boundary_nodes).push_back(v);
        }
      }
    }
  }

  p.element_subdomain.resize(mesh.num_elements());
  for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
    const auto cell = mesh.cell_of_element(e);
    const auto sid = p.subdomain_id((cell % n) / h_cells, (cell / n) / h_cells);
    p.element_subdomain[e] = sid;
    p.subdomains[sid].elements.push_back(e);
  }

  for (auto& s : p.subdomains) {
    s.h_layer = std::numeric_limits<double>::infinity();
    for (auto e : s.elements) {
      bool touches = false;
      for (auto v : mesh.triangles()[e]) {
        const auto ix = mesh.node_ix(v), iy = mesh.node_iy(v);
        touches = touches || ix == s.x_lo || ix == s.x_hi || iy == s.y_lo || iy == s.y_hi;
      }
      if (touches) s.h_layer = std::min(s.h_layer, mesh.diameter(e));
    }
  }

  p.node_vertex.assign(mesh.num_nodes(), npos);
  for (std::size_t gy = 1; gy < ns; ++gy) {
    for (std::size_t gx = 1; gx < ns; ++gx) {
      const auto node = mesh.node(gx * h_cells, gy * h_cells);
      p.node_vertex[node] = p.vertices.size();
      p.vertices.push_back({node, gx, gy});
    }
  }

  auto add_interface = [&](std::size_t i, std::size_t j, Orientation o) {
    Interface f;
    f.id = p.interfaces.size();
    f.i = i;
    f.j = j;
    f.orientation = o;
    const auto& si = p.subdomains[i];
    for (std::size_t t = 0; t <= h_cells; ++t) {
      const auto node = o == Orientation::vertical ? mesh.node(si.x_hi, si.y_lo + t) : mesh.node(si.x_lo + t, si.y_hi);
      if (t == 0) {
        f.endpoint_nodes[0] = node;
      } else if (t == h_cells) {
        f.endpoint_nodes[1] = node;
      } else {
        f.nodes.push_back(node);
      }
    }
    f.endpoint_vertex = {p.node_vertex[f.endpoint_nodes[0]], p.node_vertex[f.endpoint_nodes[1]]};
    p.interfaces.push_back(std::move(f));
  };
  for (std::size_t sy = 0; sy < ns; ++sy) {
    for (std::size_t sx = 0; sx < ns; ++sx) {
      const auto i = p.subdomain_id(sx, sy);
      if (sx + 1 < ns) add_interface(i, p.subdomain_id(sx + 1, sy), Orientation::vertical);
      if (sy + 1 < ns) add_interface(i, p.subdomain_id(sx, sy + 1), Orientation::horizontal);
    }
  }
  return p;
}

/// Overlapping subdomains: each square grown by `delta_layers` cells on every
/// side, keeping the nodes strictly inside the grown square and inside the
/// domain. delta_layers = 0 gives the open nonoverlapping subdomains.
struct OverlapSet {
  std::size_t delta_layers = 0;
  std::vector<std::vector<std::size_t>> nodes;  // ascending node ids per subdomain
};

inline OverlapSet extend_overlap(const Mesh& mesh, const Partition& p, std::size_t delta_layers) {
  OverlapSet o;
  o.delta_layers = delta_layers;
  o.nodes.resize(p.num_subdomains());
  const auto n = mesh.cells_per_side();
  for (std::size_t s = 0; s < p.num_subdomains(); ++s) {
    const auto& sd = p.subdomains[s];
    // open interval (lo - delta, hi + delta) clipped to interior indices 1..n-1
    const auto lo_x = sd.x_lo > delta_layers ? sd.x_lo - delta_layers + 1 : 1;
    const auto lo_y = sd.y_lo > delta_layers ? sd.y_lo - delta_layers + 1 : 1;
    const auto hi_x = std::min(sd.x_hi + delta_layers - 1, n - 1);
    const auto hi_y = std::min(sd.y_hi + delta_layers - 1, n - 1);
    for (auto iy = lo_y; iy <= hi_y; ++iy) {
      for (auto ix = lo_x; ix <= hi_x; ++ix) o.nodes[s].push_back(mesh.node(ix, iy));
    }
  }
  return o;
}

/// beta_k: sum of the coefficient over all elements incident to node k, for
/// every interface node.
inline std::vector<Vector> compute_beta(const Mesh& mesh, const CoefficientField& field, const Partition& p) {
  std::vector<Vector> beta(p.interfaces.size());
  for (const auto& f : p.interfaces) {
    for (auto v : f.nodes) {
      double sum = 0.0;
      for (auto e : mesh.elements_of_node(v)) sum += field[e];
      beta[f.id].push_back(sum);
    }
  }
  return beta;
}

/// Weighted 1D forms on one interface. The stiffness acts on the M interior
/// nodes with zero endpoint values unless endpoint data is supplied.
struct TraceForms {
  std::size_t interface_id = 0;
  double h = 0.0;    // fine segment length
  double h_i = 0.0;  // boundary-layer diameter of the lower-left subdomain
  Vector coeff_i;    // per segment, side of subdomain i (M+1 entries)
  Vector coeff_j;    // per segment, side of subdomain j
  Vector coeff;      // max of both sides
  Vector beta;       // per interior node
  Vector b_diag;     // beta / h_i

  std::size_t size() const noexcept { return beta.size(); }

  DenseMatrix stiffness() const { return stiffness_for(coeff); }

  /// Tridiagonal stiffness for arbitrary per-segment coefficients.
  DenseMatrix stiffness_for(std::span<const double> c) const {
    const auto m = size();
    DenseMatrix a(m, m);
    for (std::size_t k = 0; k < m; ++k) {
      a(k, k) = (c[k] + c[k + 1]) / h;
      if (k + 1 < m) a(k, k + 1) = a(k + 1, k) = -c[k + 1] / h;
    }
    return a;
  }

  /// Energy of a trace with zero endpoints under per-segment coefficients.
  double energy_for(std::span<const double> c, std::span<const double> v) const {
    const auto m = size();
    double s = 0.0;
    for (std::size_t seg = 0; seg <= m; ++seg) {
      const double left = seg == 0 ? 0.0 : v[seg - 1];
      const double right = seg == m ? 0.0 : v[seg];
      s += c[seg] / h * (right - left) * (right - left);
    }
    return s;
  }

  double energy(std::span<const double> v) const { return energy_for(coeff, v); }

  double b_inner(std::span<const double> u, std::span<const double> v) const {
    double s = 0.0;
    for (std::size_t k = 0; k < size(); ++k) s += b_diag[k] * u[k] * v[k];
    return s;
  }

  /// Solves abar(x, w) = rhs(w) for all w with zero endpoints, plus endpoint
  /// values g0 (lower-left) and g1 (upper-right).
  Vector solve(std::span<const double> rhs, double g0 = 0.0, double g1 = 0.0) const {
    const auto m = size();
    Vector d(m), e(m > 0 ? m - 1 : 0), r(rhs.begin(), rhs.end());
    for (std::size_t k = 0; k < m; ++k) {
      d[k] = (coeff[k] + coeff[k + 1]) / h;
      if (k + 1 < m) e[k] = -coeff[k + 1] / h;
    }
    if (m > 0) {
      r[0] += coeff[0] / h * g0;
      r[m - 1] += coeff[m] / h * g1;
    }
    return solve_spd_tridiagonal(d, e, r);
  }
};

inline TraceForms build_trace_forms(const Mesh& mesh, const CoefficientField& field, const Partition& p,
                                    std::size_t interface_id) {
  const auto& f = p.interfaces.at(interface_id);
  TraceForms t;
  t.interface_id = interface_id;
  t.h = mesh.h();
  t.h_i = p.subdomains[f.i].h_layer;

  std::vector<std::size_t> chain;
  chain.push_back(f.endpoint_nodes[0]);
  chain.insert(chain.end(), f.nodes.begin(), f.nodes.end());
  chain.push_back(f.endpoint_nodes[1]);

  // the element of subdomain s having both segment ends as vertices
  auto segment_alpha = [&](std::size_t a, std::size_t b, std::size_t s) {
    for (auto e : mesh.elements_of_node(a)) {
      if (p.element_subdomain[e] != s) continue;
      const auto& tri = mesh.triangles()[e];
      if (std::find(tri.begin(), tri.end(), b) != tri.end()) return field[e];
    }
    throw UsageError("build_trace_forms: segment without adjacent element");
  };
  for (std::size_t seg = 0; seg + 1 < chain.size(); ++seg) {
    const double ai = segment_alpha(chain[seg], chain[seg + 1], f.i);
    const double aj = segment_alpha(chain[seg], chain[seg + 1], f.j);
    t.coeff_i.push_back(ai);
    t.coeff_j.push_back(aj);
    t.coeff.push_back(std::max(ai, aj));
  }
  for (auto v : f.nodes) {
    double sum = 0.0;
    for (auto e : mesh.elements_of_node(v)) sum += field[e];
    t.beta.push_back(sum);
    t.b_diag.push_back(sum / t.h_i);
  }
  return t;
}

inline std::vector<TraceForms> build_all_trace_forms(const Mesh& mesh, const CoefficientField& field, const Partition& p) {
  std::vector<TraceForms> out;
  out.reserve(p.interfaces.size());
  for (const auto& f : p.interfaces) out.push_back(build_trace_forms(mesh, field, p, f.id));
  return out;
}

/// theta_i on the nodes of each overlapping subdomain (aligned with
/// OverlapSet::nodes): 1/k on nodes shared by the closures of k subdomains,
/// zero outside the closure.
struct PartitionOfUnity {
  std::vector<Vector> theta;
};

inline PartitionOfUnity build_partition_of_unity(const Mesh& mesh, const Partition& p, const OverlapSet& overlap) {
  if (overlap.delta_layers < 1) throw UsageError("build_partition_of_unity: requires at least one overlap layer");
  PartitionOfUnity pou;
  pou.theta.resize(p.num_subdomains());
  for (std::size_t s = 0; s < p.num_subdomains(); ++s) {
    const auto& sd = p.subdomains[s];
    for (auto v : overlap.nodes[s]) {
      const auto ix = mesh.node_ix(v), iy = mesh.node_iy(v);
      if (!sd.contains_closed(ix, iy)) {
        pou.theta[s].push_back(0.0);
        continue;
      }
      const bool on_x = ix == sd.x_lo || ix == sd.x_hi;
      const bool on_y = iy == sd.y_lo || iy == sd.y_hi;
      const int owners = (on_x ? 2 : 1) * (on_y ? 2 : 1);
      pou.theta[s].push_back(1.0 / owners);
    }
  }
  return pou;
}

}  // namespace hem
