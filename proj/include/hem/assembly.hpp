#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "hem/linalg.hpp"
#include "hem/mesh.hpp"

namespace hem {

/// Stiffness system on interior dofs after Dirichlet elimination.
struct LinearSystem {
  SparseMatrix A;
  Vector b;
  std::vector<std::size_t> dof_to_node;
  std::vector<std::size_t> node_to_dof;  // npos on the Dirichlet boundary

  std::size_t size() const noexcept { return dof_to_node.size(); }
  std::size_t dof(std::size_t node) const { return node_to_dof[node]; }
};

/// P1 element stiffness of triangle `e` scaled by its coefficient.
inline std::array<std::array<double, 3>, 3> element_stiffness(const Mesh& mesh, std::size_t e, double alpha) {
  const auto& t = mesh.triangles()[e];
  const auto& v = mesh.vertices();
  std::array<double, 3> bx{}, by{};
  for (int a = 0; a < 3; ++a) {
    const auto& p1 = v[t[(a + 1) % 3]];
    const auto& p2 = v[t[(a + 2) % 3]];
    bx[a] = p1.y - p2.y;
    by[a] = p2.x - p1.x;
  }
  const double scale = alpha / (4.0 * mesh.area(e));
  std::array<std::array<double, 3>, 3> k{};
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) k[a][b] = scale * (bx[a] * bx[b] + by[a] * by[b]);
  }
  return k;
}

/// Stiffness on all nodes, boundary included.
inline SparseMatrix assemble_stiffness(const Mesh& mesh, const CoefficientField& field) {
  if (field.size() != mesh.num_elements()) throw UsageError("assemble_stiffness: field does not match mesh");
  std::vector<Triplet> entries;
  entries.reserve(9 * mesh.num_elements());
  for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
    const auto k = element_stiffness(mesh, e, field[e]);
    const auto& t = mesh.triangles()[e];
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) entries.push_back({t[a], t[b], k[a][b]});
    }
  }
  return SparseMatrix::from_triplets(mesh.num_nodes(), mesh.num_nodes(), std::move(entries));
}

/// Load vector for a constant source; vertex quadrature is exact here.
inline Vector assemble_load(const Mesh& mesh, double f) {
  Vector b(mesh.num_nodes(), 0.0);
  for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
    const double share = f * mesh.area(e) / 3.0;
    for (auto v : mesh.triangles()[e]) b[v] += share;
  }
  return b;
}

inline LinearSystem apply_dirichlet(const SparseMatrix& a_full, std::span<const double> b_full, const Mesh& mesh) {
  if (a_full.rows() != mesh.num_nodes() || b_full.size() != mesh.num_nodes()) {
    throw UsageError("apply_dirichlet: inputs do not match mesh");
  }
  LinearSystem sys;
  sys.node_to_dof.assign(mesh.num_nodes(), npos);
  for (std::size_t v = 0; v < mesh.num_nodes(); ++v) {
    if (!mesh.is_boundary(v)) {
      sys.node_to_dof[v] = sys.dof_to_node.size();
      sys.dof_to_node.push_back(v);
    }
  }
  sys.A = a_full.extract(sys.dof_to_node, sys.dof_to_node);
  sys.b.resize(sys.dof_to_node.size());
  for (std::size_t d = 0; d < sys.dof_to_node.size(); ++d) sys.b[d] = b_full[sys.dof_to_node[d]];
  return sys;
}

inline LinearSystem assemble_system(const Mesh& mesh, const CoefficientField& field, double f = 1.0) {
  return apply_dirichlet(assemble_stiffness(mesh, field), assemble_load(mesh, f), mesh);
}

}  // namespace hem
