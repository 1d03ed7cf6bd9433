#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "hem/mesh.hpp"

using namespace hem;

TEST(Mesh, SmallestMeshCounts) {
  const auto m = build_structured_mesh(2);
  EXPECT_EQ(m.num_nodes(), 9u);
  EXPECT_EQ(m.num_elements(), 8u);
  std::size_t interior = 0;
  for (std::size_t v = 0; v < m.num_nodes(); ++v) interior += m.is_boundary(v) ? 0 : 1;
  EXPECT_EQ(interior, 1u);
}

TEST(Mesh, LargeMeshCounts) {
  const auto m = build_structured_mesh(128);
  EXPECT_DOUBLE_EQ(m.h(), 1.0 / 128.0);
  EXPECT_EQ(m.num_elements(), 32768u);
  EXPECT_EQ(m.num_nodes(), 16641u);
}

TEST(Mesh, AreasTileTheSquare) {
  for (std::size_t n : {2u, 5u, 16u}) {
    const auto m = build_structured_mesh(n);
    double total = 0.0;
    for (std::size_t e = 0; e < m.num_elements(); ++e) {
      EXPECT_NEAR(m.area(e), 0.5 * m.h() * m.h(), 1e-16);
      total += m.area(e);
    }
    EXPECT_NEAR(total, 1.0, 1e-14);
  }
}

TEST(Mesh, Incidence) {
  const auto m = build_structured_mesh(6);
  for (std::size_t v = 0; v < m.num_nodes(); ++v) {
    if (!m.is_boundary(v)) {
      EXPECT_EQ(m.elements_of_node(v).size(), 6u);
    }
  }
  EXPECT_EQ(m.elements_of_node(m.node(0, 0)).size(), 2u);
  EXPECT_EQ(m.elements_of_node(m.node(6, 6)).size(), 2u);
  EXPECT_EQ(m.elements_of_node(m.node(6, 0)).size(), 1u);
  EXPECT_EQ(m.elements_of_node(m.node(0, 6)).size(), 1u);
}

TEST(Mesh, NumberingAndDiagonal) {
  const auto m = build_structured_mesh(4);
  EXPECT_EQ(m.node(3, 2), 2u * 5u + 3u);
  EXPECT_EQ(m.node_ix(13), 3u);
  EXPECT_EQ(m.node_iy(13), 2u);
  // cell (1,2): lower-right triangle then upper-left, both sharing the LL-UR diagonal
  const auto& t0 = m.triangles()[2 * (2 * 4 + 1)];
  const auto& t1 = m.triangles()[2 * (2 * 4 + 1) + 1];
  EXPECT_EQ(t0, (Mesh::Triangle{m.node(1, 2), m.node(2, 2), m.node(2, 3)}));
  EXPECT_EQ(t1, (Mesh::Triangle{m.node(1, 2), m.node(2, 3), m.node(1, 3)}));
  EXPECT_NEAR(m.diameter(0), std::sqrt(2.0) * m.h(), 1e-15);
}

TEST(Mesh, Deterministic) {
  const auto a = build_structured_mesh(7), b = build_structured_mesh(7);
  EXPECT_EQ(a.triangles(), b.triangles());
}

TEST(Mesh, TooSmallRejected) {
  EXPECT_THROW(build_structured_mesh(1), UsageError);
}

TEST(CoefficientField, BackgroundOnly) {
  const auto m = build_structured_mesh(4);
  const auto f = build_coefficient_field(m, 1.0, {});
  EXPECT_EQ(f.min(), 1.0);
  EXPECT_EQ(f.max(), 1.0);
}

TEST(CoefficientField, FullCover) {
  const auto m = build_structured_mesh(4);
  const std::vector<Inclusion> incs{{0, 0, 1, 1, 1e6}};
  const auto f = build_coefficient_field(m, 1.0, incs);
  EXPECT_EQ(f.min(), 1e6);
}

TEST(CoefficientField, HorizontalStripCountsCentroids) {
  const auto m = build_structured_mesh(8);
  const std::vector<Inclusion> incs{{0, 0.25, 1, 0.5, 100}};
  const auto f = build_coefficient_field(m, 1.0, incs);
  std::size_t count = 0;
  for (std::size_t e = 0; e < m.num_elements(); ++e) {
    const auto c = m.centroid(e);
    const bool inside = c.y >= 0.25 && c.y <= 0.5;
    EXPECT_EQ(f[e], inside ? 100.0 : 1.0);
    count += inside ? 1 : 0;
  }
  EXPECT_EQ(count, 32u);
}

TEST(CoefficientField, LastInclusionWins) {
  const auto m = build_structured_mesh(4);
  const std::vector<Inclusion> incs{{0, 0, 1, 1, 5}, {0, 0, 0.5, 0.5, 7}};
  const auto f = build_coefficient_field(m, 1.0, incs);
  EXPECT_EQ(f[0], 7.0);
  EXPECT_EQ(f[m.num_elements() - 1], 5.0);
}

TEST(CoefficientField, NonPositiveRejected) {
  const auto m = build_structured_mesh(4);
  const std::vector<Inclusion> incs{{0, 0, 1, 1, 0.0}};
  EXPECT_THROW(build_coefficient_field(m, 1.0, incs), UsageError);
  EXPECT_THROW(build_coefficient_field(m, -1.0, {}), UsageError);
}

TEST(Raster, SingleCell) {
  const auto m = build_structured_mesh(4);
  const auto f = load_raster_field(m, parse_raster_csv("7\n"));
  EXPECT_EQ(f.min(), 7.0);
  EXPECT_EQ(f.max(), 7.0);
}

TEST(Raster, QuadrantsWithTopRowFirst) {
  const auto m = build_structured_mesh(4);
  const auto f = load_raster_field(m, parse_raster_csv("1,2\n3,4\n"));
  for (std::size_t e = 0; e < m.num_elements(); ++e) {
    const auto c = m.centroid(e);
    const double expect = c.y > 0.5 ? (c.x < 0.5 ? 1.0 : 2.0) : (c.x < 0.5 ? 3.0 : 4.0);
    EXPECT_EQ(f[e], expect);
  }
}

TEST(Raster, ZeroRejected) {
  const auto m = build_structured_mesh(4);
  EXPECT_THROW(load_raster_field(m, parse_raster_csv("1,0\n1,1\n")), UsageError);
}

TEST(Raster, MalformedTextRejected) {
  EXPECT_THROW(parse_raster_csv("1,2\n3\n"), UsageError);
  EXPECT_THROW(parse_raster_csv("1,x\n3,4\n"), UsageError);
  EXPECT_THROW(parse_raster_csv("1,2\n"), UsageError);
  EXPECT_THROW(parse_raster_csv(""), UsageError);
}

TEST(Raster, ReadsFile) {
  const auto path = std::filesystem::temp_directory_path() / "hem_raster_test.csv";
  {
    std::ofstream out(path);
    out << "2,2\n2,9\n";
  }
  const auto g = read_raster_csv(path.string());
  EXPECT_EQ(g.m, 2u);
  EXPECT_EQ(g.at(1, 1), 9.0);
  std::filesystem::remove(path);
  EXPECT_THROW(read_raster_csv(path.string()), UsageError);
}
