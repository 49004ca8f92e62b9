#include "oracles.hpp"

#include "unimatch/errors.hpp"
#include "unimatch/graphgen.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace unimatch;
using namespace unimatch::graph;

TEST_CASE("planar Delaunay small cases") {
  Eigen::Matrix2Xd square(2, 4);
  square << 0, 1, 1, 0, 0, 0, 1, 1;
  const EdgeSet sq = delaunay_2d(square);
  CHECK(sq.size() == 5);
  for (const Edge& e : EdgeSet{{0, 1}, {1, 2}, {2, 3}, {0, 3}})
    CHECK(std::find(sq.begin(), sq.end(), e) != sq.end());
  const bool diag02 = std::find(sq.begin(), sq.end(), Edge{0, 2}) != sq.end();
  const bool diag13 = std::find(sq.begin(), sq.end(), Edge{1, 3}) != sq.end();
  CHECK(diag02 != diag13);

  Eigen::Matrix2Xd tri(2, 3);
  tri << 0, 1, 0.2, 0, 0, 1;
  CHECK(delaunay_2d(tri) == EdgeSet{{0, 1}, {0, 2}, {1, 2}});

  Eigen::Matrix2Xd two(2, 2);
  two << 0, 1, 0, 1;
  CHECK(delaunay_2d(two) == EdgeSet{{0, 1}});

  Eigen::Matrix2Xd line(2, 4);
  line << 2, 0, 3, 1, 2, 0, 3, 1;
  CHECK(delaunay_2d(line) == EdgeSet{{0, 2}, {0, 3}, {1, 3}});

  CHECK_THROWS_AS(delaunay_2d(Eigen::Matrix2Xd::Zero(2, 1)), Error);
}

TEST_CASE("planar Delaunay equals the empty-circumcircle oracle") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    const int m = 3 + trial % 18;
    Eigen::Matrix2Xd pts(2, m);
    for (Eigen::Index i = 0; i < pts.size(); ++i) pts(i) = u(rng);
    CHECK(delaunay_2d(pts) == oracle::delaunay_2d_edges(pts));
  }
}

TEST_CASE("3D Delaunay") {
  Eigen::Matrix3Xd tet(3, 4);
  tet << 1, 1, -1, -1, 1, -1, 1, -1, 1, -1, -1, 1;
  CHECK(edges_3d(tet) == EdgeSet{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}});

  Eigen::Matrix3Xd five(3, 5);
  five.leftCols(4) = tet;
  five.col(4) = tet.rowwise().mean();
  const EdgeSet e5 = edges_3d(five);
  for (int v = 0; v < 4; ++v) CHECK(std::find(e5.begin(), e5.end(), Edge{v, 4}) != e5.end());
  CHECK(e5 == oracle::delaunay_3d_edges(five));

  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int trial = 0; trial < 15; ++trial) {
    const int d = 5 + trial % 8;
    Eigen::Matrix3Xd pts(3, d);
    for (Eigen::Index i = 0; i < pts.size(); ++i) pts(i) = u(rng);
    CHECK(edges_3d(pts) == oracle::delaunay_3d_edges(pts));
  }
}

TEST_CASE("coplanar 3D points fall back to the planar triangulation") {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::Matrix2Xd flat(2, 8);
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat(i) = u(rng);
  Eigen::Matrix3Xd pts(3, 8);
  pts.topRows(2) = flat;
  pts.row(2).setZero();
  CHECK(edges_3d(pts) == delaunay_2d(flat));
}

TEST_CASE("assignment graph") {
  Graph2D g2;
  g2.nodes = Eigen::Matrix2Xd(2, 2);
  g2.nodes << 0.1, 0.2, 0.3, 0.4;
  g2.edges = {{0, 1}};
  UniverseGraph3D g3;
  g3.nodes = Eigen::Matrix3Xd(3, 2);
  g3.nodes << 1, 2, 3, 4, 5, 6;
  g3.edges = {{0, 1}};

  const AssignmentGraph ag = build_assignment_graph(g2, g3);
  CHECK(ag.node_count() == 4);
  REQUIRE(ag.edges.size() == 2);
  // {(0,0),(1,1)} and {(0,1),(1,0)}
  CHECK(ag.edges[0] == std::array<int, 2>{0, 3});
  CHECK(ag.edges[1] == std::array<int, 2>{1, 2});
  CHECK(ag.edge_attributes.col(0) == ag.edge_attributes.col(1));
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 2; ++k) {
      const int n = ag.node_index(i, k);
      CHECK(ag.row_of(n) == i);
      CHECK(ag.col_of(n) == k);
      Eigen::VectorXd expected(5);
      expected << g2.nodes(0, i), g2.nodes(1, i), g3.nodes(0, k), g3.nodes(1, k), g3.nodes(2, k);
      CHECK(ag.node_attributes.col(n) == expected);
    }

  g2.edges.clear();
  const AssignmentGraph bare = build_assignment_graph(g2, g3);
  CHECK(bare.node_count() == 4);
  CHECK(bare.edges.empty());

  g2.edges = {{0, 0}};
  CHECK_THROWS_AS(build_assignment_graph(g2, g3), Error);
  g2.edges = {{0, 1}, {1, 0}};
  CHECK_THROWS_AS(build_assignment_graph(g2, g3), Error);
  g2.edges = {{0, 2}};
  CHECK_THROWS_AS(build_assignment_graph(g2, g3), Error);
}

TEST_CASE("product edge count") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Graph2D g2;
  g2.nodes = Eigen::Matrix2Xd(2, 6);
  for (Eigen::Index i = 0; i < g2.nodes.size(); ++i) g2.nodes(i) = u(rng);
  g2.edges = delaunay_2d(g2.nodes);
  UniverseGraph3D g3;
  g3.nodes = Eigen::Matrix3Xd(3, 7);
  for (Eigen::Index i = 0; i < g3.nodes.size(); ++i) g3.nodes(i) = u(rng);
  g3.edges = edges_3d(g3.nodes);
  const AssignmentGraph ag = build_assignment_graph(g2, g3);
  CHECK(ag.edges.size() == 2 * g2.edges.size() * g3.edges.size());
  for (std::size_t e = 0; e < ag.edges.size(); ++e) {
    const auto [a, b] = ag.edges[e];
    const Edge e2 = g2.edges[static_cast<std::size_t>(ag.edge_2d[e])];
    const Edge e3 = g3.edges[static_cast<std::size_t>(ag.edge_3d[e])];
    CHECK(Edge{std::min(ag.row_of(a), ag.row_of(b)), std::max(ag.row_of(a), ag.row_of(b))} == e2);
    CHECK(Edge{std::min(ag.col_of(a), ag.col_of(b)), std::max(ag.col_of(a), ag.col_of(b))} == e3);
  }
}
