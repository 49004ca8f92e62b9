#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

namespace unimatch::graph {

/// Undirected edge stored as (lower index, higher index).
using Edge = std::pair<int, int>;
using EdgeSet = std::vector<Edge>;

/// Throws a graph error on self-loops, duplicates or out-of-range indices.
void validate_edges(const EdgeSet& edges, int node_count);

struct Graph2D {
  Eigen::Matrix2Xd nodes;
  EdgeSet edges;

  int size() const { return static_cast<int>(nodes.cols()); }
  Eigen::MatrixXd node_attributes() const { return nodes; }
  /// 4×n, each column (lower endpoint xy, higher endpoint xy).
  Eigen::MatrixXd edge_attributes() const;
};

struct UniverseGraph3D {
  Eigen::Matrix3Xd nodes;
  EdgeSet edges;

  int size() const { return static_cast<int>(nodes.cols()); }
  Eigen::MatrixXd node_attributes() const { return nodes; }
  /// 6×n, each column (lower endpoint xyz, higher endpoint xyz).
  Eigen::MatrixXd edge_attributes() const;
};

/// Product graph of a 2D keypoint graph and the universe graph.
///
/// Node n corresponds to (row = n / d, col = n % d) of the m×d matching
/// matrix. Each pair of edges (a,c) ∈ E₂, (b,e) ∈ E₃ with a<c, b<e yields the
/// two product edges {(a,b),(c,e)} and {(a,e),(c,b)}.
struct AssignmentGraph {
  int rows = 0;  // m
  int cols = 0;  // d
  std::vector<std::array<int, 2>> edges;
  /// Source 2D edge and universe edge of each product edge.
  std::vector<int> edge_2d;
  std::vector<int> edge_3d;
  /// 5×(m·d): (2D xy, universe xyz).
  Eigen::MatrixXd node_attributes;
  /// 10×|edges|: (2D edge attribute, universe edge attribute).
  Eigen::MatrixXd edge_attributes;

  int node_count() const { return rows * cols; }
  int node_index(int row, int col) const { return row * cols + col; }
  int row_of(int node) const { return node / cols; }
  int col_of(int node) const { return node % cols; }
};

struct DelaunayOptions {
  /// Seed for the jitter that separates coincident points.
  std::uint64_t seed = 0;
  double jitter = 1e-9;
};

/// Delaunay edges of a planar point set. Two points give one edge; a
/// collinear set gives the path through the points in (x, y) order.
EdgeSet delaunay_2d(const Eigen::Matrix2Xd& points, const DelaunayOptions& opts = {});

/// Edges of the 3D Delaunay tetrahedralization. Coplanar sets fall back to
/// delaunay_2d on the best-fit plane.
EdgeSet edges_3d(const Eigen::Matrix3Xd& points, const DelaunayOptions& opts = {});

AssignmentGraph build_assignment_graph(const Graph2D& g2, const UniverseGraph3D& g3);

}  // namespace unimatch::graph
