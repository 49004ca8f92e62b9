#include "unimatch/graphgen.hpp"

#include "unimatch/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

namespace unimatch::graph {

namespace {

using Real = long double;

struct P2 {
  Real x, y;
};
struct P3 {
  Real x, y, z;
};

// Shewchuk conventions: orient2d > 0 for counter-clockwise (a, b, c);
// incircle > 0 when d lies inside the circle through counter-clockwise (a, b, c).
Real orient2d(const P2& a, const P2& b, const P2& c) {
  return (a.x - c.x) * (b.y - c.y) - (a.y - c.y) * (b.x - c.x);
}

Real incircle(const P2& a, const P2& b, const P2& c, const P2& d) {
  const Real adx = a.x - d.x, ady = a.y - d.y;
  const Real bdx = b.x - d.x, bdy = b.y - d.y;
  const Real cdx = c.x - d.x, cdy = c.y - d.y;
  const Real alift = adx * adx + ady * ady;
  const Real blift = bdx * bdx + bdy * bdy;
  const Real clift = cdx * cdx + cdy * cdy;
  return alift * (bdx * cdy - cdx * bdy) + blift * (cdx * ady - adx * cdy) + clift * (adx * bdy - bdx * ady);
}

// orient3d > 0 when d lies below the plane of (a, b, c) seen counter-clockwise
// from above; insphere·orient3d > 0 when e lies inside the circumsphere.
Real orient3d(const P3& a, const P3& b, const P3& c, const P3& d) {
  const Real adx = a.x - d.x, ady = a.y - d.y, adz = a.z - d.z;
  const Real bdx = b.x - d.x, bdy = b.y - d.y, bdz = b.z - d.z;
  const Real cdx = c.x - d.x, cdy = c.y - d.y, cdz = c.z - d.z;
  return adx * (bdy * cdz - bdz * cdy) + bdx * (cdy * adz - cdz * ady) + cdx * (ady * bdz - adz * bdy);
}

Real insphere(const P3& a, const P3& b, const P3& c, const P3& d, const P3& e) {
  const Real aex = a.x - e.x, aey = a.y - e.y, aez = a.z - e.z;
  const Real bex = b.x - e.x, bey = b.y - e.y, bez = b.z - e.z;
  const Real cex = c.x - e.x, cey = c.y - e.y, cez = c.z - e.z;
  const Real dex = d.x - e.x, dey = d.y - e.y, dez = d.z - e.z;
  const Real ab = aex * bey - bex * aey;
  const Real bc = bex * cey - cex * bey;
  const Real cd = cex * dey - dex * cey;
  const Real da = dex * aey - aex * dey;
  const Real ac = aex * cey - cex * aey;
  const Real bd = bex * dey - dex * bey;
  const Real abc = aez * bc - bez * ac + cez * ab;
  const Real bcd = bez * cd - cez * bd + dez * bc;
  const Real cda = cez * da + dez * ac + aez * cd;
  const Real dab = dez * ab + aez * bd + bez * da;
  const Real alift = aex * aex + aey * aey + aez * aez;
  const Real blift = bex * bex + bey * bey + bez * bez;
  const Real clift = cex * cex + cey * cey + cez * cez;
  const Real dlift = dex * dex + dey * dey + dez * dez;
  return (dlift * abc - clift * dab) + (blift * cda - alift * bcd);
}

Edge make_edge(int a, int b) { return a < b ? Edge{a, b} : Edge{b, a}; }

EdgeSet sorted_unique(std::vector<Edge> edges) {
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

// Moves exact duplicates apart by a seeded jitter of the given magnitude.
template <int Dim>
Eigen::Matrix<double, Dim, Eigen::Dynamic> separate_duplicates(Eigen::Matrix<double, Dim, Eigen::Dynamic> pts,
                                                               const DelaunayOptions& opts) {
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (Eigen::Index i = 1; i < pts.cols(); ++i) {
    for (;;) {
      bool dup = false;
      for (Eigen::Index j = 0; j < i && !dup; ++j) dup = (pts.col(i).array() == pts.col(j).array()).all();
      if (!dup) break;
      for (int r = 0; r < Dim; ++r) pts(r, i) += opts.jitter * unit(rng);
    }
  }
  return pts;
}

EdgeSet path_in_coordinate_order(const Eigen::Matrix2Xd& pts) {
  std::vector<int> order(static_cast<std::size_t>(pts.cols()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (pts(0, a) != pts(0, b)) return pts(0, a) < pts(0, b);
    return pts(1, a) < pts(1, b);
  });
  EdgeSet out;
  for (std::size_t i = 1; i < order.size(); ++i) out.push_back(make_edge(order[i - 1], order[i]));
  return sorted_unique(std::move(out));
}

bool is_collinear(const std::vector<P2>& p) {
  Real minx = p[0].x, maxx = p[0].x, miny = p[0].y, maxy = p[0].y;
  for (const P2& q : p) {
    minx = std::min(minx, q.x);
    maxx = std::max(maxx, q.x);
    miny = std::min(miny, q.y);
    maxy = std::max(maxy, q.y);
  }
  const Real extent = std::max(maxx - minx, maxy - miny);
  if (extent == 0) return true;
  // Farthest pair along the dominant axis spans the line.
  std::size_t a = 0, b = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool use_x = (maxx - minx) >= (maxy - miny);
    const Real key = use_x ? p[i].x : p[i].y;
    const Real ka = use_x ? p[a].x : p[a].y;
    const Real kb = use_x ? p[b].x : p[b].y;
    if (key < ka) a = i;
    if (key > kb) b = i;
  }
  for (const P2& q : p)
    if (std::abs(orient2d(p[a], p[b], q)) > 1e-12L * extent * extent) return false;
  return true;
}

using Tri = std::array<int, 3>;

// Counter-clockwise triangulation of a non-collinear set by a sweep in (x, y) order.
std::vector<Tri> sweep_triangulation(const std::vector<P2>& p) {
  const int n = static_cast<int>(p.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (p[a].x != p[b].x) return p[a].x < p[b].x;
    return p[a].y < p[b].y;
  });

  std::vector<Tri> tris;
  // Leading collinear run p[order[0..k-1]] closed by the first off-line point.
  std::size_t k = 2;
  while (k < order.size() && orient2d(p[order[0]], p[order[1]], p[order[k]]) == 0) ++k;
  if (k == order.size()) return tris;
  for (std::size_t i = 0; i + 1 < k; ++i) {
    Tri t{order[i], order[i + 1], order[k]};
    if (orient2d(p[t[0]], p[t[1]], p[t[2]]) < 0) std::swap(t[0], t[1]);
    tris.push_back(t);
  }

  for (std::size_t s = k + 1; s < order.size(); ++s) {
    const int v = order[s];
    // Boundary edges are directed edges whose reverse is absent.
    std::set<std::pair<int, int>> directed;
    for (const Tri& t : tris)
      for (int e = 0; e < 3; ++e) directed.emplace(t[e], t[(e + 1) % 3]);
    std::vector<Tri> added;
    for (const auto& [a, b] : directed) {
      if (directed.count({b, a}) != 0) continue;
      if (orient2d(p[a], p[b], p[v]) < 0) added.push_back({b, a, v});
    }
    tris.insert(tris.end(), added.begin(), added.end());
  }
  return tris;
}

// Lawson flips until every interior edge is locally Delaunay.
void lawson_flip(const std::vector<P2>& p, std::vector<Tri>& tris) {
  const std::size_t max_passes = 4 * p.size() * p.size() + 16;
  for (std::size_t pass = 0; pass < max_passes; ++pass) {
    std::map<std::pair<int, int>, std::pair<std::size_t, int>> owner;  // directed edge -> (triangle, opposite)
    for (std::size_t t = 0; t < tris.size(); ++t)
      for (int e = 0; e < 3; ++e) owner[{tris[t][e], tris[t][(e + 1) % 3]}] = {t, tris[t][(e + 2) % 3]};
    bool flipped = false;
    for (const auto& [edge, info] : owner) {
      const auto [a, b] = edge;
      if (a > b) continue;
      auto it = owner.find({b, a});
      if (it == owner.end()) continue;
      const auto [t1, c] = info;
      const auto [t2, d] = it->second;
      if (incircle(p[a], p[b], p[c], p[d]) > 0) {
        tris[t1] = {a, d, c};
        tris[t2] = {d, b, c};
        flipped = true;
        break;
      }
    }
    if (!flipped) return;
  }
}

EdgeSet triangle_edges(const std::vector<Tri>& tris) {
  EdgeSet edges;
  for (const Tri& t : tris)
    for (int e = 0; e < 3; ++e) edges.push_back(make_edge(t[e], t[(e + 1) % 3]));
  return sorted_unique(std::move(edges));
}

using Tet = std::array<int, 4>;

EdgeSet bowyer_watson_3d(const Eigen::Matrix3Xd& pts) {
  const int n = static_cast<int>(pts.cols());
  std::vector<P3> p;
  p.reserve(static_cast<std::size_t>(n) + 4);
  for (int i = 0; i < n; ++i) p.push_back({pts(0, i), pts(1, i), pts(2, i)});

  const Eigen::Vector3d center = pts.rowwise().mean();
  const double radius = std::max((pts.colwise() - center).colwise().norm().maxCoeff(), 1e-12);
  // Regular tetrahedron whose inscribed sphere has radius 1e4·radius.
  const double reach = 3.0 * 1e4 * radius;
  const double dirs[4][3] = {{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}};
  for (const auto& dir : dirs) {
    const double s = reach / std::sqrt(3.0);
    p.push_back({center.x() + s * dir[0], center.y() + s * dir[1], center.z() + s * dir[2]});
  }

  auto inside = [&p](const Tet& t, int q) {
    const Real o = orient3d(p[t[0]], p[t[1]], p[t[2]], p[t[3]]);
    return insphere(p[t[0]], p[t[1]], p[t[2]], p[t[3]], p[q]) * (o > 0 ? 1 : -1) > 0;
  };

  std::vector<Tet> tets{{n, n + 1, n + 2, n + 3}};
  for (int q = 0; q < n; ++q) {
    std::vector<Tet> keep;
    std::map<std::array<int, 3>, int> face_count;
    for (const Tet& t : tets) {
      if (!inside(t, q)) {
        keep.push_back(t);
        continue;
      }
      static constexpr int faces[4][3] = {{0, 1, 2}, {0, 1, 3}, {0, 2, 3}, {1, 2, 3}};
      for (const auto& f : faces) {
        std::array<int, 3> key{t[f[0]], t[f[1]], t[f[2]]};
        std::sort(key.begin(), key.end());
        ++face_count[key];
      }
    }
    for (const auto& [key, count] : face_count) {
      if (count == 1) keep.push_back({key[0], key[1], key[2], q});
    }
    tets = std::move(keep);
  }

  EdgeSet edges;
  for (const Tet& t : tets) {
    if (std::any_of(t.begin(), t.end(), [n](int v) { return v >= n; })) continue;
    for (int a = 0; a < 4; ++a)
      for (int b = a + 1; b < 4; ++b) edges.push_back(make_edge(t[a], t[b]));
  }
  return sorted_unique(std::move(edges));
}

}  // namespace

void validate_edges(const EdgeSet& edges, int node_count) {
  std::set<Edge> seen;
  for (const auto& [a, b] : edges) {
    if (a < 0 || b < 0 || a >= node_count || b >= node_count)
      throw Error(ErrorKind::Graph, "edge index out of range");
    if (a == b) throw Error(ErrorKind::Graph, "self-loop at node " + std::to_string(a));
    if (!seen.insert(make_edge(a, b)).second)
      throw Error(ErrorKind::Graph, "duplicate edge (" + std::to_string(a) + ", " + std::to_string(b) + ")");
  }
}

Eigen::MatrixXd Graph2D::edge_attributes() const {
  Eigen::MatrixXd out(4, static_cast<Eigen::Index>(edges.size()));
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto [a, b] = make_edge(edges[e].first, edges[e].second);
    out.col(static_cast<Eigen::Index>(e)) << nodes.col(a), nodes.col(b);
  }
  return out;
}

Eigen::MatrixXd UniverseGraph3D::edge_attributes() const {
  Eigen::MatrixXd out(6, static_cast<Eigen::Index>(edges.size()));
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto [a, b] = make_edge(edges[e].first, edges[e].second);
    out.col(static_cast<Eigen::Index>(e)) << nodes.col(a), nodes.col(b);
  }
  return out;
}

EdgeSet delaunay_2d(const Eigen::Matrix2Xd& points, const DelaunayOptions& opts) {
  const Eigen::Index m = points.cols();
  if (m < 2) throw Error(ErrorKind::Graph, "delaunay_2d needs at least 2 points, got " + std::to_string(m));
  if (!points.allFinite()) throw Error(ErrorKind::Graph, "delaunay_2d: non-finite coordinates");
  if (m == 2) return {{0, 1}};

  const Eigen::Matrix2Xd pts = separate_duplicates<2>(points, opts);
  std::vector<P2> p;
  p.reserve(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) p.push_back({pts(0, i), pts(1, i)});
  if (is_collinear(p)) return path_in_coordinate_order(pts);

  std::vector<Tri> tris = sweep_triangulation(p);
  lawson_flip(p, tris);
  return triangle_edges(tris);
}

EdgeSet edges_3d(const Eigen::Matrix3Xd& points, const DelaunayOptions& opts) {
  const Eigen::Index d = points.cols();
  if (d < 2) throw Error(ErrorKind::Graph, "edges_3d needs at least 2 points, got " + std::to_string(d));
  if (!points.allFinite()) throw Error(ErrorKind::Graph, "edges_3d: non-finite coordinates");
  if (d == 2) return {{0, 1}};

  const Eigen::Matrix3Xd pts = separate_duplicates<3>(points, opts);
  const Eigen::Vector3d mean = pts.rowwise().mean();
  const Eigen::Matrix3Xd centered = pts.colwise() - mean;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(centered * centered.transpose());
  const Eigen::Vector3d ev = eig.eigenvalues().cwiseMax(0.0);  // ascending
  const bool coplanar = d == 3 || std::sqrt(ev(0)) <= 1e-9 * std::sqrt(ev(2));
  if (coplanar) {
    Eigen::Matrix<double, 2, 3> basis;
    basis.row(0) = eig.eigenvectors().col(2).transpose();
    basis.row(1) = eig.eigenvectors().col(1).transpose();
    const Eigen::Matrix2Xd planar = basis * centered;
    return delaunay_2d(planar, opts);
  }
  return bowyer_watson_3d(pts);
}

AssignmentGraph build_assignment_graph(const Graph2D& g2, const UniverseGraph3D& g3) {
  if (g2.size() == 0 || g3.size() == 0) throw Error(ErrorKind::Graph, "assignment graph needs non-empty node sets");
  validate_edges(g2.edges, g2.size());
  validate_edges(g3.edges, g3.size());

  AssignmentGraph ag;
  ag.rows = g2.size();
  ag.cols = g3.size();
  const int nodes = ag.node_count();
  ag.node_attributes.resize(5, nodes);
  for (int i = 0; i < ag.rows; ++i)
    for (int k = 0; k < ag.cols; ++k) ag.node_attributes.col(ag.node_index(i, k)) << g2.nodes.col(i), g3.nodes.col(k);

  const Eigen::MatrixXd a2 = g2.edge_attributes();
  const Eigen::MatrixXd a3 = g3.edge_attributes();
  const std::size_t count = 2 * g2.edges.size() * g3.edges.size();
  ag.edges.reserve(count);
  ag.edge_2d.reserve(count);
  ag.edge_3d.reserve(count);
  ag.edge_attributes.resize(10, static_cast<Eigen::Index>(count));
  Eigen::Index col = 0;
  for (std::size_t e2 = 0; e2 < g2.edges.size(); ++e2) {
    const auto [a, c] = make_edge(g2.edges[e2].first, g2.edges[e2].second);
    for (std::size_t e3 = 0; e3 < g3.edges.size(); ++e3) {
      const auto [b, e] = make_edge(g3.edges[e3].first, g3.edges[e3].second);
      const std::array<int, 2> aligned{ag.node_index(a, b), ag.node_index(c, e)};
      const std::array<int, 2> crossed{ag.node_index(a, e), ag.node_index(c, b)};
      for (const auto& pe : {aligned, crossed}) {
        ag.edges.push_back(pe);
        ag.edge_2d.push_back(static_cast<int>(e2));
        ag.edge_3d.push_back(static_cast<int>(e3));
        ag.edge_attributes.col(col++) << a2.col(static_cast<Eigen::Index>(e2)), a3.col(static_cast<Eigen::Index>(e3));
      }
    }
  }
  return ag;
}

}  // namespace unimatch::graph
