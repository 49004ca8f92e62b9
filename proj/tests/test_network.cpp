#include "unimatch/errors.hpp"
#include "unimatch/graphgen.hpp"
#include "unimatch/network.hpp"

#include <doctest.h>

#include <numeric>
#include <random>

using namespace unimatch;
using namespace unimatch::network;
using ad::Matrix;
using ad::Tape;

namespace {

NetworkConfig small_config() {
  NetworkConfig c;
  c.encoder_widths = {8, 16};
  c.point_widths = {8, 12};
  c.offset_widths = {10};
  c.latent = 6;
  c.rounds = 2;
  return c;
}

Matrix random_matrix(std::mt19937_64& rng, int r, int c) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = u(rng);
  return m;
}

// Gives every parameter a random value so no structure hides behind zero init.
void randomize(Model& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (ad::Parameter& p : model.params())
    p.value = random_matrix(rng, static_cast<int>(p.value.rows()), static_cast<int>(p.value.cols()));
}

}  // namespace

TEST_CASE("model construction") {
  Model model({{"a", 5}, {"b", 7}}, small_config(), 3);
  CHECK(model.universe(0).value.cols() == 5);
  CHECK(model.universe(1).value.cols() == 7);
  CHECK(model.universe(0).value.cwiseAbs().maxCoeff() <= 0.5);
  CHECK(model.category_index("b") == 1);
  CHECK_THROWS_AS(model.category_index("c"), Error);
  CHECK_THROWS_AS(model.universe(2), Error);
  CHECK_THROWS_AS(Model({{"tiny", 3}}, small_config(), 0), Error);
  NetworkConfig bad = small_config();
  bad.latent = 0;
  CHECK_THROWS_AS(Model({{"a", 5}}, bad, 0), Error);

  Model again({{"a", 5}, {"b", 7}}, small_config(), 3);
  auto it = again.params().begin();
  for (const ad::Parameter& p : model.params()) {
    CHECK(p.name == it->name);
    CHECK(p.value == it->value);
    ++it;
  }
}

TEST_CASE("point encoder") {
  Model model({{"a", 6}}, small_config(), 5);
  randomize(model, 6);
  std::mt19937_64 rng(7);
  const Matrix pts = random_matrix(rng, 2, 7);
  Tape t;
  const Matrix base = model.encode_points(t, t.constant(pts), 0).value();
  CHECK(base.rows() == 16);
  CHECK(base.cols() == 1);

  std::vector<int> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix shuffled(2, 7);
  for (int i = 0; i < 7; ++i) shuffled.col(i) = pts.col(perm[static_cast<std::size_t>(i)]);
  CHECK(model.encode_points(t, t.constant(shuffled), 0).value() == base);

  Matrix dup(2, 8);
  dup << pts, pts.col(3);
  CHECK(model.encode_points(t, t.constant(dup), 0).value() == base);

  for (ad::Parameter& p : model.params())
    if (p.name.rfind("encoder/", 0) == 0) p.value.setZero();
  CHECK(model.encode_points(t, t.constant(pts), 0).value().cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(model.encode_points(t, t.constant(Matrix::Ones(3, 4)), 0), Error);
}

TEST_CASE("deformation module") {
  Model model({{"a", 6}}, small_config(), 9);
  std::mt19937_64 rng(10);
  const Matrix pts = random_matrix(rng, 2, 5);
  Tape t;
  const ad::Tensor u = t.param(model.universe(0));
  const ad::Tensor s = model.deform_universe(t, u, model.encode_points(t, t.constant(pts), 0));
  CHECK(s.rows() == 3);
  CHECK(s.cols() == 6);
  CHECK(s.value().cwiseAbs().maxCoeff() == 0.0);

  randomize(model, 11);
  Tape a, b;
  const Matrix sa =
      model.deform_universe(a, a.param(model.universe(0)), model.encode_points(a, a.constant(pts), 0)).value();
  const Matrix sb =
      model.deform_universe(b, b.param(model.universe(0)), model.encode_points(b, b.constant(pts), 0)).value();
  CHECK(sa == sb);
  CHECK(sa.cwiseAbs().maxCoeff() > 0.0);
  CHECK_THROWS_AS(model.deform_universe(a, a.constant(Matrix::Ones(3, 6)), a.constant(Matrix::Ones(4, 1))), Error);
}

TEST_CASE("graph matching network") {
  Model model({{"a", 5}}, small_config(), 13);
  randomize(model, 14);
  std::mt19937_64 rng(15);

  graph::Graph2D g2;
  g2.nodes = random_matrix(rng, 2, 4);
  g2.edges = graph::delaunay_2d(g2.nodes);
  graph::UniverseGraph3D g3;
  g3.nodes = random_matrix(rng, 3, 5);
  g3.edges = graph::edges_3d(g3.nodes);
  const graph::AssignmentGraph ag = graph::build_assignment_graph(g2, g3);

  Tape t;
  const MatchOutput out = model.graph_match_forward(t, ag);
  CHECK(out.scores.rows() == 1);
  CHECK(out.scores.cols() == 20);
  CHECK(out.x_soft.rows() == 4);
  CHECK(out.x_soft.cols() == 5);
  CHECK(out.scores.value().minCoeff() > 0.0);
  CHECK(out.scores.value().maxCoeff() < 1.0);
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 5; ++k) CHECK(out.x_soft.value()(i, k) == out.scores.value()(0, ag.node_index(i, k)));

  SUBCASE("reordering the assignment nodes reorders the scores") {
    std::vector<int> perm(20);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    graph::AssignmentGraph moved = ag;
    for (int n = 0; n < 20; ++n) moved.node_attributes.col(perm[static_cast<std::size_t>(n)]) = ag.node_attributes.col(n);
    for (auto& [a, b] : moved.edges) {
      a = perm[static_cast<std::size_t>(a)];
      b = perm[static_cast<std::size_t>(b)];
    }
    Tape u;
    const Matrix s = model.graph_match_forward(u, moved).scores.value();
    for (int n = 0; n < 20; ++n)
      CHECK(std::abs(s(0, perm[static_cast<std::size_t>(n)]) - out.scores.value()(0, n)) <= 1e-12);
  }

  SUBCASE("edge order does not matter") {
    graph::AssignmentGraph rev = ag;
    std::reverse(rev.edges.begin(), rev.edges.end());
    rev.edge_attributes = ag.edge_attributes.rowwise().reverse();
    Tape u;
    const Matrix s = model.graph_match_forward(u, rev).scores.value();
    CHECK((s - out.scores.value()).cwiseAbs().maxCoeff() <= 1e-12);
  }

  SUBCASE("no edges: zero aggregate and node-only dependence") {
    graph::Graph2D lone = g2;
    lone.edges.clear();
    graph::AssignmentGraph bare = graph::build_assignment_graph(lone, g3);
    bare.node_attributes.col(7) = bare.node_attributes.col(2);
    Tape u;
    const Matrix s = model.graph_match_forward(u, bare).scores.value();
    CHECK(s(0, 7) == s(0, 2));
    // Scores are a per-node function of the attributes alone.
    graph::AssignmentGraph single = bare;
    single.rows = 1;
    single.cols = 1;
    single.node_attributes = bare.node_attributes.col(5);
    Tape w;
    CHECK(model.graph_match_forward(w, single).scores.value()(0, 0) == s(0, 5));
  }

  SUBCASE("symmetric nodes score equally") {
    graph::Graph2D a2;
    a2.nodes = random_matrix(rng, 2, 2);
    a2.edges = {{0, 1}};
    graph::UniverseGraph3D a3;
    a3.nodes = random_matrix(rng, 3, 2);
    a3.edges = {{0, 1}};
    graph::AssignmentGraph sym = graph::build_assignment_graph(a2, a3);
    // Nodes 0 and 3 share one product edge; give them identical attributes.
    sym.node_attributes.col(3) = sym.node_attributes.col(0);
    Tape u;
    const Matrix s = model.graph_match_forward(u, sym).scores.value();
    CHECK(std::abs(s(0, 0) - s(0, 3)) <= 1e-12);
    CHECK(std::abs(s(0, 0) - s(0, 1)) > 0.0);
  }

  SUBCASE("attribute shape errors") {
    Tape u;
    CHECK_THROWS_AS(model.graph_match_forward(u, ag, u.constant(Matrix::Ones(4, 20)), u.constant(ag.edge_attributes)),
                    Error);
  }
}
