#include "unimatch/network.hpp"

#include "unimatch/errors.hpp"

#include <cmath>
#include <numeric>
#include <random>

namespace unimatch::network {

using ad::Matrix;
using ad::Tensor;

void NetworkConfig::validate() const {
  auto positive = [](const std::vector<int>& w, const char* what) {
    if (w.empty()) throw Error(ErrorKind::Usage, std::string(what) + " needs at least one layer");
    for (int x : w)
      if (x <= 0) throw Error(ErrorKind::Usage, std::string(what) + " widths must be positive");
  };
  positive(encoder_widths, "encoder");
  positive(point_widths, "point MLP");
  for (int x : offset_widths)
    if (x <= 0) throw Error(ErrorKind::Usage, "offset head widths must be positive");
  if (latent <= 0) throw Error(ErrorKind::Usage, "latent width must be positive");
  if (rounds < 1) throw Error(ErrorKind::Usage, "graph network needs at least one round");
  if (!(category_noise >= 0.0)) throw Error(ErrorKind::Usage, "category noise must be non-negative");
}

Tensor Linear::operator()(ad::Tape& tape, const Tensor& x) const {
  return ad::add_bias(ad::matmul(tape.param(*weight), x), tape.param(*bias));
}

Tensor Mlp::operator()(ad::Tape& tape, const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](tape, h);
    if (relu_output || i + 1 < layers.size()) h = ad::relu(h);
  }
  return h;
}

namespace {

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  // He-uniform for ReLU layers.
  Matrix weight(int out, int in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix w(out, in);
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = dist(rng_);
    return w;
  }

  Matrix uniform(int rows, int cols, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Matrix w(rows, cols);
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = dist(rng_);
    return w;
  }

  Matrix identity_plus_noise(int n, double sigma) {
    std::normal_distribution<double> dist(0.0, sigma);
    Matrix w = Matrix::Identity(n, n);
    if (sigma > 0.0)
      for (Eigen::Index i = 0; i < w.size(); ++i) w(i) += dist(rng_);
    return w;
  }

 private:
  std::mt19937_64 rng_;
};

Linear make_linear(ad::ParameterStore& store, Initializer& init, const std::string& name, int in, int out,
                   bool zero = false) {
  Linear l;
  l.weight = &store.add(name + "/w", zero ? Matrix::Zero(out, in) : init.weight(out, in));
  l.bias = &store.add(name + "/b", Matrix::Zero(out, 1));
  return l;
}

Mlp make_mlp(ad::ParameterStore& store, Initializer& init, const std::string& name, int in,
             const std::vector<int>& widths, bool relu_output, bool zero_last = false) {
  Mlp mlp;
  mlp.relu_output = relu_output;
  int prev = in;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const bool last = i + 1 == widths.size();
    mlp.layers.push_back(make_linear(store, init, name + "/l" + std::to_string(i), prev, widths[i], zero_last && last));
    prev = widths[i];
  }
  return mlp;
}

}  // namespace

Model::Model(std::vector<CategoryInfo> categories, NetworkConfig config, std::uint64_t seed)
    : config_(std::move(config)), categories_(std::move(categories)) {
  config_.validate();
  if (categories_.empty()) throw Error(ErrorKind::Usage, "model needs at least one category");
  Initializer init(seed);

  for (const CategoryInfo& c : categories_) {
    if (c.universe_size < 4)
      throw Error(ErrorKind::Data, "category " + c.name + " needs at least 4 universe points");
    universes_.push_back(&params_.add("universe/" + c.name, init.uniform(3, c.universe_size, -0.5, 0.5)));
  }
  const int global = config_.encoder_widths.back();
  for (const CategoryInfo& c : categories_)
    category_ops_.push_back({&params_.add("category_op/" + c.name, init.identity_plus_noise(global, config_.category_noise))});

  encoder_.mlp = make_mlp(params_, init, "encoder", 2, config_.encoder_widths, true);

  deformation_.point_mlp = make_mlp(params_, init, "deform/point", 3, config_.point_widths, true);
  std::vector<int> head = config_.offset_widths;
  head.push_back(3);
  // Zero output layer: S = 0 until training moves it.
  deformation_.offset_head =
      make_mlp(params_, init, "deform/head", config_.point_widths.back() + global, head, false, true);

  const int h = config_.latent;
  graph_net_.node_in = make_linear(params_, init, "gnn/node_in", 5, h);
  graph_net_.edge_in = make_linear(params_, init, "gnn/edge_in", 10, h);
  for (int r = 0; r < config_.rounds; ++r) {
    const std::string p = "gnn/round" + std::to_string(r);
    GraphRound round;
    // Edge update sees [edge, source, target] (3h inputs); node update sees [node, aggregate] (2h).
    const Matrix edge_w = init.weight(h, 3 * h);
    round.edge_self = &params_.add(p + "/edge_self", edge_w.leftCols(h));
    round.edge_src = &params_.add(p + "/edge_src", edge_w.middleCols(h, h));
    round.edge_dst = &params_.add(p + "/edge_dst", edge_w.rightCols(h));
    round.edge_bias = &params_.add(p + "/edge_b", Matrix::Zero(h, 1));
    const Matrix node_w = init.weight(h, 2 * h);
    round.node_self = &params_.add(p + "/node_self", node_w.leftCols(h));
    round.node_agg = &params_.add(p + "/node_agg", node_w.rightCols(h));
    round.node_bias = &params_.add(p + "/node_b", Matrix::Zero(h, 1));
    graph_net_.rounds.push_back(round);
  }
  graph_net_.score_head = make_mlp(params_, init, "gnn/score", h, {h, 1}, false);
}

int Model::category_index(const std::string& name) const {
  for (std::size_t i = 0; i < categories_.size(); ++i)
    if (categories_[i].name == name) return static_cast<int>(i);
  throw Error(ErrorKind::Data, "unknown category " + name);
}

void Model::check_category(int category) const {
  if (category < 0 || category >= static_cast<int>(categories_.size()))
    throw Error(ErrorKind::Data, "unknown category id " + std::to_string(category));
}

ad::Parameter& Model::universe(int category) {
  check_category(category);
  return *universes_[static_cast<std::size_t>(category)];
}

const ad::Parameter& Model::universe(int category) const {
  check_category(category);
  return *universes_[static_cast<std::size_t>(category)];
}

Tensor Model::encode_points(ad::Tape& tape, const Tensor& points, int category) const {
  check_category(category);
  if (points.rows() != 2) throw Error(ErrorKind::Shape, "encode_points expects 2×m keypoints");
  if (points.cols() < 1) throw Error(ErrorKind::Shape, "encode_points needs at least one keypoint");
  const Tensor pooled = ad::max_pool_over_points(encoder_.mlp(tape, points));
  return ad::matmul(tape.param(*category_ops_[static_cast<std::size_t>(category)].op), pooled);
}

Tensor Model::deform_universe(ad::Tape& tape, const Tensor& u, const Tensor& global) const {
  if (u.rows() != 3) throw Error(ErrorKind::Shape, "deform_universe expects 3×d points");
  if (global.cols() != 1 || global.rows() != config_.encoder_widths.back())
    throw Error(ErrorKind::Shape, "deform_universe: global feature has the wrong size");
  const Tensor point_features = deformation_.point_mlp(tape, u);
  const Tensor joined = ad::concat({point_features, ad::broadcast_cols(global, u.cols())}, 0);
  return deformation_.offset_head(tape, joined);
}

MatchOutput Model::graph_match_forward(ad::Tape& tape, const graph::AssignmentGraph& ag, const Tensor& node_attr,
                                       const Tensor& edge_attr) const {
  const int nodes = ag.node_count();
  const int edges = static_cast<int>(ag.edges.size());
  if (node_attr.rows() != 5 || node_attr.cols() != nodes)
    throw Error(ErrorKind::Shape, "graph_match_forward: node attributes must be 5×(m·d)");
  if (edges > 0 && (edge_attr.rows() != 10 || edge_attr.cols() != edges))
    throw Error(ErrorKind::Shape, "graph_match_forward: edge attributes must be 10×|E|");

  // Every undirected product edge carries one message in each direction.
  std::vector<int> src(static_cast<std::size_t>(2 * edges)), dst(static_cast<std::size_t>(2 * edges));
  std::vector<int> twice(static_cast<std::size_t>(2 * edges));
  for (int e = 0; e < edges; ++e) {
    const auto [a, b] = ag.edges[static_cast<std::size_t>(e)];
    src[static_cast<std::size_t>(e)] = a;
    dst[static_cast<std::size_t>(e)] = b;
    src[static_cast<std::size_t>(e + edges)] = b;
    dst[static_cast<std::size_t>(e + edges)] = a;
    twice[static_cast<std::size_t>(e)] = e;
    twice[static_cast<std::size_t>(e + edges)] = e;
  }

  const GraphNetParams& g = graph_net_;
  Tensor h = ad::relu(g.node_in(tape, node_attr));
  Tensor e;
  if (edges > 0) e = ad::gather_cols(ad::relu(g.edge_in(tape, edge_attr)), twice);

  for (const GraphRound& r : g.rounds) {
    Tensor agg;
    if (edges > 0) {
      e = ad::gather_add_relu(ad::matmul(tape.param(*r.edge_self), e), ad::matmul(tape.param(*r.edge_src), h), src,
                              ad::matmul(tape.param(*r.edge_dst), h), dst, tape.param(*r.edge_bias));
      agg = ad::scatter_mean_cols(e, dst, nodes);
    } else {
      agg = tape.constant(Matrix::Zero(config_.latent, nodes));
    }
    const Tensor pre = ad::add(ad::matmul(tape.param(*r.node_self), h), ad::matmul(tape.param(*r.node_agg), agg));
    h = ad::relu(ad::add_bias(pre, tape.param(*r.node_bias)));
  }

  MatchOutput out;
  out.scores = ad::sigmoid(g.score_head(tape, h));
  out.x_soft = ad::unflatten_rowmajor(out.scores, ag.rows, ag.cols);
  return out;
}

MatchOutput Model::graph_match_forward(ad::Tape& tape, const graph::AssignmentGraph& ag) const {
  const Tensor node_attr = tape.constant(ag.node_attributes);
  const Tensor edge_attr = tape.constant(ag.edge_attributes);
  return graph_match_forward(tape, ag, node_attr, edge_attr);
}

}  // namespace unimatch::network
