#pragma once

#include "unimatch/autodiff.hpp"
#include "unimatch/graphgen.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace unimatch::network {

struct NetworkConfig {
  /// Per-point 2D encoder widths (input 2). The last width is the global feature size.
  std::vector<int> encoder_widths{64, 128};
  /// Per-universe-point 3D MLP widths (input 3).
  std::vector<int> point_widths{64, 128};
  /// Hidden widths of the offset head (input point feature ⊕ global feature, output 3).
  std::vector<int> offset_widths{128};
  /// Latent width of the graph matching network.
  int latent = 32;
  int rounds = 3;
  /// Standard deviation of the noise added to the identity category operators.
  double category_noise = 0.01;

  void validate() const;
};

struct CategoryInfo {
  std::string name;
  int universe_size = 0;
};

/// Affine layer y = W·x + b over column batches.
struct Linear {
  ad::Parameter* weight = nullptr;
  ad::Parameter* bias = nullptr;

  ad::Tensor operator()(ad::Tape& tape, const ad::Tensor& x) const;
};

struct Mlp {
  std::vector<Linear> layers;
  /// ReLU after every layer, or after all but the last one.
  bool relu_output = true;

  ad::Tensor operator()(ad::Tape& tape, const ad::Tensor& x) const;
};

struct PointEncoderParams {
  Mlp mlp;
};

struct DeformationParams {
  Mlp point_mlp;
  Mlp offset_head;
};

struct CategoryOperator {
  ad::Parameter* op = nullptr;
};

struct GraphRound {
  ad::Parameter* edge_self = nullptr;
  ad::Parameter* edge_src = nullptr;
  ad::Parameter* edge_dst = nullptr;
  ad::Parameter* edge_bias = nullptr;
  ad::Parameter* node_self = nullptr;
  ad::Parameter* node_agg = nullptr;
  ad::Parameter* node_bias = nullptr;
};

struct GraphNetParams {
  Linear node_in;
  Linear edge_in;
  std::vector<GraphRound> rounds;
  Mlp score_head;
};

struct MatchOutput {
  /// 1×(m·d) probabilities in assignment-node order.
  ad::Tensor scores;
  /// m×d soft matching.
  ad::Tensor x_soft;
};

/// All learnable state: per-category universe points and category operators
/// plus the shared encoder, deformation module and graph matching network.
class Model {
 public:
  Model(std::vector<CategoryInfo> categories, NetworkConfig config, std::uint64_t seed);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const NetworkConfig& config() const { return config_; }
  const std::vector<CategoryInfo>& categories() const { return categories_; }
  int category_index(const std::string& name) const;

  ad::ParameterStore& params() { return params_; }
  const ad::ParameterStore& params() const { return params_; }

  /// 3×d universe points of a category.
  ad::Parameter& universe(int category);
  const ad::Parameter& universe(int category) const;

  /// Per-point MLP, max over points, then the category operator: 2×m → f×1.
  ad::Tensor encode_points(ad::Tape& tape, const ad::Tensor& points, int category) const;
  /// Offsets S (3×d) for universe points `u` (3×d) given a global feature.
  ad::Tensor deform_universe(ad::Tape& tape, const ad::Tensor& u, const ad::Tensor& global) const;
  /// Message passing on the assignment graph with attributes supplied as tensors
  /// (5×(m·d) nodes, 10×|E| edges) so gradients reach their sources.
  MatchOutput graph_match_forward(ad::Tape& tape, const graph::AssignmentGraph& ag, const ad::Tensor& node_attr,
                                  const ad::Tensor& edge_attr) const;
  /// Same, using the attributes stored in the graph as constants.
  MatchOutput graph_match_forward(ad::Tape& tape, const graph::AssignmentGraph& ag) const;

  PointEncoderParams& encoder() { return encoder_; }
  DeformationParams& deformation() { return deformation_; }
  GraphNetParams& graph_net() { return graph_net_; }
  CategoryOperator& category_operator(int category) { return category_ops_.at(static_cast<std::size_t>(category)); }

 private:
  void check_category(int category) const;

  NetworkConfig config_;
  std::vector<CategoryInfo> categories_;
  ad::ParameterStore params_;
  std::vector<ad::Parameter*> universes_;
  std::vector<CategoryOperator> category_ops_;
  PointEncoderParams encoder_;
  DeformationParams deformation_;
  GraphNetParams graph_net_;
};

}  // namespace unimatch::network
