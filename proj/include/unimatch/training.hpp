#pragma once

#include "unimatch/autodiff.hpp"
#include "unimatch/dataset.hpp"
#include "unimatch/graphgen.hpp"
#include "unimatch/matching.hpp"
#include "unimatch/network.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace unimatch::training {

struct LossWeights {
  double match = 0.0;
  double deform = 0.0;
  double rec = 0.0;
  double off = 0.0;
  double reg = 0.0;

  /// Reconstruction only.
  static LossWeights warm_start() { return {0.0, 0.0, 1.0, 0.0, 0.0}; }
  static LossWeights main_phase() { return {1.0, 0.5, 0.0, 0.05, 0.1}; }

  void validate() const;
};

struct Schedule {
  int warm_start_iterations = 4000;
  /// Iterations including the warm start.
  int total_iterations = 150000;
  int batch_size = 16;
  double initial_lr = 0.008;
  double decay_factor = 0.98;
  int decay_every = 3000;

  /// initial_lr · decay_factor^⌊t / decay_every⌋.
  double lr_at(int iteration) const;
  void validate() const;
};

enum class OptimizerKind { Adam, Sgd };

struct ForwardOptions {
  /// When false the offsets S are forced to zero.
  bool deformation = true;
  /// Build universe edges from the static points instead of the deformed ones.
  bool freeze_universe_graph = false;
  double condition_cap = 1e8;
};

/// A keypoint instance in network coordinates with its cached 2D graph.
struct PreparedInstance {
  std::string id;
  int category = 0;
  int universe_size = 0;
  /// Normalized keypoints, 2×m.
  Eigen::Matrix2Xd keypoints;
  graph::Graph2D graph;
  /// 4×|E₂| edge attributes of `graph`.
  Eigen::MatrixXd edge_attributes;
  std::optional<std::vector<int>> labels;

  int size() const { return static_cast<int>(keypoints.cols()); }
  /// m×d ground-truth matching; requires labels.
  Eigen::MatrixXd gt_matrix() const;
};

PreparedInstance prepare_instance(const data::KeypointInstance& inst, const network::Model& model,
                                  const graph::DelaunayOptions& delaunay = {});
/// Prepares every instance of the split; labels are required when `need_labels`.
std::vector<PreparedInstance> prepare_split(const data::DatasetManifest& manifest, data::Split split,
                                            const network::Model& model, bool need_labels);

/// Per-instance loss terms. Terms whose weight was zero are left invalid.
struct InstanceTerms {
  ad::Tensor rec, def, off, match, reg;
  ad::Tensor offsets;
  ad::Tensor deformed;
  network::MatchOutput match_out;
  /// Weighted sum of the evaluated terms.
  ad::Tensor total;
};

/// Evaluates only the terms with positive weight, so a reconstruction-only
/// pass never reaches the encoder, the deformation module or the matcher.
InstanceTerms forward_instance(ad::Tape& tape, network::Model& model, const PreparedInstance& inst,
                               const LossWeights& weights, const ForwardOptions& opts = {});

using Batch = std::span<const PreparedInstance>;

ad::Tensor loss_rec(ad::Tape& tape, network::Model& model, Batch batch, const ForwardOptions& opts = {});
ad::Tensor loss_def(ad::Tape& tape, network::Model& model, Batch batch, const ForwardOptions& opts = {});
ad::Tensor loss_off(ad::Tape& tape, network::Model& model, Batch batch, const ForwardOptions& opts = {});
ad::Tensor loss_match(ad::Tape& tape, network::Model& model, Batch batch, const ForwardOptions& opts = {});
ad::Tensor loss_reg(ad::Tape& tape, network::Model& model, Batch batch, const ForwardOptions& opts = {});
/// Weighted sum of batch means; zero-weight terms are not evaluated.
ad::Tensor total_loss(ad::Tape& tape, network::Model& model, Batch batch, const LossWeights& weights,
                      const ForwardOptions& opts = {});

/// ‖X_gt − X‖²_F.
ad::Tensor match_term(const ad::Tensor& x_soft, const Eigen::MatrixXd& gt);
/// ‖B(y − vec(X_gt))‖² with y = vec(X_soft).
ad::Tensor reg_term(const ad::Tensor& x_soft, const Eigen::MatrixXd& gt);
/// Same with hard y: y_i = 1 iff the score exceeds 0.5.
double reg_term_hard(const Eigen::MatrixXd& x_soft, const Eigen::MatrixXd& gt);

/// (m+d)×(m·d) selector with B·vec(X) = (row sums of X; column sums of X); vec is column-major.
Eigen::MatrixXd build_sum_operator(int m, int d);

struct MomentSlot {
  Eigen::MatrixXd m;
  Eigen::MatrixXd v;
  std::uint64_t steps = 0;
};

struct TrainState {
  std::unique_ptr<network::Model> model;
  /// One slot per parameter, in store order.
  std::vector<MomentSlot> moments;
  int iteration = 0;
  std::mt19937_64 rng;
  /// Current epoch permutation of the training set and the read position.
  std::vector<int> order;
  std::size_t cursor = 0;
};

TrainState init_state(std::vector<network::CategoryInfo> categories, const network::NetworkConfig& config,
                      std::uint64_t seed);

struct TrainConfig {
  Schedule schedule;
  LossWeights warm_weights = LossWeights::warm_start();
  LossWeights weights = LossWeights::main_phase();
  OptimizerKind optimizer = OptimizerKind::Adam;
  ForwardOptions forward;
  int threads = 1;
  /// Log every n iterations (and at the last one); 0 disables logging.
  int log_every = 100;
  /// Also call the checkpoint hook every n iterations (it always runs after the last one); 0 disables this.
  int checkpoint_every = 0;

  void validate() const;
};

struct MetricsRecord {
  int iteration = 0;
  std::string phase;
  double lr = 0.0;
  double loss = 0.0;
  double l_match = 0.0, l_def = 0.0, l_rec = 0.0, l_off = 0.0, l_reg = 0.0;
  /// Batch matching accuracy; absent when the matcher did not run.
  std::optional<double> train_accuracy;
};

/// One JSON object per line.
std::string to_json_line(const MetricsRecord& r);

struct TrainResult {
  int iterations_run = 0;
  bool diverged = false;
  /// Names the failing iteration when diverged.
  std::string message;
  std::vector<MetricsRecord> log;
};

struct TrainHooks {
  std::function<void(const MetricsRecord&)> on_log;
  std::function<void(const TrainState&)> on_checkpoint;
};

/// Runs from state.iteration to schedule.total_iterations. On a non-finite
/// loss, gradient or update the state keeps the last good step, the
/// checkpoint hook fires once more, and the result is marked diverged.
TrainResult train(TrainState& state, Batch train_set, const TrainConfig& config, const TrainHooks& hooks = {});

struct EvalOptions {
  ForwardOptions forward;
  /// Triples are enumerated exhaustively up to this many instances per category.
  int exhaustive_limit = 20;
  int sampled_triples = 1000;
  std::uint64_t seed = 0;
};

struct CategoryReport {
  std::string name;
  int instances = 0;
  std::optional<double> accuracy;
  std::optional<double> cycle_score;
  int triples = 0;
  int skipped_triples = 0;
  bool consistent = true;
  std::optional<double> reconstruction_static;
  std::optional<double> reconstruction_deformed;
  matching::MultiMatching predictions;
};

struct EvalReport {
  std::vector<CategoryReport> categories;
  /// Means over categories with a defined value.
  std::optional<double> accuracy;
  std::optional<double> cycle_score;
  std::optional<double> reconstruction_static;
  std::optional<double> reconstruction_deformed;
};

/// Soft matching m×d for one instance.
Eigen::MatrixXd predict_soft(network::Model& model, const PreparedInstance& inst, const ForwardOptions& opts = {});
matching::PartialPermutation predict(network::Model& model, const PreparedInstance& inst,
                                     const ForwardOptions& opts = {});

EvalReport evaluate(network::Model& model, Batch instances, const EvalOptions& opts = {});

/// Instance-specific deformed universe points U + S (3×d).
Eigen::Matrix3Xd deformed_points(network::Model& model, const PreparedInstance& inst, const ForwardOptions& opts = {});

}  // namespace unimatch::training
