#include "unimatch/training.hpp"

#include "unimatch/errors.hpp"
#include "unimatch/geometry.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <thread>

namespace unimatch::training {

using ad::Matrix;
using ad::Tensor;

void LossWeights::validate() const {
  for (double w : {match, deform, rec, off, reg})
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorKind::Usage, "loss weights must be finite and >= 0");
}

double Schedule::lr_at(int iteration) const {
  return initial_lr * std::pow(decay_factor, static_cast<double>(iteration / decay_every));
}

void Schedule::validate() const {
  if (total_iterations < 0 || warm_start_iterations < 0) throw Error(ErrorKind::Usage, "iteration counts must be >= 0");
  if (total_iterations > 0 && warm_start_iterations >= total_iterations)
    throw Error(ErrorKind::Usage, "warm start (" + std::to_string(warm_start_iterations) +
                                      ") must be shorter than the total iterations (" +
                                      std::to_string(total_iterations) + ")");
  if (batch_size < 1) throw Error(ErrorKind::Usage, "batch size must be >= 1");
  if (!(initial_lr > 0.0) || !std::isfinite(initial_lr)) throw Error(ErrorKind::Usage, "learning rate must be > 0");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw Error(ErrorKind::Usage, "decay factor must be in (0, 1]");
  if (decay_every < 1) throw Error(ErrorKind::Usage, "decay interval must be >= 1");
}

void TrainConfig::validate() const {
  schedule.validate();
  warm_weights.validate();
  weights.validate();
  if (threads < 1) throw Error(ErrorKind::Usage, "thread count must be >= 1");
  if (log_every < 0 || checkpoint_every < 0) throw Error(ErrorKind::Usage, "intervals must be >= 0");
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd PreparedInstance::gt_matrix() const {
  if (!labels) throw Error(ErrorKind::Data, "instance " + id + " has no ground-truth labels");
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(size(), universe_size);
  for (int i = 0; i < size(); ++i) x(i, (*labels)[static_cast<std::size_t>(i)]) = 1.0;
  return x;
}

PreparedInstance prepare_instance(const data::KeypointInstance& inst, const network::Model& model,
                                  const graph::DelaunayOptions& delaunay) {
  PreparedInstance p;
  p.id = inst.id;
  p.category = model.category_index(inst.category);
  p.universe_size = model.categories()[static_cast<std::size_t>(p.category)].universe_size;
  if (inst.size() < 1) throw Error(ErrorKind::Data, "instance " + inst.id + " has no keypoints");
  if (inst.size() > p.universe_size)
    throw Error(ErrorKind::Data, "instance " + inst.id + " has more keypoints than universe points");
  p.keypoints = geometry::normalize_keypoints({inst.keypoints}).points.v;
  p.graph.nodes = p.keypoints;
  if (p.size() >= 2) p.graph.edges = graph::delaunay_2d(p.keypoints, delaunay);
  p.edge_attributes = p.graph.edge_attributes();
  if (inst.labels) {
    for (int l : *inst.labels)
      if (l < 0 || l >= p.universe_size)
        throw Error(ErrorKind::Data, "instance " + inst.id + " has a label outside the universe");
    p.labels = inst.labels;
  }
  return p;
}

std::vector<PreparedInstance> prepare_split(const data::DatasetManifest& manifest, data::Split split,
                                            const network::Model& model, bool need_labels) {
  std::vector<PreparedInstance> out;
  for (const data::KeypointInstance& inst : manifest.instances) {
    if (inst.split != split) continue;
    if (need_labels && !inst.labels) throw Error(ErrorKind::Data, "instance " + inst.id + " has no labels");
    if (need_labels && inst.size() < 4)
      throw Error(ErrorKind::Data, "instance " + inst.id + " needs at least 4 keypoints for reconstruction");
    out.push_back(prepare_instance(inst, model));
  }
  return out;
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd build_sum_operator(int m, int d) {
  if (m < 1 || d < 1) throw Error(ErrorKind::Shape, "build_sum_operator needs m, d >= 1");
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(m + d, static_cast<Eigen::Index>(m) * d);
  for (int k = 0; k < d; ++k)
    for (int i = 0; i < m; ++i) {
      const Eigen::Index pos = static_cast<Eigen::Index>(k) * m + i;
      b(i, pos) = 1.0;
      b(m + k, pos) = 1.0;
    }
  return b;
}

Tensor match_term(const Tensor& x_soft, const Eigen::MatrixXd& gt) {
  if (x_soft.rows() != gt.rows() || x_soft.cols() != gt.cols())
    throw Error(ErrorKind::Shape, "match loss: prediction and ground truth differ in shape");
  return ad::frobenius_sq(ad::subtract(x_soft, x_soft.tape()->constant(gt)));
}

Tensor reg_term(const Tensor& x_soft, const Eigen::MatrixXd& gt) {
  if (x_soft.rows() != gt.rows() || x_soft.cols() != gt.cols())
    throw Error(ErrorKind::Shape, "regularizer: prediction and ground truth differ in shape");
  ad::Tape& tape = *x_soft.tape();
  const int m = static_cast<int>(gt.rows()), d = static_cast<int>(gt.cols());
  const Tensor b = tape.constant(build_sum_operator(m, d));
  const Tensor diff = ad::subtract(x_soft, tape.constant(gt));
  return ad::frobenius_sq(ad::matmul(b, ad::vec(diff)));
}

double reg_term_hard(const Eigen::MatrixXd& x_soft, const Eigen::MatrixXd& gt) {
  if (x_soft.rows() != gt.rows() || x_soft.cols() != gt.cols())
    throw Error(ErrorKind::Shape, "regularizer: prediction and ground truth differ in shape");
  const Eigen::MatrixXd y = (x_soft.array() > 0.5).cast<double>().matrix();
  const Eigen::MatrixXd diff = y - gt;
  return diff.rowwise().sum().squaredNorm() + diff.colwise().sum().squaredNorm();
}

namespace {

Tensor homogeneous(const Tensor& x) {
  return ad::concat({x, x.tape()->constant(Matrix::Ones(1, x.cols()))}, 0);
}

std::vector<int> range_div(int m, int d, bool row) {
  std::vector<int> out(static_cast<std::size_t>(m) * static_cast<std::size_t>(d));
  for (int i = 0; i < m; ++i)
    for (int k = 0; k < d; ++k) out[static_cast<std::size_t>(i * d + k)] = row ? i : k;
  return out;
}

network::MatchOutput run_matcher(ad::Tape& tape, const network::Model& model, const PreparedInstance& inst,
                                 const Tensor& u, const Tensor& deformed, const ForwardOptions& opts) {
  const Eigen::Matrix3Xd points = deformed.value();
  graph::UniverseGraph3D g3;
  g3.nodes = points;
  g3.edges = graph::edges_3d(opts.freeze_universe_graph ? Eigen::Matrix3Xd(u.value()) : points);
  const graph::AssignmentGraph ag = graph::build_assignment_graph(inst.graph, g3);

  // Attributes rebuilt by gathers so gradients reach the universe points and offsets.
  const int m = inst.size(), d = inst.universe_size;
  const std::vector<int> rows = range_div(m, d, true), cols = range_div(m, d, false);
  Matrix node_2d(2, ag.node_count());
  for (int n = 0; n < ag.node_count(); ++n) node_2d.col(n) = inst.keypoints.col(rows[static_cast<std::size_t>(n)]);
  const Tensor node_attr = ad::concat({tape.constant(std::move(node_2d)), ad::gather_cols(deformed, cols)}, 0);

  Tensor edge_attr;
  if (!ag.edges.empty()) {
    std::vector<int> lo, hi;
    for (const graph::Edge& e : g3.edges) {
      lo.push_back(std::min(e.first, e.second));
      hi.push_back(std::max(e.first, e.second));
    }
    const Tensor e3 = ad::concat({ad::gather_cols(deformed, lo), ad::gather_cols(deformed, hi)}, 0);
    Matrix e2(4, static_cast<Eigen::Index>(ag.edges.size()));
    for (std::size_t e = 0; e < ag.edges.size(); ++e)
      e2.col(static_cast<Eigen::Index>(e)) = inst.edge_attributes.col(ag.edge_2d[e]);
    edge_attr = ad::concat({tape.constant(std::move(e2)), ad::gather_cols(e3, ag.edge_3d)}, 0);
  } else {
    edge_attr = tape.constant(Matrix::Zero(10, 0));
  }
  return model.graph_match_forward(tape, ag, node_attr, edge_attr);
}

Tensor instance_offsets(ad::Tape& tape, const network::Model& model, const PreparedInstance& inst, const Tensor& u) {
  const Tensor global = model.encode_points(tape, tape.constant(inst.keypoints), inst.category);
  return model.deform_universe(tape, u, global);
}

}  // namespace

InstanceTerms forward_instance(ad::Tape& tape, network::Model& model, const PreparedInstance& inst,
                               const LossWeights& weights, const ForwardOptions& opts) {
  InstanceTerms t;
  const bool need_rec = weights.rec > 0.0;
  const bool need_def = weights.deform > 0.0;
  const bool need_off = weights.off > 0.0;
  const bool need_match = weights.match > 0.0 || weights.reg > 0.0;
  const bool need_deformed = need_def || need_off || need_match;
  if ((need_rec || need_def || need_match) && !inst.labels)
    throw Error(ErrorKind::Data, "instance " + inst.id + " has no ground-truth labels");

  const Tensor u = tape.param(model.universe(inst.category));
  Tensor v_h;
  if (need_rec || need_def) v_h = homogeneous(tape.constant(inst.keypoints));
  const std::span<const int> labels = inst.labels ? std::span<const int>(*inst.labels) : std::span<const int>();

  Tensor deformed = u;
  if (need_deformed && opts.deformation) {
    t.offsets = instance_offsets(tape, model, inst, u);
    deformed = ad::add(u, t.offsets);
  } else if (need_deformed) {
    t.offsets = tape.constant(Matrix::Zero(3, u.cols()));
  }
  t.deformed = deformed;

  std::vector<std::pair<double, Tensor>> parts;
  if (need_rec) {
    t.rec = geometry::reconstruction_residual(homogeneous(ad::gather_cols(u, labels)), v_h, opts.condition_cap);
    parts.emplace_back(weights.rec, t.rec);
  }
  if (need_def) {
    t.def = geometry::reconstruction_residual(homogeneous(ad::gather_cols(deformed, labels)), v_h, opts.condition_cap);
    parts.emplace_back(weights.deform, t.def);
  }
  if (need_off) {
    t.off = ad::frobenius_sq(t.offsets);
    parts.emplace_back(weights.off, t.off);
  }
  if (need_match) {
    t.match_out = run_matcher(tape, model, inst, u, deformed, opts);
    const Eigen::MatrixXd gt = inst.gt_matrix();
    if (weights.match > 0.0) {
      t.match = match_term(t.match_out.x_soft, gt);
      parts.emplace_back(weights.match, t.match);
    }
    if (weights.reg > 0.0) {
      t.reg = reg_term(t.match_out.x_soft, gt);
      parts.emplace_back(weights.reg, t.reg);
    }
  }

  if (parts.empty()) {
    t.total = tape.constant_scalar(0.0);
  } else {
    t.total = ad::scale(parts[0].second, parts[0].first);
    for (std::size_t i = 1; i < parts.size(); ++i) t.total = ad::add(t.total, ad::scale(parts[i].second, parts[i].first));
  }
  return t;
}

namespace {

Tensor batch_mean(ad::Tape& tape, network::Model& model, Batch batch, const LossWeights& w,
                  const ForwardOptions& opts) {
  if (batch.empty()) throw Error(ErrorKind::Data, "empty batch");
  Tensor acc;
  for (const PreparedInstance& inst : batch) {
    const Tensor t = forward_instance(tape, model, inst, w, opts).total;
    acc = acc.valid() ? ad::add(acc, t) : t;
  }
  return ad::scale(acc, 1.0 / static_cast<double>(batch.size()));
}

}  // namespace

Tensor loss_rec(ad::Tape& tape, network::Model& model, Batch batch, const ForwardOptions& opts) {
  return batch_mean(tape, model, batch, {0, 0, 1, 0, 0}, opts);
}
Tensor loss_def(ad::Tape& tape, network::Model& model, Batch batch, const ForwardOptions& opts) {
  return batch_mean(tape, model, batch, {0, 1, 0, 0, 0}, opts);
}
Tensor loss_off(ad::Tape& tape, network::Model& model, Batch batch, const ForwardOptions& opts) {
  return batch_mean(tape, model, batch, {0, 0, 0, 1, 0}, opts);
}
Tensor loss_match(ad::Tape& tape, network::Model& model, Batch batch, const ForwardOptions& opts) {
  return batch_mean(tape, model, batch, {1, 0, 0, 0, 0}, opts);
}
Tensor loss_reg(ad::Tape& tape, network::Model& model, Batch batch, const ForwardOptions& opts) {
  return batch_mean(tape, model, batch, {0, 0, 0, 0, 1}, opts);
}

Tensor total_loss(ad::Tape& tape, network::Model& model, Batch batch, const LossWeights& weights,
                  const ForwardOptions& opts) {
  weights.validate();
  return batch_mean(tape, model, batch, weights, opts);
}

// ---------------------------------------------------------------------------

TrainState init_state(std::vector<network::CategoryInfo> categories, const network::NetworkConfig& config,
                      std::uint64_t seed) {
  TrainState s;
  s.model = std::make_unique<network::Model>(std::move(categories), config, seed);
  for (const ad::Parameter& p : s.model->params())
    s.moments.push_back({Matrix::Zero(p.value.rows(), p.value.cols()), Matrix::Zero(p.value.rows(), p.value.cols()), 0});
  s.rng.seed(seed ^ 0x9e3779b97f4a7c15ULL);
  return s;
}

std::string to_json_line(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["iteration"] = r.iteration;
  j["phase"] = r.phase;
  j["lr"] = r.lr;
  j["loss"] = r.loss;
  j["l_match"] = r.l_match;
  j["l_def"] = r.l_def;
  j["l_rec"] = r.l_rec;
  j["l_off"] = r.l_off;
  j["l_reg"] = r.l_reg;
  j["train_accuracy"] = r.train_accuracy ? nlohmann::ordered_json(*r.train_accuracy) : nlohmann::ordered_json();
  return j.dump();
}

namespace {

struct InstanceOutcome {
  std::unique_ptr<ad::Tape> tape;
  double total = 0, match = 0, def = 0, rec = 0, off = 0, reg = 0;
  std::optional<double> accuracy;
  std::string error;
  ErrorKind error_kind = ErrorKind::Numerical;
};

double value_or_zero(const Tensor& t) { return t.valid() ? t.scalar() : 0.0; }

void run_instance(InstanceOutcome& out, network::Model& model, const PreparedInstance& inst, const LossWeights& w,
                  const ForwardOptions& opts, double seed) {
  try {
    out.tape = std::make_unique<ad::Tape>();
    const InstanceTerms t = forward_instance(*out.tape, model, inst, w, opts);
    out.total = t.total.scalar();
    out.match = value_or_zero(t.match);
    out.def = value_or_zero(t.def);
    out.rec = value_or_zero(t.rec);
    out.off = value_or_zero(t.off);
    out.reg = value_or_zero(t.reg);
    if (t.match_out.x_soft.valid()) {
      const auto pred = matching::extract_matching(t.match_out.x_soft.value()).matching;
      out.accuracy = matching::matching_accuracy(pred, matching::PartialPermutation(*inst.labels, inst.universe_size));
    }
    out.tape->backward(t.total, seed);
  } catch (const Error& e) {
    out.error = e.what();
    out.error_kind = e.kind();
  }
}

bool is_numerical(ErrorKind k) { return k == ErrorKind::Numerical || k == ErrorKind::Singular; }

}  // namespace

TrainResult train(TrainState& state, Batch train_set, const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (!state.model) throw Error(ErrorKind::Usage, "train: state has no model");
  const Schedule& sched = config.schedule;
  TrainResult result;
  if (state.iteration >= sched.total_iterations) return result;
  if (train_set.empty()) throw Error(ErrorKind::Data, "training split is empty");
  for (const PreparedInstance& inst : train_set)
    if (!inst.labels) throw Error(ErrorKind::Data, "training instance " + inst.id + " has no labels");

  network::Model& model = *state.model;
  std::vector<ad::Parameter*> params;
  for (ad::Parameter& p : model.params()) params.push_back(&p);
  if (state.moments.size() != params.size()) throw Error(ErrorKind::Usage, "train: optimizer state does not match model");

  const std::size_t n = train_set.size();
  const int batch = sched.batch_size;

  while (state.iteration < sched.total_iterations) {
    const int it = state.iteration;
    const bool warm = it < sched.warm_start_iterations;
    const LossWeights& w = warm ? config.warm_weights : config.weights;

    // Draw the batch without touching the state until the step succeeds.
    std::vector<int> order = state.order;
    std::size_t cursor = state.cursor;
    std::mt19937_64 rng = state.rng;
    std::vector<int> picks;
    for (int b = 0; b < batch; ++b) {
      if (order.size() != n || cursor >= order.size()) {
        order.resize(n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      picks.push_back(order[cursor++]);
    }

    model.params().zero_grad();
    std::vector<InstanceOutcome> outcomes(picks.size());
    const double seed = 1.0 / static_cast<double>(picks.size());
    const int workers = std::min<int>(config.threads, static_cast<int>(picks.size()));
    if (workers <= 1) {
      for (std::size_t i = 0; i < picks.size(); ++i)
        run_instance(outcomes[i], model, train_set[static_cast<std::size_t>(picks[i])], w, config.forward, seed);
    } else {
      std::vector<std::thread> pool;
      for (int wk = 0; wk < workers; ++wk)
        pool.emplace_back([&, wk] {
          for (std::size_t i = static_cast<std::size_t>(wk); i < picks.size(); i += static_cast<std::size_t>(workers))
            run_instance(outcomes[i], model, train_set[static_cast<std::size_t>(picks[i])], w, config.forward, seed);
        });
      for (std::thread& t : pool) t.join();
    }

    std::string failure;
    for (const InstanceOutcome& o : outcomes) {
      if (o.error.empty()) continue;
      if (!is_numerical(o.error_kind)) throw Error(o.error_kind, o.error);
      failure = o.error;
      break;
    }
    MetricsRecord rec;
    if (failure.empty()) {
      // Fixed-order reduction keeps threaded runs deterministic.
      for (InstanceOutcome& o : outcomes) o.tape->flush_gradients();
      for (const ad::Parameter* p : params)
        if (!p->grad.allFinite()) {
          failure = "non-finite gradient in " + p->name;
          break;
        }
      rec.iteration = it + 1;
      rec.phase = warm ? "warm_start" : "main";
      rec.lr = sched.lr_at(it);
      double acc_sum = 0;
      int acc_n = 0;
      for (const InstanceOutcome& o : outcomes) {
        rec.loss += o.total;
        rec.l_match += o.match;
        rec.l_def += o.def;
        rec.l_rec += o.rec;
        rec.l_off += o.off;
        rec.l_reg += o.reg;
        if (o.accuracy) {
          acc_sum += *o.accuracy;
          ++acc_n;
        }
      }
      const double inv = 1.0 / static_cast<double>(outcomes.size());
      rec.loss *= inv;
      rec.l_match *= inv;
      rec.l_def *= inv;
      rec.l_rec *= inv;
      rec.l_off *= inv;
      rec.l_reg *= inv;
      if (acc_n > 0) rec.train_accuracy = acc_sum / acc_n;
      if (!std::isfinite(rec.loss)) failure = "non-finite loss";
    }

    // Compute the update out of place so a bad step leaves the state intact.
    std::vector<std::pair<std::size_t, MomentSlot>> updates;
    std::vector<Matrix> new_values;
    if (failure.empty()) {
      const double lr = sched.lr_at(it);
      for (std::size_t i = 0; i < params.size(); ++i) {
        ad::Parameter& p = *params[i];
        if (!p.touched) continue;
        MomentSlot slot = state.moments[i];
        Matrix value;
        if (config.optimizer == OptimizerKind::Adam) {
          constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
          ++slot.steps;
          slot.m = b1 * slot.m + (1.0 - b1) * p.grad;
          slot.v = b2 * slot.v + (1.0 - b2) * p.grad.cwiseProduct(p.grad);
          const double c1 = 1.0 - std::pow(b1, static_cast<double>(slot.steps));
          const double c2 = 1.0 - std::pow(b2, static_cast<double>(slot.steps));
          value = p.value.array() - lr * (slot.m.array() / c1) / ((slot.v.array() / c2).sqrt() + eps);
        } else {
          ++slot.steps;
          value = p.value - lr * p.grad;
        }
        if (!value.allFinite()) {
          failure = "non-finite update of " + p.name;
          break;
        }
        updates.emplace_back(i, std::move(slot));
        new_values.push_back(std::move(value));
      }
    }

    if (!failure.empty()) {
      result.diverged = true;
      result.message = "training diverged at iteration " + std::to_string(it + 1) + ": " + failure;
      if (hooks.on_checkpoint) hooks.on_checkpoint(state);
      return result;
    }

    for (std::size_t u = 0; u < updates.size(); ++u) {
      const std::size_t i = updates[u].first;
      state.moments[i] = std::move(updates[u].second);
      params[i]->value = std::move(new_values[u]);
    }
    state.order = std::move(order);
    state.cursor = cursor;
    state.rng = rng;
    state.iteration = it + 1;
    ++result.iterations_run;

    const bool last = state.iteration == sched.total_iterations;
    if (config.log_every > 0 && (state.iteration % config.log_every == 0 || last)) {
      result.log.push_back(rec);
      if (hooks.on_log) hooks.on_log(rec);
    }
    if (hooks.on_checkpoint && (last || (config.checkpoint_every > 0 && state.iteration % config.checkpoint_every == 0)))
      hooks.on_checkpoint(state);
  }
  return result;
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd predict_soft(network::Model& model, const PreparedInstance& inst, const ForwardOptions& opts) {
  ad::Tape tape;
  const Tensor u = tape.constant(model.universe(inst.category).value);
  const Tensor deformed = opts.deformation ? ad::add(u, instance_offsets(tape, model, inst, u)) : u;
  return run_matcher(tape, model, inst, u, deformed, opts).x_soft.value();
}

matching::PartialPermutation predict(network::Model& model, const PreparedInstance& inst, const ForwardOptions& opts) {
  return matching::extract_matching(predict_soft(model, inst, opts)).matching;
}

Eigen::Matrix3Xd deformed_points(network::Model& model, const PreparedInstance& inst, const ForwardOptions& opts) {
  const Eigen::Matrix3Xd u = model.universe(inst.category).value;
  if (!opts.deformation) return u;
  ad::Tape tape;
  return u + instance_offsets(tape, model, inst, tape.constant(u)).value();
}

namespace {

std::vector<std::array<int, 3>> pick_triples(int n, const EvalOptions& opts) {
  std::vector<std::array<int, 3>> out;
  if (n < 3) return out;
  if (n <= opts.exhaustive_limit) {
    for (int j = 0; j < n; ++j)
      for (int k = j + 1; k < n; ++k)
        for (int l = k + 1; l < n; ++l) out.push_back({j, k, l});
    return out;
  }
  std::mt19937_64 rng(opts.seed);
  std::uniform_int_distribution<int> pick(0, n - 1);
  while (static_cast<int>(out.size()) < opts.sampled_triples) {
    const int j = pick(rng), k = pick(rng), l = pick(rng);
    if (j == k || k == l || j == l) continue;
    out.push_back({j, k, l});
  }
  return out;
}

std::optional<double> mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return std::nullopt;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

}  // namespace

EvalReport evaluate(network::Model& model, Batch instances, const EvalOptions& opts) {
  EvalReport report;
  const auto& cats = model.categories();
  for (std::size_t c = 0; c < cats.size(); ++c) {
    CategoryReport cr;
    cr.name = cats[c].name;
    std::vector<double> acc, rec_static, rec_def;
    for (const PreparedInstance& inst : instances) {
      if (inst.category != static_cast<int>(c)) continue;
      const matching::PartialPermutation pred = predict(model, inst, opts.forward);
      cr.predictions.instances.emplace_back(inst.id, pred);
      if (!inst.labels) continue;
      acc.push_back(matching::matching_accuracy(pred, matching::PartialPermutation(*inst.labels, inst.universe_size)));
      if (inst.size() < 4) continue;
      ad::Tape tape;
      const InstanceTerms t = forward_instance(tape, model, inst, {0, 1, 1, 0, 0}, opts.forward);
      rec_static.push_back(t.rec.scalar());
      rec_def.push_back(t.def.scalar());
    }
    cr.instances = static_cast<int>(cr.predictions.instances.size());
    cr.accuracy = mean_of(acc);
    cr.reconstruction_static = mean_of(rec_static);
    cr.reconstruction_deformed = mean_of(rec_def);

    const auto& preds = cr.predictions.instances;
    const int n = static_cast<int>(preds.size());
    if (n > 0 && n <= opts.exhaustive_limit)
      cr.consistent = matching::verify_cycle_consistency(matching::compose_all(cr.predictions), n).consistent;
    std::vector<double> scores;
    for (const auto& [j, k, l] : pick_triples(n, opts)) {
      try {
        scores.push_back(matching::triple_cycle_score(preds[static_cast<std::size_t>(j)].second,
                                                      preds[static_cast<std::size_t>(k)].second,
                                                      preds[static_cast<std::size_t>(l)].second));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::UndefinedScore) throw;
        ++cr.skipped_triples;
      }
    }
    cr.triples = static_cast<int>(scores.size());
    cr.cycle_score = mean_of(scores);
    report.categories.push_back(std::move(cr));
  }

  std::vector<double> acc, cyc, rs, rd;
  for (const CategoryReport& cr : report.categories) {
    if (cr.accuracy) acc.push_back(*cr.accuracy);
    if (cr.cycle_score) cyc.push_back(*cr.cycle_score);
    if (cr.reconstruction_static) rs.push_back(*cr.reconstruction_static);
    if (cr.reconstruction_deformed) rd.push_back(*cr.reconstruction_deformed);
  }
  report.accuracy = mean_of(acc);
  report.cycle_score = mean_of(cyc);
  report.reconstruction_static = mean_of(rs);
  report.reconstruction_deformed = mean_of(rd);
  return report;
}

}  // namespace unimatch::training
