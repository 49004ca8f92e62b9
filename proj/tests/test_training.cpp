#include "oracles.hpp"

#include "unimatch/dataset.hpp"
#include "unimatch/errors.hpp"
#include "unimatch/training.hpp"

#include <doctest.h>

#include <random>

using namespace unimatch;
using namespace unimatch::training;
using ad::Matrix;
using ad::Tape;

namespace {

network::NetworkConfig small_net() {
  network::NetworkConfig c;
  c.encoder_widths = {8, 8};
  c.point_widths = {8};
  c.offset_widths = {8};
  c.latent = 6;
  c.rounds = 2;
  return c;
}

data::SyntheticDataset small_data(int d, int instances, double deformation, double noise, double occlusion,
                                  std::uint64_t seed) {
  data::SyntheticConfig c;
  c.universe_sizes = {d};
  c.instances = instances;
  c.deformation = deformation;
  c.noise = noise;
  c.occlusion = occlusion;
  c.seed = seed;
  return data::generate_synthetic(c);
}

std::vector<PreparedInstance> prepared(const data::SyntheticDataset& ds, const network::Model& model,
                                       data::Split split = data::Split::Train) {
  return prepare_split(ds.manifest, split, model, true);
}

// Random weights everywhere, including the zero-initialized offset head.
void randomize(network::Model& model, std::uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (ad::Parameter& p : model.params()) {
    if (p.name.rfind("universe/", 0) == 0) continue;
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value(i) += u(rng);
  }
}

PreparedInstance hand_instance(const Eigen::Matrix2Xd& pts, std::vector<int> labels, int d) {
  PreparedInstance p;
  p.id = "hand";
  p.universe_size = d;
  p.keypoints = pts;
  p.graph.nodes = pts;
  p.graph.edges = graph::delaunay_2d(pts);
  p.edge_attributes = p.graph.edge_attributes();
  p.labels = std::move(labels);
  return p;
}

}  // namespace

TEST_CASE("loss weights and schedule defaults") {
  const LossWeights warm = LossWeights::warm_start();
  CHECK(warm.rec == 1.0);
  CHECK(warm.match + warm.deform + warm.off + warm.reg == 0.0);
  const LossWeights main = LossWeights::main_phase();
  CHECK(main.rec == 0.0);
  CHECK(main.match == 1.0);
  CHECK(main.deform == 0.5);
  CHECK(main.off == 0.05);
  CHECK(main.reg == 0.1);

  const Schedule s;
  CHECK(s.warm_start_iterations == 4000);
  CHECK(s.total_iterations == 150000);
  CHECK(s.batch_size == 16);
  CHECK(s.initial_lr == 0.008);
  CHECK(s.decay_factor == 0.98);
  CHECK(s.decay_every == 3000);
  CHECK_NOTHROW(s.validate());
  CHECK(s.lr_at(0) == 0.008);
  CHECK(s.lr_at(2999) == 0.008);
  CHECK(s.lr_at(3000) == 0.008 * 0.98);
  CHECK(s.lr_at(9000) == 0.008 * std::pow(0.98, 3.0));

  Schedule bad = s;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = s;
  bad.warm_start_iterations = bad.total_iterations;
  CHECK_THROWS_AS(bad.validate(), Error);
  LossWeights neg;
  neg.off = -1.0;
  CHECK_THROWS_AS(neg.validate(), Error);
}

TEST_CASE("sum operator") {
  const Eigen::MatrixXd b = build_sum_operator(2, 2);
  CHECK(b.rows() == 4);
  CHECK(b.cols() == 4);
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(2, 2);
  const Eigen::VectorXd vec_id = Eigen::Map<const Eigen::VectorXd>(id.data(), 4);
  CHECK(b * vec_id == Eigen::VectorXd::Ones(4));
  CHECK((b * Eigen::VectorXd::Zero(4)).isZero(0.0));
  const Eigen::MatrixXd big = build_sum_operator(3, 5);
  for (Eigen::Index c = 0; c < big.cols(); ++c) CHECK(big.col(c).sum() == 2.0);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd x(3, 5);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = u(rng);
  const Eigen::VectorXd sums = big * Eigen::Map<const Eigen::VectorXd>(x.data(), 15);
  CHECK((sums.head(3) - x.rowwise().sum()).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((sums.tail(5) - x.colwise().sum().transpose()).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("matching and regularizer terms") {
  Tape t;
  const Eigen::MatrixXd gt = Eigen::MatrixXd::Identity(2, 2);
  CHECK(match_term(t.constant(gt), gt).scalar() == 0.0);
  const ad::Tensor half = t.constant(Eigen::MatrixXd::Constant(2, 2, 0.5));
  CHECK(match_term(half, gt).scalar() == 1.0);
  CHECK(match_term(half, gt).scalar() / 4.0 == 0.25);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd x(3, 4), g = Eigen::MatrixXd::Zero(3, 4);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = u(rng);
  g(0, 2) = g(1, 0) = g(2, 3) = 1.0;
  Eigen::MatrixXd xp = x, gp = g;
  xp.row(0).swap(xp.row(2));
  gp.row(0).swap(gp.row(2));
  CHECK(match_term(t.constant(x), g).scalar() == doctest::Approx(match_term(t.constant(xp), gp).scalar()));

  CHECK(reg_term(t.constant(gt), gt).scalar() == 0.0);
  // Both keypoints on universe point 0: rows agree, columns are off by +1 and -1.
  Eigen::MatrixXd both(2, 2);
  both << 0.9, 0.1, 0.8, 0.2;
  CHECK(reg_term_hard(both, gt) == 2.0);
  Eigen::MatrixXd hard(2, 2);
  hard << 1, 0, 1, 0;
  CHECK(reg_term(t.constant(hard), gt).scalar() == 2.0);

  // Moving mass within a row and column cycle keeps every sum.
  Eigen::MatrixXd shifted = x;
  shifted(0, 0) += 0.1;
  shifted(0, 1) -= 0.1;
  shifted(1, 0) -= 0.1;
  shifted(1, 1) += 0.1;
  CHECK(reg_term(t.constant(shifted), g).scalar() == doctest::Approx(reg_term(t.constant(x), g).scalar()).epsilon(1e-12));
}

TEST_CASE("reconstruction losses") {
  network::Model model({{"cat0", 6}}, small_net(), 3);
  const Eigen::Matrix3Xd u = model.universe(0).value;

  SUBCASE("exact projection gives zero") {
    geometry::UniversePoints up;
    up.u = u;
    const auto v = geometry::project(up, geometry::sample_weak_perspective_camera(4));
    std::vector<PreparedInstance> batch{hand_instance(v.v, {0, 1, 2, 3, 4, 5}, 6)};
    Tape t;
    CHECK(loss_rec(t, model, batch).scalar() <= 1e-10);
  }

  SUBCASE("equals per-instance least squares and is a batch mean") {
    const auto ds = small_data(6, 12, 0.1, 0.01, 0.2, 8);
    const auto batch = prepared(ds, model);
    double expected = 0.0;
    for (const PreparedInstance& p : batch) {
      Eigen::MatrixXd uh(4, p.size()), vh(3, p.size());
      for (int i = 0; i < p.size(); ++i) {
        uh.col(i) << u.col((*p.labels)[static_cast<std::size_t>(i)]), 1.0;
        vh.col(i) << p.keypoints.col(i), 1.0;
      }
      expected += oracle::least_squares_residual(uh, vh);
    }
    expected /= static_cast<double>(batch.size());
    Tape t;
    const double got = loss_rec(t, model, batch).scalar();
    CHECK(std::abs(got - expected) <= 1e-9);

    std::vector<PreparedInstance> doubled = batch;
    doubled.insert(doubled.end(), batch.begin(), batch.end());
    Tape t2;
    CHECK(loss_rec(t2, model, doubled).scalar() == doctest::Approx(got).epsilon(1e-13));

    Tape t3;
    CHECK(loss_def(t3, model, batch).scalar() == got);
    ForwardOptions off;
    off.deformation = false;
    Tape t4;
    CHECK(loss_def(t4, model, batch, off).scalar() == got);
  }
}

TEST_CASE("offset penalty") {
  network::Model model({{"cat0", 5}}, small_net(), 4);
  const auto ds = small_data(5, 6, 0.1, 0.0, 0.0, 2);
  const auto batch = prepared(ds, model);
  Tape t;
  CHECK(loss_off(t, model, batch).scalar() == 0.0);

  // Only the output bias is non-zero: every offset column is (2, 0, 0).
  network::Linear& last = model.deformation().offset_head.layers.back();
  last.bias->value << 2.0, 0.0, 0.0;
  Tape t1;
  CHECK(loss_off(t1, model, std::span(batch).first(1)).scalar() == 4.0 * 5);

  randomize(model, 9);
  Tape t2;
  const double base = loss_off(t2, model, batch).scalar();
  last.weight->value *= 3.0;
  last.bias->value *= 3.0;
  Tape t3;
  CHECK(loss_off(t3, model, batch).scalar() == doctest::Approx(9.0 * base).epsilon(1e-12));

  Tape t4;
  const InstanceTerms terms = forward_instance(t4, model, batch[0], {0, 0, 0, 1, 0});
  CHECK(terms.off.scalar() == terms.offsets.value().squaredNorm());
}

TEST_CASE("total loss") {
  network::Model model({{"cat0", 6}}, small_net(), 5);
  randomize(model, 6);
  const auto ds = small_data(6, 6, 0.1, 0.01, 0.0, 3);
  const auto batch = prepared(ds, model);

  Tape a, b, c;
  CHECK(total_loss(a, model, batch, LossWeights::warm_start()).scalar() == loss_rec(b, model, batch).scalar());
  CHECK(total_loss(c, model, batch, LossWeights{}).scalar() == 0.0);

  const LossWeights w = LossWeights::main_phase();
  Tape t;
  const double total = total_loss(t, model, batch, w).scalar();
  Tape t1, t2, t3, t4;
  const double parts = w.match * loss_match(t1, model, batch).scalar() + w.deform * loss_def(t2, model, batch).scalar() +
                       w.off * loss_off(t3, model, batch).scalar() + w.reg * loss_reg(t4, model, batch).scalar();
  CHECK(total == doctest::Approx(parts).epsilon(1e-12));
}

TEST_CASE("warm start reaches only the universe points") {
  network::Model model({{"cat0", 6}}, small_net(), 7);
  randomize(model, 8);
  const auto ds = small_data(6, 6, 0.1, 0.01, 0.0, 4);
  const auto batch = prepared(ds, model);
  model.params().zero_grad();
  Tape t;
  t.backward(total_loss(t, model, batch, LossWeights::warm_start()));
  t.flush_gradients();
  for (const ad::Parameter& p : model.params()) {
    if (p.name == "universe/cat0") {
      CHECK(p.grad.cwiseAbs().maxCoeff() > 0.0);
      CHECK(p.touched);
    } else {
      CHECK(p.grad.cwiseAbs().maxCoeff() == 0.0);
      CHECK_FALSE(p.touched);
    }
  }
}

TEST_CASE("full loss gradient on a two-instance batch") {
  network::Model model({{"cat0", 5}}, small_net(), 11);
  randomize(model, 12);
  const auto ds = small_data(5, 8, 0.1, 0.01, 0.2, 6);
  auto all = prepared(ds, model);
  std::vector<PreparedInstance> batch;
  for (const PreparedInstance& p : all)
    if (p.size() == 4 && batch.size() < 2) batch.push_back(p);
  REQUIRE(batch.size() == 2);
  LossWeights w = LossWeights::main_phase();
  w.rec = 1.0;
  std::vector<ad::Parameter*> ps;
  for (ad::Parameter& p : model.params()) ps.push_back(&p);
  const double err = ad::gradient_check([&](Tape& t) { return total_loss(t, model, batch, w); }, ps);
  CHECK(err <= 1e-4);
}

TEST_CASE("training loop") {
  const auto ds = small_data(6, 20, 0.1, 0.01, 0.1, 10);
  TrainConfig cfg;
  cfg.schedule = {5, 12, 3, 0.01, 0.5, 4};
  cfg.log_every = 1;

  SUBCASE("zero iterations leave the state unchanged") {
    TrainState s = init_state({{"cat0", 6}}, small_net(), 1);
    const auto train_set = prepared(ds, *s.model);
    const std::vector<Matrix> before = [&] {
      std::vector<Matrix> v;
      for (const ad::Parameter& p : s.model->params()) v.push_back(p.value);
      return v;
    }();
    TrainConfig zero = cfg;
    zero.schedule.warm_start_iterations = 0;
    zero.schedule.total_iterations = 0;
    const TrainResult r = train(s, train_set, zero);
    CHECK(r.iterations_run == 0);
    CHECK(s.iteration == 0);
    std::size_t i = 0;
    for (const ad::Parameter& p : s.model->params()) CHECK(p.value == before[i++]);
  }

  SUBCASE("identical seeds give identical logs and weights") {
    TrainState a = init_state({{"cat0", 6}}, small_net(), 2);
    TrainState b = init_state({{"cat0", 6}}, small_net(), 2);
    const auto set_a = prepared(ds, *a.model);
    const auto set_b = prepared(ds, *b.model);
    const TrainResult ra = train(a, set_a, cfg);
    const TrainResult rb = train(b, set_b, cfg);
    REQUIRE(ra.log.size() == 12);
    REQUIRE(rb.log.size() == 12);
    for (std::size_t i = 0; i < ra.log.size(); ++i) CHECK(to_json_line(ra.log[i]) == to_json_line(rb.log[i]));
    auto pb = b.model->params().begin();
    for (const ad::Parameter& p : a.model->params()) CHECK(p.value == (pb++)->value);
    CHECK(ra.log[4].phase == "warm_start");
    CHECK(ra.log[5].phase == "main");
    CHECK_FALSE(ra.log[4].train_accuracy.has_value());
    CHECK(ra.log[5].train_accuracy.has_value());
    CHECK(ra.log[3].lr == 0.01);
    CHECK(ra.log[4].lr == 0.005);
    CHECK(ra.log[11].lr == 0.0025);
  }

  SUBCASE("threads do not change the result") {
    TrainState a = init_state({{"cat0", 6}}, small_net(), 3);
    TrainState b = init_state({{"cat0", 6}}, small_net(), 3);
    const auto set_a = prepared(ds, *a.model);
    const auto set_b = prepared(ds, *b.model);
    TrainConfig threaded = cfg;
    threaded.threads = 3;
    train(a, set_a, cfg);
    train(b, set_b, threaded);
    auto pb = b.model->params().begin();
    for (const ad::Parameter& p : a.model->params()) CHECK(p.value == (pb++)->value);
  }

  SUBCASE("warm start moves only the universe points") {
    TrainState s = init_state({{"cat0", 6}}, small_net(), 4);
    const auto train_set = prepared(ds, *s.model);
    std::vector<Matrix> before, after_warm;
    for (const ad::Parameter& p : s.model->params()) before.push_back(p.value);
    TrainHooks hooks;
    hooks.on_log = [&](const MetricsRecord& r) {
      if (r.iteration != cfg.schedule.warm_start_iterations) return;
      for (const ad::Parameter& p : s.model->params()) after_warm.push_back(p.value);
    };
    train(s, train_set, cfg, hooks);
    REQUIRE(after_warm.size() == before.size());
    std::size_t i = 0;
    for (const ad::Parameter& p : s.model->params()) {
      if (p.name == "universe/cat0")
        CHECK(after_warm[i] != before[i]);
      else
        CHECK(after_warm[i] == before[i]);
      ++i;
    }
  }

  SUBCASE("sgd") {
    TrainState s = init_state({{"cat0", 6}}, small_net(), 5);
    const auto train_set = prepared(ds, *s.model);
    TrainConfig sgd = cfg;
    sgd.optimizer = OptimizerKind::Sgd;
    const TrainResult r = train(s, train_set, sgd);
    CHECK(r.iterations_run == 12);
    CHECK_FALSE(r.diverged);
  }

  SUBCASE("divergence keeps the last good state") {
    TrainState s = init_state({{"cat0", 6}}, small_net(), 6);
    const auto train_set = prepared(ds, *s.model);
    TrainConfig wild = cfg;
    wild.optimizer = OptimizerKind::Sgd;
    wild.schedule.initial_lr = 1e200;
    int checkpoints = 0;
    TrainHooks hooks;
    hooks.on_checkpoint = [&](const TrainState&) { ++checkpoints; };
    const TrainResult r = train(s, train_set, wild, hooks);
    CHECK(r.diverged);
    CHECK(r.message.find("iteration " + std::to_string(s.iteration + 1)) != std::string::npos);
    CHECK(checkpoints == 1);
    for (const ad::Parameter& p : s.model->params()) CHECK(p.value.allFinite());
  }
}

TEST_CASE("evaluation") {
  const auto ds = small_data(6, 15, 0.1, 0.01, 0.2, 12);
  network::Model model({{"cat0", 6}}, small_net(), 13);
  randomize(model, 14);
  const auto test = prepare_split(ds.manifest, data::Split::Test, model, false);
  REQUIRE(test.size() == 3);

  const EvalReport r = evaluate(model, test);
  REQUIRE(r.categories.size() == 1);
  const CategoryReport& c = r.categories[0];
  CHECK(c.instances == 3);
  CHECK(c.triples + c.skipped_triples == 1);
  CHECK(c.consistent);
  if (c.cycle_score) CHECK(*c.cycle_score == 100.0);
  REQUIRE(c.accuracy.has_value());
  double acc = 0.0;
  for (const PreparedInstance& p : test)
    acc += matching::matching_accuracy(predict(model, p), matching::PartialPermutation(*p.labels, 6));
  CHECK(*c.accuracy == doctest::Approx(acc / 3.0).epsilon(1e-12));
  CHECK(c.reconstruction_static.has_value());
  CHECK(c.reconstruction_deformed.has_value());

  // Above the exhaustive limit a fixed number of triples is sampled.
  std::vector<PreparedInstance> all = prepared(ds, model);
  EvalOptions many;
  many.exhaustive_limit = 5;
  many.sampled_triples = 50;
  const EvalReport big = evaluate(model, all, many);
  CHECK(big.categories[0].triples + big.categories[0].skipped_triples == 50);
  CHECK(*big.cycle_score == 100.0);
}
