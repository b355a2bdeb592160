#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "microdesign/fv_solver.hpp"
#include "microdesign/training.hpp"

using md::Mat;
namespace ad = md::ad;
namespace mg = md::microgen;
namespace nets = md::nets;
namespace train = md::train;

namespace {

// Tiny labeled dataset + matching micro-model config for gradient checks.
struct Fixture {
  mg::Dataset ds;
  train::TrainConfig cfg;

  Fixture() {
    mg::DatasetConfig dcfg;
    dcfg.n = 3;
    dcfg.k = 3;
    dcfg.seed = 11;
    dcfg.ch.steps = 4;
    ds = mg::generate_dataset(dcfg);
    md::fv::SolveConfig scfg;
    scfg.grid = 6;
    md::fv::label_dataset(ds, 6, {"property", "field"}, scfg);

    cfg.task = "property";
    cfg.seed = 21;
    cfg.model.d_beta = 3;
    cfg.model.enc_hidden = {4, 4};
    cfg.model.mu_width = 4;
    cfg.model.mu_depth = 2;
    cfg.model.u_width = 7;
    cfg.model.u_depth = 2;
    cfg.model.flow_steps = 2;
    cfg.model.flow_hidden = 3;
    cfg.pde.tf.count = 3;
    cfg.pde.tf.n_q = 6;
    cfg.pde.consistency_points = 4;
    cfg.pde.bc_points_per_edge = 2;
    cfg.model.k = ds.k;
    cfg.model.task = cfg.task;
    cfg.model.u_channels = 6;
  }
};

// flattened parameter access for finite differencing
std::vector<Mat*> all_tensors(nets::ModelParams& p) {
  std::vector<Mat*> out;
  nets::for_each_tensor(p, [&](const std::string&, Mat& m) { out.push_back(&m); });
  return out;
}

void fd_check(const Fixture& fx, const train::TrainConfig& cfg, double tol) {
  nets::ModelParams params = nets::init_model(cfg.model, 33);
  std::vector<int> idx{0, 2};
  auto be = train::eval_batch(params, fx.ds, idx, cfg, 1);

  auto tensors = all_tensors(params);
  REQUIRE(be.grads.size() == tensors.size());
  const double h = 1e-6;
  int checked = 0;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    for (Eigen::Index e = 0; e < tensors[t]->size(); ++e) {
      double& ref = (*tensors[t])(e);
      const double save = ref;
      ref = save + h;
      const double fp = train::eval_batch(params, fx.ds, idx, cfg, 1).objective;
      ref = save - h;
      const double fm = train::eval_batch(params, fx.ds, idx, cfg, 1).objective;
      ref = save;
      const double fd = (fp - fm) / (2 * h);
      const double got = be.grads[t](e);
      const double scale = std::max({1.0, std::abs(fd), std::abs(got)});
      INFO("tensor ", t, " entry ", e, ": analytic ", got, " fd ", fd);
      CHECK(std::abs(got - fd) / scale < tol);
      ++checked;
    }
  }
  CHECK(checked > 100);
}

}  // namespace

TEST_CASE("learning-rate schedule halves on the configured boundary") {
  train::TrainConfig cfg;
  cfg.lr = 5e-4;
  cfg.lr_halve_every = 200;
  CHECK(train::lr_at_epoch(cfg, 0) == 5e-4);
  CHECK(train::lr_at_epoch(cfg, 199) == 5e-4);
  CHECK(train::lr_at_epoch(cfg, 200) == 2.5e-4);
  CHECK(train::lr_at_epoch(cfg, 399) == 2.5e-4);
  CHECK(train::lr_at_epoch(cfg, 400) == 1.25e-4);  // the 401st epoch
  cfg.lr_halve_every = 0;
  CHECK(train::lr_at_epoch(cfg, 1000) == 5e-4);
}

TEST_CASE("reconstruction loss at p=1/2 equals J log(1/2) exactly") {
  const int S = 3, J = 7;
  Mat targets(S, J);
  md::Rng rng(2);
  for (int i = 0; i < targets.size(); ++i) targets(i) = rng.uniform() < 0.4 ? 1.0 : 0.0;

  ad::Graph g;
  ad::Var probs = g.constant(Mat(Mat::Constant(S, J, 0.5)));
  ad::Var l = train::loss_rec(probs, targets);
  const Mat& v = g.value(l);
  REQUIRE(v.rows() == 1);
  REQUIRE(v.cols() == S);
  // the squeeze maps 0.5 to exactly 0.5, so every pixel contributes log(0.5);
  // compare against the identical Eigen reduction for bit equality
  Mat ref = Mat::Constant(S, J, std::log(0.5)).rowwise().sum();
  for (int s = 0; s < S; ++s) {
    CHECK(v(0, s) == ref(s, 0));
    CHECK(v(0, s) == doctest::Approx(J * std::log(0.5)).epsilon(1e-14));
  }
}

TEST_CASE("reconstruction loss matches a hand computation and its gradient") {
  Mat targets(1, 2);
  targets << 1.0, 0.0;
  Mat pv(1, 2);
  pv << 0.8, 0.3;
  const double eps = 1e-7;

  ad::Graph g;
  ad::Var probs = g.param(pv);
  ad::Var l = train::loss_rec(probs, targets);
  const double expect = std::log(0.8 * (1 - 2 * eps) + eps) +
                        std::log(1 - (0.3 * (1 - 2 * eps) + eps));
  CHECK(g.value(l)(0, 0) == doctest::Approx(expect).epsilon(1e-12));

  g.backward(ad::sum(l));
  const double h = 1e-7;
  for (int j = 0; j < 2; ++j) {
    ad::Graph g2;
    Mat pp = pv, pm = pv;
    pp(0, j) += h;
    pm(0, j) -= h;
    ad::Var lp = train::loss_rec(g2.constant(pp), targets);
    ad::Var lm = train::loss_rec(g2.constant(pm), targets);
    const double fd = (g2.value(lp)(0, 0) - g2.value(lm)(0, 0)) / (2 * h);
    CHECK(g.grad(probs)(0, j) == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("prior loss under the identity flow is -|beta|^2/2") {
  nets::ModelConfig mcfg;
  mcfg.d_beta = 4;
  mcfg.flow_steps = 3;
  mcfg.flow_hidden = 3;
  auto p = nets::init_model(mcfg, 1);  // coupling nets start at identity

  Mat beta(4, 2);
  beta << 0, 1,
          0, 1,
          0, 0,
          0, 0;
  ad::Graph g;
  auto fv = nets::bind_flow(g, p.flow, 4, false, nullptr);
  ad::Var l = train::loss_kl(fv, g.constant(beta));
  CHECK(g.value(l)(0, 0) == 0.0);   // beta = 0
  CHECK(g.value(l)(0, 1) == -1.0);  // |beta|^2 = 2
}

TEST_CASE("data loss is the scaled squared error summed over channels") {
  ad::Graph g;
  Mat pred0(2, 3), pred1(2, 3), lab0(2, 3), lab1(2, 3);
  pred0 << 1, 2, 3, 4, 5, 6;
  pred1 << 0, 1, 0, 1, 0, 1;
  lab0 << 1, 1, 3, 4, 4, 6;
  lab1 << 1, 1, 0, 0, 0, 0;
  std::vector<ad::Var> preds{g.constant(pred0), g.constant(pred1)};
  ad::Var l = train::loss_data(preds, {lab0, lab1}, 0.5);
  const Mat& v = g.value(l);
  REQUIRE(v.rows() == 1);
  REQUIRE(v.cols() == 2);
  // sample 0: ch0 (0+1+0), ch1 (1+0+0) -> -(0.5/2)*2 = -0.5
  CHECK(v(0, 0) == doctest::Approx(-0.5));
  // sample 1: ch0 (0+1+0), ch1 (1+0+1) -> -(0.25)*3 = -0.75
  CHECK(v(0, 1) == doctest::Approx(-0.75));
}

TEST_CASE("batch gradients match finite differences: reconstruction + prior") {
  Fixture fx;
  auto cfg = fx.cfg;
  cfg.lambda_kl = 1.3;
  cfg.use_labeled = false;
  cfg.use_virtual = false;
  fd_check(fx, cfg, 1e-5);
}

TEST_CASE("batch gradients match finite differences: labeled data term") {
  Fixture fx;
  auto cfg = fx.cfg;
  cfg.lambda_kl = 0.7;
  cfg.lambda_data = 0.5;
  cfg.use_labeled = true;
  cfg.use_virtual = false;
  fd_check(fx, cfg, 1e-5);
}

TEST_CASE("batch gradients match finite differences: physics residual term") {
  Fixture fx;
  auto cfg = fx.cfg;
  cfg.lambda_kl = 0.0;
  cfg.use_labeled = false;
  cfg.use_virtual = true;
  cfg.lambda_pde = 0.4;
  fd_check(fx, cfg, 1e-5);
}

TEST_CASE("batch gradients match finite differences: all terms, field task") {
  Fixture fx;
  auto cfg = fx.cfg;
  cfg.task = "field";
  cfg.model.task = "field";
  cfg.model.u_channels = 1;
  cfg.lambda_kl = 2.0;
  cfg.lambda_data = 0.5;
  cfg.lambda_pde = 0.25;
  cfg.use_labeled = true;
  cfg.use_virtual = true;
  fd_check(fx, cfg, 1e-5);
}

TEST_CASE("training is deterministic and writes its artifacts") {
  namespace fs = std::filesystem;
  Fixture fx;
  auto cfg = fx.cfg;
  cfg.epochs = 3;
  cfg.batch = 2;
  cfg.checkpoint_every = 2;
  cfg.lambda_pde = 0.1;

  fs::path d1 = "scratch_train_a", d2 = "scratch_train_b";
  fs::remove_all(d1);
  fs::remove_all(d2);
  auto r1 = train::train(fx.ds, cfg, d1);
  auto r2 = train::train(fx.ds, cfg, d2);
  REQUIRE(r1.log.size() == 3);
  CHECK(md::read_bytes(d1 / "weights.f64") == md::read_bytes(d2 / "weights.f64"));
  CHECK(md::read_text(d1 / "loss_log.csv") == md::read_text(d2 / "loss_log.csv"));
  CHECK(fs::exists(d1 / "model.json"));
  CHECK(fs::exists(d1 / "snapshots/ep000002/weights.f64"));
  CHECK(!fs::exists(d1 / "snapshots/ep000003"));  // final epoch is not a snapshot

  // the loss log has a header plus one line per epoch
  auto log_text = md::read_text(d1 / "loss_log.csv");
  CHECK(std::count(log_text.begin(), log_text.end(), '\n') == 4);
  CHECK(log_text.rfind("epoch,loss_rec,loss_kl,loss_data,loss_pde,total", 0) == 0);

  // a fresh model loaded from the checkpoint reproduces the training state
  auto loaded = nets::load_model(d1);
  std::vector<Mat*> a = all_tensors(r1.params), b = all_tensors(loaded.params);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK((*a[i] - *b[i]).cwiseAbs().maxCoeff() == 0.0);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("training requires labels unless the data term is disabled") {
  Fixture fx;
  mg::Dataset bare = fx.ds;
  bare.tasks.clear();
  bare.fields_property.clear();
  bare.fields_field.clear();
  bare.kappa.clear();
  auto cfg = fx.cfg;
  cfg.epochs = 1;
  CHECK_THROWS_WITH_AS(train::train(bare, cfg, ""),
                       doctest::Contains("unlabeled-only"), std::invalid_argument);
  cfg.use_labeled = false;
  cfg.use_virtual = false;
  CHECK_NOTHROW(train::train(bare, cfg, ""));
}
