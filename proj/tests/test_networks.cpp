#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "microdesign/networks.hpp"

using md::Mat;
using md::Vec;
namespace ad = md::ad;
namespace nets = md::nets;

namespace {

nets::ModelConfig tiny_config() {
  nets::ModelConfig cfg;
  cfg.k = 8;
  cfg.d_beta = 5;  // odd: exercises the uneven coupling split
  cfg.enc_hidden = {12, 7};
  cfg.mu_width = 10;
  cfg.mu_depth = 3;
  cfg.u_width = 9;
  cfg.u_depth = 3;
  cfg.u_channels = 6;
  cfg.flow_steps = 3;
  cfg.flow_hidden = 6;
  return cfg;
}

}  // namespace

TEST_CASE("init is deterministic, seeded, and inventory-complete") {
  auto cfg = tiny_config();
  auto p1 = nets::init_model(cfg, 1);
  auto p2 = nets::init_model(cfg, 1);
  auto p3 = nets::init_model(cfg, 2);

  std::vector<std::string> names;
  double same = 0, diff = 0;
  nets::for_each_tensor(p1, [&](const std::string& n, const Mat&) {
    names.push_back(n);
  });
  CHECK(names.size() == nets::tensor_count(p1));
  CHECK(std::set<std::string>(names.begin(), names.end()).size() == names.size());

  // identical seeds agree, different seeds do not (on at least one tensor)
  std::vector<const Mat*> t1, t2, t3;
  nets::for_each_tensor(p1, [&](const std::string&, const Mat& m) { t1.push_back(&m); });
  nets::for_each_tensor(p2, [&](const std::string&, const Mat& m) { t2.push_back(&m); });
  nets::for_each_tensor(p3, [&](const std::string&, const Mat& m) { t3.push_back(&m); });
  for (std::size_t k = 0; k < t1.size(); ++k) {
    same += (*t1[k] - *t2[k]).cwiseAbs().sum();
    diff += (*t1[k] - *t3[k]).cwiseAbs().sum();
  }
  CHECK(same == 0.0);
  CHECK(diff > 0.0);

  // encoder widths follow the config; head covers k*k inputs
  CHECK(p1.encoder.layers.front().W.cols() == cfg.k * cfg.k);
  CHECK(p1.encoder.layers.back().W.rows() == cfg.d_beta);
  CHECK(p1.dec_mu.w.rows() == cfg.mu_depth);
  CHECK(p1.dec_mu.w.cols() == 1);
  CHECK(p1.dec_u.w.cols() == cfg.u_channels);
  CHECK(int(p1.flow.steps.size()) == cfg.flow_steps);
}

TEST_CASE("coupling nets start as the identity flow") {
  auto p = nets::init_model(tiny_config(), 3);
  md::Rng rng(4);
  Mat beta(5, 4);
  for (int i = 0; i < beta.size(); ++i) beta(i) = rng.normal();

  ad::Graph g;
  auto fv = nets::bind_flow(g, p.flow, 5, false, nullptr);
  auto fwd = nets::flow_forward(fv, g.constant(beta));
  CHECK(g.value(fwd.z).isApprox(beta, 1e-14));
  CHECK(g.value(fwd.logdet).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  namespace fs = std::filesystem;
  auto cfg = tiny_config();
  auto p = nets::init_model(cfg, 9);
  fs::path dir = "scratch_networks_ckpt";
  fs::remove_all(dir);
  nets::save_model(p, 9, dir);
  auto back = nets::load_model(dir);
  CHECK(back.seed == 9);
  CHECK(back.params.cfg.d_beta == cfg.d_beta);
  CHECK(back.params.cfg.task == cfg.task);

  std::vector<const Mat*> a, b;
  nets::for_each_tensor(p, [&](const std::string&, const Mat& m) { a.push_back(&m); });
  nets::for_each_tensor(back.params,
                        [&](const std::string&, const Mat& m) { b.push_back(&m); });
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i]->rows() == b[i]->rows());
    REQUIRE(a[i]->cols() == b[i]->cols());
    CHECK((*a[i] - *b[i]).cwiseAbs().maxCoeff() == 0.0);
  }
  // corrupting the weights file is caught
  auto raw = md::read_bytes(dir / "weights.f64");
  raw.resize(raw.size() - 8);
  md::write_bytes(dir / "weights.f64", raw.data(), raw.size());
  CHECK_THROWS(nets::load_model(dir));
  fs::remove_all(dir);
}

TEST_CASE("encoder output lies in (-1,1) with the configured dimension") {
  auto cfg = tiny_config();
  auto p = nets::init_model(cfg, 5);
  md::Rng rng(6);
  Mat x(cfg.k * cfg.k, 3);
  for (int i = 0; i < x.size(); ++i) x(i) = rng.uniform();

  ad::Graph g;
  auto mv = nets::bind_model(g, p, false);
  ad::Var beta = nets::encode(mv.enc, g.constant(x));
  const Mat& b = g.value(beta);
  REQUIRE(b.rows() == cfg.d_beta);
  REQUIRE(b.cols() == 3);
  CHECK(b.cwiseAbs().maxCoeff() < 1.0);
}

TEST_CASE("multionet chunking covers all branch features exactly once") {
  auto cfg = tiny_config();
  auto p = nets::init_model(cfg, 8);
  md::Rng rng(3);
  Mat beta(cfg.d_beta, 2);
  for (int i = 0; i < beta.size(); ++i) beta(i) = rng.normal();
  Mat pts(2, 7);
  for (int i = 0; i < pts.size(); ++i) pts(i) = rng.uniform();

  ad::Graph g;
  auto mv = nets::bind_model(g, p, false);
  auto ev = nets::multionet_branch(g, mv.u, g.constant(beta));
  auto chans = ev.eval(pts);
  REQUIRE(int(chans.size()) == cfg.u_channels);
  for (auto& c : chans) {
    REQUIRE(g.value(c).rows() == 2);
    REQUIRE(g.value(c).cols() == 7);
    CHECK(g.value(c).allFinite());
  }
  // prediction changes when beta changes (branch really feeds the output)
  Mat beta2 = beta;
  beta2(0, 0) += 0.5;
  ad::Graph g2;
  auto mv2 = nets::bind_model(g2, p, false);
  auto ev2 = nets::multionet_branch(g2, mv2.u, g2.constant(beta2));
  auto chans2 = ev2.eval(pts);
  CHECK((g.value(chans[0]) - g2.value(chans2[0])).cwiseAbs().maxCoeff() > 1e-12);
}

TEST_CASE("micro decoder probabilities stay in the open unit interval") {
  auto cfg = tiny_config();
  auto p = nets::init_model(cfg, 10);
  md::Rng rng(11);
  Mat beta(cfg.d_beta, 2);
  for (int i = 0; i < beta.size(); ++i) beta(i) = rng.normal();
  ad::Graph g;
  auto mv = nets::bind_model(g, p, false);
  ad::Var probs = nets::decode_micro_probs(g, mv.mu, g.constant(beta), cfg.k);
  const Mat& pr = g.value(probs);
  REQUIRE(pr.rows() == 2);
  REQUIRE(pr.cols() == cfg.k * cfg.k);
  CHECK(pr.minCoeff() > 0.0);
  CHECK(pr.maxCoeff() < 1.0);
}

TEST_CASE("pixel centers follow row-major (y,x) layout") {
  Mat c = nets::pixel_centers(4);
  REQUIRE(c.rows() == 2);
  REQUIRE(c.cols() == 16);
  // first pixel: row 0, col 0 -> (x, y) = (0.125, 0.125)
  CHECK(c(0, 0) == doctest::Approx(0.125));
  CHECK(c(1, 0) == doctest::Approx(0.125));
  // second entry moves along x (column index)
  CHECK(c(0, 1) == doctest::Approx(0.375));
  CHECK(c(1, 1) == doctest::Approx(0.125));
  // row stride moves along y
  CHECK(c(0, 4) == doctest::Approx(0.125));
  CHECK(c(1, 4) == doctest::Approx(0.375));
}

TEST_CASE("flow forward/inverse round-trips after perturbing the nets") {
  auto cfg = tiny_config();
  auto p = nets::init_model(cfg, 12);
  // make the flow non-trivial
  md::Rng rng(13);
  for (auto& step : p.flow.steps) {
    for (auto& d : step.s) {
      for (int i = 0; i < d.W.size(); ++i) d.W(i) += 0.3 * rng.normal();
      for (int i = 0; i < d.b.size(); ++i) d.b(i) += 0.1 * rng.normal();
    }
    for (auto& d : step.t) {
      for (int i = 0; i < d.W.size(); ++i) d.W(i) += 0.3 * rng.normal();
      for (int i = 0; i < d.b.size(); ++i) d.b(i) += 0.1 * rng.normal();
    }
  }
  Mat beta(cfg.d_beta, 6);
  for (int i = 0; i < beta.size(); ++i) beta(i) = rng.normal();

  ad::Graph g;
  auto fv = nets::bind_flow(g, p.flow, cfg.d_beta, false, nullptr);
  auto fwd = nets::flow_forward(fv, g.constant(beta));
  Mat z = g.value(fwd.z);
  CHECK((z - beta).cwiseAbs().maxCoeff() > 1e-3);  // actually transformed
  Mat back = nets::flow_inverse(p.flow, z);
  CHECK((back - beta).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("flow log-determinant matches the numerical jacobian") {
  auto cfg = tiny_config();
  cfg.d_beta = 4;
  auto p = nets::init_model(cfg, 14);
  md::Rng rng(15);
  for (auto& step : p.flow.steps) {
    for (auto& d : step.s)
      for (int i = 0; i < d.W.size(); ++i) d.W(i) += 0.4 * rng.normal();
    for (auto& d : step.t)
      for (int i = 0; i < d.W.size(); ++i) d.W(i) += 0.4 * rng.normal();
  }
  Mat beta(4, 1);
  for (int i = 0; i < 4; ++i) beta(i) = rng.normal();

  auto fwd_at = [&](const Mat& b) {
    ad::Graph g;
    auto fv = nets::bind_flow(g, p.flow, 4, false, nullptr);
    return g.value(nets::flow_forward(fv, g.constant(b)).z);
  };
  const double h = 1e-6;
  Mat J(4, 4);
  for (int j = 0; j < 4; ++j) {
    Mat bp = beta, bm = beta;
    bp(j) += h;
    bm(j) -= h;
    J.col(j) = (fwd_at(bp) - fwd_at(bm)) / (2 * h);
  }
  const double logdet_num = std::log(std::abs(J.determinant()));

  ad::Graph g;
  auto fv = nets::bind_flow(g, p.flow, 4, false, nullptr);
  auto fwd = nets::flow_forward(fv, g.constant(beta));
  CHECK(std::abs(g.value(fwd.logdet)(0, 0) - logdet_num) < 1e-6);
}

TEST_CASE("flow prior density integrates to one in two dimensions") {
  auto cfg = tiny_config();
  cfg.d_beta = 2;
  cfg.flow_steps = 2;
  auto p = nets::init_model(cfg, 16);
  md::Rng rng(17);
  for (auto& step : p.flow.steps) {
    for (auto& d : step.s)
      for (int i = 0; i < d.W.size(); ++i) d.W(i) += 0.3 * rng.normal();
    for (auto& d : step.t)
      for (int i = 0; i < d.W.size(); ++i) d.W(i) += 0.3 * rng.normal();
  }
  // trapezoid-free midpoint grid over a generous box
  const int n = 160;
  const double lo = -8, hi = 8, dx = (hi - lo) / n;
  // evaluate density in batches of one grid row
  double integral = 0;
  for (int i = 0; i < n; ++i) {
    Mat pts(2, n);
    for (int j = 0; j < n; ++j) {
      pts(0, j) = lo + (j + 0.5) * dx;
      pts(1, j) = lo + (i + 0.5) * dx;
    }
    ad::Graph g;
    auto fv = nets::bind_flow(g, p.flow, 2, false, nullptr);
    ad::Var ld = nets::prior_logdensity(fv, g.constant(pts));
    const Mat& v = g.value(ld);
    for (int j = 0; j < n; ++j) integral += std::exp(v(0, j)) * dx * dx;
  }
  CHECK(std::abs(integral - 1.0) < 1e-4);
}
