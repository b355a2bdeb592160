#include "microdesign/residuals.hpp"

namespace md::residuals {

using ad::Var;

std::vector<TestFunction> make_test_functions(const TestFunctionConfig& cfg,
                                              std::uint64_t seed, std::uint64_t epoch,
                                              std::uint64_t sample) {
  if (cfg.count <= 0) throw std::invalid_argument("test functions: count must be positive");
  if (!(cfg.r_min > 0) || cfg.r_min > cfg.r_max)
    throw std::invalid_argument("test functions: need 0 < r_min <= r_max");
  if (cfg.r_max > 0.5)
    throw std::invalid_argument("test functions: r_max > 0.5 leaves no admissible centers");
  Rng rng(derive_seed(seed, epoch, sample));
  std::vector<TestFunction> tfs(cfg.count);
  for (auto& tf : tfs) {
    tf.R = rng.uniform(cfg.r_min, cfg.r_max);
    tf.cx = rng.uniform(tf.R, 1.0 - tf.R);
    tf.cy = rng.uniform(tf.R, 1.0 - tf.R);
  }
  return tfs;
}

void wendland_eval(const TestFunction& w, const Mat& points, Vec* val, Mat* grad) {
  const int N = int(points.cols());
  if (val) val->setZero(N);
  if (grad) grad->setZero(2, N);
  for (int i = 0; i < N; ++i) {
    double dx = points(0, i) - w.cx, dy = points(1, i) - w.cy;
    double r = std::sqrt(dx * dx + dy * dy) / w.R;
    if (r >= 1.0) continue;
    double om = 1.0 - r;
    if (val) (*val)[i] = om * om * om * om * (4.0 * r + 1.0);
    if (grad) {
      // dW/dr = -20 r (1-r)^3, so grad = -20 (1-r)^3 (x-c) / R^2
      double gscale = -20.0 * om * om * om / (w.R * w.R);
      (*grad)(0, i) = gscale * dx;
      (*grad)(1, i) = gscale * dy;
    }
  }
}

void gauss_legendre(int n, Vec& x, Vec& w) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: n must be >= 1");
  x.resize(n);
  w.resize(n);
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int iter = 0;; ++iter) {
      double p1 = 1.0, p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j + 1.0) * z * p2 - j * p3) / (j + 1.0);
      }
      pp = n * (z * p1 - p2) / (z * z - 1.0);
      double dz = p1 / pp;
      z -= dz;
      if (std::abs(dz) < 1e-15 || iter > 100) break;
    }
    x[i] = -z;
    x[n - 1 - i] = z;
    w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
    w[n - 1 - i] = w[i];
  }
  if (n % 2 == 1) x[n / 2] = 0.0;
}

Quadrature make_quadrature(const TestFunction& tf, int n_q) {
  Vec t, gw;
  gauss_legendre(n_q, t, gw);
  std::vector<double> px, py, pw, pv, gx, gy;
  for (int a = 0; a < n_q; ++a) {
    for (int b = 0; b < n_q; ++b) {
      double r = std::sqrt(t[a] * t[a] + t[b] * t[b]);
      if (r >= 1.0) continue;  // weight identically zero outside the ball
      double om = 1.0 - r;
      px.push_back(tf.cx + t[a] * tf.R);
      py.push_back(tf.cy + t[b] * tf.R);
      pw.push_back(gw[a] * gw[b] * tf.R * tf.R);
      pv.push_back(om * om * om * om * (4.0 * r + 1.0));
      double gscale = -20.0 * om * om * om / tf.R;
      gx.push_back(gscale * t[a]);
      gy.push_back(gscale * t[b]);
    }
  }
  Quadrature q;
  const int Q = int(px.size());
  q.points.resize(2, Q);
  q.wq.resize(Q);
  q.w_val.resize(Q);
  q.w_grad.resize(2, Q);
  for (int i = 0; i < Q; ++i) {
    q.points(0, i) = px[i];
    q.points(1, i) = py[i];
    q.wq[i] = pw[i];
    q.w_val[i] = pv[i];
    q.w_grad(0, i) = gx[i];
    q.w_grad(1, i) = gy[i];
  }
  return q;
}

ScalarField phase_multiplier(const microgen::Microstructure& m, double kappa1,
                             double kappa2) {
  m.validate();
  const int K = m.k;
  std::vector<std::uint8_t> phase = m.phase;
  return [K, phase = std::move(phase), kappa1, kappa2](double x, double y) {
    int j = std::min(int(x * K), K - 1);
    int i = std::min(int(y * K), K - 1);
    return phase[std::size_t(i) * K + j] ? kappa1 : kappa2;
  };
}

WeakWorkspace make_weak_workspace(const std::vector<TestFunction>& tfs, int n_q,
                                  const ScalarField& mult, const ScalarField& source) {
  const int M = int(tfs.size());
  std::vector<Quadrature> quads;
  quads.reserve(M);
  int Q = 0;
  for (const auto& tf : tfs) {
    quads.push_back(make_quadrature(tf, n_q));
    Q += int(quads.back().wq.size());
  }
  WeakWorkspace ws;
  ws.tfs = tfs;
  ws.points.resize(2, Q);
  ws.Cx = Mat::Zero(Q, M);
  ws.Cy = Mat::Zero(Q, M);
  ws.source = Vec::Zero(M);
  int q0 = 0;
  for (int m = 0; m < M; ++m) {
    const Quadrature& q = quads[m];
    const int Qm = int(q.wq.size());
    for (int i = 0; i < Qm; ++i) {
      double x = q.points(0, i), y = q.points(1, i);
      double mu = mult ? mult(x, y) : 1.0;
      ws.points.col(q0 + i) = q.points.col(i);
      ws.Cx(q0 + i, m) = q.wq[i] * mu * q.w_grad(0, i);
      ws.Cy(q0 + i, m) = q.wq[i] * mu * q.w_grad(1, i);
      if (source) ws.source[m] += q.wq[i] * source(x, y) * q.w_val[i];
    }
    q0 += Qm;
  }
  return ws;
}

namespace {

Var sumsq(Var v) { return ad::sum(ad::square(v)); }

Var combine_residuals(Var gx, Var gy, const WeakWorkspace& ws) {
  ad::Graph& g = *gx.g;
  Var cx = g.constant(ws.Cx);
  Var cy = g.constant(ws.Cy);
  Var r = ad::add(ad::matmul(gx, cx), ad::matmul(gy, cy));
  Mat src = ws.source.transpose();
  return ad::sub(r, g.constant(src));
}

}  // namespace

Var weak_residuals_grad(const ad::FieldFn& u, const WeakWorkspace& ws, double h_spatial) {
  auto [gx, gy] = ad::spatial_gradient(u, ws.points, h_spatial);
  if (gx.g->value(gx).rows() != 1)
    throw std::invalid_argument("weak_residuals_grad: evaluator must return one row");
  return combine_residuals(gx, gy, ws);
}

Var weak_residuals_flux(Var qx, Var qy, const WeakWorkspace& ws) {
  if (qx.g->value(qx).cols() != ws.points.cols())
    throw std::invalid_argument("weak_residuals_flux: flux row width != quadrature points");
  return combine_residuals(qx, qy, ws);
}

namespace {

// collocation point sets, deterministic under (seed, epoch, sample)
Mat interior_collocation(int n, Rng& rng) {
  Mat pts(2, n);
  for (int i = 0; i < n; ++i) {
    pts(0, i) = rng.uniform();
    pts(1, i) = rng.uniform();
  }
  return pts;
}

// 4 edges x n points; order left, right, bottom, top
Mat boundary_collocation(int n, Rng& rng) {
  Mat pts(2, 4 * n);
  for (int i = 0; i < n; ++i) {
    double t = rng.uniform();
    pts(0, i) = 0.0;
    pts(1, i) = t;
  }
  for (int i = 0; i < n; ++i) {
    double t = rng.uniform();
    pts(0, n + i) = 1.0;
    pts(1, n + i) = t;
  }
  for (int i = 0; i < n; ++i) {
    double t = rng.uniform();
    pts(0, 2 * n + i) = t;
    pts(1, 2 * n + i) = 0.0;
  }
  for (int i = 0; i < n; ++i) {
    double t = rng.uniform();
    pts(0, 3 * n + i) = t;
    pts(1, 3 * n + i) = 1.0;
  }
  return pts;
}

Mat mu_row(const ScalarField& mult, const Mat& pts) {
  Mat row(1, pts.cols());
  for (int i = 0; i < pts.cols(); ++i) row(0, i) = mult(pts(0, i), pts(1, i));
  return row;
}

}  // namespace

PdeTerms flux_residuals(const ChannelsFn& channels, const microgen::Microstructure& m,
                        double kappa1, double kappa2, const PdeConfig& cfg,
                        std::uint64_t seed, std::uint64_t epoch, std::uint64_t sample) {
  auto tfs = make_test_functions(cfg.tf, seed, epoch, sample);
  WeakWorkspace ws = make_weak_workspace(tfs, cfg.tf.n_q, nullptr, nullptr);
  std::uint64_t base = derive_seed(seed, epoch, sample);
  Rng cons_rng(derive_seed(base, 1));
  Rng bc_rng(derive_seed(base, 2));
  const int Nc = cfg.consistency_points;
  const int Nb = cfg.bc_points_per_edge;
  Mat cons_pts = interior_collocation(Nc, cons_rng);
  Mat bc_pts = boundary_collocation(Nb, bc_rng);

  const int Q = int(ws.points.cols());
  Mat all_pts(2, Q + Nc + 4 * Nb);
  all_pts << ws.points, cons_pts, bc_pts;
  std::vector<Var> ch = channels(all_pts);
  if (ch.size() != 6)
    throw std::invalid_argument("flux_residuals: expected 6 channels");
  ad::Graph& g = *ch[0].g;

  auto span = [&](Var v, int off, int len) { return ad::slice(v, 0, off, 1, len); };

  // weak divergence residuals per loading
  Var r_h = weak_residuals_flux(span(ch[1], 0, Q), span(ch[2], 0, Q), ws);
  Var r_v = weak_residuals_flux(span(ch[4], 0, Q), span(ch[5], 0, Q), ws);
  Var divergence = ad::add(sumsq(r_h), sumsq(r_v));

  // flux-consistency at interior collocation: q = mu grad T
  Var muc = g.constant(mu_row(phase_multiplier(m, kappa1, kappa2), cons_pts));
  Var errs;
  for (int load = 0; load < 2; ++load) {
    int tch = load == 0 ? 0 : 3;
    auto T_fn = [&, tch](const Mat& pts) { return channels(pts)[tch]; };
    auto [gx, gy] = ad::spatial_gradient(T_fn, cons_pts, cfg.h_spatial);
    Var ex = ad::sub(span(ch[tch + 1], Q, Nc), ad::mul(muc, gx));
    Var ey = ad::sub(span(ch[tch + 2], Q, Nc), ad::mul(muc, gy));
    Var pair = ad::concat_cols(ex, ey);
    errs = load == 0 ? pair : ad::concat_cols(errs, pair);
  }
  Var consistency = ad::mean(ad::square(errs));

  // boundary penalties: Dirichlet on loaded edges, zero normal flux elsewhere
  const int L = Q + Nc;  // bc block offset; edges at L, L+Nb, L+2Nb, L+3Nb
  Var one = g.constant(1.0);
  Var bh_l = span(ch[0], L, Nb);                      // T_h = 0 at x=0
  Var bh_r = ad::sub(span(ch[0], L + Nb, Nb), one);   // T_h = 1 at x=1
  Var bh_b = span(ch[2], L + 2 * Nb, Nb);             // qy_h = 0 at y=0
  Var bh_t = span(ch[2], L + 3 * Nb, Nb);             // qy_h = 0 at y=1
  Var bv_l = span(ch[4], L, Nb);                      // qx_v = 0 at x=0
  Var bv_r = span(ch[4], L + Nb, Nb);                 // qx_v = 0 at x=1
  Var bv_b = span(ch[3], L + 2 * Nb, Nb);             // T_v = 0 at y=0
  Var bv_t = ad::sub(span(ch[3], L + 3 * Nb, Nb), one);  // T_v = 1 at y=1
  Var bc_all = ad::concat_cols(
      ad::concat_cols(ad::concat_cols(bh_l, bh_r), ad::concat_cols(bh_b, bh_t)),
      ad::concat_cols(ad::concat_cols(bv_l, bv_r), ad::concat_cols(bv_b, bv_t)));
  Var bc = ad::mean(ad::square(bc_all));

  return {divergence, consistency, bc};
}

PdeTerms field_residuals(const ChannelsFn& channels, const microgen::Microstructure& m,
                         double kappa1, double kappa2, const PdeConfig& cfg,
                         std::uint64_t seed, std::uint64_t epoch, std::uint64_t sample) {
  auto tfs = make_test_functions(cfg.tf, seed, epoch, sample);
  WeakWorkspace ws =
      make_weak_workspace(tfs, cfg.tf.n_q, phase_multiplier(m, kappa1, kappa2), nullptr);
  std::uint64_t base = derive_seed(seed, epoch, sample);
  Rng bc_rng(derive_seed(base, 2));
  const int Nb = cfg.bc_points_per_edge;
  Mat bc_pts = boundary_collocation(Nb, bc_rng);

  auto T_fn = [&](const Mat& pts) { return channels(pts)[0]; };
  Var r = weak_residuals_grad(T_fn, ws, cfg.h_spatial);
  Var divergence = sumsq(r);
  ad::Graph& g = *r.g;

  Var Tb = channels(bc_pts)[0];
  auto span = [&](int off, int len) { return ad::slice(Tb, 0, off, 1, len); };
  Var one = g.constant(1.0);
  // recovery BC: T=1 at x=1, T=0 on the other edges
  Var viol = ad::concat_cols(
      ad::concat_cols(span(0, Nb), ad::sub(span(Nb, Nb), one)),
      ad::concat_cols(span(2 * Nb, Nb), span(3 * Nb, Nb)));
  Var bc = ad::mean(ad::square(viol));

  return {divergence, g.constant(0.0), bc};
}

}  // namespace md::residuals
