#pragma once
// Weak-form PDE residuals against compactly supported test functions.
// Test functions are Wendland C2 bumps w(r) = (1-r)^4 (4r+1) on balls drawn
// inside the unit square; integrals use tensor Gauss-Legendre quadrature
// restricted to the support. Residuals are assembled inside the autodiff
// graph so they can drive training.

#include "microdesign/ad.hpp"
#include "microdesign/common.hpp"
#include "microdesign/microgen.hpp"

namespace md::residuals {

struct TestFunction {
  double cx = 0, cy = 0, R = 0;
};

struct TestFunctionConfig {
  int count = 100;                   // M
  double r_min = 0.05, r_max = 0.25;
  int n_q = 12;                      // GL nodes per axis over the support box
};

// Deterministic resample stream: radius first, then center uniform in the
// [R, 1-R] inset, for m = 0..M-1, from derive_seed(seed, epoch, sample).
std::vector<TestFunction> make_test_functions(const TestFunctionConfig& cfg,
                                              std::uint64_t seed, std::uint64_t epoch,
                                              std::uint64_t sample);

// w and grad w at 2 x N points (zero outside the support ball).
void wendland_eval(const TestFunction& w, const Mat& points, Vec* val, Mat* grad);

// Gauss-Legendre nodes/weights on [-1,1].
void gauss_legendre(int n, Vec& nodes, Vec& weights);

// Support-filtered tensor quadrature for one test function. Offsets from the
// center are kept exactly symmetric so odd integrands cancel to roundoff.
struct Quadrature {
  Mat points;  // 2 x Q
  Vec wq;      // quadrature weights (area element included)
  Vec w_val;   // w at the nodes
  Mat w_grad;  // 2 x Q
};
Quadrature make_quadrature(const TestFunction& tf, int n_q);

// Pointwise multiplier/source callbacks (x, y) -> value.
using ScalarField = std::function<double(double, double)>;

// Nearest-pixel conductivity lookup for a microstructure.
ScalarField phase_multiplier(const microgen::Microstructure& m, double kappa1,
                             double kappa2);

// Constants for a batch of test functions sharing one field evaluation:
// residual_m = sum_q [ gx_q Cx(q,m) + gy_q Cy(q,m) ] - source_m
// with Cx = wq * mult * dw_m/dx (zero outside block m) and
// source_m = integral of s * w_m (plain quadrature, zero if s is null).
struct WeakWorkspace {
  std::vector<TestFunction> tfs;
  Mat points;   // 2 x Q (all test functions concatenated)
  Mat Cx, Cy;   // Q x M
  Vec source;   // M
};
WeakWorkspace make_weak_workspace(const std::vector<TestFunction>& tfs, int n_q,
                                  const ScalarField& mult,     // nullptr -> 1
                                  const ScalarField& source);  // nullptr -> 0

// Residual row (1 x M) from a scalar field evaluator; grad u via the
// in-graph central-difference stencil with step h_spatial.
ad::Var weak_residuals_grad(const ad::FieldFn& u, const WeakWorkspace& ws,
                            double h_spatial);

// Residual row (1 x M) from flux components already evaluated at ws.points.
ad::Var weak_residuals_flux(ad::Var qx, ad::Var qy, const WeakWorkspace& ws);

// --- physics-informed loss terms for the decoders ---------------------------

struct PdeConfig {
  TestFunctionConfig tf;
  int consistency_points = 64;  // interior collocation for q = mu grad T
  int bc_points_per_edge = 32;
  double h_spatial = 1e-3;
};

// Evaluates all decoder channels at a 2 x N point set (S = 1 rows).
using ChannelsFn = std::function<std::vector<ad::Var>(const Mat& points)>;

struct PdeTerms {
  ad::Var divergence;   // sum of squared weak residuals of div q = 0
  ad::Var consistency;  // mean squared q - mu grad T mismatch
  ad::Var bc;           // mean squared boundary violation
};

// Property task: channels (T_h, qx_h, qy_h, T_v, qx_v, qy_v) under the two
// canonical loadings (Dirichlet 0/1 on opposing edges, zero-flux otherwise).
PdeTerms flux_residuals(const ChannelsFn& channels, const microgen::Microstructure& m,
                        double kappa1, double kappa2, const PdeConfig& cfg,
                        std::uint64_t seed, std::uint64_t epoch, std::uint64_t sample);

// Field task: single channel T under the recovery BC (T=1 at x=1, else 0);
// weak residual of div(mu grad T) = 0 plus Dirichlet penalties
// (consistency term is identically zero here).
PdeTerms field_residuals(const ChannelsFn& channels, const microgen::Microstructure& m,
                         double kappa1, double kappa2, const PdeConfig& cfg,
                         std::uint64_t seed, std::uint64_t epoch, std::uint64_t sample);

}  // namespace md::residuals
