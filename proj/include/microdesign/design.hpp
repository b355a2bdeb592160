#pragma once
// Inverse design by gradient ascent on latent log-posteriors:
//   p1: property box  (mollified likelihood on predicted kappa + flow prior)
//   p2: field recovery (sensor misfit on the decoded response + flow prior)
//   p3: utility maximization (alpha * log kappa_h/kappa_v + flow prior)
// Restarts start from flow_inverse(z), z ~ N(0, I). Designs are decoded,
// thresholded and verified against the finite-volume solver.

#include "microdesign/fv_solver.hpp"
#include "microdesign/networks.hpp"

namespace md::design {

struct RunConfig {
  int restarts = 50;
  int steps = 500;
  double lr = 0.01;
  int lr_halve_every = 100;
  std::uint64_t seed = 0;
  int kappa_grid = 64;   // E x E evaluation grid for predicted kappa
  int oracle_grid = 64;  // FV grid for verification
};

struct P1Target {
  double kh_lo = 0, kh_hi = 0, kv_lo = 0, kv_hi = 0;
  double tau = 10.0;
};

struct P2Target {
  Mat sensors;  // 2 x n
  Vec values;   // n
  double tau_u = 0.0;  // misfit weight; <=0 selects 1/||values||^2
  microgen::Microstructure reference;  // optional ground truth for icorr
  bool has_reference = false;
};

struct P3Target {
  double alpha = 10.0;
};

struct Problem {
  std::string variant;  // "p1" | "p2" | "p3"
  P1Target p1;
  P2Target p2;
  P3Target p3;
};

// Smooth magnitudes of the mean decoded flux components over an E x E grid
// (property-task decoder); differentiable |s| = sqrt(s^2 + 1e-12).
struct PredictedKappa {
  ad::Var kh, kv;
};
PredictedKappa predicted_kappa(ad::Graph& g, const nets::VarMultiOnet& u,
                               ad::Var beta, int E);

// Normalized cross-correlation of two same-shape fields scaled to [0,1];
// returns exactly 1.0 for identical binary fields and 0 when either is empty.
double cross_correlation(const Mat& a, const Mat& b);

// One evaluation of the variant objective and its beta-gradient.
struct StepEval {
  double objective;
  Mat grad;        // d x 1, gradient of the objective w.r.t. beta
  double kh, kv;   // predicted (p1/p3)
};
StepEval eval_objective(const Problem& prob, const nets::ModelParams& model,
                        const RunConfig& run, const Mat& beta_val);

struct RestartResult {
  int restart = 0;
  std::uint64_t seed = 0;
  Vec beta;
  std::vector<double> trace;  // objective per step
  double objective = 0;
  double pred_kh = 0, pred_kv = 0;
  microgen::Microstructure micro;  // decoded, thresholded at 0.5
  double oracle_kh = 0, oracle_kv = 0;
  bool inside_box = false;  // p1
  double icorr = 0;         // p2 (vs reference)
};

struct Report {
  Problem problem;
  RunConfig run;
  std::vector<RestartResult> restarts;
  // aggregates
  double success_rate = 0;  // p1: oracle kappa inside box
  double best_icorr = 0;    // p2
  double mean_ratio = 0;    // p3: mean oracle kh/kv
};

Report run_design(const Problem& prob, const nets::ModelParams& model,
                  const RunConfig& run, const fv::SolveConfig& oracle);

// report.json + designs.u8 + traces.csv + target.json under dir.
void save_report(const Report& rep, const std::filesystem::path& dir);

// Re-verifies designs.u8 with the FV solver; returns per-design kappa.
struct EvalResult {
  std::vector<double> kh, kv;
};
EvalResult evaluate_designs(const std::filesystem::path& designs_dir,
                            const fv::SolveConfig& oracle);

}  // namespace md::design
