#pragma once
// Cell-centered finite-volume solver for div(mu grad T) = 0 on the unit
// square, used as ground truth for labeling and design verification.
// Harmonic face averaging, Dirichlet via half-cell transmissibility,
// zero-flux Neumann by face omission; CG with Jacobi preconditioning.

#include "microdesign/common.hpp"
#include "microdesign/microgen.hpp"

namespace md::fv {

struct EdgeBc {
  bool dirichlet = false;
  double value = 0.0;  // ignored for zero-flux edges
};

struct BcSpec {
  EdgeBc left, right, bottom, top;
  void validate() const;  // at least one Dirichlet edge
};

BcSpec horizontal_loading();  // T=0 at x=0, T=1 at x=1, zero-flux elsewhere
BcSpec vertical_loading();    // T=0 at y=0, T=1 at y=1, zero-flux elsewhere
BcSpec recovery_bc();         // T=1 at x=1, T=0 on the other three edges

struct SolveConfig {
  int grid = 64;          // must be a positive multiple of the pixel count
  double tol = 1e-12;     // CG relative tolerance (criteria need <= 1e-10)
  int max_iter = 50000;
  double kappa1 = 10.0;   // phase 1 conductivity
  double kappa2 = 2.0;    // phase 0 conductivity
};

struct SolveResult {
  int grid = 0;
  Mat T, qx, qy;          // grid x grid, row i = y, col j = x; q = mu grad T
  double residual = 0.0;  // achieved |Ax-b|/|b|
  int iterations = 0;
};

SolveResult solve(const microgen::Microstructure& m, const BcSpec& bc,
                  const SolveConfig& cfg);

struct Kappa {
  double h = 0.0, v = 0.0;
};

// |volume mean of q_x| under horizontal loading and |mean q_y| under vertical.
Kappa effective_conductivity(const microgen::Microstructure& m, const SolveConfig& cfg);

// Net outward flux through one boundary edge ("left","right","bottom","top");
// conservation means left+right+bottom+top ~ 0.
double boundary_flux(const microgen::Microstructure& m, const SolveResult& r,
                     const SolveConfig& cfg, const BcSpec& bc, const std::string& edge);

// Bilinear interpolation of a cell-centered field at 2 x N points in [0,1]^2
// (clamped to the center range near edges). Throws on points outside the square.
Vec sample_bilinear(const Mat& field, const Mat& points);

// Computes label fields (and kappa for the property task) for every sample.
// tasks is a subset of {"property","field"}.
void label_dataset(microgen::Dataset& ds, int grid,
                   const std::vector<std::string>& tasks, const SolveConfig& cfg);

}  // namespace md::fv
