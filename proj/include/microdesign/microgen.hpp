#pragma once
// Two-phase microstructure synthesis: anisotropic Gaussian random field,
// volume-fraction threshold, Cahn-Hilliard relaxation. All fields live on a
// K x K periodic pixel grid; pixel (i,j) covers row i / column j with center
// ((j+0.5)/K, (i+0.5)/K) in the unit square (rows are y, columns are x).

#include "microdesign/common.hpp"

namespace md::microgen {

struct Microstructure {
  int k = 0;
  std::vector<std::uint8_t> phase;  // row-major, values in {0,1}

  std::uint8_t at(int i, int j) const { return phase[std::size_t(i) * k + j]; }
  double volume_fraction() const;
  void validate() const;  // throws unless square, binary, k > 0
};

// Spectral density S(kx,ky) = phi * exp(-kx^2) + (10 - phi) * exp(-ky^2) with
// kx, ky the centered integer modes divided by freq_scale (default K/8).
// phi in [1,9] trades x- vs y-aligned filaments.
struct GrfConfig {
  int k = 32;
  double phi = 5.0;
  double freq_scale = 0.0;  // <= 0 selects the default K/8
};

Mat sample_grf(const GrfConfig& cfg, std::uint64_t seed);

struct ThresholdResult {
  Microstructure micro;
  bool degenerate = false;  // all field values equal; fell back to row-major fill
};

// Top ceil(vf * K^2) pixels by field value become phase 1; ties (and the
// degenerate all-equal field) resolve by row-major pixel order.
ThresholdResult threshold_to_vf(const Mat& field, double vf);

// dc/dt = D lap(c^3 - c - gamma lap c), semi-implicit spectral scheme on the
// periodic pixel grid (spacing 1), c in [-1,1] phase convention.
struct ChConfig {
  double D = 50.0;
  double gamma = 1.0;
  double dt = 0.01;
  int steps = 1000;
};

// Observer (optional) sees c after every step; step 0 is the initial state.
using ChObserver = std::function<void(int step, const Mat& c)>;

Microstructure cahn_hilliard_evolve(const Microstructure& m, const ChConfig& cfg,
                                    const ChObserver& obs = nullptr);

struct DatasetConfig {
  int n = 0;
  int k = 32;
  std::uint64_t seed = 0;
  double vf = 1.0 / 3.0;
  double phi_lo = 1.0, phi_hi = 9.0;
  GrfConfig grf;   // k/phi ignored; freq_scale honored
  ChConfig ch;
};

// In-memory dataset; label arrays are filled by the solver module.
struct Dataset {
  int n = 0, k = 0;
  std::uint64_t seed = 0;
  double vf = 1.0 / 3.0;
  double grf_freq_scale = 0.0;
  ChConfig ch;
  std::vector<std::uint8_t> micro;  // n * k * k, sample-major row-major
  std::vector<double> phi;          // n

  // labels (empty when unlabeled)
  int grid = 0;
  std::vector<std::string> tasks;
  double solver_tol = 0.0;
  double kappa1 = 0.0, kappa2 = 0.0;
  std::vector<float> fields_property;  // n * 6 * grid * grid
  std::vector<float> fields_field;     // n * grid * grid
  std::vector<float> kappa;            // n * 2 (kh, kv)

  Microstructure sample(int i) const;
  bool has_task(const std::string& t) const;
};

Dataset generate_dataset(const DatasetConfig& cfg);

// meta.json + micro.u8 (+ label files when present). Load validates sizes.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace md::microgen
