#include "microdesign/fv_solver.hpp"

#include <Eigen/Sparse>

#include <algorithm>

namespace md::fv {

void BcSpec::validate() const {
  if (!(left.dirichlet || right.dirichlet || bottom.dirichlet || top.dirichlet))
    throw std::invalid_argument("BcSpec: at least one Dirichlet edge required");
}

BcSpec horizontal_loading() {
  BcSpec bc;
  bc.left = {true, 0.0};
  bc.right = {true, 1.0};
  return bc;
}

BcSpec vertical_loading() {
  BcSpec bc;
  bc.bottom = {true, 0.0};
  bc.top = {true, 1.0};
  return bc;
}

BcSpec recovery_bc() {
  BcSpec bc;
  bc.left = {true, 0.0};
  bc.right = {true, 1.0};
  bc.bottom = {true, 0.0};
  bc.top = {true, 0.0};
  return bc;
}

namespace {

// conductivity image upsampled to the solve grid (nearest neighbor)
Mat conductivity_image(const microgen::Microstructure& m, const SolveConfig& cfg) {
  m.validate();
  if (cfg.grid <= 0 || cfg.grid % m.k != 0)
    throw std::invalid_argument("solve: grid must be a positive multiple of the pixel count");
  const int G = cfg.grid, f = G / m.k;
  Mat mu(G, G);
  for (int i = 0; i < G; ++i)
    for (int j = 0; j < G; ++j)
      mu(i, j) = m.at(i / f, j / f) ? cfg.kappa1 : cfg.kappa2;
  return mu;
}

double harmonic(double a, double b) { return 2.0 * a * b / (a + b); }

}  // namespace

SolveResult solve(const microgen::Microstructure& m, const BcSpec& bc,
                  const SolveConfig& cfg) {
  bc.validate();
  const Mat mu = conductivity_image(m, cfg);
  const int G = cfg.grid;
  const int n = G * G;
  const double h = 1.0 / G;
  auto id = [G](int i, int j) { return i * G + j; };

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(std::size_t(n) * 5);
  Vec b = Vec::Zero(n);
  Vec diag = Vec::Zero(n);

  for (int i = 0; i < G; ++i) {
    for (int j = 0; j < G; ++j) {
      const int r = id(i, j);
      const double mc = mu(i, j);
      // east/west faces (x direction)
      if (j + 1 < G) {
        double t = harmonic(mc, mu(i, j + 1));
        diag[r] += t;
        trip.emplace_back(r, id(i, j + 1), -t);
      } else if (bc.right.dirichlet) {
        double t = 2.0 * mc;
        diag[r] += t;
        b[r] += t * bc.right.value;
      }
      if (j - 1 >= 0) {
        double t = harmonic(mc, mu(i, j - 1));
        diag[r] += t;
        trip.emplace_back(r, id(i, j - 1), -t);
      } else if (bc.left.dirichlet) {
        double t = 2.0 * mc;
        diag[r] += t;
        b[r] += t * bc.left.value;
      }
      // north/south faces (y direction; row index i is y)
      if (i + 1 < G) {
        double t = harmonic(mc, mu(i + 1, j));
        diag[r] += t;
        trip.emplace_back(r, id(i + 1, j), -t);
      } else if (bc.top.dirichlet) {
        double t = 2.0 * mc;
        diag[r] += t;
        b[r] += t * bc.top.value;
      }
      if (i - 1 >= 0) {
        double t = harmonic(mc, mu(i - 1, j));
        diag[r] += t;
        trip.emplace_back(r, id(i - 1, j), -t);
      } else if (bc.bottom.dirichlet) {
        double t = 2.0 * mc;
        diag[r] += t;
        b[r] += t * bc.bottom.value;
      }
    }
  }
  for (int r = 0; r < n; ++r) trip.emplace_back(r, r, diag[r]);

  Eigen::SparseMatrix<double> A(n, n);
  A.setFromTriplets(trip.begin(), trip.end());
  A.makeCompressed();

  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper,
                           Eigen::DiagonalPreconditioner<double>>
      cg;
  cg.setTolerance(cfg.tol);
  cg.setMaxIterations(cfg.max_iter);
  cg.compute(A);
  Vec x = cg.solve(b);
  double res = b.norm() > 0 ? (A * x - b).norm() / b.norm() : (A * x).norm();
  if (!x.allFinite())
    throw std::runtime_error("fv solve: non-finite solution");
  if (res > cfg.tol * 100.0)
    throw std::runtime_error("fv solve: CG did not converge (residual " +
                             std::to_string(res) + ")");

  SolveResult out;
  out.grid = G;
  out.residual = res;
  out.iterations = int(cg.iterations());
  out.T = Mat(G, G);
  for (int i = 0; i < G; ++i)
    for (int j = 0; j < G; ++j) out.T(i, j) = x[id(i, j)];

  // cell-centered flux q = mu grad T, averaged from the two face flux
  // densities in each direction (exact for 1D layered media)
  out.qx = Mat::Zero(G, G);
  out.qy = Mat::Zero(G, G);
  for (int i = 0; i < G; ++i) {
    for (int j = 0; j < G; ++j) {
      const double mc = mu(i, j);
      double de = 0, dw = 0, dn = 0, ds = 0;
      if (j + 1 < G) de = harmonic(mc, mu(i, j + 1)) * (out.T(i, j + 1) - out.T(i, j)) / h;
      else if (bc.right.dirichlet) de = 2.0 * mc * (bc.right.value - out.T(i, j)) / h;
      if (j - 1 >= 0) dw = harmonic(mc, mu(i, j - 1)) * (out.T(i, j) - out.T(i, j - 1)) / h;
      else if (bc.left.dirichlet) dw = 2.0 * mc * (out.T(i, j) - bc.left.value) / h;
      if (i + 1 < G) dn = harmonic(mc, mu(i + 1, j)) * (out.T(i + 1, j) - out.T(i, j)) / h;
      else if (bc.top.dirichlet) dn = 2.0 * mc * (bc.top.value - out.T(i, j)) / h;
      if (i - 1 >= 0) ds = harmonic(mc, mu(i - 1, j)) * (out.T(i, j) - out.T(i - 1, j)) / h;
      else if (bc.bottom.dirichlet) ds = 2.0 * mc * (out.T(i, j) - bc.bottom.value) / h;
      // zero-flux faces contribute 0 and pair with the opposite face
      if (j + 1 == G && !bc.right.dirichlet) de = 0;
      if (j == 0 && !bc.left.dirichlet) dw = 0;
      if (i + 1 == G && !bc.top.dirichlet) dn = 0;
      if (i == 0 && !bc.bottom.dirichlet) ds = 0;
      out.qx(i, j) = 0.5 * (de + dw);
      out.qy(i, j) = 0.5 * (dn + ds);
    }
  }
  return out;
}

Kappa effective_conductivity(const microgen::Microstructure& m, const SolveConfig& cfg) {
  Kappa k;
  k.h = std::abs(solve(m, horizontal_loading(), cfg).qx.mean());
  k.v = std::abs(solve(m, vertical_loading(), cfg).qy.mean());
  return k;
}

double boundary_flux(const microgen::Microstructure& m, const SolveResult& r,
                     const SolveConfig& cfg, const BcSpec& bc, const std::string& edge) {
  const Mat mu = conductivity_image(m, cfg);
  const int G = r.grid;
  const double h = 1.0 / G;
  double total = 0.0;  // outward flux of q through the edge; zero-flux edges give 0
  for (int t = 0; t < G; ++t) {
    double d = 0.0;
    if (edge == "left" && bc.left.dirichlet)
      d = -2.0 * mu(t, 0) * (r.T(t, 0) - bc.left.value) / h;
    else if (edge == "right" && bc.right.dirichlet)
      d = 2.0 * mu(t, G - 1) * (bc.right.value - r.T(t, G - 1)) / h;
    else if (edge == "bottom" && bc.bottom.dirichlet)
      d = -2.0 * mu(0, t) * (r.T(0, t) - bc.bottom.value) / h;
    else if (edge == "top" && bc.top.dirichlet)
      d = 2.0 * mu(G - 1, t) * (bc.top.value - r.T(G - 1, t)) / h;
    else if (edge != "left" && edge != "right" && edge != "bottom" && edge != "top")
      throw std::invalid_argument("boundary_flux: unknown edge " + edge);
    total += d * h;
  }
  return total;
}

Vec sample_bilinear(const Mat& field, const Mat& points) {
  if (points.rows() != 2) throw std::invalid_argument("sample_bilinear: points must be 2xN");
  const int G = int(field.rows());
  if (field.cols() != G) throw std::invalid_argument("sample_bilinear: field must be square");
  Vec out(points.cols());
  for (int p = 0; p < points.cols(); ++p) {
    double x = points(0, p), y = points(1, p);
    if (x < 0 || x > 1 || y < 0 || y > 1)
      throw std::invalid_argument("sample_bilinear: point outside [0,1]^2");
    double u = std::clamp(x * G - 0.5, 0.0, double(G - 1));
    double v = std::clamp(y * G - 0.5, 0.0, double(G - 1));
    int j0 = std::min(int(u), G - 2);
    int i0 = std::min(int(v), G - 2);
    double fx = u - j0, fy = v - i0;
    out[p] = (1 - fx) * (1 - fy) * field(i0, j0) + fx * (1 - fy) * field(i0, j0 + 1) +
             (1 - fx) * fy * field(i0 + 1, j0) + fx * fy * field(i0 + 1, j0 + 1);
  }
  return out;
}

void label_dataset(microgen::Dataset& ds, int grid,
                   const std::vector<std::string>& tasks, const SolveConfig& cfg) {
  for (const auto& t : tasks)
    if (t != "property" && t != "field")
      throw std::invalid_argument("label_dataset: unknown task " + t);
  if (tasks.empty()) throw std::invalid_argument("label_dataset: no tasks given");

  SolveConfig sc = cfg;
  sc.grid = grid;
  const std::size_t gg = std::size_t(grid) * grid;
  const bool want_prop =
      std::find(tasks.begin(), tasks.end(), "property") != tasks.end();
  const bool want_field = std::find(tasks.begin(), tasks.end(), "field") != tasks.end();

  if (want_prop) {
    ds.fields_property.assign(std::size_t(ds.n) * 6 * gg, 0.f);
    ds.kappa.assign(std::size_t(ds.n) * 2, 0.f);
  }
  if (want_field) ds.fields_field.assign(std::size_t(ds.n) * gg, 0.f);

  auto put = [gg, grid](std::vector<float>& dst, std::size_t base, int ch, const Mat& f) {
    for (int i = 0; i < grid; ++i)
      for (int j = 0; j < grid; ++j)
        dst[base + ch * gg + std::size_t(i) * grid + j] = float(f(i, j));
  };

  parallel_for(ds.n, [&](std::int64_t s) {
    auto m = ds.sample(int(s));
    if (want_prop) {
      auto rh = solve(m, horizontal_loading(), sc);
      auto rv = solve(m, vertical_loading(), sc);
      std::size_t base = std::size_t(s) * 6 * gg;
      put(ds.fields_property, base, 0, rh.T);
      put(ds.fields_property, base, 1, rh.qx);
      put(ds.fields_property, base, 2, rh.qy);
      put(ds.fields_property, base, 3, rv.T);
      put(ds.fields_property, base, 4, rv.qx);
      put(ds.fields_property, base, 5, rv.qy);
      ds.kappa[std::size_t(s) * 2] = float(std::abs(rh.qx.mean()));
      ds.kappa[std::size_t(s) * 2 + 1] = float(std::abs(rv.qy.mean()));
    }
    if (want_field) {
      auto rf = solve(m, recovery_bc(), sc);
      put(ds.fields_field, std::size_t(s) * gg, 0, rf.T);
    }
  });

  ds.grid = grid;
  ds.tasks = tasks;
  ds.solver_tol = sc.tol;
  ds.kappa1 = sc.kappa1;
  ds.kappa2 = sc.kappa2;
}

}  // namespace md::fv
