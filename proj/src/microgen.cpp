#include "microdesign/microgen.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <complex>
#include <numeric>

#include <json.hpp>

namespace md::microgen {

using Cmat = Eigen::MatrixXcd;

namespace {

// 2D transforms as row passes then column passes. Eigen's FFT wrapper is 1D;
// inv() applies the 1/N scaling, so fft2 followed by ifft2 is the identity.
void fft2(Cmat& m, bool inverse) {
  Eigen::FFT<double> fft;
  Eigen::VectorXcd tmp(m.cols()), out(m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    tmp = m.row(i);
    if (inverse) fft.inv(out, tmp); else fft.fwd(out, tmp);
    m.row(i) = out;
  }
  Eigen::VectorXcd ctmp(m.rows()), cout(m.rows());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    ctmp = m.col(j);
    if (inverse) fft.inv(cout, ctmp); else fft.fwd(cout, ctmp);
    m.col(j) = cout;
  }
}

// centered integer mode for FFT bin a on a size-K axis
int centered_mode(int a, int K) { return a < (K + 1) / 2 ? a : a - K; }

}  // namespace

double Microstructure::volume_fraction() const {
  if (phase.empty()) return 0.0;
  std::size_t ones = 0;
  for (auto p : phase) ones += p;
  return double(ones) / double(phase.size());
}

void Microstructure::validate() const {
  if (k <= 0) throw std::invalid_argument("microstructure: k must be positive");
  if (phase.size() != std::size_t(k) * k)
    throw std::invalid_argument("microstructure: size != k*k");
  for (auto p : phase)
    if (p > 1) throw std::invalid_argument("microstructure: non-binary phase value");
}

Mat sample_grf(const GrfConfig& cfg, std::uint64_t seed) {
  const int K = cfg.k;
  if (K <= 0) throw std::invalid_argument("sample_grf: k must be positive");
  if (cfg.phi < 1.0 || cfg.phi > 9.0)
    throw std::invalid_argument("sample_grf: phi outside [1,9]");
  const double fs = cfg.freq_scale > 0 ? cfg.freq_scale : double(K) / 8.0;

  Rng rng(seed);
  Cmat w(K, K);
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j)
      w(i, j) = std::complex<double>(rng.normal(), rng.normal());

  for (int i = 0; i < K; ++i) {
    double ky = centered_mode(i, K) / fs;
    for (int j = 0; j < K; ++j) {
      double kx = centered_mode(j, K) / fs;
      double S = cfg.phi * std::exp(-kx * kx) + (10.0 - cfg.phi) * std::exp(-ky * ky);
      w(i, j) *= std::sqrt(S);
    }
  }
  fft2(w, /*inverse=*/true);
  return w.real();
}

ThresholdResult threshold_to_vf(const Mat& field, double vf) {
  if (field.rows() != field.cols() || field.rows() == 0)
    throw std::invalid_argument("threshold_to_vf: field must be square");
  if (vf <= 0.0 || vf >= 1.0)
    throw std::invalid_argument("threshold_to_vf: vf must be inside (0,1)");
  const int K = int(field.rows());
  const std::size_t n = std::size_t(K) * K;
  const std::size_t n1 = std::min(n, std::size_t(std::ceil(vf * double(n))));

  // row-major linear values; stable sort keeps row-major order among ties
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    double va = field(int(a / K), int(a % K));
    double vb = field(int(b / K), int(b % K));
    return va > vb;
  });

  ThresholdResult out;
  out.degenerate = field.maxCoeff() == field.minCoeff();
  out.micro.k = K;
  out.micro.phase.assign(n, 0);
  for (std::size_t r = 0; r < n1; ++r) out.micro.phase[order[r]] = 1;
  return out;
}

Microstructure cahn_hilliard_evolve(const Microstructure& m, const ChConfig& cfg,
                                    const ChObserver& obs) {
  m.validate();
  const int K = m.k;
  if (cfg.dt <= 0 || cfg.steps < 0)
    throw std::invalid_argument("cahn_hilliard_evolve: bad dt/steps");

  Mat c(K, K);
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) c(i, j) = m.at(i, j) ? 1.0 : -1.0;

  // pixel-unit wavenumbers on the K-periodic grid
  Mat ksq(K, K);
  for (int i = 0; i < K; ++i) {
    double ky = 2.0 * M_PI * centered_mode(i, K) / double(K);
    for (int j = 0; j < K; ++j) {
      double kx = 2.0 * M_PI * centered_mode(j, K) / double(K);
      ksq(i, j) = kx * kx + ky * ky;
    }
  }
  Mat denom = 1.0 + (cfg.dt * cfg.D * cfg.gamma) * ksq.array().square();

  if (obs) obs(0, c);
  for (int s = 1; s <= cfg.steps; ++s) {
    Mat f = c.array().cube() - c.array();
    Cmat ch = c.cast<std::complex<double>>();
    Cmat fh = f.cast<std::complex<double>>();
    fft2(ch, false);
    fft2(fh, false);
    ch = (ch.array() - (cfg.dt * cfg.D) * ksq.array() * fh.array()) / denom.array();
    fft2(ch, true);
    c = ch.real();
    if (!c.allFinite())
      throw std::runtime_error("cahn_hilliard_evolve: non-finite field at step " +
                               std::to_string(s) + " (reduce dt)");
    if (obs) obs(s, c);
  }

  Microstructure out;
  out.k = K;
  out.phase.resize(std::size_t(K) * K);
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j)
      out.phase[std::size_t(i) * K + j] = c(i, j) >= 0.0 ? 1 : 0;
  return out;
}

Microstructure Dataset::sample(int i) const {
  if (i < 0 || i >= n) throw std::out_of_range("dataset sample index");
  Microstructure m;
  m.k = k;
  std::size_t sz = std::size_t(k) * k;
  m.phase.assign(micro.begin() + std::ptrdiff_t(i * sz),
                 micro.begin() + std::ptrdiff_t((i + 1) * sz));
  return m;
}

bool Dataset::has_task(const std::string& t) const {
  return std::find(tasks.begin(), tasks.end(), t) != tasks.end();
}

Dataset generate_dataset(const DatasetConfig& cfg) {
  if (cfg.n <= 0) throw std::invalid_argument("generate_dataset: n must be positive");
  if (cfg.k <= 0) throw std::invalid_argument("generate_dataset: k must be positive");

  Dataset ds;
  ds.n = cfg.n;
  ds.k = cfg.k;
  ds.seed = cfg.seed;
  ds.vf = cfg.vf;
  ds.grf_freq_scale = cfg.grf.freq_scale > 0 ? cfg.grf.freq_scale : double(cfg.k) / 8.0;
  ds.ch = cfg.ch;
  ds.micro.resize(std::size_t(cfg.n) * cfg.k * cfg.k);
  ds.phi.resize(cfg.n);

  parallel_for(cfg.n, [&](std::int64_t i) {
    Rng pr(derive_seed(cfg.seed, std::uint64_t(i), 0));
    double phi = pr.uniform(cfg.phi_lo, cfg.phi_hi);
    GrfConfig g = cfg.grf;
    g.k = cfg.k;
    g.phi = phi;
    Mat field = sample_grf(g, derive_seed(cfg.seed, std::uint64_t(i), 1));
    Microstructure m = cahn_hilliard_evolve(threshold_to_vf(field, cfg.vf).micro, cfg.ch);
    ds.phi[i] = phi;
    std::copy(m.phase.begin(), m.phase.end(),
              ds.micro.begin() + std::ptrdiff_t(i) * cfg.k * cfg.k);
  });
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  nlohmann::ordered_json meta;
  meta["format_version"] = 1;
  meta["kind"] = "dataset";
  meta["n"] = ds.n;
  meta["k"] = ds.k;
  meta["seed"] = ds.seed;
  meta["vf"] = ds.vf;
  meta["grf_freq_scale"] = ds.grf_freq_scale;
  meta["ch"] = {{"D", ds.ch.D}, {"gamma", ds.ch.gamma}, {"dt", ds.ch.dt}, {"steps", ds.ch.steps}};
  meta["phi"] = ds.phi;
  if (!ds.tasks.empty()) {
    nlohmann::ordered_json lab;
    lab["grid"] = ds.grid;
    lab["tasks"] = ds.tasks;
    lab["solver_tol"] = ds.solver_tol;
    lab["kappa1"] = ds.kappa1;
    lab["kappa2"] = ds.kappa2;
    lab["channels_property"] = {"T_h", "qx_h", "qy_h", "T_v", "qx_v", "qy_v"};
    meta["label"] = lab;
  }
  write_text(dir / "meta.json", meta.dump(2) + "\n");
  write_bytes(dir / "micro.u8", ds.micro.data(), ds.micro.size());
  if (ds.has_task("property")) {
    write_f32(dir / "fields_property.f32", ds.fields_property);
    write_f32(dir / "kappa.f32", ds.kappa);
  }
  if (ds.has_task("field")) write_f32(dir / "fields_field.f32", ds.fields_field);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  auto meta = nlohmann::json::parse(read_text(dir / "meta.json"));
  Dataset ds;
  ds.n = meta.at("n").get<int>();
  ds.k = meta.at("k").get<int>();
  ds.seed = meta.at("seed").get<std::uint64_t>();
  ds.vf = meta.at("vf").get<double>();
  ds.grf_freq_scale = meta.at("grf_freq_scale").get<double>();
  ds.ch.D = meta.at("ch").at("D").get<double>();
  ds.ch.gamma = meta.at("ch").at("gamma").get<double>();
  ds.ch.dt = meta.at("ch").at("dt").get<double>();
  ds.ch.steps = meta.at("ch").at("steps").get<int>();
  ds.phi = meta.at("phi").get<std::vector<double>>();
  ds.micro = read_bytes(dir / "micro.u8");
  if (ds.micro.size() != std::size_t(ds.n) * ds.k * ds.k)
    throw std::runtime_error("load_dataset: micro.u8 size mismatch");
  if (int(ds.phi.size()) != ds.n)
    throw std::runtime_error("load_dataset: phi list size mismatch");

  if (meta.contains("label")) {
    const auto& lab = meta.at("label");
    ds.grid = lab.at("grid").get<int>();
    ds.tasks = lab.at("tasks").get<std::vector<std::string>>();
    ds.solver_tol = lab.at("solver_tol").get<double>();
    ds.kappa1 = lab.at("kappa1").get<double>();
    ds.kappa2 = lab.at("kappa2").get<double>();
    std::size_t gg = std::size_t(ds.grid) * ds.grid;
    if (ds.has_task("property")) {
      ds.fields_property = read_f32(dir / "fields_property.f32");
      ds.kappa = read_f32(dir / "kappa.f32");
      if (ds.fields_property.size() != std::size_t(ds.n) * 6 * gg)
        throw std::runtime_error("load_dataset: fields_property.f32 size mismatch");
      if (ds.kappa.size() != std::size_t(ds.n) * 2)
        throw std::runtime_error("load_dataset: kappa.f32 size mismatch");
    }
    if (ds.has_task("field")) {
      ds.fields_field = read_f32(dir / "fields_field.f32");
      if (ds.fields_field.size() != std::size_t(ds.n) * gg)
        throw std::runtime_error("load_dataset: fields_field.f32 size mismatch");
    }
  }
  return ds;
}

}  // namespace md::microgen
