#include "microdesign/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "microdesign/design.hpp"
#include "microdesign/fv_solver.hpp"
#include "microdesign/microgen.hpp"
#include "microdesign/plots.hpp"
#include "microdesign/training.hpp"

namespace md::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "0.1.0";

class Stopwatch {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

ordered_json manifest_base(const std::string& kind,
                           const std::vector<std::string>& argv) {
  ordered_json m;
  m["format_version"] = 1;
  m["kind"] = kind;
  m["tool"] = "microdesign";
  m["version"] = kVersion;
  m["argv"] = argv;
  m["threads"] = worker_count();
  return m;
}

void finish_manifest(ordered_json& m, const Stopwatch& sw, const fs::path& dir,
                     const std::string& name = "manifest.json") {
  m["duration_seconds"] = sw.seconds();
  fs::create_directories(dir);
  write_text(dir / name, m.dump(2) + "\n");
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void require_empty_or_force(const fs::path& out, bool force) {
  if (fs::exists(out) && !fs::is_empty(out) && !force)
    throw std::runtime_error("output directory " + out.string() +
                             " is not empty (pass --force to overwrite)");
}

// ---------------------------------------------------------------------------
// gen-data

struct GenArgs {
  int n = 0, k = 32;
  std::uint64_t seed = 0;
  std::string out;
  bool force = false;
  double vf = 1.0 / 3.0, freq_scale = 0.0;
  double phi_lo = 1.0, phi_hi = 9.0;
  int ch_steps = 1000;
  double ch_dt = 0.01, ch_D = 50.0, ch_gamma = 1.0;
};

int run_gen_data(const GenArgs& a, const std::vector<std::string>& argv) {
  Stopwatch sw;
  require_empty_or_force(a.out, a.force);
  microgen::DatasetConfig cfg;
  cfg.n = a.n;
  cfg.k = a.k;
  cfg.seed = a.seed;
  cfg.vf = a.vf;
  cfg.phi_lo = a.phi_lo;
  cfg.phi_hi = a.phi_hi;
  cfg.grf.freq_scale = a.freq_scale;
  cfg.ch = {a.ch_D, a.ch_gamma, a.ch_dt, a.ch_steps};
  auto ds = microgen::generate_dataset(cfg);
  microgen::save_dataset(ds, a.out);

  auto m = manifest_base("gen-data", argv);
  m["config"] = {{"n", a.n},           {"k", a.k},
                 {"seed", a.seed},     {"vf", a.vf},
                 {"freq_scale", a.freq_scale}, {"phi_lo", a.phi_lo},
                 {"phi_hi", a.phi_hi}, {"ch_steps", a.ch_steps},
                 {"ch_dt", a.ch_dt},   {"ch_D", a.ch_D},
                 {"ch_gamma", a.ch_gamma}};
  m["outputs"] = {a.out};
  finish_manifest(m, sw, a.out);
  std::cout << "wrote " << a.n << " samples (" << a.k << "x" << a.k << ") to "
            << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// label

struct LabelArgs {
  std::string data, tasks = "property";
  int grid = 64, max_iter = 50000;
  double tol = 1e-12, kappa1 = 10.0, kappa2 = 2.0;
};

int run_label(const LabelArgs& a, const std::vector<std::string>& argv) {
  Stopwatch sw;
  auto ds = microgen::load_dataset(a.data);
  auto tasks = split_csv(a.tasks);
  fv::SolveConfig cfg{a.grid, a.tol, a.max_iter, a.kappa1, a.kappa2};
  fv::label_dataset(ds, a.grid, tasks, cfg);
  microgen::save_dataset(ds, a.data);

  auto m = manifest_base("label", argv);
  m["config"] = {{"grid", a.grid},     {"tasks", tasks},
                 {"tol", a.tol},       {"max_iter", a.max_iter},
                 {"kappa1", a.kappa1}, {"kappa2", a.kappa2}};
  m["inputs"] = {a.data};
  m["outputs"] = {a.data};
  finish_manifest(m, sw, a.data, "manifest_label.json");
  std::cout << "labeled " << ds.n << " samples on a " << a.grid << "x" << a.grid
            << " grid (tasks:";
  for (const auto& t : tasks) std::cout << " " << t;
  std::cout << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string data, out, task = "property";
  int epochs = 1000, batch = 25;
  double lr = 5e-4;
  int lr_halve_every = 200;
  double lambda_pde = 0.25, lambda_data = 0.5, lambda_kl = 2.0;
  double weight_decay = 0.0;
  bool unlabeled_only = false, no_virtual = false, quiet = false;
  std::uint64_t seed = 0;
  int checkpoint_every = 100;
  int d_beta = 128;
  std::string enc_hidden = "512,128";
  int mu_width = 256, mu_depth = 5, u_width = 100, u_depth = 5;
  int flow_steps = 3, flow_hidden = 64;
  int tf_count = 100, tf_nq = 12;
  double tf_rmin = 0.05, tf_rmax = 0.25;
  int cons_points = 64, bc_points = 32;
  double h_spatial = 1e-3;
};

int run_train(const TrainArgs& a, const std::vector<std::string>& argv) {
  Stopwatch sw;
  auto ds = microgen::load_dataset(a.data);

  train::TrainConfig cfg;
  cfg.task = a.task;
  cfg.epochs = a.epochs;
  cfg.batch = a.batch;
  cfg.lr = a.lr;
  cfg.lr_halve_every = a.lr_halve_every;
  cfg.lambda_pde = a.lambda_pde;
  cfg.lambda_data = a.lambda_data;
  cfg.lambda_kl = a.lambda_kl;
  cfg.weight_decay = a.weight_decay;
  cfg.use_labeled = !a.unlabeled_only;
  cfg.use_virtual = !a.no_virtual;
  cfg.seed = a.seed;
  cfg.checkpoint_every = a.checkpoint_every;
  cfg.pde.tf = {a.tf_count, a.tf_rmin, a.tf_rmax, a.tf_nq};
  cfg.pde.consistency_points = a.cons_points;
  cfg.pde.bc_points_per_edge = a.bc_points;
  cfg.pde.h_spatial = a.h_spatial;
  cfg.model.d_beta = a.d_beta;
  {
    std::vector<int> hidden;
    for (const auto& tok : split_csv(a.enc_hidden)) hidden.push_back(std::stoi(tok));
    if (hidden.empty()) throw std::runtime_error("--enc-hidden: no layer widths given");
    cfg.model.enc_hidden = hidden;
  }
  cfg.model.mu_width = a.mu_width;
  cfg.model.mu_depth = a.mu_depth;
  cfg.model.u_width = a.u_width;
  cfg.model.u_depth = a.u_depth;
  cfg.model.flow_steps = a.flow_steps;
  cfg.model.flow_hidden = a.flow_hidden;

  train::ProgressFn progress;
  if (!a.quiet)
    progress = [&](int epoch, const train::EpochLosses& l) {
      std::fprintf(stderr,
                   "epoch %4d/%d  rec %.5g  kl %.5g  data %.5g  pde %.5g  total %.5g\n",
                   epoch + 1, a.epochs, l.rec, l.kl, l.data, l.pde, l.total);
    };
  train::train(ds, cfg, a.out, progress);

  auto m = manifest_base("train", argv);
  m["config"] = {{"task", a.task},
                 {"epochs", a.epochs},
                 {"batch", a.batch},
                 {"lr", a.lr},
                 {"lr_halve_every", a.lr_halve_every},
                 {"lambda_pde", a.lambda_pde},
                 {"lambda_data", a.lambda_data},
                 {"lambda_kl", a.lambda_kl},
                 {"weight_decay", a.weight_decay},
                 {"use_labeled", cfg.use_labeled},
                 {"use_virtual", cfg.use_virtual},
                 {"seed", a.seed},
                 {"checkpoint_every", a.checkpoint_every},
                 {"d_beta", a.d_beta},
                 {"enc_hidden", a.enc_hidden},
                 {"mu_width", a.mu_width},
                 {"mu_depth", a.mu_depth},
                 {"u_width", a.u_width},
                 {"u_depth", a.u_depth},
                 {"flow_steps", a.flow_steps},
                 {"flow_hidden", a.flow_hidden},
                 {"tf_count", a.tf_count},
                 {"tf_nq", a.tf_nq},
                 {"tf_rmin", a.tf_rmin},
                 {"tf_rmax", a.tf_rmax},
                 {"cons_points", a.cons_points},
                 {"bc_points", a.bc_points},
                 {"h_spatial", a.h_spatial}};
  m["inputs"] = {a.data};
  m["outputs"] = {a.out};
  finish_manifest(m, sw, a.out);
  std::cout << "checkpoint written to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// design

struct DesignArgs {
  std::string checkpoint, out;
  int restarts = 50, steps = 500;
  double lr = 0.01;
  int lr_halve_every = 100;
  std::uint64_t seed = 0;
  int kappa_grid = 64, oracle_grid = 64;
  double oracle_tol = 1e-12, kappa1 = 10.0, kappa2 = 2.0;
  // p1
  std::vector<double> target_box;  // kh_lo, kh_hi, kv_lo, kv_hi
  double tau = 10.0;
  // p2
  std::string target_json, data;
  int sample_index = 0, sensor_grid = 8;
  double tau_u = 0.0;  // <=0: 1/||target||^2
  // p3
  double alpha = 10.0;
};

design::P2Target p2_from_json(const std::string& path) {
  auto j = nlohmann::json::parse(read_text(path));
  const nlohmann::json* t = &j;
  if (j.contains("target")) t = &j.at("target");
  design::P2Target out;
  const auto& sensors = t->at("sensors");
  out.sensors.resize(2, (Eigen::Index)sensors.size());
  for (Eigen::Index i = 0; i < out.sensors.cols(); ++i) {
    out.sensors(0, i) = sensors[i][0].get<double>();
    out.sensors(1, i) = sensors[i][1].get<double>();
  }
  const auto& values = t->at("values");
  out.values.resize((Eigen::Index)values.size());
  for (Eigen::Index i = 0; i < out.values.size(); ++i)
    out.values[i] = values[i].get<double>();
  if (t->contains("tau_u")) out.tau_u = t->at("tau_u").get<double>();
  if (t->contains("reference_micro")) {
    const int k = j.at("k").get<int>();
    auto ph = t->at("reference_micro").get<std::vector<int>>();
    if ((int)ph.size() != k * k)
      throw std::runtime_error("target json: reference_micro size != k*k");
    out.reference.k = k;
    out.reference.phase.assign(ph.begin(), ph.end());
    out.reference.validate();
    out.has_reference = true;
  }
  return out;
}

// Simulates the reference measurement: recovery-loading FV solve on the chosen
// dataset sample, read off at an inset sensor grid.
design::P2Target p2_from_dataset(const DesignArgs& a) {
  auto ds = microgen::load_dataset(a.data);
  if (a.sample_index < 0 || a.sample_index >= ds.n)
    throw std::runtime_error("--sample-index out of range (dataset has " +
                             std::to_string(ds.n) + " samples)");
  design::P2Target out;
  out.reference = ds.sample(a.sample_index);
  out.has_reference = true;
  fv::SolveConfig cfg{a.oracle_grid, a.oracle_tol, 50000, a.kappa1, a.kappa2};
  auto sol = fv::solve(out.reference, fv::recovery_bc(), cfg);
  const int sg = a.sensor_grid;
  if (sg <= 0) throw std::runtime_error("--sensor-grid must be positive");
  out.sensors.resize(2, sg * sg);
  for (int i = 0; i < sg; ++i)
    for (int j = 0; j < sg; ++j) {
      out.sensors(0, i * sg + j) = (j + 0.5) / sg;
      out.sensors(1, i * sg + j) = (i + 0.5) / sg;
    }
  out.values = fv::sample_bilinear(sol.T, out.sensors);
  return out;
}

int run_design(const std::string& variant, const DesignArgs& a,
               const std::vector<std::string>& argv) {
  Stopwatch sw;
  auto loaded = nets::load_model(a.checkpoint);

  design::Problem prob;
  prob.variant = variant;
  if (variant == "p1") {
    if (a.target_box.size() != 4)
      throw std::runtime_error("--target-box needs 4 values: kh_lo,kh_hi,kv_lo,kv_hi");
    prob.p1 = {a.target_box[0], a.target_box[1], a.target_box[2], a.target_box[3], a.tau};
    if (!(prob.p1.kh_lo < prob.p1.kh_hi && prob.p1.kv_lo < prob.p1.kv_hi))
      throw std::runtime_error("--target-box bounds must satisfy lo < hi");
  } else if (variant == "p2") {
    if (!a.target_json.empty())
      prob.p2 = p2_from_json(a.target_json);
    else if (!a.data.empty())
      prob.p2 = p2_from_dataset(a);
    else
      throw std::runtime_error("design p2 needs --target-json or --data/--sample-index");
    if (a.tau_u > 0) prob.p2.tau_u = a.tau_u;
  } else {
    prob.p3.alpha = a.alpha;
  }

  design::RunConfig run{a.restarts,       a.steps,      a.lr,
                        a.lr_halve_every, a.seed,       a.kappa_grid,
                        a.oracle_grid};
  fv::SolveConfig oracle{a.oracle_grid, a.oracle_tol, 50000, a.kappa1, a.kappa2};
  auto rep = design::run_design(prob, loaded.params, run, oracle);
  design::save_report(rep, a.out);

  auto m = manifest_base("design-" + variant, argv);
  m["config"] = {{"restarts", a.restarts},
                 {"steps", a.steps},
                 {"lr", a.lr},
                 {"lr_halve_every", a.lr_halve_every},
                 {"seed", a.seed},
                 {"kappa_grid", a.kappa_grid},
                 {"oracle_grid", a.oracle_grid},
                 {"oracle_tol", a.oracle_tol},
                 {"kappa1", a.kappa1},
                 {"kappa2", a.kappa2}};
  m["inputs"] = {a.checkpoint};
  if (!a.target_json.empty()) m["inputs"].push_back(a.target_json);
  if (!a.data.empty()) m["inputs"].push_back(a.data);
  m["outputs"] = {a.out};
  finish_manifest(m, sw, a.out);

  std::cout << "design " << variant << ": " << rep.restarts.size() << " restarts";
  if (variant == "p1")
    std::cout << ", success rate " << rep.success_rate;
  else if (variant == "p2")
    std::cout << ", best correlation " << rep.best_icorr;
  else
    std::cout << ", mean anisotropy ratio " << rep.mean_ratio;
  std::cout << "; report in " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval / plots

struct EvalArgs {
  std::string designs;
  int grid = 64;
  double tol = 1e-12, kappa1 = 10.0, kappa2 = 2.0;
};

int run_eval(const EvalArgs& a, const std::vector<std::string>& argv) {
  Stopwatch sw;
  fv::SolveConfig cfg{a.grid, a.tol, 50000, a.kappa1, a.kappa2};
  auto res = design::evaluate_designs(a.designs, cfg);

  ordered_json j;
  j["format_version"] = 1;
  j["kind"] = "design_eval";
  j["grid"] = a.grid;
  j["kh"] = res.kh;
  j["kv"] = res.kv;
  double mh = 0, mv = 0;
  for (std::size_t i = 0; i < res.kh.size(); ++i) {
    mh += res.kh[i];
    mv += res.kv[i];
  }
  const double n = std::max<std::size_t>(res.kh.size(), 1);
  j["mean_kh"] = mh / n;
  j["mean_kv"] = mv / n;
  write_text(fs::path(a.designs) / "eval.json", j.dump(2) + "\n");

  auto m = manifest_base("eval", argv);
  m["config"] = {{"grid", a.grid}, {"tol", a.tol},
                 {"kappa1", a.kappa1}, {"kappa2", a.kappa2}};
  m["inputs"] = {a.designs};
  m["outputs"] = {(fs::path(a.designs) / "eval.json").string()};
  finish_manifest(m, sw, a.designs, "manifest_eval.json");
  std::cout << "evaluated " << res.kh.size() << " designs, mean kappa ("
            << j["mean_kh"].get<double>() << ", " << j["mean_kv"].get<double>()
            << "); eval.json written\n";
  return 0;
}

struct PlotsArgs {
  std::string report, data, out;
};

int run_plots(const PlotsArgs& a, const std::vector<std::string>& argv) {
  Stopwatch sw;
  fs::path out = a.out.empty() ? fs::path(a.report) / "plots" : fs::path(a.out);
  plots::render_report(a.report, a.data, out);

  auto m = manifest_base("plots", argv);
  m["inputs"] = {a.report};
  if (!a.data.empty()) m["inputs"].push_back(a.data);
  m["outputs"] = {out.string()};
  finish_manifest(m, sw, out);
  std::cout << "plots written to " << out.string() << "\n";
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  std::vector<std::string> argv_vec(argv, argv + argc);

  CLI::App app{"Two-phase microstructure dataset generation, generative operator "
               "training and inverse design"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  GenArgs ga;
  auto* gen = app.add_subcommand("gen-data", "Generate a microstructure dataset");
  gen->add_option("--n", ga.n, "number of samples")->required();
  gen->add_option("--k", ga.k, "pixel resolution")->capture_default_str();
  gen->add_option("--seed", ga.seed, "master seed")->capture_default_str();
  gen->add_option("--out", ga.out, "output directory")->required();
  gen->add_flag("--force", ga.force, "overwrite a non-empty output directory");
  gen->add_option("--vf", ga.vf, "phase-1 volume fraction")->capture_default_str();
  gen->add_option("--freq-scale", ga.freq_scale,
                  "spectral frequency scale (0 = k/8)")->capture_default_str();
  gen->add_option("--phi-lo", ga.phi_lo, "anisotropy parameter lower bound")->capture_default_str();
  gen->add_option("--phi-hi", ga.phi_hi, "anisotropy parameter upper bound")->capture_default_str();
  gen->add_option("--ch-steps", ga.ch_steps, "Cahn-Hilliard steps")->capture_default_str();
  gen->add_option("--ch-dt", ga.ch_dt, "Cahn-Hilliard time step")->capture_default_str();

  LabelArgs la;
  auto* lab = app.add_subcommand("label", "Attach finite-volume labels to a dataset");
  lab->add_option("--data", la.data, "dataset directory")->required();
  lab->add_option("--grid", la.grid, "solver grid (multiple of k)")->capture_default_str();
  lab->add_option("--tasks", la.tasks, "comma list from {property,field}")->capture_default_str();
  lab->add_option("--tol", la.tol, "CG relative tolerance")->capture_default_str();
  lab->add_option("--max-iter", la.max_iter, "CG iteration cap")->capture_default_str();
  lab->add_option("--kappa1", la.kappa1, "phase-1 conductivity")->capture_default_str();
  lab->add_option("--kappa2", la.kappa2, "phase-0 conductivity")->capture_default_str();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train the generative operator model");
  tr->add_option("--data", ta.data, "dataset directory")->required();
  tr->add_option("--out", ta.out, "checkpoint directory")->required();
  tr->add_option("--task", ta.task, "property | field")->capture_default_str();
  tr->add_option("--epochs", ta.epochs, "training epochs")->capture_default_str();
  tr->add_option("--batch", ta.batch, "batch size")->capture_default_str();
  tr->add_option("--lr", ta.lr, "Adam learning rate")->capture_default_str();
  tr->add_option("--lr-halve-every", ta.lr_halve_every, "epochs per halving")->capture_default_str();
  tr->add_option("--lambda-pde", ta.lambda_pde, "physics-residual weight")->capture_default_str();
  tr->add_option("--lambda-data", ta.lambda_data, "labeled-data weight")->capture_default_str();
  tr->add_option("--lambda-kl", ta.lambda_kl, "prior weight")->capture_default_str();
  tr->add_option("--weight-decay", ta.weight_decay,
                 "decoupled L2 on encoder/decoder weights")->capture_default_str();
  tr->add_flag("--unlabeled-only", ta.unlabeled_only,
               "ignore labels (disable the data term)");
  tr->add_flag("--no-virtual", ta.no_virtual, "disable the physics residual term");
  tr->add_flag("--quiet", ta.quiet, "suppress per-epoch progress");
  tr->add_option("--seed", ta.seed, "training seed")->capture_default_str();
  tr->add_option("--checkpoint-every", ta.checkpoint_every,
                 "snapshot period in epochs")->capture_default_str();
  tr->add_option("--d-beta", ta.d_beta, "latent dimension")->capture_default_str();
  tr->add_option("--enc-hidden", ta.enc_hidden, "encoder widths, comma list")->capture_default_str();
  tr->add_option("--mu-width", ta.mu_width, "microstructure decoder width")->capture_default_str();
  tr->add_option("--mu-depth", ta.mu_depth, "microstructure decoder depth")->capture_default_str();
  tr->add_option("--u-width", ta.u_width, "response decoder width")->capture_default_str();
  tr->add_option("--u-depth", ta.u_depth, "response decoder depth")->capture_default_str();
  tr->add_option("--flow-steps", ta.flow_steps, "flow coupling steps")->capture_default_str();
  tr->add_option("--flow-hidden", ta.flow_hidden, "flow net hidden width")->capture_default_str();
  tr->add_option("--tf-count", ta.tf_count, "test functions per sample")->capture_default_str();
  tr->add_option("--tf-nq", ta.tf_nq, "quadrature nodes per axis")->capture_default_str();
  tr->add_option("--tf-rmin", ta.tf_rmin, "min test-function radius")->capture_default_str();
  tr->add_option("--tf-rmax", ta.tf_rmax, "max test-function radius")->capture_default_str();
  tr->add_option("--cons-points", ta.cons_points, "consistency collocation points")->capture_default_str();
  tr->add_option("--bc-points", ta.bc_points, "boundary points per edge")->capture_default_str();
  tr->add_option("--h-spatial", ta.h_spatial, "finite-difference stencil size")->capture_default_str();

  DesignArgs da;
  auto* de = app.add_subcommand("design", "Inverse design in the latent space");
  de->require_subcommand(1);
  auto add_common = [&](CLI::App* s) {
    s->add_option("--checkpoint", da.checkpoint, "model checkpoint directory")
        ->required();
    s->add_option("--out", da.out, "report directory")->required();
    s->add_option("--restarts", da.restarts, "independent restarts")->capture_default_str();
    s->add_option("--steps", da.steps, "ascent steps per restart")->capture_default_str();
    s->add_option("--lr", da.lr, "Adam learning rate")->capture_default_str();
    s->add_option("--lr-halve-every", da.lr_halve_every, "steps per halving")->capture_default_str();
    s->add_option("--seed", da.seed, "design seed")->capture_default_str();
    s->add_option("--kappa-grid", da.kappa_grid, "predicted-kappa grid")->capture_default_str();
    s->add_option("--oracle-grid", da.oracle_grid, "verification FV grid")->capture_default_str();
    s->add_option("--oracle-tol", da.oracle_tol, "verification CG tolerance")->capture_default_str();
    s->add_option("--kappa1", da.kappa1, "phase-1 conductivity")->capture_default_str();
    s->add_option("--kappa2", da.kappa2, "phase-0 conductivity")->capture_default_str();
  };
  auto* p1 = de->add_subcommand("p1", "hit a target property box");
  add_common(p1);
  p1->add_option("--target-box", da.target_box,
                 "kh_lo,kh_hi,kv_lo,kv_hi")->required()->delimiter(',')->expected(4);
  p1->add_option("--tau", da.tau, "likelihood sharpness outside the box")->capture_default_str();
  auto* p2 = de->add_subcommand("p2", "recover a microstructure from sensors");
  add_common(p2);
  p2->add_option("--target-json", da.target_json, "target specification file");
  p2->add_option("--data", da.data, "dataset to draw the reference sample from");
  p2->add_option("--sample-index", da.sample_index, "reference sample index")->capture_default_str();
  p2->add_option("--sensor-grid", da.sensor_grid, "sensors per axis")->capture_default_str();
  p2->add_option("--tau-u", da.tau_u, "misfit weight (<=0 picks 1/||target||^2)")->capture_default_str();
  auto* p3 = de->add_subcommand("p3", "maximize the anisotropy utility");
  add_common(p3);
  p3->add_option("--alpha", da.alpha, "utility weight")->capture_default_str();

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Re-verify saved designs with the FV solver");
  ev->add_option("--designs", ea.designs, "design report directory")->required();
  ev->add_option("--grid", ea.grid, "FV grid")->capture_default_str();
  ev->add_option("--tol", ea.tol, "CG relative tolerance")->capture_default_str();
  ev->add_option("--kappa1", ea.kappa1, "phase-1 conductivity")->capture_default_str();
  ev->add_option("--kappa2", ea.kappa2, "phase-0 conductivity")->capture_default_str();

  PlotsArgs pa;
  auto* pl = app.add_subcommand("plots", "Render SVG/CSV views of a design report");
  pl->add_option("--report", pa.report, "design report directory")->required();
  pl->add_option("--data", pa.data, "dataset directory (training cloud)");
  pl->add_option("--out", pa.out, "output directory (default report/plots)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the message
    return 2;
  }

  try {
    if (*gen) return run_gen_data(ga, argv_vec);
    if (*lab) return run_label(la, argv_vec);
    if (*tr) return run_train(ta, argv_vec);
    if (*de) {
      if (*p1) return run_design("p1", da, argv_vec);
      if (*p2) return run_design("p2", da, argv_vec);
      return run_design("p3", da, argv_vec);
    }
    if (*ev) return run_eval(ea, argv_vec);
    if (*pl) return run_plots(pa, argv_vec);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;  // no subcommand matched (require_subcommand should prevent this)
}

}  // namespace md::cli
