#include "microdesign/design.hpp"

#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <sstream>

namespace md::design {

using ad::Var;

namespace {

constexpr double kAbsEps2 = 1e-12;  // smooth-abs floor, also the p3 kv clamp

// exp(0.5 * log(s^2 + eps^2)) = sqrt(s^2 + eps^2), built from graph ops
Var smooth_abs(Var s) {
  ad::Graph& g = *s.g;
  Var s2 = ad::add(ad::square(s), g.constant(kAbsEps2));
  return ad::exp(ad::scale(ad::log(s2), 0.5));
}

Var smooth_log_abs(Var s) {
  ad::Graph& g = *s.g;
  return ad::scale(ad::log(ad::add(ad::square(s), g.constant(kAbsEps2))), 0.5);
}

}  // namespace

PredictedKappa predicted_kappa(ad::Graph& g, const nets::VarMultiOnet& u,
                               Var beta, int E) {
  if (u.channels != 6)
    throw std::invalid_argument("predicted_kappa: needs the 6-channel property decoder");
  auto ev = nets::multionet_branch(g, u, beta);
  std::vector<Var> ch = ev.eval(nets::grid_centers(E));
  Var sh = ad::mean(ch[1]);  // qx under horizontal loading
  Var sv = ad::mean(ch[5]);  // qy under vertical loading
  return {smooth_abs(sh), smooth_abs(sv)};
}

double cross_correlation(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("cross_correlation: shape mismatch");
  double num = (a.array().square() * b.array().square()).sum();
  double sa = a.array().square().sum();
  double sb = b.array().square().sum();
  double den = std::sqrt(sa * sb);
  if (den == 0.0) return 0.0;
  return num / den;
}

// builds the variant objective at the current beta and differentiates it
StepEval eval_objective(const Problem& prob, const nets::ModelParams& model,
                        const RunConfig& run, const Mat& beta_val) {
  ad::Graph g;
  Var beta = g.param(beta_val);
  nets::VarFlow flow = nets::bind_flow(g, model.flow, model.cfg.d_beta, false);
  Var prior = nets::prior_logdensity(flow, beta);  // 1 x 1

  StepEval out{0.0, Mat(), 0.0, 0.0};
  Var obj;
  if (prob.variant == "p1") {
    nets::VarMultiOnet u = nets::bind_multionet(g, model.dec_u, false);
    PredictedKappa pk = predicted_kappa(g, u, beta, run.kappa_grid);
    out.kh = g.value(pk.kh)(0, 0);
    out.kv = g.value(pk.kv)(0, 0);
    const P1Target& t = prob.p1;
    bool inside = out.kh >= t.kh_lo && out.kh <= t.kh_hi && out.kv >= t.kv_lo &&
                  out.kv <= t.kv_hi;
    if (inside) {
      obj = prior;  // likelihood contributes a constant 0 inside the box
    } else {
      double ch = 0.5 * (t.kh_lo + t.kh_hi), cv = 0.5 * (t.kv_lo + t.kv_hi);
      Var d2 = ad::add(ad::square(ad::sub(pk.kh, g.constant(ch))),
                       ad::square(ad::sub(pk.kv, g.constant(cv))));
      obj = ad::add(ad::scale(d2, -t.tau), prior);
    }
  } else if (prob.variant == "p2") {
    nets::VarMultiOnet u = nets::bind_multionet(g, model.dec_u, false);
    if (u.channels != 1)
      throw std::invalid_argument("p2 needs a field-task checkpoint (1 channel)");
    auto ev = nets::multionet_branch(g, u, beta);
    Var pred = ev.eval(prob.p2.sensors)[0];  // 1 x n
    Mat target = prob.p2.values.transpose();
    double tau_u = prob.p2.tau_u;
    if (tau_u <= 0) {
      double tau_u_inv = prob.p2.values.squaredNorm();
      tau_u = tau_u_inv > 0 ? 1.0 / tau_u_inv : 1.0;
    }
    Var misfit = ad::sum(ad::square(ad::sub(pred, g.constant(target))));
    obj = ad::add(ad::scale(misfit, -tau_u), prior);
  } else if (prob.variant == "p3") {
    nets::VarMultiOnet u = nets::bind_multionet(g, model.dec_u, false);
    auto ev = nets::multionet_branch(g, u, beta);
    std::vector<Var> ch = ev.eval(nets::grid_centers(run.kappa_grid));
    Var sh = ad::mean(ch[1]);
    Var sv = ad::mean(ch[5]);
    out.kh = std::sqrt(std::pow(g.value(sh)(0, 0), 2) + kAbsEps2);
    out.kv = std::sqrt(std::pow(g.value(sv)(0, 0), 2) + kAbsEps2);
    Var logF = ad::sub(smooth_log_abs(sh), smooth_log_abs(sv));
    obj = ad::add(ad::scale(logF, prob.p3.alpha), prior);
  } else {
    throw std::invalid_argument("unknown design variant " + prob.variant);
  }

  out.objective = g.value(obj)(0, 0);
  if (!std::isfinite(out.objective))
    throw std::runtime_error("design: non-finite objective");
  g.backward(obj);
  out.grad = g.grad(beta);
  return out;
}

Report run_design(const Problem& prob, const nets::ModelParams& model,
                  const RunConfig& run, const fv::SolveConfig& oracle) {
  if (run.restarts <= 0 || run.steps < 0)
    throw std::invalid_argument("run_design: bad restarts/steps");
  if (prob.variant == "p2" &&
      (prob.p2.sensors.cols() == 0 || prob.p2.sensors.cols() != prob.p2.values.size()))
    throw std::invalid_argument("run_design: p2 sensors/values mismatch");

  const int d = model.cfg.d_beta;
  const int K = model.cfg.k;
  Report rep;
  rep.problem = prob;
  rep.run = run;
  rep.restarts.resize(std::size_t(run.restarts));

  parallel_for(run.restarts, [&](std::int64_t r) {
    RestartResult& rr = rep.restarts[std::size_t(r)];
    rr.restart = int(r);
    rr.seed = derive_seed(run.seed, std::uint64_t(r));
    Rng rng(rr.seed);
    Mat z(d, 1);
    for (int i = 0; i < d; ++i) z(i, 0) = rng.normal();
    Mat beta = nets::flow_inverse(model.flow, z);

    std::vector<Mat*> bp{&beta};
    ad::AdamState adam;
    ad::adam_init(adam, bp);
    rr.trace.reserve(std::size_t(run.steps));
    for (int step = 0; step < run.steps; ++step) {
      StepEval se = eval_objective(prob, model, run, beta);
      rr.trace.push_back(se.objective);
      double lr = run.lr *
                  std::pow(0.5, run.lr_halve_every > 0 ? double(step / run.lr_halve_every) : 0.0);
      std::vector<Mat> grads{Mat(-se.grad)};  // ascend
      ad::adam_step(bp, grads, adam, lr);
    }
    StepEval fin = eval_objective(prob, model, run, beta);
    rr.objective = fin.objective;
    rr.beta = beta.col(0);
    rr.pred_kh = fin.kh;
    rr.pred_kv = fin.kv;

    // decode and threshold
    ad::Graph g;
    nets::VarMultiOnet muv = nets::bind_multionet(g, model.dec_mu, false);
    Var probs = nets::decode_micro_probs(g, muv, g.constant(beta), K);
    const Mat& pv = g.value(probs);
    rr.micro.k = K;
    rr.micro.phase.resize(std::size_t(K) * K);
    for (int j = 0; j < K * K; ++j)
      rr.micro.phase[std::size_t(j)] = pv(0, j) >= 0.5 ? 1 : 0;

    fv::Kappa kap = fv::effective_conductivity(rr.micro, oracle);
    rr.oracle_kh = kap.h;
    rr.oracle_kv = kap.v;
    if (prob.variant == "p1") {
      const P1Target& t = prob.p1;
      rr.inside_box = kap.h >= t.kh_lo && kap.h <= t.kh_hi && kap.v >= t.kv_lo &&
                      kap.v <= t.kv_hi;
    }
    if (prob.variant == "p2" && prob.p2.has_reference) {
      Mat a(K, K), b(K, K);
      for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j) {
          a(i, j) = double(rr.micro.at(i, j));
          b(i, j) = double(prob.p2.reference.at(i, j));
        }
      rr.icorr = cross_correlation(a, b);
    }
  });

  int inside = 0;
  double best_ic = 0.0, ratio_sum = 0.0;
  for (const auto& rr : rep.restarts) {
    if (rr.inside_box) ++inside;
    best_ic = std::max(best_ic, rr.icorr);
    ratio_sum += rr.oracle_kh / std::max(rr.oracle_kv, 1e-12);
  }
  rep.success_rate = double(inside) / double(run.restarts);
  rep.best_icorr = best_ic;
  rep.mean_ratio = ratio_sum / double(run.restarts);
  return rep;
}

void save_report(const Report& rep, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const int K = rep.restarts.empty() ? 0 : rep.restarts.front().micro.k;

  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["kind"] = "design_report";
  j["variant"] = rep.problem.variant;
  nlohmann::ordered_json target;
  if (rep.problem.variant == "p1") {
    target["box"] = {rep.problem.p1.kh_lo, rep.problem.p1.kh_hi, rep.problem.p1.kv_lo,
                     rep.problem.p1.kv_hi};
    target["tau"] = rep.problem.p1.tau;
  } else if (rep.problem.variant == "p2") {
    nlohmann::ordered_json sensors = nlohmann::ordered_json::array();
    for (int i = 0; i < rep.problem.p2.sensors.cols(); ++i)
      sensors.push_back({rep.problem.p2.sensors(0, i), rep.problem.p2.sensors(1, i)});
    target["sensors"] = sensors;
    target["values"] = std::vector<double>(
        rep.problem.p2.values.data(),
        rep.problem.p2.values.data() + rep.problem.p2.values.size());
    if (rep.problem.p2.tau_u > 0) target["tau_u"] = rep.problem.p2.tau_u;
    if (rep.problem.p2.has_reference)
      target["reference_micro"] = std::vector<int>(rep.problem.p2.reference.phase.begin(),
                                                   rep.problem.p2.reference.phase.end());
  } else {
    target["alpha"] = rep.problem.p3.alpha;
  }
  j["target"] = target;

  nlohmann::ordered_json tj;
  tj["format_version"] = 1;
  tj["kind"] = "design_target";
  tj["variant"] = rep.problem.variant;
  if (rep.problem.variant == "p2" && rep.problem.p2.has_reference)
    tj["k"] = rep.problem.p2.reference.k;
  tj["target"] = target;
  write_text(dir / "target.json", tj.dump(2) + "\n");

  j["run"] = {{"restarts", rep.run.restarts}, {"steps", rep.run.steps},
              {"lr", rep.run.lr},             {"lr_halve_every", rep.run.lr_halve_every},
              {"seed", rep.run.seed},         {"kappa_grid", rep.run.kappa_grid},
              {"oracle_grid", rep.run.oracle_grid}};
  j["k"] = K;

  nlohmann::ordered_json restarts = nlohmann::ordered_json::array();
  for (const auto& rr : rep.restarts) {
    nlohmann::ordered_json e;
    e["restart"] = rr.restart;
    e["seed"] = rr.seed;
    e["objective"] = rr.objective;
    e["predicted"] = {{"kh", rr.pred_kh}, {"kv", rr.pred_kv}};
    e["oracle"] = {{"kh", rr.oracle_kh}, {"kv", rr.oracle_kv}};
    if (rep.problem.variant == "p1") e["inside_box"] = rr.inside_box;
    if (rep.problem.variant == "p2") e["icorr"] = rr.icorr;
    if (rep.problem.variant == "p3")
      e["ratio"] = rr.oracle_kh / std::max(rr.oracle_kv, 1e-12);
    e["beta"] = std::vector<double>(rr.beta.data(), rr.beta.data() + rr.beta.size());
    restarts.push_back(e);
  }
  j["restarts"] = restarts;
  j["aggregates"] = {{"success_rate", rep.success_rate},
                     {"best_icorr", rep.best_icorr},
                     {"mean_ratio", rep.mean_ratio}};
  write_text(dir / "report.json", j.dump(2) + "\n");

  std::vector<std::uint8_t> blob;
  blob.reserve(rep.restarts.size() * std::size_t(K) * K);
  for (const auto& rr : rep.restarts)
    blob.insert(blob.end(), rr.micro.phase.begin(), rr.micro.phase.end());
  write_bytes(dir / "designs.u8", blob.data(), blob.size());

  std::ostringstream csv;
  csv << "step";
  for (const auto& rr : rep.restarts) csv << ",restart_" << rr.restart;
  csv << "\n";
  std::size_t steps = rep.restarts.empty() ? 0 : rep.restarts.front().trace.size();
  for (std::size_t s = 0; s < steps; ++s) {
    csv << s;
    for (const auto& rr : rep.restarts) {
      csv << ',' << std::setprecision(17) << rr.trace[s];
    }
    csv << "\n";
  }
  write_text(dir / "traces.csv", csv.str());
}

EvalResult evaluate_designs(const std::filesystem::path& designs_dir,
                            const fv::SolveConfig& oracle) {
  auto j = nlohmann::json::parse(read_text(designs_dir / "report.json"));
  const int K = j.at("k").get<int>();
  auto blob = read_bytes(designs_dir / "designs.u8");
  if (K <= 0 || blob.empty())
    throw std::runtime_error("evaluate_designs: empty design set");
  if (blob.size() % (std::size_t(K) * K) != 0)
    throw std::runtime_error("evaluate_designs: designs.u8 size mismatch");
  const std::size_t n = blob.size() / (std::size_t(K) * K);

  EvalResult out;
  out.kh.resize(n);
  out.kv.resize(n);
  parallel_for(std::int64_t(n), [&](std::int64_t i) {
    microgen::Microstructure m;
    m.k = K;
    m.phase.assign(blob.begin() + std::ptrdiff_t(i) * K * K,
                   blob.begin() + std::ptrdiff_t(i + 1) * K * K);
    fv::Kappa kap = fv::effective_conductivity(m, oracle);
    out.kh[std::size_t(i)] = kap.h;
    out.kv[std::size_t(i)] = kap.v;
  });
  return out;
}

}  // namespace md::design
