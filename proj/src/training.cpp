#include "microdesign/training.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace md::train {

using ad::Var;

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  int halvings = cfg.lr_halve_every > 0 ? epoch / cfg.lr_halve_every : 0;
  return cfg.lr * std::pow(0.5, double(halvings));
}

Var loss_rec(Var probs, const Mat& targets) {
  ad::Graph& g = *probs.g;
  const Mat& pv = g.value(probs);
  if (pv.rows() != targets.rows() || pv.cols() != targets.cols())
    throw std::invalid_argument("loss_rec: probs/targets shape mismatch");
  const double eps = 1e-7;
  // smooth clamp into [eps, 1-eps]; keeps p=0.5 exact
  Var p = ad::add(ad::scale(probs, 1.0 - 2.0 * eps), g.constant(eps));
  Var z = g.constant(targets);
  Var zc = g.constant(Mat(Mat::Ones(targets.rows(), targets.cols()) - targets));
  Var one = g.constant(1.0);
  Var ll = ad::add(ad::mul(z, ad::log(p)), ad::mul(zc, ad::log(ad::sub(one, p))));
  return ad::transpose(ad::rowwise_sum(ll));
}

Var loss_kl(const nets::VarFlow& flow, Var beta) {
  nets::FlowForward ff = nets::flow_forward(flow, beta);
  Var ssum = ad::colwise_sum(ad::square(ff.z));
  return ad::sub(ff.logdet, ad::scale(ssum, 0.5));
}

Var loss_data(const std::vector<Var>& preds, const std::vector<Mat>& labels,
              double lambda_data) {
  if (preds.empty() || preds.size() != labels.size())
    throw std::invalid_argument("loss_data: channel count mismatch");
  ad::Graph& g = *preds[0].g;
  Var acc;
  for (std::size_t c = 0; c < preds.size(); ++c) {
    const Mat& pv = g.value(preds[c]);
    if (pv.rows() != labels[c].rows() || pv.cols() != labels[c].cols())
      throw std::invalid_argument("loss_data: pred/label shape mismatch");
    Var diff = ad::sub(preds[c], g.constant(labels[c]));
    Var ss = ad::rowwise_sum(ad::square(diff));  // S x 1
    acc = c == 0 ? ss : ad::add(acc, ss);
  }
  return ad::scale(ad::transpose(acc), -0.5 * lambda_data);
}

namespace {

struct ParamRefs {
  std::vector<std::string> names;
  std::vector<Mat*> mats;
};

ParamRefs collect_params(nets::ModelParams& p) {
  ParamRefs r;
  nets::for_each_tensor(p, [&](const std::string& n, Mat& m) {
    r.names.push_back(n);
    r.mats.push_back(&m);
  });
  return r;
}


std::string csv_num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::vector<std::string> tensor_names(const nets::ModelParams& p) {
  std::vector<std::string> names;
  nets::for_each_tensor(p, [&](const std::string& n, const Mat&) {
    names.push_back(n);
  });
  return names;
}

}  // namespace

BatchEval eval_batch(const nets::ModelParams& params, const microgen::Dataset& ds,
                     const std::vector<int>& idx, const TrainConfig& cfg, int epoch) {
  if (idx.empty()) throw std::invalid_argument("eval_batch: empty index set");
  if (params.cfg.k != ds.k)
    throw std::invalid_argument("eval_batch: model/dataset resolution mismatch");
  const int C = params.cfg.u_channels;
  const int S = int(idx.size());
  const int K = ds.k, J = K * K;
  const double kappa1 = ds.kappa1 > 0 ? ds.kappa1 : 10.0;
  const double kappa2 = ds.kappa2 > 0 ? ds.kappa2 : 2.0;
  const int G = ds.grid > 0 ? ds.grid : K * 2;
  const std::size_t gg = std::size_t(G) * G;

  const auto names = tensor_names(params);
  std::size_t ulo = names.size(), uhi = 0;
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i].rfind("dec_u.", 0) == 0) {
      ulo = std::min(ulo, i);
      uhi = std::max(uhi, i + 1);
    }
  if (ulo >= uhi) throw std::logic_error("dec_u tensors missing");

  BatchEval out;
  out.grads.resize(names.size());
  {
    std::size_t t = 0;
    nets::for_each_tensor(params, [&](const std::string&, const Mat& m) {
      out.grads[t++] = Mat::Zero(m.rows(), m.cols());
    });
  }

  // ---- shared batch graph ----
  ad::Graph g;
  nets::ModelVars mv = nets::bind_model(g, params, /*as_param=*/true);

  Mat X(J, S), targets(S, J);
  for (int s = 0; s < S; ++s) {
    auto m = ds.sample(idx[std::size_t(s)]);
    for (int j = 0; j < J; ++j) {
      X(j, s) = double(m.phase[std::size_t(j)]);
      targets(s, j) = double(m.phase[std::size_t(j)]);
    }
  }
  Var beta = nets::encode(mv.enc, g.constant(X));
  Var probs = ad::sigmoid(
      nets::multionet_branch(g, mv.mu, beta).eval(nets::pixel_centers(K))[0]);
  Var l_rec = loss_rec(probs, targets);
  Var l_kl = loss_kl(mv.flow, beta);

  Var elbo_rows = ad::add(l_rec, ad::scale(l_kl, cfg.lambda_kl));
  Var l_data;
  const bool have_data = cfg.use_labeled && cfg.lambda_data != 0.0;
  if (have_data) {
    const std::vector<float>& src =
        cfg.task == "property" ? ds.fields_property : ds.fields_field;
    if (src.size() < std::size_t(ds.n) * C * gg)
      throw std::invalid_argument("eval_batch: dataset lacks the labels for " +
                                  cfg.task);
    auto ueval = nets::multionet_branch(g, mv.u, beta);
    std::vector<Var> preds = ueval.eval(nets::grid_centers(G));
    std::vector<Mat> labels;
    labels.resize(std::size_t(C));
    for (int c = 0; c < C; ++c) {
      labels[std::size_t(c)].resize(S, int(gg));
      for (int s = 0; s < S; ++s) {
        std::size_t base = (std::size_t(idx[std::size_t(s)]) * C + std::size_t(c)) * gg;
        for (std::size_t j = 0; j < gg; ++j)
          labels[std::size_t(c)](s, int(j)) = double(src[base + j]);
      }
    }
    l_data = loss_data(preds, labels, cfg.lambda_data);
    elbo_rows = ad::add(elbo_rows, l_data);
  }
  Var neg_obj = ad::scale(ad::mean(elbo_rows), -1.0);

  // ---- per-sample residual subgraphs ----
  Mat beta_vals = g.value(beta);
  Mat beta_seed = Mat::Zero(beta_vals.rows(), beta_vals.cols());
  double pde_sum = 0.0, pde_obj = 0.0;
  const bool have_pde = cfg.use_virtual && cfg.lambda_pde != 0.0;
  if (have_pde) {
    for (int s = 0; s < S; ++s) {
      ad::Graph rg;
      std::vector<Var> u_ordered;
      nets::VarMultiOnet uv = nets::bind_multionet(rg, params.dec_u, true, &u_ordered);
      Var beta_s = rg.param(beta_vals.col(s));
      auto branch = nets::multionet_branch(rg, uv, beta_s);
      residuals::ChannelsFn channels = [&](const Mat& pts) {
        return branch.eval(pts);
      };
      auto m = ds.sample(idx[std::size_t(s)]);
      residuals::PdeTerms terms =
          cfg.task == "property"
              ? residuals::flux_residuals(channels, m, kappa1, kappa2, cfg.pde,
                                          cfg.seed, std::uint64_t(epoch),
                                          std::uint64_t(idx[std::size_t(s)]))
              : residuals::field_residuals(channels, m, kappa1, kappa2, cfg.pde,
                                           cfg.seed, std::uint64_t(epoch),
                                           std::uint64_t(idx[std::size_t(s)]));
      Var pde_term = ad::add(ad::add(terms.divergence, terms.consistency), terms.bc);
      double term_val = rg.value(pde_term)(0, 0);
      if (!std::isfinite(term_val))
        throw std::runtime_error("train: non-finite pde term, epoch " +
                                 std::to_string(epoch) + " sample " +
                                 std::to_string(idx[std::size_t(s)]));
      pde_sum += -0.5 * cfg.lambda_pde * term_val;
      // minimize (lambda/2) * term / S
      Var obj_s = ad::scale(pde_term, 0.5 * cfg.lambda_pde / double(S));
      pde_obj += rg.value(obj_s)(0, 0);
      rg.backward(obj_s);
      beta_seed.col(s) = rg.grad(beta_s);
      for (std::size_t t = 0; t < u_ordered.size(); ++t)
        out.grads[ulo + t] += rg.grad(u_ordered[t]);
    }
  }

  std::array<std::pair<Var, Mat>, 1> seeds{{{beta, beta_seed}}};
  g.backward(neg_obj,
             std::span<const std::pair<Var, Mat>>(seeds.data(), have_pde ? 1 : 0));
  for (std::size_t t = 0; t < out.grads.size(); ++t)
    out.grads[t] += g.grad(mv.ordered[t]);

  out.objective = g.value(neg_obj)(0, 0) + pde_obj;
  out.rec = g.value(l_rec).mean();
  out.kl = g.value(l_kl).mean();
  out.data = have_data ? g.value(l_data).mean() : 0.0;
  out.pde = have_pde ? pde_sum / double(S) : 0.0;
  if (!std::isfinite(out.rec) || !std::isfinite(out.kl) || !std::isfinite(out.data))
    throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch));
  return out;
}

TrainResult train(const microgen::Dataset& ds, const TrainConfig& cfg_in,
                  const std::filesystem::path& out_dir, const ProgressFn& progress) {
  TrainConfig cfg = cfg_in;
  if (cfg.task != "property" && cfg.task != "field")
    throw std::invalid_argument("train: task must be property or field");
  cfg.model.k = ds.k;
  cfg.model.task = cfg.task;
  cfg.model.u_channels = cfg.task == "property" ? 6 : 1;

  if (cfg.use_labeled) {
    const char* need = cfg.task == "property" ? "property" : "field";
    if (!ds.has_task(need))
      throw std::invalid_argument(std::string("train: dataset lacks '") + need +
                                  "' labels; pass --unlabeled-only or label first");
  }
  if (ds.n <= 0) throw std::invalid_argument("train: empty dataset");
  if (cfg.batch <= 0 || cfg.epochs < 0) throw std::invalid_argument("train: bad batch/epochs");

  TrainResult out;
  out.params = nets::init_model(cfg.model, cfg.seed);
  ParamRefs refs = collect_params(out.params);

  ad::AdamState adam;
  ad::adam_init(adam, refs.mats);

  // weight decay acts on encoder/decoder weight matrices; biases stay free and
  // the flow is exempt so the prior density is shaped by the data alone
  std::vector<char> decayed(refs.names.size(), 0);
  for (std::size_t i = 0; i < refs.names.size(); ++i) {
    const std::string& n = refs.names[i];
    const bool weight = n.size() > 1 && (n.ends_with(".W") || n.ends_with(".w"));
    decayed[i] = weight && !n.starts_with("flow.") ? 1 : 0;
  }

  std::filesystem::path log_path;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    log_path = out_dir / "loss_log.csv";
    write_text(log_path, "epoch,loss_rec,loss_kl,loss_data,loss_pde,total\n");
  }

  std::vector<int> order(ds.n);
  for (int i = 0; i < ds.n; ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates shuffle, deterministic per (seed, epoch)
    Rng shuffle_rng(derive_seed(cfg.seed, 0x5c0ffee, std::uint64_t(epoch)));
    for (int i = ds.n - 1; i > 0; --i) {
      int j = int(shuffle_rng.below(std::uint64_t(i) + 1));
      std::swap(order[i], order[std::size_t(j)]);
    }

    const double lr = lr_at_epoch(cfg, epoch);
    EpochLosses acc;
    int batches = 0;

    for (int b0 = 0; b0 < ds.n; b0 += cfg.batch) {
      const int S = std::min(cfg.batch, ds.n - b0);
      std::vector<int> idx(order.begin() + b0, order.begin() + b0 + S);

      BatchEval be = eval_batch(out.params, ds, idx, cfg, epoch);
      ad::adam_step(refs.mats, be.grads, adam, lr);
      if (cfg.weight_decay > 0) {
        const double shrink = 1.0 - lr * cfg.weight_decay;
        for (std::size_t i = 0; i < refs.mats.size(); ++i)
          if (decayed[i]) *refs.mats[i] *= shrink;
      }

      acc.rec += be.rec;
      acc.kl += be.kl;
      acc.data += be.data;
      acc.pde += be.pde;
      acc.total += be.rec + cfg.lambda_kl * be.kl + be.data + be.pde;
      ++batches;
    }

    acc.rec /= batches;
    acc.kl /= batches;
    acc.data /= batches;
    acc.pde /= batches;
    acc.total /= batches;
    out.log.push_back(acc);
    if (progress) progress(epoch, acc);

    if (!out_dir.empty()) {
      std::ofstream f(log_path, std::ios::app);
      f << epoch << ',' << csv_num(acc.rec) << ',' << csv_num(acc.kl) << ','
        << csv_num(acc.data) << ',' << csv_num(acc.pde) << ',' << csv_num(acc.total)
        << "\n";
      f.close();
      if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 &&
          epoch + 1 < cfg.epochs) {
        std::ostringstream tag;
        tag << "ep" << std::setw(6) << std::setfill('0') << (epoch + 1);
        nets::save_model(out.params, cfg.seed, out_dir / "snapshots" / tag.str());
      }
    }
  }

  if (!out_dir.empty()) nets::save_model(out.params, cfg.seed, out_dir);
  return out;
}

}  // namespace md::train
