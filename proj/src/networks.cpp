#include "microdesign/networks.hpp"

#include <json.hpp>

namespace md::nets {

using ad::Var;

namespace {

Mat glorot(Rng& rng, int rows, int cols) {
  double limit = std::sqrt(6.0 / double(rows + cols));
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-limit, limit);
  return m;
}

DenseParams dense_init(Rng& rng, int rows, int cols) {
  return {glorot(rng, rows, cols), Mat::Zero(rows, 1)};
}

std::vector<DenseParams> mlp_init(Rng& rng, int in, int hidden, int out,
                                  bool zero_last) {
  std::vector<DenseParams> layers;
  layers.push_back(dense_init(rng, hidden, in));
  layers.push_back(dense_init(rng, hidden, hidden));
  layers.push_back(dense_init(rng, out, hidden));
  if (zero_last) layers.back().W.setZero();
  return layers;
}

template <class MP, class FN>
void visit_tensors(MP& p, FN&& fn) {
  auto dense_list = [&](auto& vec, const std::string& prefix) {
    for (std::size_t i = 0; i < vec.size(); ++i) {
      fn(prefix + "." + std::to_string(i) + ".W", vec[i].W);
      fn(prefix + "." + std::to_string(i) + ".b", vec[i].b);
    }
  };
  dense_list(p.encoder.layers, "encoder");
  dense_list(p.dec_mu.branch, "dec_mu.branch");
  dense_list(p.dec_mu.trunk, "dec_mu.trunk");
  fn("dec_mu.w", p.dec_mu.w);
  fn("dec_mu.b0", p.dec_mu.b0);
  dense_list(p.dec_u.branch, "dec_u.branch");
  dense_list(p.dec_u.trunk, "dec_u.trunk");
  fn("dec_u.w", p.dec_u.w);
  fn("dec_u.b0", p.dec_u.b0);
  for (std::size_t s = 0; s < p.flow.steps.size(); ++s) {
    dense_list(p.flow.steps[s].s, "flow." + std::to_string(s) + ".s");
    dense_list(p.flow.steps[s].t, "flow." + std::to_string(s) + ".t");
    fn("flow." + std::to_string(s) + ".s_bound", p.flow.steps[s].s_bound);
  }
}

MultiOnetParams multionet_init(Rng& rng, int d_in, int width, int depth,
                               int channels) {
  if (width < channels)
    throw std::invalid_argument("multionet: width must be >= channels");
  MultiOnetParams p;
  p.branch.push_back(dense_init(rng, width, d_in));
  for (int i = 1; i < depth; ++i) p.branch.push_back(dense_init(rng, width, width));
  p.trunk.push_back(dense_init(rng, width, 2));
  for (int i = 1; i < depth; ++i) p.trunk.push_back(dense_init(rng, width, width));
  p.w = Mat::Ones(depth, channels);
  p.b0 = Mat::Zero(channels, 1);
  return p;
}

}  // namespace

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.d_beta < 2) throw std::invalid_argument("init_model: d_beta must be >= 2");
  ModelParams p;
  p.cfg = cfg;
  Rng rng(derive_seed(seed, 0xC0DE));

  int in = cfg.k * cfg.k;
  for (int h : cfg.enc_hidden) {
    p.encoder.layers.push_back(dense_init(rng, h, in));
    in = h;
  }
  p.encoder.layers.push_back(dense_init(rng, cfg.d_beta, in));

  p.dec_mu = multionet_init(rng, cfg.d_beta, cfg.mu_width, cfg.mu_depth, 1);
  p.dec_u = multionet_init(rng, cfg.d_beta, cfg.u_width, cfg.u_depth, cfg.u_channels);

  const int d = cfg.d_beta, da = d / 2;
  for (int s = 0; s < cfg.flow_steps; ++s) {
    int asz = (s % 2 == 0) ? da : d - da;
    int bsz = d - asz;
    CouplingParams c;
    c.s = mlp_init(rng, asz, cfg.flow_hidden, bsz, /*zero_last=*/true);
    c.t = mlp_init(rng, asz, cfg.flow_hidden, bsz, /*zero_last=*/true);
    c.s_bound = Mat::Ones(1, 1);
    p.flow.steps.push_back(std::move(c));
  }
  return p;
}

void for_each_tensor(ModelParams& p,
                     const std::function<void(const std::string&, Mat&)>& fn) {
  visit_tensors(p, fn);
}

void for_each_tensor(const ModelParams& p,
                     const std::function<void(const std::string&, const Mat&)>& fn) {
  visit_tensors(p, fn);
}

std::size_t tensor_count(const ModelParams& p) {
  std::size_t n = 0;
  for_each_tensor(p, [&](const std::string&, const Mat&) { ++n; });
  return n;
}

// --- binding ----------------------------------------------------------------

namespace {

VarDense bind_dense(ad::Graph& g, const DenseParams& d, bool as_param,
                    std::vector<Var>* ordered) {
  VarDense v;
  v.W = as_param ? g.param(d.W) : g.constant(d.W);
  v.b = as_param ? g.param(d.b) : g.constant(d.b);
  if (ordered) {
    ordered->push_back(v.W);
    ordered->push_back(v.b);
  }
  return v;
}

std::vector<VarDense> bind_dense_list(ad::Graph& g, const std::vector<DenseParams>& ds,
                                      bool as_param, std::vector<Var>* ordered) {
  std::vector<VarDense> out;
  out.reserve(ds.size());
  for (const auto& d : ds) out.push_back(bind_dense(g, d, as_param, ordered));
  return out;
}

Var apply_mlp(const std::vector<VarDense>& layers, Var x) {
  for (std::size_t i = 0; i + 1 < layers.size(); ++i)
    x = ad::silu(ad::affine(layers[i].W, x, layers[i].b));
  return ad::affine(layers.back().W, x, layers.back().b);
}

}  // namespace

VarEncoder bind_encoder(ad::Graph& g, const EncoderParams& p, bool as_param,
                        std::vector<Var>* ordered) {
  return {bind_dense_list(g, p.layers, as_param, ordered)};
}

VarMultiOnet bind_multionet(ad::Graph& g, const MultiOnetParams& p, bool as_param,
                            std::vector<Var>* ordered) {
  VarMultiOnet v;
  v.branch = bind_dense_list(g, p.branch, as_param, ordered);
  v.trunk = bind_dense_list(g, p.trunk, as_param, ordered);
  v.w = as_param ? g.param(p.w) : g.constant(p.w);
  v.b0 = as_param ? g.param(p.b0) : g.constant(p.b0);
  if (ordered) {
    ordered->push_back(v.w);
    ordered->push_back(v.b0);
  }
  v.width = p.width();
  v.depth = p.depth();
  v.channels = p.channels();
  return v;
}

VarFlow bind_flow(ad::Graph& g, const FlowParams& p, int dim, bool as_param,
                  std::vector<Var>* ordered) {
  VarFlow v;
  v.dim = dim;
  for (const auto& st : p.steps) {
    VarCoupling c;
    c.s = bind_dense_list(g, st.s, as_param, ordered);
    c.t = bind_dense_list(g, st.t, as_param, ordered);
    c.s_bound = as_param ? g.param(st.s_bound) : g.constant(st.s_bound);
    if (ordered) ordered->push_back(c.s_bound);
    v.steps.push_back(std::move(c));
  }
  return v;
}

ModelVars bind_model(ad::Graph& g, const ModelParams& p, bool as_param) {
  ModelVars v;
  v.enc = bind_encoder(g, p.encoder, as_param, &v.ordered);
  v.mu = bind_multionet(g, p.dec_mu, as_param, &v.ordered);
  v.u = bind_multionet(g, p.dec_u, as_param, &v.ordered);
  v.flow = bind_flow(g, p.flow, p.cfg.d_beta, as_param, &v.ordered);
  return v;
}

// --- evaluation -------------------------------------------------------------

Var encode(const VarEncoder& enc, Var X) {
  Var h = X;
  for (std::size_t i = 0; i + 1 < enc.layers.size(); ++i)
    h = ad::silu(ad::affine(enc.layers[i].W, h, enc.layers[i].b));
  return ad::tanh(ad::affine(enc.layers.back().W, h, enc.layers.back().b));
}

MultiOnetEval multionet_branch(ad::Graph& g, const VarMultiOnet& net, Var beta) {
  MultiOnetEval ev;
  ev.g = &g;
  ev.net = &net;
  ev.samples = int(g.value(beta).cols());
  Var h = beta;
  for (const auto& layer : net.branch) {
    h = ad::silu_id(ad::affine(layer.W, h, layer.b));
    ev.Bk.push_back(h);
  }
  return ev;
}

std::vector<Var> MultiOnetEval::eval(const Mat& points) const {
  ad::Graph& gr = *g;
  const int N = int(points.cols());
  const int p = net->width, C = net->channels, l = net->depth;
  Var h = gr.constant(points);
  std::vector<Var> Tk;
  Tk.reserve(l);
  for (const auto& layer : net->trunk) {
    h = ad::silu_sin(ad::affine(layer.W, h, layer.b));
    Tk.push_back(h);
  }
  std::vector<Var> out;
  out.reserve(C);
  for (int c = 0; c < C; ++c) {
    int c0 = c * p / C, c1 = (c + 1) * p / C;
    int wc = c1 - c0;
    Var acc;
    for (int k = 0; k < l; ++k) {
      Var bs = ad::slice(Bk[k], c0, 0, wc, samples);
      Var ts = ad::slice(Tk[k], c0, 0, wc, N);
      Var term = ad::mul(ad::matmul(bs, ts, true, false),
                         ad::slice(net->w, k, c, 1, 1));
      acc = (k == 0) ? term : ad::add(acc, term);
    }
    out.push_back(ad::add(ad::scale(acc, 1.0 / double(l)),
                          ad::slice(net->b0, c, 0, 1, 1)));
  }
  return out;
}

Var decode_micro_probs(ad::Graph& g, const VarMultiOnet& net, Var beta, int k) {
  auto ev = multionet_branch(g, net, beta);
  return ad::sigmoid(ev.eval(pixel_centers(k))[0]);
}

Mat pixel_centers(int k) {
  Mat pts(2, k * k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      pts(0, i * k + j) = (j + 0.5) / k;  // x from column
      pts(1, i * k + j) = (i + 0.5) / k;  // y from row
    }
  return pts;
}

FlowForward flow_forward(const VarFlow& f, Var beta) {
  ad::Graph& g = *beta.g;
  const int d = f.dim, da = d / 2;
  const int S = int(g.value(beta).cols());
  Var cur = beta;
  Var logdet;
  for (std::size_t i = 0; i < f.steps.size(); ++i) {
    const auto& st = f.steps[i];
    bool even = (i % 2 == 0);
    int a0 = even ? 0 : da;
    int asz = even ? da : d - da;
    int b0 = even ? da : 0;
    int bsz = d - asz;
    Var A = ad::slice(cur, a0, 0, asz, S);
    Var B = ad::slice(cur, b0, 0, bsz, S);
    Var s = ad::mul(ad::tanh(apply_mlp(st.s, A)), st.s_bound);
    Var t = apply_mlp(st.t, A);
    Var Bp = ad::add(ad::mul(B, ad::exp(s)), t);
    Var ld = ad::colwise_sum(s);
    logdet = (i == 0) ? ld : ad::add(logdet, ld);
    cur = even ? ad::concat_rows(A, Bp) : ad::concat_rows(Bp, A);
  }
  if (f.steps.empty()) {
    logdet = g.constant(Mat::Zero(1, S));
  }
  return {cur, logdet};
}

Mat flow_inverse(const FlowParams& f, const Mat& z) {
  ad::Graph g;
  const int d = int(z.rows()), da = d / 2;
  const int S = int(z.cols());
  VarFlow vf = bind_flow(g, f, d, /*as_param=*/false);
  Var cur = g.constant(z);
  for (int i = int(f.steps.size()) - 1; i >= 0; --i) {
    const auto& st = vf.steps[std::size_t(i)];
    bool even = (i % 2 == 0);
    int a0 = even ? 0 : da;
    int asz = even ? da : d - da;
    int b0 = even ? da : 0;
    int bsz = d - asz;
    Var A = ad::slice(cur, a0, 0, asz, S);
    Var Bp = ad::slice(cur, b0, 0, bsz, S);
    Var s = ad::mul(ad::tanh(apply_mlp(st.s, A)), st.s_bound);
    Var t = apply_mlp(st.t, A);
    Var B = ad::mul(ad::sub(Bp, t), ad::exp(ad::scale(s, -1.0)));
    cur = even ? ad::concat_rows(A, B) : ad::concat_rows(B, A);
  }
  return g.value(cur);
}

Var prior_logdensity(const VarFlow& f, Var beta) {
  ad::Graph& g = *beta.g;
  FlowForward ff = flow_forward(f, beta);
  Var ssum = ad::colwise_sum(ad::square(ff.z));
  Var logp = ad::sub(ff.logdet, ad::scale(ssum, 0.5));
  double c = -0.5 * double(f.dim) * std::log(2.0 * M_PI);
  return ad::add(logp, g.constant(c));
}

// --- checkpoints ------------------------------------------------------------

void save_model(const ModelParams& p, std::uint64_t seed,
                const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  nlohmann::ordered_json meta;
  meta["format_version"] = 1;
  meta["kind"] = "model";
  meta["seed"] = seed;
  const ModelConfig& c = p.cfg;
  meta["config"] = {{"k", c.k},
                    {"d_beta", c.d_beta},
                    {"enc_hidden", c.enc_hidden},
                    {"mu_width", c.mu_width},
                    {"mu_depth", c.mu_depth},
                    {"u_width", c.u_width},
                    {"u_depth", c.u_depth},
                    {"u_channels", c.u_channels},
                    {"flow_steps", c.flow_steps},
                    {"flow_hidden", c.flow_hidden},
                    {"task", c.task}};

  nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
  std::vector<double> blob;
  std::size_t offset = 0;
  for_each_tensor(p, [&](const std::string& name, const Mat& m) {
    manifest.push_back({{"name", name},
                        {"rows", m.rows()},
                        {"cols", m.cols()},
                        {"offset", offset}});
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) blob.push_back(m(i, j));
    offset += std::size_t(m.size()) * sizeof(double);
  });
  meta["tensors"] = manifest;
  write_text(dir / "model.json", meta.dump(2) + "\n");
  write_f64(dir / "weights.f64", blob);
}

LoadedModel load_model(const std::filesystem::path& dir) {
  auto meta = nlohmann::json::parse(read_text(dir / "model.json"));
  if (meta.at("kind").get<std::string>() != "model")
    throw std::runtime_error("load_model: not a model checkpoint");
  ModelConfig c;
  const auto& jc = meta.at("config");
  c.k = jc.at("k").get<int>();
  c.d_beta = jc.at("d_beta").get<int>();
  c.enc_hidden = jc.at("enc_hidden").get<std::vector<int>>();
  c.mu_width = jc.at("mu_width").get<int>();
  c.mu_depth = jc.at("mu_depth").get<int>();
  c.u_width = jc.at("u_width").get<int>();
  c.u_depth = jc.at("u_depth").get<int>();
  c.u_channels = jc.at("u_channels").get<int>();
  c.flow_steps = jc.at("flow_steps").get<int>();
  c.flow_hidden = jc.at("flow_hidden").get<int>();
  c.task = jc.at("task").get<std::string>();

  LoadedModel lm;
  lm.seed = meta.at("seed").get<std::uint64_t>();
  lm.params = init_model(c, 0);

  auto blob = read_f64(dir / "weights.f64");
  std::size_t idx = 0;
  const auto& manifest = meta.at("tensors");
  for_each_tensor(lm.params, [&](const std::string& name, Mat& m) {
    if (idx >= manifest.size())
      throw std::runtime_error("load_model: manifest too short");
    const auto& e = manifest[idx];
    if (e.at("name").get<std::string>() != name)
      throw std::runtime_error("load_model: manifest order mismatch at " + name);
    Eigen::Index rows = e.at("rows").get<Eigen::Index>();
    Eigen::Index cols = e.at("cols").get<Eigen::Index>();
    if (rows != m.rows() || cols != m.cols())
      throw std::runtime_error("load_model: tensor shape mismatch at " + name);
    std::size_t off = e.at("offset").get<std::size_t>() / sizeof(double);
    if (off + std::size_t(m.size()) > blob.size())
      throw std::runtime_error("load_model: weights.f64 too short");
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = blob[off + std::size_t(i) * cols + j];
    ++idx;
  });
  if (idx != manifest.size())
    throw std::runtime_error("load_model: manifest has extra tensors");
  return lm;
}

}  // namespace md::nets
