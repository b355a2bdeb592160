#pragma once
// Model components: dense encoder (point-mass posterior), MultiONet operator
// decoders for the microstructure and the PDE response, RealNVP prior flow.
// Everything evaluates through the autodiff graph; pure evaluation just reads
// values without calling backward. Column convention: features x samples.

#include "microdesign/ad.hpp"
#include "microdesign/common.hpp"

namespace md::nets {

struct DenseParams {
  Mat W, b;  // b is rows x 1
};

// MultiONet: per-channel output combines every hidden layer of a branch net
// (input beta, silu+identity skip) and a trunk net (input (x,y), silu+sin
// skip): G_c(beta)(x) = (1/depth) * sum_k w[k,c] * <b_k, t_k>_chunk_c + b0_c.
// The hidden width is split into `channels` contiguous chunks so one network
// serves several output fields without extra parameters beyond w and b0.
struct MultiOnetParams {
  std::vector<DenseParams> branch, trunk;  // depth layers each, equal width
  Mat w;   // depth x channels combination scalars
  Mat b0;  // channels x 1 biases
  int width() const { return int(branch.front().W.rows()); }
  int depth() const { return int(branch.size()); }
  int channels() const { return int(b0.rows()); }
};

struct EncoderParams {
  std::vector<DenseParams> layers;  // silu hidden, tanh head
};

struct CouplingParams {
  std::vector<DenseParams> s, t;  // conditioner nets: silu hidden, linear out
  Mat s_bound;                    // 1x1 learnable bound on tanh-limited scales
};

struct FlowParams {
  std::vector<CouplingParams> steps;
};

struct ModelConfig {
  int k = 32;                        // pixel resolution of the microstructure
  int d_beta = 128;
  std::vector<int> enc_hidden = {512, 128};
  int mu_width = 256, mu_depth = 5;
  int u_width = 100, u_depth = 5, u_channels = 6;
  int flow_steps = 3, flow_hidden = 64;
  std::string task = "property";     // "property" (6 channels) or "field" (1)
};

struct ModelParams {
  ModelConfig cfg;
  EncoderParams encoder;
  MultiOnetParams dec_mu;  // 1 channel, sigmoid head applied by callers
  MultiOnetParams dec_u;
  FlowParams flow;
};

// Uniform Glorot fan-based init, seeded; combination scalars start at 1,
// biases at 0; coupling-net output layers start at zero (identity flow) with
// scale bound 1.
ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed);

// Canonical tensor walk (serialization order, Adam slot order).
void for_each_tensor(ModelParams& p,
                     const std::function<void(const std::string&, Mat&)>& fn);
void for_each_tensor(const ModelParams& p,
                     const std::function<void(const std::string&, const Mat&)>& fn);
std::size_t tensor_count(const ModelParams& p);

// --- graph binding ----------------------------------------------------------

struct VarDense {
  ad::Var W, b;
};

struct VarMultiOnet {
  std::vector<VarDense> branch, trunk;
  ad::Var w, b0;
  int width = 0, depth = 0, channels = 0;
};

struct VarEncoder {
  std::vector<VarDense> layers;
};

struct VarCoupling {
  std::vector<VarDense> s, t;
  ad::Var s_bound;
};

struct VarFlow {
  std::vector<VarCoupling> steps;
  int dim = 0;
};

// Binds tensors into the graph. as_param=true registers gradient-tracked
// leaves; `ordered` (if given) receives the bound Vars in canonical order.
VarEncoder bind_encoder(ad::Graph& g, const EncoderParams& p, bool as_param,
                        std::vector<ad::Var>* ordered = nullptr);
VarMultiOnet bind_multionet(ad::Graph& g, const MultiOnetParams& p, bool as_param,
                            std::vector<ad::Var>* ordered = nullptr);
VarFlow bind_flow(ad::Graph& g, const FlowParams& p, int dim, bool as_param,
                  std::vector<ad::Var>* ordered = nullptr);

struct ModelVars {
  VarEncoder enc;
  VarMultiOnet mu, u;
  VarFlow flow;
  std::vector<ad::Var> ordered;  // canonical order, matches for_each_tensor
};
ModelVars bind_model(ad::Graph& g, const ModelParams& p, bool as_param);

// --- evaluation -------------------------------------------------------------

// X: (k*k) x S flattened microstructures in [0,1]; returns d_beta x S in (-1,1).
ad::Var encode(const VarEncoder& enc, ad::Var X);

// Branch features are computed once per beta; eval() runs the trunk and the
// per-channel combination for an arbitrary 2 x N point set.
struct MultiOnetEval {
  ad::Graph* g = nullptr;
  const VarMultiOnet* net = nullptr;
  std::vector<ad::Var> Bk;  // branch hidden outputs, width x S
  int samples = 0;
  std::vector<ad::Var> eval(const Mat& points) const;  // channels of S x N
};
MultiOnetEval multionet_branch(ad::Graph& g, const VarMultiOnet& net, ad::Var beta);

// Microstructure decoder probabilities at the k*k pixel centers (S x k*k).
ad::Var decode_micro_probs(ad::Graph& g, const VarMultiOnet& net, ad::Var beta, int k);

// Pixel centers of a k x k grid as 2 x (k*k), row-major pixel order.
Mat pixel_centers(int k);
// Cell centers of a g x g label grid (same layout).
inline Mat grid_centers(int g) { return pixel_centers(g); }

// RealNVP forward: beta -> z plus per-sample log|det J| (1 x S).
struct FlowForward {
  ad::Var z;
  ad::Var logdet;
};
FlowForward flow_forward(const VarFlow& f, ad::Var beta);

// Numeric inverse (build + read values; no gradients needed by callers).
Mat flow_inverse(const FlowParams& f, const Mat& z);

// log prior density under the flow: -0.5|f(beta)|^2 + log|det J| - d/2 log 2pi.
ad::Var prior_logdensity(const VarFlow& f, ad::Var beta);

// --- checkpoints ------------------------------------------------------------

// model.json (config, seed, tensor manifest with byte offsets) + weights.f64
// (row-major little-endian doubles in manifest order).
void save_model(const ModelParams& p, std::uint64_t seed,
                const std::filesystem::path& dir);
struct LoadedModel {
  ModelParams params;
  std::uint64_t seed = 0;
};
LoadedModel load_model(const std::filesystem::path& dir);

}  // namespace md::nets
