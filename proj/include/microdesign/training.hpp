#pragma once
// ELBO training for the generative operator model. Per batch: one shared
// graph carries encoder -> beta -> (microstructure reconstruction, labeled
// data fit, flow prior); per-sample subgraphs carry the PDE residual terms
// and chain into the shared graph through gradient seeds on the beta node.
// The total (maximized) per-sample objective is
//   L_rec + lambda_kl * L_kl + L_data + L_pde,
// implemented as minimizing its negation.

#include "microdesign/microgen.hpp"
#include "microdesign/networks.hpp"
#include "microdesign/residuals.hpp"

namespace md::train {

struct TrainConfig {
  std::string task = "property";  // "property" or "field"
  int epochs = 1000;
  int batch = 25;
  double lr = 5e-4;
  int lr_halve_every = 200;
  double lambda_pde = 0.25;
  double lambda_data = 0.5;
  double lambda_kl = 2.0;
  double weight_decay = 0.0;  // decoupled L2 on encoder/decoder weight matrices
  bool use_labeled = true;   // L_data on
  bool use_virtual = true;   // L_pde on
  std::uint64_t seed = 0;
  int checkpoint_every = 100;
  residuals::PdeConfig pde;
  nets::ModelConfig model;   // k, u_channels, task are aligned by train()
};

double lr_at_epoch(const TrainConfig& cfg, int epoch);

// --- loss terms (graph builders) -------------------------------------------

// Bernoulli log-likelihood per sample (1 x S): sum_j z log p + (1-z) log(1-p),
// probabilities squeezed into [1e-7, 1-1e-7].
ad::Var loss_rec(ad::Var probs, const Mat& targets);

// Flow-prior term per sample (1 x S), unweighted:
// -0.5 |f(beta)|^2 + log|det J_f|.
ad::Var loss_kl(const nets::VarFlow& flow, ad::Var beta);

// Labeled-data term per sample (1 x S), stored scaled:
// -(lambda/2) sum_channels |label - pred|^2.
ad::Var loss_data(const std::vector<ad::Var>& preds, const std::vector<Mat>& labels,
                  double lambda_data);

struct EpochLosses {
  double rec = 0, kl = 0, data = 0, pde = 0, total = 0;
};

// One batch of the training objective with fully assembled gradients in the
// canonical tensor order (exposed so gradient checks can cover the shared
// graph, the per-sample residual subgraphs and their seed chaining together).
// `objective` is the minimized scalar: -(mean elbo) + pde penalty.
struct BatchEval {
  double objective = 0;
  double rec = 0, kl = 0, data = 0, pde = 0;  // per-sample means, log convention
  std::vector<Mat> grads;
};

BatchEval eval_batch(const nets::ModelParams& params, const microgen::Dataset& ds,
                     const std::vector<int>& idx, const TrainConfig& cfg, int epoch);

struct TrainResult {
  nets::ModelParams params;
  std::vector<EpochLosses> log;  // one entry per epoch (batch-mean values)
};

using ProgressFn = std::function<void(int epoch, const EpochLosses&)>;

// out_dir empty -> no files; otherwise writes loss_log.csv, the final
// checkpoint, and periodic snapshots under out_dir/snapshots/.
TrainResult train(const microgen::Dataset& ds, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir, const ProgressFn& progress = {});

}  // namespace md::train
