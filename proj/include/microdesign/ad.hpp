#pragma once
// Reverse-mode autodiff on dense float64 matrices.
//
// A Graph is an eager tape: every op appends a node holding its cached value,
// so creation order is already a topological order. backward() sweeps the tape
// in reverse. Matrices are column-convention throughout the model code
// (features x samples, points as 2 x N).

#include "microdesign/common.hpp"

#include <span>
#include <utility>

namespace md::ad {

enum class Op : std::uint8_t {
  Leaf,       // parameter (gradient tracked)
  Const,      // constant input
  Add, Sub, Mul,
  MatMul,     // with optional transpose flags
  Affine,     // W*X + b (b broadcast over columns)
  Sum, Mean, RowwiseSum, ColwiseSum,
  Square, Exp, Log, Sin, Tanh, Sigmoid, Silu,
  SiluSin,    // x + silu(sin(pi*x + pi))
  SiluId,     // x + silu(x)
  Slice, ConcatRows, ConcatCols, Broadcast, Transpose,
};

const char* op_name(Op op);

class Graph;

struct Var {
  Graph* g = nullptr;
  int id = -1;
};

struct Node {
  Op op;
  int a = -1, b = -1, c = -1;  // input node ids (c: affine bias)
  Mat val;
  Mat grad;                    // empty until touched by backward
  int i0 = 0, j0 = 0;          // slice origin
  int tr = 0, tc = 0;          // slice/broadcast target extents
  bool ta = false, tb = false; // matmul transpose flags
};

class Graph {
 public:
  Var param(const Mat& m);             // copied in; gradient tracked
  Var constant(const Mat& m);
  Var constant(double s);              // 1x1

  const Mat& value(Var v) const { return nodes_[check(v)].val; }
  // Gradient of the last backward() target w.r.t. v (zeros if v unreached).
  Mat grad(Var v) const;

  // Reverse sweep from scalar `loss`. `seeds` adds externally computed
  // gradient contributions to interior nodes before propagation (used to
  // chain per-sample subgraphs into a shared graph).
  void backward(Var loss, std::span<const std::pair<Var, Mat>> seeds = {});

  // Re-runs every forward op in place (leaves/constants untouched).
  void recompute();

  std::size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_[id]; }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  // internal: used by the free-function op builders
  Var push(Node&& n);
  int check(Var v) const;

 private:
  Mat& grad_ref(int id);  // size-on-first-touch accumulator
  std::vector<Node> nodes_;
};

// --- op builders ------------------------------------------------------------
// Add/Sub/Mul accept equal shapes or a 1x1 scalar on either side.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
Var affine(Var w, Var x, Var b);
Var sum(Var a);
Var mean(Var a);
Var rowwise_sum(Var a);   // r x c -> r x 1
Var colwise_sum(Var a);   // r x c -> 1 x c
Var square(Var a);
Var exp(Var a);
Var log(Var a);
Var sin(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var silu(Var a);
Var silu_sin(Var a);
Var silu_id(Var a);
Var slice(Var a, int i0, int j0, int rows, int cols);
Var concat_rows(Var a, Var b);
Var concat_cols(Var a, Var b);
Var broadcast(Var a, int rows, int cols);  // from 1x1, rx1 or 1xc
Var transpose(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// scale by a fresh scalar constant
Var scale(Var a, double s);

// --- finite-difference stencil over a field evaluator -----------------------

// Evaluates S x N field values at 2 x N points in [0,1]^2.
using FieldFn = std::function<Var(const Mat& points)>;

// Central differences with step h, clamped to the unit square near edges
// (degrades to one-sided there). One evaluator call on the four shifted point
// sets keeps the stencil inside the graph.
std::pair<Var, Var> spatial_gradient(const FieldFn& f, const Mat& points, double h);

// --- Adam -------------------------------------------------------------------

struct AdamState {
  std::vector<Mat> m, v;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

void adam_init(AdamState& st, const std::vector<Mat*>& params);
// One descent step in place; caller negates gradients for ascent.
void adam_step(const std::vector<Mat*>& params, const std::vector<Mat>& grads,
               AdamState& st, double lr);

}  // namespace md::ad
