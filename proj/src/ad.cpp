#include "microdesign/ad.hpp"

namespace md::ad {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double silu_fn(double x) { return x * stable_sigmoid(x); }

// d/dx silu(x)
double silu_deriv(double x) {
  double s = stable_sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

bool is_scalar(const Mat& m) { return m.rows() == 1 && m.cols() == 1; }

[[noreturn]] void shape_error(const char* op, const Mat& a, const Mat& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                              std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                              std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

void require_same_or_scalar(const char* op, const Mat& a, const Mat& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return;
  if (is_scalar(a) || is_scalar(b)) return;
  shape_error(op, a, b);
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Const: return "const";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::MatMul: return "matmul";
    case Op::Affine: return "affine";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::RowwiseSum: return "rowwise_sum";
    case Op::ColwiseSum: return "colwise_sum";
    case Op::Square: return "square";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sin: return "sin";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Silu: return "silu";
    case Op::SiluSin: return "silu_sin";
    case Op::SiluId: return "silu_id";
    case Op::Slice: return "slice";
    case Op::ConcatRows: return "concat_rows";
    case Op::ConcatCols: return "concat_cols";
    case Op::Broadcast: return "broadcast";
    case Op::Transpose: return "transpose";
  }
  return "?";
}

int Graph::check(Var v) const {
  if (v.g != this || v.id < 0 || std::size_t(v.id) >= nodes_.size())
    throw std::invalid_argument("Var does not belong to this graph");
  return v.id;
}

Var Graph::push(Node&& n) {
  nodes_.push_back(std::move(n));
  return Var{this, int(nodes_.size() - 1)};
}

Var Graph::param(const Mat& m) {
  Node n;
  n.op = Op::Leaf;
  n.val = m;
  return push(std::move(n));
}

Var Graph::constant(const Mat& m) {
  Node n;
  n.op = Op::Const;
  n.val = m;
  return push(std::move(n));
}

Var Graph::constant(double s) {
  Mat m(1, 1);
  m(0, 0) = s;
  return constant(m);
}

Mat Graph::grad(Var v) const {
  const Node& n = nodes_[check(v)];
  if (n.grad.size() == 0) return Mat::Zero(n.val.rows(), n.val.cols());
  return n.grad;
}

Mat& Graph::grad_ref(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
  return n.grad;
}

namespace {

// accumulate g into target honoring scalar-valued operands
void acc_maybe_scalar(Graph& gr, Mat& target, const Mat& g) {
  if (target.rows() == g.rows() && target.cols() == g.cols())
    target += g;
  else  // target is 1x1, operand was broadcast as a scalar
    target(0, 0) += g.sum();
}

}  // namespace

void Graph::backward(Var loss, std::span<const std::pair<Var, Mat>> seeds) {
  int root = check(loss);
  const Node& ln = nodes_[root];
  if (!is_scalar(ln.val)) throw std::invalid_argument("backward: loss must be 1x1");
  if (!std::isfinite(ln.val(0, 0)))
    throw std::runtime_error("backward: non-finite loss value");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad_ref(root)(0, 0) = 1.0;
  for (const auto& [v, g] : seeds) {
    int id = check(v);
    if (g.rows() != nodes_[id].val.rows() || g.cols() != nodes_[id].val.cols())
      throw std::invalid_argument("backward: seed shape mismatch");
    grad_ref(id) += g;
  }

  for (int i = int(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;  // not on any path to the loss
    const Mat& g = n.grad;
    switch (n.op) {
      case Op::Leaf:
      case Op::Const:
        break;
      case Op::Add: {
        acc_maybe_scalar(*this, grad_ref(n.a), g);
        acc_maybe_scalar(*this, grad_ref(n.b), g);
        break;
      }
      case Op::Sub: {
        acc_maybe_scalar(*this, grad_ref(n.a), g);
        Mat neg = -g;
        acc_maybe_scalar(*this, grad_ref(n.b), neg);
        break;
      }
      case Op::Mul: {
        const Mat& av = nodes_[n.a].val;
        const Mat& bv = nodes_[n.b].val;
        if (is_scalar(av) && !is_scalar(bv)) {
          grad_ref(n.a)(0, 0) += (g.array() * bv.array()).sum();
          grad_ref(n.b) += av(0, 0) * g;
        } else if (!is_scalar(av) && is_scalar(bv)) {
          grad_ref(n.a) += bv(0, 0) * g;
          grad_ref(n.b)(0, 0) += (g.array() * av.array()).sum();
        } else {
          grad_ref(n.a).array() += g.array() * bv.array();
          grad_ref(n.b).array() += g.array() * av.array();
        }
        break;
      }
      case Op::MatMul: {
        const Mat& A = nodes_[n.a].val;
        const Mat& B = nodes_[n.b].val;
        // val = opA(A) * opB(B)
        Mat dA = n.tb ? (g * B) : Mat(g * B.transpose());
        if (n.ta)
          grad_ref(n.a) += dA.transpose();
        else
          grad_ref(n.a) += dA;
        Mat dB = n.ta ? (A * g) : Mat(A.transpose() * g);
        if (n.tb)
          grad_ref(n.b) += dB.transpose();
        else
          grad_ref(n.b) += dB;
        break;
      }
      case Op::Affine: {
        const Mat& W = nodes_[n.a].val;
        const Mat& X = nodes_[n.b].val;
        grad_ref(n.a).noalias() += g * X.transpose();
        grad_ref(n.b).noalias() += W.transpose() * g;
        grad_ref(n.c) += g.rowwise().sum();
        break;
      }
      case Op::Sum: {
        grad_ref(n.a).array() += g(0, 0);
        break;
      }
      case Op::Mean: {
        grad_ref(n.a).array() += g(0, 0) / double(nodes_[n.a].val.size());
        break;
      }
      case Op::RowwiseSum: {
        grad_ref(n.a).colwise() += g.col(0);
        break;
      }
      case Op::ColwiseSum: {
        grad_ref(n.a).rowwise() += g.row(0);
        break;
      }
      case Op::Square: {
        grad_ref(n.a).array() += 2.0 * nodes_[n.a].val.array() * g.array();
        break;
      }
      case Op::Exp: {
        grad_ref(n.a).array() += n.val.array() * g.array();
        break;
      }
      case Op::Log: {
        grad_ref(n.a).array() += g.array() / nodes_[n.a].val.array();
        break;
      }
      case Op::Sin: {
        grad_ref(n.a).array() += nodes_[n.a].val.array().cos() * g.array();
        break;
      }
      case Op::Tanh: {
        grad_ref(n.a).array() += (1.0 - n.val.array().square()) * g.array();
        break;
      }
      case Op::Sigmoid: {
        grad_ref(n.a).array() += n.val.array() * (1.0 - n.val.array()) * g.array();
        break;
      }
      case Op::Silu: {
        grad_ref(n.a).array() +=
            nodes_[n.a].val.unaryExpr(&silu_deriv).array() * g.array();
        break;
      }
      case Op::SiluSin: {
        const Mat& x = nodes_[n.a].val;
        Mat d = x.unaryExpr([](double t) {
          double y = std::sin(M_PI * t + M_PI);
          return silu_deriv(y) * M_PI * std::cos(M_PI * t + M_PI) + 1.0;
        });
        grad_ref(n.a).array() += d.array() * g.array();
        break;
      }
      case Op::SiluId: {
        Mat d = nodes_[n.a].val.unaryExpr([](double t) { return silu_deriv(t) + 1.0; });
        grad_ref(n.a).array() += d.array() * g.array();
        break;
      }
      case Op::Slice: {
        grad_ref(n.a).block(n.i0, n.j0, n.tr, n.tc) += g;
        break;
      }
      case Op::ConcatRows: {
        int ra = int(nodes_[n.a].val.rows());
        grad_ref(n.a) += g.topRows(ra);
        grad_ref(n.b) += g.bottomRows(g.rows() - ra);
        break;
      }
      case Op::ConcatCols: {
        int ca = int(nodes_[n.a].val.cols());
        grad_ref(n.a) += g.leftCols(ca);
        grad_ref(n.b) += g.rightCols(g.cols() - ca);
        break;
      }
      case Op::Broadcast: {
        const Mat& av = nodes_[n.a].val;
        if (is_scalar(av))
          grad_ref(n.a)(0, 0) += g.sum();
        else if (av.cols() == 1)
          grad_ref(n.a) += g.rowwise().sum();
        else
          grad_ref(n.a) += g.colwise().sum();
        break;
      }
      case Op::Transpose: {
        grad_ref(n.a) += g.transpose();
        break;
      }
    }
  }
}

void Graph::recompute() {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    auto A = [&]() -> const Mat& { return nodes_[n.a].val; };
    auto B = [&]() -> const Mat& { return nodes_[n.b].val; };
    switch (n.op) {
      case Op::Leaf:
      case Op::Const:
        break;
      case Op::Add:
        if (is_scalar(A()) && !is_scalar(B())) n.val = A()(0, 0) + B().array();
        else if (!is_scalar(A()) && is_scalar(B())) n.val = A().array() + B()(0, 0);
        else n.val = A() + B();
        break;
      case Op::Sub:
        if (is_scalar(A()) && !is_scalar(B())) n.val = A()(0, 0) - B().array();
        else if (!is_scalar(A()) && is_scalar(B())) n.val = A().array() - B()(0, 0);
        else n.val = A() - B();
        break;
      case Op::Mul:
        if (is_scalar(A()) && !is_scalar(B())) n.val = A()(0, 0) * B();
        else if (!is_scalar(A()) && is_scalar(B())) n.val = B()(0, 0) * A();
        else n.val = A().cwiseProduct(B());
        break;
      case Op::MatMul: {
        if (n.ta && n.tb) n.val = A().transpose() * B().transpose();
        else if (n.ta) n.val = A().transpose() * B();
        else if (n.tb) n.val = A() * B().transpose();
        else n.val = A() * B();
        break;
      }
      case Op::Affine:
        n.val = (A() * B()).colwise() + nodes_[n.c].val.col(0);
        break;
      case Op::Sum: n.val = Mat::Constant(1, 1, A().sum()); break;
      case Op::Mean: n.val = Mat::Constant(1, 1, A().mean()); break;
      case Op::RowwiseSum: n.val = A().rowwise().sum(); break;
      case Op::ColwiseSum: n.val = A().colwise().sum(); break;
      case Op::Square: n.val = A().array().square(); break;
      case Op::Exp: n.val = A().array().exp(); break;
      case Op::Log: n.val = A().array().log(); break;
      case Op::Sin: n.val = A().array().sin(); break;
      case Op::Tanh: n.val = A().array().tanh(); break;
      case Op::Sigmoid: n.val = A().unaryExpr(&stable_sigmoid); break;
      case Op::Silu: n.val = A().unaryExpr(&silu_fn); break;
      case Op::SiluSin:
        n.val = A().unaryExpr([](double t) {
          return t + silu_fn(std::sin(M_PI * t + M_PI));
        });
        break;
      case Op::SiluId:
        n.val = A().unaryExpr([](double t) { return t + silu_fn(t); });
        break;
      case Op::Slice: n.val = A().block(n.i0, n.j0, n.tr, n.tc); break;
      case Op::ConcatRows: {
        Mat v(A().rows() + B().rows(), A().cols());
        v << A(), B();
        n.val = std::move(v);
        break;
      }
      case Op::ConcatCols: {
        Mat v(A().rows(), A().cols() + B().cols());
        v << A(), B();
        n.val = std::move(v);
        break;
      }
      case Op::Broadcast: {
        const Mat& av = A();
        if (is_scalar(av)) n.val = Mat::Constant(n.tr, n.tc, av(0, 0));
        else if (av.cols() == 1) n.val = av.col(0).replicate(1, n.tc);
        else n.val = av.row(0).replicate(n.tr, 1);
        break;
      }
      case Op::Transpose: n.val = A().transpose(); break;
    }
  }
}

// --- builders ---------------------------------------------------------------

namespace {

Graph* same_graph(Var a, Var b) {
  if (a.g == nullptr || a.g != b.g)
    throw std::invalid_argument("operands belong to different graphs");
  return a.g;
}

Var binary(Op op, Var a, Var b, const char* name) {
  Graph* g = same_graph(a, b);
  const Mat& av = g->value(a);
  const Mat& bv = g->value(b);
  require_same_or_scalar(name, av, bv);
  Node n;
  n.op = op;
  n.a = a.id;
  n.b = b.id;
  switch (op) {
    case Op::Add:
      if (is_scalar(av) && !is_scalar(bv)) n.val = av(0, 0) + bv.array();
      else if (!is_scalar(av) && is_scalar(bv)) n.val = av.array() + bv(0, 0);
      else n.val = av + bv;
      break;
    case Op::Sub:
      if (is_scalar(av) && !is_scalar(bv)) n.val = av(0, 0) - bv.array();
      else if (!is_scalar(av) && is_scalar(bv)) n.val = av.array() - bv(0, 0);
      else n.val = av - bv;
      break;
    case Op::Mul:
      if (is_scalar(av) && !is_scalar(bv)) n.val = av(0, 0) * bv;
      else if (!is_scalar(av) && is_scalar(bv)) n.val = bv(0, 0) * av;
      else n.val = av.cwiseProduct(bv);
      break;
    default: throw std::logic_error("binary: bad op");
  }
  return g->push(std::move(n));
}

Var unary(Op op, Var a, Mat&& val) {
  Node n;
  n.op = op;
  n.a = a.id;
  n.val = std::move(val);
  return a.g->push(std::move(n));
}

}  // namespace

Var add(Var a, Var b) { return binary(Op::Add, a, b, "add"); }
Var sub(Var a, Var b) { return binary(Op::Sub, a, b, "sub"); }
Var mul(Var a, Var b) { return binary(Op::Mul, a, b, "mul"); }

Var matmul(Var a, Var b, bool trans_a, bool trans_b) {
  Graph* g = same_graph(a, b);
  const Mat& A = g->value(a);
  const Mat& B = g->value(b);
  Eigen::Index ak = trans_a ? A.rows() : A.cols();
  Eigen::Index bk = trans_b ? B.cols() : B.rows();
  if (ak != bk) shape_error("matmul", A, B);
  Node n;
  n.op = Op::MatMul;
  n.a = a.id;
  n.b = b.id;
  n.ta = trans_a;
  n.tb = trans_b;
  if (trans_a && trans_b) n.val = A.transpose() * B.transpose();
  else if (trans_a) n.val = A.transpose() * B;
  else if (trans_b) n.val = A * B.transpose();
  else n.val = A * B;
  return g->push(std::move(n));
}

Var affine(Var w, Var x, Var b) {
  Graph* g = same_graph(w, x);
  same_graph(x, b);
  const Mat& W = g->value(w);
  const Mat& X = g->value(x);
  const Mat& bias = g->value(b);
  if (W.cols() != X.rows() || bias.rows() != W.rows() || bias.cols() != 1)
    throw std::invalid_argument("affine: incompatible shapes");
  Node n;
  n.op = Op::Affine;
  n.a = w.id;
  n.b = x.id;
  n.c = b.id;
  n.val = (W * X).colwise() + bias.col(0);
  return g->push(std::move(n));
}

Var sum(Var a) { return unary(Op::Sum, a, Mat::Constant(1, 1, a.g->value(a).sum())); }
Var mean(Var a) { return unary(Op::Mean, a, Mat::Constant(1, 1, a.g->value(a).mean())); }
Var rowwise_sum(Var a) { return unary(Op::RowwiseSum, a, a.g->value(a).rowwise().sum()); }
Var colwise_sum(Var a) { return unary(Op::ColwiseSum, a, a.g->value(a).colwise().sum()); }
Var square(Var a) { return unary(Op::Square, a, a.g->value(a).array().square()); }
Var exp(Var a) { return unary(Op::Exp, a, a.g->value(a).array().exp()); }

Var log(Var a) {
  const Mat& v = a.g->value(a);
  if ((v.array() <= 0.0).any())
    throw std::domain_error("log: non-positive input");
  return unary(Op::Log, a, v.array().log());
}

Var sin(Var a) { return unary(Op::Sin, a, a.g->value(a).array().sin()); }
Var tanh(Var a) { return unary(Op::Tanh, a, a.g->value(a).array().tanh()); }
Var sigmoid(Var a) { return unary(Op::Sigmoid, a, a.g->value(a).unaryExpr(&stable_sigmoid)); }
Var silu(Var a) { return unary(Op::Silu, a, a.g->value(a).unaryExpr(&silu_fn)); }

Var silu_sin(Var a) {
  return unary(Op::SiluSin, a, a.g->value(a).unaryExpr([](double t) {
    return t + silu_fn(std::sin(M_PI * t + M_PI));
  }));
}

Var silu_id(Var a) {
  return unary(Op::SiluId, a,
               a.g->value(a).unaryExpr([](double t) { return t + silu_fn(t); }));
}

Var slice(Var a, int i0, int j0, int rows, int cols) {
  const Mat& v = a.g->value(a);
  if (i0 < 0 || j0 < 0 || rows <= 0 || cols <= 0 || i0 + rows > v.rows() ||
      j0 + cols > v.cols())
    throw std::invalid_argument("slice: window out of range");
  Node n;
  n.op = Op::Slice;
  n.a = a.id;
  n.i0 = i0;
  n.j0 = j0;
  n.tr = rows;
  n.tc = cols;
  n.val = v.block(i0, j0, rows, cols);
  return a.g->push(std::move(n));
}

Var concat_rows(Var a, Var b) {
  Graph* g = same_graph(a, b);
  const Mat& A = g->value(a);
  const Mat& B = g->value(b);
  if (A.cols() != B.cols()) shape_error("concat_rows", A, B);
  Node n;
  n.op = Op::ConcatRows;
  n.a = a.id;
  n.b = b.id;
  Mat v(A.rows() + B.rows(), A.cols());
  v << A, B;
  n.val = std::move(v);
  return g->push(std::move(n));
}

Var concat_cols(Var a, Var b) {
  Graph* g = same_graph(a, b);
  const Mat& A = g->value(a);
  const Mat& B = g->value(b);
  if (A.rows() != B.rows()) shape_error("concat_cols", A, B);
  Node n;
  n.op = Op::ConcatCols;
  n.a = a.id;
  n.b = b.id;
  Mat v(A.rows(), A.cols() + B.cols());
  v << A, B;
  n.val = std::move(v);
  return g->push(std::move(n));
}

Var broadcast(Var a, int rows, int cols) {
  const Mat& v = a.g->value(a);
  Node n;
  n.op = Op::Broadcast;
  n.a = a.id;
  n.tr = rows;
  n.tc = cols;
  if (is_scalar(v)) n.val = Mat::Constant(rows, cols, v(0, 0));
  else if (v.cols() == 1 && v.rows() == rows) n.val = v.col(0).replicate(1, cols);
  else if (v.rows() == 1 && v.cols() == cols) n.val = v.row(0).replicate(rows, 1);
  else throw std::invalid_argument("broadcast: source must be 1x1, rx1 or 1xc matching target");
  return a.g->push(std::move(n));
}

Var transpose(Var a) { return unary(Op::Transpose, a, a.g->value(a).transpose()); }

Var scale(Var a, double s) { return mul(a, a.g->constant(s)); }

std::pair<Var, Var> spatial_gradient(const FieldFn& f, const Mat& points, double h) {
  if (points.rows() != 2) throw std::invalid_argument("spatial_gradient: points must be 2xN");
  if (h <= 0) throw std::invalid_argument("spatial_gradient: h must be positive");
  const int N = int(points.cols());
  if ((points.array() < 0.0).any() || (points.array() > 1.0).any())
    throw std::invalid_argument("spatial_gradient: points outside [0,1]^2");

  Mat shifted(2, 4 * N);
  Mat inv_dx(1, N), inv_dy(1, N);
  for (int i = 0; i < N; ++i) {
    double x = points(0, i), y = points(1, i);
    double xp = std::min(x + h, 1.0), xm = std::max(x - h, 0.0);
    double yp = std::min(y + h, 1.0), ym = std::max(y - h, 0.0);
    shifted(0, i) = xp;          shifted(1, i) = y;
    shifted(0, N + i) = xm;      shifted(1, N + i) = y;
    shifted(0, 2 * N + i) = x;   shifted(1, 2 * N + i) = yp;
    shifted(0, 3 * N + i) = x;   shifted(1, 3 * N + i) = ym;
    inv_dx(0, i) = 1.0 / (xp - xm);
    inv_dy(0, i) = 1.0 / (yp - ym);
  }
  Var F = f(shifted);
  Graph* g = F.g;
  const int S = int(g->value(F).rows());
  if (g->value(F).cols() != 4 * N)
    throw std::invalid_argument("spatial_gradient: evaluator returned wrong width");
  Var fxp = slice(F, 0, 0, S, N);
  Var fxm = slice(F, 0, N, S, N);
  Var fyp = slice(F, 0, 2 * N, S, N);
  Var fym = slice(F, 0, 3 * N, S, N);
  Var cx = g->constant(inv_dx.replicate(S, 1));
  Var cy = g->constant(inv_dy.replicate(S, 1));
  return {mul(sub(fxp, fxm), cx), mul(sub(fyp, fym), cy)};
}

// --- Adam -------------------------------------------------------------------

void adam_init(AdamState& st, const std::vector<Mat*>& params) {
  st.m.clear();
  st.v.clear();
  st.t = 0;
  for (const Mat* p : params) {
    st.m.push_back(Mat::Zero(p->rows(), p->cols()));
    st.v.push_back(Mat::Zero(p->rows(), p->cols()));
  }
}

void adam_step(const std::vector<Mat*>& params, const std::vector<Mat>& grads,
               AdamState& st, double lr) {
  if (params.size() != grads.size() || params.size() != st.m.size())
    throw std::invalid_argument("adam_step: state/param/grad count mismatch");
  st.t += 1;
  double c1 = 1.0 - std::pow(st.beta1, double(st.t));
  double c2 = 1.0 - std::pow(st.beta2, double(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Mat& p = *params[i];
    const Mat& g = grads[i];
    if (p.rows() != g.rows() || p.cols() != g.cols())
      throw std::invalid_argument("adam_step: gradient shape mismatch");
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g.cwiseProduct(g);
    Mat mhat = st.m[i] / c1;
    Mat vhat = st.v[i] / c2;
    p.array() -= lr * mhat.array() / (vhat.array().sqrt() + st.eps);
  }
}

}  // namespace md::ad
