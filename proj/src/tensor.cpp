#include "ssmil/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace ssmil {

namespace {

std::atomic<std::uint64_t> g_seq{0};

thread_local bool g_grad_enabled = true;

void check_finite_shape(const Matrix& m, const char* op) {
  contract(m.rows() >= 0 && m.cols() >= 0, std::string(op) + ": negative extent");
}

// Reduces a gradient of the broadcasted result back to the operand's shape.
Matrix reduce_to(const Matrix& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  Matrix out;
  if (rows == 1 && cols == g.cols()) {
    out = g.colwise().sum();
  } else if (cols == 1 && rows == g.rows()) {
    out = g.rowwise().sum();
  } else {
    out.resize(1, 1);
    out(0, 0) = g.sum();
  }
  return out;
}

bool broadcastable(const Matrix& a, Index rows, Index cols) {
  return (a.rows() == rows || a.rows() == 1) && (a.cols() == cols || a.cols() == 1);
}

Matrix broadcast_to(const Matrix& a, Index rows, Index cols) {
  if (a.rows() == rows && a.cols() == cols) return a;
  return a.replicate(rows / a.rows() + (rows % a.rows() ? 1 : 0),
                     cols / a.cols() + (cols % a.cols() ? 1 : 0))
      .block(0, 0, rows, cols);
}

void broadcast_shapes(const char* op, const Matrix& a, const Matrix& b, Index& rows,
                      Index& cols) {
  rows = std::max(a.rows(), b.rows());
  cols = std::max(a.cols(), b.cols());
  contract(broadcastable(a, rows, cols) && broadcastable(b, rows, cols),
           std::string(op) + ": incompatible shapes " + shape_str(a.rows(), a.cols()) +
               " and " + shape_str(b.rows(), b.cols()));
}

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

double softplus_value(double z) {
  if (z > 30.0) return z;  // log(1+e^z) = z to double precision past this
  return std::log1p(std::exp(z));
}

void TensorNode::accumulate(const std::shared_ptr<TensorNode>& node, const Matrix& g) {
  if (!node->requires_grad) return;
  Matrix& buf = node->grad_buffer();
  buf += g;
}

Matrix& TensorNode::grad_buffer() {
  if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
    grad = Matrix::Zero(value.rows(), value.cols());
  }
  return grad;
}

Tensor Tensor::constant(Matrix value) {
  auto node = std::make_shared<TensorNode>();
  node->value = std::move(value);
  node->seq = ++g_seq;
  return Tensor(std::move(node));
}

Tensor Tensor::param(Matrix value) {
  auto node = std::make_shared<TensorNode>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->seq = ++g_seq;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return requires_grad ? param(std::move(m)) : constant(std::move(m));
}

const Matrix& Tensor::value() const {
  contract(defined(), "Tensor: use of empty handle");
  return node_->value;
}

const Matrix& Tensor::grad() const {
  contract(defined() && node_->requires_grad, "Tensor::grad: tensor does not track gradients");
  contract(node_->grad.size() == node_->value.size(), "Tensor::grad: no gradient accumulated yet");
  return node_->grad;
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }

void Tensor::zero_grad() {
  contract(defined(), "Tensor::zero_grad: empty handle");
  node_->grad = Matrix::Zero(node_->value.rows(), node_->value.cols());
}

double Tensor::flat(Index i) const {
  const Matrix& v = value();
  contract(i >= 0 && i < v.size(), "Tensor::flat: index out of range");
  return v(i / v.cols(), i % v.cols());
}

void Tensor::set_flat(Index i, double x) {
  contract(defined(), "Tensor::set_flat: empty handle");
  Matrix& v = node_->value;
  contract(i >= 0 && i < v.size(), "Tensor::set_flat: index out of range");
  v(i / v.cols(), i % v.cols()) = x;
}

double Tensor::grad_flat(Index i) const {
  const Matrix& g = grad();
  return g(i / g.cols(), i % g.cols());
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor make_op(const char* name, Matrix value, std::vector<Tensor> inputs,
               std::function<void(TensorNode&)> backward_fn) {
  check_finite_shape(value, name);
  auto node = std::make_shared<TensorNode>();
  node->value = std::move(value);
  node->op = name;
  node->seq = ++g_seq;
  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const Tensor& t : inputs) needs_grad = needs_grad || t.requires_grad();
  }
  node->requires_grad = needs_grad;
  if (needs_grad) {
    node->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) node->parents.push_back(t.node());
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  contract(loss.defined(), "backward: empty loss");
  contract(loss.rows() == 1 && loss.cols() == 1,
           "backward: loss must be scalar, got " + shape_str(loss.rows(), loss.cols()));
  contract(loss.requires_grad(), "backward: loss does not depend on any parameter");

  // Gather the reachable grad-requiring subgraph, then sweep in exact reverse
  // execution order. Sequence stamps are strictly increasing per domain, so a
  // descending sort reproduces the recording order backwards.
  std::vector<std::shared_ptr<TensorNode>> nodes;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::shared_ptr<TensorNode>> stack{loss.node()};
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    if (!n->requires_grad || !seen.insert(n.get()).second) continue;
    nodes.push_back(n);
    for (const auto& p : n->parents) stack.push_back(p);
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const auto& a, const auto& b) { return a->seq > b->seq; });

  loss.node()->grad_buffer()(0, 0) += 1.0;
  for (const auto& n : nodes) {
    if (n->backward) {
      n->backward(*n);
      n->backward = nullptr;  // graph is consumed; leaf grads survive
      n->parents.clear();
    }
  }
}

// ---- primitives -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  const Index am = transpose_a ? a.cols() : a.rows();
  const Index ak = transpose_a ? a.rows() : a.cols();
  const Index bk = transpose_b ? b.cols() : b.rows();
  const Index bn = transpose_b ? b.rows() : b.cols();
  contract(ak == bk, "matmul: inner extents differ, " + shape_str(a.rows(), a.cols()) +
                         (transpose_a ? "^T" : "") + " * " + shape_str(b.rows(), b.cols()) +
                         (transpose_b ? "^T" : ""));
  Matrix value(am, bn);
  if (!transpose_a && !transpose_b) value.noalias() = a.value() * b.value();
  else if (transpose_a && !transpose_b) value.noalias() = a.value().transpose() * b.value();
  else if (!transpose_a && transpose_b) value.noalias() = a.value() * b.value().transpose();
  else value.noalias() = a.value().transpose() * b.value().transpose();

  return make_op("matmul", std::move(value), {a, b},
                 [transpose_a, transpose_b](TensorNode& n) {
                   const Matrix& g = n.grad;
                   const auto& pa = n.parents[0];
                   const auto& pb = n.parents[1];
                   if (pa->requires_grad) {
                     Matrix da;
                     if (!transpose_a && !transpose_b) da.noalias() = g * pb->value.transpose();
                     else if (!transpose_a && transpose_b) da.noalias() = g * pb->value;
                     else if (transpose_a && !transpose_b) da.noalias() = pb->value * g.transpose();
                     else da.noalias() = pb->value.transpose() * g.transpose();
                     TensorNode::accumulate(pa, da);
                   }
                   if (pb->requires_grad) {
                     Matrix db;
                     if (!transpose_a && !transpose_b) db.noalias() = pa->value.transpose() * g;
                     else if (transpose_a && !transpose_b) db.noalias() = pa->value * g;
                     else if (!transpose_a && transpose_b) db.noalias() = g.transpose() * pa->value;
                     else db.noalias() = g.transpose() * pa->value.transpose();
                     TensorNode::accumulate(pb, db);
                   }
                 });
}

namespace {

enum class EwKind { add, sub, mul };

Tensor elementwise_binary(const char* name, EwKind kind, const Tensor& a, const Tensor& b) {
  Index rows = 0, cols = 0;
  broadcast_shapes(name, a.value(), b.value(), rows, cols);
  const Matrix ab = broadcast_to(a.value(), rows, cols);
  const Matrix bb = broadcast_to(b.value(), rows, cols);
  Matrix value;
  switch (kind) {
    case EwKind::add: value = ab + bb; break;
    case EwKind::sub: value = ab - bb; break;
    case EwKind::mul: value = ab.cwiseProduct(bb); break;
  }
  return make_op(name, std::move(value), {a, b}, [kind, rows, cols](TensorNode& n) {
    const Matrix& g = n.grad;
    const auto& pa = n.parents[0];
    const auto& pb = n.parents[1];
    if (pa->requires_grad) {
      Matrix da = (kind == EwKind::mul)
                      ? Matrix(g.cwiseProduct(broadcast_to(pb->value, rows, cols)))
                      : g;
      TensorNode::accumulate(pa, reduce_to(da, pa->value.rows(), pa->value.cols()));
    }
    if (pb->requires_grad) {
      Matrix db;
      switch (kind) {
        case EwKind::add: db = g; break;
        case EwKind::sub: db = -g; break;
        case EwKind::mul: db = g.cwiseProduct(broadcast_to(pa->value, rows, cols)); break;
      }
      TensorNode::accumulate(pb, reduce_to(db, pb->value.rows(), pb->value.cols()));
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise_binary("add", EwKind::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise_binary("sub", EwKind::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise_binary("mul", EwKind::mul, a, b); }

Tensor scale(const Tensor& a, double factor) {
  return make_op("scale", a.value() * factor, {a}, [factor](TensorNode& n) {
    TensorNode::accumulate(n.parents[0], n.grad * factor);
  });
}

Tensor exp(const Tensor& x) {
  Matrix value = x.value().array().exp().matrix();
  return make_op("exp", std::move(value), {x}, [](TensorNode& n) {
    TensorNode::accumulate(n.parents[0], n.grad.cwiseProduct(n.value));
  });
}

Tensor log(const Tensor& x) {
  contract((x.value().array() > 0.0).all(), "log: domain requires strictly positive input");
  Matrix value = x.value().array().log().matrix();
  return make_op("log", std::move(value), {x}, [](TensorNode& n) {
    TensorNode::accumulate(n.parents[0], n.grad.cwiseQuotient(n.parents[0]->value));
  });
}

Tensor softplus(const Tensor& x) {
  Matrix value = x.value().unaryExpr([](double z) { return softplus_value(z); });
  return make_op("softplus", std::move(value), {x}, [](TensorNode& n) {
    Matrix d = n.parents[0]->value.unaryExpr([](double z) { return stable_sigmoid(z); });
    TensorNode::accumulate(n.parents[0], n.grad.cwiseProduct(d));
  });
}

Tensor tanh_op(const Tensor& x) {
  Matrix value = x.value().array().tanh().matrix();
  return make_op("tanh", std::move(value), {x}, [](TensorNode& n) {
    Matrix d = (1.0 - n.value.array().square()).matrix();
    TensorNode::accumulate(n.parents[0], n.grad.cwiseProduct(d));
  });
}

Tensor sigmoid(const Tensor& x) {
  // tanh form vectorizes and is stable across the whole range
  Matrix value = (0.5 * (1.0 + (0.5 * x.value().array()).tanh())).matrix();
  return make_op("sigmoid", std::move(value), {x}, [](TensorNode& n) {
    Matrix d = n.value.cwiseProduct((1.0 - n.value.array()).matrix());
    TensorNode::accumulate(n.parents[0], n.grad.cwiseProduct(d));
  });
}

Tensor rms_norm(const Tensor& x, const Tensor& gain) {
  contract(gain.rows() == 1 && gain.cols() == x.cols(),
           "rms_norm: gain must be [1x" + std::to_string(x.cols()) + "], got " +
               shape_str(gain.rows(), gain.cols()));
  const Index n = x.rows(), d = x.cols();
  contract(d >= 1, "rms_norm: empty feature axis");
  Matrix value(n, d);
  Vector denom(n), rms(n);
  for (Index r = 0; r < n; ++r) {
    rms(r) = std::sqrt(x.value().row(r).squaredNorm() / static_cast<double>(d));
    denom(r) = rms(r) + 1e-6;
    value.row(r) = x.value().row(r).cwiseProduct(gain.value().row(0)) / denom(r);
  }
  return make_op("rms_norm", std::move(value), {x, gain},
                 [denom, rms, d](TensorNode& n_) {
                   const Matrix& g = n_.grad;
                   const auto& px = n_.parents[0];
                   const auto& pg = n_.parents[1];
                   const Matrix& xv = px->value;
                   const Matrix& gv = pg->value;
                   if (pg->requires_grad) {
                     Matrix dgain = Matrix::Zero(1, d);
                     for (Index r = 0; r < xv.rows(); ++r)
                       dgain.row(0) += g.row(r).cwiseProduct(xv.row(r)) / denom(r);
                     TensorNode::accumulate(pg, dgain);
                   }
                   if (px->requires_grad) {
                     Matrix dx(xv.rows(), d);
                     for (Index r = 0; r < xv.rows(); ++r) {
                       const double inner = g.row(r).cwiseProduct(gv.row(0)).dot(xv.row(r));
                       dx.row(r) = g.row(r).cwiseProduct(gv.row(0)) / denom(r);
                       if (rms(r) > 0.0)
                         dx.row(r) -= xv.row(r) * (inner / (denom(r) * denom(r) * d * rms(r)));
                     }
                     TensorNode::accumulate(px, dx);
                   }
                 });
}

Tensor softmax(const Tensor& x) {
  contract(x.cols() >= 1, "softmax: empty axis, shape " + shape_str(x.rows(), x.cols()));
  Matrix value(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double m = x.value().row(r).maxCoeff();
    Eigen::RowVectorXd e = (x.value().row(r).array() - m).exp();
    value.row(r) = e / e.sum();
  }
  return make_op("softmax", std::move(value), {x}, [](TensorNode& n) {
    Matrix dx(n.value.rows(), n.value.cols());
    for (Index r = 0; r < n.value.rows(); ++r) {
      const double dot = n.grad.row(r).dot(n.value.row(r));
      dx.row(r) = n.value.row(r).cwiseProduct((n.grad.row(r).array() - dot).matrix());
    }
    TensorNode::accumulate(n.parents[0], dx);
  });
}

Tensor masked_softmax(const Tensor& scores, const MaskVec& keep) {
  contract(scores.cols() == 1, "masked_softmax: scores must be a column, got " +
                                   shape_str(scores.rows(), scores.cols()));
  contract(static_cast<Index>(keep.size()) == scores.rows(),
           "masked_softmax: mask length " + std::to_string(keep.size()) + " vs " +
               std::to_string(scores.rows()) + " scores");
  const Index n = scores.rows();
  double m = -std::numeric_limits<double>::infinity();
  Index kept = 0;
  for (Index i = 0; i < n; ++i)
    if (keep[i]) {
      m = std::max(m, scores.value()(i, 0));
      ++kept;
    }
  contract(kept > 0, "masked_softmax: every entry masked");
  Matrix value = Matrix::Zero(n, 1);
  double z = 0.0;
  for (Index i = 0; i < n; ++i)
    if (keep[i]) {
      value(i, 0) = std::exp(scores.value()(i, 0) - m);
      z += value(i, 0);
    }
  for (Index i = 0; i < n; ++i)
    if (keep[i]) value(i, 0) /= z;
  return make_op("masked_softmax", std::move(value), {scores}, [keep](TensorNode& n_) {
    const Index n = n_.value.rows();
    double t = 0.0;
    for (Index i = 0; i < n; ++i) t += n_.value(i, 0) * n_.grad(i, 0);
    Matrix dx = Matrix::Zero(n, 1);
    for (Index i = 0; i < n; ++i)
      if (keep[i]) dx(i, 0) = n_.value(i, 0) * (n_.grad(i, 0) - t);
    TensorNode::accumulate(n_.parents[0], dx);
  });
}

Tensor depthwise_dilated_conv1d(const Tensor& x, const Tensor& kernel, int dilation) {
  const Index len = x.rows(), ch = x.cols(), k = kernel.rows();
  contract(k >= 1 && k % 2 == 1,
           "depthwise_dilated_conv1d: kernel length must be odd and >= 1, got " +
               std::to_string(k));
  contract(dilation >= 1, "depthwise_dilated_conv1d: dilation must be >= 1");
  contract(kernel.cols() == ch, "depthwise_dilated_conv1d: kernel " +
                                    shape_str(k, kernel.cols()) + " vs input " +
                                    shape_str(len, ch));
  const Index half = (k - 1) / 2;
  Matrix value = Matrix::Zero(len, ch);
  for (Index r = 0; r < len; ++r)
    for (Index m = 0; m < k; ++m) {
      const Index src = r + (m - half) * dilation;
      if (src < 0 || src >= len) continue;
      value.row(r) += kernel.value().row(m).cwiseProduct(x.value().row(src));
    }
  return make_op("depthwise_dilated_conv1d", std::move(value), {x, kernel},
                 [k, half, dilation, len](TensorNode& n) {
                   const auto& px = n.parents[0];
                   const auto& pk = n.parents[1];
                   Matrix dx = Matrix::Zero(px->value.rows(), px->value.cols());
                   Matrix dk = Matrix::Zero(pk->value.rows(), pk->value.cols());
                   for (Index r = 0; r < len; ++r)
                     for (Index m = 0; m < k; ++m) {
                       const Index src = r + (m - half) * dilation;
                       if (src < 0 || src >= len) continue;
                       dx.row(src) += pk->value.row(m).cwiseProduct(n.grad.row(r));
                       dk.row(m) += px->value.row(src).cwiseProduct(n.grad.row(r));
                     }
                   TensorNode::accumulate(px, dx);
                   TensorNode::accumulate(pk, dk);
                 });
}

Tensor reduce_mean(const Tensor& x, ReduceAxis axis) {
  contract(x.size() >= 1, "reduce_mean: empty input");
  Matrix value;
  switch (axis) {
    case ReduceAxis::rows: value = x.value().colwise().mean(); break;
    case ReduceAxis::cols: value = x.value().rowwise().mean(); break;
    case ReduceAxis::all:
      value.resize(1, 1);
      value(0, 0) = x.value().mean();
      break;
  }
  const Index rows = x.rows(), cols = x.cols();
  return make_op("reduce_mean", std::move(value), {x}, [axis, rows, cols](TensorNode& n) {
    Matrix dx(rows, cols);
    switch (axis) {
      case ReduceAxis::rows: dx = n.grad.replicate(rows, 1) / static_cast<double>(rows); break;
      case ReduceAxis::cols: dx = n.grad.replicate(1, cols) / static_cast<double>(cols); break;
      case ReduceAxis::all: dx.setConstant(n.grad(0, 0) / static_cast<double>(rows * cols)); break;
    }
    TensorNode::accumulate(n.parents[0], dx);
  });
}

Tensor reduce_max(const Tensor& x, ReduceAxis axis) {
  contract(x.size() >= 1, "reduce_max: empty input");
  const Index rows = x.rows(), cols = x.cols();
  Matrix value;
  std::vector<Index> arg;  // flat row-major argmax per output entry
  switch (axis) {
    case ReduceAxis::rows: {
      value.resize(1, cols);
      arg.resize(cols);
      for (Index c = 0; c < cols; ++c) {
        Index r;
        value(0, c) = x.value().col(c).maxCoeff(&r);
        arg[c] = r * cols + c;
      }
      break;
    }
    case ReduceAxis::cols: {
      value.resize(rows, 1);
      arg.resize(rows);
      for (Index r = 0; r < rows; ++r) {
        Index c;
        value(r, 0) = x.value().row(r).maxCoeff(&c);
        arg[r] = r * cols + c;
      }
      break;
    }
    case ReduceAxis::all: {
      value.resize(1, 1);
      Index r, c;
      value(0, 0) = x.value().maxCoeff(&r, &c);
      arg = {r * cols + c};
      break;
    }
  }
  return make_op("reduce_max", std::move(value), {x}, [arg, rows, cols](TensorNode& n) {
    Matrix dx = Matrix::Zero(rows, cols);
    for (size_t i = 0; i < arg.size(); ++i) {
      const Index gr = (n.grad.rows() == 1) ? 0 : static_cast<Index>(i);
      const Index gc = (n.grad.rows() == 1) ? static_cast<Index>(i) : 0;
      dx(arg[i] / cols, arg[i] % cols) += n.grad(gr, gc);
    }
    TensorNode::accumulate(n.parents[0], dx);
  });
}

Tensor concat(const std::vector<Tensor>& parts, ConcatAxis axis) {
  contract(!parts.empty(), "concat: no inputs");
  Index rows = parts[0].rows(), cols = parts[0].cols();
  for (size_t i = 1; i < parts.size(); ++i) {
    if (axis == ConcatAxis::rows) {
      contract(parts[i].cols() == cols, "concat: column mismatch at input " + std::to_string(i));
      rows += parts[i].rows();
    } else {
      contract(parts[i].rows() == rows, "concat: row mismatch at input " + std::to_string(i));
      cols += parts[i].cols();
    }
  }
  Matrix value(rows, cols);
  Index off = 0;
  for (const Tensor& p : parts) {
    if (axis == ConcatAxis::rows) {
      value.middleRows(off, p.rows()) = p.value();
      off += p.rows();
    } else {
      value.middleCols(off, p.cols()) = p.value();
      off += p.cols();
    }
  }
  return make_op("concat", std::move(value), parts, [axis](TensorNode& n) {
    Index off = 0;
    for (auto& p : n.parents) {
      if (axis == ConcatAxis::rows) {
        TensorNode::accumulate(p, n.grad.middleRows(off, p->value.rows()));
        off += p->value.rows();
      } else {
        TensorNode::accumulate(p, n.grad.middleCols(off, p->value.cols()));
        off += p->value.cols();
      }
    }
  });
}

Tensor slice(const Tensor& x, Index r0, Index nr, Index c0, Index nc) {
  contract(r0 >= 0 && nr >= 0 && r0 + nr <= x.rows() && c0 >= 0 && nc >= 0 &&
               c0 + nc <= x.cols(),
           "slice: block [" + std::to_string(r0) + "," + std::to_string(r0 + nr) + ")x[" +
               std::to_string(c0) + "," + std::to_string(c0 + nc) + ") outside " +
               shape_str(x.rows(), x.cols()));
  Matrix value = x.value().block(r0, c0, nr, nc);
  return make_op("slice", std::move(value), {x}, [r0, c0, nr, nc](TensorNode& n) {
    Matrix dx = Matrix::Zero(n.parents[0]->value.rows(), n.parents[0]->value.cols());
    dx.block(r0, c0, nr, nc) = n.grad;
    TensorNode::accumulate(n.parents[0], dx);
  });
}

Tensor select_by_mask(const MaskVec& keep, const Tensor& a, const Tensor& b) {
  contract(a.rows() == b.rows() && a.cols() == b.cols(),
           "elementwise_select_by_mask: branch shapes differ, " + shape_str(a.rows(), a.cols()) +
               " vs " + shape_str(b.rows(), b.cols()));
  contract(static_cast<Index>(keep.size()) == a.rows(),
           "elementwise_select_by_mask: mask length " + std::to_string(keep.size()) + " vs " +
               std::to_string(a.rows()) + " rows");
  Matrix value(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) value.row(r) = keep[r] ? a.value().row(r) : b.value().row(r);
  return make_op("elementwise_select_by_mask", std::move(value), {a, b}, [keep](TensorNode& n) {
    const auto& pa = n.parents[0];
    const auto& pb = n.parents[1];
    if (pa->requires_grad) {
      Matrix da = Matrix::Zero(pa->value.rows(), pa->value.cols());
      for (Index r = 0; r < da.rows(); ++r)
        if (keep[r]) da.row(r) = n.grad.row(r);
      TensorNode::accumulate(pa, da);
    }
    if (pb->requires_grad) {
      Matrix db = Matrix::Zero(pb->value.rows(), pb->value.cols());
      for (Index r = 0; r < db.rows(); ++r)
        if (!keep[r]) db.row(r) = n.grad.row(r);
      TensorNode::accumulate(pb, db);
    }
  });
}

Tensor gather_rows(const Tensor& x, const std::vector<Index>& rows) {
  Matrix value(static_cast<Index>(rows.size()), x.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    contract(rows[i] >= 0 && rows[i] < x.rows(), "gather_rows: row index out of range");
    value.row(static_cast<Index>(i)) = x.value().row(rows[i]);
  }
  return make_op("gather_rows", std::move(value), {x}, [rows](TensorNode& n) {
    Matrix dx = Matrix::Zero(n.parents[0]->value.rows(), n.parents[0]->value.cols());
    for (size_t i = 0; i < rows.size(); ++i) dx.row(rows[i]) += n.grad.row(static_cast<Index>(i));
    TensorNode::accumulate(n.parents[0], dx);
  });
}

Tensor scatter_rows(const Tensor& x, const std::vector<Index>& rows, Index out_rows) {
  contract(static_cast<Index>(rows.size()) == x.rows(),
           "scatter_rows: " + std::to_string(rows.size()) + " targets for " +
               std::to_string(x.rows()) + " rows");
  std::vector<std::uint8_t> used(static_cast<size_t>(out_rows), 0);
  Matrix value = Matrix::Zero(out_rows, x.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    contract(rows[i] >= 0 && rows[i] < out_rows, "scatter_rows: row index out of range");
    contract(!used[static_cast<size_t>(rows[i])],
             "scatter_rows: duplicate target row " + std::to_string(rows[i]));
    used[static_cast<size_t>(rows[i])] = 1;
    value.row(rows[i]) = x.value().row(static_cast<Index>(i));
  }
  return make_op("scatter_rows", std::move(value), {x}, [rows](TensorNode& n) {
    Matrix dx(n.parents[0]->value.rows(), n.parents[0]->value.cols());
    for (size_t i = 0; i < rows.size(); ++i) dx.row(static_cast<Index>(i)) = n.grad.row(rows[i]);
    TensorNode::accumulate(n.parents[0], dx);
  });
}

Tensor cross_entropy(const Tensor& logits, Index label) {
  contract(logits.rows() == 1 && logits.cols() >= 1,
           "cross_entropy: logits must be [1xk], got " + shape_str(logits.rows(), logits.cols()));
  contract(label >= 0 && label < logits.cols(),
           "cross_entropy: label " + std::to_string(label) + " outside [0," +
               std::to_string(logits.cols()) + ")");
  const double m = logits.value().row(0).maxCoeff();
  const double lse = m + std::log((logits.value().row(0).array() - m).exp().sum());
  Matrix value(1, 1);
  value(0, 0) = lse - logits.value()(0, label);
  return make_op("cross_entropy", std::move(value), {logits}, [label, m](TensorNode& n) {
    const Matrix& lv = n.parents[0]->value;
    Eigen::RowVectorXd p = (lv.row(0).array() - m).exp();
    p /= p.sum();
    p(label) -= 1.0;
    TensorNode::accumulate(n.parents[0], n.grad(0, 0) * p);
  });
}

// ---- dispatch ---------------------------------------------------------------

const char* op_kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::exp: return "exp";
    case OpKind::softplus: return "softplus";
    case OpKind::rms_norm: return "rms_norm";
    case OpKind::softmax: return "softmax";
    case OpKind::depthwise_dilated_conv1d: return "depthwise_dilated_conv1d";
    case OpKind::reduce_mean: return "reduce_mean";
    case OpKind::reduce_max: return "reduce_max";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::elementwise_select_by_mask: return "elementwise_select_by_mask";
  }
  return "?";
}

Tensor op_forward(OpKind kind, const std::vector<Tensor>& inputs, const OpAttrs& attrs) {
  const auto want = [&](size_t n) {
    contract(inputs.size() == n, std::string(op_kind_name(kind)) + ": expected " +
                                     std::to_string(n) + " inputs, got " +
                                     std::to_string(inputs.size()));
  };
  switch (kind) {
    case OpKind::matmul:
      want(2);
      return matmul(inputs[0], inputs[1], attrs.transpose_a, attrs.transpose_b);
    case OpKind::add: want(2); return add(inputs[0], inputs[1]);
    case OpKind::mul: want(2); return mul(inputs[0], inputs[1]);
    case OpKind::exp: want(1); return exp(inputs[0]);
    case OpKind::softplus: want(1); return softplus(inputs[0]);
    case OpKind::rms_norm: want(2); return rms_norm(inputs[0], inputs[1]);
    case OpKind::softmax: want(1); return softmax(inputs[0]);
    case OpKind::depthwise_dilated_conv1d:
      want(2);
      return depthwise_dilated_conv1d(inputs[0], inputs[1], attrs.dilation);
    case OpKind::reduce_mean: want(1); return reduce_mean(inputs[0], attrs.reduce_axis);
    case OpKind::reduce_max: want(1); return reduce_max(inputs[0], attrs.reduce_axis);
    case OpKind::concat: return concat(inputs, attrs.concat_axis);
    case OpKind::slice: {
      want(1);
      const Index nr = attrs.nr < 0 ? inputs[0].rows() - attrs.r0 : attrs.nr;
      const Index nc = attrs.nc < 0 ? inputs[0].cols() - attrs.c0 : attrs.nc;
      return slice(inputs[0], attrs.r0, nr, attrs.c0, nc);
    }
    case OpKind::elementwise_select_by_mask:
      want(2);
      return select_by_mask(attrs.mask, inputs[0], inputs[1]);
  }
  throw ContractViolation("op_forward: unknown kind");
}

}  // namespace ssmil
