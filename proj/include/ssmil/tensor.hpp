#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ssmil/types.hpp"

namespace ssmil {

// Reverse-mode autodiff over dense double matrices. Every recorded value is a
// rank-2 array; vectors are [n x 1] and scalars [1 x 1]. A computation forms a
// DAG of TensorNodes; backward() replays it in exact reverse execution order
// (per-node sequence stamps) and accumulates each gradient once per use.
// One graph and its tensors belong to one single-threaded confinement domain;
// independent graphs may live on different threads.

struct TensorNode {
  Matrix value;
  Matrix grad;  // sized on first accumulation
  bool requires_grad = false;
  std::uint64_t seq = 0;  // global execution stamp, reverse-sort key
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Pulls this node's grad into its parents' grads. Cleared after backward.
  std::function<void(TensorNode&)> backward;

  static void accumulate(const std::shared_ptr<TensorNode>& node, const Matrix& g);
  Matrix& grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Matrix value);
  static Tensor param(Matrix value);  // leaf with requires_grad
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const;
  const Matrix& grad() const;  // contract: requires_grad and grad present
  bool requires_grad() const;
  void zero_grad();

  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Index size() const { return value().size(); }

  // Row-major flat element access; used by grad_check and checkpointing.
  double flat(Index i) const;
  void set_flat(Index i, double v);
  double grad_flat(Index i) const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorNode> node_;

  friend Tensor make_op(const char* name, Matrix value, std::vector<Tensor> inputs,
                        std::function<void(TensorNode&)> backward_fn);
};

// Records one executed operation on the graph. `backward_fn` receives the
// finished node (grad already populated) and must push contributions into
// node.parents via TensorNode::accumulate. Building block for every op here
// and for the fused kernels in ssm.hpp / s2pe.hpp.
Tensor make_op(const char* name, Matrix value, std::vector<Tensor> inputs,
               std::function<void(TensorNode&)> backward_fn);

// Runs the reverse sweep from a scalar loss. Leaf grads remain readable through
// their Tensors afterwards; the interior of the graph is dismantled.
void backward(const Tensor& loss);

// Suppresses graph recording in scope; forwards become value-only. Scoped to
// the current thread, matching the one-domain-per-thread confinement model.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

enum class ReduceAxis { rows, cols, all };
enum class ConcatAxis { rows, cols };

// ---- primitive operations -------------------------------------------------
// Shape rules (violations throw ContractViolation naming the op and shapes):
//   matmul      [m x k] * [k x n] -> [m x n], transpose flags applied first
//   add, sub    same shape, or one side [1 x c] / [r x 1] / [1 x 1] broadcast
//   mul         elementwise, same broadcast rule as add
//   exp, log, softplus, tanh_op, sigmoid   elementwise, shape preserved
//   rms_norm    x [n x d], scale [1 x d]; per-row x / (rms(x_row) + 1e-6) * scale
//   softmax     per-row over columns; cols >= 1
//   masked_softmax  scores [n x 1], keep mask length n; masked entries get 0
//   depthwise_dilated_conv1d  x [L x C], kernel [k x C] (k odd), along rows,
//                             zero padded so the output length equals L
//   reduce_mean / reduce_max  axis rows -> [1 x d], cols -> [n x 1], all -> [1 x 1]
//   concat      parts stacked along the chosen axis
//   slice       rectangular block [r0, r0+nr) x [c0, c0+nc)
//   select_by_mask  per-row select: row i of (mask ? a : b); mask length = rows
//   gather_rows / scatter_rows   row permutation and its zero-filled inverse
//   cross_entropy  logits [1 x k], label in [0, k); stable logsumexp form

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false,
              bool transpose_b = false);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor tanh_op(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor rms_norm(const Tensor& x, const Tensor& gain);
Tensor softmax(const Tensor& x);
Tensor masked_softmax(const Tensor& scores, const MaskVec& keep);
Tensor depthwise_dilated_conv1d(const Tensor& x, const Tensor& kernel, int dilation);
Tensor reduce_mean(const Tensor& x, ReduceAxis axis);
Tensor reduce_max(const Tensor& x, ReduceAxis axis);
Tensor concat(const std::vector<Tensor>& parts, ConcatAxis axis);
Tensor slice(const Tensor& x, Index r0, Index nr, Index c0, Index nc);
Tensor select_by_mask(const MaskVec& keep, const Tensor& a, const Tensor& b);
Tensor gather_rows(const Tensor& x, const std::vector<Index>& rows);
Tensor scatter_rows(const Tensor& x, const std::vector<Index>& rows, Index out_rows);
Tensor cross_entropy(const Tensor& logits, Index label);

// ---- generic dispatch -----------------------------------------------------

enum class OpKind {
  matmul,
  add,
  mul,
  exp,
  softplus,
  rms_norm,
  softmax,
  depthwise_dilated_conv1d,
  reduce_mean,
  reduce_max,
  concat,
  slice,
  elementwise_select_by_mask,
};

struct OpAttrs {
  bool transpose_a = false;
  bool transpose_b = false;
  int dilation = 1;
  ReduceAxis reduce_axis = ReduceAxis::all;
  ConcatAxis concat_axis = ConcatAxis::rows;
  Index r0 = 0, nr = -1, c0 = 0, nc = -1;
  MaskVec mask;  // per-row keep flags for elementwise_select_by_mask
};

const char* op_kind_name(OpKind kind);

// Uniform entry point over the named kinds; forwards to the functions above.
// Deterministic: identical (inputs, attrs) give bitwise-identical outputs.
Tensor op_forward(OpKind kind, const std::vector<Tensor>& inputs, const OpAttrs& attrs = {});

// Numerically stable scalar softplus, shared with the scan kernels.
double softplus_value(double z);

}  // namespace ssmil
