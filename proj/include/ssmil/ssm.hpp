#pragma once

#include <random>
#include <utility>
#include <vector>

#include "ssmil/tensor.hpp"

namespace ssmil {

enum class SsmMode { diag, scalar };

// Step-parameter rule for B_bar. A_bar is exp(delta*A) under both choices;
// euler uses B_bar = delta*B, zoh uses B_bar = ((exp(delta*A)-1)/A)*B.
enum class Discretization { euler, zoh };

// Selective state-space parameters for one mixing block. The per-token step
// size, input and readout projections are generated from the token embedding:
//   u_t     = x_t * in_proj                      [channels]
//   delta_t = softplus(x_t * delta_proj + bias)  [param_dims]
//   B_t     = x_t * b_proj                       [state_dim]
//   C_t     = x_t * c_proj                       [state_dim]
// diag mode keeps one decay rate per channel; scalar mode shares one rate per
// head (state space duality), so param_dims is n_heads there and the per-head
// delta/decay are shared by all channels of the head.
struct SsmParams {
  SsmMode mode = SsmMode::scalar;
  Discretization method = Discretization::euler;
  Index n_heads = 1;
  Index d_model = 0;
  Index channels = 0;
  Index state_dim = 0;

  Tensor in_proj;     // [d_model x channels]
  Tensor delta_proj;  // [d_model x param_dims]
  Tensor delta_bias;  // [1 x param_dims]
  Tensor b_proj;      // [d_model x state_dim]
  Tensor c_proj;      // [d_model x state_dim]
  Tensor out_proj;    // [channels x d_model]
  Tensor a_log;       // [1 x param_dims]; A = -exp(a_log) stays negative

  Index param_dims() const { return mode == SsmMode::diag ? channels : n_heads; }
  Index param_of_channel(Index c) const { return c / (channels / param_dims()); }
  Array decay_rates() const;  // A, one entry per param dim
};

SsmParams make_ssm_params(Index d_model, Index state_dim, SsmMode mode, Index n_heads,
                          Discretization method, std::mt19937_64& rng);

struct ScanState {
  Matrix h;  // [channels x state_dim]
  Index step = 0;
};

// Per-token byproducts of a scan, consumed by the oracles and the analysis
// commands. `h[i]` is the hidden state after processing token i.
struct ScanTrace {
  Matrix abar;   // [N x param_dims]
  Matrix bcoef;  // [N x param_dims], the B_bar multiplier
  Matrix delta;  // [N x param_dims]
  Matrix b_in;   // [N x state_dim]
  Matrix c_out;  // [N x state_dim]
  Matrix u;      // [N x channels]
  std::vector<Matrix> h;
  Matrix y;  // [N x channels], y_i = h_i * C_i
};

// The sequential recurrence on already-projected inputs. With a keep-mask,
// a dropped token leaves the state of every non-exempt channel untouched
// (exact passthrough) while its output still reads the carried state.
ScanTrace scan_core(const Matrix& u, const Matrix& delta, const Matrix& b_in,
                    const Matrix& c_out, const Array& decay_rates, Discretization method,
                    const MaskVec& mask = {}, const MaskVec& channel_exempt = {});

struct ScanResult {
  Matrix outputs;  // [N x d_model], after out_proj
  ScanState state;
  ScanTrace trace;
};

// Token-level scan: applies the projections in `params`, runs the recurrence,
// projects back out. Value-level; the autodiff path is selective_scan_op.
ScanResult selective_scan(const Matrix& tokens, const SsmParams& params,
                          const MaskVec& mask = {}, const MaskVec& channel_exempt = {});

// Fused graph op for the recurrence: differentiates through u, delta, B, C and
// a_log with a hand-written adjoint sweep; masks are static attributes. The
// channel-to-rate grouping follows from a_log's width, as in scan_core.
Tensor selective_scan_op(const Tensor& u, const Tensor& delta, const Tensor& b_in,
                         const Tensor& c_out, const Tensor& a_log, Discretization method,
                         const MaskVec& mask = {}, const MaskVec& channel_exempt = {});

// Step-parameter computation for one token: A_bar = exp(delta*A) elementwise,
// B_bar per the chosen rule. A must be elementwise negative, delta positive.
std::pair<Array, Matrix> discretize(const Array& decay_rates, const Matrix& b_in, double delta,
                                    Discretization method);

// Literal evaluation of the weighted-accumulation closed form
//   h_i = sum_{j=1..i} (prod_{k=j+1..i} A_bar_k) B_bar_j x_j
// with 1-based i. abar is per-channel [N x C]; bbar[j] is [C x S]; x is [N x C].
Matrix hidden_state_oracle(const Matrix& abar, const std::vector<Matrix>& bbar, const Matrix& x,
                           Index i);
double hidden_state_oracle_scalar(const Vector& abar, const Vector& bbar, const Vector& x,
                                  Index i);

// Expansion of a trace into the oracle's per-channel sequences.
Matrix trace_abar_per_channel(const ScanTrace& trace, Index channels);
std::vector<Matrix> trace_bbar_per_channel(const ScanTrace& trace, Index channels);

// Cumulative shrinkage exp(A * sum(deltas)) of a token's contribution across a
// span; the empty span is 1.
double decay_factor(double decay_rate, const std::vector<double>& deltas);

// Row-major flattening of a 1-based grid location: t = (i-1)*W + j.
Index linearize(Index i, Index j, Index width);

// Separable 2D closed form at 1-based (i,j): double sum over predecessors with
// kernel (prod of row factors) * (prod of column factors). Scalar state per
// cell; an analysis tool, not a trainable path.
double scan_2d_oracle(const Matrix& x, const Vector& abar_rows, const Vector& abar_cols,
                      const Matrix& bbar, Index i, Index j);

// The flat recurrence on a row-major grid, split into full previous rows plus
// the current row prefix. Must agree with hidden_state_oracle at linearize(i,j).
double split_recurrence_oracle(const Matrix& x, const Vector& abar_flat, const Matrix& bbar,
                               Index i, Index j);

// Locality indicator per channel over span (j, i), 0-based, j < i:
//   alpha_c = (C_j . B_bar_j) * prod_{k=j+1..i} A_bar_k
// Larger alpha means the channel retains more of token j's influence at i.
Array channel_locality(const Array& decay_rates, const Matrix& delta, const Matrix& b_in,
                       const Matrix& c_out, Index j, Index i, Discretization method,
                       Index channels);
// Convenience: projects `tokens` through `params` first. Default span is the
// whole sequence (first to last token).
Array channel_locality(const SsmParams& params, const Matrix& tokens, Index j = 0,
                       Index i = -1);

}  // namespace ssmil
