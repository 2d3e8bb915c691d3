#include "ssmil/s2pe.hpp"

#include <algorithm>

namespace ssmil {

StripeEncoderParams make_stripe_encoder(Index d_model, Index kernel_len, int dilation,
                                        bool residual) {
  contract(kernel_len >= 1 && kernel_len % 2 == 1, "make_stripe_encoder: kernel length must be odd");
  contract(dilation >= 1, "make_stripe_encoder: dilation must be >= 1");
  StripeEncoderParams p;
  p.kernel = Tensor::param(Matrix::Zero(kernel_len, d_model));
  p.dilation = dilation;
  p.residual = residual;
  return p;
}

Tensor grid_conv_vertical(const Tensor& map, const Tensor& kernel, Index rows, Index cols,
                          int dilation) {
  const Index k = kernel.rows(), d = map.cols();
  contract(k >= 1 && k % 2 == 1, "grid_conv_vertical: kernel length must be odd, got " +
                                     std::to_string(k));
  contract(dilation >= 1, "grid_conv_vertical: dilation must be >= 1");
  contract(map.rows() == rows * cols, "grid_conv_vertical: map " +
                                          shape_str(map.rows(), map.cols()) + " vs grid " +
                                          shape_str(rows, cols));
  contract(kernel.cols() == d, "grid_conv_vertical: kernel channels " +
                                   std::to_string(kernel.cols()) + " vs map channels " +
                                   std::to_string(d));
  const Index half = (k - 1) / 2;
  Matrix value = Matrix::Zero(rows * cols, d);
  for (Index r = 0; r < rows; ++r)
    for (Index m = 0; m < k; ++m) {
      const Index src = r + (m - half) * dilation;
      if (src < 0 || src >= rows) continue;
      for (Index c = 0; c < cols; ++c)
        value.row(r * cols + c) += kernel.value().row(m).cwiseProduct(map.value().row(src * cols + c));
    }
  return make_op("grid_conv_vertical", std::move(value), {map, kernel},
                 [rows, cols, k, half, dilation](TensorNode& n) {
                   const auto& pm = n.parents[0];
                   const auto& pk = n.parents[1];
                   Matrix dmap = Matrix::Zero(pm->value.rows(), pm->value.cols());
                   Matrix dk = Matrix::Zero(pk->value.rows(), pk->value.cols());
                   for (Index r = 0; r < rows; ++r)
                     for (Index m = 0; m < k; ++m) {
                       const Index src = r + (m - half) * dilation;
                       if (src < 0 || src >= rows) continue;
                       for (Index c = 0; c < cols; ++c) {
                         dmap.row(src * cols + c) +=
                             pk->value.row(m).cwiseProduct(n.grad.row(r * cols + c));
                         dk.row(m) +=
                             pm->value.row(src * cols + c).cwiseProduct(n.grad.row(r * cols + c));
                       }
                     }
                   TensorNode::accumulate(pm, dmap);
                   TensorNode::accumulate(pk, dk);
                 });
}

Tensor apply_s2pe(const Tensor& sequence, const std::vector<Index>& back_map, Index rows,
                  Index cols, const MaskVec& token_mask, const StripeEncoderParams& params) {
  const Index n = sequence.rows();
  contract(static_cast<Index>(back_map.size()) == n,
           "apply_s2pe: back_map covers " + std::to_string(back_map.size()) + " of " +
               std::to_string(n) + " tokens");
  contract(token_mask.empty() || static_cast<Index>(token_mask.size()) == n,
           "apply_s2pe: mask length " + std::to_string(token_mask.size()) + " vs " +
               std::to_string(n) + " tokens");

  Tensor conv_input = sequence;
  const bool any_masked =
      !token_mask.empty() && std::find(token_mask.begin(), token_mask.end(), 0) != token_mask.end();
  if (any_masked) {
    Matrix keep(n, 1);
    for (Index i = 0; i < n; ++i) keep(i, 0) = token_mask[static_cast<size_t>(i)] ? 1.0 : 0.0;
    conv_input = mul(sequence, Tensor::constant(std::move(keep)));
  }
  Tensor map = scatter_rows(conv_input, back_map, rows * cols);
  Tensor conv = grid_conv_vertical(map, params.kernel, rows, cols, params.dilation);
  Tensor conv_tokens = gather_rows(conv, back_map);
  Tensor encoded = params.residual ? add(sequence, conv_tokens) : conv_tokens;
  if (!any_masked) return encoded;
  return select_by_mask(token_mask, encoded, sequence);
}

}  // namespace ssmil
