#pragma once

#include <vector>

#include "ssmil/tensor.hpp"

namespace ssmil {

// Stripe position encoder parameters: one depthwise kernel tap set per feature
// channel, applied down grid columns only. Zero-initialized so the module
// starts as an exact identity when the residual is on.
struct StripeEncoderParams {
  Tensor kernel;     // [k x D], k odd
  int dilation = 2;
  bool residual = true;
};

StripeEncoderParams make_stripe_encoder(Index d_model, Index kernel_len = 3, int dilation = 2,
                                        bool residual = true);

// Depthwise dilated convolution along the vertical (row) axis of a row-major
// cell map [rows*cols x D]. Columns never mix; zero padding preserves extent.
Tensor grid_conv_vertical(const Tensor& map, const Tensor& kernel, Index rows, Index cols,
                          int dilation);

// Masked reshape-to-grid, vertical conv, flatten back, optional residual.
// Tokens with mask 0 (and blank cells) contribute zeros to the map and pass
// through unchanged on the output side. An empty mask keeps every token.
Tensor apply_s2pe(const Tensor& sequence, const std::vector<Index>& back_map, Index rows,
                  Index cols, const MaskVec& token_mask, const StripeEncoderParams& params);

}  // namespace ssmil
