#pragma once

#include <utility>
#include <vector>

#include "ssmil/config.hpp"
#include "ssmil/cts.hpp"
#include "ssmil/dataset.hpp"
#include "ssmil/grad_check.hpp"
#include "ssmil/metrics.hpp"
#include "ssmil/s2pe.hpp"
#include "ssmil/ssm.hpp"

namespace ssmil {

// Gated attention pooling: a = softmax(w' (tanh(X v) * sigmoid(X u))) over the
// kept tokens.
struct AttentionParams {
  Tensor v;  // [d_model x d_attn]
  Tensor u;  // [d_model x d_attn]
  Tensor w;  // [d_attn x 1]
};

struct BlockParams {
  SsmParams ssm;
  Tensor norm_gain;  // [1 x d_model]
};

struct ModelParams {
  Index d_in = 0;
  Tensor embed_w, embed_b;
  std::vector<BlockParams> blocks;
  StripeEncoderParams s2pe;
  AttentionParams attention;
  Tensor head_w, head_b;
  InstanceLearner learner;
};

ModelParams init_model(const ModelConfig& cfg, Index d_in, std::uint64_t seed);
std::vector<std::pair<std::string, Tensor>> named_params(const ModelParams& p);
// Leaves the optimizer updates; excludes the stripe kernel when s2pe is off.
std::vector<Tensor> trainable_params(const ModelParams& p, const ModelConfig& cfg);

// The token sequence a model actually scans. With overlap on this is the bag's
// half-step fine grid; with overlap off only the coarse-aligned fine positions
// (even-even coordinates) survive, a 4:1 decimation onto the coarse lattice.
struct TokenView {
  Matrix features;
  std::vector<Index> back_map;
  Index rows = 0;
  Index cols = 0;
};

TokenView select_tokens(const Bag& bag, bool overlap);

struct BagPrediction {
  Tensor bag_logits;  // [1 x k]
  Tensor aux_logits;  // [1 x k], instance-learner bag prediction
  Vector attention;   // per token; zero on masked tokens
  TokenMask mask;
};

// embed -> instance-learner mask -> stripe encoding -> masked scan blocks ->
// gated attention pooling -> bag head. Deterministic given (bag, params, cfg).
BagPrediction forward(const Bag& bag, const ModelParams& p, const ModelConfig& cfg);

// Straight-line embed -> scan blocks -> pooling -> head with no selection and
// no position encoding; the reference the ablated full model must match
// bitwise.
Tensor backbone_forward(const Bag& bag, const ModelParams& p, const ModelConfig& cfg);

// cross_entropy(bag) + aux_weight * cross_entropy(aux).
Tensor loss(const BagPrediction& pred, Index label, double aux_weight);

enum class BaselineKind { mean, max, gated_attention };

Tensor baseline_forward(BaselineKind kind, const Bag& bag, const ModelParams& p,
                        const ModelConfig& cfg);

// Cosine similarity between the anchor token's feature and every token's.
Vector anchor_attention(const Matrix& features, Index anchor);

struct EpochStats {
  Index epoch = 0;
  double train_loss = 0.0;
  MetricReport validation;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochStats> history;
  Index optimizer_steps = 0;
};

// Adam (beta1 0.9, beta2 0.999, eps 1e-8) with decoupled weight decay, one bag
// per step, fixed epoch count, per-epoch validation on the "test" split.
// Aborts with a diagnostic naming the epoch and bag on a non-finite loss.
TrainResult train(const Dataset& data, const ModelConfig& cfg);

MetricReport evaluate(const Dataset& data, const std::string& split, const ModelParams& p,
                      const ModelConfig& cfg);

// Checkpoint embeds the config (config/* entries) so evaluation needs only the
// file; parameter tensors follow in named_params order.
void save_model(const std::string& path, const ModelParams& p, const ModelConfig& cfg);
std::pair<ModelParams, ModelConfig> load_model(const std::string& path);

}  // namespace ssmil
