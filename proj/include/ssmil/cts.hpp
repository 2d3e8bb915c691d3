#pragma once

#include <random>
#include <vector>

#include "ssmil/tensor.hpp"

namespace ssmil {

enum class Pooling { mean, max };

// Supervised auxiliary per-token classifier. It reads raw bag features (never
// the backbone embeddings) and is trained only through the auxiliary loss; its
// prediction entropy drives token selection.
struct InstanceLearner {
  Tensor weight;  // [d_in x k]
  Tensor bias;    // [1 x k]
  Pooling pooling = Pooling::mean;
};

InstanceLearner make_instance_learner(Index d_in, Index k_classes, std::mt19937_64& rng,
                                      Pooling pooling = Pooling::mean);

// Affine per-token logits, no nonlinearity.
Tensor instance_logits(const Tensor& features, const InstanceLearner& learner);

// Shannon entropy in nats of softmax(logits) per row; in [0, log k].
Vector token_entropy(const Matrix& logits);

struct Selection {
  double threshold = 0.0;        // min entropy among selected; +inf when none
  std::vector<Index> selected;   // ascending token indices
};

// Picks exactly ceil(r*N) highest-entropy tokens. Ties resolve toward the
// higher flat index, which keeps the selection well defined for any r.
Selection percentile_threshold(const Vector& entropies, double ratio);

struct TokenMask {
  MaskVec keep;            // keep[i] == 0 iff token i is selected for masking
  double threshold = 0.0;  // the selection's entropy cutoff
  double ratio = 0.0;
  MaskVec channel_exempt;  // channels whose state always updates
};

// keep = complement of the selected set; channel_exempt marks the top-k
// channels by locality score, ties toward the lower channel index.
TokenMask build_mask(Index n_tokens, const std::vector<Index>& selected,
                     const Array& locality_scores, Index k_exempt, double ratio = 0.0,
                     double threshold = 0.0);

// The k channels with the largest locality score (ties: lower index first).
std::vector<Index> top_local_channels(const Array& locality_scores, Index k);

}  // namespace ssmil
