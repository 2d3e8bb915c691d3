#include "ssmil/cts.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace ssmil {

InstanceLearner make_instance_learner(Index d_in, Index k_classes, std::mt19937_64& rng,
                                      Pooling pooling) {
  contract(d_in >= 1 && k_classes >= 2, "make_instance_learner: need d_in >= 1 and k >= 2");
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix w(d_in, k_classes);
  const double s = 1.0 / std::sqrt(static_cast<double>(d_in));
  for (Index r = 0; r < d_in; ++r)
    for (Index c = 0; c < k_classes; ++c) w(r, c) = normal(rng) * s;
  InstanceLearner learner;
  learner.weight = Tensor::param(std::move(w));
  learner.bias = Tensor::param(Matrix::Zero(1, k_classes));
  learner.pooling = pooling;
  return learner;
}

Tensor instance_logits(const Tensor& features, const InstanceLearner& learner) {
  contract(features.cols() == learner.weight.rows(),
           "instance_logits: feature dim " + std::to_string(features.cols()) + " vs weight " +
               shape_str(learner.weight.rows(), learner.weight.cols()));
  return add(matmul(features, learner.weight), learner.bias);
}

Vector token_entropy(const Matrix& logits) {
  contract(logits.cols() >= 2, "token_entropy: need at least 2 classes");
  Vector h(logits.rows());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    Eigen::RowVectorXd p = (logits.row(i).array() - m).exp();
    p /= p.sum();
    double acc = 0.0;
    for (Index c = 0; c < p.size(); ++c)
      if (p(c) > 0.0) acc -= p(c) * std::log(p(c));
    h(i) = acc;
  }
  return h;
}

Selection percentile_threshold(const Vector& entropies, double ratio) {
  const Index n = entropies.size();
  contract(n >= 1, "percentile_threshold: empty entropy vector");
  contract(ratio >= 0.0 && ratio < 1.0, "percentile_threshold: ratio must lie in [0,1), got " +
                                            std::to_string(ratio));
  const Index m = static_cast<Index>(std::ceil(ratio * static_cast<double>(n)));
  Selection sel;
  if (m == 0) {
    sel.threshold = std::numeric_limits<double>::infinity();
    return sel;
  }
  std::vector<Index> order(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  // highest entropy first; equal entropies resolve toward the higher index
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    if (entropies(a) != entropies(b)) return entropies(a) > entropies(b);
    return a > b;
  });
  sel.selected.assign(order.begin(), order.begin() + m);
  sel.threshold = entropies(sel.selected.back());
  std::sort(sel.selected.begin(), sel.selected.end());
  return sel;
}

std::vector<Index> top_local_channels(const Array& locality_scores, Index k) {
  contract(k >= 0 && k <= locality_scores.size(),
           "top_local_channels: k outside [0, channels]");
  std::vector<Index> order(static_cast<size_t>(locality_scores.size()));
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Index>(i);
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    if (locality_scores(a) != locality_scores(b)) return locality_scores(a) > locality_scores(b);
    return a < b;
  });
  std::vector<Index> top(order.begin(), order.begin() + k);
  std::sort(top.begin(), top.end());
  return top;
}

TokenMask build_mask(Index n_tokens, const std::vector<Index>& selected,
                     const Array& locality_scores, Index k_exempt, double ratio,
                     double threshold) {
  TokenMask mask;
  mask.keep.assign(static_cast<size_t>(n_tokens), 1);
  for (Index i : selected) {
    contract(i >= 0 && i < n_tokens, "build_mask: selected token " + std::to_string(i) +
                                         " outside [0," + std::to_string(n_tokens) + ")");
    mask.keep[static_cast<size_t>(i)] = 0;
  }
  mask.ratio = ratio;
  mask.threshold = threshold;
  mask.channel_exempt.assign(static_cast<size_t>(locality_scores.size()), 0);
  for (Index c : top_local_channels(locality_scores, k_exempt))
    mask.channel_exempt[static_cast<size_t>(c)] = 1;
  return mask;
}

}  // namespace ssmil
