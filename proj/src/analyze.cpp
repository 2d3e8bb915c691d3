#include "ssmil/analyze.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace ssmil {

std::vector<DecayRow> decay_rows(const Array& decay_rates, const Matrix& delta, Index channels,
                                 const MaskVec& keep, const MaskVec& channel_exempt,
                                 Index max_distance) {
  const Index n = delta.rows();
  contract(n >= 1, "decay_rows: empty sequence");
  const Index param_dims = decay_rates.size();
  contract(delta.cols() == param_dims, "decay_rows: delta dims vs rates");
  contract(channels % param_dims == 0, "decay_rows: channels not divisible by param dims");
  const Index group = channels / param_dims;
  if (max_distance < 0 || max_distance > n - 1) max_distance = n - 1;

  std::vector<DecayRow> rows;
  rows.reserve(static_cast<size_t>(max_distance) + 1);
  Array delta_sum = Array::Zero(channels);
  for (Index m = 0; m <= max_distance; ++m) {
    if (m > 0) {
      for (Index c = 0; c < channels; ++c) {
        const bool updates = keep.empty() || keep[static_cast<size_t>(m)] ||
                             (!channel_exempt.empty() && channel_exempt[static_cast<size_t>(c)]);
        if (updates) delta_sum(c) += delta(m, c / group);
      }
    }
    DecayRow row;
    row.distance = m;
    Array factor(channels);
    for (Index c = 0; c < channels; ++c)
      factor(c) = std::exp(decay_rates(c / group) * delta_sum(c));
    row.min = factor.minCoeff();
    row.max = factor.maxCoeff();
    row.mean = factor.mean();
    rows.push_back(row);
  }
  return rows;
}

std::vector<DecayRow> analyze_decay(const ModelParams& params, const ModelConfig& cfg,
                                    const Bag& bag, bool cts_on) {
  NoGradGuard no_grad;
  const TokenView view = select_tokens(bag, cfg.overlap);
  Matrix embedded = view.features * params.embed_w.value();
  embedded.rowwise() += params.embed_b.value().row(0);

  MaskVec keep, exempt;
  if (cts_on && (cfg.cts_ratio > 0.0 || cfg.local_channels > 0)) {
    Matrix il = view.features * params.learner.weight.value();
    il.rowwise() += params.learner.bias.value().row(0);
    const Selection sel = percentile_threshold(token_entropy(il), cfg.cts_ratio);
    Array locality = Array::Zero(cfg.d_model);
    if (cfg.local_channels > 0 && embedded.rows() >= 2)
      locality = channel_locality(params.blocks[0].ssm, embedded);
    const TokenMask mask = build_mask(embedded.rows(), sel.selected, locality,
                                      cfg.local_channels, cfg.cts_ratio, sel.threshold);
    keep = mask.keep;
    exempt = mask.channel_exempt;
  }

  const SsmParams& ssm = params.blocks[0].ssm;
  Matrix delta_pre = embedded * ssm.delta_proj.value();
  delta_pre.rowwise() += ssm.delta_bias.value().row(0);
  const Matrix delta = delta_pre.unaryExpr([](double z) { return softplus_value(z); });
  return decay_rows(ssm.decay_rates(), delta, ssm.channels, keep, exempt);
}

std::string decay_csv(const std::vector<DecayRow>& rows) {
  std::ostringstream out;
  out << "distance,min,mean,max\n";
  for (const DecayRow& r : rows)
    out << r.distance << "," << format_double(r.min) << "," << format_double(r.mean) << ","
        << format_double(r.max) << "\n";
  return out.str();
}

std::vector<LocalityRow> analyze_locality(const ModelParams& params, const ModelConfig& cfg,
                                          const Bag& bag) {
  NoGradGuard no_grad;
  const TokenView view = select_tokens(bag, cfg.overlap);
  contract(view.features.rows() >= 2, "analyze_locality: need at least two tokens");
  Matrix embedded = view.features * params.embed_w.value();
  embedded.rowwise() += params.embed_b.value().row(0);
  const Array alpha = channel_locality(params.blocks[0].ssm, embedded);

  std::vector<Index> order(static_cast<size_t>(alpha.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    if (alpha(a) != alpha(b)) return alpha(a) > alpha(b);
    return a < b;
  });
  std::vector<LocalityRow> rows(static_cast<size_t>(alpha.size()));
  for (size_t rank = 0; rank < order.size(); ++rank) {
    const Index c = order[rank];
    rows[static_cast<size_t>(c)] = {c, alpha(c), static_cast<Index>(rank)};
  }
  return rows;
}

std::string locality_csv(const std::vector<LocalityRow>& rows, const std::vector<Index>& k_list) {
  std::ostringstream out;
  out << "channel,alpha,rank";
  for (Index k : k_list) out << ",in_top_" << k;
  out << "\n";
  for (const LocalityRow& r : rows) {
    out << r.channel << "," << format_double(r.alpha) << "," << r.rank;
    for (Index k : k_list) out << "," << (r.rank < k ? 1 : 0);
    out << "\n";
  }
  return out.str();
}

std::string anchor_csv(const Bag& bag, Index anchor) {
  const Vector scores = anchor_attention(bag.features, anchor);
  const Index ar = bag.back_map[static_cast<size_t>(anchor)] / bag.grid.cols;
  const Index ac = bag.back_map[static_cast<size_t>(anchor)] % bag.grid.cols;
  std::ostringstream out;
  out << "token,row,col,distance,score,instance_label\n";
  for (Index t = 0; t < scores.size(); ++t) {
    const Index fr = bag.back_map[static_cast<size_t>(t)] / bag.grid.cols;
    const Index fc = bag.back_map[static_cast<size_t>(t)] % bag.grid.cols;
    // half-step grid: divide by 2 for coarse units
    const double dist = 0.5 * std::hypot(static_cast<double>(fr - ar),
                                         static_cast<double>(fc - ac));
    out << t << "," << format_double(0.5 * fr) << "," << format_double(0.5 * fc) << ","
        << format_double(dist) << "," << format_double(scores(t)) << ","
        << static_cast<int>(bag.instance_labels[static_cast<size_t>(t)]) << "\n";
  }
  return out.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace ssmil
