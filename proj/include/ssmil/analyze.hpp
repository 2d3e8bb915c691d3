#pragma once

#include <string>
#include <vector>

#include "ssmil/model.hpp"

namespace ssmil {

struct DecayRow {
  Index distance = 0;
  double min = 1.0;
  double mean = 1.0;
  double max = 1.0;
};

// Decay factor of token 0's contribution at each distance m: per channel,
// exp(A * sum of the deltas of the state-updating steps 1..m). Masked tokens
// contribute nothing on non-exempt channels, so the factor holds across them.
std::vector<DecayRow> decay_rows(const Array& decay_rates, const Matrix& delta,
                                 Index channels, const MaskVec& keep = {},
                                 const MaskVec& channel_exempt = {}, Index max_distance = -1);

// Decay profile of the first scan block of a trained model on one bag's token
// sequence; with cts on, the mask comes from the bag's instance-learner pass.
std::vector<DecayRow> analyze_decay(const ModelParams& params, const ModelConfig& cfg,
                                    const Bag& bag, bool cts_on);

std::string decay_csv(const std::vector<DecayRow>& rows);

struct LocalityRow {
  Index channel = 0;
  double alpha = 0.0;
  Index rank = 0;  // 0 = most local
};

// Channels of the first scan block ranked by full-span locality on one bag.
std::vector<LocalityRow> analyze_locality(const ModelParams& params, const ModelConfig& cfg,
                                          const Bag& bag);

// One row per channel: alpha, rank, and a membership flag per requested K.
std::string locality_csv(const std::vector<LocalityRow>& rows, const std::vector<Index>& k_list);

// Cosine scores of every token against the anchor, with grid coordinates in
// coarse units so radial statistics read directly.
std::string anchor_csv(const Bag& bag, Index anchor);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace ssmil
