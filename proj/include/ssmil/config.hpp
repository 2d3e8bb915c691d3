#pragma once

#include <map>
#include <string>

#include "ssmil/cts.hpp"
#include "ssmil/dataset.hpp"
#include "ssmil/ssm.hpp"

namespace ssmil {

enum class Arch { full, mean_pool, max_pool, gated_attention };

struct ModelConfig {
  Arch arch = Arch::full;
  Index d_model = 64;
  Index state_dim = 16;
  Index n_blocks = 2;
  Index k_classes = 2;
  SsmMode mode = SsmMode::scalar;
  Index n_heads = 1;
  Discretization method = Discretization::euler;
  bool overlap = true;
  double cts_ratio = 0.3;
  Index local_channels = 0;
  bool s2pe_enabled = true;
  Index s2pe_kernel = 3;
  int s2pe_dilation = 2;
  bool s2pe_residual = true;
  Pooling aux_pooling = Pooling::mean;
  double aux_weight = 1.0;
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  Index epochs = 30;
  Index attention_dim = 0;  // 0 -> d_model
  std::uint64_t seed = 0;

  Index attn_dim() const { return attention_dim > 0 ? attention_dim : d_model; }
};

// Learning rate matched to full-scale foundation-feature training; everything
// else as the defaults.
ModelConfig reference_lr_preset();

// Flat `key = value` text, one pair per line, '#' comments. Duplicate or
// unknown keys are rejected.
std::map<std::string, std::string> parse_kv_text(const std::string& text);
std::map<std::string, std::string> parse_kv_file(const std::string& path);

ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv);
ModelConfig model_config_from_file(const std::string& path);
std::string model_config_to_text(const ModelConfig& cfg);  // canonical key order
std::string config_fingerprint(const ModelConfig& cfg);    // fnv1a64 hex of the text

BagSpec bag_spec_from_kv(const std::map<std::string, std::string>& kv);
BagSpec bag_spec_from_file(const std::string& path);

}  // namespace ssmil
