#include "ssmil/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ssmil/checkpoint.hpp"
#include "ssmil/hash.hpp"

namespace ssmil {

namespace {

Matrix normal_init(Index rows, Index cols, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = normal(rng) * scale;
  return m;
}

struct StageOut {
  Tensor sequence;
  TokenMask mask;
  Tensor il_logits;
};

// Shared front half of the full forward: embed, instance-learner mask, stripe
// encoding, masked scan blocks.
StageOut run_backbone_stages(const TokenView& view, const ModelParams& p, const ModelConfig& cfg,
                             bool with_cts, bool with_s2pe) {
  const Index n = view.features.rows();
  Tensor raw = Tensor::constant(view.features);
  Tensor seq = add(matmul(raw, p.embed_w), p.embed_b);

  StageOut out;
  out.il_logits = instance_logits(raw, p.learner);
  out.mask.keep.assign(static_cast<size_t>(n), 1);
  out.mask.channel_exempt.assign(static_cast<size_t>(cfg.d_model), 0);
  if (with_cts && (cfg.cts_ratio > 0.0 || cfg.local_channels > 0)) {
    const Vector entropies = token_entropy(out.il_logits.value());
    const Selection sel = percentile_threshold(entropies, cfg.cts_ratio);
    Array locality = Array::Zero(cfg.d_model);
    if (cfg.local_channels > 0 && n >= 2)
      locality = channel_locality(p.blocks[0].ssm, seq.value());
    out.mask = build_mask(n, sel.selected, locality, cfg.local_channels, cfg.cts_ratio,
                          sel.threshold);
  }

  if (with_s2pe && cfg.s2pe_enabled)
    seq = apply_s2pe(seq, view.back_map, view.rows, view.cols, out.mask.keep, p.s2pe);

  for (const BlockParams& block : p.blocks) {
    Tensor u = matmul(seq, block.ssm.in_proj);
    Tensor delta = softplus(add(matmul(seq, block.ssm.delta_proj), block.ssm.delta_bias));
    Tensor b_in = matmul(seq, block.ssm.b_proj);
    Tensor c_out = matmul(seq, block.ssm.c_proj);
    Tensor y = selective_scan_op(u, delta, b_in, c_out, block.ssm.a_log, block.ssm.method,
                                 out.mask.keep, out.mask.channel_exempt);
    seq = add(seq, rms_norm(matmul(y, block.ssm.out_proj), block.norm_gain));
  }
  out.sequence = seq;
  return out;
}

Tensor attention_pool(const Tensor& seq, const MaskVec& keep, const AttentionParams& attn,
                      Tensor* weights_out = nullptr) {
  Tensor gated = mul(tanh_op(matmul(seq, attn.v)), sigmoid(matmul(seq, attn.u)));
  Tensor scores = matmul(gated, attn.w);
  Tensor a = masked_softmax(scores, keep);
  if (weights_out) *weights_out = a;
  return matmul(a, seq, /*transpose_a=*/true);
}

}  // namespace

ModelParams init_model(const ModelConfig& cfg, Index d_in, std::uint64_t seed) {
  contract(d_in >= 1, "init_model: feature dim must be >= 1");
  std::mt19937_64 rng(splitmix64(seed));
  ModelParams p;
  p.d_in = d_in;
  const double se = 1.0 / std::sqrt(static_cast<double>(d_in));
  const double sm = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  p.embed_w = Tensor::param(normal_init(d_in, cfg.d_model, se, rng));
  p.embed_b = Tensor::param(Matrix::Zero(1, cfg.d_model));
  for (Index b = 0; b < cfg.n_blocks; ++b) {
    BlockParams block;
    block.ssm = make_ssm_params(cfg.d_model, cfg.state_dim, cfg.mode, cfg.n_heads, cfg.method, rng);
    block.norm_gain = Tensor::param(Matrix::Ones(1, cfg.d_model));
    p.blocks.push_back(std::move(block));
  }
  p.s2pe = make_stripe_encoder(cfg.d_model, cfg.s2pe_kernel, cfg.s2pe_dilation, cfg.s2pe_residual);
  p.attention.v = Tensor::param(normal_init(cfg.d_model, cfg.attn_dim(), sm, rng));
  p.attention.u = Tensor::param(normal_init(cfg.d_model, cfg.attn_dim(), sm, rng));
  p.attention.w = Tensor::param(normal_init(cfg.attn_dim(), 1, 1.0 / std::sqrt(static_cast<double>(cfg.attn_dim())), rng));
  p.head_w = Tensor::param(normal_init(cfg.d_model, cfg.k_classes, sm, rng));
  p.head_b = Tensor::param(Matrix::Zero(1, cfg.k_classes));
  p.learner = make_instance_learner(d_in, cfg.k_classes, rng, cfg.aux_pooling);
  return p;
}

std::vector<std::pair<std::string, Tensor>> named_params(const ModelParams& p) {
  std::vector<std::pair<std::string, Tensor>> named;
  named.emplace_back("embed/w", p.embed_w);
  named.emplace_back("embed/b", p.embed_b);
  for (size_t b = 0; b < p.blocks.size(); ++b) {
    const std::string pre = "block" + std::to_string(b) + "/";
    named.emplace_back(pre + "in_proj", p.blocks[b].ssm.in_proj);
    named.emplace_back(pre + "delta_proj", p.blocks[b].ssm.delta_proj);
    named.emplace_back(pre + "delta_bias", p.blocks[b].ssm.delta_bias);
    named.emplace_back(pre + "b_proj", p.blocks[b].ssm.b_proj);
    named.emplace_back(pre + "c_proj", p.blocks[b].ssm.c_proj);
    named.emplace_back(pre + "out_proj", p.blocks[b].ssm.out_proj);
    named.emplace_back(pre + "a_log", p.blocks[b].ssm.a_log);
    named.emplace_back(pre + "norm_gain", p.blocks[b].norm_gain);
  }
  named.emplace_back("s2pe/kernel", p.s2pe.kernel);
  named.emplace_back("attention/v", p.attention.v);
  named.emplace_back("attention/u", p.attention.u);
  named.emplace_back("attention/w", p.attention.w);
  named.emplace_back("head/w", p.head_w);
  named.emplace_back("head/b", p.head_b);
  named.emplace_back("learner/w", p.learner.weight);
  named.emplace_back("learner/b", p.learner.bias);
  return named;
}

std::vector<Tensor> trainable_params(const ModelParams& p, const ModelConfig& cfg) {
  std::vector<Tensor> out;
  switch (cfg.arch) {
    case Arch::mean_pool:
    case Arch::max_pool:
      out = {p.embed_w, p.embed_b, p.head_w, p.head_b};
      return out;
    case Arch::gated_attention:
      out = {p.embed_w, p.embed_b, p.attention.v, p.attention.u, p.attention.w,
             p.head_w, p.head_b};
      return out;
    case Arch::full: break;
  }
  for (auto& [name, t] : named_params(p)) {
    if (name == "s2pe/kernel" && !cfg.s2pe_enabled) continue;
    out.push_back(t);
  }
  return out;
}

TokenView select_tokens(const Bag& bag, bool overlap) {
  TokenView view;
  if (overlap) {
    view.features = bag.features;
    view.back_map = bag.back_map;
    view.rows = bag.grid.rows;
    view.cols = bag.grid.cols;
  } else {
    view.rows = bag.coarse_rows;
    view.cols = bag.coarse_cols;
    std::vector<Index> keep_rows;
    for (size_t t = 0; t < bag.back_map.size(); ++t) {
      const Index fr = bag.back_map[t] / bag.grid.cols;
      const Index fc = bag.back_map[t] % bag.grid.cols;
      if (fr % 2 == 0 && fc % 2 == 0) {
        keep_rows.push_back(static_cast<Index>(t));
        view.back_map.push_back((fr / 2) * view.cols + fc / 2);
      }
    }
    view.features.resize(static_cast<Index>(keep_rows.size()), bag.features.cols());
    for (size_t t = 0; t < keep_rows.size(); ++t)
      view.features.row(static_cast<Index>(t)) = bag.features.row(keep_rows[t]);
  }
  contract(view.features.rows() >= 1, "select_tokens: empty bag");
  return view;
}

BagPrediction forward(const Bag& bag, const ModelParams& p, const ModelConfig& cfg) {
  contract(bag.features.cols() == p.d_in,
           "forward: bag feature dim " + std::to_string(bag.features.cols()) + " vs model " +
               std::to_string(p.d_in));
  const TokenView view = select_tokens(bag, cfg.overlap);
  StageOut stage = run_backbone_stages(view, p, cfg, /*with_cts=*/true, /*with_s2pe=*/true);

  bool any_kept = false;
  for (auto k : stage.mask.keep) any_kept = any_kept || k;
  contract(any_kept, "forward: every token masked");

  BagPrediction pred;
  Tensor weights;
  Tensor pooled = attention_pool(stage.sequence, stage.mask.keep, p.attention, &weights);
  pred.bag_logits = add(matmul(pooled, p.head_w), p.head_b);
  pred.aux_logits = p.learner.pooling == Pooling::mean
                        ? reduce_mean(stage.il_logits, ReduceAxis::rows)
                        : reduce_max(stage.il_logits, ReduceAxis::rows);
  pred.attention = weights.value().col(0);
  pred.mask = stage.mask;
  return pred;
}

Tensor backbone_forward(const Bag& bag, const ModelParams& p, const ModelConfig& cfg) {
  const TokenView view = select_tokens(bag, cfg.overlap);
  const Index n = view.features.rows();
  Tensor raw = Tensor::constant(view.features);
  Tensor seq = add(matmul(raw, p.embed_w), p.embed_b);
  MaskVec keep(static_cast<size_t>(n), 1);
  MaskVec exempt(static_cast<size_t>(cfg.d_model), 0);
  for (const BlockParams& block : p.blocks) {
    Tensor u = matmul(seq, block.ssm.in_proj);
    Tensor delta = softplus(add(matmul(seq, block.ssm.delta_proj), block.ssm.delta_bias));
    Tensor b_in = matmul(seq, block.ssm.b_proj);
    Tensor c_out = matmul(seq, block.ssm.c_proj);
    Tensor y = selective_scan_op(u, delta, b_in, c_out, block.ssm.a_log, block.ssm.method, keep,
                                 exempt);
    seq = add(seq, rms_norm(matmul(y, block.ssm.out_proj), block.norm_gain));
  }
  Tensor pooled = attention_pool(seq, keep, p.attention);
  return add(matmul(pooled, p.head_w), p.head_b);
}

Tensor loss(const BagPrediction& pred, Index label, double aux_weight) {
  contract(label >= 0 && label < pred.bag_logits.cols(),
           "loss: label " + std::to_string(label) + " outside [0," +
               std::to_string(pred.bag_logits.cols()) + ")");
  Tensor main = cross_entropy(pred.bag_logits, label);
  if (aux_weight == 0.0) return main;
  return add(main, scale(cross_entropy(pred.aux_logits, label), aux_weight));
}

Tensor baseline_forward(BaselineKind kind, const Bag& bag, const ModelParams& p,
                        const ModelConfig& cfg) {
  const TokenView view = select_tokens(bag, cfg.overlap);
  Tensor raw = Tensor::constant(view.features);
  Tensor seq = add(matmul(raw, p.embed_w), p.embed_b);
  Tensor pooled;
  switch (kind) {
    case BaselineKind::mean: pooled = reduce_mean(seq, ReduceAxis::rows); break;
    case BaselineKind::max: pooled = reduce_max(seq, ReduceAxis::rows); break;
    case BaselineKind::gated_attention: {
      MaskVec keep(static_cast<size_t>(view.features.rows()), 1);
      pooled = attention_pool(seq, keep, p.attention);
      break;
    }
  }
  return add(matmul(pooled, p.head_w), p.head_b);
}

Vector anchor_attention(const Matrix& features, Index anchor) {
  const Index n = features.rows();
  contract(anchor >= 0 && anchor < n, "anchor_attention: anchor " + std::to_string(anchor) +
                                          " outside [0," + std::to_string(n) + ")");
  Vector norms(n);
  for (Index i = 0; i < n; ++i) {
    norms(i) = features.row(i).norm();
    contract(norms(i) > 0.0, "anchor_attention: zero-norm feature at token " + std::to_string(i));
  }
  Vector scores(n);
  for (Index i = 0; i < n; ++i)
    scores(i) = features.row(anchor).dot(features.row(i)) / (norms(anchor) * norms(i));
  return scores;
}

namespace {

struct Adam {
  double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay;
  Index t = 0;
  std::vector<Matrix> m, v;

  Adam(const std::vector<Tensor>& params, double lr_, double wd) : lr(lr_), weight_decay(wd) {
    for (const Tensor& p : params) {
      m.push_back(Matrix::Zero(p.rows(), p.cols()));
      v.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }

  void step(std::vector<Tensor>& params) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < params.size(); ++i) {
      auto& node = params[i].node();
      if (node->grad.size() != node->value.size()) continue;  // unused this step
      const Matrix& g = node->grad;
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g.cwiseProduct(g);
      const Matrix m_hat = m[i] / bc1;
      const Matrix v_hat = v[i] / bc2;
      node->value -=
          lr * m_hat.cwiseQuotient((v_hat.cwiseSqrt().array() + eps).matrix());
      if (weight_decay != 0.0) node->value -= (lr * weight_decay) * node->value;
    }
  }
};

Tensor train_step_loss(const Bag& bag, Index label, const ModelParams& p,
                       const ModelConfig& cfg) {
  switch (cfg.arch) {
    case Arch::full: {
      const BagPrediction pred = forward(bag, p, cfg);
      return loss(pred, label, cfg.aux_weight);
    }
    case Arch::mean_pool:
      return cross_entropy(baseline_forward(BaselineKind::mean, bag, p, cfg), label);
    case Arch::max_pool:
      return cross_entropy(baseline_forward(BaselineKind::max, bag, p, cfg), label);
    case Arch::gated_attention:
      return cross_entropy(baseline_forward(BaselineKind::gated_attention, bag, p, cfg), label);
  }
  throw ContractViolation("train: unknown arch");
}

Matrix softmax_row(const Matrix& logits) {
  const double m = logits.row(0).maxCoeff();
  Matrix p = (logits.row(0).array() - m).exp();
  p /= p.sum();
  return p;
}

}  // namespace

MetricReport evaluate(const Dataset& data, const std::string& split, const ModelParams& p,
                      const ModelConfig& cfg) {
  NoGradGuard no_grad;
  const auto idx = dataset_indices(data, split);
  contract(!idx.empty(), "evaluate: split '" + split + "' is empty");
  Matrix probs(static_cast<Index>(idx.size()), cfg.k_classes);
  std::vector<Index> predicted, truth;
  for (size_t i = 0; i < idx.size(); ++i) {
    const Bag& bag = data.bags[static_cast<size_t>(idx[i])];
    Matrix logits;
    if (cfg.arch == Arch::full) logits = forward(bag, p, cfg).bag_logits.value();
    else if (cfg.arch == Arch::mean_pool)
      logits = baseline_forward(BaselineKind::mean, bag, p, cfg).value();
    else if (cfg.arch == Arch::max_pool)
      logits = baseline_forward(BaselineKind::max, bag, p, cfg).value();
    else logits = baseline_forward(BaselineKind::gated_attention, bag, p, cfg).value();
    probs.row(static_cast<Index>(i)) = softmax_row(logits);
    Index arg;
    logits.row(0).maxCoeff(&arg);
    predicted.push_back(arg);
    truth.push_back(bag.label);
  }
  MetricReport report = make_metric_report(probs, predicted, truth, cfg.k_classes);
  report.seed = cfg.seed;
  report.config_fingerprint = config_fingerprint(cfg);
  return report;
}

TrainResult train(const Dataset& data, const ModelConfig& cfg) {
  contract(!data.bags.empty(), "train: empty dataset");
  auto train_idx = dataset_indices(data, "train");
  contract(!train_idx.empty(), "train: no training bags");
  const Index d_in = data.bags[0].features.cols();

  TrainResult result;
  result.params = init_model(cfg, d_in, cfg.seed);
  std::vector<Tensor> params = trainable_params(result.params, cfg);
  Adam opt(params, cfg.learning_rate, cfg.weight_decay);
  std::mt19937_64 order_rng(splitmix64(cfg.seed ^ 0x0EDE57A7E5EEDULL));

  for (Index epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), order_rng);
    double loss_sum = 0.0;
    for (Index idx : train_idx) {
      const Bag& bag = data.bags[static_cast<size_t>(idx)];
      for (Tensor& t : params) t.zero_grad();
      Tensor step_loss = train_step_loss(bag, bag.label, result.params, cfg);
      const double value = step_loss.value()(0, 0);
      if (!std::isfinite(value))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 " bag " + bag.id);
      backward(step_loss);
      opt.step(params);
      ++result.optimizer_steps;
      loss_sum += value;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(train_idx.size());
    if (!dataset_indices(data, "test").empty())
      stats.validation = evaluate(data, "test", result.params, cfg);
    result.history.push_back(std::move(stats));
  }
  return result;
}

namespace {

constexpr std::uint64_t kLow32 = 0xFFFFFFFFULL;

NamedMatrices config_entries(const ModelConfig& cfg, Index d_in) {
  const auto scalar = [](double v) { return Matrix::Constant(1, 1, v); };
  NamedMatrices out;
  out.emplace_back("config/arch", scalar(static_cast<double>(static_cast<int>(cfg.arch))));
  out.emplace_back("config/d_model", scalar(static_cast<double>(cfg.d_model)));
  out.emplace_back("config/state_dim", scalar(static_cast<double>(cfg.state_dim)));
  out.emplace_back("config/n_blocks", scalar(static_cast<double>(cfg.n_blocks)));
  out.emplace_back("config/k_classes", scalar(static_cast<double>(cfg.k_classes)));
  out.emplace_back("config/ssm_mode", scalar(cfg.mode == SsmMode::diag ? 0.0 : 1.0));
  out.emplace_back("config/n_heads", scalar(static_cast<double>(cfg.n_heads)));
  out.emplace_back("config/discretization",
                   scalar(cfg.method == Discretization::euler ? 0.0 : 1.0));
  out.emplace_back("config/overlap", scalar(cfg.overlap ? 1.0 : 0.0));
  out.emplace_back("config/cts_ratio", scalar(cfg.cts_ratio));
  out.emplace_back("config/local_channels", scalar(static_cast<double>(cfg.local_channels)));
  out.emplace_back("config/s2pe", scalar(cfg.s2pe_enabled ? 1.0 : 0.0));
  out.emplace_back("config/s2pe_kernel", scalar(static_cast<double>(cfg.s2pe_kernel)));
  out.emplace_back("config/s2pe_dilation", scalar(static_cast<double>(cfg.s2pe_dilation)));
  out.emplace_back("config/s2pe_residual", scalar(cfg.s2pe_residual ? 1.0 : 0.0));
  out.emplace_back("config/aux_pooling", scalar(cfg.aux_pooling == Pooling::mean ? 0.0 : 1.0));
  out.emplace_back("config/aux_weight", scalar(cfg.aux_weight));
  out.emplace_back("config/learning_rate", scalar(cfg.learning_rate));
  out.emplace_back("config/weight_decay", scalar(cfg.weight_decay));
  out.emplace_back("config/epochs", scalar(static_cast<double>(cfg.epochs)));
  out.emplace_back("config/attention_dim", scalar(static_cast<double>(cfg.attention_dim)));
  out.emplace_back("config/seed_lo", scalar(static_cast<double>(cfg.seed & kLow32)));
  out.emplace_back("config/seed_hi", scalar(static_cast<double>((cfg.seed >> 32) & kLow32)));
  out.emplace_back("config/d_in", scalar(static_cast<double>(d_in)));
  return out;
}

}  // namespace

void save_model(const std::string& path, const ModelParams& p, const ModelConfig& cfg) {
  NamedMatrices entries = config_entries(cfg, p.d_in);
  for (const auto& [name, tensor] : named_params(p)) entries.emplace_back(name, tensor.value());
  save_checkpoint(path, entries);
}

std::pair<ModelParams, ModelConfig> load_model(const std::string& path) {
  const NamedMatrices entries = load_checkpoint(path);
  const auto lookup = [&](const std::string& name) -> const Matrix& {
    for (const auto& [n, m] : entries)
      if (n == name) return m;
    throw ParseError("checkpoint missing entry " + name, 0);
  };
  const auto scalar = [&](const std::string& name) { return lookup(name)(0, 0); };

  ModelConfig cfg;
  cfg.arch = static_cast<Arch>(static_cast<int>(scalar("config/arch")));
  cfg.d_model = static_cast<Index>(scalar("config/d_model"));
  cfg.state_dim = static_cast<Index>(scalar("config/state_dim"));
  cfg.n_blocks = static_cast<Index>(scalar("config/n_blocks"));
  cfg.k_classes = static_cast<Index>(scalar("config/k_classes"));
  cfg.mode = scalar("config/ssm_mode") == 0.0 ? SsmMode::diag : SsmMode::scalar;
  cfg.n_heads = static_cast<Index>(scalar("config/n_heads"));
  cfg.method = scalar("config/discretization") == 0.0 ? Discretization::euler : Discretization::zoh;
  cfg.overlap = scalar("config/overlap") != 0.0;
  cfg.cts_ratio = scalar("config/cts_ratio");
  cfg.local_channels = static_cast<Index>(scalar("config/local_channels"));
  cfg.s2pe_enabled = scalar("config/s2pe") != 0.0;
  cfg.s2pe_kernel = static_cast<Index>(scalar("config/s2pe_kernel"));
  cfg.s2pe_dilation = static_cast<int>(scalar("config/s2pe_dilation"));
  cfg.s2pe_residual = scalar("config/s2pe_residual") != 0.0;
  cfg.aux_pooling = scalar("config/aux_pooling") == 0.0 ? Pooling::mean : Pooling::max;
  cfg.aux_weight = scalar("config/aux_weight");
  cfg.learning_rate = scalar("config/learning_rate");
  cfg.weight_decay = scalar("config/weight_decay");
  cfg.epochs = static_cast<Index>(scalar("config/epochs"));
  cfg.attention_dim = static_cast<Index>(scalar("config/attention_dim"));
  cfg.seed = static_cast<std::uint64_t>(scalar("config/seed_lo")) |
             (static_cast<std::uint64_t>(scalar("config/seed_hi")) << 32);
  const Index d_in = static_cast<Index>(scalar("config/d_in"));

  ModelParams params = init_model(cfg, d_in, cfg.seed);
  for (auto& [name, tensor] : named_params(params)) {
    const Matrix& stored = lookup(name);
    contract(stored.rows() == tensor.rows() && stored.cols() == tensor.cols(),
             "load_model: shape mismatch for " + name);
    tensor.node()->value = stored;
  }
  return {std::move(params), cfg};
}

}  // namespace ssmil
