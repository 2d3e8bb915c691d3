#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ssmil/model.hpp"
#include "ssmil/synth.hpp"
#include "test_util.hpp"

using namespace ssmil;
using ssmil::testing::bitwise_equal;
using ssmil::testing::random_matrix;

namespace {

BagSpec tiny_spec(Index d = 6) {
  BagSpec spec;
  spec.coarse_rows = 4;
  spec.coarse_cols = 4;
  spec.feature_dim = d;
  spec.tissue_fraction = 0.8;
  spec.cluster_radius = 1.2;
  spec.signal_strength = 2.0;
  spec.noise_scale = 0.4;
  return spec;
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.state_dim = 4;
  cfg.n_blocks = 1;
  cfg.epochs = 2;
  cfg.seed = 5;
  return cfg;
}

Bag make_bag(Index label, std::uint64_t seed, const BagSpec& spec) {
  std::mt19937_64 rng(seed);
  return generate_bag(spec, label, rng, "t" + std::to_string(seed));
}

}  // namespace

TEST_CASE("forward is deterministic bitwise") {
  const BagSpec spec = tiny_spec();
  const Bag bag = make_bag(1, 3, spec);
  const ModelConfig cfg = tiny_config();
  const ModelParams p1 = init_model(cfg, spec.feature_dim, cfg.seed);
  const ModelParams p2 = init_model(cfg, spec.feature_dim, cfg.seed);
  const BagPrediction a = forward(bag, p1, cfg);
  const BagPrediction b = forward(bag, p2, cfg);
  CHECK(bitwise_equal(a.bag_logits.value(), b.bag_logits.value()));
  CHECK(bitwise_equal(a.aux_logits.value(), b.aux_logits.value()));
  CHECK(a.attention == b.attention);
}

TEST_CASE("single-token bag pools with weight one") {
  Bag bag;
  bag.id = "single";
  bag.label = 0;
  bag.grid = make_full_grid(1, 1);
  bag.coarse_rows = 1;
  bag.coarse_cols = 1;
  bag.back_map = {0};
  std::mt19937_64 rng(8);
  bag.features = random_matrix(1, 6, rng);
  bag.instance_labels = {0};
  ModelConfig cfg = tiny_config();
  cfg.cts_ratio = 0.0;  // a single token must never be masked away
  const ModelParams p = init_model(cfg, 6, 1);
  const BagPrediction pred = forward(bag, p, cfg);
  REQUIRE(pred.attention.size() == 1);
  CHECK(pred.attention(0) == 1.0);
}

TEST_CASE("attention weights are a distribution over kept tokens") {
  const BagSpec spec = tiny_spec();
  const Bag bag = make_bag(1, 11, spec);
  ModelConfig cfg = tiny_config();
  cfg.cts_ratio = 0.4;
  const ModelParams p = init_model(cfg, spec.feature_dim, 2);
  const BagPrediction pred = forward(bag, p, cfg);
  double sum = 0.0;
  for (Index t = 0; t < pred.attention.size(); ++t) {
    CHECK(pred.attention(t) >= 0.0);
    sum += pred.attention(t);
    if (!pred.mask.keep[static_cast<size_t>(t)]) CHECK(pred.attention(t) == 0.0);
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  Index masked = 0;
  for (auto k : pred.mask.keep) masked += k ? 0 : 1;
  CHECK(masked == static_cast<Index>(
                    std::ceil(cfg.cts_ratio * static_cast<double>(pred.attention.size()))));
}

TEST_CASE("disabled additions reduce to the plain backbone bitwise") {
  const BagSpec spec = tiny_spec();
  const Bag bag = make_bag(1, 17, spec);
  ModelConfig cfg = tiny_config();
  cfg.cts_ratio = 0.0;
  cfg.local_channels = 0;
  const ModelParams p = init_model(cfg, spec.feature_dim, 9);

  SUBCASE("s2pe disabled") {
    cfg.s2pe_enabled = false;
    for (bool overlap : {true, false}) {
      cfg.overlap = overlap;
      const Matrix full = forward(bag, p, cfg).bag_logits.value();
      const Matrix plain = backbone_forward(bag, p, cfg).value();
      CHECK(bitwise_equal(full, plain));
    }
  }
  SUBCASE("zero-initialized s2pe with residual") {
    cfg.s2pe_enabled = true;  // kernel is zero-initialized: exact identity
    const Matrix full = forward(bag, p, cfg).bag_logits.value();
    const Matrix plain = backbone_forward(bag, p, cfg).value();
    CHECK(bitwise_equal(full, plain));
  }
}

TEST_CASE("loss worked values") {
  BagPrediction pred;
  pred.bag_logits = Tensor::constant(Matrix::Zero(1, 2));
  pred.aux_logits = Tensor::constant(Matrix::Zero(1, 2));
  CHECK(loss(pred, 0, 0.0).value()(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(loss(pred, 1, 1.0).value()(0, 0) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  Matrix aux(1, 2);
  aux << 3.0, -1.0;
  pred.aux_logits = Tensor::constant(aux);
  CHECK(loss(pred, 0, 0.0).value()(0, 0) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));  // aux ignored at weight 0
  CHECK_THROWS_AS(loss(pred, 2, 1.0), ContractViolation);
}

TEST_CASE("full-model gradients match finite differences") {
  BagSpec spec = tiny_spec(5);
  spec.coarse_rows = 2;
  spec.coarse_cols = 2;  // 3x3 fine grid
  const Bag bag = make_bag(1, 23, spec);
  ModelConfig cfg;
  cfg.d_model = 6;
  cfg.state_dim = 3;
  cfg.n_blocks = 1;
  cfg.cts_ratio = 0.3;
  cfg.attention_dim = 4;
  ModelParams model = init_model(cfg, spec.feature_dim, 31);
  std::vector<Tensor> params = trainable_params(model, cfg);
  auto f = [&](const std::vector<Tensor>&) {
    return loss(forward(bag, model, cfg), bag.label, cfg.aux_weight);
  };
  CHECK(grad_check_max_error(f, params, 1e-5) < 1e-4);
}

TEST_CASE("training basics") {
  SUBCASE("one epoch over one bag is one optimizer step") {
    const BagSpec spec = tiny_spec();
    Dataset data;
    data.spec = spec;
    data.bags.push_back(make_bag(0, 2, spec));
    data.split = {"train"};
    ModelConfig cfg = tiny_config();
    cfg.epochs = 1;
    const TrainResult r = train(data, cfg);
    CHECK(r.optimizer_steps == 1);
    REQUIRE(r.history.size() == 1);
  }
  SUBCASE("separable toy set: loss decreases over training for three seeds") {
    BagSpec spec = tiny_spec();
    spec.signal_strength = 3.0;
    spec.noise_scale = 0.3;
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
      const Dataset data = generate_dataset(spec, 5, 100 + seed, 0.8);
      ModelConfig cfg = tiny_config();
      cfg.epochs = 30;
      cfg.seed = seed;
      const TrainResult r = train(data, cfg);
      REQUIRE(r.history.size() == 30);
      CHECK(r.history.back().train_loss < r.history.front().train_loss);
    }
  }
  SUBCASE("weight decay changes the trained parameters") {
    const BagSpec spec = tiny_spec();
    const Dataset data = generate_dataset(spec, 3, 7, 0.7);
    ModelConfig cfg = tiny_config();
    cfg.epochs = 3;
    ModelConfig no_wd = cfg;
    no_wd.weight_decay = 0.0;
    const TrainResult a = train(data, cfg);
    const TrainResult b = train(data, no_wd);
    CHECK_FALSE(bitwise_equal(a.params.embed_w.value(), b.params.embed_w.value()));
  }
  SUBCASE("train then eval reproduces the in-run validation metrics exactly") {
    const BagSpec spec = tiny_spec();
    const Dataset data = generate_dataset(spec, 4, 19, 0.5);
    ModelConfig cfg = tiny_config();
    cfg.epochs = 2;
    const TrainResult r = train(data, cfg);
    const auto path = std::filesystem::temp_directory_path() / "ssmil_trained.ssmp";
    save_model(path.string(), r.params, cfg);
    const auto [loaded, cfg2] = load_model(path.string());
    const MetricReport again = evaluate(data, "test", loaded, cfg2);
    CHECK(again.auc == r.history.back().validation.auc);
    CHECK(again.acc == r.history.back().validation.acc);
    CHECK(again.macro_f1 == r.history.back().validation.macro_f1);
    std::filesystem::remove(path);
  }
}

TEST_CASE("baseline poolers") {
  const ModelConfig cfg = tiny_config();
  const ModelParams p = init_model(cfg, 6, 77);
  SUBCASE("four identical tokens: mean equals max bitwise") {
    Bag bag;
    bag.grid = make_full_grid(1, 4);
    bag.coarse_rows = 1;
    bag.coarse_cols = 2;
    bag.back_map = {0, 1, 2, 3};
    std::mt19937_64 rng(6);
    const Matrix row = random_matrix(1, 6, rng);
    bag.features = row.replicate(4, 1);
    bag.instance_labels = {0, 0, 0, 0};
    bag.label = 0;
    const Matrix mean = baseline_forward(BaselineKind::mean, bag, p, cfg).value();
    const Matrix max = baseline_forward(BaselineKind::max, bag, p, cfg).value();
    CHECK(bitwise_equal(mean, max));
  }
  SUBCASE("single token: all three kinds agree") {
    Bag bag;
    bag.grid = make_full_grid(1, 1);
    bag.coarse_rows = 1;
    bag.coarse_cols = 1;
    bag.back_map = {0};
    std::mt19937_64 rng(7);
    bag.features = random_matrix(1, 6, rng);
    bag.instance_labels = {0};
    const Matrix mean = baseline_forward(BaselineKind::mean, bag, p, cfg).value();
    const Matrix max = baseline_forward(BaselineKind::max, bag, p, cfg).value();
    const Matrix att = baseline_forward(BaselineKind::gated_attention, bag, p, cfg).value();
    CHECK(bitwise_equal(mean, max));
    CHECK(bitwise_equal(mean, att));
  }
  SUBCASE("mean pooling equals the arithmetic mean oracle") {
    const BagSpec spec = tiny_spec();
    const Bag bag = make_bag(0, 9, spec);
    const Matrix got = baseline_forward(BaselineKind::mean, bag, p, cfg).value();
    Matrix embedded = bag.features * p.embed_w.value();
    embedded.rowwise() += p.embed_b.value().row(0);
    Matrix pooled = embedded.colwise().sum() / static_cast<double>(embedded.rows());
    Matrix want = pooled * p.head_w.value();
    want.rowwise() += p.head_b.value().row(0);
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("anchor attention worked values") {
  std::mt19937_64 rng(12);
  Matrix features = random_matrix(5, 4, rng);
  const Vector scores = anchor_attention(features, 2);
  CHECK(scores(2) == doctest::Approx(1.0).epsilon(1e-12));
  // direct oracle for a random pair
  const double want = features.row(2).dot(features.row(4)) /
                      (features.row(2).norm() * features.row(4).norm());
  CHECK(scores(4) == doctest::Approx(want).epsilon(1e-12));

  Matrix ortho = Matrix::Zero(2, 3);
  ortho(0, 0) = 2.0;
  ortho(1, 1) = -3.0;
  CHECK(anchor_attention(ortho, 0)(1) == 0.0);

  features.row(3).setZero();
  CHECK_THROWS_WITH_AS(anchor_attention(features, 0), doctest::Contains("token 3"),
                       ContractViolation);
  CHECK_THROWS_AS(anchor_attention(features, 9), ContractViolation);
}

TEST_CASE("masking within the scan differs from pruning only off the state path") {
  // The comparator the selection mechanism is judged against: dropping tokens
  // from the sequence (prune) versus holding the state through them (mask).
  const BagSpec spec = tiny_spec();
  const Bag bag = make_bag(1, 40, spec);
  ModelConfig cfg = tiny_config();
  cfg.cts_ratio = 0.35;
  cfg.seed = 3;
  const ModelParams p = init_model(cfg, spec.feature_dim, cfg.seed);
  const BagPrediction masked = forward(bag, p, cfg);

  // build the pruned bag: masked tokens removed from sequence and grid
  Bag pruned = bag;
  pruned.back_map.clear();
  pruned.instance_labels.clear();
  pruned.grid.valid.assign(bag.grid.valid.size(), 0);
  std::vector<Index> kept;
  for (size_t t = 0; t < bag.back_map.size(); ++t)
    if (masked.mask.keep[t]) {
      kept.push_back(static_cast<Index>(t));
      pruned.back_map.push_back(bag.back_map[t]);
      pruned.instance_labels.push_back(bag.instance_labels[t]);
      pruned.grid.valid[static_cast<size_t>(bag.back_map[t])] = 1;
    }
  pruned.features.resize(static_cast<Index>(kept.size()), bag.features.cols());
  for (size_t t = 0; t < kept.size(); ++t)
    pruned.features.row(static_cast<Index>(t)) = bag.features.row(kept[t]);

  ModelConfig cfg_prune = cfg;
  cfg_prune.cts_ratio = 0.0;
  const BagPrediction pruned_pred = forward(pruned, p, cfg_prune);

  // state passthrough makes the bag-logit path agree...
  CHECK((masked.bag_logits.value() - pruned_pred.bag_logits.value()).cwiseAbs().maxCoeff() <
        1e-9);
  // ...while the masked run still carries the dropped tokens: they emit
  // state readouts and keep their features for the auxiliary head
  CHECK((masked.aux_logits.value() - pruned_pred.aux_logits.value()).cwiseAbs().maxCoeff() >
        1e-12);
  CHECK(masked.attention.size() > pruned_pred.attention.size());
}

TEST_CASE("masked tokens still read the carried state") {
  std::mt19937_64 rng(44);
  SsmParams p = make_ssm_params(4, 3, SsmMode::diag, 1, Discretization::euler, rng);
  const Matrix tokens = random_matrix(5, 4, rng);
  const MaskVec keep = {1, 1, 0, 1, 1};
  const ScanResult r = selective_scan(tokens, p, keep);
  // output at the masked position reads h_1, which is nonzero in general
  CHECK(r.trace.y.row(2).cwiseAbs().maxCoeff() > 0.0);
  CHECK(bitwise_equal(r.trace.h[2], r.trace.h[1]));
}

TEST_CASE("forward contract checks") {
  const BagSpec spec = tiny_spec();
  const Bag bag = make_bag(0, 50, spec);
  ModelConfig cfg = tiny_config();
  const ModelParams p = init_model(cfg, spec.feature_dim + 1, 1);
  CHECK_THROWS_AS(forward(bag, p, cfg), ContractViolation);
}
