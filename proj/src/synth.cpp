#include "ssmil/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "ssmil/hash.hpp"

namespace ssmil {

namespace {

// Connected blob of `target` cells grown by uniformly picking frontier cells.
MaskVec grow_tissue_blob(Index rows, Index cols, Index target, std::mt19937_64& rng) {
  MaskVec blob(static_cast<size_t>(rows * cols), 0);
  std::vector<Index> frontier;
  const auto push_neighbors = [&](Index r, Index c) {
    const Index dr[] = {-1, 1, 0, 0}, dc[] = {0, 0, -1, 1};
    for (int k = 0; k < 4; ++k) {
      const Index nr = r + dr[k], nc = c + dc[k];
      if (nr < 0 || nr >= rows || nc < 0 || nc >= cols) continue;
      const Index cell = nr * cols + nc;
      if (!blob[static_cast<size_t>(cell)]) frontier.push_back(cell);
    }
  };
  std::uniform_int_distribution<Index> cell_dist(0, rows * cols - 1);
  const Index start = cell_dist(rng);
  blob[static_cast<size_t>(start)] = 1;
  push_neighbors(start / cols, start % cols);
  Index placed = 1;
  while (placed < target) {
    // stale entries (already absorbed) are skipped rather than removed eagerly
    std::uniform_int_distribution<size_t> pick(0, frontier.size() - 1);
    const size_t at = pick(rng);
    const Index cell = frontier[at];
    frontier[at] = frontier.back();
    frontier.pop_back();
    if (blob[static_cast<size_t>(cell)]) continue;
    blob[static_cast<size_t>(cell)] = 1;
    ++placed;
    push_neighbors(cell / cols, cell % cols);
  }
  return blob;
}

}  // namespace

Vector class_direction(Index class_label, Index feature_dim) {
  contract(class_label >= 1, "class_direction: class 0 carries no signal");
  std::mt19937_64 rng(splitmix64(0xC1A55ULL + static_cast<std::uint64_t>(class_label)));
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector u(feature_dim);
  for (Index i = 0; i < feature_dim; ++i) u(i) = normal(rng);
  const double norm = u.norm();
  contract(norm > 0.0, "class_direction: degenerate draw");
  return u / norm;
}

Bag generate_bag(const BagSpec& spec, Index class_label, std::mt19937_64& rng,
                 const std::string& id) {
  contract(spec.coarse_rows >= 1 && spec.coarse_cols >= 1, "generate_bag: bad grid extents");
  contract(spec.tissue_fraction > 0.0 && spec.tissue_fraction <= 1.0,
           "generate_bag: tissue fraction outside (0,1]");
  contract(spec.cluster_radius >= 0.0, "generate_bag: negative cluster radius");
  contract(spec.noise_scale >= 0.0, "generate_bag: noise scale must be non-negative");
  contract(class_label >= 0 && class_label < spec.n_classes, "generate_bag: label outside range");

  const Index rows = spec.coarse_rows, cols = spec.coarse_cols, d = spec.feature_dim;
  const Index target = std::max<Index>(
      1, static_cast<Index>(std::llround(spec.tissue_fraction * static_cast<double>(rows * cols))));
  contract(target >= 1, "generate_bag: no tissue cell available");
  const MaskVec tissue = grow_tissue_blob(rows, cols, target, rng);

  // class-agnostic latent field, 3x3 mean-smoothed. The amplitude sets how
  // much structured nuisance competes with the cluster signal; 1.4 keeps the
  // bag task clearly learnable but off the AUC ceiling.
  constexpr double kFieldAmplitude = 1.4;
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix raw(rows * cols, d);
  for (Index i = 0; i < raw.size(); ++i) raw(i / d, i % d) = kFieldAmplitude * normal(rng);
  Matrix base = Matrix::Zero(rows * cols, d);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) {
      Index count = 0;
      for (Index dr = -1; dr <= 1; ++dr)
        for (Index dc = -1; dc <= 1; ++dc) {
          const Index nr = r + dr, nc = c + dc;
          if (nr < 0 || nr >= rows || nc < 0 || nc >= cols) continue;
          base.row(r * cols + c) += raw.row(nr * cols + nc);
          ++count;
        }
      base.row(r * cols + c) /= static_cast<double>(count);
    }

  MaskVec coarse_labels(static_cast<size_t>(rows * cols), 0);
  if (class_label > 0) {
    std::vector<Index> tissue_cells;
    for (Index i = 0; i < rows * cols; ++i)
      if (tissue[static_cast<size_t>(i)]) tissue_cells.push_back(i);
    contract(!tissue_cells.empty(), "generate_bag: no tissue cell available");
    std::uniform_int_distribution<size_t> pick(0, tissue_cells.size() - 1);
    const Index center = tissue_cells[pick(rng)];
    const Index cr = center / cols, cc = center % cols;
    const Vector direction = class_direction(class_label, d);
    for (Index cell : tissue_cells) {
      const double dist = std::hypot(static_cast<double>(cell / cols - cr),
                                     static_cast<double>(cell % cols - cc));
      if (dist <= spec.cluster_radius) {
        base.row(cell) += spec.signal_strength * direction.transpose();
        coarse_labels[static_cast<size_t>(cell)] = static_cast<std::uint8_t>(class_label);
      }
    }
  }

  GridIndex coarse;
  coarse.rows = rows;
  coarse.cols = cols;
  coarse.valid = tissue;

  Bag bag;
  bag.id = id;
  bag.coarse_rows = rows;
  bag.coarse_cols = cols;
  bag.grid = overlap_positions(coarse);
  bag.back_map = bag.grid.valid_cells();

  const Index n_tokens = static_cast<Index>(bag.back_map.size());
  bag.features.resize(n_tokens, d);
  bag.instance_labels.assign(static_cast<size_t>(n_tokens), 0);
  for (Index t = 0; t < n_tokens; ++t) {
    const Index fr = bag.back_map[static_cast<size_t>(t)] / bag.grid.cols;
    const Index fc = bag.back_map[static_cast<size_t>(t)] % bag.grid.cols;
    const auto cells = overlapped_coarse_cells(fr, fc, rows, cols);
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(d);
    std::uint8_t token_label = 0;
    for (const auto& cell : cells) {
      mean += base.row(cell[0] * cols + cell[1]);
      token_label = std::max(token_label, coarse_labels[static_cast<size_t>(cell[0] * cols + cell[1])]);
    }
    mean /= static_cast<double>(cells.size());
    for (Index j = 0; j < d; ++j) mean(j) += spec.noise_scale * normal(rng);
    bag.features.row(t) = mean;
    bag.instance_labels[static_cast<size_t>(t)] = token_label;
  }

  bool any_positive = false;
  for (auto y : bag.instance_labels) any_positive = any_positive || y != 0;
  bag.label = class_label;
  contract((bag.label == 0) == !any_positive, "generate_bag: bag label inconsistent with tokens");
  contract(bag.features.allFinite(), "generate_bag: non-finite feature");
  return bag;
}

std::uint64_t split_hash(std::uint64_t seed, const std::string& bag_id) {
  return splitmix64(seed ^ fnv1a64(bag_id));
}

Dataset generate_dataset(const BagSpec& spec, Index n_per_class, std::uint64_t seed,
                         double train_fraction) {
  contract(n_per_class >= 1, "generate_dataset: need at least one bag per class");
  contract(spec.n_classes >= 2 && spec.n_classes <= 255, "generate_dataset: classes outside [2,255]");
  contract(train_fraction > 0.0 && train_fraction < 1.0,
           "generate_dataset: train fraction outside (0,1)");

  Dataset data;
  data.spec = spec;
  data.spec.seed = seed;
  data.train_fraction = train_fraction;

  for (Index c = 0; c < spec.n_classes; ++c) {
    std::vector<size_t> class_slots;
    for (Index i = 0; i < n_per_class; ++i) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "c%lld_b%04lld", static_cast<long long>(c),
                    static_cast<long long>(i));
      const std::string id(buf);
      std::mt19937_64 rng(split_hash(seed, id + "/gen"));
      data.bags.push_back(generate_bag(spec, c, rng, id));
      data.split.emplace_back("test");
      class_slots.push_back(data.bags.size() - 1);
    }
    // rank the class's bags by split hash; lowest hashes train
    std::sort(class_slots.begin(), class_slots.end(), [&](size_t a, size_t b) {
      const auto ha = split_hash(seed, data.bags[a].id);
      const auto hb = split_hash(seed, data.bags[b].id);
      if (ha != hb) return ha < hb;
      return data.bags[a].id < data.bags[b].id;
    });
    const Index n_train =
        static_cast<Index>(std::llround(train_fraction * static_cast<double>(n_per_class)));
    for (Index i = 0; i < n_train && i < n_per_class; ++i)
      data.split[class_slots[static_cast<size_t>(i)]] = "train";
  }
  return data;
}

}  // namespace ssmil
