#pragma once

#include <string>
#include <vector>

#include "ssmil/grid.hpp"

namespace ssmil {

// Generation recipe for one synthetic cohort. Bags are sampled on a coarse
// H x W cell grid and emitted as half-step overlapping fine-grid token
// sequences, standing in for patch feature grids.
struct BagSpec {
  Index coarse_rows = 16;
  Index coarse_cols = 16;
  Index feature_dim = 32;
  double tissue_fraction = 0.6;
  double cluster_radius = 2.0;   // grid units around the positive cluster center
  double signal_strength = 1.5;  // added along the class direction
  double noise_scale = 0.5;      // fresh per-token noise
  Index n_classes = 2;
  std::uint64_t seed = 0;
};

// One weakly supervised sample. Only `label` is visible to models; the
// per-token labels exist for diagnostics and selection-quality analysis.
struct Bag {
  std::string id;
  Index label = 0;
  GridIndex grid;                 // fine half-step grid with validity
  Matrix features;                // [valid_count x D], flatten order
  std::vector<Index> back_map;    // flat fine-cell index per token
  MaskVec instance_labels;        // per token
  Index coarse_rows = 0;
  Index coarse_cols = 0;
};

struct Dataset {
  BagSpec spec;
  double train_fraction = 2.0 / 3.0;
  std::vector<Bag> bags;
  std::vector<std::string> split;  // "train" or "test", parallel to bags
};

std::vector<Index> dataset_indices(const Dataset& data, const std::string& split);

// Directory layout: manifest.json plus one <id>.ssmb binary per bag
// ("SSMB", version 1, fine extents and feature payload, little-endian).
void save_dataset(const Dataset& data, const std::string& dir);
Dataset load_dataset(const std::string& dir);

void save_bag(const Bag& bag, const std::string& path);
Bag load_bag(const std::string& path);

}  // namespace ssmil
