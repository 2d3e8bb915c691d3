#pragma once

#include <random>

#include "ssmil/dataset.hpp"

namespace ssmil {

// Fixed unit direction in feature space for a positive class; identical across
// bags and datasets so the signal is learnable.
Vector class_direction(Index class_label, Index feature_dim);

// Samples one bag: connected tissue blob, smoothed latent field, an optional
// positive cluster of radius rho along the class direction, then half-step
// overlapping fine features (mean of overlapped coarse vectors plus noise).
// A bag is negative (label 0) iff it contains no positive token.
Bag generate_bag(const BagSpec& spec, Index class_label, std::mt19937_64& rng,
                 const std::string& id = "bag");

// Balanced cohort, n bags per class, deterministic per seed. Split tags are
// assigned per class by ranking a mix of (seed, bag id); the lowest
// round(train_fraction * n) hashes train.
Dataset generate_dataset(const BagSpec& spec, Index n_per_class, std::uint64_t seed,
                         double train_fraction = 2.0 / 3.0);

// The documented split hash.
std::uint64_t split_hash(std::uint64_t seed, const std::string& bag_id);

}  // namespace ssmil
