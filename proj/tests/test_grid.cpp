#include <doctest.h>

#include "ssmil/grid.hpp"
#include "ssmil/ssm.hpp"
#include "test_util.hpp"

using namespace ssmil;
using ssmil::testing::bitwise_equal;
using ssmil::testing::random_matrix;

TEST_CASE("overlap position counts") {
  CHECK(overlap_positions(1, 1).cell_count() == 1);
  CHECK(overlap_positions(2, 2).cell_count() == 9);
  // (2*8-1)^2 = 225 for N = 64: the 4N count is approximate, this is exact
  CHECK(overlap_positions(8, 8).cell_count() == 225);
}

TEST_CASE("overlap validity is the OR of overlapped coarse cells") {
  GridIndex coarse = make_full_grid(3, 3);
  coarse.valid.assign(9, 0);
  coarse.valid[static_cast<size_t>(coarse.cell(1, 1))] = 1;  // single center cell
  const GridIndex fine = overlap_positions(coarse);
  CHECK(fine.rows == 5);
  CHECK(fine.cols == 5);
  // every fine cell touching (1,1) is valid: rows/cols 1..3 of the 5x5
  Index count = 0;
  for (Index r = 0; r < 5; ++r)
    for (Index c = 0; c < 5; ++c) {
      const bool want = r >= 1 && r <= 3 && c >= 1 && c <= 3;
      CHECK(fine.is_valid(r, c) == want);
      count += fine.is_valid(r, c);
    }
  CHECK(count == 9);
}

TEST_CASE("overlap validity is monotone in coarse validity") {
  std::mt19937_64 rng(12);
  for (int round = 0; round < 20; ++round) {
    GridIndex coarse = make_full_grid(4, 5);
    for (auto& v : coarse.valid) v = rng() % 2;
    if (coarse.valid_count() == 0) coarse.valid[0] = 1;
    const GridIndex fine = overlap_positions(coarse);
    GridIndex more = coarse;
    std::uniform_int_distribution<size_t> pick(0, more.valid.size() - 1);
    more.valid[pick(rng)] = 1;
    const GridIndex fine_more = overlap_positions(more);
    for (size_t i = 0; i < fine.valid.size(); ++i)
      if (fine.valid[i]) CHECK(fine_more.valid[i]);
  }
}

TEST_CASE("flatten emits valid cells in row-major order") {
  SUBCASE("1x3 all valid") {
    GridIndex idx = make_full_grid(1, 3);
    std::mt19937_64 rng(1);
    const Matrix grid = random_matrix(3, 2, rng);
    const FlattenResult f = flatten(grid, idx);
    REQUIRE(f.back_map.size() == 3);
    CHECK(f.back_map[0] == 0);
    CHECK(f.back_map[1] == 1);
    CHECK(f.back_map[2] == 2);
    CHECK(bitwise_equal(f.sequence, grid));
  }
  SUBCASE("2x2 with one invalid cell") {
    GridIndex idx = make_full_grid(2, 2);
    idx.valid[static_cast<size_t>(idx.cell(0, 1))] = 0;
    std::mt19937_64 rng(2);
    const Matrix grid = random_matrix(4, 3, rng);
    const FlattenResult f = flatten(grid, idx);
    REQUIRE(f.back_map.size() == 3);
    CHECK(f.back_map[0] == idx.cell(0, 0));
    CHECK(f.back_map[1] == idx.cell(1, 0));
    CHECK(f.back_map[2] == idx.cell(1, 1));
  }
  SUBCASE("order strictly increasing under linearize") {
    std::mt19937_64 rng(3);
    GridIndex idx = make_full_grid(5, 7);
    for (auto& v : idx.valid) v = rng() % 2;
    if (idx.valid_count() == 0) idx.valid[3] = 1;
    const FlattenResult f = flatten(random_matrix(35, 2, rng), idx);
    for (size_t t = 1; t < f.back_map.size(); ++t) {
      const Index r0 = f.back_map[t - 1] / idx.cols, c0 = f.back_map[t - 1] % idx.cols;
      const Index r1 = f.back_map[t] / idx.cols, c1 = f.back_map[t] % idx.cols;
      CHECK(linearize(r0 + 1, c0 + 1, idx.cols) < linearize(r1 + 1, c1 + 1, idx.cols));
    }
  }
}

TEST_CASE("pad_to_rectangle inverts flatten and flags gaps") {
  std::mt19937_64 rng(4);
  SUBCASE("all-valid grid round trips bitwise") {
    GridIndex idx = make_full_grid(3, 4);
    const Matrix grid = random_matrix(12, 5, rng);
    const FlattenResult f = flatten(grid, idx);
    const PadResult p = pad_to_rectangle(f.sequence, f.back_map, 3, 4);
    CHECK(bitwise_equal(p.grid, grid));
    for (auto m : p.mask) CHECK(m == 1);
  }
  SUBCASE("single token in 3x3") {
    Matrix seq = random_matrix(1, 2, rng);
    const PadResult p = pad_to_rectangle(seq, {4}, 3, 3);
    Index mask_sum = 0;
    for (auto m : p.mask) mask_sum += m;
    CHECK(mask_sum == 1);
    CHECK(bitwise_equal(Matrix(p.grid.row(4)), Matrix(seq.row(0))));
    CHECK(p.grid.cwiseAbs().sum() == seq.cwiseAbs().sum());
  }
  SUBCASE("random sparse pattern round trips") {
    GridIndex idx = make_full_grid(4, 6);
    for (auto& v : idx.valid) v = rng() % 2;
    if (idx.valid_count() == 0) idx.valid[0] = 1;
    const Matrix grid = random_matrix(24, 3, rng);
    const FlattenResult f = flatten(grid, idx);
    const PadResult p = pad_to_rectangle(f.sequence, f.back_map, 4, 6);
    const FlattenResult again = flatten(p.grid, idx);
    CHECK(bitwise_equal(again.sequence, f.sequence));
    // idempotent: a second pad of the re-flattened sequence is identical
    const PadResult p2 = pad_to_rectangle(again.sequence, again.back_map, 4, 6);
    CHECK(bitwise_equal(p2.grid, p.grid));
  }
  SUBCASE("duplicate coordinate rejected") {
    const Matrix seq = random_matrix(2, 2, rng);
    CHECK_THROWS_AS(pad_to_rectangle(seq, {3, 3}, 2, 3), ContractViolation);
  }
}

TEST_CASE("tissue ratio") {
  GridIndex idx = make_full_grid(3, 3);
  CHECK(tissue_ratio(idx) == 1.0);
  idx.valid.assign(9, 0);
  CHECK(tissue_ratio(idx) == 0.0);
  for (int i = 0; i < 4; ++i) idx.valid[static_cast<size_t>(i)] = 1;
  CHECK(tissue_ratio(idx) == doctest::Approx(4.0 / 9.0).epsilon(1e-15));
}
