#pragma once

#include <array>
#include <vector>

#include "ssmil/types.hpp"

namespace ssmil {

// Rectangular cell grid with a validity (tissue foreground) flag per cell.
// Grid features are carried as [rows*cols x D] matrices in row-major cell
// order, so cell (r, c) is matrix row r*cols + c.
struct GridIndex {
  Index rows = 0;
  Index cols = 0;
  MaskVec valid;  // rows*cols entries, row-major

  Index cell(Index r, Index c) const { return r * cols + c; }
  Index cell_count() const { return rows * cols; }
  bool is_valid(Index r, Index c) const { return valid[static_cast<size_t>(cell(r, c))] != 0; }
  Index valid_count() const;
  // Flat cell indices of valid cells in ascending (row-major) order.
  std::vector<Index> valid_cells() const;
};

GridIndex make_full_grid(Index rows, Index cols);

// The up-to-4 coarse cells a half-step fine position (0-based, on the
// (2H-1) x (2W-1) grid) overlaps.
std::vector<std::array<Index, 2>> overlapped_coarse_cells(Index fine_r, Index fine_c,
                                                          Index coarse_rows, Index coarse_cols);

// Half-stride overlapping positions of a coarse grid: (2H-1) x (2W-1) fine
// cells, each valid iff any coarse cell it overlaps is valid.
GridIndex overlap_positions(const GridIndex& coarse);
GridIndex overlap_positions(Index coarse_rows, Index coarse_cols);

struct FlattenResult {
  Matrix sequence;              // [valid_count x D]
  std::vector<Index> back_map;  // flat cell index per token, strictly ascending
};

// Emits valid cells in ascending row-major order; invalid cells are dropped.
FlattenResult flatten(const Matrix& grid_features, const GridIndex& index);

struct PadResult {
  Matrix grid;   // [rows*cols x D], zero on gaps
  MaskVec mask;  // 1 where a token was placed
};

// Inverse of flatten on the valid cells; everything else is zero-filled.
PadResult pad_to_rectangle(const Matrix& sequence, const std::vector<Index>& back_map,
                           Index rows, Index cols);

// Fraction of valid cells in the rectangle.
double tissue_ratio(const GridIndex& index);

}  // namespace ssmil
