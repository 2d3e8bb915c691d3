#include "ssmil/grid.hpp"

namespace ssmil {

Index GridIndex::valid_count() const {
  Index n = 0;
  for (auto v : valid) n += v ? 1 : 0;
  return n;
}

std::vector<Index> GridIndex::valid_cells() const {
  std::vector<Index> cells;
  cells.reserve(static_cast<size_t>(cell_count()));
  for (Index i = 0; i < cell_count(); ++i)
    if (valid[static_cast<size_t>(i)]) cells.push_back(i);
  return cells;
}

GridIndex make_full_grid(Index rows, Index cols) {
  contract(rows >= 1 && cols >= 1, "make_full_grid: extents must be >= 1");
  GridIndex g;
  g.rows = rows;
  g.cols = cols;
  g.valid.assign(static_cast<size_t>(rows * cols), 1);
  return g;
}

std::vector<std::array<Index, 2>> overlapped_coarse_cells(Index fine_r, Index fine_c,
                                                          Index coarse_rows, Index coarse_cols) {
  contract(fine_r >= 0 && fine_r <= 2 * coarse_rows - 2 && fine_c >= 0 &&
               fine_c <= 2 * coarse_cols - 2,
           "overlapped_coarse_cells: fine position outside grid");
  // Even fine coordinates sit on a coarse cell; odd ones straddle two.
  const Index r_lo = fine_r / 2, r_hi = (fine_r + 1) / 2;
  const Index c_lo = fine_c / 2, c_hi = (fine_c + 1) / 2;
  std::vector<std::array<Index, 2>> cells;
  for (Index r = r_lo; r <= r_hi; ++r)
    for (Index c = c_lo; c <= c_hi; ++c) cells.push_back({r, c});
  return cells;
}

GridIndex overlap_positions(const GridIndex& coarse) {
  contract(coarse.rows >= 1 && coarse.cols >= 1, "overlap_positions: extents must be >= 1");
  GridIndex fine;
  fine.rows = 2 * coarse.rows - 1;
  fine.cols = 2 * coarse.cols - 1;
  fine.valid.assign(static_cast<size_t>(fine.rows * fine.cols), 0);
  for (Index r = 0; r < fine.rows; ++r)
    for (Index c = 0; c < fine.cols; ++c) {
      for (const auto& cell : overlapped_coarse_cells(r, c, coarse.rows, coarse.cols)) {
        if (coarse.is_valid(cell[0], cell[1])) {
          fine.valid[static_cast<size_t>(fine.cell(r, c))] = 1;
          break;
        }
      }
    }
  return fine;
}

GridIndex overlap_positions(Index coarse_rows, Index coarse_cols) {
  return overlap_positions(make_full_grid(coarse_rows, coarse_cols));
}

FlattenResult flatten(const Matrix& grid_features, const GridIndex& index) {
  contract(grid_features.rows() == index.cell_count(),
           "flatten: features have " + std::to_string(grid_features.rows()) + " cells, grid " +
               std::to_string(index.cell_count()));
  FlattenResult out;
  out.back_map = index.valid_cells();
  out.sequence.resize(static_cast<Index>(out.back_map.size()), grid_features.cols());
  for (size_t t = 0; t < out.back_map.size(); ++t)
    out.sequence.row(static_cast<Index>(t)) = grid_features.row(out.back_map[t]);
  return out;
}

PadResult pad_to_rectangle(const Matrix& sequence, const std::vector<Index>& back_map,
                           Index rows, Index cols) {
  contract(static_cast<Index>(back_map.size()) == sequence.rows(),
           "pad_to_rectangle: back_map has " + std::to_string(back_map.size()) +
               " entries for " + std::to_string(sequence.rows()) + " tokens");
  PadResult out;
  out.grid = Matrix::Zero(rows * cols, sequence.cols());
  out.mask.assign(static_cast<size_t>(rows * cols), 0);
  for (size_t t = 0; t < back_map.size(); ++t) {
    const Index cell = back_map[t];
    contract(cell >= 0 && cell < rows * cols,
             "pad_to_rectangle: coordinate " + std::to_string(cell) + " outside grid");
    contract(!out.mask[static_cast<size_t>(cell)],
             "pad_to_rectangle: duplicate coordinate " + std::to_string(cell));
    out.mask[static_cast<size_t>(cell)] = 1;
    out.grid.row(cell) = sequence.row(static_cast<Index>(t));
  }
  return out;
}

double tissue_ratio(const GridIndex& index) {
  contract(index.cell_count() >= 1, "tissue_ratio: empty grid");
  return static_cast<double>(index.valid_count()) / static_cast<double>(index.cell_count());
}

}  // namespace ssmil
