#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ssmil/types.hpp"

namespace ssmil {

// Parameter checkpoint: magic "SSMP", version byte 1, then per parameter:
// name length (u16 LE), UTF-8 name, rank (u8), extents (u32 LE each), values
// (f64 LE, row-major). This writer always emits rank 2; the reader also
// accepts rank 0 (scalar) and rank 1 (column vector).
using NamedMatrices = std::vector<std::pair<std::string, Matrix>>;

void save_checkpoint(const std::string& path, const NamedMatrices& params);
NamedMatrices load_checkpoint(const std::string& path);

}  // namespace ssmil
