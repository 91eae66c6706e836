#pragma once

#include <vector>

#include "todma/common.hpp"

namespace todma {

/// Minimum-cost perfect matching on a square cost matrix (Kuhn-Munkres with
/// potentials, O(n^3)). Returns row -> column.
std::vector<std::size_t> solve_assignment(const RMatrix& cost);

}  // namespace todma
