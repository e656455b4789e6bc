#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace covert {

/// Euclidean projection onto {p : p_i >= floor, sum p_i = 1}, in place.
/// floor * size must not exceed one.
void project_to_simplex(std::span<double> v, double floor = 0.0);

/// Number of points of the grid {p : p_i = floor + k_i * h, sum = 1}
/// with h = (1 - size*floor) / divisions.
std::size_t simplex_grid_size(std::size_t dim, std::size_t divisions);

/// Calls visit(index, point) for every grid point whose linear index lies in
/// [begin, end). Points are enumerated in reverse lexicographic order of the
/// integer compositions (index 0 is the point mass on coordinate 0), so
/// indices are stable across calls and workers.
void visit_simplex_grid(std::size_t dim, std::size_t divisions, double floor, std::size_t begin,
                        std::size_t end,
                        const std::function<void(std::size_t, std::span<const double>)>& visit);

}  // namespace covert
