#include "covert/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "covert/error.hpp"

namespace covert {

void project_to_simplex(std::span<double> v, double floor) {
    const std::size_t n = v.size();
    if (n == 0) return;
    const double mass = 1.0 - floor * static_cast<double>(n);
    if (mass < -1e-12) throw DomainError("project_to_simplex: floor too large for dimension");
    if (mass <= 0.0) {
        std::fill(v.begin(), v.end(), 1.0 / static_cast<double>(n));
        return;
    }
    // Sort-based projection onto {u >= 0, sum u = mass} applied to v - floor.
    std::vector<double> u(v.begin(), v.end());
    for (double& x : u) x -= floor;
    std::vector<double> sorted(u);
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double cumsum = 0.0;
    double theta = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        cumsum += sorted[i];
        const double t = (cumsum - mass) / static_cast<double>(i + 1);
        if (sorted[i] - t > 0.0) theta = t;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = std::max(u[i] - theta, 0.0);
        total += v[i];
    }
    // Remove rounding drift so the result sums to one.
    const double fix = (mass - total) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = std::max(v[i] + fix, 0.0) + floor;
}

std::size_t simplex_grid_size(std::size_t dim, std::size_t divisions) {
    // C(divisions + dim - 1, dim - 1)
    if (dim == 0) return 0;
    std::size_t r = dim - 1;
    double acc = 1.0;
    for (std::size_t i = 1; i <= r; ++i)
        acc = acc * static_cast<double>(divisions + i) / static_cast<double>(i);
    return static_cast<std::size_t>(std::llround(acc));
}

void visit_simplex_grid(std::size_t dim, std::size_t divisions, double floor, std::size_t begin,
                        std::size_t end,
                        const std::function<void(std::size_t, std::span<const double>)>& visit) {
    if (dim == 0) return;
    const double mass = 1.0 - floor * static_cast<double>(dim);
    const double h = mass / static_cast<double>(divisions);
    std::vector<std::size_t> k(dim, 0);
    std::vector<double> point(dim);
    std::size_t index = 0;

    // Depth-first over compositions; stops early once past `end`.
    std::function<bool(std::size_t, std::size_t)> rec = [&](std::size_t pos, std::size_t left) -> bool {
        if (pos + 1 == dim) {
            k[pos] = left;
            if (index >= begin && index < end) {
                for (std::size_t i = 0; i < dim; ++i) point[i] = floor + h * static_cast<double>(k[i]);
                visit(index, point);
            }
            ++index;
            return index < end;
        }
        // Largest share first, so index 0 is the point mass on the first coordinate.
        for (std::size_t c = left + 1; c-- > 0;) {
            k[pos] = c;
            if (!rec(pos + 1, left - c)) return false;
        }
        return true;
    };
    rec(0, divisions);
}

}  // namespace covert
