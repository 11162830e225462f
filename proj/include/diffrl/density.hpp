#pragma once

#include <functional>

#include "diffrl/util.hpp"

namespace diffrl {

// Normalized probability masses on a regular grid over [lo,hi]^dim.
// Node i_k sits at lo + i_k*h (h = (hi-lo)/(n-1)); its cell is the
// half-open box of width h centered on the node (half-width at the edges),
// which is exactly the trapezoid-rule weighting.
struct GridDensity {
    long dim = 1;
    long n = 0;  // nodes per dimension
    double lo = -1.0, hi = 1.0;
    std::vector<double> mass;  // size n^dim, sums to 1

    double spacing() const { return (hi - lo) / static_cast<double>(n - 1); }
    long cells() const;
    // flat index from per-dimension node indices
    long flat(std::span<const long> idx) const;
    void node_point(long flat_index, std::span<double> out) const;
};

// Quadrature of an unnormalized nonnegative density function. Throws
// DomainError if the integral is zero or the function returns non-finite
// values.
GridDensity density_from_function(long dim, long n, double lo, double hi,
                                  const std::function<double(std::span<const double>)>& f);

// Empirical density: samples binned to their nearest grid node. Samples
// outside [lo,hi] clamp to the boundary nodes.
GridDensity histogram_density(const MatD& samples, long dim, long n, double lo, double hi);

// Total variation distance: half the L1 distance between mass vectors.
// Grids must match exactly.
double tv_distance(const GridDensity& a, const GridDensity& b);

}  // namespace diffrl
