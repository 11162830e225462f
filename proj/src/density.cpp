#include "diffrl/density.hpp"

#include <cmath>

namespace diffrl {

long GridDensity::cells() const {
    long c = 1;
    for (long k = 0; k < dim; ++k) c *= n;
    return c;
}

long GridDensity::flat(std::span<const long> idx) const {
    long f = 0;
    for (long k = 0; k < dim; ++k) f = f * n + idx[k];
    return f;
}

void GridDensity::node_point(long flat_index, std::span<double> out) const {
    double h = spacing();
    for (long k = dim - 1; k >= 0; --k) {
        out[k] = lo + static_cast<double>(flat_index % n) * h;
        flat_index /= n;
    }
}

GridDensity density_from_function(long dim, long n, double lo, double hi,
                                  const std::function<double(std::span<const double>)>& f) {
    if (dim < 1 || dim > 3) throw DomainError(strfmt("density dim %ld unsupported", dim));
    if (n < 2) throw DomainError("density grid needs at least 2 nodes per dim");
    if (!(hi > lo)) throw DomainError("density grid bounds");
    GridDensity g;
    g.dim = dim;
    g.n = n;
    g.lo = lo;
    g.hi = hi;
    long total = g.cells();
    g.mass.resize(total);
    std::vector<double> pt(dim);
    double sum = 0.0;
    for (long i = 0; i < total; ++i) {
        g.node_point(i, {pt.data(), pt.size()});
        double v = f({pt.data(), pt.size()});
        if (!std::isfinite(v) || v < 0.0) throw DomainError(strfmt("density function returned %g", v));
        // trapezoid weight: boundary nodes own half a cell per boundary dim
        double w = 1.0;
        long rem = i;
        for (long k = dim - 1; k >= 0; --k) {
            long ik = rem % n;
            rem /= n;
            if (ik == 0 || ik == n - 1) w *= 0.5;
        }
        g.mass[i] = v * w;
        sum += g.mass[i];
    }
    if (!(sum > 0.0)) throw DomainError("density function integrates to zero");
    for (double& m : g.mass) m /= sum;
    return g;
}

GridDensity histogram_density(const MatD& samples, long dim, long n, double lo, double hi) {
    if (samples.cols != dim) throw DimensionError("histogram sample dim", dim, samples.cols);
    if (samples.rows == 0) throw DomainError("histogram: no samples");
    GridDensity g;
    g.dim = dim;
    g.n = n;
    g.lo = lo;
    g.hi = hi;
    g.mass.assign(g.cells(), 0.0);
    double h = g.spacing();
    std::vector<long> idx(dim);
    for (long i = 0; i < samples.rows; ++i) {
        for (long k = 0; k < dim; ++k) {
            long ik = static_cast<long>(std::lround((samples(i, k) - lo) / h));
            idx[k] = ik < 0 ? 0 : (ik >= n ? n - 1 : ik);
        }
        g.mass[g.flat(idx)] += 1.0;
    }
    double inv = 1.0 / static_cast<double>(samples.rows);
    for (double& m : g.mass) m *= inv;
    return g;
}

double tv_distance(const GridDensity& a, const GridDensity& b) {
    if (a.dim != b.dim || a.n != b.n || a.lo != b.lo || a.hi != b.hi)
        throw DimensionError("tv_distance grid mismatch", a.n, b.n);
    double s = 0.0;
    for (size_t i = 0; i < a.mass.size(); ++i) s += std::abs(a.mass[i] - b.mass[i]);
    return 0.5 * s;
}

}  // namespace diffrl
