#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "diffrl/errors.hpp"

namespace diffrl {

// Dense row-major matrix of doubles. Deliberately minimal: storage plus
// indexing. All heavy lifting happens in the .cpp files, which may map this
// into whatever linear algebra backend they like.
struct MatD {
    long rows = 0;
    long cols = 0;
    std::vector<double> data;

    MatD() = default;
    MatD(long r, long c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}
    MatD(long r, long c, double fill) : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}

    double& operator()(long i, long j) { return data[static_cast<size_t>(i) * cols + j]; }
    double operator()(long i, long j) const { return data[static_cast<size_t>(i) * cols + j]; }

    std::span<double> row(long i) { return {data.data() + static_cast<size_t>(i) * cols, static_cast<size_t>(cols)}; }
    std::span<const double> row(long i) const {
        return {data.data() + static_cast<size_t>(i) * cols, static_cast<size_t>(cols)};
    }

    void set_row(long i, std::span<const double> v) {
        if (static_cast<long>(v.size()) != cols) throw DimensionError("MatD::set_row", cols, static_cast<long>(v.size()));
        std::copy(v.begin(), v.end(), data.begin() + static_cast<size_t>(i) * cols);
    }

    bool empty() const { return rows == 0 || cols == 0; }
    size_t size() const { return data.size(); }

    void setZero() { std::fill(data.begin(), data.end(), 0.0); }
};

inline bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline bool all_finite(const MatD& m) { return all_finite(std::span<const double>(m.data)); }

inline double clampd(double x, double lo, double hi) { return x < lo ? lo : (x > hi ? hi : x); }

inline double mean_of(std::span<const double> v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double stddev_of(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double squared_norm(std::span<const double> v) { return dot(v, v); }

// log(sum(exp(v))) without overflow
inline double logsumexp(std::span<const double> v) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

// In-place softmax; returns the normalizer in log space for callers that care.
inline double softmax_inplace(std::span<double> v) {
    double lz = logsumexp(v);
    for (double& x : v) x = std::exp(x - lz);
    return lz;
}

}  // namespace diffrl
