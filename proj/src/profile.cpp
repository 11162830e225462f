#include "diffrl/profile.hpp"

#include <cmath>

#include "diffrl/errors.hpp"

namespace diffrl {

std::vector<double> performance_profile(std::span<const RunResult> runs,
                                        std::span<const double> thresholds,
                                        const std::map<std::string, double>& max_returns) {
    if (runs.empty()) throw DomainError("performance_profile: empty run set");

    std::vector<double> normalized;
    normalized.reserve(runs.size());
    for (const auto& r : runs) {
        auto it = max_returns.find(r.task);
        if (it == max_returns.end())
            throw DomainError("performance_profile: no max return for task '" + r.task + "'");
        if (it->second == 0.0)
            throw DomainError("performance_profile: max return for task '" + r.task + "' is zero");
        normalized.push_back(r.final_return / it->second);
    }

    std::vector<double> fractions(thresholds.size(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(normalized.size());
    for (size_t k = 0; k < thresholds.size(); ++k) {
        long count = 0;
        for (double s : normalized)
            if (s >= thresholds[k]) ++count;
        fractions[k] = static_cast<double>(count) * inv_n;
    }
    return fractions;
}

}  // namespace diffrl
