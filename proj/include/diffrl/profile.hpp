#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

namespace diffrl {

// One finished run: which task it was on and the final evaluation return.
struct RunResult {
    std::string task;
    double final_return = 0.0;
};

// Fraction of (run, task) pairs whose return, normalized by the task's max
// return, reaches each threshold. Output is aligned with `thresholds` and is
// nonincreasing once thresholds are sorted ascending. Empty run set or a task
// without a max-return entry -> DomainError; max return of 0 -> DomainError
// (normalization would blow up).
std::vector<double> performance_profile(std::span<const RunResult> runs,
                                        std::span<const double> thresholds,
                                        const std::map<std::string, double>& max_returns);

}  // namespace diffrl
