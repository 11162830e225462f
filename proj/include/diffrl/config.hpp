#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "diffrl/errors.hpp"

namespace diffrl {

// Nested run configuration. Every key a run can consume exists in the default
// tree, so overrides against unknown paths are rejected instead of silently
// ignored. Values are plain JSON scalars/arrays.
struct RunConfig {
    nlohmann::json tree;

    // Full default tree for an algorithm/environment pair (algorithm-specific
    // values already folded in).
    static RunConfig defaults(const std::string& algo, const std::string& env);
    static const std::vector<std::string>& algorithm_names();

    // Parse a config file and overlay it (keys must exist in the defaults).
    void merge_file(const std::string& path);
    // "a.b.c=value" or separate key/value; value parsed as JSON when possible,
    // else taken as a string. Unknown paths and type mismatches throw.
    void set(const std::string& dotted_key, const std::string& value);

    bool has(const std::string& dotted_key) const;
    double num(const std::string& dotted_key) const;
    long integer(const std::string& dotted_key) const;
    bool boolean(const std::string& dotted_key) const;
    std::string str(const std::string& dotted_key) const;
    std::vector<long> int_list(const std::string& dotted_key) const;

    std::string algo() const { return tree.at("algo").get<std::string>(); }
    std::string env_name() const { return tree.at("env").at("name").get<std::string>(); }
    long seed() const { return tree.at("seed").get<long>(); }

    std::string dump(int indent = 2) const { return tree.dump(indent); }
    void save(const std::string& path) const;
    static RunConfig load(const std::string& path);  // snapshot reload (exact tree)
};

}  // namespace diffrl
