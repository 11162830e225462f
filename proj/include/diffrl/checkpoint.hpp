#pragma once

#include <iosfwd>
#include <map>
#include <string>

#include "diffrl/net.hpp"

namespace diffrl {

// Versioned binary net blob: "FPNET" magic, format version, layer widths,
// activation id, then raw little-endian 64-bit params. Round trip is
// bit-exact.
void write_net(std::ostream& os, const DenseNet& net);
DenseNet read_net(std::istream& is);

// Container for full training state: named nets plus named scalar vectors
// (optimizer moments, temperatures, counters) plus string metadata.
struct Checkpoint {
    std::map<std::string, DenseNet> nets;
    std::map<std::string, std::vector<double>> vecs;
    std::map<std::string, std::string> meta;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

    bool has_net(const std::string& k) const { return nets.count(k) > 0; }
    bool has_vec(const std::string& k) const { return vecs.count(k) > 0; }
};

}  // namespace diffrl
