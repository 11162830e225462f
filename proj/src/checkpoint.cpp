#include "diffrl/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace diffrl {

// All integers stored little-endian. We only target little-endian hosts
// (x86/arm64), so raw writes are fine; the static_assert documents the bet.
static_assert(sizeof(double) == 8);

static void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
static void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

static uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw FormatError("checkpoint: truncated while reading u32");
    return v;
}

static uint64_t read_u64(std::istream& is) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    if (!is) throw FormatError("checkpoint: truncated while reading u64");
    return v;
}

static void write_str(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

static std::string read_str(std::istream& is) {
    uint32_t n = read_u32(is);
    if (n > (1u << 20)) throw FormatError("checkpoint: implausible string length");
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw FormatError("checkpoint: truncated while reading string");
    return s;
}

static constexpr char kNetMagic[5] = {'F', 'P', 'N', 'E', 'T'};
static constexpr uint32_t kNetVersion = 1;

void write_net(std::ostream& os, const DenseNet& net) {
    net.check_params();
    os.write(kNetMagic, 5);
    write_u32(os, kNetVersion);
    write_u32(os, static_cast<uint32_t>(net.widths.size()));
    for (long w : net.widths) write_u64(os, static_cast<uint64_t>(w));
    write_u32(os, static_cast<uint32_t>(net.act));
    write_u64(os, static_cast<uint64_t>(net.params.size()));
    os.write(reinterpret_cast<const char*>(net.params.data()),
             static_cast<std::streamsize>(net.params.size() * 8));
}

DenseNet read_net(std::istream& is) {
    char magic[5] = {};
    is.read(magic, 5);
    if (!is || std::memcmp(magic, kNetMagic, 5) != 0) throw FormatError("net blob: bad magic");
    uint32_t version = read_u32(is);
    if (version != kNetVersion) throw FormatError(strfmt("net blob: unsupported version %u", version));
    uint32_t nw = read_u32(is);
    if (nw < 2 || nw > 64) throw FormatError("net blob: implausible layer count");
    DenseNet net;
    net.widths.resize(nw);
    for (uint32_t i = 0; i < nw; ++i) net.widths[i] = static_cast<long>(read_u64(is));
    uint32_t act = read_u32(is);
    if (act > static_cast<uint32_t>(Activation::identity)) throw FormatError("net blob: bad activation id");
    net.act = static_cast<Activation>(act);
    uint64_t np = read_u64(is);
    if (np != static_cast<uint64_t>(DenseNet::param_count(net.widths)))
        throw FormatError("net blob: param count does not match widths");
    net.params.resize(np);
    is.read(reinterpret_cast<char*>(net.params.data()), static_cast<std::streamsize>(np * 8));
    if (!is) throw FormatError("net blob: truncated params");
    return net;
}

static constexpr char kCkptMagic[6] = {'F', 'P', 'C', 'K', 'P', 'T'};
static constexpr uint32_t kCkptVersion = 1;

void Checkpoint::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError(strfmt("cannot open '%s' for writing", path.c_str()));
    os.write(kCkptMagic, 6);
    write_u32(os, kCkptVersion);
    write_u32(os, static_cast<uint32_t>(nets.size()));
    for (const auto& [name, net] : nets) {
        write_str(os, name);
        write_net(os, net);
    }
    write_u32(os, static_cast<uint32_t>(vecs.size()));
    for (const auto& [name, v] : vecs) {
        write_str(os, name);
        write_u64(os, v.size());
        os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
    }
    write_u32(os, static_cast<uint32_t>(meta.size()));
    for (const auto& [name, s] : meta) {
        write_str(os, name);
        write_str(os, s);
    }
    if (!os) throw FormatError(strfmt("write failed for '%s'", path.c_str()));
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError(strfmt("cannot open '%s'", path.c_str()));
    char magic[6] = {};
    is.read(magic, 6);
    if (!is || std::memcmp(magic, kCkptMagic, 6) != 0) throw FormatError("checkpoint: bad magic");
    uint32_t version = read_u32(is);
    if (version != kCkptVersion) throw FormatError(strfmt("checkpoint: unsupported version %u", version));
    Checkpoint ck;
    uint32_t nn = read_u32(is);
    for (uint32_t i = 0; i < nn; ++i) {
        std::string name = read_str(is);
        ck.nets.emplace(name, read_net(is));
    }
    uint32_t nv = read_u32(is);
    for (uint32_t i = 0; i < nv; ++i) {
        std::string name = read_str(is);
        uint64_t len = read_u64(is);
        std::vector<double> v(len);
        is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(len * 8));
        if (!is) throw FormatError("checkpoint: truncated vector payload");
        ck.vecs.emplace(name, std::move(v));
    }
    uint32_t nm = read_u32(is);
    for (uint32_t i = 0; i < nm; ++i) {
        std::string name = read_str(is);
        ck.meta.emplace(name, read_str(is));
    }
    return ck;
}

}  // namespace diffrl
