#include "diffrl/dataset.hpp"

#include <cstdint>
#include <fstream>

#include <nlohmann/json.hpp>

namespace diffrl {

static constexpr int kSchemaVersion = 1;

void save_transitions(const std::string& path, const std::string& env_name,
                      const std::vector<TransitionRecord>& records) {
    if (records.empty()) throw DomainError("save_transitions: no records");
    long obs_dim = static_cast<long>(records[0].state.size());
    long act_dim = static_cast<long>(records[0].action.size());

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError(strfmt("cannot open '%s' for writing", path.c_str()));
    for (const auto& r : records) {
        if (static_cast<long>(r.state.size()) != obs_dim || static_cast<long>(r.next_state.size()) != obs_dim)
            throw DimensionError("transition state dim", obs_dim, static_cast<long>(r.state.size()));
        if (static_cast<long>(r.action.size()) != act_dim)
            throw DimensionError("transition action dim", act_dim, static_cast<long>(r.action.size()));
        os.write(reinterpret_cast<const char*>(r.state.data()), obs_dim * 8);
        os.write(reinterpret_cast<const char*>(r.action.data()), act_dim * 8);
        os.write(reinterpret_cast<const char*>(&r.reward), 8);
        os.write(reinterpret_cast<const char*>(r.next_state.data()), obs_dim * 8);
        uint8_t flags[2] = {static_cast<uint8_t>(r.terminal ? 1 : 0), static_cast<uint8_t>(r.truncated ? 1 : 0)};
        os.write(reinterpret_cast<const char*>(flags), 2);
    }
    if (!os) throw FormatError(strfmt("write failed for '%s'", path.c_str()));

    nlohmann::json side;
    side["schema_version"] = kSchemaVersion;
    side["env"] = env_name;
    side["count"] = records.size();
    side["obs_dim"] = obs_dim;
    side["act_dim"] = act_dim;
    std::ofstream js(path + ".json", std::ios::trunc);
    if (!js) throw FormatError(strfmt("cannot open '%s.json' for writing", path.c_str()));
    js << side.dump(2) << "\n";
}

Dataset load_transitions(const std::string& path) {
    std::ifstream js(path + ".json");
    if (!js) throw FormatError(strfmt("missing sidecar '%s.json'", path.c_str()));
    nlohmann::json side = nlohmann::json::parse(js, nullptr, true);
    if (side.value("schema_version", -1) != kSchemaVersion)
        throw FormatError("dataset: unsupported schema version");

    Dataset ds;
    ds.env_name = side.at("env").get<std::string>();
    ds.obs_dim = side.at("obs_dim").get<long>();
    ds.act_dim = side.at("act_dim").get<long>();
    size_t count = side.at("count").get<size_t>();

    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError(strfmt("cannot open '%s'", path.c_str()));
    ds.records.resize(count);
    for (auto& r : ds.records) {
        r.state.resize(ds.obs_dim);
        r.action.resize(ds.act_dim);
        r.next_state.resize(ds.obs_dim);
        is.read(reinterpret_cast<char*>(r.state.data()), ds.obs_dim * 8);
        is.read(reinterpret_cast<char*>(r.action.data()), ds.act_dim * 8);
        is.read(reinterpret_cast<char*>(&r.reward), 8);
        is.read(reinterpret_cast<char*>(r.next_state.data()), ds.obs_dim * 8);
        uint8_t flags[2];
        is.read(reinterpret_cast<char*>(flags), 2);
        if (!is) throw FormatError(strfmt("dataset '%s' truncated", path.c_str()));
        r.terminal = flags[0] != 0;
        r.truncated = flags[1] != 0;
    }
    return ds;
}

}  // namespace diffrl
