#include "diffrl/config.hpp"

#include <fstream>

namespace diffrl {

using nlohmann::json;

namespace {

json base_tree() {
    json j;
    j["algo"] = "sac";
    j["seed"] = 0;
    j["env"] = {{"name", "pendulum"}, {"frame_skip", 1}};
    j["train"] = {
        {"total_frames", 300000}, {"warmup_frames", 5000},     {"eval_interval", 10000},
        {"eval_episodes", 10},    {"batch_size", 256},         {"replay_capacity", 1000000},
        {"gamma", 0.99},          {"updates_per_frame", 1.0},  {"rollout_frames", 2048},
        {"tv_samples", 200000},   {"early_stop_return", nullptr},
        {"eval_bon", 1},          {"reward_scale", 1.0},
    };
    j["actor"] = {
        {"hidden", {256, 256, 256}}, {"activation", "mish"}, {"lr", 3e-4},
        {"time_embed_dim", 64},      {"head", "epsilon"},    {"grad_clip", 0.0},
    };
    j["critic"] = {
        {"ensemble", 2}, {"hidden", {256, 256}}, {"activation", "relu"},
        {"lr", 3e-4},    {"ema_rate", 0.005},    {"grad_clip", 0.0},
    };
    j["sampler"] = {
        {"num_steps", 20}, {"mode", "ancestral"}, {"schedule", "cosine"}, {"eta", 1.0},
        {"t_min", 1e-3},   {"x0_clip", 1.5},      {"std_floor", 0.0},
    };
    j["guidance"] = {
        {"family", "weighted"},        {"lambda", 0.1},  {"reference", "uniform"},
        {"num_samples", 10},           {"num_reverse_samples", 500},
        {"num_mc_samples", 8},         {"clip_eps", 0.2}, {"target_kl", 2.5},
        {"ref_refresh_interval", 1000},
    };
    // Algorithm-family knobs that have no shared home above.
    j["algo_cfg"] = {
        {"proposal", "prev_policy"},
        {"num_train_samples", 64},
        {"num_behavior_samples", 2},
        {"ref_pretrain_updates", 500},
        // Time floor for regression-style actor losses. Deliberately higher
        // than sampler.t_min: score targets scale like 1/sigma(t), so batches
        // that draw t near zero are dominated by a few huge noise rows.
        {"loss_t_min", 0.05},
        {"entropy_coef", 0.01},
        {"entropy_num_samples", 200},
        {"noise_scaler", 0.1},
        {"alpha_lr", 3e-4},
        {"alpha_update_interval", 10000},
        {"init_alpha", 1.0},
        {"actor_delay", 1},
        {"bc_weight", 0.1},
        {"epochs", 4},
        {"minibatches", 4},
        {"gae_lambda", 0.95},
        {"ppo_entropy_coef", 1e-4},
        {"value_hidden", {256, 256, 256}},
        {"value_activation", "elu"},
        {"value_lr", 1e-3},
        {"logr_clamp", 5.0},
        {"ratio_clamp_enabled", true},
    };
    return j;
}

void apply_algo(json& j, const std::string& algo) {
    j["algo"] = algo;
    if (algo == "sac") {
        j["actor"]["hidden"] = {256, 256};
    } else if (algo == "ppo") {
        j["actor"]["hidden"] = {256, 256, 256};
        j["actor"]["activation"] = "elu";
        j["actor"]["lr"] = 1e-4;
        j["actor"]["grad_clip"] = 1.0;
        j["guidance"]["clip_eps"] = 0.2;
        j["train"]["warmup_frames"] = 0;
    } else if (algo == "qsm") {
        j["guidance"]["family"] = "qvalue";
        j["guidance"]["lambda"] = 0.1;
        j["guidance"]["num_samples"] = 10;
    } else if (algo == "dacer") {
        j["guidance"]["family"] = "reparam";
        j["actor"]["lr"] = 1e-4;
        j["critic"]["lr"] = 1e-4;
        j["algo_cfg"]["alpha_lr"] = 0.03;
        j["algo_cfg"]["actor_delay"] = 2;
    } else if (algo == "edp") {
        j["guidance"]["family"] = "reparam";
    } else if (algo == "dpmd") {
        j["guidance"]["family"] = "weighted";
        j["guidance"]["lambda"] = 0.05;
        j["algo_cfg"]["proposal"] = "prev_policy";
        j["algo_cfg"]["num_train_samples"] = 16;
    } else if (algo == "sdac") {
        j["guidance"]["family"] = "weighted";
        j["guidance"]["lambda"] = 0.05;
        j["algo_cfg"]["proposal"] = "reverse_sampling";
    } else if (algo == "qvpo") {
        j["guidance"]["family"] = "weighted";
        j["actor"]["hidden"] = {256, 256};
        j["algo_cfg"]["proposal"] = "uniform_mix";
    } else if (algo == "dppo") {
        j["guidance"]["family"] = "pg";
        j["actor"]["lr"] = 1e-4;
        j["actor"]["time_embed_dim"] = 32;
        j["sampler"]["num_steps"] = 10;
        j["sampler"]["std_floor"] = 1e-3;
        j["algo_cfg"]["value_activation"] = "mish";
        j["train"]["warmup_frames"] = 0;
    } else if (algo == "fpo") {
        j["guidance"]["family"] = "pg";
        j["guidance"]["clip_eps"] = 0.05;
        j["actor"]["lr"] = 1e-4;
        j["actor"]["activation"] = "silu";
        j["actor"]["time_embed_dim"] = 16;
        j["sampler"]["num_steps"] = 10;
        j["train"]["warmup_frames"] = 0;
    } else {
        throw DomainError(strfmt("unknown algorithm '%s'", algo.c_str()));
    }
}

std::vector<std::string> split_path(const std::string& dotted) {
    std::vector<std::string> parts;
    size_t start = 0;
    while (start <= dotted.size()) {
        size_t dot = dotted.find('.', start);
        if (dot == std::string::npos) {
            parts.push_back(dotted.substr(start));
            break;
        }
        parts.push_back(dotted.substr(start, dot - start));
        start = dot + 1;
    }
    if (parts.empty() || parts.front().empty()) throw DomainError(strfmt("bad config key '%s'", dotted.c_str()));
    return parts;
}

const json* find_node(const json& tree, const std::string& dotted) {
    const json* cur = &tree;
    for (const std::string& p : split_path(dotted)) {
        if (!cur->is_object() || !cur->contains(p)) return nullptr;
        cur = &cur->at(p);
    }
    return cur;
}

json* find_node_mut(json& tree, const std::string& dotted) {
    json* cur = &tree;
    for (const std::string& p : split_path(dotted)) {
        if (!cur->is_object() || !cur->contains(p)) return nullptr;
        cur = &cur->at(p);
    }
    return cur;
}

bool assignable(const json& slot, const json& v) {
    if (slot.is_null() || v.is_null()) return true;  // nullable slots accept anything scalar
    if (slot.is_number() && v.is_number()) return true;
    if (slot.type() == v.type()) return true;
    return false;
}

void merge_into(json& dst, const json& src, const std::string& prefix) {
    for (auto it = src.begin(); it != src.end(); ++it) {
        std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!dst.contains(it.key()))
            throw DomainError(strfmt("unknown config key '%s'", path.c_str()));
        json& slot = dst.at(it.key());
        if (slot.is_object() && it->is_object()) {
            merge_into(slot, *it, path);
        } else if (slot.is_object() != it->is_object()) {
            throw DomainError(strfmt("config key '%s' expects %s", path.c_str(),
                                     slot.is_object() ? "a section" : "a value"));
        } else {
            if (!assignable(slot, *it))
                throw DomainError(strfmt("config key '%s' has incompatible type", path.c_str()));
            slot = *it;
        }
    }
}

}  // namespace

RunConfig RunConfig::defaults(const std::string& algo, const std::string& env) {
    RunConfig c;
    c.tree = base_tree();
    apply_algo(c.tree, algo);
    c.tree["env"]["name"] = env;
    return c;
}

const std::vector<std::string>& RunConfig::algorithm_names() {
    static const std::vector<std::string> names = {"sac",  "ppo",  "qsm",  "dacer", "edp",
                                                   "dpmd", "sdac", "qvpo", "dppo",  "fpo"};
    return names;
}

void RunConfig::merge_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(strfmt("cannot open config file '%s'", path.c_str()));
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError(strfmt("config file '%s': %s", path.c_str(), e.what()));
    }
    // An "algo" key in the file re-bases the defaults before the overlay, so
    // files only have to state deviations.
    if (j.contains("algo") && j["algo"].get<std::string>() != algo()) {
        std::string env = env_name();
        tree = base_tree();
        apply_algo(tree, j["algo"].get<std::string>());
        tree["env"]["name"] = env;
    }
    merge_into(tree, j, "");
}

void RunConfig::set(const std::string& dotted_key, const std::string& value) {
    std::string key = dotted_key;
    std::string val = value;
    if (value.empty()) {
        size_t eq = dotted_key.find('=');
        if (eq == std::string::npos)
            throw DomainError(strfmt("override '%s' is not key=value", dotted_key.c_str()));
        key = dotted_key.substr(0, eq);
        val = dotted_key.substr(eq + 1);
    }
    if (key == "algo") {
        // Switching algorithm swaps in its defaults wholesale.
        std::string env = env_name();
        json keep = tree;
        tree = base_tree();
        apply_algo(tree, val);
        tree["env"]["name"] = env;
        tree["seed"] = keep["seed"];
        return;
    }
    json* slot = find_node_mut(tree, key);
    if (!slot) throw DomainError(strfmt("unknown config key '%s'", key.c_str()));
    if (slot->is_object()) throw DomainError(strfmt("config key '%s' is a section", key.c_str()));

    json parsed;
    try {
        parsed = json::parse(val);
    } catch (const json::exception&) {
        parsed = val;  // bare string
    }
    if (!assignable(*slot, parsed))
        throw DomainError(strfmt("config key '%s' has incompatible type", key.c_str()));
    *slot = parsed;
}

bool RunConfig::has(const std::string& dotted_key) const {
    const json* n = find_node(tree, dotted_key);
    return n && !n->is_null();
}

double RunConfig::num(const std::string& dotted_key) const {
    const json* n = find_node(tree, dotted_key);
    if (!n || !n->is_number()) throw DomainError(strfmt("config key '%s' is not a number", dotted_key.c_str()));
    return n->get<double>();
}

long RunConfig::integer(const std::string& dotted_key) const {
    const json* n = find_node(tree, dotted_key);
    if (!n || !n->is_number()) throw DomainError(strfmt("config key '%s' is not a number", dotted_key.c_str()));
    return n->get<long>();
}

bool RunConfig::boolean(const std::string& dotted_key) const {
    const json* n = find_node(tree, dotted_key);
    if (!n || !n->is_boolean()) throw DomainError(strfmt("config key '%s' is not a bool", dotted_key.c_str()));
    return n->get<bool>();
}

std::string RunConfig::str(const std::string& dotted_key) const {
    const json* n = find_node(tree, dotted_key);
    if (!n || !n->is_string()) throw DomainError(strfmt("config key '%s' is not a string", dotted_key.c_str()));
    return n->get<std::string>();
}

std::vector<long> RunConfig::int_list(const std::string& dotted_key) const {
    const json* n = find_node(tree, dotted_key);
    if (!n || !n->is_array()) throw DomainError(strfmt("config key '%s' is not a list", dotted_key.c_str()));
    std::vector<long> out;
    for (const auto& v : *n) out.push_back(v.get<long>());
    return out;
}

void RunConfig::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw FormatError(strfmt("cannot write config '%s'", path.c_str()));
    out << dump() << "\n";
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(strfmt("cannot open config '%s'", path.c_str()));
    RunConfig c;
    try {
        in >> c.tree;
    } catch (const json::exception& e) {
        throw FormatError(strfmt("config '%s': %s", path.c_str(), e.what()));
    }
    return c;
}

}  // namespace diffrl
