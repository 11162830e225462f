#include <cstdio>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "diffrl/dataset.hpp"
#include "diffrl/metrics.hpp"
#include "diffrl/profile.hpp"
#include "diffrl/sweep.hpp"
#include "diffrl/trainer.hpp"

namespace {

diffrl::RunConfig build_config(const std::string& algo, const std::string& env,
                               const std::string& config_file, const std::vector<std::string>& sets) {
    auto cfg = diffrl::RunConfig::defaults(algo, env);
    if (!config_file.empty()) cfg.merge_file(config_file);
    for (const auto& kv : sets) cfg.set(kv, "");
    return cfg;
}

std::pair<std::string, std::string> split_eq(const std::string& s, const char* what) {
    size_t eq = s.find('=');
    if (eq == std::string::npos)
        throw diffrl::DomainError(std::string(what) + " '" + s + "' is not name=value");
    return {s.substr(0, eq), s.substr(eq + 1)};
}

int cmd_train(const std::string& algo, const std::string& env, const std::string& config_file,
              const std::vector<std::string>& sets, const std::string& out) {
    auto cfg = build_config(algo, env, config_file, sets);
    std::string dir = diffrl::train(cfg, out);
    std::printf("run %s\n", dir.c_str());
    auto rows = diffrl::read_metrics(dir + "/metrics.csv");
    auto er = diffrl::filter_metric(rows, "eval_return");
    if (!er.empty()) std::printf("final eval_return %.6g at frame %ld\n", er.back().value, er.back().frame);
    return 0;
}

int cmd_eval(const std::string& run_dir, std::string config_file, std::string checkpoint, long episodes,
             uint64_t seed, long bon) {
    if (!run_dir.empty()) {
        config_file = run_dir + "/config.json";
        checkpoint = run_dir + "/checkpoint.bin";
    }
    if (config_file.empty() || checkpoint.empty())
        throw diffrl::DomainError("eval needs --run, or both --config and --checkpoint");
    auto cfg = diffrl::RunConfig::load(config_file);
    auto ev = diffrl::evaluate(cfg, checkpoint, episodes, seed, bon);
    std::printf("eval_return %.6g +- %.6g over %ld episodes\n", ev.mean, ev.stddev, episodes);
    return 0;
}

int cmd_profile(const std::vector<std::string>& run_dirs, const std::vector<std::string>& max_returns,
                std::vector<double> taus, const std::string& out) {
    std::map<std::string, double> maxima;
    for (const auto& mr : max_returns) {
        auto [task, val] = split_eq(mr, "max-return");
        maxima[task] = std::stod(val);
    }
    std::vector<diffrl::RunResult> runs;
    for (const auto& dir : run_dirs) {
        auto cfg = diffrl::RunConfig::load(dir + "/config.json");
        auto er = diffrl::filter_metric(diffrl::read_metrics(dir + "/metrics.csv"), "eval_return");
        if (er.empty()) throw diffrl::DomainError("run has no eval_return rows: " + dir);
        runs.push_back({cfg.env_name(), er.back().value});
    }
    if (taus.empty())
        for (int i = 0; i <= 20; ++i) taus.push_back(0.05 * i);
    auto frac = diffrl::performance_profile(runs, taus, maxima);

    FILE* f = out.empty() ? stdout : std::fopen(out.c_str(), "w");
    if (!f) throw diffrl::DomainError("cannot open " + out);
    std::fprintf(f, "tau,fraction\n");
    for (size_t i = 0; i < taus.size(); ++i) std::fprintf(f, "%.6g,%.6g\n", taus[i], frac[i]);
    if (!out.empty()) std::fclose(f);
    return 0;
}

int cmd_sweep(const std::string& algo, const std::string& env, const std::string& config_file,
              const std::vector<std::string>& sets, const std::string& axis,
              const std::vector<std::string>& values, const std::vector<long>& seeds,
              const std::string& out, long jobs) {
    auto cfg = build_config(algo, env, config_file, sets);
    auto res = diffrl::sweep(cfg, axis, values, seeds, out, jobs);
    std::printf("sweep over %s: %zu cells x %zu seeds\n", axis.c_str(), res.cells.size(), seeds.size());
    for (const auto& cell : res.cells) {
        std::printf("  %s=%s  final_return %.6g +- %.6g", axis.c_str(), cell.value.c_str(),
                    diffrl::mean_of(cell.final_returns), diffrl::stddev_of(cell.final_returns));
        if (!cell.final_tv.empty()) std::printf("  tv %.4f", diffrl::mean_of(cell.final_tv));
        std::printf("\n");
    }
    std::printf("tables and plot under %s\n", out.c_str());
    return 0;
}

int cmd_gen_dataset(const std::string& env_name, long frames, uint64_t seed, const std::string& out,
                    const std::string& run_dir) {
    diffrl::Env env = diffrl::Env::make(env_name);
    diffrl::Rng rng(seed);
    diffrl::Rng env_rng = rng.split("env");
    diffrl::Rng act_rng = rng.split("behavior");

    std::unique_ptr<diffrl::Agent> agent;
    if (!run_dir.empty()) {
        auto cfg = diffrl::RunConfig::load(run_dir + "/config.json");
        if (cfg.env_name() != env_name)
            throw diffrl::DomainError("behavior checkpoint env '" + cfg.env_name() +
                                      "' does not match --env " + env_name);
        diffrl::Rng build = rng.split("agent");
        agent = diffrl::make_agent(cfg, env.spec(), build);
        agent->load(diffrl::Checkpoint::load(run_dir + "/checkpoint.bin"));
    }

    std::vector<diffrl::TransitionRecord> records;
    records.reserve(frames);
    auto state = env.reset(env_rng);
    long ep_steps = 0;
    for (long k = 0; k < frames; ++k) {
        std::vector<double> action(env.spec().act_dim);
        if (agent)
            action = agent->act(state, act_rng);
        else
            act_rng.fill_uniform(action, diffrl::Env::kActLow, diffrl::Env::kActHigh);
        diffrl::TransitionRecord tr = env.step(state, action, env_rng);
        ++ep_steps;
        tr.truncated = !tr.terminal && ep_steps >= env.spec().horizon;
        records.push_back(tr);
        if (tr.terminal || tr.truncated) {
            state = env.reset(env_rng);
            ep_steps = 0;
        } else {
            state = tr.next_state;
        }
    }
    diffrl::save_transitions(out, env_name, records);
    std::printf("wrote %ld transitions (%s behavior) to %s\n", frames,
                agent ? "checkpoint" : "uniform", out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"diffusion/flow policy RL workbench"};
    app.require_subcommand(1);

    std::string algo = "sac", env = "pendulum", config_file, out, run_dir, checkpoint, axis;
    std::vector<std::string> sets, values, max_returns, run_dirs;
    std::vector<long> seeds{0, 1, 2};
    std::vector<double> taus;
    long episodes = 10, bon = 1, frames = 10000, jobs = 1;
    uint64_t seed = 0;

    auto* train = app.add_subcommand("train", "run one training job");
    train->add_option("--algo", algo)->check(CLI::IsMember(diffrl::RunConfig::algorithm_names()));
    train->add_option("--env", env);
    train->add_option("--config", config_file, "config file overlaying the defaults");
    train->add_option("--set", sets, "dotted.key=value override")->take_all();
    train->add_option("--out", out, "run directory (default: auto under $DIFFRL_RUN_ROOT)");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--run", run_dir, "run directory holding config.json + checkpoint.bin");
    eval->add_option("--config", config_file);
    eval->add_option("--checkpoint", checkpoint);
    eval->add_option("--episodes", episodes);
    eval->add_option("--seed", seed);
    eval->add_option("--bon", bon, "best-of-N action reranking (1 = off)");

    auto* prof = app.add_subcommand("profile", "performance profile over finished runs");
    prof->add_option("dirs", run_dirs, "run directories")->required();
    prof->add_option("--max-return", max_returns, "task=value normalizer")->take_all();
    prof->add_option("--tau", taus, "thresholds (default 0,0.05,...,1)")->take_all();
    prof->add_option("--out", out, "write CSV here instead of stdout");

    auto* swp = app.add_subcommand("sweep", "axis sweep x seeds, aggregated");
    swp->add_option("--algo", algo)->check(CLI::IsMember(diffrl::RunConfig::algorithm_names()));
    swp->add_option("--env", env);
    swp->add_option("--config", config_file);
    swp->add_option("--set", sets)->take_all();
    swp->add_option("--axis", axis, "dotted config key to vary")->required();
    swp->add_option("--values", values)->required()->delimiter(',');
    swp->add_option("--seeds", seeds)->delimiter(',');
    swp->add_option("--out", out)->required();
    swp->add_option("--jobs", jobs, "worker threads");

    auto* gen = app.add_subcommand("gen-dataset", "roll out a behavior policy to a transition file");
    gen->add_option("--env", env)->required();
    gen->add_option("--frames", frames);
    gen->add_option("--seed", seed);
    gen->add_option("--out", out)->required();
    gen->add_option("--run", run_dir, "behavior from this run's checkpoint (default: uniform)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(algo, env, config_file, sets, out);
        if (eval->parsed()) return cmd_eval(run_dir, config_file, checkpoint, episodes, seed, bon);
        if (prof->parsed()) return cmd_profile(run_dirs, max_returns, taus, out);
        if (swp->parsed()) return cmd_sweep(algo, env, config_file, sets, axis, values, seeds, out, jobs);
        if (gen->parsed()) return cmd_gen_dataset(env, frames, seed, out, run_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
