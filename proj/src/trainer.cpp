#include "diffrl/trainer.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "diffrl/density.hpp"
#include "diffrl/metrics.hpp"

namespace diffrl {

namespace fs = std::filesystem;

std::string run_root() {
    const char* e = std::getenv("DIFFRL_RUN_ROOT");
    return (e && *e) ? std::string(e) : std::string("runs");
}

namespace {

std::string pick_run_dir(const RunConfig& cfg) {
    std::string base = run_root() + "/" + cfg.algo() + "-" + cfg.str("env.name") + "-seed" +
                       std::to_string(cfg.integer("seed"));
    std::string dir = base;
    for (long k = 2; fs::exists(dir); ++k) dir = base + "-" + std::to_string(k);
    return dir;
}

// One environment frame from the agent's point of view: frame_skip inner
// steps under a held action, rewards summed, with the driver-side horizon
// truncation applied to the merged record.
TransitionRecord step_frame(const Env& env, std::span<const double> state, std::span<const double> action,
                            long frame_skip, long& ep_env_steps, Rng& rng) {
    TransitionRecord merged;
    merged.state.assign(state.begin(), state.end());
    merged.action.assign(action.begin(), action.end());
    std::vector<double> cur(state.begin(), state.end());
    for (long s = 0; s < frame_skip; ++s) {
        TransitionRecord tr = env.step(cur, action, rng);
        merged.reward += tr.reward;
        merged.next_state = tr.next_state;
        merged.terminal = tr.terminal;
        cur = tr.next_state;
        ++ep_env_steps;
        if (tr.terminal || ep_env_steps >= env.spec().horizon) break;
    }
    merged.truncated = !merged.terminal && ep_env_steps >= env.spec().horizon;
    return merged;
}

bool metrics_finite(const MetricMap& mm, const EvalResult& ev) {
    if (!std::isfinite(ev.mean) || !std::isfinite(ev.stddev)) return false;
    for (const auto& [k, v] : mm)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace

EvalResult evaluate(Agent& agent, const Env& env, long episodes, Rng& rng, long bon_n) {
    if (episodes < 1) throw DomainError("evaluate: episodes must be >= 1");
    EvalResult er;
    er.returns.reserve(episodes);
    for (long ep = 0; ep < episodes; ++ep) {
        Rng ep_rng = rng.split("episode", static_cast<uint64_t>(ep));
        auto state = env.reset(ep_rng);
        double ret = 0.0;
        for (long step = 0; step < env.spec().horizon; ++step) {
            auto action = agent.act_eval(state, ep_rng, bon_n);
            TransitionRecord tr = env.step(state, action, ep_rng);
            ret += tr.reward;
            if (tr.terminal) break;
            state = tr.next_state;
        }
        er.returns.push_back(ret);
    }
    er.mean = mean_of(er.returns);
    er.stddev = stddev_of(er.returns);
    return er;
}

EvalResult evaluate(const RunConfig& cfg, const std::string& checkpoint_path, long episodes,
                    uint64_t eval_seed, long bon_n) {
    Env env = Env::make(cfg.str("env.name"));
    Rng build(static_cast<uint64_t>(cfg.integer("seed")));
    Rng agent_rng = build.split("agent");
    auto agent = make_agent(cfg, env.spec(), agent_rng);
    agent->load(Checkpoint::load(checkpoint_path));
    Rng eval_rng = Rng(eval_seed).split("eval");
    return evaluate(*agent, env, episodes, eval_rng, bon_n);
}

double tv_to_oracle(Agent& agent, const Env& env, double lambda, long num_samples, Rng& rng) {
    if (!env.has_analytic_q()) throw DomainError("tv_to_oracle needs an analytic-Q environment");
    if (num_samples < 1) throw DomainError("tv_to_oracle: num_samples must be >= 1");
    const auto& spec = env.spec();

    Rng sr = rng.split("tv_state");
    auto state = env.reset(sr);

    long nodes = spec.act_dim == 1 ? Env::kDensityGridNodes : 64;
    GridDensity oracle;
    if (spec.act_dim == 1) {
        oracle = env.optimal_policy_density(state, lambda);
    } else {
        // Same construction as the 1d oracle, on a grid coarse enough for the
        // histogram comparison. Shift by the max so exp() stays in range.
        double qmax = -std::numeric_limits<double>::infinity();
        GridDensity probe;
        probe.dim = spec.act_dim;
        probe.n = nodes;
        probe.mass.assign(static_cast<size_t>(std::pow(nodes, spec.act_dim)), 0.0);
        std::vector<double> pt(spec.act_dim);
        for (long i = 0; i < static_cast<long>(probe.mass.size()); ++i) {
            probe.node_point(i, pt);
            qmax = std::max(qmax, env.q_star(state, pt));
        }
        oracle = density_from_function(spec.act_dim, nodes, Env::kActLow, Env::kActHigh,
                                       [&](std::span<const double> a) {
                                           return std::exp((env.q_star(state, a) - qmax) / lambda);
                                       });
    }

    MatD samples(num_samples, spec.act_dim);
    Rng ar = rng.split("tv_actions");
    const long block = 4096;
    MatD rep(std::min(block, num_samples), spec.obs_dim);
    for (long off = 0; off < num_samples; off += block) {
        long n = std::min(block, num_samples - off);
        if (rep.rows != n) rep = MatD(n, spec.obs_dim);
        for (long i = 0; i < n; ++i) rep.set_row(i, state);
        MatD a = agent.sample_actions(rep, ar);
        for (long i = 0; i < n; ++i) samples.set_row(off + i, a.row(i));
    }
    GridDensity emp = histogram_density(samples, spec.act_dim, nodes, Env::kActLow, Env::kActHigh);
    return tv_distance(emp, oracle);
}

std::string train(const RunConfig& cfg, const std::string& out_dir) {
    Env env = Env::make(cfg.str("env.name"));
    const long total = cfg.integer("train.total_frames");
    const long warmup = cfg.integer("train.warmup_frames");
    const long eval_interval = cfg.integer("train.eval_interval");
    const long eval_episodes = cfg.integer("train.eval_episodes");
    const long eval_bon = cfg.integer("train.eval_bon");
    const long frame_skip = std::max<long>(1, cfg.integer("env.frame_skip"));
    const long seed = cfg.integer("seed");
    if (total < 0) throw DomainError("train.total_frames must be >= 0");
    if (eval_interval < 1) throw DomainError("train.eval_interval must be >= 1");

    std::string dir = out_dir.empty() ? pick_run_dir(cfg) : out_dir;
    fs::create_directories(dir);
    cfg.save(dir + "/config.json");

    MetricsWriter mw(dir + "/metrics.csv", seed);
    if (total == 0) return dir;  // config snapshot only

    Rng master(static_cast<uint64_t>(seed));
    Rng env_rng = master.split("env");
    Rng agent_rng = master.split("agent");
    Rng eval_root = master.split("eval");
    auto agent = make_agent(cfg, env.spec(), agent_rng);

    const bool nullable_stop = cfg.tree.at("train").at("early_stop_return").is_null();
    const double early_stop =
        nullable_stop ? 0.0 : cfg.tree.at("train").at("early_stop_return").get<double>();

    auto state = env.reset(env_rng);
    long ep_env_steps = 0;
    double ep_return = 0.0;
    std::vector<double> finished_returns;
    MetricMap last_mm;
    long nonfinite_streak = 0;
    long eval_round = 0;
    bool stopped_early = false;

    for (long frame = 1; frame <= total; ++frame) {
        std::vector<double> action;
        if (frame <= warmup) {
            action.resize(env.spec().act_dim);
            agent_rng.fill_uniform(action, Env::kActLow, Env::kActHigh);
        } else {
            action = agent->act(state, agent_rng);
        }

        TransitionRecord tr = step_frame(env, state, action, frame_skip, ep_env_steps, env_rng);
        ep_return += tr.reward;
        agent->observe(tr);

        MetricMap mm = agent->update(frame, agent_rng);
        if (!mm.empty()) last_mm = std::move(mm);

        if (tr.terminal || tr.truncated) {
            finished_returns.push_back(ep_return);
            ep_return = 0.0;
            ep_env_steps = 0;
            state = env.reset(env_rng);
        } else {
            state = tr.next_state;
        }

        if (frame % eval_interval == 0 || frame == total) {
            Rng er = eval_root.split("round", static_cast<uint64_t>(eval_round++));
            EvalResult ev = evaluate(*agent, env, eval_episodes, er, eval_bon);

            if (!finished_returns.empty()) {
                mw.log(frame, "train_return", mean_of(finished_returns));
                finished_returns.clear();
            }
            for (const auto& [k, v] : last_mm) mw.log(frame, k, v);
            mw.log(frame, "eval_return", ev.mean);
            mw.log(frame, "eval_return_std", ev.stddev);

            if (frame == total && env.has_analytic_q()) {
                Rng tr_rng = eval_root.split("tv", static_cast<uint64_t>(seed));
                double tv = tv_to_oracle(*agent, env, cfg.num("guidance.lambda"),
                                         cfg.integer("train.tv_samples"), tr_rng);
                mw.log(frame, "tv_oracle", tv);
            }

            nonfinite_streak = metrics_finite(last_mm, ev) ? 0 : nonfinite_streak + 1;
            if (nonfinite_streak >= 3) {
                mw.flush();
                std::ofstream diag(dir + "/diagnostics.txt");
                diag << "aborted at frame " << frame << ": non-finite metrics at 3 consecutive evals\n";
                diag << "eval_return " << ev.mean << " +- " << ev.stddev << "\n";
                for (const auto& [k, v] : last_mm) diag << k << " " << v << "\n";
                throw NonFiniteError("training aborted: non-finite metrics at 3 consecutive evaluations");
            }

            if (!nullable_stop && ev.mean >= early_stop) {
                stopped_early = true;
            }
        }
        if (stopped_early) break;
    }

    Checkpoint ck;
    agent->save(ck);
    ck.save(dir + "/checkpoint.bin");
    mw.flush();
    return dir;
}

}  // namespace diffrl
