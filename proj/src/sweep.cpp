#include "diffrl/sweep.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "diffrl/metrics.hpp"
#include "diffrl/trainer.hpp"

namespace diffrl {
namespace {

// Strip characters that would make a directory name awkward.
std::string slug(const std::string& v) {
    std::string s;
    for (char c : v)
        s += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.') ? c : '_';
    return s.empty() ? "value" : s;
}

struct Job {
    long cell = 0;
    long seed_idx = 0;
    RunConfig cfg;
    std::string dir;
};

}  // namespace

SweepResult sweep(const RunConfig& base, const std::string& axis, const std::vector<std::string>& values,
                  std::span<const long> seeds, const std::string& out_dir, long jobs) {
    if (values.empty()) throw DomainError("sweep: no axis values");
    if (seeds.empty()) throw DomainError("sweep: no seeds");

    SweepResult res;
    res.axis = axis;
    res.out_dir = out_dir;
    res.cells.resize(values.size());

    // Validate every cell config up front so a bad axis value fails before
    // any training time is spent.
    std::vector<Job> jobs_list;
    for (size_t c = 0; c < values.size(); ++c) {
        res.cells[c].value = values[c];
        for (size_t s = 0; s < seeds.size(); ++s) {
            Job j;
            j.cell = static_cast<long>(c);
            j.seed_idx = static_cast<long>(s);
            j.cfg = base;
            j.cfg.set(axis, values[c]);
            j.cfg.set("seed", std::to_string(seeds[s]));
            j.dir = out_dir + "/" + slug(values[c]) + "-seed" + std::to_string(seeds[s]);
            jobs_list.push_back(std::move(j));
        }
        res.cells[c].run_dirs.resize(seeds.size());
        res.cells[c].final_returns.resize(seeds.size(), 0.0);
    }

    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (;;) {
            size_t k = next.fetch_add(1);
            if (k >= jobs_list.size()) return;
            const Job& j = jobs_list[k];
            res.cells[j.cell].run_dirs[j.seed_idx] = train(j.cfg, j.dir);
        }
    };
    const long nworkers = std::max<long>(1, std::min<long>(jobs, static_cast<long>(jobs_list.size())));
    if (nworkers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (long w = 0; w < nworkers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    // Aggregate learning curves and final scores per cell.
    std::vector<PlotSeries> series;
    std::ofstream curves(out_dir + "/sweep_curves.csv");
    curves << "value,frame,mean,std\n";
    for (auto& cell : res.cells) {
        std::vector<std::vector<MetricRow>> evals;
        for (size_t s = 0; s < cell.run_dirs.size(); ++s) {
            auto rows = read_metrics(cell.run_dirs[s] + "/metrics.csv");
            auto er = filter_metric(rows, "eval_return");
            if (er.empty()) throw DomainError("sweep: run logged no eval_return: " + cell.run_dirs[s]);
            cell.final_returns[s] = er.back().value;
            auto tv = filter_metric(rows, "tv_oracle");
            if (!tv.empty()) cell.final_tv.push_back(tv.back().value);
            evals.push_back(std::move(er));
        }
        // Frames line up across seeds (same frame budget and eval cadence);
        // truncate to the shortest in case early stopping fired on some seed.
        size_t npts = evals[0].size();
        for (const auto& e : evals) npts = std::min(npts, e.size());

        PlotSeries ps;
        ps.label = axis + "=" + cell.value;
        for (size_t i = 0; i < npts; ++i) {
            std::vector<double> vals;
            vals.reserve(evals.size());
            for (const auto& e : evals) vals.push_back(e[i].value);
            ps.x.push_back(static_cast<double>(evals[0][i].frame));
            ps.mean.push_back(mean_of(vals));
            ps.std.push_back(stddev_of(vals));
            curves << cell.value << "," << evals[0][i].frame << "," << ps.mean.back() << ","
                   << ps.std.back() << "\n";
        }
        series.push_back(std::move(ps));
    }

    std::ofstream summary(out_dir + "/sweep_summary.csv");
    summary << "value,final_return_mean,final_return_std,final_tv_mean,final_tv_std\n";
    for (const auto& cell : res.cells) {
        summary << cell.value << "," << mean_of(cell.final_returns) << "," << stddev_of(cell.final_returns);
        if (cell.final_tv.empty())
            summary << ",,";
        else
            summary << "," << mean_of(cell.final_tv) << "," << stddev_of(cell.final_tv);
        summary << "\n";
    }

    write_svg_plot(out_dir + "/sweep.svg", axis, "frame", "eval_return", series);
    return res;
}

}  // namespace diffrl
