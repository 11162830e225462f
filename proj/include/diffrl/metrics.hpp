#pragma once

#include <chrono>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "diffrl/errors.hpp"

namespace diffrl {

struct MetricRow {
    long frame = 0;
    std::string name;
    double value = 0.0;
    long seed = 0;
    double wall_time = 0.0;  // seconds since the writer opened
};

// One CSV per run: header frame,name,value,seed,wall_time. Frames must be
// nondecreasing across rows. The file is created lazily on the first row, so
// a run that logs nothing leaves no metrics file behind.
class MetricsWriter {
public:
    MetricsWriter() = default;
    MetricsWriter(std::string path, long seed);

    void log(long frame, std::string_view name, double value);
    void flush();
    const std::string& path() const { return path_; }

private:
    std::string path_;
    long seed_ = 0;
    std::ofstream out_;
    bool opened_ = false;
    long last_frame_ = 0;
    bool any_ = false;
    std::chrono::steady_clock::time_point t0_;
};

std::vector<MetricRow> read_metrics(const std::string& path);
std::vector<MetricRow> filter_metric(const std::vector<MetricRow>& rows, std::string_view name);

// Equality on everything except wall_time (the one nondeterministic column);
// the reproducibility contract compares runs with this.
bool same_metrics(const std::vector<MetricRow>& a, const std::vector<MetricRow>& b);

// ---- plot emission ----

struct PlotSeries {
    std::string label;
    std::vector<double> x, mean;
    std::vector<double> std;  // optional band; empty = no shading
};

// Static SVG: mean solid line, +-1 std shaded region per series, axes + legend.
void write_svg_plot(const std::string& path, const std::string& title, const std::string& xlabel,
                    const std::string& ylabel, const std::vector<PlotSeries>& series);

}  // namespace diffrl
