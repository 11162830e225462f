#include "diffrl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace diffrl {

MetricsWriter::MetricsWriter(std::string path, long seed) : path_(std::move(path)), seed_(seed) {
    t0_ = std::chrono::steady_clock::now();
}

void MetricsWriter::log(long frame, std::string_view name, double value) {
    if (path_.empty()) throw DomainError("MetricsWriter not attached to a path");
    if (name.find(',') != std::string_view::npos || name.find('\n') != std::string_view::npos)
        throw FormatError(strfmt("metric name '%.*s' contains a separator", (int)name.size(), name.data()));
    if (any_ && frame < last_frame_)
        throw DomainError(strfmt("metric frame %ld precedes frame %ld already written", frame, last_frame_));
    if (!opened_) {
        out_.open(path_);
        if (!out_) throw FormatError(strfmt("cannot open metrics file '%s'", path_.c_str()));
        out_ << "frame,name,value,seed,wall_time\n";
        opened_ = true;
    }
    double wt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    out_ << frame << ',' << name << ',' << buf << ',' << seed_ << ',';
    std::snprintf(buf, sizeof buf, "%.3f", wt);
    out_ << buf << '\n';
    last_frame_ = frame;
    any_ = true;
}

void MetricsWriter::flush() {
    if (opened_) out_.flush();
}

std::vector<MetricRow> read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(strfmt("cannot open metrics file '%s'", path.c_str()));
    std::string line;
    if (!std::getline(in, line)) throw FormatError(strfmt("metrics file '%s' is empty", path.c_str()));
    if (line != "frame,name,value,seed,wall_time")
        throw FormatError(strfmt("metrics file '%s' has unexpected header", path.c_str()));

    std::vector<MetricRow> rows;
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string f, name, v, s, w;
        if (!std::getline(ss, f, ',') || !std::getline(ss, name, ',') || !std::getline(ss, v, ',') ||
            !std::getline(ss, s, ',') || !std::getline(ss, w))
            throw FormatError(strfmt("metrics file '%s': malformed line %ld", path.c_str(), lineno));
        MetricRow r;
        r.frame = std::stol(f);
        r.name = name;
        r.value = std::stod(v);
        r.seed = std::stol(s);
        r.wall_time = std::stod(w);
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<MetricRow> filter_metric(const std::vector<MetricRow>& rows, std::string_view name) {
    std::vector<MetricRow> out;
    for (const auto& r : rows)
        if (r.name == name) out.push_back(r);
    return out;
}

bool same_metrics(const std::vector<MetricRow>& a, const std::vector<MetricRow>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        const MetricRow &x = a[i], &y = b[i];
        bool val_eq = (x.value == y.value) || (std::isnan(x.value) && std::isnan(y.value));
        if (x.frame != y.frame || x.name != y.name || !val_eq || x.seed != y.seed) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// SVG emission. Hand-rolled: one fixed canvas, linear axes, a small palette.

namespace {

struct Range {
    double lo = 0.0, hi = 1.0;
    void grow(double v) {
        if (!std::isfinite(v)) return;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
};

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string esc(const std::string& s) {
    std::string o;
    for (char c : s) {
        if (c == '<') o += "&lt;";
        else if (c == '>') o += "&gt;";
        else if (c == '&') o += "&amp;";
        else o += c;
    }
    return o;
}

}  // namespace

void write_svg_plot(const std::string& path, const std::string& title, const std::string& xlabel,
                    const std::string& ylabel, const std::vector<PlotSeries>& series) {
    if (series.empty()) throw DomainError("write_svg_plot: no series");
    const double W = 840, H = 520, ML = 80, MR = 30, MT = 50, MB = 60;
    const double PW = W - ML - MR, PH = H - MT - MB;

    Range xr, yr;
    bool first = true;
    for (const auto& s : series) {
        if (s.x.size() != s.mean.size())
            throw DimensionError("plot series x/mean", (long)s.x.size(), (long)s.mean.size());
        if (!s.std.empty() && s.std.size() != s.x.size())
            throw DimensionError("plot series std", (long)s.x.size(), (long)s.std.size());
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (first) {
                xr = {s.x[i], s.x[i]};
                yr = {s.mean[i], s.mean[i]};
                first = false;
            }
            xr.grow(s.x[i]);
            double sd = s.std.empty() ? 0.0 : s.std[i];
            yr.grow(s.mean[i] - sd);
            yr.grow(s.mean[i] + sd);
        }
    }
    if (first) throw DomainError("write_svg_plot: all series empty");
    if (xr.hi == xr.lo) xr.hi = xr.lo + 1.0;
    double pad = (yr.hi - yr.lo) * 0.05;
    if (pad == 0.0) pad = std::abs(yr.hi) * 0.05 + 1e-9;
    yr.lo -= pad;
    yr.hi += pad;

    auto px = [&](double x) { return ML + (x - xr.lo) / (xr.hi - xr.lo) * PW; };
    auto py = [&](double y) { return MT + (1.0 - (y - yr.lo) / (yr.hi - yr.lo)) * PH; };
    auto fmt = [](double v) {
        char b[32];
        std::snprintf(b, sizeof b, "%g", v);
        return std::string(b);
    };

    std::ofstream out(path);
    if (!out) throw FormatError(strfmt("cannot write plot '%s'", path.c_str()));
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" "
        << "font-family=\"sans-serif\">" << esc(title) << "</text>\n";

    // gridlines + ticks
    const int kTicks = 5;
    out << "<g font-size=\"11\" font-family=\"sans-serif\" fill=\"#444\">\n";
    for (int i = 0; i <= kTicks; ++i) {
        double xv = xr.lo + (xr.hi - xr.lo) * i / kTicks;
        double yv = yr.lo + (yr.hi - yr.lo) * i / kTicks;
        out << "<line x1=\"" << px(xv) << "\" y1=\"" << MT << "\" x2=\"" << px(xv) << "\" y2=\""
            << MT + PH << "\" stroke=\"#e0e0e0\"/>\n";
        out << "<line x1=\"" << ML << "\" y1=\"" << py(yv) << "\" x2=\"" << ML + PW << "\" y2=\""
            << py(yv) << "\" stroke=\"#e0e0e0\"/>\n";
        out << "<text x=\"" << px(xv) << "\" y=\"" << MT + PH + 18 << "\" text-anchor=\"middle\">"
            << fmt(xv) << "</text>\n";
        out << "<text x=\"" << ML - 8 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">"
            << fmt(yv) << "</text>\n";
    }
    out << "</g>\n";
    out << "<rect x=\"" << ML << "\" y=\"" << MT << "\" width=\"" << PW << "\" height=\"" << PH
        << "\" fill=\"none\" stroke=\"#333\"/>\n";
    out << "<text x=\"" << ML + PW / 2 << "\" y=\"" << H - 14
        << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">" << esc(xlabel)
        << "</text>\n";
    out << "<text x=\"20\" y=\"" << MT + PH / 2
        << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\" transform=\"rotate(-90 20 "
        << MT + PH / 2 << ")\">" << esc(ylabel) << "</text>\n";

    for (size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = kPalette[si % (sizeof kPalette / sizeof *kPalette)];
        if (s.x.empty()) continue;
        if (!s.std.empty()) {
            out << "<polygon fill=\"" << color << "\" fill-opacity=\"0.15\" stroke=\"none\" points=\"";
            for (size_t i = 0; i < s.x.size(); ++i)
                out << px(s.x[i]) << "," << py(s.mean[i] + s.std[i]) << " ";
            for (size_t i = s.x.size(); i-- > 0;)
                out << px(s.x[i]) << "," << py(s.mean[i] - s.std[i]) << " ";
            out << "\"/>\n";
        }
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
        for (size_t i = 0; i < s.x.size(); ++i) out << px(s.x[i]) << "," << py(s.mean[i]) << " ";
        out << "\"/>\n";
        // legend entry
        double ly = MT + 16 + 18 * (double)si;
        out << "<line x1=\"" << ML + PW - 150 << "\" y1=\"" << ly << "\" x2=\"" << ML + PW - 120
            << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << ML + PW - 112 << "\" y=\"" << ly + 4
            << "\" font-size=\"12\" font-family=\"sans-serif\">" << esc(s.label) << "</text>\n";
    }
    out << "</svg>\n";
}

}  // namespace diffrl
