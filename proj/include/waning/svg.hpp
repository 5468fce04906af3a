#pragma once

// Minimal SVG line charts built from plain <path>, <line> and <text> elements.

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "waning/bounds.hpp"
#include "waning/errors.hpp"
#include "waning/format.hpp"
#include "waning/power_study.hpp"

namespace waning::svg {

namespace detail {

constexpr const char* palette[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"};

inline std::string num(double x) {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(2);
    out << x;
    return out.str();
}

struct Frame {
    double left, top, width, height;
    double x_min, x_max, y_min, y_max;
    bool log_x = false;

    double x(double v) const {
        const double a = log_x ? std::log10(v) : v;
        const double lo = log_x ? std::log10(x_min) : x_min;
        const double hi = log_x ? std::log10(x_max) : x_max;
        const double t = hi > lo ? (a - lo) / (hi - lo) : 0.5;
        return left + t * width;
    }
    double y(double v) const {
        const double t = y_max > y_min ? (v - y_min) / (y_max - y_min) : 0.5;
        return top + height - t * height;
    }
};

inline void axes(std::ostringstream& out, const Frame& f, const std::vector<double>& x_ticks,
                 const std::vector<double>& y_ticks) {
    out << "<rect x=\"" << num(f.left) << "\" y=\"" << num(f.top) << "\" width=\"" << num(f.width) << "\" height=\""
        << num(f.height) << "\" fill=\"none\" stroke=\"#000\"/>\n";
    for (double t : x_ticks) {
        out << "<text x=\"" << num(f.x(t)) << "\" y=\"" << num(f.top + f.height + 14)
            << "\" font-size=\"10\" text-anchor=\"middle\">" << format_double(t) << "</text>\n";
    }
    for (double t : y_ticks) {
        out << "<line x1=\"" << num(f.left) << "\" y1=\"" << num(f.y(t)) << "\" x2=\"" << num(f.left + f.width)
            << "\" y2=\"" << num(f.y(t)) << "\" stroke=\"#ddd\"/>\n";
        out << "<text x=\"" << num(f.left - 4) << "\" y=\"" << num(f.y(t) + 3)
            << "\" font-size=\"10\" text-anchor=\"end\">" << format_double(t) << "</text>\n";
    }
}

inline void polyline(std::ostringstream& out, const Frame& f, const std::vector<std::pair<double, double>>& pts,
                     const char* colour, bool dashed = false) {
    if (pts.empty()) return;
    out << "<path d=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
        out << (i == 0 ? "M" : " L") << num(f.x(pts[i].first)) << ',' << num(f.y(pts[i].second));
    }
    out << "\" fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\"";
    if (dashed) out << " stroke-dasharray=\"5,3\"";
    out << "/>\n";
}

} // namespace detail

// Rejection rate against n: one panel per (exposure, method), one line per w.
inline std::string emit_plot(std::span<const PowerCell> cells) {
    if (cells.empty()) throw Error(ErrorKind::EmptyInput, "no power cells to plot");

    std::vector<double> exposures, ws;
    std::vector<Method> methods;
    double n_min = static_cast<double>(cells.front().n), n_max = n_min;
    for (const auto& c : cells) {
        if (std::find(exposures.begin(), exposures.end(), c.exposure) == exposures.end()) exposures.push_back(c.exposure);
        if (std::find(ws.begin(), ws.end(), c.w) == ws.end()) ws.push_back(c.w);
        if (std::find(methods.begin(), methods.end(), c.method) == methods.end()) methods.push_back(c.method);
        n_min = std::min(n_min, static_cast<double>(c.n));
        n_max = std::max(n_max, static_cast<double>(c.n));
    }
    std::sort(exposures.begin(), exposures.end());
    std::sort(ws.begin(), ws.end());

    constexpr double panel_w = 260, panel_h = 180, margin_l = 50, margin_t = 40, gap_x = 40, gap_y = 60;
    const double width = margin_l + exposures.size() * (panel_w + gap_x) + 120;
    const double height = margin_t + methods.size() * (panel_h + gap_y);

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << detail::num(width) << "\" height=\""
        << detail::num(height) << "\" font-family=\"sans-serif\">\n";

    std::vector<double> x_ticks;
    for (const auto& c : cells)
        if (std::find(x_ticks.begin(), x_ticks.end(), static_cast<double>(c.n)) == x_ticks.end())
            x_ticks.push_back(static_cast<double>(c.n));
    std::sort(x_ticks.begin(), x_ticks.end());

    for (std::size_t row = 0; row < methods.size(); ++row) {
        for (std::size_t col = 0; col < exposures.size(); ++col) {
            const detail::Frame frame{margin_l + col * (panel_w + gap_x), margin_t + row * (panel_h + gap_y), panel_w,
                                      panel_h, n_min, n_max, 0.0, 1.0, n_min > 0 && n_max > n_min};
            out << "<g class=\"panel\" data-method=\"" << to_string(methods[row]) << "\" data-exposure=\""
                << format_double(exposures[col]) << "\">\n";
            out << "<text x=\"" << detail::num(frame.left + panel_w / 2) << "\" y=\"" << detail::num(frame.top - 8)
                << "\" font-size=\"12\" text-anchor=\"middle\">" << to_string(methods[row])
                << ", exposure " << format_double(exposures[col]) << "</text>\n";
            detail::axes(out, frame, x_ticks, {0.0, 0.25, 0.5, 0.75, 1.0});
            for (std::size_t k = 0; k < ws.size(); ++k) {
                std::vector<std::pair<double, double>> pts;
                for (const auto& c : cells) {
                    if (c.method == methods[row] && c.exposure == exposures[col] && c.w == ws[k] &&
                        c.replications_used > 0) {
                        pts.emplace_back(static_cast<double>(c.n), c.rejection_rate);
                    }
                }
                std::sort(pts.begin(), pts.end());
                detail::polyline(out, frame, pts, detail::palette[k % std::size(detail::palette)]);
            }
            out << "</g>\n";
        }
    }

    const double legend_x = margin_l + exposures.size() * (panel_w + gap_x);
    out << "<g class=\"legend\">\n";
    for (std::size_t k = 0; k < ws.size(); ++k) {
        const double y = margin_t + 14 * k;
        out << "<line x1=\"" << detail::num(legend_x) << "\" y1=\"" << detail::num(y) << "\" x2=\""
            << detail::num(legend_x + 20) << "\" y2=\"" << detail::num(y) << "\" stroke=\""
            << detail::palette[k % std::size(detail::palette)] << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << detail::num(legend_x + 25) << "\" y=\"" << detail::num(y + 4)
            << "\" font-size=\"11\">w = " << format_double(ws[k]) << "</text>\n";
    }
    out << "</g>\n</svg>\n";
    return out.str();
}

// Upper bound on VE2^challenge (solid) and its one-sided limit (dashed) against p12.
inline std::string bound_plot(std::span<const BoundResult> curve) {
    if (curve.empty()) throw Error(ErrorKind::EmptyInput, "no bound points to plot");
    double y_min = curve.front().upper_bound, y_max = y_min;
    for (const auto& b : curve) {
        y_min = std::min({y_min, b.upper_bound, b.ci_upper_onesided});
        y_max = std::max({y_max, b.upper_bound, b.ci_upper_onesided});
    }
    y_min = std::floor(y_min * 10) / 10;
    y_max = std::ceil(y_max * 10) / 10;
    if (y_max <= y_min) y_max = y_min + 0.1;

    const detail::Frame frame{60, 30, 420, 260, 0.0, 1.0, y_min, y_max};
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"520\" height=\"340\" font-family=\"sans-serif\">\n";
    std::vector<double> y_ticks;
    for (int k = 0; k <= 4; ++k) y_ticks.push_back(y_min + (y_max - y_min) * k / 4.0);
    detail::axes(out, frame, {0.0, 0.25, 0.5, 0.75, 1.0}, y_ticks);
    std::vector<std::pair<double, double>> bound, limit;
    for (const auto& b : curve) {
        bound.emplace_back(b.p12, b.upper_bound);
        limit.emplace_back(b.p12, b.ci_upper_onesided);
    }
    detail::polyline(out, frame, bound, "#c00000");
    detail::polyline(out, frame, limit, "#c00000", true);
    out << "<text x=\"270\" y=\"330\" font-size=\"12\" text-anchor=\"middle\">p12</text>\n";
    out << "<text x=\"270\" y=\"18\" font-size=\"12\" text-anchor=\"middle\">upper bound on VE2 challenge</text>\n";
    out << "</svg>\n";
    return out.str();
}

} // namespace waning::svg
