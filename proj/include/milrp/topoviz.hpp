// Scalp topographies of per-channel scores as SVG documents.
#pragma once

#include "milrp/core.hpp"
#include "milrp/featmap.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace milrp::topo {

struct Point {
    double x = 0.0;  // left to right
    double y = 0.0;  // back to front (nose at +1)
};

/// Grid cell centers mapped linearly onto [-0.8, 0.8]^2, row 0 at the front.
inline Point cell_position(featmap::Cell cell)
{
    // Written as a signed offset from the center so mirrored cells land on
    // exactly negated coordinates.
    const auto axis = [](std::size_t i, std::size_t n) {
        return 0.8 * (2.0 * static_cast<double>(i) - static_cast<double>(n - 1)) / static_cast<double>(n - 1);
    };
    return {axis(cell.col, featmap::kGridCols), -axis(cell.row, featmap::kGridRows)};
}

struct ChannelScore {
    std::string name;
    double score = 0.0;
    Point position;
};

struct TopoPlot {
    std::vector<ChannelScore> channels;
    double lo = -0.1;
    double hi = 0.1;
    std::string title;
    std::string config_digest;

    void validate() const
    {
        if (channels.empty()) throw InputError("topoplot: no scored channels");
        if (!(lo < hi)) throw InputError("topoplot: color range must satisfy lo < hi");
        for (const auto& c : channels)
            if (!std::isfinite(c.score)) throw InputError("topoplot: non-finite score for channel " + c.name);
    }
};

/// Positions come from the grid; unknown channel names are rejected.
inline TopoPlot make_plot(const std::vector<std::pair<std::string, double>>& scores,
                          const featmap::ChannelGrid& grid = featmap::default_grid(), double lo = -0.1, double hi = 0.1)
{
    TopoPlot p;
    p.lo = lo;
    p.hi = hi;
    for (const auto& [name, v] : scores) p.channels.push_back({name, v, cell_position(grid.at(name))});
    return p;
}

/// Inverse-distance weighting with power 2; exact at channel sites.
inline double interpolate(const TopoPlot& plot, Point at)
{
    double num = 0.0, den = 0.0;
    for (const auto& c : plot.channels) {
        const double dx = at.x - c.position.x;
        const double dy = at.y - c.position.y;
        const double d2 = dx * dx + dy * dy;
        if (d2 == 0.0) return c.score;
        num += c.score / d2;
        den += 1.0 / d2;
    }
    return num / den;
}

/// Position of a score on the color scale: 0 at lo, 1 at hi, clamped.
inline double color_position(double v, double lo, double hi)
{
    const double t = (std::clamp(v, lo, hi) - lo) / (hi - lo);
    return t;
}

struct Rgb {
    int r = 255, g = 255, b = 255;
    friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Blue below the midpoint, white at the midpoint, red above.
inline Rgb color_at(double t)
{
    constexpr Rgb blue{33, 102, 172};
    constexpr Rgb white{255, 255, 255};
    constexpr Rgb red{178, 24, 43};
    const auto mix = [](Rgb a, Rgb b, double u) {
        return Rgb{static_cast<int>(std::lround(a.r + (b.r - a.r) * u)),
                   static_cast<int>(std::lround(a.g + (b.g - a.g) * u)),
                   static_cast<int>(std::lround(a.b + (b.b - a.b) * u))};
    };
    if (t <= 0.5) return mix(blue, white, t / 0.5);
    return mix(white, red, (t - 0.5) / 0.5);
}

inline std::string hex_color(Rgb c)
{
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c.r, c.g, c.b);
    return buf;
}

inline constexpr int kRaster = 64;

struct RasterCell {
    int i = 0, j = 0;  // column, row in the raster
    double value = 0.0;
};

/// Interpolated values on the 64x64 raster covering [-1, 1]^2, keeping only
/// cells whose centers fall inside the head circle.
inline std::vector<RasterCell> rasterize(const TopoPlot& plot)
{
    std::vector<RasterCell> cells;
    const double step = 2.0 / kRaster;
    for (int j = 0; j < kRaster; ++j)
        for (int i = 0; i < kRaster; ++i) {
            const Point p{-1.0 + (i + 0.5) * step, 1.0 - (j + 0.5) * step};
            if (p.x * p.x + p.y * p.y > 1.0) continue;
            cells.push_back({i, j, interpolate(plot, p)});
        }
    return cells;
}

namespace detail {

inline std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

inline std::string escape(const std::string& s)
{
    std::string out;
    for (char ch : s) {
        switch (ch) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += ch;
        }
    }
    return out;
}

// Head of radius `radius` centered at (cx, cy) in document units.
inline std::string head_group(const TopoPlot& plot, double cx, double cy, double radius)
{
    std::string s;
    const double cell = 2.0 * radius / kRaster;
    s += "<g>\n";
    for (const auto& rc : rasterize(plot)) {
        const double x = cx - radius + rc.i * cell;
        const double y = cy - radius + rc.j * cell;
        s += "<rect x=\"" + fmt("%.3f", x) + "\" y=\"" + fmt("%.3f", y) + "\" width=\"" + fmt("%.3f", cell + 0.05) +
             "\" height=\"" + fmt("%.3f", cell + 0.05) + "\" fill=\"" +
             hex_color(color_at(color_position(rc.value, plot.lo, plot.hi))) + "\"/>\n";
    }
    s += "</g>\n";
    // outline and nose
    s += "<circle cx=\"" + fmt("%.3f", cx) + "\" cy=\"" + fmt("%.3f", cy) + "\" r=\"" + fmt("%.3f", radius) +
         "\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>\n";
    s += "<polyline points=\"" + fmt("%.3f", cx - 0.1 * radius) + "," + fmt("%.3f", cy - 0.99 * radius) + " " +
         fmt("%.3f", cx) + "," + fmt("%.3f", cy - 1.12 * radius) + " " + fmt("%.3f", cx + 0.1 * radius) + "," +
         fmt("%.3f", cy - 0.99 * radius) + "\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>\n";
    for (const auto& c : plot.channels) {
        const double x = cx + c.position.x * radius;
        const double y = cy - c.position.y * radius;
        s += "<circle cx=\"" + fmt("%.3f", x) + "\" cy=\"" + fmt("%.3f", y) + "\" r=\"2.5\" fill=\"black\"/>\n";
        s += "<text x=\"" + fmt("%.3f", x) + "\" y=\"" + fmt("%.3f", y - 5.0) +
             "\" font-size=\"9\" text-anchor=\"middle\" font-family=\"sans-serif\">" + escape(c.name) + "</text>\n";
    }
    return s;
}

inline std::string range_label(double v) { return fmt("%g", v); }

inline std::string colorbar(double x, double y, double width, double height, double lo, double hi)
{
    std::string s;
    constexpr int steps = 50;
    for (int k = 0; k < steps; ++k) {
        const double t = (k + 0.5) / steps;
        s += "<rect x=\"" + fmt("%.3f", x + width * k / steps) + "\" y=\"" + fmt("%.3f", y) + "\" width=\"" +
             fmt("%.3f", width / steps + 0.05) + "\" height=\"" + fmt("%.3f", height) + "\" fill=\"" +
             hex_color(color_at(t)) + "\"/>\n";
    }
    s += "<rect x=\"" + fmt("%.3f", x) + "\" y=\"" + fmt("%.3f", y) + "\" width=\"" + fmt("%.3f", width) +
         "\" height=\"" + fmt("%.3f", height) + "\" fill=\"none\" stroke=\"black\"/>\n";
    s += "<text class=\"range-lo\" x=\"" + fmt("%.3f", x) + "\" y=\"" + fmt("%.3f", y + height + 14) +
         "\" font-size=\"11\" text-anchor=\"middle\" font-family=\"sans-serif\">" + range_label(lo) + "</text>\n";
    s += "<text class=\"range-hi\" x=\"" + fmt("%.3f", x + width) + "\" y=\"" + fmt("%.3f", y + height + 14) +
         "\" font-size=\"11\" text-anchor=\"middle\" font-family=\"sans-serif\">" + range_label(hi) + "</text>\n";
    return s;
}

inline std::string header(double w, double h, const std::string& digest)
{
    std::string s = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    if (!digest.empty()) s += "<!-- config-digest: " + escape(digest) + " -->\n";
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt("%.0f", w) + "\" height=\"" + fmt("%.0f", h) +
         "\" viewBox=\"0 0 " + fmt("%.0f", w) + " " + fmt("%.0f", h) + "\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    return s;
}

} // namespace detail

/// Single topography with its own color bar.
inline std::string render(const TopoPlot& plot)
{
    plot.validate();
    std::string s = detail::header(300, 360, plot.config_digest);
    if (!plot.title.empty())
        s += "<text x=\"150\" y=\"20\" font-size=\"14\" text-anchor=\"middle\" font-family=\"sans-serif\">" +
             detail::escape(plot.title) + "</text>\n";
    s += detail::head_group(plot, 150, 170, 120);
    s += detail::colorbar(50, 315, 200, 12, plot.lo, plot.hi);
    s += "</svg>\n";
    return s;
}

/// Left- and right-class panels sharing one color bar, with a caption.
inline std::string side_by_side(const TopoPlot& left, const TopoPlot& right, const std::string& caption)
{
    left.validate();
    right.validate();
    if (left.lo != right.lo || left.hi != right.hi) throw InputError("side_by_side: plots use different color ranges");
    std::string s = detail::header(600, 390, left.config_digest);
    s += "<text class=\"caption\" x=\"300\" y=\"22\" font-size=\"15\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\">" +
         detail::escape(caption) + "</text>\n";
    const std::array<const TopoPlot*, 2> panels = {&left, &right};
    for (std::size_t k = 0; k < 2; ++k) {
        const double cx = 150.0 + 300.0 * static_cast<double>(k);
        const std::string& t = panels[k]->title.empty() ? std::string(k == 0 ? "left" : "right") : panels[k]->title;
        s += "<text x=\"" + detail::fmt("%.0f", cx) +
             "\" y=\"48\" font-size=\"13\" text-anchor=\"middle\" font-family=\"sans-serif\">" + detail::escape(t) +
             "</text>\n";
        s += detail::head_group(*panels[k], cx, 190, 120);
    }
    s += detail::colorbar(200, 345, 200, 12, left.lo, left.hi);
    s += "</svg>\n";
    return s;
}

} // namespace milrp::topo
