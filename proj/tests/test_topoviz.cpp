#include "milrp/random.hpp"
#include "milrp/topoviz.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <regex>

using namespace milrp;
using namespace milrp::topo;

namespace {

std::vector<std::pair<std::string, double>> scores_for_all(double v)
{
    std::vector<std::pair<std::string, double>> s;
    for (const auto& n : featmap::default_channel_names()) s.emplace_back(n, v);
    return s;
}

std::size_t count(const std::string& hay, const std::string& needle)
{
    std::size_t n = 0;
    for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
    return n;
}

const Rgb kBlue{33, 102, 172}, kWhite{255, 255, 255}, kRed{178, 24, 43};

} // namespace

TEST(CellPosition, CentersAndMirror)
{
    const auto cz = cell_position({2, 3});
    EXPECT_EQ(cz.x, 0.0);
    EXPECT_DOUBLE_EQ(cz.y, 0.8 - 1.6 * 2 / 5);
    const auto& g = featmap::default_grid();
    const auto c3 = cell_position(g.at("C3")), c4 = cell_position(g.at("C4"));
    EXPECT_EQ(c3.x, -c4.x);
    EXPECT_LT(c3.x, 0.0);
    EXPECT_EQ(c3.y, c4.y);
    EXPECT_DOUBLE_EQ(cell_position({0, 0}).y, 0.8);
    EXPECT_DOUBLE_EQ(cell_position({5, 6}).x, 0.8);
}

TEST(Interpolate, ExactAtSitesAndBounded)
{
    Rng rng(1);
    auto s = scores_for_all(0.0);
    for (auto& [_, v] : s) v = rng.uniform(-1, 1);
    const auto plot = make_plot(s);
    double lo = 1e9, hi = -1e9;
    for (const auto& c : plot.channels) {
        EXPECT_EQ(interpolate(plot, c.position), c.score);
        lo = std::min(lo, c.score);
        hi = std::max(hi, c.score);
    }
    for (int k = 0; k < 500; ++k) {
        const double v = interpolate(plot, {rng.uniform(-1, 1), rng.uniform(-1, 1)});
        EXPECT_GE(v, lo);
        EXPECT_LE(v, hi);
    }
}

TEST(Interpolate, ZeroScoresRenderWhite)
{
    const auto plot = make_plot(scores_for_all(0.0));
    for (const auto& rc : rasterize(plot)) EXPECT_EQ(rc.value, 0.0);
    const auto svg = render(plot);
    const auto cells = rasterize(plot).size();
    // The colorbar samples bin centers, so only raster cells are pure white.
    EXPECT_EQ(count(svg, "fill=\"#ffffff\""), cells);
}

TEST(Interpolate, OpposedSitesGiveColorExtremesAndZeroCrossing)
{
    const auto plot = make_plot({{"C3", 0.1}, {"C4", -0.1}});
    const auto& g = featmap::default_grid();
    const auto c3 = cell_position(g.at("C3")), c4 = cell_position(g.at("C4"));
    EXPECT_EQ(color_at(color_position(interpolate(plot, c3), plot.lo, plot.hi)), kRed);
    EXPECT_EQ(color_at(color_position(interpolate(plot, c4), plot.lo, plot.hi)), kBlue);

    // Along the segment the value changes sign exactly once, at the midline.
    int sign_changes = 0;
    double prev = interpolate(plot, c3);
    for (int k = 1; k <= 100; ++k) {
        const double u = k / 100.0;
        const double v = interpolate(plot, {c3.x + u * (c4.x - c3.x), c3.y});
        if ((v > 0) != (prev > 0)) ++sign_changes;
        prev = v;
    }
    EXPECT_EQ(sign_changes, 1);
    EXPECT_EQ(interpolate(plot, {0.0, c3.y}), 0.0);
}

TEST(Raster, CoversTheHeadDisc)
{
    const auto cells = rasterize(make_plot(scores_for_all(1.0)));
    const double disc = std::numbers::pi * (kRaster / 2.0) * (kRaster / 2.0);
    EXPECT_NEAR(static_cast<double>(cells.size()), disc, 0.02 * disc);
    for (const auto& rc : cells) {
        const double x = -1.0 + (rc.i + 0.5) * 2.0 / kRaster, y = 1.0 - (rc.j + 0.5) * 2.0 / kRaster;
        EXPECT_LE(x * x + y * y, 1.0);
    }
}

TEST(ColorScale, EndpointsAndClamping)
{
    EXPECT_EQ(color_at(0.0), kBlue);
    EXPECT_EQ(color_at(0.5), kWhite);
    EXPECT_EQ(color_at(1.0), kRed);
    EXPECT_EQ(color_position(-5.0, -0.1, 0.1), 0.0);
    EXPECT_EQ(color_position(5.0, -0.1, 0.1), 1.0);
    EXPECT_DOUBLE_EQ(color_position(0.0, -0.1, 0.1), 0.5);
    EXPECT_EQ(hex_color(kRed), "#b2182b");
}

TEST(ColorScale, MonotoneTowardsEachEnd)
{
    // Below the midpoint every channel moves towards white; above it, away.
    Rgb prev = color_at(0.0);
    for (int k = 1; k <= 100; ++k) {
        const Rgb c = color_at(k / 100.0);
        if (k <= 50) {
            EXPECT_GE(c.r, prev.r);
            EXPECT_GE(c.g, prev.g);
            EXPECT_GE(c.b, prev.b);
        } else {
            EXPECT_LE(c.r, prev.r);
            EXPECT_LE(c.g, prev.g);
            EXPECT_LE(c.b, prev.b);
        }
        prev = c;
    }
}

TEST(Render, DeterministicAndCarriesDigest)
{
    Rng rng(2);
    auto s = scores_for_all(0.0);
    for (auto& [_, v] : s) v = rng.uniform(-0.2, 0.2);
    auto plot = make_plot(s);
    plot.config_digest = "00ff";
    plot.title = "A01 <left>";
    const auto a = render(plot), b = render(plot);
    EXPECT_EQ(a, b);
    EXPECT_NE(a.find("<!-- config-digest: 00ff -->"), std::string::npos);
    EXPECT_NE(a.find("A01 &lt;left&gt;"), std::string::npos);
    EXPECT_EQ(count(a, "<text x="), 22u + 1u);
    EXPECT_EQ(a.rfind("</svg>\n"), a.size() - 7);
}

TEST(Render, Validation)
{
    EXPECT_THROW(render(TopoPlot{}), InputError);
    EXPECT_THROW(render(make_plot({{"Cz", 0.0}}, featmap::default_grid(), 0.1, 0.1)), InputError);
    EXPECT_THROW(render(make_plot({{"Cz", std::nan("")}})), InputError);
    EXPECT_THROW(make_plot({{"Oz", 0.0}}), InputError);
}

TEST(SideBySide, CaptionLabelsAndRange)
{
    auto l = make_plot({{"C3", 0.05}, {"C4", -0.05}});
    auto r = make_plot({{"C3", -0.05}, {"C4", 0.05}});
    const auto svg = side_by_side(l, r, "Grand average: left vs right & more");
    EXPECT_NE(svg.find("class=\"caption\""), std::string::npos);
    EXPECT_NE(svg.find("left vs right &amp; more"), std::string::npos);
    EXPECT_TRUE(std::regex_search(svg, std::regex("class=\"range-lo\"[^>]*>-0\\.1<")));
    EXPECT_TRUE(std::regex_search(svg, std::regex("class=\"range-hi\"[^>]*>0\\.1<")));
    EXPECT_NE(svg.find(">left</text>"), std::string::npos);
    EXPECT_NE(svg.find(">right</text>"), std::string::npos);
    EXPECT_EQ(count(svg, "class=\"range-lo\""), 1u);

    r.hi = 0.2;
    EXPECT_THROW(side_by_side(l, r, "x"), InputError);
}
