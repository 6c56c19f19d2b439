#include "milrp/lrp.hpp"
#include "support/generators.hpp"
#include "support/lrp_oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace milrp;
using namespace milrp::lrp;
namespace mt = milrp::testing;

namespace {

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }
double sum(const Tensor3& t) { return sum(t.values()); }

Tensor3 relu_random(Rng& rng, Shape3 s)
{
    auto t = mt::random_tensor(rng, s);
    for (double& v : t.values()) v = std::max(v, 0.0);
    return t;
}

RelevanceMap map_with(double fill)
{
    RelevanceMap m;
    for (double& v : m.planes.values()) v = fill;
    derive_views(m, featmap::default_grid());
    return m;
}

} // namespace

TEST(LrpRule, Validation)
{
    EXPECT_NO_THROW(LrpRule::eps().validate());
    EXPECT_NO_THROW(LrpRule::alpha_beta(2, 1).validate());
    EXPECT_THROW(LrpRule::eps(0).validate(), InputError);
    EXPECT_THROW(LrpRule::alpha_beta(1, 1).validate(), InputError);
    EXPECT_EQ(to_string(LrpRule::eps(1e-6)), "epsilon(1e-06)");
}

TEST(LrpDense, HandExample)
{
    autonet::DenseLayer l(2, 1);
    l.w(0, 0) = 3;
    l.w(1, 0) = 4;
    const std::vector<double> x{1, 2}, start{11};
    const auto r = lrp_dense(x, l, start, LrpRule::eps(1e-12));
    EXPECT_NEAR(r.relevance[0], 3.0, 1e-10);
    EXPECT_NEAR(r.relevance[1], 8.0, 1e-10);
    EXPECT_NEAR(r.leak, 11.0 * 1e-12 / 11.0, 1e-20);
}

TEST(LrpDense, ZeroActivations)
{
    Rng rng(1);
    autonet::DenseLayer l(32, 2);
    for (double& w : l.weights) w = rng.normal();
    const std::vector<double> x(32, 0.0), start{1.5, -0.5};
    for (const auto& rule : {LrpRule::eps(), LrpRule::alpha_beta()}) {
        const auto r = lrp_dense(x, l, start, rule);
        for (double v : r.relevance) {
            EXPECT_TRUE(std::isfinite(v));
            EXPECT_EQ(v, 0.0);
        }
    }
}

TEST(LrpDense, ConservedWithoutBias)
{
    Rng rng(2);
    for (int rep = 0; rep < 20; ++rep) {
        autonet::DenseLayer l(32, 2);
        for (double& w : l.weights) w = rng.normal();
        const auto x = relu_random(rng, {1, 1, 32}).values();
        const auto z = autonet::dense_forward(x, l);
        const auto r = lrp_dense(x, l, z, LrpRule::eps(1e-12));
        EXPECT_NEAR(sum(r.relevance), z[0] + z[1], 1e-9 * (std::abs(z[0]) + std::abs(z[1])));
    }
}

TEST(LrpDense, LeakAccountsForBias)
{
    Rng rng(3);
    autonet::DenseLayer l(8, 2);
    for (double& w : l.weights) w = rng.normal();
    l.bias = {0.7, -0.4};
    const auto x = relu_random(rng, {1, 1, 8}).values();
    const std::vector<double> start{1.0, 2.0};
    const auto r = lrp_dense(x, l, start, LrpRule::eps(1e-9));
    EXPECT_LE(std::abs(sum(r.relevance) - 3.0), r.leak * (1 + 1e-12));
    EXPECT_THROW(lrp_dense(std::vector<double>(7), l, start, LrpRule::eps()), InputError);
}

TEST(LrpDense, AlphaBetaSplitsBySign)
{
    autonet::DenseLayer l(2, 1);
    l.w(0, 0) = 2;
    l.w(1, 0) = -1;
    const std::vector<double> x{1, 1}, start{1};
    // z+ = 2, z- = -1; alpha 2 beta 1: R0 = 2 * 2/2, R1 = -1 * (-1)/(-1)
    const auto r = lrp_dense(x, l, start, LrpRule::alpha_beta(2, 1));
    EXPECT_DOUBLE_EQ(r.relevance[0], 2.0);
    EXPECT_DOUBLE_EQ(r.relevance[1], -1.0);
    EXPECT_NEAR(r.leak, 0.0, 1e-15);
}

TEST(LrpConv, IdentityKernel)
{
    autonet::ConvLayer l(1, 1, 1, 1);
    l.weights = {1.0};
    const auto r = lrp_conv(Tensor3({1, 1, 1}, 5.0), l, Tensor3({1, 1, 1}, 0.25), LrpRule::eps(1e-12));
    EXPECT_NEAR(r.relevance[0], 0.25, 1e-13);
}

TEST(LrpConv, ConservedWithoutBias)
{
    Rng rng(4);
    for (int rep = 0; rep < 10; ++rep) {
        const auto l = mt::random_conv(rng, 2, 2, 12, 32, false);
        const auto a = relu_random(rng, {6, 7, 12});
        // Upstream relevance proportional to the positive part of z keeps
        // every z_k away from zero.
        const auto z = autonet::conv2d_valid_forward(a, l);
        const auto up = autonet::relu_forward(z);
        const auto r = lrp_conv(a, l, up, LrpRule::eps(1e-12));
        EXPECT_NEAR(sum(r.relevance), sum(up), 1e-9 * sum(up));
    }
    const auto l = mt::random_conv(rng, 2, 2, 12, 32, false);
    EXPECT_THROW(lrp_conv(Tensor3({6, 7, 12}), l, Tensor3({5, 5, 32}), LrpRule::eps()), InputError);
}

TEST(LrpConv, MatchesUnrolledDense)
{
    Rng rng(5);
    struct Geometry {
        std::size_t kh, kw, in, out, rows, cols;
    };
    const std::vector<Geometry> shapes = {{2, 2, 12, 32, 6, 7}, {2, 2, 32, 32, 5, 6}, {3, 4, 32, 32, 3, 4}, {2, 3, 3, 5, 4, 5}};
    for (const auto& g : shapes)
        for (const auto& rule : {LrpRule::eps(1e-6), LrpRule::alpha_beta(1, 0), LrpRule::alpha_beta(2, 1)}) {
            const auto l = mt::random_conv(rng, g.kh, g.kw, g.in, g.out, true);
            const Shape3 in{g.rows, g.cols, g.in};
            const auto a = relu_random(rng, in);
            const auto up = mt::random_tensor(rng, l.output_shape(in));
            const auto conv = lrp_conv(a, l, up, rule);
            const auto dense = lrp_dense(a.values(), mt::unroll(l, in), up.values(), rule);
            for (std::size_t i = 0; i < a.size(); ++i)
                EXPECT_NEAR(conv.relevance[i], dense.relevance[i], 1e-10 * std::max(1.0, std::abs(dense.relevance[i])));
            EXPECT_NEAR(conv.leak, dense.leak, 1e-10 * std::max(1.0, dense.leak));
        }
}

TEST(Explain, ShapeTraceIsForwardChainReversed)
{
    Rng rng(6);
    const auto m = autonet::make_model(1);
    const auto e = explain(m, mt::random_tensor(rng, {6, 7, 12}), Label::left, LrpRule::eps());
    const std::vector<Shape3> expected = {{1, 1, 2}, {1, 1, 32}, {3, 4, 32}, {4, 5, 32}, {5, 6, 32}, {6, 7, 12}};
    EXPECT_EQ(e.shape_trace, expected);
}

TEST(Explain, ZeroConvWeightsGiveZeroRelevance)
{
    autonet::CnnModel m;
    m.dense.bias = {0.4, -0.1};
    Rng rng(7);
    const auto e = explain(m, mt::random_tensor(rng, {6, 7, 12}), Label::left, LrpRule::eps());
    EXPECT_DOUBLE_EQ(e.source.logit, 0.4);
    for (double v : e.planes.values()) EXPECT_EQ(v, 0.0);
}

TEST(Explain, ConservesLogitWithoutBiases)
{
    Rng rng(8);
    for (int rep = 0; rep < 10; ++rep) {
        const auto m = mt::random_model(rng, mt::BiasMode::zero);
        const auto x = mt::random_tensor(rng, {6, 7, 12});
        for (Label target : kLabels) {
            const auto e = explain(m, x, target, LrpRule::eps(1e-9));
            EXPECT_NEAR(e.total(), e.source.logit, 1e-6 * std::abs(e.source.logit));
        }
    }
}

TEST(Explain, LeakBoundHoldsWithBiases)
{
    Rng rng(9);
    for (int rep = 0; rep < 10; ++rep) {
        const auto m = mt::random_model(rng, mt::BiasMode::random);
        const auto x = mt::random_tensor(rng, {6, 7, 12});
        for (const auto& rule : {LrpRule::eps(1e-6), LrpRule::alpha_beta()}) {
            const auto e = explain(m, x, Label::right, rule);
            EXPECT_LE(std::abs(e.total() - e.source.logit), e.leak_bound * (1 + 1e-9) + 1e-12);
        }
    }
}

TEST(Explain, UnplacedZeroCellsCarryNoRelevance)
{
    Rng rng(10);
    const auto m = mt::random_model(rng, mt::BiasMode::random);
    Tensor3 x({6, 7, 12});
    const auto& grid = featmap::default_grid();
    for (const auto& [name, cell] : grid.placements())
        for (std::size_t k = 0; k < 12; ++k) x(cell.row, cell.col, k) = rng.normal();
    const auto e = explain(m, x, Label::left, LrpRule::eps());
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t c = 0; c < 7; ++c)
            if (!grid.channel_at({r, c})) {
                for (std::size_t k = 0; k < 12; ++k) EXPECT_EQ(e.planes(r, c, k), 0.0);
            }
}

TEST(Propagate, StartScalesThrough)
{
    Rng rng(11);
    const auto m = mt::random_model(rng, mt::BiasMode::random);
    const auto rec = autonet::forward(m, mt::random_tensor(rng, {6, 7, 12}));
    const std::array<double, 2> start{rec.logits[0], 0.0};
    const auto base = propagate(m, rec, start, LrpRule::eps());
    for (double s : {0.5, 2.0, 8.0}) {
        const std::array<double, 2> scaled{s * start[0], 0.0};
        const auto p = propagate(m, rec, scaled, LrpRule::eps());
        for (std::size_t i = 0; i < p.input_relevance.size(); ++i)
            EXPECT_EQ(p.input_relevance[i], s * base.input_relevance[i]);
    }
    const std::array<double, 2> odd{3.7 * start[0], 0.0};
    const auto p = propagate(m, rec, odd, LrpRule::eps());
    for (std::size_t i = 0; i < p.input_relevance.size(); ++i)
        EXPECT_NEAR(p.input_relevance[i], 3.7 * base.input_relevance[i], 1e-12 * std::abs(3.7 * base.input_relevance[i]) + 1e-300);
}

TEST(RelevanceMap, ViewsFollowPlanes)
{
    Rng rng(12);
    RelevanceMap m;
    m.planes = mt::random_tensor(rng, {6, 7, 12});
    derive_views(m, featmap::default_grid());
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t c = 0; c < 7; ++c) {
            double s = 0.0;
            for (std::size_t k = 0; k < 12; ++k) s += m.planes(r, c, k);
            EXPECT_NEAR(m.plane_avg(r, c), s / 12.0, 1e-15);
        }
    ASSERT_EQ(m.per_channel.size(), 22u);
    EXPECT_EQ(m.channel("Cz"), m.plane_avg(2, 3));
    EXPECT_EQ(m.channel("POz"), m.plane_avg(5, 3));
    EXPECT_THROW(m.channel("T7"), InputError);
}

TEST(Aggregate, MeanOfOneIsItself)
{
    const auto a = map_with(0.25), b = map_with(-0.5);
    const auto agg = aggregate({a, b}, {Label::left, Label::right}, {Label::left, Label::right});
    ASSERT_TRUE(agg[0].mean && agg[1].mean);
    EXPECT_EQ(agg[0].count, 1u);
    EXPECT_EQ(agg[0].mean->planes, a.planes);
    EXPECT_EQ(agg[1].mean->planes, b.planes);
}

TEST(Aggregate, OppositeMapsCancel)
{
    Rng rng(13);
    RelevanceMap m;
    m.planes = mt::random_tensor(rng, {6, 7, 12});
    RelevanceMap neg = m;
    for (double& v : neg.planes.values()) v = -v;
    const auto agg = aggregate({m, neg}, {Label::right, Label::right}, {Label::right, Label::right});
    ASSERT_TRUE(agg[1].mean);
    for (double v : agg[1].mean->planes.values()) EXPECT_EQ(v, 0.0);
    EXPECT_FALSE(agg[0].mean.has_value());
    EXPECT_EQ(agg[0].count, 0u);
}

TEST(Aggregate, MisclassifiedTrialsIgnored)
{
    const std::vector<Label> labels{Label::left, Label::left, Label::right};
    const std::vector<Label> preds{Label::left, Label::right, Label::right};
    auto maps = std::vector<RelevanceMap>{map_with(1), map_with(2), map_with(3)};
    const auto before = aggregate(maps, preds, labels);
    maps[1] = map_with(100);
    const auto after = aggregate(maps, preds, labels);
    EXPECT_EQ(before[0].mean->planes, after[0].mean->planes);
    EXPECT_EQ(before[1].mean->planes, after[1].mean->planes);
    EXPECT_THROW(aggregate(maps, preds, {Label::left}), InputError);
}

TEST(RelevanceTable, RoundTripsAtFullPrecision)
{
    Rng rng(14);
    std::vector<RelevanceMap> maps;
    for (int i = 0; i < 3; ++i) {
        RelevanceMap m;
        m.planes = mt::random_tensor(rng, {6, 7, 12}, 1e-3);
        m.source = {"A01E-00" + std::to_string(i), i == 1 ? Label::right : Label::left, 0.0};
        derive_views(m, featmap::default_grid());
        maps.push_back(std::move(m));
    }
    const auto text = format_relevance_table(maps, "config-digest: 0123");
    EXPECT_EQ(text.rfind("# config-digest: 0123\ntrial_id\tclass\tchannel\trelevance\n", 0), 0u);
    const auto rows = parse_relevance_table(text);
    ASSERT_EQ(rows.size(), 66u);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& m = maps[i / 22];
        EXPECT_EQ(rows[i].trial_id, m.source.trial_id);
        EXPECT_EQ(rows[i].label, m.source.explained);
        EXPECT_EQ(rows[i].channel, m.per_channel[i % 22].first);
        EXPECT_EQ(rows[i].value, m.per_channel[i % 22].second);
    }
}

TEST(RelevanceTable, ErrorsCarryLocation)
{
    const std::string bad = "trial_id\tclass\tchannel\trelevance\nt1\tleft\tCz\t0.5\nt1\tfoot\tC3\t0.1\n";
    try {
        parse_relevance_table(bad, "rel.tsv");
        FAIL();
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("rel.tsv:3"), std::string::npos);
    }
    EXPECT_THROW(parse_relevance_table("t1\tleft\tCz\t0.5\n"), InputError);
    EXPECT_THROW(parse_relevance_table("trial_id\tclass\tchannel\trelevance\nt\tleft\tCz\tabc\n"), InputError);
}
