// Layer-wise relevance propagation through the CnnModel chain, class-wise
// aggregation and the tabular relevance export.
#pragma once

#include "milrp/autonet.hpp"
#include "milrp/core.hpp"
#include "milrp/featmap.hpp"
#include "milrp/linalg.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace milrp::lrp {

enum class RuleKind { epsilon, alpha_beta };

struct LrpRule {
    RuleKind kind = RuleKind::epsilon;
    double epsilon = 1e-6;
    double alpha = 1.0;
    double beta = 0.0;

    static LrpRule eps(double e = 1e-6) { return {RuleKind::epsilon, e, 1.0, 0.0}; }
    static LrpRule alpha_beta(double a = 1.0, double b = 0.0) { return {RuleKind::alpha_beta, 1e-6, a, b}; }

    void validate() const
    {
        if (kind == RuleKind::epsilon && !(epsilon > 0.0)) throw InputError("epsilon rule needs epsilon > 0");
        if (kind == RuleKind::alpha_beta && std::abs(alpha - beta - 1.0) > 1e-12)
            throw InputError("alpha-beta rule needs alpha - beta = 1");
    }
};

inline std::string to_string(const LrpRule& r)
{
    std::ostringstream os;
    if (r.kind == RuleKind::epsilon)
        os << "epsilon(" << r.epsilon << ")";
    else
        os << "alpha_beta(" << r.alpha << "," << r.beta << ")";
    return os.str();
}

namespace detail {

// Per-unit redistribution coefficients. For the epsilon rule every input
// share is z_jk * scale; `lost` is the part of R_k that stays with the bias
// and the stabilizer.
struct EpsilonUnit {
    double scale = 0.0;
    double lost = 0.0;
};

inline EpsilonUnit epsilon_unit(double z_inputs, double bias, double relevance, double eps)
{
    const double z = z_inputs + bias;
    const double stab = z >= 0.0 ? eps : -eps;
    const double denom = z + stab;
    return {relevance / denom, relevance * (bias + stab) / denom};
}

struct AlphaBetaUnit {
    double pos_scale = 0.0;  // multiplies positive contributions
    double neg_scale = 0.0;  // multiplies negative contributions
    double lost = 0.0;
};

inline AlphaBetaUnit alpha_beta_unit(double zp_inputs, double zn_inputs, double bias, double relevance,
                                     const LrpRule& rule)
{
    const double zp = zp_inputs + std::max(bias, 0.0);
    const double zn = zn_inputs + std::min(bias, 0.0);
    AlphaBetaUnit u;
    double kept = 0.0;
    if (zp > 0.0) {
        u.pos_scale = rule.alpha * relevance / zp;
        kept += rule.alpha * zp_inputs / zp;
    }
    if (zn < 0.0) {
        u.neg_scale = -rule.beta * relevance / zn;
        kept -= rule.beta * zn_inputs / zn;
    }
    u.lost = relevance * (1.0 - kept);
    return u;
}

} // namespace detail

struct DenseRelevance {
    std::vector<double> relevance;
    double leak = 0.0;  // sum over units of |relevance kept by bias/stabilizer|
};

/// Redistributes output relevance of a dense layer onto its inputs.
inline DenseRelevance lrp_dense(std::span<const double> activations, const autonet::DenseLayer& layer,
                                std::span<const double> upstream, const LrpRule& rule)
{
    rule.validate();
    if (activations.size() != layer.in || upstream.size() != layer.out)
        throw InputError("lrp_dense: expected " + std::to_string(layer.in) + " activations and " +
                         std::to_string(layer.out) + " relevances, got " + std::to_string(activations.size()) +
                         " and " + std::to_string(upstream.size()));
    DenseRelevance out{std::vector<double>(layer.in, 0.0), 0.0};
    for (std::size_t k = 0; k < layer.out; ++k) {
        if (rule.kind == RuleKind::epsilon) {
            double z = 0.0;
            for (std::size_t j = 0; j < layer.in; ++j) z += activations[j] * layer.w(j, k);
            const auto u = detail::epsilon_unit(z, layer.bias[k], upstream[k], rule.epsilon);
            for (std::size_t j = 0; j < layer.in; ++j) out.relevance[j] += activations[j] * layer.w(j, k) * u.scale;
            out.leak += std::abs(u.lost);
        } else {
            double zp = 0.0, zn = 0.0;
            for (std::size_t j = 0; j < layer.in; ++j) {
                const double zjk = activations[j] * layer.w(j, k);
                (zjk > 0.0 ? zp : zn) += zjk;
            }
            const auto u = detail::alpha_beta_unit(zp, zn, layer.bias[k], upstream[k], rule);
            for (std::size_t j = 0; j < layer.in; ++j) {
                const double zjk = activations[j] * layer.w(j, k);
                out.relevance[j] += zjk > 0.0 ? zjk * u.pos_scale : zjk * u.neg_scale;
            }
            out.leak += std::abs(u.lost);
        }
    }
    return out;
}

struct ConvRelevance {
    Tensor3 relevance;
    double leak = 0.0;
};

/// Same redistribution over every convolution window; shares from
/// overlapping windows add up at the shared input.
inline ConvRelevance lrp_conv(const Tensor3& activations, const autonet::ConvLayer& layer, const Tensor3& upstream,
                              const LrpRule& rule)
{
    rule.validate();
    const Shape3 os = layer.output_shape(activations.shape());
    if (upstream.shape() != os)
        throw InputError("lrp_conv: upstream relevance " + to_string(upstream.shape()) + " does not match layer output " +
                         to_string(os));
    ConvRelevance out{Tensor3(activations.shape()), 0.0};
    const std::size_t P = layer.in_planes, O = layer.out_planes;
    std::vector<double> zp(O), zn(O), pos_scale(O), neg_scale(O);

    for (std::size_t r = 0; r < os.rows; ++r) {
        for (std::size_t c = 0; c < os.cols; ++c) {
            std::fill(zp.begin(), zp.end(), 0.0);
            std::fill(zn.begin(), zn.end(), 0.0);
            for (std::size_t i = 0; i < layer.kh; ++i)
                for (std::size_t j = 0; j < layer.kw; ++j)
                    for (std::size_t p = 0; p < P; ++p) {
                        const double a = activations(r + i, c + j, p);
                        for (std::size_t o = 0; o < O; ++o) {
                            const double z = a * layer.w(i, j, p, o);
                            if (rule.kind == RuleKind::epsilon)
                                zp[o] += z;
                            else
                                (z > 0.0 ? zp[o] : zn[o]) += z;
                        }
                    }
            for (std::size_t o = 0; o < O; ++o) {
                if (rule.kind == RuleKind::epsilon) {
                    const auto u = detail::epsilon_unit(zp[o], layer.bias[o], upstream(r, c, o), rule.epsilon);
                    pos_scale[o] = neg_scale[o] = u.scale;
                    out.leak += std::abs(u.lost);
                } else {
                    const auto u = detail::alpha_beta_unit(zp[o], zn[o], layer.bias[o], upstream(r, c, o), rule);
                    pos_scale[o] = u.pos_scale;
                    neg_scale[o] = u.neg_scale;
                    out.leak += std::abs(u.lost);
                }
            }
            for (std::size_t i = 0; i < layer.kh; ++i)
                for (std::size_t j = 0; j < layer.kw; ++j)
                    for (std::size_t p = 0; p < P; ++p) {
                        const double a = activations(r + i, c + j, p);
                        double acc = 0.0;
                        for (std::size_t o = 0; o < O; ++o) {
                            const double z = a * layer.w(i, j, p, o);
                            acc += z * (z > 0.0 ? pos_scale[o] : neg_scale[o]);
                        }
                        out.relevance(r + i, c + j, p) += acc;
                    }
        }
    }
    return out;
}

struct Propagation {
    Tensor3 input_relevance;
    std::vector<Shape3> shape_trace;  // output (1x1x2) back to input (6x7x12)
    std::array<double, 5> layer_leak{};  // dense, conv4, conv3, conv2, conv1
    double leak_bound = 0.0;             // sum of layer_leak

    double total() const
    {
        double s = 0.0;
        for (double v : input_relevance.values()) s += v;
        return s;
    }
};

/// Propagates a given output relevance vector back to the input. ReLU units
/// pass relevance unchanged; their post-activation values are the a_j of
/// the next layer.
inline Propagation propagate(const autonet::CnnModel& model, const autonet::ForwardRecord& rec,
                             std::span<const double> start, const LrpRule& rule)
{
    if (start.size() != autonet::kClasses) throw InputError("start relevance must have 2 entries");
    Propagation out;
    out.shape_trace.push_back({1, 1, autonet::kClasses});
    auto dr = lrp_dense(rec.dense_input(), model.dense, start, rule);
    out.layer_leak[0] = dr.leak;
    Tensor3 r(autonet::kShapeChain[4]);
    r.values() = std::move(dr.relevance);
    out.shape_trace.push_back(r.shape());
    for (std::size_t l = 4; l-- > 0;) {
        const Tensor3& a = l == 0 ? rec.input : rec.post[l - 1];
        auto cr = lrp_conv(a, model.conv[l], r, rule);
        out.layer_leak[4 - l] = cr.leak;
        r = std::move(cr.relevance);
        out.shape_trace.push_back(r.shape());
    }
    out.input_relevance = std::move(r);
    for (double v : out.layer_leak) out.leak_bound += v;
    return out;
}

struct RelevanceSource {
    std::string trial_id;
    Label explained = Label::left;
    double logit = 0.0;
};

struct RelevanceMap {
    Tensor3 planes{featmap::kTensorShape};
    Matrix plane_avg{featmap::kGridRows, featmap::kGridCols};
    std::vector<std::pair<std::string, double>> per_channel;  // grid placement order
    RelevanceSource source;
    std::vector<Shape3> shape_trace;
    double leak_bound = 0.0;

    double total() const
    {
        double s = 0.0;
        for (double v : planes.values()) s += v;
        return s;
    }
    double channel(const std::string& name) const
    {
        for (const auto& [n, v] : per_channel)
            if (n == name) return v;
        throw InputError("channel " + name + " has no relevance score");
    }
};

/// Fills plane_avg and per_channel from planes.
inline void derive_views(RelevanceMap& m, const featmap::ChannelGrid& grid)
{
    const auto& s = m.planes.shape();
    m.plane_avg = Matrix(s.rows, s.cols);
    for (std::size_t r = 0; r < s.rows; ++r)
        for (std::size_t c = 0; c < s.cols; ++c) {
            double sum = 0.0;
            for (std::size_t k = 0; k < s.planes; ++k) sum += m.planes(r, c, k);
            m.plane_avg(r, c) = sum / static_cast<double>(s.planes);
        }
    m.per_channel.clear();
    for (const auto& [name, cell] : grid.placements()) m.per_channel.emplace_back(name, m.plane_avg(cell.row, cell.col));
}

/// Explains `target`: the start relevance is that class's raw logit, the
/// other output gets 0.
inline RelevanceMap explain(const autonet::CnnModel& model, const Tensor3& input, Label target, const LrpRule& rule,
                            const featmap::ChannelGrid& grid = featmap::default_grid(), std::string trial_id = {})
{
    if (index_of(target) >= autonet::kClasses) throw InputError("explain: unknown class");
    const auto rec = autonet::forward(model, input);
    std::array<double, 2> start{0.0, 0.0};
    start[index_of(target)] = rec.logits[index_of(target)];
    auto prop = propagate(model, rec, start, rule);

    RelevanceMap m;
    m.planes = std::move(prop.input_relevance);
    m.shape_trace = std::move(prop.shape_trace);
    m.leak_bound = prop.leak_bound;
    m.source = {std::move(trial_id), target, rec.logits[index_of(target)]};
    derive_views(m, grid);
    return m;
}

struct ClassAggregate {
    Label label = Label::left;
    std::size_t count = 0;
    std::optional<RelevanceMap> mean;  // absent when no trial of the class was classified correctly
};

/// Per-class elementwise mean over trials with prediction == label.
inline std::array<ClassAggregate, 2> aggregate(const std::vector<RelevanceMap>& maps,
                                               const std::vector<Label>& predictions, const std::vector<Label>& labels,
                                               const featmap::ChannelGrid& grid = featmap::default_grid())
{
    if (maps.size() != predictions.size() || maps.size() != labels.size())
        throw InputError("aggregate: maps, predictions and labels must align");
    std::array<ClassAggregate, 2> out;
    for (Label l : kLabels) {
        auto& agg = out[index_of(l)];
        agg.label = l;
        Tensor3 sum(featmap::kTensorShape);
        for (std::size_t t = 0; t < maps.size(); ++t) {
            if (labels[t] != l || predictions[t] != l) continue;
            if (maps[t].planes.shape() != sum.shape()) throw InputError("aggregate: relevance map shape mismatch");
            for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += maps[t].planes[i];
            ++agg.count;
        }
        if (agg.count == 0) continue;
        RelevanceMap m;
        for (std::size_t i = 0; i < sum.size(); ++i) m.planes[i] = sum[i] / static_cast<double>(agg.count);
        m.source = {"mean", l, 0.0};
        derive_views(m, grid);
        agg.mean = std::move(m);
    }
    return out;
}

// --- tabular export ------------------------------------------------------

struct RelevanceRow {
    std::string trial_id;
    Label label = Label::left;
    std::string channel;
    double value = 0.0;
};

inline std::string format_g17(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Tab-separated: trial_id, class, channel, relevance (17 significant digits).
/// Lines starting with '#' are comments.
inline std::string format_relevance_table(const std::vector<RelevanceMap>& maps, std::string_view comment = {})
{
    std::string out;
    if (!comment.empty()) out += "# " + std::string(comment) + "\n";
    out += "trial_id\tclass\tchannel\trelevance\n";
    for (const auto& m : maps)
        for (const auto& [ch, v] : m.per_channel)
            out += m.source.trial_id + "\t" + std::string(to_string(m.source.explained)) + "\t" + ch + "\t" +
                   format_g17(v) + "\n";
    return out;
}

inline std::vector<RelevanceRow> parse_relevance_table(std::string_view text, const std::string& origin = "<table>")
{
    std::vector<RelevanceRow> rows;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            if (line != "trial_id\tclass\tchannel\trelevance")
                throw InputError(origin + ":" + std::to_string(lineno) + ": missing relevance table header");
            header_seen = true;
            continue;
        }
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, '\t')) cells.push_back(cell);
        if (cells.size() != 4)
            throw InputError(origin + ":" + std::to_string(lineno) + ": expected 4 tab-separated fields");
        RelevanceRow row;
        row.trial_id = cells[0];
        try {
            row.label = parse_label(cells[1]);
        } catch (const InputError& e) {
            throw InputError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
        row.channel = cells[2];
        char* end = nullptr;
        row.value = std::strtod(cells[3].c_str(), &end);
        if (end == cells[3].c_str() || *end != '\0' || !std::isfinite(row.value))
            throw InputError(origin + ":" + std::to_string(lineno) + ": non-numeric relevance '" + cells[3] + "'");
        rows.push_back(std::move(row));
    }
    if (!header_seen) throw InputError(origin + ": empty relevance table");
    return rows;
}

} // namespace milrp::lrp
