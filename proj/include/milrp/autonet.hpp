// From-scratch convolutional classifier: layer primitives with exact
// backward passes, the fixed four-conv + dense architecture, Adam training,
// and the MICN model file format.
#pragma once

#include "milrp/binary_io.hpp"
#include "milrp/core.hpp"
#include "milrp/dsp.hpp"
#include "milrp/featmap.hpp"
#include "milrp/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace milrp::autonet {

struct ConvLayer {
    std::size_t kh = 0, kw = 0, in_planes = 0, out_planes = 0;
    std::vector<double> weights;  // [kh][kw][in][out]
    std::vector<double> bias;     // [out]

    ConvLayer() = default;
    ConvLayer(std::size_t kh_, std::size_t kw_, std::size_t in_, std::size_t out_)
        : kh(kh_), kw(kw_), in_planes(in_), out_planes(out_), weights(kh_ * kw_ * in_ * out_, 0.0), bias(out_, 0.0) {}

    double& w(std::size_t i, std::size_t j, std::size_t p, std::size_t o)
    {
        return weights[((i * kw + j) * in_planes + p) * out_planes + o];
    }
    double w(std::size_t i, std::size_t j, std::size_t p, std::size_t o) const
    {
        return weights[((i * kw + j) * in_planes + p) * out_planes + o];
    }

    Shape3 output_shape(const Shape3& in) const
    {
        if (in.rows < kh || in.cols < kw || in.planes != in_planes)
            throw InputError("conv layer " + std::to_string(kh) + "x" + std::to_string(kw) + "x" +
                             std::to_string(in_planes) + "->" + std::to_string(out_planes) + " cannot take input " +
                             to_string(in));
        return {in.rows - kh + 1, in.cols - kw + 1, out_planes};
    }

    friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

struct DenseLayer {
    std::size_t in = 0, out = 0;
    std::vector<double> weights;  // [in][out]
    std::vector<double> bias;     // [out]

    DenseLayer() = default;
    DenseLayer(std::size_t in_, std::size_t out_) : in(in_), out(out_), weights(in_ * out_, 0.0), bias(out_, 0.0) {}

    double& w(std::size_t j, std::size_t k) { return weights[j * out + k]; }
    double w(std::size_t j, std::size_t k) const { return weights[j * out + k]; }

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// --- layer primitives ------------------------------------------------------

/// VALID cross-correlation, stride 1, plus per-plane bias.
inline Tensor3 conv2d_valid_forward(const Tensor3& input, const ConvLayer& layer)
{
    const Shape3 os = layer.output_shape(input.shape());
    Tensor3 out(os);
    const std::size_t P = layer.in_planes, O = layer.out_planes;
    for (std::size_t r = 0; r < os.rows; ++r) {
        for (std::size_t c = 0; c < os.cols; ++c) {
            double* y = out.at(r, c);
            std::copy(layer.bias.begin(), layer.bias.end(), y);
            for (std::size_t i = 0; i < layer.kh; ++i) {
                for (std::size_t j = 0; j < layer.kw; ++j) {
                    const double* x = input.at(r + i, c + j);
                    const double* wij = &layer.weights[(i * layer.kw + j) * P * O];
                    for (std::size_t p = 0; p < P; ++p) {
                        const double xv = x[p];
                        const double* wp = wij + p * O;
                        for (std::size_t o = 0; o < O; ++o) y[o] += xv * wp[o];
                    }
                }
            }
        }
    }
    return out;
}

struct ConvGrads {
    Tensor3 input;
    std::vector<double> weights;
    std::vector<double> bias;
};

inline ConvGrads conv2d_valid_backward(const Tensor3& input, const ConvLayer& layer, const Tensor3& upstream)
{
    const Shape3 os = layer.output_shape(input.shape());
    if (upstream.shape() != os)
        throw InputError("conv backward: upstream gradient " + to_string(upstream.shape()) +
                         " does not match forward output " + to_string(os));
    ConvGrads g{Tensor3(input.shape()), std::vector<double>(layer.weights.size(), 0.0),
                std::vector<double>(layer.out_planes, 0.0)};
    const std::size_t P = layer.in_planes, O = layer.out_planes;
    for (std::size_t r = 0; r < os.rows; ++r) {
        for (std::size_t c = 0; c < os.cols; ++c) {
            const double* gy = upstream.at(r, c);
            for (std::size_t o = 0; o < O; ++o) g.bias[o] += gy[o];
            for (std::size_t i = 0; i < layer.kh; ++i) {
                for (std::size_t j = 0; j < layer.kw; ++j) {
                    const double* x = input.at(r + i, c + j);
                    double* gx = g.input.at(r + i, c + j);
                    const std::size_t base = (i * layer.kw + j) * P * O;
                    for (std::size_t p = 0; p < P; ++p) {
                        const double xv = x[p];
                        const double* wp = &layer.weights[base + p * O];
                        double* gwp = &g.weights[base + p * O];
                        double acc = 0.0;
                        for (std::size_t o = 0; o < O; ++o) {
                            gwp[o] += xv * gy[o];
                            acc += wp[o] * gy[o];
                        }
                        gx[p] += acc;
                    }
                }
            }
        }
    }
    return g;
}

inline Tensor3 relu_forward(Tensor3 x)
{
    for (double& v : x.values()) v = v > 0.0 ? v : 0.0;
    return x;
}

/// Passes upstream gradient only where the forward input was positive.
inline Tensor3 relu_backward(const Tensor3& forward_input, Tensor3 upstream)
{
    if (forward_input.shape() != upstream.shape()) throw InputError("relu backward: shape mismatch");
    for (std::size_t i = 0; i < upstream.size(); ++i)
        if (!(forward_input[i] > 0.0)) upstream[i] = 0.0;
    return upstream;
}

inline std::vector<double> dense_forward(std::span<const double> x, const DenseLayer& layer)
{
    if (x.size() != layer.in)
        throw InputError("dense layer expects " + std::to_string(layer.in) + " inputs, got " + std::to_string(x.size()));
    std::vector<double> y(layer.bias);
    for (std::size_t j = 0; j < layer.in; ++j)
        for (std::size_t k = 0; k < layer.out; ++k) y[k] += x[j] * layer.w(j, k);
    return y;
}

struct DenseGrads {
    std::vector<double> input;
    std::vector<double> weights;
    std::vector<double> bias;
};

inline DenseGrads dense_backward(std::span<const double> x, const DenseLayer& layer, std::span<const double> upstream)
{
    if (x.size() != layer.in || upstream.size() != layer.out) throw InputError("dense backward: shape mismatch");
    DenseGrads g{std::vector<double>(layer.in, 0.0), std::vector<double>(layer.weights.size(), 0.0),
                 std::vector<double>(upstream.begin(), upstream.end())};
    for (std::size_t j = 0; j < layer.in; ++j)
        for (std::size_t k = 0; k < layer.out; ++k) {
            g.weights[j * layer.out + k] = x[j] * upstream[k];
            g.input[j] += layer.w(j, k) * upstream[k];
        }
    return g;
}

struct LossAndGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

/// -log softmax(logits)[label], stabilized by max subtraction.
inline LossAndGrad softmax_cross_entropy(std::span<const double> logits, std::size_t label)
{
    if (label >= logits.size()) throw InputError("label index out of range");
    for (double z : logits)
        if (!std::isfinite(z)) throw InputError("softmax_cross_entropy: non-finite logit");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    std::vector<double> p(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) sum += (p[i] = std::exp(logits[i] - mx));
    LossAndGrad out;
    out.loss = std::log(sum) - (logits[label] - mx);
    out.grad.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out.grad[i] = p[i] / sum - (i == label ? 1.0 : 0.0);
    return out;
}

// --- Adam --------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t t = 0;

    AdamState() = default;
    AdamState(AdamConfig cfg, const std::vector<std::span<double>>& params) : config(cfg)
    {
        for (const auto& p : params) {
            m.emplace_back(p.size(), 0.0);
            v.emplace_back(p.size(), 0.0);
        }
    }
};

/// One bias-corrected Adam update over a list of parameter blocks.
inline void adam_step(AdamState& state, const std::vector<std::span<double>>& params,
                      const std::vector<std::span<const double>>& grads)
{
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw InputError("adam_step: parameter/gradient block count mismatch");
    state.t += 1;
    const auto& c = state.config;
    const double corr1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
    const double corr2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
    for (std::size_t b = 0; b < params.size(); ++b) {
        auto p = params[b];
        auto g = grads[b];
        auto& m = state.m[b];
        auto& v = state.v[b];
        if (p.size() != g.size() || p.size() != m.size()) throw InputError("adam_step: block size mismatch");
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            const double mhat = m[i] / corr1;
            const double vhat = v[i] / corr2;
            p[i] -= c.lr * mhat / (std::sqrt(vhat) + c.epsilon);
        }
    }
}

// --- the network -------------------------------------------------------------

inline constexpr std::size_t kFeatureMaps = 32;
inline constexpr std::size_t kClasses = 2;

/// Activation shapes after each conv layer, starting from the input.
inline constexpr std::array<Shape3, 5> kShapeChain = {{
    {6, 7, 12},
    {5, 6, 32},
    {4, 5, 32},
    {3, 4, 32},
    {1, 1, 32},
}};

struct ModelMetadata {
    std::vector<dsp::BandSpec> bands = dsp::default_bands();
    std::uint64_t grid_hash = featmap::default_grid().hash();
    std::uint64_t seed = 0;
    std::uint64_t config_digest = 0;

    friend bool operator==(const ModelMetadata&, const ModelMetadata&) = default;
};

struct CnnModel {
    std::array<ConvLayer, 4> conv = {ConvLayer(2, 2, 12, 32), ConvLayer(2, 2, 32, 32), ConvLayer(2, 2, 32, 32),
                                     ConvLayer(3, 4, 32, 32)};
    DenseLayer dense{kFeatureMaps, kClasses};
    ModelMetadata meta;

    /// Parameter blocks in serialization order: conv1 w, conv1 b, ... dense w, dense b.
    std::vector<std::span<double>> parameter_blocks()
    {
        std::vector<std::span<double>> blocks;
        for (auto& l : conv) {
            blocks.emplace_back(l.weights);
            blocks.emplace_back(l.bias);
        }
        blocks.emplace_back(dense.weights);
        blocks.emplace_back(dense.bias);
        return blocks;
    }
    std::vector<std::span<const double>> parameter_blocks() const
    {
        std::vector<std::span<const double>> blocks;
        for (const auto& l : conv) {
            blocks.emplace_back(l.weights);
            blocks.emplace_back(l.bias);
        }
        blocks.emplace_back(dense.weights);
        blocks.emplace_back(dense.bias);
        return blocks;
    }

    std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for (const auto& b : parameter_blocks()) n += b.size();
        return n;
    }

    friend bool operator==(const CnnModel&, const CnnModel&) = default;
};

/// Throws unless every layer matches the fixed architecture.
inline void validate_architecture(const CnnModel& m)
{
    Shape3 s = kShapeChain[0];
    for (std::size_t l = 0; l < 4; ++l) {
        s = m.conv[l].output_shape(s);
        if (s != kShapeChain[l + 1] || m.conv[l].weights.size() != m.conv[l].kh * m.conv[l].kw *
                                                                        m.conv[l].in_planes * m.conv[l].out_planes ||
            m.conv[l].bias.size() != m.conv[l].out_planes)
            throw InputError("conv layer " + std::to_string(l + 1) + " breaks the shape chain at " + to_string(s));
    }
    if (m.dense.in != kFeatureMaps || m.dense.out != kClasses || m.dense.weights.size() != kFeatureMaps * kClasses ||
        m.dense.bias.size() != kClasses)
        throw InputError("dense layer must map 32 -> 2");
}

/// Glorot-uniform weights, zero biases, seeded.
inline CnnModel make_model(std::uint64_t seed)
{
    CnnModel m;
    m.meta.seed = seed;
    Rng rng(seed);
    for (auto& l : m.conv) {
        const double fan_in = static_cast<double>(l.kh * l.kw * l.in_planes);
        const double fan_out = static_cast<double>(l.kh * l.kw * l.out_planes);
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (double& w : l.weights) w = rng.uniform(-limit, limit);
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(kFeatureMaps + kClasses));
    for (double& w : m.dense.weights) w = rng.uniform(-limit, limit);
    return m;
}

/// Every intermediate of one forward pass; LRP and backprop both read it.
struct ForwardRecord {
    Tensor3 input;
    std::array<Tensor3, 4> pre;   // conv outputs before ReLU
    std::array<Tensor3, 4> post;  // after ReLU
    std::vector<double> logits;

    std::span<const double> dense_input() const { return post[3].values(); }
};

inline ForwardRecord forward(const CnnModel& model, const Tensor3& input)
{
    if (input.shape() != kShapeChain[0])
        throw InputError("network input must be " + to_string(kShapeChain[0]) + ", got " + to_string(input.shape()));
    ForwardRecord rec;
    rec.input = input;
    const Tensor3* x = &rec.input;
    for (std::size_t l = 0; l < 4; ++l) {
        rec.pre[l] = conv2d_valid_forward(*x, model.conv[l]);
        if (rec.pre[l].shape() != kShapeChain[l + 1])
            throw RuntimeFailure("shape chain violated after conv" + std::to_string(l + 1) + ": " +
                                 to_string(rec.pre[l].shape()));
        rec.post[l] = relu_forward(rec.pre[l]);
        x = &rec.post[l];
    }
    rec.logits = dense_forward(rec.dense_input(), model.dense);
    return rec;
}

/// Gradients mirroring CnnModel::parameter_blocks(), plus the input gradient.
struct ModelGrads {
    std::vector<std::vector<double>> blocks;
    Tensor3 input;

    std::vector<std::span<const double>> views() const
    {
        std::vector<std::span<const double>> v;
        for (const auto& b : blocks) v.emplace_back(b);
        return v;
    }
};

inline ModelGrads backward(const CnnModel& model, const ForwardRecord& rec, std::span<const double> grad_logits)
{
    ModelGrads g;
    g.blocks.resize(10);
    DenseGrads dg = dense_backward(rec.dense_input(), model.dense, grad_logits);
    g.blocks[8] = std::move(dg.weights);
    g.blocks[9] = std::move(dg.bias);
    Tensor3 up(kShapeChain[4]);
    up.values() = std::move(dg.input);
    for (std::size_t l = 4; l-- > 0;) {
        up = relu_backward(rec.pre[l], std::move(up));
        const Tensor3& in = l == 0 ? rec.input : rec.post[l - 1];
        ConvGrads cg = conv2d_valid_backward(in, model.conv[l], up);
        g.blocks[2 * l] = std::move(cg.weights);
        g.blocks[2 * l + 1] = std::move(cg.bias);
        up = std::move(cg.input);
    }
    g.input = std::move(up);
    return g;
}

struct Prediction {
    Label label = Label::left;
    std::vector<double> logits;
};

/// Argmax of the logits; ties go to class 0 (left).
inline Prediction predict(const CnnModel& model, const Tensor3& input)
{
    auto rec = forward(model, input);
    Prediction p;
    p.label = rec.logits[1] > rec.logits[0] ? Label::right : Label::left;
    p.logits = std::move(rec.logits);
    return p;
}

struct TrainConfig {
    double lr = 1e-4;
    std::size_t iterations = 300;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct TrainResult {
    CnnModel model;
    std::vector<double> loss_trace;  // mean mini-batch loss per iteration
};

/// Mini-batch Adam on softmax cross-entropy. One iteration is one optimizer
/// step; the sample order is reshuffled whenever it is exhausted, so a batch
/// may straddle two epochs. A batch size at or above the set size gives
/// full-batch training.
inline TrainResult train(CnnModel model, const std::vector<featmap::FeatureTensor>& data, const TrainConfig& cfg)
{
    validate_architecture(model);
    if (!(cfg.lr > 0.0) || cfg.iterations == 0 || cfg.batch_size == 0)
        throw InputError("train: lr, iterations and batch size must be positive");
    std::array<std::size_t, 2> per_class{};
    for (const auto& t : data) {
        if (t.planes.shape() != kShapeChain[0]) throw InputError("train: tensor shape mismatch");
        per_class[index_of(t.label)]++;
    }
    if (per_class[0] == 0 || per_class[1] == 0)
        throw InputError("train: training set must contain both classes (left " + std::to_string(per_class[0]) +
                         ", right " + std::to_string(per_class[1]) + ")");

    Rng rng(cfg.seed);
    AdamState adam({cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon}, model.parameter_blocks());
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::size_t cursor = 0;

    TrainResult result;
    result.loss_trace.reserve(cfg.iterations);
    const std::size_t batch = std::min(cfg.batch_size, data.size());
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        std::vector<std::vector<double>> sum;
        double loss = 0.0;
        std::size_t taken = 0;
        while (taken < batch) {
            if (cursor == order.size()) {
                rng.shuffle(order);
                cursor = 0;
            }
            const auto& sample = data[order[cursor++]];
            const auto rec = forward(model, sample.planes);
            const auto lg = softmax_cross_entropy(rec.logits, index_of(sample.label));
            auto g = backward(model, rec, lg.grad);
            if (sum.empty()) {
                sum = std::move(g.blocks);
            } else {
                for (std::size_t b = 0; b < sum.size(); ++b)
                    for (std::size_t i = 0; i < sum[b].size(); ++i) sum[b][i] += g.blocks[b][i];
            }
            loss += lg.loss;
            ++taken;
        }
        const double inv = 1.0 / static_cast<double>(taken);
        for (auto& b : sum)
            for (double& v : b) v *= inv;
        std::vector<std::span<const double>> views(sum.begin(), sum.end());
        adam_step(adam, model.parameter_blocks(), views);
        result.loss_trace.push_back(loss * inv);
        if (!std::isfinite(result.loss_trace.back()))
            throw RuntimeFailure("train: loss became non-finite at iteration " + std::to_string(it));
    }
    result.model = std::move(model);
    return result;
}

// --- model file --------------------------------------------------------------

inline constexpr std::string_view kModelMagic = "MICN";
inline constexpr std::uint32_t kModelVersion = 1;

/// Header (magic, version, seed, band list, grid hash, config digest)
/// followed by every parameter block as little-endian f64.
inline std::string encode_model(const CnnModel& model)
{
    validate_architecture(model);
    io::ByteWriter w;
    w.bytes(kModelMagic);
    w.u32(kModelVersion);
    w.u64(model.meta.seed);
    w.u32(static_cast<std::uint32_t>(model.meta.bands.size()));
    for (const auto& b : model.meta.bands) {
        w.f64(b.low_hz);
        w.f64(b.high_hz);
    }
    w.u64(model.meta.grid_hash);
    w.u64(model.meta.config_digest);
    for (const auto& block : model.parameter_blocks())
        for (double v : block) w.f64(v);
    return w.take();
}

inline CnnModel decode_model(std::string_view bytes)
{
    io::ByteReader r(bytes);
    if (r.bytes(4, "model magic") != kModelMagic) throw io::FormatError(io::FormatErrc::bad_magic, "not a MICN model file");
    const auto version = r.u32("model version");
    if (version != kModelVersion)
        throw io::FormatError(io::FormatErrc::unsupported_version, "model version " + std::to_string(version));
    CnnModel m;
    m.meta.seed = r.u64("seed");
    const auto nb = r.u32("band count");
    if (nb > 64) throw io::FormatError(io::FormatErrc::limit_exceeded, "band count " + std::to_string(nb));
    m.meta.bands.clear();
    for (std::uint32_t i = 0; i < nb; ++i) {
        dsp::BandSpec b;
        b.low_hz = r.f64("band");
        b.high_hz = r.f64("band");
        m.meta.bands.push_back(b);
    }
    m.meta.grid_hash = r.u64("grid hash");
    m.meta.config_digest = r.u64("config digest");
    r.need(8 * m.parameter_count(), "model parameters");
    for (auto block : m.parameter_blocks())
        for (double& v : block) v = r.f64("parameter");
    r.expect_end("model file");
    return m;
}

inline void write_model(const CnnModel& model, const std::filesystem::path& path)
{
    io::write_file(path, encode_model(model));
}

inline CnnModel read_model(const std::filesystem::path& path) { return decode_model(io::read_file(path)); }

} // namespace milrp::autonet
