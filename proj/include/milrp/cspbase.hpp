// CSP + LDA baseline on mu-band segments.
#pragma once

#include "milrp/binary_io.hpp"
#include "milrp/core.hpp"
#include "milrp/dsp.hpp"
#include "milrp/linalg.hpp"
#include "milrp/trialio.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace milrp::csp {

/// Mean over trials of X X^T / trace(X X^T). Exactly symmetric.
inline Matrix class_covariance(const std::vector<Matrix>& segments)
{
    if (segments.empty()) throw InputError("class_covariance: no segments");
    const std::size_t n = segments.front().rows();
    Matrix acc(n, n);
    for (std::size_t s = 0; s < segments.size(); ++s) {
        const Matrix& x = segments[s];
        if (x.rows() != n) throw InputError("class_covariance: segment " + std::to_string(s) + " has a different channel count");
        Matrix c(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto xi = x.row(i);
            for (std::size_t j = i; j < n; ++j) {
                const auto xj = x.row(j);
                double dot = 0.0;
                for (std::size_t t = 0; t < x.cols(); ++t) dot += xi[t] * xj[t];
                c(i, j) = c(j, i) = dot;
            }
        }
        const double tr = c.trace();
        if (!(tr > 0.0)) throw InputError("class_covariance: segment " + std::to_string(s) + " has zero power");
        acc += c * (1.0 / tr);
    }
    acc *= 1.0 / static_cast<double>(segments.size());
    return acc;
}

struct CspOptions {
    std::size_t pairs = 3;
    /// Relative ridge (times trace/n) added to the composite covariance when
    /// its smallest eigenvalue falls below `singular_threshold` * trace/n.
    double ridge = 1e-8;
    double singular_threshold = 1e-10;
};

struct CspModel {
    Matrix filters;                   // rows are spatial filters, lambda descending
    std::vector<double> eigenvalues;  // lambda per filter row
    bool ridge_applied = false;

    friend bool operator==(const CspModel&, const CspModel&) = default;
};

/// Solves cov1 w = lambda (cov1 + cov2) w by whitening the composite and
/// diagonalizing the whitened cov1. Keeps the `pairs` largest and smallest
/// lambdas.
inline CspModel csp_fit(const Matrix& cov1, const Matrix& cov2, const CspOptions& opt = {})
{
    const std::size_t n = cov1.rows();
    if (cov1.cols() != n || cov2.rows() != n || cov2.cols() != n) throw InputError("csp_fit: covariance shape mismatch");
    if (opt.pairs == 0 || 2 * opt.pairs > n)
        throw InputError("csp_fit: " + std::to_string(opt.pairs) + " filter pairs do not fit " + std::to_string(n) +
                         " channels");

    Matrix composite = cov1 + cov2;
    const double mean_diag = composite.trace() / static_cast<double>(n);
    auto ce = jacobi_eigen(composite);
    CspModel model;
    if (ce.values.front() <= opt.singular_threshold * mean_diag) {
        composite += Matrix::identity(n) * (opt.ridge * mean_diag);
        ce = jacobi_eigen(composite);
        model.ridge_applied = true;
    }
    if (!(ce.values.front() > 0.0))
        throw RuntimeFailure("csp_fit: composite covariance is not positive definite (smallest eigenvalue " +
                             std::to_string(ce.values.front()) + ")");

    // whitening P = D^{-1/2} U^T
    Matrix whiten(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        const double s = 1.0 / std::sqrt(ce.values[i]);
        for (std::size_t k = 0; k < n; ++k) whiten(i, k) = s * ce.vectors(k, i);
    }
    const Matrix s1 = whiten * cov1 * whiten.transposed();
    const auto se = jacobi_eigen(s1);
    const Matrix full = se.vectors.transposed() * whiten;  // row i pairs with se.values[i]

    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < opt.pairs; ++i) keep.push_back(n - 1 - i);
    for (std::size_t i = opt.pairs; i-- > 0;) keep.push_back(i);

    model.filters = Matrix(keep.size(), n);
    for (std::size_t f = 0; f < keep.size(); ++f) {
        const auto src = full.row(keep[f]);
        std::copy(src.begin(), src.end(), model.filters.row(f).begin());
        model.eigenvalues.push_back(se.values[keep[f]]);
    }
    return model;
}

/// f_i = log(var_i / sum_j var_j) of the spatially filtered segment.
inline std::vector<double> csp_features(const CspModel& model, const Matrix& segment)
{
    if (segment.rows() != model.filters.cols())
        throw InputError("csp_features: segment has " + std::to_string(segment.rows()) + " channels, filters expect " +
                         std::to_string(model.filters.cols()));
    const std::size_t nf = model.filters.rows();
    const std::size_t ns = segment.cols();
    std::vector<double> var(nf, 0.0);
    std::vector<double> proj(ns);
    for (std::size_t f = 0; f < nf; ++f) {
        std::fill(proj.begin(), proj.end(), 0.0);
        for (std::size_t c = 0; c < segment.rows(); ++c) {
            const double w = model.filters(f, c);
            const auto x = segment.row(c);
            for (std::size_t t = 0; t < ns; ++t) proj[t] += w * x[t];
        }
        const double mean = std::accumulate(proj.begin(), proj.end(), 0.0) / static_cast<double>(ns);
        double v = 0.0;
        for (double p : proj) v += (p - mean) * (p - mean);
        var[f] = v / static_cast<double>(ns);
    }
    const double total = std::accumulate(var.begin(), var.end(), 0.0);
    if (!(total > 0.0)) throw InputError("csp_features: projected segment has zero variance");
    std::vector<double> f(nf);
    for (std::size_t i = 0; i < nf; ++i) f[i] = std::log(var[i] / total);
    return f;
}

struct LdaModel {
    std::vector<double> weights;
    double bias = 0.0;

    /// Positive scores vote for the first class given to lda_fit.
    double score(std::span<const double> x) const
    {
        if (x.size() != weights.size()) throw InputError("lda: feature length mismatch");
        double s = bias;
        for (std::size_t i = 0; i < x.size(); ++i) s += weights[i] * x[i];
        return s;
    }

    friend bool operator==(const LdaModel&, const LdaModel&) = default;
};

/// Fisher discriminant with pooled covariance and a small ridge; the bias
/// puts the boundary midway between the projected class means.
inline LdaModel lda_fit(const std::vector<std::vector<double>>& first, const std::vector<std::vector<double>>& second,
                        double ridge = 1e-6)
{
    if (first.size() < 2 || second.size() < 2) throw InputError("lda_fit: need at least 2 samples per class");
    const std::size_t d = first.front().size();
    const auto mean_of = [&](const std::vector<std::vector<double>>& xs) {
        std::vector<double> m(d, 0.0);
        for (const auto& x : xs) {
            if (x.size() != d) throw InputError("lda_fit: feature length mismatch");
            for (std::size_t i = 0; i < d; ++i) m[i] += x[i];
        }
        for (double& v : m) v /= static_cast<double>(xs.size());
        return m;
    };
    const auto mu1 = mean_of(first);
    const auto mu2 = mean_of(second);

    Matrix s1(d, d), s2(d, d);
    const auto scatter = [&](const std::vector<std::vector<double>>& xs, const std::vector<double>& mu, Matrix& s) {
        for (const auto& x : xs)
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) s(i, j) += (x[i] - mu[i]) * (x[j] - mu[j]);
    };
    scatter(first, mu1, s1);
    scatter(second, mu2, s2);
    Matrix pooled = s1 + s2;
    pooled *= 1.0 / static_cast<double>(first.size() + second.size() - 2);
    const double r = ridge * pooled.trace() / static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i) pooled(i, i) += r;

    std::vector<double> diff(d), mid(d);
    for (std::size_t i = 0; i < d; ++i) {
        diff[i] = mu1[i] - mu2[i];
        mid[i] = mu1[i] + mu2[i];
    }
    LdaModel m;
    try {
        m.weights = cholesky_solve(pooled, diff);
    } catch (const RuntimeFailure&) {
        throw RuntimeFailure("lda_fit: pooled covariance is singular even after ridge");
    }
    double proj = 0.0;
    for (std::size_t i = 0; i < d; ++i) proj += m.weights[i] * mid[i];
    m.bias = -0.5 * proj;
    return m;
}

/// Left when the score is positive (left is the first class), else right.
inline Label lda_predict(const LdaModel& m, std::span<const double> x) { return m.score(x) > 0.0 ? Label::left : Label::right; }

struct BaselineOptions {
    dsp::BandSpec band = dsp::kMuBand;
    dsp::Window window{};
    int order = 4;
    CspOptions csp{};
    bool include_rejected = true;
};

struct BaselineModel {
    CspModel csp;
    LdaModel lda;

    friend bool operator==(const BaselineModel&, const BaselineModel&) = default;
};

struct BaselineOutcome {
    BaselineModel model;
    std::vector<Label> predictions;
    std::vector<Label> labels;
    double accuracy = 0.0;  // percent
};

/// mu-band filtered, cue-locked segments for every (kept) trial of a set.
inline std::vector<std::pair<Matrix, Label>> baseline_segments(const trialio::TrialSet& set, const BaselineOptions& opt)
{
    const auto cascade = dsp::design_bandpass(opt.band, set.sample_rate, opt.order);
    std::vector<std::pair<Matrix, Label>> out;
    for (std::size_t i = 0; i < set.trials.size(); ++i) {
        const auto& t = set.trials[i];
        if (t.rejected && !opt.include_rejected) continue;
        const Matrix filtered = dsp::filtfilt_rows(cascade, t.to_matrix(set.channels.size()));
        out.emplace_back(dsp::segment(filtered, t.cue_sample, opt.window, set.sample_rate, i).data, t.label);
    }
    return out;
}

inline BaselineModel baseline_fit(const std::vector<std::pair<Matrix, Label>>& train, const CspOptions& csp_opt)
{
    std::vector<Matrix> by_class[2];
    for (const auto& [seg, label] : train) by_class[index_of(label)].push_back(seg);
    if (by_class[0].empty() || by_class[1].empty()) throw InputError("baseline: training data must contain both classes");
    BaselineModel m;
    m.csp = csp_fit(class_covariance(by_class[0]), class_covariance(by_class[1]), csp_opt);
    std::vector<std::vector<double>> feats[2];
    for (std::size_t c = 0; c < 2; ++c)
        for (const auto& seg : by_class[c]) feats[c].push_back(csp_features(m.csp, seg));
    m.lda = lda_fit(feats[0], feats[1]);
    return m;
}

inline double percent_correct(const std::vector<Label>& predictions, const std::vector<Label>& labels)
{
    if (predictions.size() != labels.size()) throw InputError("accuracy: predictions and labels differ in length");
    if (labels.empty()) throw InputError("accuracy: no trials");
    std::size_t ok = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) ok += predictions[i] == labels[i];
    return 100.0 * static_cast<double>(ok) / static_cast<double>(labels.size());
}

/// Fits CSP+LDA on all training sets and scores the test set.
inline BaselineOutcome baseline_pipeline(const std::vector<const trialio::TrialSet*>& train,
                                         const trialio::TrialSet& test, const BaselineOptions& opt = {})
{
    std::vector<std::pair<Matrix, Label>> train_segs;
    for (const auto* set : train) {
        if (set->sample_rate != test.sample_rate || set->channels != test.channels)
            throw InputError("baseline: " + set->id() + " and " + test.id() + " differ in montage or sample rate");
        auto segs = baseline_segments(*set, opt);
        train_segs.insert(train_segs.end(), std::make_move_iterator(segs.begin()), std::make_move_iterator(segs.end()));
    }
    BaselineOutcome out;
    out.model = baseline_fit(train_segs, opt.csp);
    for (const auto& [seg, label] : baseline_segments(test, opt)) {
        out.predictions.push_back(lda_predict(out.model.lda, csp_features(out.model.csp, seg)));
        out.labels.push_back(label);
    }
    out.accuracy = percent_correct(out.predictions, out.labels);
    return out;
}

// --- CSPB file ---------------------------------------------------------------

inline constexpr std::string_view kBaselineMagic = "CSPB";
inline constexpr std::uint32_t kBaselineVersion = 1;

/// "CSPB", u32 version, u64 config digest, u32 n_filters, u32 n_channels,
/// u8 ridge flag, f64 eigenvalues, f64 filters row-major, u32 lda dim,
/// f64 lda weights, f64 lda bias.
inline std::string encode_baseline(const BaselineModel& m, std::uint64_t config_digest = 0)
{
    io::ByteWriter w;
    w.bytes(kBaselineMagic);
    w.u32(kBaselineVersion);
    w.u64(config_digest);
    w.u32(static_cast<std::uint32_t>(m.csp.filters.rows()));
    w.u32(static_cast<std::uint32_t>(m.csp.filters.cols()));
    w.u8(m.csp.ridge_applied ? 1 : 0);
    for (double v : m.csp.eigenvalues) w.f64(v);
    for (double v : m.csp.filters.values()) w.f64(v);
    w.u32(static_cast<std::uint32_t>(m.lda.weights.size()));
    for (double v : m.lda.weights) w.f64(v);
    w.f64(m.lda.bias);
    return w.take();
}

struct DecodedBaseline {
    BaselineModel model;
    std::uint64_t config_digest = 0;
};

inline DecodedBaseline decode_baseline(std::string_view bytes, const io::ReadLimits& limits = {})
{
    io::ByteReader r(bytes);
    if (r.remaining() < 4 || r.bytes(4, "magic") != kBaselineMagic)
        throw io::FormatError(io::FormatErrc::bad_magic, "not a CSPB baseline model");
    const auto version = r.u32("version");
    if (version != kBaselineVersion)
        throw io::FormatError(io::FormatErrc::unsupported_version, "CSPB version " + std::to_string(version));
    DecodedBaseline d;
    d.config_digest = r.u64("config digest");
    const auto nf = r.u32("filter count");
    const auto nc = r.u32("channel count");
    if (nf > limits.max_channels || nc > limits.max_channels)
        throw io::FormatError(io::FormatErrc::limit_exceeded, "filter matrix " + std::to_string(nf) + "x" + std::to_string(nc));
    d.model.csp.ridge_applied = r.u8("ridge flag") != 0;
    r.need(8 * (static_cast<std::size_t>(nf) + static_cast<std::size_t>(nf) * nc), "filters");
    d.model.csp.eigenvalues.resize(nf);
    for (double& v : d.model.csp.eigenvalues) v = r.f64("eigenvalue");
    d.model.csp.filters = Matrix(nf, nc);
    for (double& v : d.model.csp.filters.values()) v = r.f64("filter");
    const auto dim = r.u32("lda dim");
    if (dim > limits.max_channels) throw io::FormatError(io::FormatErrc::limit_exceeded, "lda dim " + std::to_string(dim));
    r.need(8 * (static_cast<std::size_t>(dim) + 1), "lda");
    d.model.lda.weights.resize(dim);
    for (double& v : d.model.lda.weights) v = r.f64("lda weight");
    d.model.lda.bias = r.f64("lda bias");
    r.expect_end("CSPB file");
    return d;
}

} // namespace milrp::csp
