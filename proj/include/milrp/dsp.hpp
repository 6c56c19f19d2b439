// Band-pass filter bank, zero-phase filtering, cue-locked segmentation and
// local average referencing.
#pragma once

#include "milrp/core.hpp"
#include "milrp/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace milrp::dsp {

struct BandSpec {
    double low_hz = 0.0;
    double high_hz = 0.0;

    friend bool operator==(const BandSpec&, const BandSpec&) = default;
};

/// theta, alpha, beta, theta+alpha, alpha+beta, theta+alpha+beta.
inline const std::vector<BandSpec>& default_bands()
{
    static const std::vector<BandSpec> bands = {{4, 8}, {8, 13}, {13, 30}, {4, 13}, {8, 30}, {4, 30}};
    return bands;
}

/// The mu band used by the CSP baseline.
inline constexpr BandSpec kMuBand{8.0, 12.0};

inline void validate_band(const BandSpec& band, double sample_rate)
{
    const auto show = [](double v) { return std::to_string(v); };
    if (!(sample_rate > 0.0) || !std::isfinite(sample_rate))
        throw InputError("sample rate must be positive, got " + show(sample_rate));
    if (!(band.low_hz > 0.0) || !std::isfinite(band.low_hz))
        throw InputError("band low edge " + show(band.low_hz) + " Hz must be > 0");
    if (!(band.high_hz < sample_rate / 2.0) || !std::isfinite(band.high_hz))
        throw InputError("band high edge " + show(band.high_hz) + " Hz must be below Nyquist (" +
                         show(sample_rate / 2.0) + " Hz)");
    if (!(band.low_hz < band.high_hz))
        throw InputError("band low edge " + show(band.low_hz) + " Hz must be below high edge " +
                         show(band.high_hz) + " Hz");
}

/// Second-order section, transposed direct form II, a0 normalized to 1.
struct Biquad {
    double b0 = 1.0, b1 = 0.0, b2 = 0.0;
    double a1 = 0.0, a2 = 0.0;

    std::complex<double> response(std::complex<double> z) const
    {
        const auto zi = 1.0 / z;
        return (b0 + zi * (b1 + zi * b2)) / (1.0 + zi * (a1 + zi * a2));
    }

    /// Magnitudes of the two poles.
    std::pair<double, double> pole_radii() const
    {
        const std::complex<double> disc = std::sqrt(std::complex<double>(a1 * a1 - 4.0 * a2));
        return {std::abs((-a1 + disc) / 2.0), std::abs((-a1 - disc) / 2.0)};
    }

    bool stable() const
    {
        const auto [r1, r2] = pole_radii();
        return r1 < 1.0 && r2 < 1.0;
    }
};

using Cascade = std::vector<Biquad>;

/// Complex frequency response of a cascade at `freq_hz`.
inline std::complex<double> frequency_response(const Cascade& sections, double freq_hz, double sample_rate)
{
    const double w = 2.0 * std::numbers::pi * freq_hz / sample_rate;
    const std::complex<double> z = std::polar(1.0, w);
    std::complex<double> h(1.0, 0.0);
    for (const auto& s : sections) h *= s.response(z);
    return h;
}

inline double magnitude_db(const Cascade& sections, double freq_hz, double sample_rate)
{
    return 20.0 * std::log10(std::abs(frequency_response(sections, freq_hz, sample_rate)));
}

/// Butterworth band-pass via analog prototype, pre-warped band edges and the
/// bilinear transform. `order` is the band-pass order; the result has
/// order/2 sections, each with zeros at z = +1 and z = -1.
inline Cascade design_bandpass(const BandSpec& band, double sample_rate, int order = 4)
{
    validate_band(band, sample_rate);
    if (order != 2 && order != 4 && order != 6 && order != 8)
        throw InputError("band-pass order must be one of 2, 4, 6, 8; got " + std::to_string(order));

    using cplx = std::complex<double>;
    const int n = order / 2;  // low-pass prototype order
    const double fs2 = 2.0 * sample_rate;
    const double w_lo = fs2 * std::tan(std::numbers::pi * band.low_hz / sample_rate);
    const double w_hi = fs2 * std::tan(std::numbers::pi * band.high_hz / sample_rate);
    const double bw = w_hi - w_lo;
    const double w0sq = w_lo * w_hi;

    // Prototype poles in the upper half plane (plus the real pole for odd n);
    // each maps to a band-pass pole pair s^2 - p*bw*s + w0^2 = 0.
    std::vector<cplx> complex_poles;  // digital, one per conjugate pair
    std::vector<double> real_poles;   // digital, paired up afterwards
    const auto to_z = [&](cplx s) { return (1.0 + s / fs2) / (1.0 - s / fs2); };
    for (int k = 0; k < n; ++k) {
        const cplx p = std::polar(1.0, std::numbers::pi * (2.0 * k + n + 1) / (2.0 * n));
        if (p.imag() < -1e-12) continue;  // handled by its conjugate
        const cplx disc = std::sqrt(p * p * bw * bw - 4.0 * w0sq);
        const cplx s1 = (p * bw + disc) / 2.0;
        const cplx s2 = (p * bw - disc) / 2.0;
        if (std::abs(p.imag()) <= 1e-12) {
            // Real prototype pole: band-pass pair is conjugate or two reals.
            if (std::abs(disc.imag()) > 0.0 && std::abs(s1.imag()) > 1e-9 * std::abs(s1)) {
                complex_poles.push_back(to_z(s1.imag() > 0 ? s1 : s2));
            } else {
                real_poles.push_back(to_z(s1).real());
                real_poles.push_back(to_z(s2).real());
            }
        } else {
            // p and conj(p) give {s1, s2} and their conjugates: two pairs.
            complex_poles.push_back(to_z(s1.imag() >= 0 ? s1 : std::conj(s1)));
            complex_poles.push_back(to_z(s2.imag() >= 0 ? s2 : std::conj(s2)));
        }
    }

    Cascade sections;
    for (const cplx& z : complex_poles) {
        Biquad b;
        b.b0 = 1.0;
        b.b1 = 0.0;
        b.b2 = -1.0;
        b.a1 = -2.0 * z.real();
        b.a2 = std::norm(z);
        sections.push_back(b);
    }
    std::sort(real_poles.begin(), real_poles.end());
    for (std::size_t i = 0; i + 1 < real_poles.size(); i += 2) {
        Biquad b;
        b.b0 = 1.0;
        b.b1 = 0.0;
        b.b2 = -1.0;
        b.a1 = -(real_poles[i] + real_poles[i + 1]);
        b.a2 = real_poles[i] * real_poles[i + 1];
        sections.push_back(b);
    }
    if (sections.size() != static_cast<std::size_t>(n))
        throw RuntimeFailure("design_bandpass: internal pole pairing produced " + std::to_string(sections.size()) +
                             " sections, expected " + std::to_string(n));

    // Unit gain at the digital image of the analog center frequency,
    // spread evenly across sections.
    const double f_center = sample_rate / std::numbers::pi * std::atan(std::sqrt(w0sq) / fs2);
    const double gain = std::abs(frequency_response(sections, f_center, sample_rate));
    const double per_section = std::pow(1.0 / gain, 1.0 / n);
    for (auto& s : sections) {
        s.b0 *= per_section;
        s.b2 *= per_section;
        if (!s.stable()) throw RuntimeFailure("design_bandpass: unstable section produced");
    }
    return sections;
}

struct FilterBank {
    std::vector<BandSpec> bands;
    std::vector<Cascade> sections;  // one cascade per band
    double sample_rate = 0.0;
    int order = 4;
};

inline FilterBank design_filter_bank(const std::vector<BandSpec>& bands, double sample_rate, int order = 4)
{
    FilterBank fb;
    fb.bands = bands;
    fb.sample_rate = sample_rate;
    fb.order = order;
    for (const auto& band : bands) fb.sections.push_back(design_bandpass(band, sample_rate, order));
    return fb;
}

/// Steady-state initial conditions of a cascade for a unit step input.
inline std::vector<std::array<double, 2>> sos_initial_state(const Cascade& sections)
{
    std::vector<std::array<double, 2>> zi(sections.size());
    double scale = 1.0;
    for (std::size_t i = 0; i < sections.size(); ++i) {
        const auto& s = sections[i];
        const double g = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
        const double z2 = s.b2 - s.a2 * g;
        const double z1 = s.b1 - s.a1 * g + z2;
        zi[i] = {scale * z1, scale * z2};
        scale *= g;
    }
    return zi;
}

/// Single forward pass of a cascade. `state` holds per-section delay values
/// and is updated in place.
inline void sos_filter_inplace(const Cascade& sections, std::span<double> x, std::vector<std::array<double, 2>>& state)
{
    for (std::size_t i = 0; i < sections.size(); ++i) {
        const auto& s = sections[i];
        double z1 = state[i][0];
        double z2 = state[i][1];
        for (double& v : x) {
            const double in = v;
            const double y = s.b0 * in + z1;
            z1 = s.b1 * in - s.a1 * y + z2;
            z2 = s.b2 * in - s.a2 * y;
            v = y;
        }
        state[i] = {z1, z2};
    }
}

/// Edge padding used by filtfilt: three times the filter order.
inline std::size_t filtfilt_padlen(const Cascade& sections) { return 3 * 2 * sections.size(); }

/// Zero-phase forward-backward filtering with odd-reflection edge padding
/// and steady-state initial conditions.
inline std::vector<double> filtfilt(const Cascade& sections, std::span<const double> signal)
{
    const std::size_t n = signal.size();
    const std::size_t pad = filtfilt_padlen(sections);
    if (n <= pad)
        throw InputError("filtfilt: signal of " + std::to_string(n) + " samples is too short for edge padding of " +
                         std::to_string(pad));
    if (sections.empty()) return {signal.begin(), signal.end()};

    std::vector<double> ext(n + 2 * pad);
    for (std::size_t i = 0; i < pad; ++i) ext[i] = 2.0 * signal[0] - signal[pad - i];
    std::copy(signal.begin(), signal.end(), ext.begin() + static_cast<std::ptrdiff_t>(pad));
    for (std::size_t i = 0; i < pad; ++i) ext[pad + n + i] = 2.0 * signal[n - 1] - signal[n - 2 - i];

    const auto zi = sos_initial_state(sections);
    auto run = [&](std::vector<double>& buf) {
        auto state = zi;
        for (auto& z : state) {
            z[0] *= buf.front();
            z[1] *= buf.front();
        }
        sos_filter_inplace(sections, buf, state);
    };
    run(ext);
    std::reverse(ext.begin(), ext.end());
    run(ext);
    std::reverse(ext.begin(), ext.end());
    return {ext.begin() + static_cast<std::ptrdiff_t>(pad), ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

/// Applies filtfilt to every row (channel) of a channels x samples matrix.
inline Matrix filtfilt_rows(const Cascade& sections, const Matrix& data)
{
    Matrix out(data.rows(), data.cols());
    for (std::size_t r = 0; r < data.rows(); ++r) {
        const auto y = filtfilt(sections, data.row(r));
        std::copy(y.begin(), y.end(), out.row(r).begin());
    }
    return out;
}

struct Window {
    double t_start_s = 0.5;
    double t_end_s = 2.5;

    friend bool operator==(const Window&, const Window&) = default;
};

struct Segment {
    Matrix data;  // channels x samples
    double t_start_s = 0.0;
    double t_end_s = 0.0;
};

inline std::size_t seconds_to_samples(double seconds, double sample_rate)
{
    return static_cast<std::size_t>(std::llround(seconds * sample_rate));
}

/// Cuts `window` (seconds after the cue) out of a channels x samples trial.
inline Segment segment(const Matrix& trial, std::size_t cue_sample, const Window& window, double sample_rate,
                       std::size_t trial_index = 0)
{
    if (!(window.t_start_s >= 0.0) || !(window.t_end_s > window.t_start_s))
        throw InputError("segment window must satisfy 0 <= start < end");
    const std::size_t offset = seconds_to_samples(window.t_start_s, sample_rate);
    const std::size_t length = seconds_to_samples(window.t_end_s - window.t_start_s, sample_rate);
    const std::size_t first = cue_sample + offset;
    if (first + length > trial.cols())
        throw InputError("trial " + std::to_string(trial_index) + ": window needs samples up to " +
                         std::to_string(first + length) + " but the trial has " + std::to_string(trial.cols()));
    Segment seg;
    seg.t_start_s = window.t_start_s;
    seg.t_end_s = window.t_end_s;
    seg.data = Matrix(trial.rows(), length);
    for (std::size_t r = 0; r < trial.rows(); ++r) {
        const auto src = trial.row(r).subspan(first, length);
        std::copy(src.begin(), src.end(), seg.data.row(r).begin());
    }
    return seg;
}

/// Subtracts the cross-channel mean from every time sample.
inline Segment local_average_reference(const Segment& seg)
{
    const std::size_t nch = seg.data.rows();
    if (nch < 2) throw InputError("local_average_reference needs at least 2 channels, got " + std::to_string(nch));
    Segment out = seg;
    for (std::size_t t = 0; t < seg.data.cols(); ++t) {
        double mean = 0.0;
        for (std::size_t c = 0; c < nch; ++c) mean += seg.data(c, t);
        mean /= static_cast<double>(nch);
        for (std::size_t c = 0; c < nch; ++c) out.data(c, t) = seg.data(c, t) - mean;
    }
    return out;
}

} // namespace milrp::dsp
