// Trial sets and their persistence: the MITS binary container, the
// directory text import, and MITC feature-tensor caches.
//
// MITS layout (little-endian):
//   "MITS" u32 version=1
//   str subject, str session            (str = u32 length + bytes)
//   f64 sample_rate
//   u32 n_channels, n_channels x str channel name
//   u32 n_trials, then per trial:
//     u32 n_samples, u32 cue_sample, u8 flags (bit 0 label: 0 left / 1 right,
//     bit 7 artifact-rejected), n_channels x n_samples f32, channel-major
//
// MITC layout:
//   "MITC" u32 version=1, u64 grid_hash, u64 config_digest,
//   str subject, str session, u32 count, then per tensor:
//     u32 trial_index, u8 flags (as above), 6*7*12 f64 in row, col, plane order
#pragma once

#include "milrp/binary_io.hpp"
#include "milrp/core.hpp"
#include "milrp/featmap.hpp"
#include "milrp/linalg.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace milrp::trialio {

struct Trial {
    std::size_t n_samples = 0;
    std::size_t cue_sample = 0;
    Label label = Label::left;
    bool rejected = false;
    std::vector<float> samples;  // channel-major: samples[ch * n_samples + t]

    Matrix to_matrix(std::size_t n_channels) const
    {
        Matrix m(n_channels, n_samples);
        for (std::size_t i = 0; i < samples.size(); ++i) m.values()[i] = samples[i];
        return m;
    }

    friend bool operator==(const Trial&, const Trial&) = default;
};

struct TrialSet {
    std::string subject;
    std::string session;  // "T" or "E"
    double sample_rate = 0.0;
    std::vector<std::string> channels;
    std::vector<Trial> trials;

    std::string id() const { return subject + session; }

    /// Throws unless every trial matches the declared channel count.
    void validate() const
    {
        if (session != "T" && session != "E") throw InputError("session must be T or E, got '" + session + "'");
        if (!(sample_rate > 0.0)) throw InputError("sample rate must be positive");
        for (std::size_t i = 0; i < trials.size(); ++i) {
            const auto& t = trials[i];
            if (t.samples.size() != t.n_samples * channels.size())
                throw InputError(id() + " trial " + std::to_string(i) + ": sample count does not match " +
                                 std::to_string(channels.size()) + " channels x " + std::to_string(t.n_samples));
        }
    }

    friend bool operator==(const TrialSet&, const TrialSet&) = default;
};

inline constexpr std::string_view kTrialMagic = "MITS";
inline constexpr std::uint32_t kTrialVersion = 1;
inline constexpr std::uint8_t kRejectedBit = 0x80;

inline std::uint8_t encode_flags(Label l, bool rejected)
{
    return static_cast<std::uint8_t>(index_of(l) | (rejected ? kRejectedBit : 0));
}

inline std::pair<Label, bool> decode_flags(std::uint8_t flags)
{
    if ((flags & ~(kRejectedBit | 0x01)) != 0)
        throw io::FormatError(io::FormatErrc::bad_value, "trial flags byte " + std::to_string(flags));
    return {(flags & 0x01) ? Label::right : Label::left, (flags & kRejectedBit) != 0};
}

struct ReadOptions {
    std::optional<std::size_t> expected_channels = 22;
    io::ReadLimits limits{};
};

inline std::string encode_trialset(const TrialSet& set)
{
    set.validate();
    io::ByteWriter w;
    w.bytes(kTrialMagic);
    w.u32(kTrialVersion);
    w.str(set.subject);
    w.str(set.session);
    w.f64(set.sample_rate);
    w.u32(static_cast<std::uint32_t>(set.channels.size()));
    for (const auto& c : set.channels) w.str(c);
    w.u32(static_cast<std::uint32_t>(set.trials.size()));
    for (const auto& t : set.trials) {
        w.u32(static_cast<std::uint32_t>(t.n_samples));
        w.u32(static_cast<std::uint32_t>(t.cue_sample));
        w.u8(encode_flags(t.label, t.rejected));
        for (float v : t.samples) w.f32(v);
    }
    return w.take();
}

inline TrialSet decode_trialset(std::string_view bytes, const ReadOptions& opt = {})
{
    io::ByteReader r(bytes);
    if (r.remaining() < 4 || r.bytes(4, "magic") != kTrialMagic)
        throw io::FormatError(io::FormatErrc::bad_magic, "not a MITS trial container");
    const auto version = r.u32("version");
    if (version != kTrialVersion)
        throw io::FormatError(io::FormatErrc::unsupported_version,
                              "MITS version " + std::to_string(version) + " (reader supports " +
                                  std::to_string(kTrialVersion) + ")");
    TrialSet set;
    set.subject = r.str("subject", opt.limits);
    set.session = r.str("session", opt.limits);
    set.sample_rate = r.f64("sample rate");
    const auto nch = r.u32("channel count");
    if (nch > opt.limits.max_channels)
        throw io::FormatError(io::FormatErrc::limit_exceeded, "channel count " + std::to_string(nch));
    if (opt.expected_channels && nch != *opt.expected_channels)
        throw io::FormatError(io::FormatErrc::channel_mismatch, "file declares " + std::to_string(nch) +
                                                                    " channels, expected " +
                                                                    std::to_string(*opt.expected_channels));
    for (std::uint32_t i = 0; i < nch; ++i) set.channels.push_back(r.str("channel name", opt.limits));
    const auto ntr = r.u32("trial count");
    if (ntr > opt.limits.max_items)
        throw io::FormatError(io::FormatErrc::limit_exceeded, "trial count " + std::to_string(ntr));
    for (std::uint32_t i = 0; i < ntr; ++i) {
        const std::string where = "trial " + std::to_string(i);
        Trial t;
        t.n_samples = r.u32(where + " header");
        t.cue_sample = r.u32(where + " header");
        std::tie(t.label, t.rejected) = decode_flags(r.u8(where + " header"));
        if (t.n_samples > opt.limits.max_samples)
            throw io::FormatError(io::FormatErrc::limit_exceeded, where + ": " + std::to_string(t.n_samples) + " samples");
        const std::size_t count = t.n_samples * nch;
        r.need(4 * count, where + " samples");
        t.samples.resize(count);
        for (float& v : t.samples) v = r.f32(where);
        set.trials.push_back(std::move(t));
    }
    r.expect_end("MITS container");
    set.validate();
    return set;
}

inline void write_trialset(const TrialSet& set, const std::filesystem::path& path)
{
    io::write_file(path, encode_trialset(set));
}

inline TrialSet read_trialset(const std::filesystem::path& path, const ReadOptions& opt = {})
{
    try {
        return decode_trialset(io::read_file(path), opt);
    } catch (const io::FormatError& e) {
        throw io::FormatError(e.code(), path.string() + ": " + e.what());
    }
}

// --- text import ---------------------------------------------------------

namespace detail {

inline std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s)
{
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',' || ch == ' ' || ch == '\t') {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

inline double parse_number(const std::string& cell, const std::string& where)
{
    double v = 0.0;
    const char* b = cell.data();
    const char* e = b + cell.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e || !std::isfinite(v))
        throw InputError(where + ": non-numeric cell '" + cell + "'");
    return v;
}

inline std::size_t parse_index(const std::string& cell, const std::string& where)
{
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || p != cell.data() + cell.size())
        throw InputError(where + ": expected a non-negative integer, got '" + cell + "'");
    return v;
}

} // namespace detail

inline constexpr std::string_view kManifestName = "manifest.txt";

/// Imports a directory holding manifest.txt and one delimited file per
/// trial (rows = channels). See docs/formats.md.
inline TrialSet import_text(const std::filesystem::path& dir)
{
    const auto manifest_path = dir / kManifestName;
    if (!std::filesystem::exists(manifest_path)) throw InputError("missing manifest: " + manifest_path.string());
    std::ifstream mf(manifest_path);
    if (!mf) throw InputError("cannot open " + manifest_path.string());

    TrialSet set;
    std::vector<std::string> trial_files;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(mf, line)) {
        ++lineno;
        const std::string where = manifest_path.string() + ":" + std::to_string(lineno);
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw InputError(where + ": expected key = value");
        const std::string key = detail::trim(std::string_view(t).substr(0, eq));
        const std::string value = detail::trim(std::string_view(t).substr(eq + 1));
        if (key == "subject")
            set.subject = value;
        else if (key == "session")
            set.session = value;
        else if (key == "sample_rate")
            set.sample_rate = detail::parse_number(value, where);
        else if (key == "channels")
            set.channels = detail::split_list(value);
        else if (key == "trial")
            trial_files.push_back(value);
        else
            throw InputError(where + ": unknown key '" + key + "'");
    }
    if (set.subject.empty()) throw InputError(manifest_path.string() + ": subject missing");
    if (set.channels.empty()) throw InputError(manifest_path.string() + ": channel list missing");
    if (set.session != "T" && set.session != "E")
        throw InputError(manifest_path.string() + ": session must be T or E");
    if (!(set.sample_rate > 0.0)) throw InputError(manifest_path.string() + ": sample_rate missing or not positive");

    const std::size_t nch = set.channels.size();
    for (const auto& name : trial_files) {
        const auto path = dir / name;
        std::ifstream tf(path);
        if (!tf) throw InputError("cannot open trial file " + path.string());
        Trial trial;
        std::optional<std::size_t> cue;
        std::optional<Label> label;
        std::vector<std::vector<double>> rows;
        std::size_t ln = 0;
        while (std::getline(tf, line)) {
            ++ln;
            const std::string where = path.string() + ":" + std::to_string(ln);
            const std::string t = detail::trim(line);
            if (t.empty()) continue;
            if (t[0] == '#') {
                const auto eq = t.find('=');
                if (eq == std::string::npos) continue;
                const std::string key = detail::trim(std::string_view(t).substr(1, eq - 1));
                const std::string value = detail::trim(std::string_view(t).substr(eq + 1));
                if (key == "cue")
                    cue = detail::parse_index(value, where);
                else if (key == "label") {
                    try {
                        label = parse_label(value);
                    } catch (const InputError& e) {
                        throw InputError(where + ": " + e.what());
                    }
                } else if (key == "rejected")
                    trial.rejected = value == "1" || value == "true";
                continue;
            }
            std::vector<double> row;
            for (const auto& cell : detail::split_list(t)) row.push_back(detail::parse_number(cell, where));
            if (!rows.empty() && row.size() != rows.front().size())
                throw InputError(where + ": row has " + std::to_string(row.size()) + " values, expected " +
                                 std::to_string(rows.front().size()));
            rows.push_back(std::move(row));
        }
        if (!cue) throw InputError(path.string() + ": missing '# cue = <sample>' line");
        if (!label) throw InputError(path.string() + ": missing '# label = left|right' line");
        if (rows.size() != nch) {
            std::string hint;
            if (!rows.empty() && rows.front().size() == nch) hint = " (file looks transposed: rows must be channels)";
            throw InputError(path.string() + ": " + std::to_string(rows.size()) + " rows but " + std::to_string(nch) +
                             " channels declared" + hint);
        }
        trial.n_samples = rows.front().size();
        trial.cue_sample = *cue;
        trial.label = *label;
        trial.samples.reserve(nch * trial.n_samples);
        for (const auto& row : rows)
            for (double v : row) trial.samples.push_back(static_cast<float>(v));
        set.trials.push_back(std::move(trial));
    }
    set.validate();
    return set;
}

/// Writes the layout import_text reads: manifest.txt plus trial_NNN.txt.
/// Samples are printed with 9 significant digits, enough to round-trip a
/// float exactly.
inline void export_text(const TrialSet& set, const std::filesystem::path& dir)
{
    set.validate();
    std::filesystem::create_directories(dir);
    std::string manifest = "subject = " + set.subject + "\nsession = " + set.session + "\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "sample_rate = %.17g\n", set.sample_rate);
    manifest += buf;
    manifest += "channels =";
    for (const auto& c : set.channels) manifest += " " + c;
    manifest += "\n";
    for (std::size_t i = 0; i < set.trials.size(); ++i) {
        const auto& t = set.trials[i];
        std::snprintf(buf, sizeof buf, "trial_%03zu.txt", i);
        const std::string name = buf;
        manifest += "trial = " + name + "\n";
        std::string body = "# cue = " + std::to_string(t.cue_sample) + "\n# label = " + std::string(to_string(t.label)) +
                           "\n" + (t.rejected ? "# rejected = 1\n" : "");
        for (std::size_t c = 0; c < set.channels.size(); ++c) {
            for (std::size_t s = 0; s < t.n_samples; ++s) {
                std::snprintf(buf, sizeof buf, s ? " %.9g" : "%.9g", static_cast<double>(t.samples[c * t.n_samples + s]));
                body += buf;
            }
            body += "\n";
        }
        io::write_file(dir / name, body);
    }
    io::write_file(dir / kManifestName, manifest);
}

// --- tensor cache ----------------------------------------------------------

struct CachedTensor {
    featmap::FeatureTensor tensor;
    std::uint32_t trial_index = 0;
    bool rejected = false;

    friend bool operator==(const CachedTensor&, const CachedTensor&) = default;
};

struct TensorCache {
    std::uint64_t grid_hash = 0;
    std::uint64_t config_digest = 0;
    std::string subject;
    std::string session;
    std::vector<CachedTensor> entries;

    friend bool operator==(const TensorCache&, const TensorCache&) = default;
};

inline constexpr std::string_view kCacheMagic = "MITC";
inline constexpr std::uint32_t kCacheVersion = 1;

inline std::string encode_cache(const TensorCache& cache)
{
    io::ByteWriter w;
    w.bytes(kCacheMagic);
    w.u32(kCacheVersion);
    w.u64(cache.grid_hash);
    w.u64(cache.config_digest);
    w.str(cache.subject);
    w.str(cache.session);
    w.u32(static_cast<std::uint32_t>(cache.entries.size()));
    for (const auto& e : cache.entries) {
        if (e.tensor.planes.shape() != featmap::kTensorShape) throw InputError("cache: tensor shape mismatch");
        w.u32(e.trial_index);
        w.u8(encode_flags(e.tensor.label, e.rejected));
        for (double v : e.tensor.planes.values()) w.f64(v);
    }
    return w.take();
}

inline TensorCache decode_cache(std::string_view bytes, const io::ReadLimits& limits = {})
{
    io::ByteReader r(bytes);
    if (r.remaining() < 4 || r.bytes(4, "magic") != kCacheMagic)
        throw io::FormatError(io::FormatErrc::bad_magic, "not a MITC tensor cache");
    const auto version = r.u32("version");
    if (version != kCacheVersion)
        throw io::FormatError(io::FormatErrc::unsupported_version, "MITC version " + std::to_string(version));
    TensorCache c;
    c.grid_hash = r.u64("grid hash");
    c.config_digest = r.u64("config digest");
    c.subject = r.str("subject", limits);
    c.session = r.str("session", limits);
    const auto n = r.u32("tensor count");
    if (n > limits.max_items) throw io::FormatError(io::FormatErrc::limit_exceeded, "tensor count " + std::to_string(n));
    const std::size_t per = 4 + 1 + 8 * featmap::kTensorShape.size();
    r.need(per * n, "tensor records");
    c.entries.resize(n);
    for (auto& e : c.entries) {
        e.trial_index = r.u32("trial index");
        std::tie(e.tensor.label, e.rejected) = decode_flags(r.u8("flags"));
        for (double& v : e.tensor.planes.values()) v = r.f64("tensor");
    }
    r.expect_end("MITC cache");
    return c;
}

inline void cache_tensors(const TensorCache& cache, const std::filesystem::path& path)
{
    io::write_file(path, encode_cache(cache));
}

struct LoadedCache {
    TensorCache cache;
    bool stale = false;
    std::string warning;  // set when stale
};

/// Loads a cache; a grid-hash mismatch is reported as a stale warning rather
/// than an error.
inline LoadedCache load_tensors(const std::filesystem::path& path, std::uint64_t expected_grid_hash)
{
    LoadedCache out;
    try {
        out.cache = decode_cache(io::read_file(path));
    } catch (const io::FormatError& e) {
        throw io::FormatError(e.code(), path.string() + ": " + e.what());
    }
    if (out.cache.grid_hash != expected_grid_hash) {
        out.stale = true;
        out.warning = path.string() + ": built under grid " + hex64(out.cache.grid_hash) + ", current grid is " +
                      hex64(expected_grid_hash) + "; tensors may be stale";
    }
    return out;
}

} // namespace milrp::trialio
