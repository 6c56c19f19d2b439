// Little-endian byte encoding shared by the on-disk formats (trial
// containers, tensor caches, model files).
#pragma once

#include "milrp/core.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>

namespace milrp::io {

enum class FormatErrc {
    bad_magic,
    unsupported_version,
    truncated,
    channel_mismatch,
    limit_exceeded,
    bad_value,
    trailing_bytes,
};

inline std::string_view to_string(FormatErrc e)
{
    switch (e) {
    case FormatErrc::bad_magic: return "bad magic";
    case FormatErrc::unsupported_version: return "unsupported version";
    case FormatErrc::truncated: return "truncated";
    case FormatErrc::channel_mismatch: return "channel count mismatch";
    case FormatErrc::limit_exceeded: return "limit exceeded";
    case FormatErrc::bad_value: return "bad value";
    case FormatErrc::trailing_bytes: return "trailing bytes";
    }
    return "unknown";
}

class FormatError : public InputError {
public:
    FormatError(FormatErrc code, const std::string& what)
        : InputError(std::string(to_string(code)) + ": " + what), code_(code) {}
    FormatErrc code() const { return code_; }

private:
    FormatErrc code_;
};

/// Upper bounds applied to length fields before anything is allocated.
struct ReadLimits {
    std::uint32_t max_string = 4096;
    std::uint32_t max_channels = 1024;
    std::uint32_t max_items = 1u << 20;
    std::uint32_t max_samples = 1u << 24;
};

class ByteWriter {
public:
    void bytes(std::string_view b) { out_.append(b); }
    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) { put_le(v); }
    void u64(std::uint64_t v) { put_le(v); }
    void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }
    void str(std::string_view s)
    {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s);
    }

    const std::string& buffer() const { return out_; }
    std::string take() { return std::move(out_); }

private:
    template <typename U>
    void put_le(U v)
    {
        for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }

    std::string out_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    std::size_t remaining() const { return data_.size() - pos_; }
    std::size_t position() const { return pos_; }

    /// Throws a truncation error unless `n` more bytes are available.
    void need(std::size_t n, std::string_view what) const
    {
        if (remaining() < n)
            throw FormatError(FormatErrc::truncated, std::string(what) + ": expected " + std::to_string(pos_ + n) +
                                                         " bytes, file has " + std::to_string(data_.size()));
    }

    std::string_view bytes(std::size_t n, std::string_view what)
    {
        need(n, what);
        auto v = data_.substr(pos_, n);
        pos_ += n;
        return v;
    }
    std::uint8_t u8(std::string_view what) { return static_cast<std::uint8_t>(bytes(1, what)[0]); }
    std::uint32_t u32(std::string_view what) { return get_le<std::uint32_t>(what); }
    std::uint64_t u64(std::string_view what) { return get_le<std::uint64_t>(what); }
    float f32(std::string_view what) { return std::bit_cast<float>(get_le<std::uint32_t>(what)); }
    double f64(std::string_view what) { return std::bit_cast<double>(get_le<std::uint64_t>(what)); }

    std::string str(std::string_view what, const ReadLimits& limits)
    {
        const auto n = u32(what);
        if (n > limits.max_string)
            throw FormatError(FormatErrc::limit_exceeded,
                              std::string(what) + ": string length " + std::to_string(n) + " exceeds cap");
        return std::string(bytes(n, what));
    }

    void expect_end(std::string_view what) const
    {
        if (remaining() != 0)
            throw FormatError(FormatErrc::trailing_bytes,
                              std::string(what) + ": " + std::to_string(remaining()) + " unexpected trailing bytes");
    }

private:
    template <typename U>
    U get_le(std::string_view what)
    {
        const auto b = bytes(sizeof(U), what);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(b[i])) << (8 * i);
        return v;
    }

    std::string_view data_;
    std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes)
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw RuntimeFailure("write failed for " + path.string());
}

} // namespace milrp::io
