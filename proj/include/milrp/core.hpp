// Shared vocabulary for the milrp toolkit: error types, class labels,
// the dense (rows x cols x planes) tensor used by the network, and a
// stable 64-bit hash for digests.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace milrp {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad caller-supplied data: malformed files, invalid parameters, shape
/// mismatches. The CLI maps these to its input-error exit code.
class InputError : public Error {
public:
    using Error::Error;
};

/// Something went wrong while computing on valid input.
class RuntimeFailure : public Error {
public:
    using Error::Error;
};

enum class Label : std::uint8_t { left = 0, right = 1 };

inline constexpr std::array<Label, 2> kLabels = {Label::left, Label::right};

inline constexpr std::size_t index_of(Label l) { return static_cast<std::size_t>(l); }

inline constexpr std::string_view to_string(Label l) { return l == Label::left ? "left" : "right"; }

inline Label parse_label(std::string_view s)
{
    if (s == "left") return Label::left;
    if (s == "right") return Label::right;
    throw InputError("unknown label '" + std::string(s) + "' (expected left or right)");
}

struct Shape3 {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t planes = 0;

    constexpr std::size_t size() const { return rows * cols * planes; }
    friend constexpr bool operator==(const Shape3&, const Shape3&) = default;
};

inline std::string to_string(const Shape3& s)
{
    std::ostringstream os;
    os << '(' << s.rows << 'x' << s.cols << ")x" << s.planes;
    return os.str();
}

/// Dense rows x cols x planes array, planes innermost (HWC order).
class Tensor3 {
public:
    Tensor3() = default;
    explicit Tensor3(Shape3 shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}

    const Shape3& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c, std::size_t k)
    {
        return data_[(r * shape_.cols + c) * shape_.planes + k];
    }
    double operator()(std::size_t r, std::size_t c, std::size_t k) const
    {
        return data_[(r * shape_.cols + c) * shape_.planes + k];
    }
    /// Pointer to the plane vector at (r, c).
    double* at(std::size_t r, std::size_t c) { return data_.data() + (r * shape_.cols + c) * shape_.planes; }
    const double* at(std::size_t r, std::size_t c) const
    {
        return data_.data() + (r * shape_.cols + c) * shape_.planes;
    }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    friend bool operator==(const Tensor3&, const Tensor3&) = default;

private:
    Shape3 shape_{};
    std::vector<double> data_;
};

/// FNV-1a, 64-bit. Used for grid and configuration digests; stable across
/// platforms and runs.
class Fnv1a {
public:
    Fnv1a& update(std::string_view bytes)
    {
        for (unsigned char ch : bytes) {
            state_ ^= ch;
            state_ *= 0x100000001b3ULL;
        }
        return *this;
    }
    std::uint64_t digest() const { return state_; }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string hex64(std::uint64_t v)
{
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

} // namespace milrp
