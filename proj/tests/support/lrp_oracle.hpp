// Dense-layer view of a conv layer, the reference for conv relevance.
#pragma once

#include "milrp/autonet.hpp"
#include "milrp/random.hpp"

namespace milrp::testing {

// The conv layer written out as a dense layer over the flattened input:
// one output unit per (row, col, plane) of the conv output.
inline autonet::DenseLayer unroll(const autonet::ConvLayer& l, Shape3 in)
{
    const Shape3 os = l.output_shape(in);
    autonet::DenseLayer d(in.size(), os.size());
    for (std::size_t r = 0; r < os.rows; ++r)
        for (std::size_t c = 0; c < os.cols; ++c)
            for (std::size_t o = 0; o < os.planes; ++o) {
                const std::size_t k = (r * os.cols + c) * os.planes + o;
                d.bias[k] = l.bias[o];
                for (std::size_t i = 0; i < l.kh; ++i)
                    for (std::size_t j = 0; j < l.kw; ++j)
                        for (std::size_t p = 0; p < l.in_planes; ++p)
                            d.w(((r + i) * in.cols + (c + j)) * in.planes + p, k) = l.w(i, j, p, o);
            }
    return d;
}

inline autonet::ConvLayer random_conv(Rng& rng, std::size_t kh, std::size_t kw, std::size_t in, std::size_t out, bool bias)
{
    autonet::ConvLayer l(kh, kw, in, out);
    for (double& w : l.weights) w = rng.normal() * 0.4;
    if (bias)
        for (double& b : l.bias) b = rng.normal() * 0.2;
    return l;
}

} // namespace milrp::testing
