// Run configuration shared by the CLI subcommands, and its digests.
#pragma once

#include "milrp/core.hpp"
#include "milrp/dsp.hpp"
#include "milrp/lrp.hpp"

#include <cstdio>
#include <string>
#include <vector>

namespace milrp {

struct RunConfig {
    std::string dataset;
    std::string out;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::vector<std::string> subjects;
    std::vector<dsp::BandSpec> bands = dsp::default_bands();
    dsp::Window window{};
    int filter_order = 4;
    double lr = 1e-4;
    std::size_t iterations = 300;
    std::size_t batch_size = 64;
    lrp::LrpRule rule = lrp::LrpRule::eps(1e-6);
    std::size_t csp_pairs = 3;
    double range_lo = -0.1;
    double range_hi = 0.1;
    bool include_rejected = true;

    /// Covers only what feature tensors depend on.
    std::string preprocess_text() const
    {
        std::string s = "bands=";
        for (const auto& b : bands) s += g(b.low_hz) + ":" + g(b.high_hz) + ",";
        s += ";window=" + g(window.t_start_s) + ":" + g(window.t_end_s);
        s += ";order=" + std::to_string(filter_order);
        return s;
    }

    /// Every field that changes a trained model or a reported accuracy.
    /// Paths, parallelism, fold selection and presentation settings (LRP
    /// rule, color range) are excluded.
    std::string pipeline_text() const
    {
        return preprocess_text() + ";lr=" + g(lr) + ";iterations=" + std::to_string(iterations) +
               ";batch=" + std::to_string(batch_size) + ";seed=" + std::to_string(seed) +
               ";csp_pairs=" + std::to_string(csp_pairs) + ";include_rejected=" + (include_rejected ? "1" : "0");
    }

    std::uint64_t preprocess_digest() const { return Fnv1a().update(preprocess_text()).digest(); }
    std::uint64_t pipeline_digest() const { return Fnv1a().update(pipeline_text()).digest(); }
    std::string digest_hex() const { return hex64(pipeline_digest()); }

private:
    static std::string g(double v)
    {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return buf;
    }
};

} // namespace milrp
