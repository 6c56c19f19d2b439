// Seeded two-class EEG-like data with a lateralized 8-13 Hz power
// difference: left trials carry an extra oscillation on C3, right trials
// on C4. Used by tests, the acceptance suite and `milrp synth`.
#pragma once

#include "milrp/featmap.hpp"
#include "milrp/random.hpp"
#include "milrp/trialio.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

namespace milrp::synthetic {

struct Options {
    std::size_t subjects = 9;
    std::size_t trials_per_session = 144;  // split evenly between classes
    double sample_rate = 250.0;
    double trial_seconds = 4.0;
    double cue_seconds = 1.0;
    double noise_sd = 10.0;
    double effect_amplitude = 10.0;
    double min_freq_hz = 9.0;
    double max_freq_hz = 12.0;
    std::uint64_t seed = 1;
};

inline std::string subject_id(std::size_t i)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "A%02zu", i + 1);
    return buf;
}

inline trialio::TrialSet make_session(const Options& opt, std::size_t subject, const std::string& session,
                                      double subject_gain, double subject_noise, Rng& rng)
{
    trialio::TrialSet set;
    set.subject = subject_id(subject);
    set.session = session;
    set.sample_rate = opt.sample_rate;
    set.channels = featmap::default_channel_names();
    const std::size_t nch = set.channels.size();
    const std::size_t ns = static_cast<std::size_t>(std::llround(opt.trial_seconds * opt.sample_rate));
    const std::size_t cue = static_cast<std::size_t>(std::llround(opt.cue_seconds * opt.sample_rate));
    std::size_t c3 = 0, c4 = 0;
    for (std::size_t c = 0; c < nch; ++c) {
        if (set.channels[c] == "C3") c3 = c;
        if (set.channels[c] == "C4") c4 = c;
    }

    std::vector<Label> labels;
    for (std::size_t i = 0; i < opt.trials_per_session; ++i) labels.push_back(i % 2 == 0 ? Label::left : Label::right);
    rng.shuffle(labels);

    for (Label label : labels) {
        trialio::Trial t;
        t.n_samples = ns;
        t.cue_sample = cue;
        t.label = label;
        t.samples.resize(nch * ns);
        for (float& v : t.samples) v = static_cast<float>(opt.noise_sd * subject_noise * rng.normal());
        const std::size_t target = label == Label::left ? c3 : c4;
        const double f = rng.uniform(opt.min_freq_hz, opt.max_freq_hz);
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double amp = opt.effect_amplitude * subject_gain * rng.uniform(0.8, 1.2);
        for (std::size_t s = cue; s < ns; ++s) {
            const double time = static_cast<double>(s) / opt.sample_rate;
            t.samples[target * ns + s] +=
                static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * f * time + phase));
        }
        set.trials.push_back(std::move(t));
    }
    return set;
}

/// T and E sessions for every subject, in subject order.
inline std::vector<trialio::TrialSet> make_dataset(const Options& opt)
{
    Rng rng(opt.seed);
    std::vector<trialio::TrialSet> sets;
    for (std::size_t s = 0; s < opt.subjects; ++s) {
        const double gain = rng.uniform(0.7, 1.3);
        const double noise = rng.uniform(0.8, 1.2);
        for (const char* session : {"T", "E"}) sets.push_back(make_session(opt, s, session, gain, noise, rng));
    }
    return sets;
}

} // namespace milrp::synthetic
