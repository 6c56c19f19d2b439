// Leave-one-subject-out evaluation: fold construction, per-session feature
// preparation, and the experiment runner that scores the CNN and the CSP
// baseline on every fold.
#pragma once

#include "milrp/autonet.hpp"
#include "milrp/core.hpp"
#include "milrp/cspbase.hpp"
#include "milrp/dsp.hpp"
#include "milrp/featmap.hpp"
#include "milrp/lrp.hpp"
#include "milrp/random.hpp"
#include "milrp/trialio.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace milrp::harness {

struct SessionKey {
    std::string subject;
    std::string session;  // "T" or "E"

    std::string id() const { return subject + session; }
    friend auto operator<=>(const SessionKey&, const SessionKey&) = default;
};

struct LosoFold {
    std::string evaluated_subject;
    std::size_t index = 0;  // position of the subject in the sorted subject list
    std::vector<SessionKey> train_members;
    std::vector<SessionKey> test_members;
};

inline constexpr std::size_t kSubjects = 9;

/// One fold per subject: test on its E session, train on both sessions of
/// every other subject.
inline std::vector<LosoFold> make_folds(std::vector<std::string> subjects, const std::set<SessionKey>& available)
{
    if (subjects.size() != kSubjects)
        throw InputError("make_folds needs exactly " + std::to_string(kSubjects) + " subjects, got " +
                         std::to_string(subjects.size()));
    std::sort(subjects.begin(), subjects.end());
    if (std::adjacent_find(subjects.begin(), subjects.end()) != subjects.end())
        throw InputError("make_folds: duplicate subject id");
    for (const auto& s : subjects)
        for (const char* sess : {"T", "E"})
            if (!available.contains({s, sess}))
                throw InputError("subject " + s + " is missing session " + sess);

    std::vector<LosoFold> folds;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        LosoFold f;
        f.evaluated_subject = subjects[i];
        f.index = i;
        f.test_members = {{subjects[i], "E"}};
        for (const auto& other : subjects) {
            if (other == subjects[i]) continue;
            f.train_members.push_back({other, "T"});
            f.train_members.push_back({other, "E"});
        }
        folds.push_back(std::move(f));
    }
    return folds;
}

/// Percentage of matching entries.
inline double accuracy(const std::vector<Label>& predictions, const std::vector<Label>& labels)
{
    return csp::percent_correct(predictions, labels);
}

/// Half-up rounding to two decimals, the reporting precision.
inline double round2(double percent) { return std::floor(percent * 100.0 + 0.5) / 100.0; }

inline std::string format2(double percent)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", round2(percent));
    return buf;
}

// --- session preparation -----------------------------------------------------

struct PrepOptions {
    std::vector<dsp::BandSpec> bands = dsp::default_bands();
    dsp::Window window{};
    int order = 4;
    bool include_rejected = true;
};

struct SessionData {
    trialio::TrialSet trials;
    std::vector<featmap::FeatureTensor> tensors;  // one per kept trial
    std::vector<std::size_t> trial_index;         // source trial of each tensor

    SessionKey key() const { return {trials.subject, trials.session}; }
};

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Exceptions are
/// captured per index and returned.
inline std::vector<std::string> parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn)
{
    std::vector<std::string> errors(n);
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                fn(i);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return errors;
}

inline std::vector<featmap::FeatureTensor> tensors_for(const trialio::TrialSet& set, const PrepOptions& opt,
                                                       const featmap::ChannelGrid& grid,
                                                       std::vector<std::size_t>* kept = nullptr)
{
    if (opt.bands.size() != featmap::kBands)
        throw InputError("feature tensors need exactly 6 bands, got " + std::to_string(opt.bands.size()));
    const auto bank = dsp::design_filter_bank(opt.bands, set.sample_rate, opt.order);
    std::vector<featmap::FeatureTensor> out;
    for (std::size_t i = 0; i < set.trials.size(); ++i) {
        const auto& t = set.trials[i];
        if (t.rejected && !opt.include_rejected) continue;
        out.push_back(featmap::trial_to_tensor(t.to_matrix(set.channels.size()), t.cue_sample, t.label, set.channels,
                                               bank, opt.window, grid, i));
        if (kept) kept->push_back(i);
    }
    return out;
}

inline SessionData prepare_session(trialio::TrialSet set, const PrepOptions& opt,
                                   const featmap::ChannelGrid& grid = featmap::default_grid())
{
    SessionData d;
    d.tensors = tensors_for(set, opt, grid, &d.trial_index);
    d.trials = std::move(set);
    return d;
}

using Dataset = std::map<SessionKey, SessionData>;

inline Dataset prepare_dataset(std::vector<trialio::TrialSet> sets, const PrepOptions& opt, std::size_t jobs = 1,
                               const featmap::ChannelGrid& grid = featmap::default_grid())
{
    std::vector<SessionData> prepared(sets.size());
    const auto errors = parallel_for(sets.size(), jobs, [&](std::size_t i) {
        prepared[i] = prepare_session(std::move(sets[i]), opt, grid);
    });
    for (std::size_t i = 0; i < errors.size(); ++i)
        if (!errors[i].empty()) throw InputError(errors[i]);
    Dataset ds;
    for (auto& p : prepared) {
        const auto key = p.key();
        if (!ds.emplace(key, std::move(p)).second) throw InputError("duplicate session " + key.id());
    }
    return ds;
}

inline std::vector<std::string> subjects_of(const Dataset& ds)
{
    std::set<std::string> s;
    for (const auto& [key, _] : ds) s.insert(key.subject);
    return {s.begin(), s.end()};
}

inline std::set<SessionKey> sessions_of(const Dataset& ds)
{
    std::set<SessionKey> s;
    for (const auto& [key, _] : ds) s.insert(key);
    return s;
}

// --- experiment ----------------------------------------------------------------

struct FoldContext {
    const LosoFold& fold;
    std::uint64_t seed;
    std::vector<const SessionData*> train;
    const SessionData& test;
};

struct ProposedOutcome {
    std::vector<Label> predictions;
    std::optional<autonet::CnnModel> model;
    std::vector<double> loss_trace;
};

using ProposedRunner = std::function<ProposedOutcome(const FoldContext&)>;
using BaselineRunner = std::function<csp::BaselineOutcome(const FoldContext&)>;

/// Trains the CNN on the fold's training tensors with the fold seed.
inline ProposedRunner cnn_runner(autonet::TrainConfig cfg, autonet::ModelMetadata meta = {})
{
    return [cfg, meta](const FoldContext& ctx) {
        std::vector<featmap::FeatureTensor> train;
        for (const auto* s : ctx.train) train.insert(train.end(), s->tensors.begin(), s->tensors.end());
        auto c = cfg;
        c.seed = ctx.seed;
        auto model = autonet::make_model(ctx.seed);
        model.meta = meta;
        model.meta.seed = ctx.seed;
        auto trained = autonet::train(std::move(model), train, c);
        ProposedOutcome out;
        for (const auto& t : ctx.test.tensors) out.predictions.push_back(autonet::predict(trained.model, t.planes).label);
        out.model = std::move(trained.model);
        out.loss_trace = std::move(trained.loss_trace);
        return out;
    };
}

inline BaselineRunner csp_runner(csp::BaselineOptions opt)
{
    return [opt](const FoldContext& ctx) {
        std::vector<const trialio::TrialSet*> train;
        for (const auto* s : ctx.train) train.push_back(&s->trials);
        return csp::baseline_pipeline(train, ctx.test.trials, opt);
    };
}

struct ExperimentConfig {
    std::uint64_t base_seed = 0;
    std::size_t jobs = 1;
    std::vector<std::string> only_subjects;  // empty: every fold
    std::string config_digest;
};

struct FoldResult {
    std::string subject;
    std::size_t fold_index = 0;
    std::uint64_t seed = 0;
    std::size_t train_trials = 0;
    std::size_t test_trials = 0;
    std::optional<double> proposed;  // percent, unrounded
    std::optional<double> baseline;
    std::vector<Label> labels;
    std::vector<Label> predictions;
    std::optional<autonet::CnnModel> model;
    std::optional<csp::BaselineModel> baseline_model;
    std::vector<double> loss_trace;
    std::string error;
};

struct ExperimentReport {
    std::vector<FoldResult> folds;  // sorted by subject
    std::string config_digest;
    bool partial = false;

    static std::optional<double> mean_of(const std::vector<FoldResult>& folds, std::optional<double> FoldResult::*field)
    {
        double s = 0.0;
        std::size_t n = 0;
        for (const auto& f : folds)
            if (f.*field) {
                s += *(f.*field);
                ++n;
            }
        if (n == 0) return std::nullopt;
        return s / static_cast<double>(n);
    }
    std::optional<double> proposed_mean() const { return mean_of(folds, &FoldResult::proposed); }
    std::optional<double> baseline_mean() const { return mean_of(folds, &FoldResult::baseline); }
};

/// Runs the selected folds, up to `jobs` in parallel. Each fold is
/// self-contained; a failing fold is recorded and the report marked partial.
inline ExperimentReport run_experiment(const Dataset& ds, const ExperimentConfig& cfg, const ProposedRunner& proposed,
                                       const BaselineRunner& baseline)
{
    const auto folds = make_folds(subjects_of(ds), sessions_of(ds));
    std::vector<const LosoFold*> selected;
    for (const auto& f : folds)
        if (cfg.only_subjects.empty() ||
            std::find(cfg.only_subjects.begin(), cfg.only_subjects.end(), f.evaluated_subject) != cfg.only_subjects.end())
            selected.push_back(&f);
    for (const auto& s : cfg.only_subjects)
        if (std::none_of(folds.begin(), folds.end(), [&](const LosoFold& f) { return f.evaluated_subject == s; }))
            throw InputError("unknown subject " + s);

    std::vector<FoldResult> results(selected.size());
    const auto errors = parallel_for(selected.size(), cfg.jobs, [&](std::size_t i) {
        const LosoFold& fold = *selected[i];
        FoldResult& r = results[i];
        r.subject = fold.evaluated_subject;
        r.fold_index = fold.index;
        r.seed = cfg.base_seed + fold.index;
        std::vector<const SessionData*> train;
        for (const auto& k : fold.train_members) {
            train.push_back(&ds.at(k));
            r.train_trials += ds.at(k).tensors.size();
        }
        const SessionData& test = ds.at(fold.test_members.front());
        r.test_trials = test.tensors.size();
        for (const auto& t : test.tensors) r.labels.push_back(t.label);
        const FoldContext ctx{fold, r.seed, train, test};

        if (proposed) {
            auto out = proposed(ctx);
            r.proposed = accuracy(out.predictions, r.labels);
            r.predictions = std::move(out.predictions);
            r.model = std::move(out.model);
            r.loss_trace = std::move(out.loss_trace);
        }
        if (baseline) {
            auto out = baseline(ctx);
            r.baseline = out.accuracy;
            r.baseline_model = std::move(out.model);
        }
    });

    ExperimentReport report;
    report.config_digest = cfg.config_digest;
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (!errors[i].empty()) {
            results[i] = FoldResult{};  // drop anything the fold filled in before failing
            results[i].subject = selected[i]->evaluated_subject;
            results[i].fold_index = selected[i]->index;
            results[i].seed = cfg.base_seed + selected[i]->index;
            results[i].error = errors[i];
            report.partial = true;
        }
    }
    std::sort(results.begin(), results.end(),
              [](const FoldResult& a, const FoldResult& b) { return a.subject < b.subject; });
    report.folds = std::move(results);
    return report;
}

/// Relevance maps of every test trial, explained for its true class.
struct FoldExplanation {
    std::vector<lrp::RelevanceMap> maps;
    std::vector<Label> predictions;
    std::vector<Label> labels;
};

inline FoldExplanation explain_session(const autonet::CnnModel& model, const SessionData& test, const lrp::LrpRule& rule,
                                       const featmap::ChannelGrid& grid = featmap::default_grid())
{
    FoldExplanation out;
    for (std::size_t i = 0; i < test.tensors.size(); ++i) {
        const auto& t = test.tensors[i];
        char id[64];
        std::snprintf(id, sizeof id, "%s-%03zu", test.trials.id().c_str(), test.trial_index[i]);
        out.maps.push_back(lrp::explain(model, t.planes, t.label, rule, grid, id));
        out.predictions.push_back(autonet::predict(model, t.planes).label);
        out.labels.push_back(t.label);
    }
    return out;
}

} // namespace milrp::harness
