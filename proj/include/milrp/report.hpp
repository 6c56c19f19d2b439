// Table-style and JSON renderings of an ExperimentReport. Neither contains
// timestamps, so identical runs give identical bytes.
#pragma once

#include "milrp/harness.hpp"

#include "json.hpp"

#include <cstdio>
#include <string>

namespace milrp::report {

inline std::string cell(const std::optional<double>& v) { return v ? harness::format2(*v) : std::string("-"); }

inline std::string format_table(const harness::ExperimentReport& r)
{
    std::string out;
    char line[160];
    out += "config digest: " + r.config_digest + (r.partial ? "  (PARTIAL)" : "") + "\n\n";
    std::snprintf(line, sizeof line, "%-10s %10s %10s %8s %8s %8s\n", "Subjects", "CSP", "Proposed", "train", "test",
                  "seed");
    out += line;
    for (const auto& f : r.folds) {
        std::snprintf(line, sizeof line, "%-10s %10s %10s %8zu %8zu %8llu\n", f.subject.c_str(),
                      cell(f.baseline).c_str(), cell(f.proposed).c_str(), f.train_trials, f.test_trials,
                      static_cast<unsigned long long>(f.seed));
        out += line;
    }
    std::snprintf(line, sizeof line, "%-10s %10s %10s\n", "mean", cell(r.baseline_mean()).c_str(),
                  cell(r.proposed_mean()).c_str());
    out += line;
    for (const auto& f : r.folds)
        if (!f.error.empty()) out += "fold " + f.subject + " failed: " + f.error + "\n";
    return out;
}

inline nlohmann::ordered_json to_json(const harness::ExperimentReport& r)
{
    using nlohmann::ordered_json;
    const auto num = [](const std::optional<double>& v) -> ordered_json {
        return v ? ordered_json(harness::round2(*v)) : ordered_json(nullptr);
    };
    ordered_json j;
    j["config_digest"] = r.config_digest;
    j["partial"] = r.partial;
    ordered_json subjects = ordered_json::array();
    for (const auto& f : r.folds) {
        ordered_json s;
        s["subject"] = f.subject;
        s["fold_index"] = f.fold_index;
        s["seed"] = f.seed;
        s["train_trials"] = f.train_trials;
        s["test_trials"] = f.test_trials;
        s["proposed"] = num(f.proposed);
        s["baseline"] = num(f.baseline);
        s["error"] = f.error.empty() ? ordered_json(nullptr) : ordered_json(f.error);
        subjects.push_back(std::move(s));
    }
    j["subjects"] = std::move(subjects);
    j["mean"] = {{"proposed", num(r.proposed_mean())}, {"baseline", num(r.baseline_mean())}};
    return j;
}

inline std::string format_json(const harness::ExperimentReport& r) { return to_json(r).dump(2) + "\n"; }

} // namespace milrp::report
