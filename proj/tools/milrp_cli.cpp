// milrp: one binary, one subcommand per pipeline stage.
//
// Exit codes: 0 success, 2 input error (bad flags, unreadable or malformed
// data, digest mismatch), 3 runtime failure, 4 evaluation finished with one
// or more failed folds.

#include "milrp/autonet.hpp"
#include "milrp/cspbase.hpp"
#include "milrp/harness.hpp"
#include "milrp/lrp.hpp"
#include "milrp/report.hpp"
#include "milrp/run_config.hpp"
#include "milrp/synthetic.hpp"
#include "milrp/topoviz.hpp"
#include "milrp/trialio.hpp"

#include "CLI11.hpp"

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using namespace milrp;

namespace {

enum ExitCode : int { kOk = 0, kInputError = 2, kRuntimeFailure = 3, kPartial = 4 };

void setup_logging()
{
    auto logger = spdlog::stderr_logger_st("milrp");
    logger->set_pattern("[%l] %v");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::info);
    if (const char* env = std::getenv("MI_LRP_LOG")) {
        const auto level = spdlog::level::from_str(env);
        // from_str maps unknown names to off; only accept a real "off"
        if (level == spdlog::level::off && std::string_view(env) != "off")
            spdlog::warn("MI_LRP_LOG={} is not a log level (trace, debug, info, warn, error, off)", env);
        else
            spdlog::set_level(level);
    }
}

// --- flag values ------------------------------------------------------------

struct Flags {
    RunConfig cfg;
    std::vector<std::string> bands_text;
    std::vector<double> window{0.5, 2.5};
    std::vector<double> range{-0.1, 0.1};
    std::string rule = "epsilon";
    double epsilon = 1e-6;
    std::size_t synth_trials = 144;
    bool synth_text = false;

    Flags() { cfg.jobs = 0; }

    void finalize()
    {
        if (!bands_text.empty()) {
            cfg.bands.clear();
            for (const auto& b : bands_text) {
                const auto dash = b.find('-');
                if (dash == std::string::npos) throw InputError("--bands: expected LOW-HIGH, got '" + b + "'");
                try {
                    cfg.bands.push_back({std::stod(b.substr(0, dash)), std::stod(b.substr(dash + 1))});
                } catch (const std::logic_error&) {
                    throw InputError("--bands: expected LOW-HIGH, got '" + b + "'");
                }
            }
            if (cfg.bands.size() != featmap::kBands)
                throw InputError("--bands: the feature tensor needs exactly 6 bands, got " +
                                 std::to_string(cfg.bands.size()));
        }
        cfg.window = {window[0], window[1]};
        if (!(cfg.window.t_start_s < cfg.window.t_end_s)) throw InputError("--window: start must precede end");
        cfg.range_lo = range[0];
        cfg.range_hi = range[1];
        if (!(cfg.range_lo < cfg.range_hi)) throw InputError("--range: LOW must be below HIGH");
        if (rule == "epsilon")
            cfg.rule = lrp::LrpRule::eps(epsilon);
        else if (rule == "alpha1beta0")
            cfg.rule = lrp::LrpRule::alpha_beta(1.0, 0.0);
        else if (rule == "alpha2beta1")
            cfg.rule = lrp::LrpRule::alpha_beta(2.0, 1.0);
        else
            throw InputError("--lrp-rule: expected epsilon, alpha1beta0 or alpha2beta1, got '" + rule + "'");
        cfg.rule.validate();
        if (cfg.jobs == 0) cfg.jobs = std::max(1u, std::thread::hardware_concurrency());
    }
};

// --- dataset discovery ----------------------------------------------------

/// A dataset root is a text session (manifest.txt), or a directory of
/// *.mits containers and text-session subdirectories. A "sessions"
/// subdirectory (what preprocess writes) is searched too.
std::vector<trialio::TrialSet> load_sessions(const fs::path& root)
{
    if (root.empty()) throw InputError("--dataset is required");
    if (!fs::is_directory(root)) throw InputError("dataset directory not found: " + root.string());
    if (fs::exists(root / trialio::kManifestName)) return {trialio::import_text(root)};

    std::vector<fs::path> entries;
    for (const auto& e : fs::directory_iterator(root)) entries.push_back(e.path());
    std::sort(entries.begin(), entries.end());
    std::vector<trialio::TrialSet> sets;
    for (const auto& p : entries) {
        if (fs::is_regular_file(p) && p.extension() == ".mits") {
            sets.push_back(trialio::read_trialset(p));
        } else if (fs::is_directory(p) && fs::exists(p / trialio::kManifestName)) {
            sets.push_back(trialio::import_text(p));
        } else if (fs::is_directory(p) && p.filename() == "sessions") {
            auto inner = load_sessions(p);
            sets.insert(sets.end(), std::make_move_iterator(inner.begin()), std::make_move_iterator(inner.end()));
        }
    }
    if (sets.empty())
        throw InputError("no sessions under " + root.string() + ": expected " + (root / trialio::kManifestName).string() +
                         ", *.mits containers, or subdirectories holding " + std::string(trialio::kManifestName));
    spdlog::debug("loaded {} sessions from {}", sets.size(), root.string());
    return sets;
}

std::vector<trialio::TrialSet> select_subjects(std::vector<trialio::TrialSet> sets, const std::vector<std::string>& keep)
{
    if (keep.empty()) return sets;
    for (const auto& s : keep)
        if (std::none_of(sets.begin(), sets.end(), [&](const auto& t) { return t.subject == s; }))
            throw InputError("unknown subject " + s);
    std::erase_if(sets, [&](const auto& t) { return std::find(keep.begin(), keep.end(), t.subject) == keep.end(); });
    return sets;
}

harness::PrepOptions prep_options(const RunConfig& cfg, bool include_rejected)
{
    harness::PrepOptions p;
    p.bands = cfg.bands;
    p.window = cfg.window;
    p.order = cfg.filter_order;
    p.include_rejected = include_rejected;
    return p;
}

/// Tensors for one session: taken from `<dataset>/cache/<id>.mitc` when it
/// exists, computed otherwise. A cache built under another preprocessing
/// configuration is an error.
harness::SessionData session_data(trialio::TrialSet set, const RunConfig& cfg, const fs::path& cache_dir)
{
    const auto path = cache_dir / (set.id() + ".mitc");
    const auto& grid = featmap::default_grid();
    if (!fs::exists(path)) return harness::prepare_session(std::move(set), prep_options(cfg, cfg.include_rejected), grid);

    auto loaded = trialio::load_tensors(path, grid.hash());
    if (loaded.cache.config_digest != cfg.preprocess_digest())
        throw InputError(path.string() + ": built under preprocessing digest " + hex64(loaded.cache.config_digest) +
                         ", current configuration is " + hex64(cfg.preprocess_digest()) +
                         "; rerun preprocess with the same --bands/--window");
    if (loaded.stale) {
        spdlog::warn("{}; recomputing", loaded.warning);
        return harness::prepare_session(std::move(set), prep_options(cfg, cfg.include_rejected), grid);
    }
    const auto& c = loaded.cache;
    if (c.subject != set.subject || c.session != set.session || c.entries.size() != set.trials.size())
        throw InputError(path.string() + ": cache does not match session " + set.id());
    harness::SessionData d;
    for (const auto& e : c.entries) {
        if (e.trial_index >= set.trials.size() || set.trials[e.trial_index].label != e.tensor.label)
            throw InputError(path.string() + ": cache entry for trial " + std::to_string(e.trial_index) +
                             " does not match the session");
        if (e.rejected && !cfg.include_rejected) continue;
        d.tensors.push_back(e.tensor);
        d.trial_index.push_back(e.trial_index);
    }
    spdlog::debug("{}: {} tensors from cache", set.id(), d.tensors.size());
    d.trials = std::move(set);
    return d;
}

harness::Dataset build_dataset(std::vector<trialio::TrialSet> sets, const RunConfig& cfg)
{
    const fs::path cache_dir = fs::path(cfg.dataset) / "cache";
    std::vector<harness::SessionData> prepared(sets.size());
    const auto errors = harness::parallel_for(sets.size(), cfg.jobs, [&](std::size_t i) {
        prepared[i] = session_data(std::move(sets[i]), cfg, cache_dir);
    });
    for (const auto& e : errors)
        if (!e.empty()) throw InputError(e);
    harness::Dataset ds;
    for (auto& p : prepared) {
        const auto key = p.key();
        if (!ds.emplace(key, std::move(p)).second) throw InputError("duplicate session " + key.id());
    }
    return ds;
}

fs::path require_out(const RunConfig& cfg)
{
    if (cfg.out.empty()) throw InputError("--out is required");
    fs::create_directories(cfg.out);
    return cfg.out;
}

// --- subcommands --------------------------------------------------------------

int cmd_synth(const Flags& f)
{
    const auto out = require_out(f.cfg);
    synthetic::Options opt;
    opt.seed = f.cfg.seed;
    opt.trials_per_session = f.synth_trials;
    const auto sets = synthetic::make_dataset(opt);
    for (const auto& s : sets) {
        if (f.synth_text)
            trialio::export_text(s, out / s.id());
        else
            trialio::write_trialset(s, out / (s.id() + ".mits"));
    }
    std::cout << "wrote " << sets.size() << " sessions of " << f.synth_trials << " trials to " << out.string() << "\n";
    return kOk;
}

int cmd_preprocess(const Flags& f)
{
    const auto& cfg = f.cfg;
    const auto sets = select_subjects(load_sessions(cfg.dataset), cfg.subjects);
    const auto out = require_out(cfg);
    fs::create_directories(out / "sessions");
    fs::create_directories(out / "cache");
    const auto& grid = featmap::default_grid();

    // Caches hold every trial; rejected ones are filtered when loading.
    std::vector<trialio::TensorCache> caches(sets.size());
    const auto errors = harness::parallel_for(sets.size(), cfg.jobs, [&](std::size_t i) {
        std::vector<std::size_t> kept;
        auto tensors = harness::tensors_for(sets[i], prep_options(cfg, true), grid, &kept);
        auto& c = caches[i];
        c.grid_hash = grid.hash();
        c.config_digest = cfg.preprocess_digest();
        c.subject = sets[i].subject;
        c.session = sets[i].session;
        for (std::size_t k = 0; k < tensors.size(); ++k)
            c.entries.push_back({std::move(tensors[k]), static_cast<std::uint32_t>(kept[k]), sets[i].trials[kept[k]].rejected});
    });
    for (const auto& e : errors)
        if (!e.empty()) throw InputError(e);

    std::printf("%-8s %8s %8s %8s\n", "session", "trials", "rejected", "tensors");
    for (std::size_t i = 0; i < sets.size(); ++i) {
        trialio::write_trialset(sets[i], out / "sessions" / (sets[i].id() + ".mits"));
        trialio::cache_tensors(caches[i], out / "cache" / (sets[i].id() + ".mitc"));
        const auto rejected = std::count_if(sets[i].trials.begin(), sets[i].trials.end(), [](const auto& t) { return t.rejected; });
        std::printf("%-8s %8zu %8td %8zu\n", sets[i].id().c_str(), sets[i].trials.size(), rejected, caches[i].entries.size());
    }
    std::printf("preprocess digest: %s\n", hex64(cfg.preprocess_digest()).c_str());
    return kOk;
}

enum class Stage { train, baseline, eval };

int cmd_experiment(const Flags& f, Stage stage)
{
    const auto& cfg = f.cfg;
    const auto ds = build_dataset(load_sessions(cfg.dataset), cfg);
    const auto out = require_out(cfg);
    const std::uint64_t digest = cfg.pipeline_digest();

    harness::ExperimentConfig ec;
    ec.base_seed = cfg.seed;
    ec.jobs = cfg.jobs;
    ec.only_subjects = cfg.subjects;
    ec.config_digest = hex64(digest);

    harness::ProposedRunner proposed;
    harness::BaselineRunner baseline;
    if (stage != Stage::baseline) {
        autonet::TrainConfig tc;
        tc.lr = cfg.lr;
        tc.iterations = cfg.iterations;
        tc.batch_size = cfg.batch_size;
        autonet::ModelMetadata meta;
        meta.bands = cfg.bands;
        meta.config_digest = digest;
        proposed = harness::cnn_runner(tc, meta);
    }
    if (stage != Stage::train) {
        csp::BaselineOptions bo;
        bo.window = cfg.window;
        bo.include_rejected = cfg.include_rejected;
        bo.csp.pairs = cfg.csp_pairs;
        baseline = harness::csp_runner(bo);
    }
    spdlog::info("running {} fold(s) on {} thread(s), config digest {}",
                 cfg.subjects.empty() ? harness::kSubjects : cfg.subjects.size(), cfg.jobs, ec.config_digest);
    const auto report = harness::run_experiment(ds, ec, proposed, baseline);

    if (proposed) fs::create_directories(out / "models");
    if (baseline) fs::create_directories(out / "baseline");
    for (const auto& fold : report.folds) {
        if (fold.model) autonet::write_model(*fold.model, out / "models" / (fold.subject + ".micn"));
        if (fold.baseline_model)
            io::write_file(out / "baseline" / (fold.subject + ".cspb"), csp::encode_baseline(*fold.baseline_model, digest));
        if (!fold.error.empty()) spdlog::error("fold {} failed: {}", fold.subject, fold.error);
    }
    const auto table = report::format_table(report);
    io::write_file(out / "report.txt", table);
    io::write_file(out / "report.json", report::format_json(report));
    std::cout << table;
    return report.partial ? kPartial : kOk;
}

std::string table_comment(const RunConfig& cfg)
{
    return "config-digest: " + cfg.digest_hex() + " rule: " + lrp::to_string(cfg.rule);
}

int cmd_explain(const Flags& f)
{
    const auto& cfg = f.cfg;
    const auto out = require_out(cfg);
    const auto models_dir = out / "models";
    if (!fs::is_directory(models_dir))
        throw InputError("no trained models in " + models_dir.string() + "; run train or eval with the same --out first");

    auto sets = select_subjects(load_sessions(cfg.dataset), cfg.subjects);
    std::erase_if(sets, [&](const auto& s) { return s.session != "E" || !fs::exists(models_dir / (s.subject + ".micn")); });
    if (sets.empty()) throw InputError("no evaluation session has a trained model in " + models_dir.string());
    fs::create_directories(out / "relevance");
    const auto& grid = featmap::default_grid();

    for (auto& set : sets) {
        const std::string subject = set.subject;
        const auto model_path = models_dir / (subject + ".micn");
        const auto model = autonet::read_model(model_path);
        if (model.meta.config_digest != cfg.pipeline_digest())
            throw InputError(model_path.string() + ": trained under config digest " + hex64(model.meta.config_digest) +
                             ", current configuration is " + cfg.digest_hex());
        if (model.meta.grid_hash != grid.hash()) throw InputError(model_path.string() + ": trained on a different channel grid");

        const auto data = session_data(std::move(set), cfg, fs::path(cfg.dataset) / "cache");
        const auto ex = harness::explain_session(model, data, cfg.rule, grid);
        io::write_file(out / "relevance" / (subject + ".tsv"), lrp::format_relevance_table(ex.maps, table_comment(cfg)));

        const auto agg = lrp::aggregate(ex.maps, ex.predictions, ex.labels, grid);
        std::vector<lrp::RelevanceMap> means;
        std::string counts = "counts:";
        for (const auto& a : agg) {
            counts += " " + std::string(to_string(a.label)) + "=" + std::to_string(a.count);
            if (!a.mean) {
                std::cout << subject << ": no correctly classified " << to_string(a.label)
                          << " trials; no aggregate for that class\n";
                continue;
            }
            auto m = *a.mean;
            m.source.trial_id = subject + "-mean";
            means.push_back(std::move(m));
        }
        io::write_file(out / "relevance" / (subject + ".aggregate.tsv"),
                       "# " + counts + "\n" + lrp::format_relevance_table(means, table_comment(cfg)));
        std::cout << subject << ": explained " << ex.maps.size() << " trials (" << counts.substr(8) << " correct)\n";
    }
    return kOk;
}

struct ClassMeans {
    std::array<std::map<std::string, double>, 2> values;
    std::array<std::size_t, 2> counts{0, 0};
};

ClassMeans read_aggregate(const fs::path& path, const RunConfig& cfg)
{
    const std::string text = io::read_file(path);
    const std::string expect = "# " + table_comment(cfg);
    if (text.find("config-digest: " + cfg.digest_hex()) == std::string::npos)
        throw InputError(path.string() + ": relevance table was produced under another configuration (expected '" +
                         expect + "')");
    ClassMeans m;
    const auto counts_at = text.find("# counts:");
    if (counts_at != std::string::npos) {
        std::istringstream in(text.substr(counts_at + 9, text.find('\n', counts_at) - counts_at - 9));
        std::string kv;
        while (in >> kv) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) continue;
            m.counts[index_of(parse_label(kv.substr(0, eq)))] = std::stoul(kv.substr(eq + 1));
        }
    }
    for (const auto& row : lrp::parse_relevance_table(text, path.string())) m.values[index_of(row.label)][row.channel] = row.value;
    return m;
}

topo::TopoPlot plot_of(const std::map<std::string, double>& values, const RunConfig& cfg, const std::string& title)
{
    std::vector<std::pair<std::string, double>> scores(values.begin(), values.end());
    auto p = topo::make_plot(scores, featmap::default_grid(), cfg.range_lo, cfg.range_hi);
    p.title = title;
    p.config_digest = cfg.digest_hex();
    return p;
}

int cmd_topoplot(const Flags& f)
{
    const auto& cfg = f.cfg;
    const auto out = require_out(cfg);
    const auto rel_dir = out / "relevance";
    if (!fs::is_directory(rel_dir)) throw InputError("no relevance tables in " + rel_dir.string() + "; run explain first");

    std::vector<fs::path> tables;
    for (const auto& e : fs::directory_iterator(rel_dir)) {
        const auto name = e.path().filename().string();
        if (name.ends_with(".aggregate.tsv")) tables.push_back(e.path());
    }
    std::sort(tables.begin(), tables.end());
    fs::create_directories(out / "figures");

    // Grand average: mean over every correctly classified trial of every
    // subject, i.e. subject means weighted by their counts.
    std::array<std::map<std::string, double>, 2> grand;
    std::array<std::size_t, 2> grand_n{0, 0};
    std::size_t figures = 0;
    for (const auto& path : tables) {
        const std::string subject = path.filename().string().substr(0, path.filename().string().find('.'));
        const auto m = read_aggregate(path, cfg);
        for (std::size_t c = 0; c < 2; ++c) {
            for (const auto& [ch, v] : m.values[c]) grand[c][ch] += v * static_cast<double>(m.counts[c]);
            grand_n[c] += m.values[c].empty() ? 0 : m.counts[c];
        }
        if (!cfg.subjects.empty() && std::find(cfg.subjects.begin(), cfg.subjects.end(), subject) == cfg.subjects.end())
            continue;
        bool missing = false;
        for (Label l : kLabels)
            if (m.values[index_of(l)].empty()) {
                std::cout << subject << ": no correctly classified " << to_string(l) << " trials; figure skipped\n";
                missing = true;
            }
        if (missing) continue;
        const auto svg = topo::side_by_side(plot_of(m.values[0], cfg, "left"), plot_of(m.values[1], cfg, "right"), subject);
        io::write_file(out / "figures" / (subject + ".svg"), svg);
        ++figures;
    }
    if (grand_n[0] > 0 && grand_n[1] > 0) {
        for (std::size_t c = 0; c < 2; ++c)
            for (auto& [_, v] : grand[c]) v /= static_cast<double>(grand_n[c]);
        io::write_file(out / "figures" / "grand_average.svg",
                       topo::side_by_side(plot_of(grand[0], cfg, "left"), plot_of(grand[1], cfg, "right"),
                                          "Grand average"));
        ++figures;
    } else {
        std::cout << "grand average skipped: a class has no correctly classified trials\n";
    }
    if (figures == 0) throw InputError("nothing to plot in " + rel_dir.string());
    std::cout << "wrote " << figures << " figure(s) to " << (out / "figures").string() << "\n";
    return kOk;
}

void add_common(CLI::App* sub, Flags& f, bool training)
{
    auto& c = f.cfg;
    sub->add_option("--dataset", c.dataset, "Dataset root: a text session, *.mits files, or preprocess output");
    sub->add_option("--out", c.out, "Output directory");
    sub->add_option("--seed", c.seed, "Base seed; fold i trains with seed + i")->capture_default_str();
    sub->add_option("--jobs", c.jobs, "Parallel tasks (0 = machine parallelism)")->capture_default_str();
    sub->add_option("--subjects", c.subjects, "Restrict to these subjects (e.g. A01 A08)");
    sub->add_option("--bands", f.bands_text, "Six LOW-HIGH bands in Hz (default 4-8 8-13 13-30 4-13 8-30 4-30)");
    sub->add_option("--window", f.window, "Segment window in seconds after the cue")->expected(2)->capture_default_str();
    sub->add_option("--include-rejected", c.include_rejected, "Keep trials flagged as artifacts")->capture_default_str();
    if (!training) return;
    sub->add_option("--lr", c.lr, "Adam learning rate")->capture_default_str();
    sub->add_option("--iterations", c.iterations, "Optimizer steps")->capture_default_str();
    sub->add_option("--batch-size", c.batch_size, "Mini-batch size")->capture_default_str();
    sub->add_option("--csp-pairs", c.csp_pairs, "CSP filter pairs")->capture_default_str();
    sub->add_option("--lrp-rule", f.rule, "epsilon, alpha1beta0 or alpha2beta1")->capture_default_str();
    sub->add_option("--epsilon", f.epsilon, "Stabilizer of the epsilon rule")->capture_default_str();
    sub->add_option("--range", f.range, "Color range of the topographies")->expected(2)->capture_default_str();
}

} // namespace

int main(int argc, char** argv)
{
    setup_logging();
    CLI::App app{"Interpretable motor-imagery decoding: filter bank, CNN, LRP, CSP baseline"};
    app.require_subcommand(1);
    Flags f;

    auto* synth = app.add_subcommand("synth", "Write a synthetic lateralized dataset (9 subjects, T and E sessions)");
    synth->add_option("--out", f.cfg.out, "Output directory")->required();
    synth->add_option("--seed", f.cfg.seed, "Generator seed")->capture_default_str();
    synth->add_option("--trials", f.synth_trials, "Trials per session")->capture_default_str();
    synth->add_flag("--text", f.synth_text, "Write text sessions instead of .mits containers");

    auto* preprocess = app.add_subcommand("preprocess", "Import sessions, write .mits containers and tensor caches");
    add_common(preprocess, f, false);
    auto* train = app.add_subcommand("train", "Train the CNN on every LOSO fold");
    add_common(train, f, true);
    auto* baseline = app.add_subcommand("baseline", "Fit and score CSP+LDA on every LOSO fold");
    add_common(baseline, f, true);
    auto* eval = app.add_subcommand("eval", "Full LOSO experiment: CNN and CSP+LDA");
    add_common(eval, f, true);
    auto* explain = app.add_subcommand("explain", "Relevance tables for the E sessions of trained fold models");
    add_common(explain, f, true);
    auto* topoplot = app.add_subcommand("topoplot", "Per-class relevance topographies from explain output");
    add_common(topoplot, f, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kInputError;
    }

    try {
        f.finalize();
        if (*synth) return cmd_synth(f);
        if (*preprocess) return cmd_preprocess(f);
        if (*train) return cmd_experiment(f, Stage::train);
        if (*baseline) return cmd_experiment(f, Stage::baseline);
        if (*eval) return cmd_experiment(f, Stage::eval);
        if (*explain) return cmd_explain(f);
        if (*topoplot) return cmd_topoplot(f);
    } catch (const InputError& e) {
        spdlog::error("{}", e.what());
        return kInputError;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kRuntimeFailure;
    }
    return kInputError;
}
