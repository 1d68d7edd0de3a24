#pragma once

// Command-line front end: fetch -> preprocess -> pretrain -> adapt -> report.
//
// Settings resolve as flag > config file > per-activity defaults. The resolved
// settings of a command form its "effective config"; its FNV-1a hash is
// stamped into whatever the command writes. Paths and thread counts are left
// out of the hash since they do not change results.
//
// Exit codes: 0 success, 1 pipeline failure, 2 bad flags or config (nothing
// is written in that case).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fastbci/archive.hpp"
#include "fastbci/evaluation.hpp"
#include "fastbci/fetch.hpp"
#include "fastbci/hyperparams.hpp"
#include "fastbci/model_io.hpp"
#include "fastbci/preprocess.hpp"
#include "fastbci/report.hpp"
#include "fastbci/training.hpp"
#include "json.hpp"

namespace fastbci {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// "99-109", "3", "1-3,7,9" -> sorted unique ids.
inline std::vector<int> parse_subject_list(std::string_view text) {
    std::vector<int> ids;
    auto number = [&](std::string_view s) {
        int v = 0;
        const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (s.empty() || ec != std::errc{} || p != s.data() + s.size() || v < 1 || v > 109) {
            throw std::invalid_argument("bad subject id '" + std::string(s) + "' in '" + std::string(text) + "'");
        }
        return v;
    };
    for (auto part : report_detail::split(text, ',')) {
        const auto dash = part.find('-');
        if (dash == std::string_view::npos) {
            ids.push_back(number(part));
            continue;
        }
        const int a = number(part.substr(0, dash)), b = number(part.substr(dash + 1));
        if (a > b) {
            throw std::invalid_argument("empty subject range '" + std::string(part) + "'");
        }
        for (int i = a; i <= b; ++i) {
            ids.push_back(i);
        }
    }
    std::ranges::sort(ids);
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

inline std::string config_hash(const nlohmann::json& effective) { return io::hex64(io::fnv1a(effective.dump())); }

namespace cli_detail {

inline nlohmann::json load_config_file(const std::string& path) {
    if (path.empty()) {
        return nlohmann::json::object();
    }
    std::ifstream in(path);
    if (!in) {
        throw UsageError("cannot read config file " + path);
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError("config file " + path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) {
        throw UsageError("config file " + path + " must hold a JSON object");
    }
    return j;
}

inline const nlohmann::json& section(const nlohmann::json& j, const char* key) {
    static const nlohmann::json empty = nlohmann::json::object();
    if (!j.contains(key)) {
        return empty;
    }
    if (!j.at(key).is_object()) {
        throw UsageError(std::string("config: '") + key + "' must be an object");
    }
    return j.at(key);
}

inline void check_keys(const nlohmann::json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    for (const auto& [k, v] : obj.items()) {
        if (std::ranges::find_if(allowed, [&](const char* a) { return k == a; }) == allowed.end()) {
            throw UsageError("config: unknown key '" + k + "' in " + where);
        }
    }
}

template <class T>
void take(const nlohmann::json& obj, const char* key, T& dst) {
    if (!obj.contains(key)) {
        return;
    }
    try {
        const auto& v = obj.at(key);
        if constexpr (std::is_unsigned_v<T>) {
            if (!v.is_number_unsigned()) {
                throw UsageError(std::string("config: '") + key + "' must be a non-negative integer");
            }
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) {
                throw UsageError(std::string("config: '") + key + "' must be an integer");
            }
        }
        dst = v.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw UsageError(std::string("config: '") + key + "' has the wrong type");
    }
}

inline void apply(const nlohmann::json& j, MetaConfig& c) {
    check_keys(j,
               {"inner_lr", "meta_lr", "subjects_per_batch", "adapt_steps", "k_support", "k_query",
                "max_meta_iterations", "validation_patience", "eval_every", "validation_runs"},
               "pretrain.maml");
    take(j, "inner_lr", c.inner_lr);
    take(j, "meta_lr", c.meta_lr);
    take(j, "subjects_per_batch", c.subjects_per_batch);
    take(j, "adapt_steps", c.adapt_steps);
    take(j, "k_support", c.k_support);
    take(j, "k_query", c.k_query);
    take(j, "max_meta_iterations", c.max_meta_iterations);
    take(j, "validation_patience", c.validation_patience);
    take(j, "eval_every", c.eval_every);
    take(j, "validation_runs", c.validation_runs);
}

inline nlohmann::json to_json(const MetaConfig& c) {
    return {{"inner_lr", c.inner_lr},
            {"meta_lr", c.meta_lr},
            {"subjects_per_batch", c.subjects_per_batch},
            {"adapt_steps", c.adapt_steps},
            {"k_support", c.k_support},
            {"k_query", c.k_query},
            {"max_meta_iterations", c.max_meta_iterations},
            {"validation_patience", c.validation_patience},
            {"eval_every", c.eval_every},
            {"validation_runs", c.validation_runs}};
}

inline void apply(const nlohmann::json& j, TransferConfig& c) {
    check_keys(j, {"lr", "batch_size", "samples_per_class", "max_epochs", "validation_patience"}, "pretrain.transfer");
    take(j, "lr", c.lr);
    take(j, "batch_size", c.batch_size);
    take(j, "samples_per_class", c.samples_per_class);
    take(j, "max_epochs", c.max_epochs);
    take(j, "validation_patience", c.validation_patience);
}

inline nlohmann::json to_json(const TransferConfig& c) {
    return {{"lr", c.lr},
            {"batch_size", c.batch_size},
            {"samples_per_class", c.samples_per_class},
            {"max_epochs", c.max_epochs},
            {"validation_patience", c.validation_patience}};
}

/// Flag value, else FASTBCI_DATA_DIR/<sub>.
inline std::filesystem::path data_path(const std::string& flag, const char* sub, const char* flag_name) {
    if (!flag.empty()) {
        return flag;
    }
    if (const char* root = std::getenv("FASTBCI_DATA_DIR"); root && *root) {
        return std::filesystem::path(root) / sub;
    }
    throw UsageError(std::string(flag_name) + " is required (or set FASTBCI_DATA_DIR)");
}

inline std::string file_digest(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return io::hex64(io::fnv1a(os.str()));
}

struct Progress {
    std::ostream* err;
    std::string command;
    void operator()(const std::string& msg) const { *err << "fastbci " << command << ": " << msg << '\n' << std::flush; }
};

// ---------------------------------------------------------------------------

struct FetchArgs {
    std::string dest, subjects = "1-109", base_url = FetchOptions{}.base_url;
};

inline int run_fetch(const FetchArgs& a, std::ostream& out, const Progress& log) {
    const auto dest = data_path(a.dest, "raw", "--dest");
    std::vector<int> ids;
    try {
        ids = parse_subject_list(a.subjects);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (ids.back() - ids.front() + 1 != static_cast<int>(ids.size())) {
        throw UsageError("--subjects must be a contiguous range A-B");
    }
    const nlohmann::json effective = {{"command", "fetch"}, {"subjects", {ids.front(), ids.back()}}, {"base_url", a.base_url}};
    log("config " + config_hash(effective));
    FetchOptions opts;
    opts.base_url = a.base_url;
    opts.log = log;
    const FetchReport r = fetch_dataset(dest, ids.front(), ids.back(), opts);
    out << "downloaded " << r.downloaded << ", already complete " << r.skipped << ", repaired " << r.repaired
        << ", failed " << r.failed.size() << '\n';
    for (const auto& f : r.failed) {
        log("failed: " + f);
    }
    return r.failed.empty() ? 0 : 1;
}

struct PreprocessArgs {
    std::string raw, out, config, filter, subjects;
    std::optional<double> low, high, transition;
    std::size_t threads = 1;
};

inline int run_preprocess(const PreprocessArgs& a, std::ostream& out, const Progress& log) {
    const auto raw = data_path(a.raw, "raw", "--raw");
    const auto dest = data_path(a.out, "epochs", "--out");
    const auto file = load_config_file(a.config);
    check_keys(file, {"seed", "preprocess", "pretrain", "adapt"}, "config");
    const auto& sec = section(file, "preprocess");
    check_keys(sec, {"filter", "low_hz", "high_hz", "transition_hz", "subjects"}, "preprocess");

    std::string filter = "band_stop", subjects = "1-109";
    PreprocessOptions opts;
    take(sec, "filter", filter);
    take(sec, "low_hz", opts.low_hz);
    take(sec, "high_hz", opts.high_hz);
    take(sec, "transition_hz", opts.transition_hz);
    take(sec, "subjects", subjects);
    if (!a.filter.empty()) {
        filter = a.filter;
    }
    if (!a.subjects.empty()) {
        subjects = a.subjects;
    }
    opts.low_hz = a.low.value_or(opts.low_hz);
    opts.high_hz = a.high.value_or(opts.high_hz);
    opts.transition_hz = a.transition.value_or(opts.transition_hz);
    std::vector<int> ids;
    try {
        opts.mode = parse_filter_mode(filter);
        ids = parse_subject_list(subjects);
        design_fir(opts.mode, opts.low_hz, opts.high_hz, kSamplingRate, opts.transition_hz);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (ids.back() - ids.front() + 1 != static_cast<int>(ids.size())) {
        throw UsageError("preprocess subjects must be a contiguous range A-B");
    }
    opts.first_subject = ids.front();
    opts.last_subject = ids.back();
    const nlohmann::json effective = {{"command", "preprocess"},
                                      {"filter", filter},
                                      {"low_hz", opts.low_hz},
                                      {"high_hz", opts.high_hz},
                                      {"transition_hz", opts.transition_hz},
                                      {"subjects", {opts.first_subject, opts.last_subject}}};
    opts.config_hash = config_hash(effective);
    opts.threads = a.threads;
    opts.log = log;
    log("config " + opts.config_hash);

    const PreprocessReport r = preprocess(raw, dest, opts);
    for (const auto& rej : r.rejected) {
        log("rejected " + rej.path.string() + ": " + rej.reason);
    }
    out << "recordings " << r.recordings << ", epochs kept " << r.epochs_kept << ", dropped " << r.epochs_dropped
        << ", rejected recordings " << r.rejected.size() << ", archive entries " << r.manifest.entries.size() << '\n';
    return 0;
}

struct PretrainArgs {
    std::string strategy, norm, data, out, log, config;
    std::optional<int> activity;
    std::optional<std::uint64_t> seed;
    std::size_t threads = 1;
};

inline int run_pretrain(const PretrainArgs& a, std::ostream& out, const Progress& log) {
    if (a.out.empty()) {
        throw UsageError("--out is required");
    }
    const auto data_dir = data_path(a.data, "epochs", "--data");
    const auto file = load_config_file(a.config);
    check_keys(file, {"seed", "preprocess", "pretrain", "adapt"}, "config");
    const auto& sec = section(file, "pretrain");
    check_keys(sec, {"strategy", "activity", "norm", "dropout", "maml", "transfer"}, "pretrain");

    std::string strategy_name, norm_name = "layer";
    int activity = 0;
    std::uint64_t seed = 0;
    double dropout = ClassifierSpec{}.dropout_p;
    take(file, "seed", seed);
    take(sec, "strategy", strategy_name);
    take(sec, "activity", activity);
    take(sec, "norm", norm_name);
    take(sec, "dropout", dropout);
    if (!a.strategy.empty()) {
        strategy_name = a.strategy;
    }
    if (!a.norm.empty()) {
        norm_name = a.norm;
    }
    activity = a.activity.value_or(activity);
    seed = a.seed.value_or(seed);
    if (strategy_name.empty() || activity == 0) {
        throw UsageError("--strategy and --activity are required (flag or config file)");
    }

    PretrainStrategy strategy{};
    ClassifierSpec spec;
    MetaConfig meta;
    TransferConfig transfer;
    try {
        strategy = parse_strategy(strategy_name);
        spec.norm = parse_norm_kind(norm_name);
        meta = meta_config_for_activity(activity);
        transfer = transfer_config_for_activity(activity);
        apply(section(sec, "maml"), meta);
        apply(section(sec, "transfer"), transfer);
        if (!(dropout >= 0.0 && dropout < 1.0)) {
            throw std::invalid_argument("dropout must lie in [0, 1)");
        }
        spec.dropout_p = dropout;
        if (strategy == PretrainStrategy::maml) {
            meta.validate();
        } else {
            transfer.validate(spec.norm);
        }
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    const Manifest manifest = read_manifest(data_dir);
    spec.channels = manifest.info.channels;
    spec.time_points = manifest.info.time_points;
    const SubjectSplits splits = build_splits(manifest.subjects(activity));
    if (splits.train.empty()) {
        throw DataError("archive has no training subjects (1-87) for activity " + std::to_string(activity));
    }
    nlohmann::json effective = {{"command", "pretrain"},
                                {"strategy", strategy_name},
                                {"activity", activity},
                                {"norm", norm_name},
                                {"dropout", dropout},
                                {"seed", seed},
                                {"data_config_hash", manifest.info.config_hash},
                                {"channels", spec.channels},
                                {"time_points", spec.time_points}};
    effective["training"] = strategy == PretrainStrategy::maml ? to_json(meta) : to_json(transfer);
    const std::string hash = config_hash(effective);
    log("config " + hash);

    std::vector<int> wanted = splits.train;
    wanted.insert(wanted.end(), splits.validation.begin(), splits.validation.end());
    const ActivityData data = read_activity(data_dir, manifest, activity, wanted);
    log("loaded " + std::to_string(splits.train.size()) + " training and " + std::to_string(splits.validation.size()) +
        " validation subjects");

    const std::filesystem::path model_path = a.out;
    const std::filesystem::path log_path = std::filesystem::path(a.log.empty() ? a.out + ".log.csv" : a.log);
    PretrainOptions opts;
    opts.seed = seed;
    opts.threads = a.threads;
    opts.log_path = log_path;
    opts.progress = log;
    const PretrainResult result =
        strategy == PretrainStrategy::maml
            ? maml_pretrain(spec, data, splits.train, splits.validation, meta, opts)
            : transfer_pretrain(spec, data, splits.train, splits.validation, transfer, opts);

    Model model{spec, result.params.clone(), {strategy, activity, seed, 0.0, hash}};
    if (strategy == PretrainStrategy::maml) {
        model.provenance.inner_lr = meta.inner_lr;
    }
    save_model(model, model_path);
    nlohmann::json side = model_sidecar(model);
    side["config"] = effective;
    side["training"] = {{"log", log_path.filename().string()},
                        {"iterations_run", result.iterations_run},
                        {"best_iteration", result.best_iteration},
                        {"best_val_accuracy", result.best_val_accuracy},
                        {"stopped_early", result.stopped_early}};
    std::ofstream(sidecar_path(model_path), std::ios::trunc) << side.dump(2) << '\n';
    out << "model " << model_path.string() << " (" << (strategy == PretrainStrategy::maml ? "meta-iterations " : "epochs ")
        << result.iterations_run << ", best " << result.best_iteration << ", val acc " << result.best_val_accuracy
        << ")\n";
    return 0;
}

struct AdaptArgs {
    std::string model, subjects, out, data, config;
    std::optional<int> target_activity;
    std::optional<std::size_t> steps, runs;
    std::optional<std::uint64_t> seed;
    std::size_t threads = 1;
};

inline int run_adapt(const AdaptArgs& a, std::ostream& out, const Progress& log) {
    if (a.model.empty() || a.out.empty()) {
        throw UsageError("--model and --out are required");
    }
    const auto data_dir = data_path(a.data, "epochs", "--data");
    const auto file = load_config_file(a.config);
    check_keys(file, {"seed", "preprocess", "pretrain", "adapt"}, "config");
    const auto& sec = section(file, "adapt");
    check_keys(sec, {"target_activity", "subjects", "steps", "runs", "k_support", "k_query"}, "adapt");

    int target = 0;
    std::string subjects = "99-109";
    std::size_t steps = 10, runs = 100;
    std::uint64_t seed = 0;
    FinetuneSpec shape;
    take(file, "seed", seed);
    take(sec, "target_activity", target);
    take(sec, "subjects", subjects);
    take(sec, "steps", steps);
    take(sec, "runs", runs);
    take(sec, "k_support", shape.k_support);
    take(sec, "k_query", shape.k_query);
    target = a.target_activity.value_or(target);
    steps = a.steps.value_or(steps);
    runs = a.runs.value_or(runs);
    seed = a.seed.value_or(seed);
    if (!a.subjects.empty()) {
        subjects = a.subjects;
    }
    std::vector<int> ids;
    try {
        ids = parse_subject_list(subjects);
        if (target != 0) {
            check_activity(target);
        }
        if (runs < 1 || shape.k_support < 1 || shape.k_query < 1) {
            throw std::invalid_argument("runs, k_support and k_query must be >= 1");
        }
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    const Model model = load_model(a.model);
    const int source = model.provenance.activity;
    if (target == 0) {
        target = source;
    }
    FinetuneSpec ft = finetune_spec_for(model.provenance.strategy, source, target);
    if (model.provenance.strategy == PretrainStrategy::maml && source == target && model.provenance.inner_lr > 0.0) {
        ft.lr = model.provenance.inner_lr;
    }
    ft.steps = steps;
    ft.k_support = shape.k_support;
    ft.k_query = shape.k_query;

    const Manifest manifest = read_manifest(data_dir);
    const nlohmann::json effective = {{"command", "adapt"},
                                      {"model_config_hash", model.provenance.config_hash},
                                      {"model_digest", file_digest(a.model)},
                                      {"data_config_hash", manifest.info.config_hash},
                                      {"source_activity", source},
                                      {"target_activity", target},
                                      {"subjects", ids},
                                      {"steps", ft.steps},
                                      {"runs", runs},
                                      {"k_support", ft.k_support},
                                      {"k_query", ft.k_query},
                                      {"optimizer", to_string(ft.optimizer)},
                                      {"lr", ft.lr},
                                      {"seed", seed}};
    const std::string hash = config_hash(effective);
    log("config " + hash + ", fine-tuning with " + std::string(to_string(ft.optimizer)) + " at lr " +
        std::to_string(ft.lr));

    const ActivityData data = read_activity(data_dir, manifest, target, ids);
    const EvalOptions opts{runs, seed, a.threads};
    AdaptationReport rep = source == target
                               ? evaluate_fast_adaptability(model.spec, model.params, data, ids, ft, opts)
                               : cross_activity_adapt(model.spec, model.params, source, data, ids, ft, opts);
    rep.source_activity = source;
    rep.strategy = std::string(to_string(model.provenance.strategy));
    rep.config_hash = hash;
    for (int s : rep.skipped) {
        log("skipped subject " + std::to_string(s) + " (not enough trials)");
    }
    write_report(rep, a.out);
    out << "report " << a.out << ": iteration 0 test acc " << rep.mean_test.front() << ", iteration " << ft.steps
        << " test acc " << rep.mean_test.back() << " (" << rep.subjects.size() << " subjects, " << runs << " runs)\n";
    return 0;
}

struct ReportArgs {
    std::vector<std::string> inputs;
    std::string out;
    bool table = false, no_reference = false;
};

inline int run_report(const ReportArgs& a, std::ostream& out, const Progress& log) {
    std::vector<ReportSeries> all;
    for (const auto& in : a.inputs) {
        auto s = read_report_csv(in);
        all.insert(all.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    }
    std::vector<CompareRow> rows;
    if (a.table) {
        rows = compare_rows(all, !a.no_reference);  // throws before anything is written
    }
    for (const auto& f : render_plots(all, a.out)) {
        log("wrote " + f.string());
    }
    if (a.table) {
        const std::filesystem::path dir = a.out;
        std::ofstream(dir / "table.md", std::ios::trunc) << compare_markdown(rows);
        std::ofstream(dir / "table.csv", std::ios::trunc) << compare_csv(rows);
        out << compare_markdown(rows);
    }
    return 0;
}

}  // namespace cli_detail

/// Runs one subcommand. `args` excludes the program name.
inline int run_command(const std::vector<std::string>& args, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
    using namespace cli_detail;
    CLI::App app{"Fast-adaptability evaluation of EEG motor movement/imagery decoders", "fastbci"};
    app.require_subcommand(1, 1);
    std::size_t threads = default_thread_count();
    auto add_threads = [&](CLI::App* sub) {
        sub->add_option("--threads", threads, "worker threads (default: all cores)")->check(CLI::PositiveNumber);
    };

    FetchArgs fa;
    auto* fetch = app.add_subcommand("fetch", "download the EDF recordings");
    fetch->add_option("--dest", fa.dest, "destination directory (default $FASTBCI_DATA_DIR/raw)");
    fetch->add_option("--subjects", fa.subjects, "subject range A-B")->capture_default_str();
    fetch->add_option("--base-url", fa.base_url, "dataset root URL")->capture_default_str();

    PreprocessArgs pa;
    double low = 0, high = 0, transition = 0;
    auto* prep = app.add_subcommand("preprocess", "filter and epoch EDF recordings into an archive");
    prep->add_option("--raw", pa.raw, "EDF directory (default $FASTBCI_DATA_DIR/raw)");
    prep->add_option("--out", pa.out, "archive directory (default $FASTBCI_DATA_DIR/epochs)");
    prep->add_option("--filter", pa.filter, "band_stop (default) or band_pass")
        ->check(CLI::IsMember({"band_stop", "band_pass"}));
    auto* low_opt = prep->add_option("--low", low, "lower band edge, Hz (default 7)");
    auto* high_opt = prep->add_option("--high", high, "upper band edge, Hz (default 30)");
    auto* tr_opt = prep->add_option("--transition", transition, "transition width, Hz (default 2)");
    prep->add_option("--subjects", pa.subjects, "subject range A-B (default 1-109)");
    prep->add_option("--config", pa.config, "JSON config file")->check(CLI::ExistingFile);
    add_threads(prep);

    PretrainArgs ta;
    int activity = 0;
    std::uint64_t seed = 0;
    auto* pre = app.add_subcommand("pretrain", "pretrain a classifier with FOMAML or transfer learning");
    pre->add_option("--strategy", ta.strategy, "maml or transfer")->check(CLI::IsMember({"maml", "transfer"}));
    auto* act_opt = pre->add_option("--activity", activity, "activity 1..4")->check(CLI::Range(1, 4));
    pre->add_option("--norm", ta.norm, "batch or layer (default layer)")->check(CLI::IsMember({"batch", "layer"}));
    pre->add_option("--data", ta.data, "archive directory (default $FASTBCI_DATA_DIR/epochs)");
    pre->add_option("--out", ta.out, "model file");
    pre->add_option("--log", ta.log, "training log CSV (default <out>.log.csv)");
    pre->add_option("--config", ta.config, "JSON config file")->check(CLI::ExistingFile);
    auto* seed_opt = pre->add_option("--seed", seed, "base seed (default 0)");
    add_threads(pre);

    AdaptArgs aa;
    int target = 0;
    std::size_t steps = 0, runs = 0;
    std::uint64_t adapt_seed = 0;
    auto* adapt = app.add_subcommand("adapt", "run the fine-tuning protocol on held-out subjects");
    adapt->add_option("--model", aa.model, "model file")->check(CLI::ExistingFile);
    auto* tgt_opt = adapt->add_option("--target-activity", target, "activity 1..4 (default: the model's)")
                        ->check(CLI::Range(1, 4));
    adapt->add_option("--subjects", aa.subjects, "subjects, e.g. 99-109 (default)");
    auto* steps_opt = adapt->add_option("--steps", steps, "fine-tuning iterations (default 10)");
    auto* runs_opt = adapt->add_option("--runs", runs, "runs (default 100)")->check(CLI::PositiveNumber);
    adapt->add_option("--out", aa.out, "report CSV");
    adapt->add_option("--data", aa.data, "archive directory (default $FASTBCI_DATA_DIR/epochs)");
    adapt->add_option("--config", aa.config, "JSON config file")->check(CLI::ExistingFile);
    auto* aseed_opt = adapt->add_option("--seed", adapt_seed, "base seed (default 0)");
    add_threads(adapt);

    ReportArgs ra;
    auto* rep = app.add_subcommand("report", "plot report CSVs and tabulate before/after accuracy");
    rep->add_option("--in", ra.inputs, "report CSV files")->required()->check(CLI::ExistingFile);
    rep->add_option("--out", ra.out, "output directory")->required();
    rep->add_flag("--table", ra.table, "also write table.md / table.csv");
    rep->add_flag("--no-reference", ra.no_reference, "omit the published reference rows from the table");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }
    if (*low_opt) pa.low = low;
    if (*high_opt) pa.high = high;
    if (*tr_opt) pa.transition = transition;
    if (*act_opt) ta.activity = activity;
    if (*seed_opt) ta.seed = seed;
    if (*tgt_opt) aa.target_activity = target;
    if (*steps_opt) aa.steps = steps;
    if (*runs_opt) aa.runs = runs;
    if (*aseed_opt) aa.seed = adapt_seed;
    pa.threads = ta.threads = aa.threads = threads;

    const std::string name = app.get_subcommands().front()->get_name();
    const Progress log{&err, name};
    try {
        if (*fetch) return run_fetch(fa, out, log);
        if (*prep) return run_preprocess(pa, out, log);
        if (*pre) return run_pretrain(ta, out, log);
        if (*adapt) return run_adapt(aa, out, log);
        return run_report(ra, out, log);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n\n" << app.get_subcommands().front()->help();
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace fastbci
