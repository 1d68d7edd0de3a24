#pragma once

// Fast-adaptability protocol: fine-tune a copy of a pretrained model for a few
// full-support-batch steps on a held-out subject's episode, tracking train and
// test accuracy after every step, repeated over runs and subjects.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fastbci/dataset.hpp"
#include "fastbci/hyperparams.hpp"
#include "fastbci/model.hpp"
#include "fastbci/ops.hpp"
#include "fastbci/optim.hpp"
#include "fastbci/parallel.hpp"
#include "json.hpp"

namespace fastbci {

/// Fraction of rows whose argmax matches the label; ties go to the lower index.
inline double accuracy(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size() || logits.dim(0) == 0) {
        throw ShapeError("accuracy: logits must be (B, classes) with B = number of labels >= 1");
    }
    const std::size_t k = logits.dim(1);
    const auto v = logits.data();
    std::size_t correct = 0;
    for (std::size_t b = 0; b < labels.size(); ++b) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c) {
            if (v[b * k + c] > v[b * k + best]) {
                best = c;
            }
        }
        correct += static_cast<int>(best) == labels[b] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

/// Eval-mode accuracy of `params` on a batch.
inline double evaluate_accuracy(const ClassifierSpec& spec, ParamSet& params, const LabeledBatch& batch) {
    Rng unused(0);
    return accuracy(forward_logits(spec, params, batch.inputs, false, unused), batch.labels);
}

/// Owns a fine-tuned copy plus its optimizer state, so training can be
/// resumed: step(k) then step(k') equals step(k + k').
class Finetuner {
public:
    Finetuner(ClassifierSpec spec, const ParamSet& pretrained, const FinetuneSpec& ft, Rng rng)
        : spec_(std::move(spec)), params_(pretrained.clone()), optimizer_(ft.optimizer, ft.lr), rng_(rng) {}

    /// One optimizer step per call iteration on the full batch; dropout and
    /// batch statistics in training mode. Returns the last loss.
    double step(const LabeledBatch& support, std::size_t steps = 1) {
        double loss_value = 0.0;
        for (std::size_t i = 0; i < steps; ++i) {
            params_.zero_grad();
            Tensor loss = softmax_cross_entropy(forward_logits(spec_, params_, support.inputs, true, rng_), support.labels);
            loss.backward();
            optimizer_.step(params_);
            loss_value = loss.item();
        }
        return loss_value;
    }

    double accuracy_on(const LabeledBatch& batch) { return evaluate_accuracy(spec_, params_, batch); }

    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

private:
    ClassifierSpec spec_;
    ParamSet params_;
    Optimizer optimizer_;
    Rng rng_;
};

struct Curve {
    std::vector<double> train_acc;  // steps + 1 points, index 0 = before adaptation
    std::vector<double> test_acc;
};

inline Curve finetune_and_track(const ClassifierSpec& spec, const ParamSet& pretrained, const Episode& episode,
                                const FinetuneSpec& ft, Rng& rng) {
    ft.validate();
    Finetuner tuner(spec, pretrained, ft, rng);
    Curve c;
    c.train_acc.reserve(ft.steps + 1);
    c.test_acc.reserve(ft.steps + 1);
    c.train_acc.push_back(tuner.accuracy_on(episode.support));
    c.test_acc.push_back(tuner.accuracy_on(episode.query));
    for (std::size_t i = 0; i < ft.steps; ++i) {
        tuner.step(episode.support);
        c.train_acc.push_back(tuner.accuracy_on(episode.support));
        c.test_acc.push_back(tuner.accuracy_on(episode.query));
    }
    return c;
}

struct SubjectCurve {
    std::size_t run = 0;
    int subject = 0;
    Curve curve;
};

struct AdaptationReport {
    int source_activity = 0;
    int target_activity = 0;
    std::string strategy;  // maml | transfer | none
    std::string norm;      // batch | layer
    FinetuneSpec finetune;
    std::size_t runs = 0;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::vector<int> subjects;  // evaluated, ascending
    std::vector<int> skipped;   // requested but lacking data
    std::vector<double> mean_test, std_test, mean_train, std_train;
    std::vector<SubjectCurve> per_subject;  // (run, subject) order

    std::size_t points() const { return mean_test.size(); }
};

struct EvalOptions {
    std::size_t runs = 100;
    std::uint64_t base_seed = 0;
    std::size_t threads = 1;
};

namespace eval_detail {

// Population mean/std (std is 0 for a single run).
inline void mean_std(std::span<const double> xs, double& mean, double& sd) {
    double s = 0.0;
    for (double x : xs) {
        s += x;
    }
    mean = s / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) {
        ss += (x - mean) * (x - mean);
    }
    sd = std::sqrt(ss / static_cast<double>(xs.size()));
}

}  // namespace eval_detail

/// Runs the protocol on `subjects` of `target`. For run r and subject s the
/// episode and dropout streams come from derive_seed(base_seed, r, s). Curves
/// are averaged over subjects within a run, then mean/std over runs.
inline AdaptationReport evaluate_fast_adaptability(const ClassifierSpec& spec, const ParamSet& pretrained,
                                                   const ActivityData& target, std::span<const int> subjects,
                                                   const FinetuneSpec& ft, const EvalOptions& opts) {
    ft.validate();
    if (opts.runs < 1) {
        throw std::invalid_argument("runs must be >= 1");
    }
    if (target.channels != spec.channels || target.time_points != spec.time_points) {
        throw DataError("target data shape does not match the model input");
    }
    AdaptationReport rep;
    rep.target_activity = target.activity;
    rep.finetune = ft;
    rep.runs = opts.runs;
    rep.seed = opts.base_seed;
    rep.norm = std::string(to_string(spec.norm));
    std::vector<int> ids(subjects.begin(), subjects.end());
    std::ranges::sort(ids);
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    for (int id : ids) {
        auto it = target.subjects.find(id);
        if (it == target.subjects.end() || it->second.min_class_count() < ft.k_support + ft.k_query) {
            rep.skipped.push_back(id);
        } else {
            rep.subjects.push_back(id);
        }
    }
    if (rep.subjects.empty()) {
        throw InsufficientTrialsError("no requested subject has enough trials for the protocol");
    }

    const std::size_t n_sub = rep.subjects.size();
    const std::size_t jobs = opts.runs * n_sub;
    rep.per_subject.resize(jobs);
    parallel_for(jobs, opts.threads, [&](std::size_t job) {
        const std::size_t run = job / n_sub;
        const int subject = rep.subjects[job % n_sub];
        Rng rng(derive_seed(opts.base_seed, run, static_cast<std::uint64_t>(subject)));
        const Episode ep =
            sample_episode(target.subject(subject), ft.k_support, ft.k_query, rng, spec.channels, spec.time_points);
        rep.per_subject[job] = {run, subject, finetune_and_track(spec, pretrained, ep, ft, rng)};
    });

    const std::size_t points = ft.steps + 1;
    for (auto* v : {&rep.mean_test, &rep.std_test, &rep.mean_train, &rep.std_train}) {
        v->assign(points, 0.0);
    }
    std::vector<double> run_test(opts.runs), run_train(opts.runs);
    for (std::size_t it = 0; it < points; ++it) {
        for (std::size_t run = 0; run < opts.runs; ++run) {
            double te = 0.0, tr = 0.0;
            for (std::size_t s = 0; s < n_sub; ++s) {
                te += rep.per_subject[run * n_sub + s].curve.test_acc[it];
                tr += rep.per_subject[run * n_sub + s].curve.train_acc[it];
            }
            run_test[run] = te / static_cast<double>(n_sub);
            run_train[run] = tr / static_cast<double>(n_sub);
        }
        eval_detail::mean_std(run_test, rep.mean_test[it], rep.std_test[it]);
        eval_detail::mean_std(run_train, rep.mean_train[it], rep.std_train[it]);
    }
    return rep;
}

/// Same protocol on another activity's data; the source must differ.
inline AdaptationReport cross_activity_adapt(const ClassifierSpec& spec, const ParamSet& pretrained, int source_activity,
                                             const ActivityData& target, std::span<const int> subjects,
                                             const FinetuneSpec& ft, const EvalOptions& opts) {
    if (source_activity == target.activity) {
        throw std::invalid_argument("cross-activity adaptation needs different source and target activities");
    }
    AdaptationReport rep = evaluate_fast_adaptability(spec, pretrained, target, subjects, ft, opts);
    rep.source_activity = source_activity;
    return rep;
}

inline constexpr const char* kReportHeader =
    "source_activity,target_activity,strategy,norm,iteration,mean_test_acc,std_test_acc,mean_train_acc,"
    "std_train_acc,runs,subjects,seed";

/// Subject list as "99-109" when contiguous, else ids joined by ';'.
inline std::string format_subjects(std::span<const int> ids) {
    if (ids.empty()) {
        return "";
    }
    bool contiguous = true;
    for (std::size_t i = 1; i < ids.size(); ++i) {
        contiguous = contiguous && ids[i] == ids[i - 1] + 1;
    }
    if (contiguous && ids.size() > 1) {
        return std::to_string(ids.front()) + "-" + std::to_string(ids.back());
    }
    std::string out;
    for (int id : ids) {
        out += (out.empty() ? "" : ";") + std::to_string(id);
    }
    return out;
}

inline std::string report_csv(const AdaptationReport& r) {
    std::ostringstream os;
    os << kReportHeader << '\n';
    os << std::setprecision(17);
    const std::string subjects = format_subjects(r.subjects);
    for (std::size_t i = 0; i < r.points(); ++i) {
        os << r.source_activity << ',' << r.target_activity << ',' << r.strategy << ',' << r.norm << ',' << i << ','
           << r.mean_test[i] << ',' << r.std_test[i] << ',' << r.mean_train[i] << ',' << r.std_train[i] << ','
           << r.runs << ',' << subjects << ',' << r.seed << '\n';
    }
    return os.str();
}

/// Companion metadata written next to a report as <file>.meta.json.
inline nlohmann::json report_metadata(const AdaptationReport& r) {
    nlohmann::json per_subject = nlohmann::json::array();
    for (const auto& s : r.per_subject) {
        per_subject.push_back({{"run", s.run}, {"subject", s.subject}, {"test_acc", s.curve.test_acc},
                               {"train_acc", s.curve.train_acc}});
    }
    return {{"config_hash", r.config_hash},
            {"seed", r.seed},
            {"source_activity", r.source_activity},
            {"target_activity", r.target_activity},
            {"strategy", r.strategy},
            {"norm", r.norm},
            {"finetune",
             {{"optimizer", to_string(r.finetune.optimizer)},
              {"lr", r.finetune.lr},
              {"steps", r.finetune.steps},
              {"k_support", r.finetune.k_support},
              {"k_query", r.finetune.k_query}}},
            {"aggregation", "mean over subjects within each run, then population mean/std over runs"},
            {"runs", r.runs},
            {"subjects", r.subjects},
            {"skipped_subjects", r.skipped},
            {"per_subject_curves", per_subject}};
}

inline std::filesystem::path report_meta_path(const std::filesystem::path& csv) {
    return std::filesystem::path(csv.string() + ".meta.json");
}

inline void write_report(const AdaptationReport& r, const std::filesystem::path& csv) {
    if (csv.has_parent_path()) {
        std::filesystem::create_directories(csv.parent_path());
    }
    std::ofstream out(csv, std::ios::trunc);
    out << report_csv(r);
    std::ofstream meta(report_meta_path(csv), std::ios::trunc);
    meta << report_metadata(r).dump(2) << '\n';
    if (!out || !meta) {
        throw std::runtime_error("cannot write report " + csv.string());
    }
}

}  // namespace fastbci
