#pragma once

// Pretraining strategies: first-order MAML over per-subject episodes, and
// plain minibatch transfer learning on pooled subjects.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fastbci/dataset.hpp"
#include "fastbci/evaluation.hpp"
#include "fastbci/hyperparams.hpp"
#include "fastbci/model.hpp"
#include "fastbci/ops.hpp"
#include "fastbci/optim.hpp"
#include "fastbci/parallel.hpp"

namespace fastbci {

/// phi = theta after `steps` plain gradient-descent steps on loss(phi).
/// theta itself is never modified.
template <class LossFn>
ParamSet inner_adapt(const ParamSet& theta, LossFn&& loss, double alpha, std::size_t steps) {
    if (!(alpha >= 0.0)) {
        throw std::invalid_argument("inner learning rate must be non-negative");
    }
    ParamSet phi = theta.clone();
    for (std::size_t i = 0; i < steps; ++i) {
        phi.zero_grad();
        Tensor l = loss(phi);
        l.backward();
        sgd_step(phi, alpha);
    }
    return phi;
}

/// Classifier version: full-batch cross-entropy on the support set, training mode.
inline ParamSet inner_adapt(const ClassifierSpec& spec, const ParamSet& theta, const LabeledBatch& support, double alpha,
                            std::size_t steps, Rng& rng) {
    if (support.size() == 0) {
        throw DataError("inner_adapt: empty support set");
    }
    return inner_adapt(
        theta,
        [&](ParamSet& p) { return softmax_cross_entropy(forward_logits(spec, p, support.inputs, true, rng), support.labels); },
        alpha, steps);
}

/// One subject's contribution to a meta-step. Both losses are evaluated on
/// the parameters passed in; any randomness lives inside the closures.
struct MetaTask {
    int subject = 0;
    std::function<Tensor(ParamSet&)> support_loss;
    std::function<Tensor(ParamSet&)> query_loss;
};

inline MetaTask make_episode_task(const ClassifierSpec& spec, const Episode& episode, Rng rng) {
    auto stream = std::make_shared<Rng>(rng);
    MetaTask t;
    t.subject = episode.subject;
    t.support_loss = [spec, &episode, stream](ParamSet& p) {
        return softmax_cross_entropy(forward_logits(spec, p, episode.support.inputs, true, *stream), episode.support.labels);
    };
    t.query_loss = [spec, &episode, stream](ParamSet& p) {
        return softmax_cross_entropy(forward_logits(spec, p, episode.query.inputs, true, *stream), episode.query.labels);
    };
    return t;
}

/// First-order meta-update: adapt a copy per task, take the query-loss
/// gradient at the adapted point, average over tasks (summed in subject-id
/// order, then divided) and hand the average to the meta-optimizer.
/// Running statistics of adapted copies are averaged back into theta the same
/// way. Returns the mean query loss.
inline double fomaml_meta_step(ParamSet& theta, std::span<const MetaTask> tasks, double inner_lr, std::size_t adapt_steps,
                               Optimizer& meta_optimizer, std::size_t threads = 1) {
    if (tasks.empty()) {
        throw std::invalid_argument("fomaml_meta_step: no tasks");
    }
    std::vector<std::size_t> order(tasks.size());
    std::iota(order.begin(), order.end(), 0);
    std::ranges::stable_sort(order, {}, [&](std::size_t i) { return tasks[i].subject; });

    struct Outcome {
        std::vector<std::vector<double>> grads;
        std::vector<std::vector<double>> buffers;
        double loss = 0.0;
    };
    std::vector<Outcome> out(tasks.size());
    parallel_for(tasks.size(), threads, [&](std::size_t i) {
        const MetaTask& task = tasks[i];
        ParamSet phi = inner_adapt(theta, task.support_loss, inner_lr, adapt_steps);
        phi.zero_grad();
        Tensor q = task.query_loss(phi);
        q.backward();
        Outcome& o = out[i];
        o.loss = q.item();
        for (const auto& [name, t] : phi.params()) {
            const auto g = t.grad();
            o.grads.emplace_back(g.begin(), g.end());
        }
        for (const auto& [name, t] : phi.buffers()) {
            o.buffers.emplace_back(t.data().begin(), t.data().end());
        }
    });

    const double n = static_cast<double>(tasks.size());
    auto& params = theta.params();
    for (std::size_t k = 0; k < params.size(); ++k) {
        std::vector<double> avg(params[k].second.numel(), 0.0);
        for (std::size_t i : order) {
            for (std::size_t j = 0; j < avg.size(); ++j) {
                avg[j] += out[i].grads[k][j];
            }
        }
        for (double& v : avg) {
            v /= n;
        }
        params[k].second.set_grad(avg);
    }
    meta_optimizer.step(theta);
    auto& buffers = theta.buffers();
    for (std::size_t k = 0; k < buffers.size(); ++k) {
        auto dst = buffers[k].second.mutable_data();
        std::ranges::fill(dst, 0.0);
        for (std::size_t i : order) {
            for (std::size_t j = 0; j < dst.size(); ++j) {
                dst[j] += out[i].buffers[k][j];
            }
        }
        for (double& v : dst) {
            v /= n;
        }
    }
    double loss = 0.0;
    for (std::size_t i : order) {
        loss += out[i].loss;
    }
    return loss / n;
}

/// One minibatch optimizer step on cross-entropy; returns the batch loss.
inline double transfer_step(const ClassifierSpec& spec, ParamSet& params, const LabeledBatch& batch, Optimizer& opt,
                            Rng& rng) {
    params.zero_grad();
    Tensor loss = softmax_cross_entropy(forward_logits(spec, params, batch.inputs, true, rng), batch.labels);
    loss.backward();
    opt.step(params);
    return loss.item();
}

/// One shuffled pass over `pool`; returns the mean batch loss. A trailing
/// batch of one sample is skipped for batch-norm models.
inline double transfer_epoch(const ClassifierSpec& spec, ParamSet& params, std::vector<const Trial*>& pool,
                             std::size_t batch_size, Optimizer& opt, Rng& rng) {
    if (pool.empty()) {
        throw DataError("transfer training pool is empty");
    }
    rng.shuffle(std::span<const Trial*>(pool));
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < pool.size(); start += batch_size) {
        const std::size_t len = std::min(batch_size, pool.size() - start);
        if (len < 2 && spec.norm == NormKind::batch) {
            continue;
        }
        const LabeledBatch batch =
            make_batch(std::span<const Trial* const>(pool.data() + start, len), spec.channels, spec.time_points);
        total += transfer_step(spec, params, batch, opt, rng);
        ++batches;
    }
    return batches ? total / static_cast<double>(batches) : std::numeric_limits<double>::quiet_NaN();
}

struct TrainingLogRow {
    std::size_t iteration = 0;
    double loss = 0.0;
    double val_accuracy = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t seed = 0;
    double wall_ms = 0.0;
};

inline constexpr const char* kTrainingLogHeader = "iteration,meta_loss_or_train_loss,val_accuracy,seed,wall_ms";

/// CSV training log; rows are appended and flushed as they arrive.
class TrainingLog {
public:
    TrainingLog() = default;
    explicit TrainingLog(const std::filesystem::path& path) {
        if (path.empty()) {
            return;
        }
        if (path.has_parent_path()) {
            std::filesystem::create_directories(path.parent_path());
        }
        out_ = std::make_unique<std::ofstream>(path, std::ios::trunc);
        if (!*out_) {
            throw std::runtime_error("cannot write training log " + path.string());
        }
        *out_ << kTrainingLogHeader << '\n';
    }

    void append(const TrainingLogRow& row) {
        rows_.push_back(row);
        if (out_) {
            std::ostringstream os;
            os.precision(17);
            os << row.iteration << ',' << row.loss << ',' << row.val_accuracy << ',' << row.seed << ','
               << static_cast<long long>(std::llround(row.wall_ms)) << '\n';
            *out_ << os.str() << std::flush;
        }
    }

    const std::vector<TrainingLogRow>& rows() const { return rows_; }

private:
    std::unique_ptr<std::ofstream> out_;
    std::vector<TrainingLogRow> rows_;
};

struct PretrainOptions {
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::filesystem::path log_path;  // empty: keep rows in memory only
    std::function<void(const std::string&)> progress;
};

struct PretrainResult {
    ParamSet params;  // best checkpoint
    std::vector<TrainingLogRow> log;
    double best_val_accuracy = std::numeric_limits<double>::quiet_NaN();
    std::size_t best_iteration = 0;
    std::size_t iterations_run = 0;
    bool stopped_early = false;
};

namespace training_detail {

inline std::vector<int> eligible(const ActivityData& data, std::span<const int> subjects, std::size_t per_class) {
    std::vector<int> out;
    for (int id : subjects) {
        auto it = data.subjects.find(id);
        if (it != data.subjects.end() && it->second.min_class_count() >= per_class) {
            out.push_back(id);
        }
    }
    std::ranges::sort(out);
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

inline double elapsed_ms(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

// Keeps the best checkpoint and counts rounds without improvement.
struct EarlyStopper {
    std::size_t patience;
    double best = -1.0;
    std::size_t best_round = 0;
    std::size_t stale = 0;
    ParamSet best_params;

    explicit EarlyStopper(std::size_t patience_) : patience(patience_) {}

    bool update(double score, std::size_t round, const ParamSet& params) {
        if (score > best) {
            best = score;
            best_round = round;
            stale = 0;
            best_params = params.clone();
        } else {
            ++stale;
        }
        return stale >= patience;
    }
};

}  // namespace training_detail

/// Eval-mode accuracy over every trial of `subjects`, in chunks.
inline double pooled_accuracy(const ClassifierSpec& spec, ParamSet& params, const ActivityData& data,
                              std::span<const int> subjects) {
    std::size_t correct = 0, total = 0;
    for (int id : subjects) {
        auto it = data.subjects.find(id);
        if (it == data.subjects.end()) {
            continue;
        }
        const auto& trials = it->second.trials;
        for (std::size_t start = 0; start < trials.size(); start += 64) {
            const std::size_t len = std::min<std::size_t>(64, trials.size() - start);
            std::vector<const Trial*> ptrs;
            for (std::size_t i = 0; i < len; ++i) {
                ptrs.push_back(&trials[start + i]);
            }
            const LabeledBatch b = make_batch(ptrs, spec.channels, spec.time_points);
            correct += static_cast<std::size_t>(std::llround(evaluate_accuracy(spec, params, b) * static_cast<double>(len)));
            total += len;
        }
    }
    return total ? static_cast<double>(correct) / static_cast<double>(total) : std::numeric_limits<double>::quiet_NaN();
}

/// FOMAML pretraining. Every `eval_every` meta-iterations the validation
/// subjects go through the adaptation protocol (gradient descent at the inner
/// rate, `validation_runs` runs); the best-scoring checkpoint is returned and
/// training stops after `validation_patience` rounds without improvement.
inline PretrainResult maml_pretrain(const ClassifierSpec& spec, const ActivityData& data,
                                    std::span<const int> train_subjects, std::span<const int> validation_subjects,
                                    const MetaConfig& cfg, const PretrainOptions& opts) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    const std::vector<int> pool = training_detail::eligible(data, train_subjects, cfg.k_support + cfg.k_query);
    if (pool.empty()) {
        throw InsufficientTrialsError("no training subject has enough trials for an episode");
    }
    if (pool.size() < cfg.subjects_per_batch) {
        throw InsufficientTrialsError("only " + std::to_string(pool.size()) + " eligible training subjects for batches of " +
                                      std::to_string(cfg.subjects_per_batch));
    }
    const std::vector<int> val = training_detail::eligible(data, validation_subjects, cfg.k_support + cfg.k_query);

    Rng init(derive_seed(opts.seed, 0, 0));
    ParamSet theta = build_classifier(spec, init);
    Optimizer meta_opt(OptimizerKind::adam, cfg.meta_lr);
    FinetuneSpec val_spec;
    val_spec.optimizer = OptimizerKind::gradient_descent;
    val_spec.lr = cfg.inner_lr;
    val_spec.k_support = cfg.k_support;
    val_spec.k_query = cfg.k_query;
    EvalOptions val_opts{cfg.validation_runs, derive_seed(opts.seed, 3, 0), opts.threads};

    TrainingLog log(opts.log_path);
    training_detail::EarlyStopper stopper(cfg.validation_patience);
    PretrainResult result;
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t it = 1; it <= cfg.max_meta_iterations; ++it) {
        Rng pick(derive_seed(opts.seed, 1, it));
        std::vector<int> chosen = pool;
        for (std::size_t i = 0; i < cfg.subjects_per_batch; ++i) {
            std::swap(chosen[i], chosen[i + pick.below(chosen.size() - i)]);
        }
        chosen.resize(cfg.subjects_per_batch);
        std::vector<Episode> episodes;
        std::vector<MetaTask> tasks;
        episodes.reserve(chosen.size());
        for (int s : chosen) {
            Rng rng(derive_seed(opts.seed, 2 + it * 1000003ULL, static_cast<std::uint64_t>(s)));
            episodes.push_back(sample_episode(data.subject(s), cfg.k_support, cfg.k_query, rng, spec.channels, spec.time_points));
            tasks.push_back(make_episode_task(spec, episodes.back(), rng));
        }
        loss_sum += fomaml_meta_step(theta, tasks, cfg.inner_lr, cfg.adapt_steps, meta_opt, opts.threads);
        ++loss_count;
        result.iterations_run = it;

        if (it % cfg.eval_every != 0 && it != cfg.max_meta_iterations) {
            continue;
        }
        TrainingLogRow row{it, loss_sum / static_cast<double>(loss_count)};
        loss_sum = 0.0;
        loss_count = 0;
        row.seed = opts.seed;
        bool stop = false;
        if (!val.empty()) {
            const auto rep = evaluate_fast_adaptability(spec, theta, data, val, val_spec, val_opts);
            row.val_accuracy = rep.mean_test.back();
            stop = stopper.update(row.val_accuracy, it, theta);
        }
        row.wall_ms = training_detail::elapsed_ms(start);
        log.append(row);
        if (opts.progress) {
            std::ostringstream os;
            os << "meta-iteration " << it << " loss " << row.loss << " val_acc " << row.val_accuracy;
            opts.progress(os.str());
        }
        if (stop) {
            result.stopped_early = true;
            break;
        }
    }
    if (val.empty()) {
        result.params = std::move(theta);
        result.best_iteration = result.iterations_run;
    } else {
        result.params = std::move(stopper.best_params);
        result.best_val_accuracy = stopper.best;
        result.best_iteration = stopper.best_round;
    }
    result.log = log.rows();
    return result;
}

/// Picks `per_class` trials per class from each subject (seeded by subject).
inline std::vector<const Trial*> transfer_pool(const ActivityData& data, std::span<const int> subjects,
                                               std::size_t per_class, std::uint64_t seed) {
    std::vector<const Trial*> pool;
    for (int id : training_detail::eligible(data, subjects, per_class)) {
        const SubjectDataset& ds = data.subject(id);
        Rng rng(derive_seed(seed, 4, static_cast<std::uint64_t>(id)));
        for (int label : {0, 1}) {
            std::vector<std::size_t> idx = ds.class_indices(label);
            for (std::size_t i = 0; i < per_class; ++i) {
                std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
            }
            for (std::size_t i = 0; i < per_class; ++i) {
                pool.push_back(&ds.trials[idx[i]]);
            }
        }
    }
    return pool;
}

/// Minibatch Adam on the pooled training subjects, one validation check per
/// epoch (eval-mode accuracy on every validation trial), best epoch kept.
inline PretrainResult transfer_pretrain(const ClassifierSpec& spec, const ActivityData& data,
                                        std::span<const int> train_subjects, std::span<const int> validation_subjects,
                                        const TransferConfig& cfg, const PretrainOptions& opts) {
    cfg.validate(spec.norm);
    const auto start = std::chrono::steady_clock::now();
    std::vector<const Trial*> pool = transfer_pool(data, train_subjects, cfg.samples_per_class, opts.seed);
    if (pool.empty()) {
        throw InsufficientTrialsError("transfer training pool is empty");
    }
    std::vector<int> val;
    for (int id : validation_subjects) {
        if (data.subjects.contains(id)) {
            val.push_back(id);
        }
    }
    std::ranges::sort(val);

    Rng init(derive_seed(opts.seed, 0, 0));
    ParamSet params = build_classifier(spec, init);
    Optimizer opt(OptimizerKind::adam, cfg.lr);
    Rng rng(derive_seed(opts.seed, 5, 0));
    TrainingLog log(opts.log_path);
    training_detail::EarlyStopper stopper(cfg.validation_patience);
    PretrainResult result;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        TrainingLogRow row{epoch, transfer_epoch(spec, params, pool, cfg.batch_size, opt, rng)};
        row.seed = opts.seed;
        result.iterations_run = epoch;
        bool stop = false;
        if (!val.empty()) {
            row.val_accuracy = pooled_accuracy(spec, params, data, val);
            stop = stopper.update(row.val_accuracy, epoch, params);
        }
        row.wall_ms = training_detail::elapsed_ms(start);
        log.append(row);
        if (opts.progress) {
            std::ostringstream os;
            os << "epoch " << epoch << " loss " << row.loss << " val_acc " << row.val_accuracy;
            opts.progress(os.str());
        }
        if (stop) {
            result.stopped_early = true;
            break;
        }
    }
    if (val.empty()) {
        result.params = std::move(params);
        result.best_iteration = result.iterations_run;
    } else {
        result.params = std::move(stopper.best_params);
        result.best_val_accuracy = stopper.best;
        result.best_iteration = stopper.best_round;
    }
    result.log = log.rows();
    return result;
}

}  // namespace fastbci
