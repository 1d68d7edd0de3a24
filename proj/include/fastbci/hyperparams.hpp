#pragma once

// Per-activity pretraining hyperparameters and the fine-tuning setup each
// pretraining strategy implies.

#include <cstddef>
#include <stdexcept>
#include <string>

#include "fastbci/model.hpp"
#include "fastbci/model_io.hpp"
#include "fastbci/optim.hpp"

namespace fastbci {

struct MetaConfig {
    double inner_lr = 0.01;   // alpha
    double meta_lr = 0.001;   // beta (Adam)
    std::size_t subjects_per_batch = 4;
    std::size_t adapt_steps = 10;
    std::size_t k_support = 10;
    std::size_t k_query = 11;
    std::size_t max_meta_iterations = 2000;
    std::size_t validation_patience = 20;  // in evaluation rounds
    std::size_t eval_every = 25;           // meta-iterations per evaluation round
    std::size_t validation_runs = 5;

    void validate() const {
        if (!(inner_lr > 0.0) || !(meta_lr > 0.0)) {
            throw std::invalid_argument("MetaConfig: inner_lr and meta_lr must be positive");
        }
        if (subjects_per_batch < 1 || adapt_steps < 1) {
            throw std::invalid_argument("MetaConfig: need subjects_per_batch >= 1 and adapt_steps >= 1");
        }
        if (k_support < 1 || k_query < 1 || eval_every < 1 || validation_runs < 1) {
            throw std::invalid_argument("MetaConfig: k_support, k_query, eval_every and validation_runs must be >= 1");
        }
    }
};

struct TransferConfig {
    double lr = 0.001;
    std::size_t batch_size = 32;
    std::size_t samples_per_class = 21;  // per subject
    std::size_t max_epochs = 200;
    std::size_t validation_patience = 20;  // in epochs

    void validate(NormKind norm) const {
        if (!(lr > 0.0)) {
            throw std::invalid_argument("TransferConfig: lr must be positive");
        }
        if (batch_size < 1 || (norm == NormKind::batch && batch_size < 2)) {
            throw std::invalid_argument("TransferConfig: batch_size must be >= 2 with batch norm (>= 1 otherwise)");
        }
        if (samples_per_class < 1 || max_epochs < 1) {
            throw std::invalid_argument("TransferConfig: samples_per_class and max_epochs must be >= 1");
        }
    }
};

inline void check_activity(int activity) {
    if (activity < 1 || activity > 4) {
        throw std::invalid_argument("activity must be 1..4, got " + std::to_string(activity));
    }
}

/// Best meta-learning settings per activity.
inline MetaConfig meta_config_for_activity(int activity) {
    check_activity(activity);
    static constexpr double alpha[] = {0.01, 0.01, 0.01, 0.001};
    static constexpr double beta[] = {0.001, 0.01, 0.01, 0.01};
    static constexpr std::size_t steps[] = {10, 10, 5, 5};
    MetaConfig c;
    c.inner_lr = alpha[activity - 1];
    c.meta_lr = beta[activity - 1];
    c.adapt_steps = steps[activity - 1];
    return c;
}

inline TransferConfig transfer_config_for_activity(int activity) {
    check_activity(activity);
    TransferConfig c;
    c.batch_size = (activity == 1 || activity == 3) ? 32 : 16;
    return c;
}

struct FinetuneSpec {
    OptimizerKind optimizer = OptimizerKind::adam;
    double lr = 0.001;
    std::size_t steps = 10;
    std::size_t k_support = 10;
    std::size_t k_query = 11;

    void validate() const {
        if (!(lr > 0.0)) {
            throw std::invalid_argument("FinetuneSpec: lr must be positive");
        }
        if (k_support < 1 || k_query < 1) {
            throw std::invalid_argument("FinetuneSpec: k_support and k_query must be >= 1");
        }
    }
};

/// Transfer models fine-tune with Adam at 0.001. MAML models use gradient
/// descent: at the activity's inner-loop rate within the pretraining
/// activity, at 0.001 across activities.
inline FinetuneSpec finetune_spec_for(PretrainStrategy strategy, int source_activity, int target_activity) {
    check_activity(source_activity);
    check_activity(target_activity);
    FinetuneSpec s;
    if (strategy == PretrainStrategy::maml) {
        s.optimizer = OptimizerKind::gradient_descent;
        s.lr = source_activity == target_activity ? meta_config_for_activity(source_activity).inner_lr : 0.001;
    }
    return s;
}

}  // namespace fastbci
