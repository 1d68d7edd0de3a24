#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fastbci/param_set.hpp"

namespace fastbci {

class MissingGradientError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

namespace detail {

inline std::span<const double> grad_of(const ParamSet::Entry& entry) {
    if (!entry.second.has_grad()) {
        throw MissingGradientError("parameter '" + entry.first + "' has no gradient");
    }
    return entry.second.grad();
}

}  // namespace detail

/// p <- p - lr * grad(p) for every trainable parameter.
inline void sgd_step(ParamSet& params, double lr) {
    for (auto& entry : params.params()) {
        const auto g = detail::grad_of(entry);
        auto p = entry.second.mutable_data();
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] -= lr * g[i];
        }
    }
}

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step = 0;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;

    AdamState() = default;

    explicit AdamState(const ParamSet& params) { reset(params); }

    void reset(const ParamSet& params) {
        step = 0;
        first_moment.clear();
        second_moment.clear();
        for (const auto& [name, t] : params.params()) {
            first_moment.emplace_back(t.numel(), 0.0);
            second_moment.emplace_back(t.numel(), 0.0);
        }
    }
};

/// Bias-corrected Adam update.
inline void adam_step(ParamSet& params, AdamState& state, double lr) {
    auto& entries = params.params();
    if (state.first_moment.size() != entries.size()) {
        throw std::invalid_argument("adam_step: optimizer state does not match parameter set");
    }
    for (std::size_t k = 0; k < entries.size(); ++k) {
        if (state.first_moment[k].size() != entries[k].second.numel()) {
            throw std::invalid_argument("adam_step: moment shape mismatch for '" + entries[k].first + "'");
        }
        detail::grad_of(entries[k]);
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(state.beta1, t);
    const double correction2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t k = 0; k < entries.size(); ++k) {
        const auto g = entries[k].second.grad();
        auto p = entries[k].second.mutable_data();
        auto& m = state.first_moment[k];
        auto& v = state.second_moment[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            p[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

enum class OptimizerKind { gradient_descent, adam };

inline std::string_view to_string(OptimizerKind kind) {
    return kind == OptimizerKind::adam ? "adam" : "gradient_descent";
}

inline OptimizerKind parse_optimizer_kind(std::string_view text) {
    if (text == "adam") {
        return OptimizerKind::adam;
    }
    if (text == "gradient_descent" || text == "sgd" || text == "gd") {
        return OptimizerKind::gradient_descent;
    }
    throw std::invalid_argument("unknown optimizer '" + std::string(text) + "'");
}

/// Stateful optimizer bound to one parameter layout.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {
        if (!(lr >= 0.0)) {
            throw std::invalid_argument("learning rate must be non-negative");
        }
    }

    void step(ParamSet& params) {
        if (kind_ == OptimizerKind::gradient_descent) {
            sgd_step(params, lr_);
            return;
        }
        if (state_.first_moment.empty() && state_.step == 0) {
            state_.reset(params);
        }
        adam_step(params, state_, lr_);
    }

    OptimizerKind kind() const { return kind_; }
    double lr() const { return lr_; }
    const AdamState& adam_state() const { return state_; }

private:
    OptimizerKind kind_;
    double lr_;
    AdamState state_;
};

}  // namespace fastbci
