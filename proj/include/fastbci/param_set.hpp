#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fastbci/tensor.hpp"

namespace fastbci {

/// Ordered, named model state. Trainable parameters always require grad;
/// buffers (e.g. batch-norm running statistics) are model state that is
/// copied and serialized with the parameters but never optimized.
class ParamSet {
public:
    using Entry = std::pair<std::string, Tensor>;

    Tensor& add(std::string name, Tensor value) {
        check_unique(name);
        if (!value.requires_grad()) {
            value = Tensor(value.shape(), std::vector<double>(value.data().begin(), value.data().end()), true);
        }
        params_.emplace_back(std::move(name), std::move(value));
        return params_.back().second;
    }

    Tensor& add_buffer(std::string name, Tensor value) {
        check_unique(name);
        buffers_.emplace_back(std::move(name), value.detach());
        return buffers_.back().second;
    }

    Tensor& at(std::string_view name) { return lookup(name); }
    const Tensor& at(std::string_view name) const { return const_cast<ParamSet*>(this)->lookup(name); }

    bool contains(std::string_view name) const {
        auto match = [&](const Entry& e) { return e.first == name; };
        return std::ranges::any_of(params_, match) || std::ranges::any_of(buffers_, match);
    }

    std::vector<Entry>& params() { return params_; }
    const std::vector<Entry>& params() const { return params_; }
    std::vector<Entry>& buffers() { return buffers_; }
    const std::vector<Entry>& buffers() const { return buffers_; }

    std::size_t size() const { return params_.size(); }

    /// Deep copy; the copy shares no storage with *this.
    ParamSet clone() const {
        ParamSet out;
        out.params_.reserve(params_.size());
        out.buffers_.reserve(buffers_.size());
        for (const auto& [name, t] : params_) {
            out.params_.emplace_back(name, t.clone());
        }
        for (const auto& [name, t] : buffers_) {
            out.buffers_.emplace_back(name, t.clone());
        }
        return out;
    }

    void zero_grad() {
        for (auto& [name, t] : params_) {
            t.zero_grad();
        }
    }

    void clear_grad() {
        for (auto& [name, t] : params_) {
            t.clear_grad();
        }
    }

    /// Total scalar count of the trainable parameters.
    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : params_) {
            n += t.numel();
        }
        return n;
    }

    /// Bitwise equality of names, shapes and values (parameters and buffers).
    bool identical_to(const ParamSet& other) const {
        auto same = [](const std::vector<Entry>& a, const std::vector<Entry>& b) {
            if (a.size() != b.size()) {
                return false;
            }
            for (std::size_t i = 0; i < a.size(); ++i) {
                if (a[i].first != b[i].first || a[i].second.shape() != b[i].second.shape() ||
                    !std::ranges::equal(a[i].second.data(), b[i].second.data())) {
                    return false;
                }
            }
            return true;
        };
        return same(params_, other.params_) && same(buffers_, other.buffers_);
    }

private:
    void check_unique(const std::string& name) const {
        if (contains(name)) {
            throw std::invalid_argument("duplicate parameter name '" + name + "'");
        }
    }

    Tensor& lookup(std::string_view name) {
        for (auto* list : {&params_, &buffers_}) {
            for (auto& [n, t] : *list) {
                if (n == name) {
                    return t;
                }
            }
        }
        throw std::out_of_range("no parameter named '" + std::string(name) + "'");
    }

    std::vector<Entry> params_;
    std::vector<Entry> buffers_;
};

inline ParamSet clone_params(const ParamSet& params) { return params.clone(); }

inline std::size_t param_count(const ParamSet& params) { return params.param_count(); }

}  // namespace fastbci
