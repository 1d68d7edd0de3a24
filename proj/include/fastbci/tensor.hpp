#pragma once

// Reverse-mode automatic differentiation over dense 64-bit tensors.
//
// A Tensor is a shared handle to a graph node. Operations record their
// parents and a backward closure; Tensor::backward() walks the graph in
// reverse topological order. Leaf gradients accumulate across backward calls
// until cleared, intermediate gradients are recomputed on every call.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace fastbci {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "," : "") << shape[i];
    }
    out << ')';
    return out.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a gradient has been accumulated
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;  // pushes this->grad into parents

    bool is_leaf() const { return parents.empty(); }

    std::vector<double>& ensure_grad() {
        if (grad.size() != data.size()) {
            grad.assign(data.size(), 0.0);
        }
        return grad;
    }
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        for (std::size_t d : shape) {
            if (d == 0) {
                throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
            }
        }
        if (shape_numel(shape) != values.size()) {
            throw ShapeError("shape " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
        }
        node_->shape = std::move(shape);
        node_->data = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        const std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return Tensor({1}, {value}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(node_); }

    const Shape& shape() const { return node().shape; }
    std::size_t rank() const { return node().shape.size(); }
    std::size_t dim(std::size_t i) const { return node().shape.at(i); }
    std::size_t numel() const { return node().data.size(); }

    std::span<const double> data() const { return node().data; }
    std::span<double> mutable_data() { return node().data; }

    bool requires_grad() const { return node().requires_grad; }
    bool has_grad() const { return node().grad.size() == node().data.size(); }

    std::span<const double> grad() const {
        if (!has_grad()) {
            throw std::logic_error("tensor has no gradient");
        }
        return node().grad;
    }

    /// Sets the gradient to zeros (allocating it if needed).
    void zero_grad() { node().grad.assign(node().data.size(), 0.0); }
    void clear_grad() { node().grad.clear(); }
    void set_grad(std::span<const double> g) {
        if (g.size() != numel()) {
            throw ShapeError("gradient size mismatch");
        }
        node().grad.assign(g.begin(), g.end());
    }

    double item() const {
        if (numel() != 1) {
            throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        }
        return node().data[0];
    }

    /// Deep copy as a new leaf; shares no storage with *this.
    Tensor clone() const {
        Tensor out(node().shape, node().data, node().requires_grad);
        return out;
    }

    /// Same values, detached from the graph and never requiring grad.
    Tensor detach() const { return Tensor(node().shape, node().data, false); }

    /// Throws NumericError if any value is NaN or infinite.
    void check_finite(const char* what = "tensor") const {
        for (double v : node().data) {
            if (!std::isfinite(v)) {
                throw NumericError(std::string(what) + " contains a non-finite value");
            }
        }
    }

    void backward() const;

    // Graph construction hooks for op implementations.
    static Tensor make_result(Shape shape, std::vector<double> values,
                              std::vector<Tensor> inputs,
                              std::function<void(detail::Node&)> backward_fn) {
        Tensor out(std::move(shape), std::move(values), false);
        bool any = false;
        for (const Tensor& t : inputs) {
            any = any || t.requires_grad();
        }
        if (any) {
            out.node_->requires_grad = true;
            for (Tensor& t : inputs) {
                out.node_->parents.push_back(t.node_);
            }
            out.node_->backward = std::move(backward_fn);
        }
        return out;
    }

    detail::Node& node() const {
        if (!node_) {
            throw std::logic_error("use of an undefined tensor");
        }
        return *node_;
    }

    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

inline void Tensor::backward() const {
    if (numel() != 1) {
        throw ShapeError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    }
    if (!requires_grad()) {
        return;
    }
    // Iterative post-order DFS for a topological ordering.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next_parent] = stack.back();
        if (next_parent < n->parents.size()) {
            detail::Node* p = n->parents[next_parent++].get();
            if (p->requires_grad && visited.insert(p).second) {
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (detail::Node* n : order) {
        if (!n->is_leaf()) {
            n->grad.assign(n->data.size(), 0.0);
        }
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward) {
            n->backward(*n);
        }
    }
}

}  // namespace fastbci
