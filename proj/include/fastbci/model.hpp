#pragma once

// Compact EEGNet-style classifier with a switchable normalization layer.
//
//   (C, T) trial
//   temporal conv  F1 x (1, K1), same      -> (F1, C, T)
//   norm-1
//   depthwise conv (C, 1) x D, valid       -> (F1*D, 1, T)
//   norm-2, ELU, avg pool (1, 4), dropout  -> (F1*D, 1, T/4)
//   separable conv F2 x (1, K2), same      -> (F2, 1, T/4)
//   norm-3, ELU, avg pool (1, 8), dropout  -> (F2, 1, T/32)
//   flatten, dense                         -> n_classes

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fastbci/ops.hpp"
#include "fastbci/param_set.hpp"
#include "fastbci/rng.hpp"

namespace fastbci {

enum class NormKind { batch, layer };

inline std::string_view to_string(NormKind kind) { return kind == NormKind::batch ? "batch" : "layer"; }

inline NormKind parse_norm_kind(std::string_view text) {
    if (text == "batch") {
        return NormKind::batch;
    }
    if (text == "layer") {
        return NormKind::layer;
    }
    throw std::invalid_argument("unknown norm kind '" + std::string(text) + "' (expected batch|layer)");
}

struct ClassifierSpec {
    std::size_t channels = 64;
    std::size_t time_points = 321;
    std::size_t n_classes = 2;
    NormKind norm = NormKind::layer;
    double dropout_p = 0.25;
    std::size_t temporal_filters = 8;
    std::size_t temporal_kernel = 64;
    std::size_t depth_multiplier = 2;
    std::size_t separable_filters = 16;
    std::size_t separable_kernel = 16;
    std::size_t pool1 = 4;
    std::size_t pool2 = 8;
    double norm_eps = 1e-5;
    double bn_momentum = 0.1;
    double elu_alpha = 1.0;

    std::size_t depthwise_channels() const { return temporal_filters * depth_multiplier; }
    std::size_t pooled1_width() const { return time_points / pool1; }
    std::size_t pooled2_width() const { return pooled1_width() / pool2; }
    std::size_t flatten_width() const { return separable_filters * pooled2_width(); }

    void validate() const {
        auto fail = [](const std::string& why) { throw std::invalid_argument("invalid classifier spec: " + why); };
        if (channels == 0 || time_points == 0 || temporal_filters == 0 || depth_multiplier == 0 ||
            separable_filters == 0 || temporal_kernel == 0 || separable_kernel == 0 || pool1 == 0 || pool2 == 0) {
            fail("dimensions must be positive");
        }
        if (n_classes < 2) {
            fail("need at least two classes");
        }
        if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
            fail("dropout must lie in [0, 1)");
        }
        if (pooled2_width() == 0) {
            fail("time_points too short for the pooling stack");
        }
        if (!(norm_eps > 0.0)) {
            fail("norm eps must be positive");
        }
    }

    bool operator==(const ClassifierSpec&) const = default;
};

/// Shapes of every stage for one sample, in forward order.
struct ShapeTrace {
    Shape temporal, depthwise, pooled1, separable, pooled2;
    std::size_t flatten = 0;
    std::size_t logits = 0;
};

inline ShapeTrace shape_trace(const ClassifierSpec& spec) {
    spec.validate();
    ShapeTrace t;
    t.temporal = {spec.temporal_filters, spec.channels, spec.time_points};
    t.depthwise = {spec.depthwise_channels(), 1, spec.time_points};
    t.pooled1 = {spec.depthwise_channels(), 1, spec.pooled1_width()};
    t.separable = {spec.separable_filters, 1, spec.pooled1_width()};
    t.pooled2 = {spec.separable_filters, 1, spec.pooled2_width()};
    t.flatten = spec.flatten_width();
    t.logits = spec.n_classes;
    return t;
}

namespace detail {

inline Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) {
        v = rng.uniform(-limit, limit);
    }
    return Tensor(std::move(shape), std::move(values), true);
}

inline void add_norm(ParamSet& params, const std::string& prefix, const ClassifierSpec& spec, const Shape& features) {
    if (spec.norm == NormKind::layer) {
        params.add(prefix + ".gain", Tensor::full(features, 1.0, true));
        params.add(prefix + ".bias", Tensor::zeros(features, true));
    } else {
        const Shape channel{features.front()};
        params.add(prefix + ".gain", Tensor::full(channel, 1.0, true));
        params.add(prefix + ".bias", Tensor::zeros(channel, true));
        params.add_buffer(prefix + ".running_mean", Tensor::zeros(channel));
        params.add_buffer(prefix + ".running_var", Tensor::full(channel, 1.0));
    }
}

}  // namespace detail

/// Randomly initialized parameters: Glorot-uniform conv/dense weights, zero
/// dense bias, unit gain and zero bias for the normalization layers.
inline ParamSet build_classifier(const ClassifierSpec& spec, Rng& rng) {
    spec.validate();
    const ShapeTrace trace = shape_trace(spec);
    ParamSet p;
    const std::size_t k1 = spec.temporal_kernel;
    p.add("temporal_conv.weight", detail::glorot_uniform({spec.temporal_filters, 1, 1, k1}, k1,
                                                         spec.temporal_filters * k1, rng));
    detail::add_norm(p, "norm1", spec, trace.temporal);
    const std::size_t dw = spec.depthwise_channels();
    p.add("depthwise_conv.weight",
          detail::glorot_uniform({dw, 1, spec.channels, 1}, spec.channels, dw * spec.channels, rng));
    detail::add_norm(p, "norm2", spec, trace.depthwise);
    const std::size_t k2 = spec.separable_kernel;
    p.add("separable_conv.depthwise", detail::glorot_uniform({dw, 1, 1, k2}, k2, dw * k2, rng));
    p.add("separable_conv.pointwise",
          detail::glorot_uniform({spec.separable_filters, dw, 1, 1}, dw, spec.separable_filters, rng));
    detail::add_norm(p, "norm3", spec, trace.separable);
    p.add("classifier.weight",
          detail::glorot_uniform({spec.n_classes, trace.flatten}, trace.flatten, spec.n_classes, rng));
    p.add("classifier.bias", Tensor::zeros({spec.n_classes}, true));
    return p;
}

namespace detail {

inline Tensor apply_norm(const ClassifierSpec& spec, ParamSet& params, const std::string& prefix, const Tensor& x,
                         bool training) {
    const Tensor& gain = params.at(prefix + ".gain");
    const Tensor& bias = params.at(prefix + ".bias");
    if (spec.norm == NormKind::layer) {
        return layer_norm(x, gain, bias, spec.norm_eps);
    }
    return batch_norm(x, gain, bias, params.at(prefix + ".running_mean"), params.at(prefix + ".running_var"),
                      {.momentum = spec.bn_momentum, .eps = spec.norm_eps, .training = training});
}

}  // namespace detail

/// Logits of shape (B, n_classes) for a batch of shape (B, channels, time).
/// In training mode dropout is active and batch-norm layers use (and
/// update) batch statistics; params is non-const for that reason.
inline Tensor forward_logits(const ClassifierSpec& spec, ParamSet& params, const Tensor& batch, bool training,
                             Rng& rng) {
    if (batch.rank() != 3 || batch.dim(1) != spec.channels || batch.dim(2) != spec.time_points) {
        throw ShapeError("forward_logits: expected (B, " + std::to_string(spec.channels) + ", " +
                         std::to_string(spec.time_points) + "), got " + shape_str(batch.shape()));
    }
    const std::size_t B = batch.dim(0);
    Tensor x = reshape(batch, {B, 1, spec.channels, spec.time_points});
    x = conv2d(x, params.at("temporal_conv.weight"), Padding::same);
    x = detail::apply_norm(spec, params, "norm1", x, training);
    x = depthwise_conv2d(x, params.at("depthwise_conv.weight"), Padding::valid, spec.depth_multiplier);
    x = detail::apply_norm(spec, params, "norm2", x, training);
    x = elu(x, spec.elu_alpha);
    x = avg_pool2d(x, {1, spec.pool1}, {1, spec.pool1});
    x = dropout(x, spec.dropout_p, training, rng);
    x = separable_conv2d(x, params.at("separable_conv.depthwise"), params.at("separable_conv.pointwise"),
                         Padding::same);
    x = detail::apply_norm(spec, params, "norm3", x, training);
    x = elu(x, spec.elu_alpha);
    x = avg_pool2d(x, {1, spec.pool2}, {1, spec.pool2});
    x = dropout(x, spec.dropout_p, training, rng);
    x = flatten(x);
    return dense(x, params.at("classifier.weight"), params.at("classifier.bias"));
}

}  // namespace fastbci
