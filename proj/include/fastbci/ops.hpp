#pragma once

// Differentiable operations used by the EEG classifier and its optimizers.
// Image-like tensors are laid out as (batch, channels, height, width).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fastbci/rng.hpp"
#include "fastbci/tensor.hpp"

namespace fastbci {

enum class Padding { same, valid };

namespace detail {

inline void require(bool ok, const std::string& message) {
    if (!ok) {
        throw ShapeError(message);
    }
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    require(t.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) +
                                  ", got shape " + shape_str(t.shape()));
}

inline void accumulate(detail::Node& parent, std::span<const double> delta) {
    if (!parent.requires_grad) {
        return;
    }
    auto& g = parent.ensure_grad();
    for (std::size_t i = 0; i < delta.size(); ++i) {
        g[i] += delta[i];
    }
}

struct ConvGeometry {
    std::size_t batch, in_channels, height, width;
    std::size_t out_channels, kernel_h, kernel_w, groups;
    std::size_t pad_top, pad_left;
    std::size_t out_h, out_w;

    std::size_t in_per_group() const { return in_channels / groups; }
    std::size_t out_per_group() const { return out_channels / groups; }
};

inline std::pair<std::size_t, std::size_t> output_extent(std::size_t in, std::size_t k, Padding padding,
                                                         const char* op) {
    if (padding == Padding::same) {
        // Keras/PyTorch convention: the extra pad for even kernels goes after.
        return {in, (k - 1) / 2};
    }
    require(k <= in, std::string(op) + ": kernel extent " + std::to_string(k) +
                         " exceeds input extent " + std::to_string(in) + " with valid padding");
    return {in - k + 1, 0};
}

// Grouped stride-1 cross-correlation; covers standard (groups = 1),
// depthwise (groups = in_channels) and pointwise convolutions.
inline Tensor grouped_conv2d(const Tensor& input, const Tensor& kernel, std::size_t groups,
                             Padding padding, const char* op) {
    require_rank(input, 4, op);
    require_rank(kernel, 4, op);
    ConvGeometry g{};
    g.batch = input.dim(0);
    g.in_channels = input.dim(1);
    g.height = input.dim(2);
    g.width = input.dim(3);
    g.out_channels = kernel.dim(0);
    g.kernel_h = kernel.dim(2);
    g.kernel_w = kernel.dim(3);
    g.groups = groups;
    require(groups > 0 && g.in_channels % groups == 0 && g.out_channels % groups == 0,
            std::string(op) + ": channels not divisible into groups");
    require(kernel.dim(1) == g.in_per_group(),
            std::string(op) + ": kernel " + shape_str(kernel.shape()) + " incompatible with input " +
                shape_str(input.shape()));
    std::tie(g.out_h, g.pad_top) = output_extent(g.height, g.kernel_h, padding, op);
    std::tie(g.out_w, g.pad_left) = output_extent(g.width, g.kernel_w, padding, op);

    const auto x = input.data();
    const auto w = kernel.data();
    std::vector<double> out(g.batch * g.out_channels * g.out_h * g.out_w, 0.0);

    // Visits every (output row, kernel tap) pair with the valid column range.
    auto for_each_tap = [g](auto&& body) {
        for (std::size_t b = 0; b < g.batch; ++b) {
            for (std::size_t co = 0; co < g.out_channels; ++co) {
                const std::size_t grp = co / g.out_per_group();
                for (std::size_t cl = 0; cl < g.in_per_group(); ++cl) {
                    const std::size_t ci = grp * g.in_per_group() + cl;
                    for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
                        for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
                            const std::size_t w_idx = ((co * g.in_per_group() + cl) * g.kernel_h + kh) * g.kernel_w + kw;
                            const std::size_t lo = kw < g.pad_left ? g.pad_left - kw : 0;
                            const std::size_t hi = std::min(g.out_w, g.width + g.pad_left - kw);
                            if (lo >= hi) {
                                continue;
                            }
                            for (std::size_t ho = 0; ho < g.out_h; ++ho) {
                                const std::ptrdiff_t hi_row = static_cast<std::ptrdiff_t>(ho + kh) -
                                                              static_cast<std::ptrdiff_t>(g.pad_top);
                                if (hi_row < 0 || hi_row >= static_cast<std::ptrdiff_t>(g.height)) {
                                    continue;
                                }
                                const std::size_t x_row = ((b * g.in_channels + ci) * g.height + static_cast<std::size_t>(hi_row)) * g.width;
                                const std::size_t o_row = ((b * g.out_channels + co) * g.out_h + ho) * g.out_w;
                                // column wi = wo + kw - pad_left
                                body(w_idx, x_row + lo + kw - g.pad_left, o_row + lo, hi - lo);
                            }
                        }
                    }
                }
            }
        }
    };

    for_each_tap([&](std::size_t w_idx, std::size_t x_off, std::size_t o_off, std::size_t count) {
        const double wv = w[w_idx];
        double* __restrict o = out.data() + o_off;
        const double* __restrict xi = x.data() + x_off;
        for (std::size_t j = 0; j < count; ++j) {
            o[j] += wv * xi[j];
        }
    });

    Shape out_shape{g.batch, g.out_channels, g.out_h, g.out_w};
    return Tensor::make_result(std::move(out_shape), std::move(out), {input, kernel},
                               [for_each_tap](detail::Node& self) {
                                   detail::Node& in = *self.parents[0];
                                   detail::Node& k = *self.parents[1];
                                   const double* gout = self.grad.data();
                                   double* gx = in.requires_grad ? in.ensure_grad().data() : nullptr;
                                   double* gw = k.requires_grad ? k.ensure_grad().data() : nullptr;
                                   const double* xv = in.data.data();
                                   const double* wv = k.data.data();
                                   for_each_tap([&](std::size_t w_idx, std::size_t x_off, std::size_t o_off,
                                                    std::size_t count) {
                                       const double* __restrict go = gout + o_off;
                                       if (gx) {
                                           const double wval = wv[w_idx];
                                           double* __restrict gxi = gx + x_off;
                                           for (std::size_t j = 0; j < count; ++j) {
                                               gxi[j] += wval * go[j];
                                           }
                                       }
                                       if (gw) {
                                           const double* __restrict xi = xv + x_off;
                                           double acc = 0.0;
                                           for (std::size_t j = 0; j < count; ++j) {
                                               acc += xi[j] * go[j];
                                           }
                                           gw[w_idx] += acc;
                                       }
                                   });
                               });
}

}  // namespace detail

/// Standard 2-D convolution. kernel: (out_channels, in_channels, kh, kw).
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, Padding padding) {
    return detail::grouped_conv2d(input, kernel, 1, padding, "conv2d");
}

/// Depthwise convolution; kernel: (in_channels * depth_multiplier, 1, kh, kw).
/// Output channel c * depth_multiplier + m reads input channel c.
inline Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel, Padding padding,
                               std::size_t depth_multiplier) {
    detail::require_rank(input, 4, "depthwise_conv2d");
    detail::require(depth_multiplier > 0, "depthwise_conv2d: depth multiplier must be positive");
    detail::require(kernel.rank() == 4 && kernel.dim(0) == input.dim(1) * depth_multiplier,
                    "depthwise_conv2d: kernel " + shape_str(kernel.shape()) + " needs " +
                        std::to_string(input.dim(1) * depth_multiplier) + " output channels");
    return detail::grouped_conv2d(input, kernel, input.dim(1), padding, "depthwise_conv2d");
}

/// Depthwise (multiplier 1) followed by a 1x1 pointwise convolution.
inline Tensor separable_conv2d(const Tensor& input, const Tensor& depthwise_kernel,
                               const Tensor& pointwise_kernel, Padding padding) {
    detail::require(pointwise_kernel.rank() == 4 && pointwise_kernel.dim(2) == 1 && pointwise_kernel.dim(3) == 1,
                    "separable_conv2d: pointwise kernel must be 1x1");
    return conv2d(depthwise_conv2d(input, depthwise_kernel, padding, 1), pointwise_kernel, Padding::valid);
}

/// Average pooling; trailing positions that do not fill a window are dropped.
inline Tensor avg_pool2d(const Tensor& input, std::pair<std::size_t, std::size_t> window,
                         std::pair<std::size_t, std::size_t> stride) {
    detail::require_rank(input, 4, "avg_pool2d");
    const auto [wh, ww] = window;
    const auto [sh, sw] = stride;
    detail::require(wh > 0 && ww > 0 && sh > 0 && sw > 0, "avg_pool2d: window and stride must be positive");
    const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    detail::require(wh <= H && ww <= W, "avg_pool2d: window larger than input " + shape_str(input.shape()));
    const std::size_t Ho = (H - wh) / sh + 1;
    const std::size_t Wo = (W - ww) / sw + 1;
    const double inv = 1.0 / static_cast<double>(wh * ww);
    const auto x = input.data();
    std::vector<double> out(B * C * Ho * Wo, 0.0);
    for (std::size_t plane = 0; plane < B * C; ++plane) {
        for (std::size_t ho = 0; ho < Ho; ++ho) {
            for (std::size_t wo = 0; wo < Wo; ++wo) {
                double acc = 0.0;
                for (std::size_t i = 0; i < wh; ++i) {
                    for (std::size_t j = 0; j < ww; ++j) {
                        acc += x[(plane * H + ho * sh + i) * W + wo * sw + j];
                    }
                }
                out[(plane * Ho + ho) * Wo + wo] = acc * inv;
            }
        }
    }
    return Tensor::make_result({B, C, Ho, Wo}, std::move(out), {input}, [=](detail::Node& self) {
        detail::Node& in = *self.parents[0];
        auto& gx = in.ensure_grad();
        for (std::size_t plane = 0; plane < B * C; ++plane) {
            for (std::size_t ho = 0; ho < Ho; ++ho) {
                for (std::size_t wo = 0; wo < Wo; ++wo) {
                    const double g = self.grad[(plane * Ho + ho) * Wo + wo] * inv;
                    for (std::size_t i = 0; i < wh; ++i) {
                        for (std::size_t j = 0; j < ww; ++j) {
                            gx[(plane * H + ho * sh + i) * W + wo * sw + j] += g;
                        }
                    }
                }
            }
        }
    });
}

/// Per-sample normalization over every non-batch element, with an
/// elementwise affine transform. gain and bias have shape input.shape()[1:].
inline Tensor layer_norm(const Tensor& input, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
    detail::require(input.rank() >= 2, "layer_norm: input needs a batch dimension");
    const Shape feature_shape(input.shape().begin() + 1, input.shape().end());
    detail::require(gain.shape() == feature_shape && bias.shape() == feature_shape,
                    "layer_norm: gain/bias must have shape " + shape_str(feature_shape));
    const std::size_t B = input.dim(0);
    const std::size_t n = input.numel() / B;
    detail::require(n >= 2, "layer_norm: normalized extent needs at least 2 elements");
    const auto x = input.data();
    const auto gv = gain.data();
    const auto bv = bias.data();
    std::vector<double> xhat(input.numel());
    std::vector<double> rstd(B);
    std::vector<double> out(input.numel());
    for (std::size_t b = 0; b < B; ++b) {
        const double* xs = x.data() + b * n;
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mean += xs[i];
        }
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = xs[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        rstd[b] = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < n; ++i) {
            const double h = (xs[i] - mean) * rstd[b];
            xhat[b * n + i] = h;
            out[b * n + i] = gv[i] * h + bv[i];
        }
    }
    return Tensor::make_result(input.shape(), std::move(out), {input, gain, bias},
                               [B, n, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node& self) {
                                   detail::Node& in = *self.parents[0];
                                   detail::Node& g = *self.parents[1];
                                   detail::Node& bi = *self.parents[2];
                                   const auto& gy = self.grad;
                                   if (g.requires_grad) {
                                       auto& gg = g.ensure_grad();
                                       for (std::size_t i = 0; i < B * n; ++i) {
                                           gg[i % n] += gy[i] * xhat[i];
                                       }
                                   }
                                   if (bi.requires_grad) {
                                       auto& gb = bi.ensure_grad();
                                       for (std::size_t i = 0; i < B * n; ++i) {
                                           gb[i % n] += gy[i];
                                       }
                                   }
                                   if (!in.requires_grad) {
                                       return;
                                   }
                                   auto& gx = in.ensure_grad();
                                   const double inv_n = 1.0 / static_cast<double>(n);
                                   for (std::size_t b = 0; b < B; ++b) {
                                       double mean_d = 0.0;
                                       double mean_dx = 0.0;
                                       for (std::size_t i = 0; i < n; ++i) {
                                           const double d = gy[b * n + i] * g.data[i];
                                           mean_d += d;
                                           mean_dx += d * xhat[b * n + i];
                                       }
                                       mean_d *= inv_n;
                                       mean_dx *= inv_n;
                                       for (std::size_t i = 0; i < n; ++i) {
                                           const double d = gy[b * n + i] * g.data[i];
                                           gx[b * n + i] += rstd[b] * (d - mean_d - xhat[b * n + i] * mean_dx);
                                       }
                                   }
                               });
}

struct BatchNormOptions {
    double momentum = 0.1;
    double eps = 1e-5;
    bool training = true;
};

/// Per-channel normalization for (batch, channels, ...) inputs. In training
/// mode batch statistics are used and the running buffers are updated in
/// place (running variance uses the unbiased batch estimate); in eval mode
/// the running buffers are used.
inline Tensor batch_norm(const Tensor& input, const Tensor& gain, const Tensor& bias, Tensor& running_mean,
                         Tensor& running_var, const BatchNormOptions& opts = {}) {
    detail::require(input.rank() >= 2, "batch_norm: input needs batch and channel dimensions");
    const std::size_t B = input.dim(0);
    const std::size_t C = input.dim(1);
    const std::size_t S = input.numel() / (B * C);
    const Shape channel_shape{C};
    detail::require(gain.shape() == channel_shape && bias.shape() == channel_shape &&
                        running_mean.shape() == channel_shape && running_var.shape() == channel_shape,
                    "batch_norm: parameters must have shape " + shape_str(channel_shape));
    if (opts.training && B < 2) {
        throw ShapeError("batch_norm: training mode needs a batch of at least 2 samples");
    }
    const auto x = input.data();
    const auto gv = gain.data();
    const auto bv = bias.data();
    std::vector<double> mean(C, 0.0), rstd(C, 0.0);
    const double count = static_cast<double>(B * S);
    if (opts.training) {
        auto rm = running_mean.mutable_data();
        auto rv = running_var.mutable_data();
        for (std::size_t c = 0; c < C; ++c) {
            double m = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const double* xs = x.data() + (b * C + c) * S;
                for (std::size_t s = 0; s < S; ++s) {
                    m += xs[s];
                }
            }
            m /= count;
            double v = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const double* xs = x.data() + (b * C + c) * S;
                for (std::size_t s = 0; s < S; ++s) {
                    v += (xs[s] - m) * (xs[s] - m);
                }
            }
            const double biased = v / count;
            const double unbiased = count > 1 ? v / (count - 1.0) : biased;
            mean[c] = m;
            rstd[c] = 1.0 / std::sqrt(biased + opts.eps);
            rm[c] = (1.0 - opts.momentum) * rm[c] + opts.momentum * m;
            rv[c] = (1.0 - opts.momentum) * rv[c] + opts.momentum * unbiased;
        }
    } else {
        const auto rm = running_mean.data();
        const auto rv = running_var.data();
        for (std::size_t c = 0; c < C; ++c) {
            mean[c] = rm[c];
            rstd[c] = 1.0 / std::sqrt(rv[c] + opts.eps);
        }
    }
    std::vector<double> xhat(input.numel());
    std::vector<double> out(input.numel());
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (b * C + c) * S;
            for (std::size_t s = 0; s < S; ++s) {
                const double h = (x[base + s] - mean[c]) * rstd[c];
                xhat[base + s] = h;
                out[base + s] = gv[c] * h + bv[c];
            }
        }
    }
    const bool training = opts.training;
    return Tensor::make_result(
        input.shape(), std::move(out), {input, gain, bias},
        [B, C, S, training, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node& self) {
            detail::Node& in = *self.parents[0];
            detail::Node& g = *self.parents[1];
            detail::Node& bi = *self.parents[2];
            const auto& gy = self.grad;
            if (g.requires_grad || bi.requires_grad) {
                std::vector<double> sum_gx(C, 0.0), sum_g(C, 0.0);
                for (std::size_t b = 0; b < B; ++b) {
                    for (std::size_t c = 0; c < C; ++c) {
                        const std::size_t base = (b * C + c) * S;
                        for (std::size_t s = 0; s < S; ++s) {
                            sum_gx[c] += gy[base + s] * xhat[base + s];
                            sum_g[c] += gy[base + s];
                        }
                    }
                }
                if (g.requires_grad) {
                    detail::accumulate(g, sum_gx);
                }
                if (bi.requires_grad) {
                    detail::accumulate(bi, sum_g);
                }
            }
            if (!in.requires_grad) {
                return;
            }
            auto& gx = in.ensure_grad();
            const double inv_count = 1.0 / static_cast<double>(B * S);
            for (std::size_t c = 0; c < C; ++c) {
                const double gain_c = g.data[c];
                double mean_d = 0.0, mean_dx = 0.0;
                if (training) {
                    for (std::size_t b = 0; b < B; ++b) {
                        const std::size_t base = (b * C + c) * S;
                        for (std::size_t s = 0; s < S; ++s) {
                            const double d = gy[base + s] * gain_c;
                            mean_d += d;
                            mean_dx += d * xhat[base + s];
                        }
                    }
                    mean_d *= inv_count;
                    mean_dx *= inv_count;
                }
                for (std::size_t b = 0; b < B; ++b) {
                    const std::size_t base = (b * C + c) * S;
                    for (std::size_t s = 0; s < S; ++s) {
                        const double d = gy[base + s] * gain_c;
                        gx[base + s] += training ? rstd[c] * (d - mean_d - xhat[base + s] * mean_dx) : rstd[c] * d;
                    }
                }
            }
        });
}

inline Tensor elu(const Tensor& input, double alpha = 1.0) {
    const auto x = input.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] > 0.0 ? x[i] : alpha * std::expm1(x[i]);
    }
    return Tensor::make_result(input.shape(), std::move(out), {input}, [alpha](detail::Node& self) {
        detail::Node& in = *self.parents[0];
        auto& gx = in.ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const double d = in.data[i] > 0.0 ? 1.0 : self.data[i] + alpha;
            gx[i] += self.grad[i] * d;
        }
    });
}

/// Inverted dropout. Eval mode and p == 0 return the input unchanged.
inline Tensor dropout(const Tensor& input, double p, bool training, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0)) {
        throw std::invalid_argument("dropout: p must lie in [0, 1), got " + std::to_string(p));
    }
    if (!training || p == 0.0) {
        return input;
    }
    const double scale = 1.0 / (1.0 - p);
    const auto x = input.data();
    std::vector<double> mask(x.size());
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        mask[i] = rng.uniform() < p ? 0.0 : scale;
        out[i] = x[i] * mask[i];
    }
    return Tensor::make_result(input.shape(), std::move(out), {input},
                               [mask = std::move(mask)](detail::Node& self) {
                                   auto& gx = self.parents[0]->ensure_grad();
                                   for (std::size_t i = 0; i < gx.size(); ++i) {
                                       gx[i] += self.grad[i] * mask[i];
                                   }
                               });
}

/// View with a new shape of equal element count.
inline Tensor reshape(const Tensor& input, Shape shape) {
    detail::require(shape_numel(shape) == input.numel(),
                    "reshape: cannot view " + shape_str(input.shape()) + " as " + shape_str(shape));
    std::vector<double> values(input.data().begin(), input.data().end());
    return Tensor::make_result(std::move(shape), std::move(values), {input}, [](detail::Node& self) {
        detail::accumulate(*self.parents[0], self.grad);
    });
}

/// Flattens everything after the batch dimension.
inline Tensor flatten(const Tensor& input) {
    detail::require(input.rank() >= 1, "flatten: empty shape");
    return reshape(input, {input.dim(0), input.numel() / input.dim(0)});
}

/// Affine layer: (batch, d) x (k, d)^T + (k).
inline Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    detail::require_rank(input, 2, "dense");
    detail::require_rank(weight, 2, "dense");
    const std::size_t B = input.dim(0), d = input.dim(1), k = weight.dim(0);
    detail::require(weight.dim(1) == d, "dense: weight " + shape_str(weight.shape()) + " incompatible with input " +
                                            shape_str(input.shape()));
    detail::require(bias.shape() == Shape{k}, "dense: bias must have shape (" + std::to_string(k) + ")");
    const auto x = input.data();
    const auto w = weight.data();
    const auto bv = bias.data();
    std::vector<double> out(B * k);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t j = 0; j < k; ++j) {
            double acc = bv[j];
            for (std::size_t i = 0; i < d; ++i) {
                acc += w[j * d + i] * x[b * d + i];
            }
            out[b * k + j] = acc;
        }
    }
    return Tensor::make_result({B, k}, std::move(out), {input, weight, bias}, [B, d, k](detail::Node& self) {
        detail::Node& in = *self.parents[0];
        detail::Node& wt = *self.parents[1];
        detail::Node& bi = *self.parents[2];
        const auto& gy = self.grad;
        if (in.requires_grad) {
            auto& gx = in.ensure_grad();
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t j = 0; j < k; ++j) {
                    for (std::size_t i = 0; i < d; ++i) {
                        gx[b * d + i] += gy[b * k + j] * wt.data[j * d + i];
                    }
                }
            }
        }
        if (wt.requires_grad) {
            auto& gw = wt.ensure_grad();
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t j = 0; j < k; ++j) {
                    for (std::size_t i = 0; i < d; ++i) {
                        gw[j * d + i] += gy[b * k + j] * in.data[b * d + i];
                    }
                }
            }
        }
        if (bi.requires_grad) {
            auto& gb = bi.ensure_grad();
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t j = 0; j < k; ++j) {
                    gb[j] += gy[b * k + j];
                }
            }
        }
    });
}

/// Mean over the batch of -log softmax(logits)[label].
inline Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
    detail::require_rank(logits, 2, "softmax_cross_entropy");
    const std::size_t B = logits.dim(0), k = logits.dim(1);
    detail::require(labels.size() == B, "softmax_cross_entropy: " + std::to_string(labels.size()) +
                                            " labels for a batch of " + std::to_string(B));
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= k) {
            throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                                    std::to_string(k) + ")");
        }
    }
    const auto z = logits.data();
    std::vector<double> probs(B * k);
    double loss = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        const double* zb = z.data() + b * k;
        const double mx = *std::max_element(zb, zb + k);
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            total += std::exp(zb[j] - mx);
        }
        const double log_total = std::log(total);
        for (std::size_t j = 0; j < k; ++j) {
            probs[b * k + j] = std::exp(zb[j] - mx - log_total);
        }
        loss += -(zb[labels[b]] - mx - log_total);
    }
    loss /= static_cast<double>(B);
    std::vector<int> ys(labels.begin(), labels.end());
    return Tensor::make_result({1}, {loss}, {logits},
                               [B, k, probs = std::move(probs), ys = std::move(ys)](detail::Node& self) {
                                   auto& gz = self.parents[0]->ensure_grad();
                                   const double scale = self.grad[0] / static_cast<double>(B);
                                   for (std::size_t b = 0; b < B; ++b) {
                                       for (std::size_t j = 0; j < k; ++j) {
                                           const double target = static_cast<std::size_t>(ys[b]) == j ? 1.0 : 0.0;
                                           gz[b * k + j] += scale * (probs[b * k + j] - target);
                                       }
                                   }
                               });
}

// Small elementwise helpers, mostly for analytic test objectives.

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require(a.shape() == b.shape(), "add: shape mismatch");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.data()[i] + b.data()[i];
    }
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        detail::accumulate(*self.parents[0], self.grad);
        detail::accumulate(*self.parents[1], self.grad);
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require(a.shape() == b.shape(), "mul: shape mismatch");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.data()[i] * b.data()[i];
    }
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        detail::Node& x = *self.parents[0];
        detail::Node& y = *self.parents[1];
        if (x.requires_grad) {
            auto& gx = x.ensure_grad();
            for (std::size_t i = 0; i < gx.size(); ++i) {
                gx[i] += self.grad[i] * y.data[i];
            }
        }
        if (y.requires_grad) {
            auto& gy = y.ensure_grad();
            for (std::size_t i = 0; i < gy.size(); ++i) {
                gy[i] += self.grad[i] * x.data[i];
            }
        }
    });
}

/// a * x + c, elementwise.
inline Tensor affine(const Tensor& x, double a, double c = 0.0) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a * x.data()[i] + c;
    }
    return Tensor::make_result(x.shape(), std::move(out), {x}, [a](detail::Node& self) {
        auto& gx = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += a * self.grad[i];
        }
    });
}

inline Tensor square(const Tensor& x) { return mul(x, x); }

inline Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) {
        total += v;
    }
    return Tensor::make_result({1}, {total}, {x}, [](detail::Node& self) {
        auto& gx = self.parents[0]->ensure_grad();
        for (double& g : gx) {
            g += self.grad[0];
        }
    });
}

inline Tensor mean(const Tensor& x) { return affine(sum(x), 1.0 / static_cast<double>(x.numel())); }

}  // namespace fastbci
