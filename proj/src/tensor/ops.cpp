#include "cvr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Core>

#include "cvr/errors.hpp"

namespace cvr {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;

std::string axis_mismatch(const char* op, std::size_t axis, std::size_t a, std::size_t b) {
    return std::string(op) + ": extent mismatch on axis " + kAxisNames[axis] + " (" +
           std::to_string(a) + " vs " + std::to_string(b) + ")";
}

// ---------------------------------------------------------------------------
// conv3d helpers
// ---------------------------------------------------------------------------

struct ConvGeometry {
    std::size_t cin = 0, t = 0, h = 0, w = 0;
    std::size_t cout = 0;
    Triple kernel{}, stride{}, padding{};
    std::size_t to = 0, ho = 0, wo = 0;

    std::size_t patch() const { return cin * kernel[0] * kernel[1] * kernel[2]; }
    std::size_t positions() const { return to * ho * wo; }
    std::size_t in_volume() const { return cin * t * h * w; }
    bool pointwise() const {
        return kernel == Triple{1, 1, 1} && stride == Triple{1, 1, 1} &&
               padding == Triple{0, 0, 0};
    }
};

std::size_t conv_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p,
                        std::size_t axis) {
    if (s == 0) {
        throw GeometryError(std::string("conv3d: stride on axis ") + kAxisNames[axis + 2] +
                            " must be >= 1");
    }
    if (in + 2 * p < k) {
        throw GeometryError(std::string("conv3d: zero-sized output on axis ") +
                            kAxisNames[axis + 2] + " (input " + std::to_string(in) +
                            ", kernel " + std::to_string(k) + ", padding " +
                            std::to_string(p) + ")");
    }
    return (in + 2 * p - k) / s + 1;
}

// cols is (patch x positions), row-major.
void im2col(const double* x, const ConvGeometry& g, double* cols) {
    const std::size_t plane = g.ho * g.wo;
    const auto pt = static_cast<long>(g.padding[0]);
    const auto ph = static_cast<long>(g.padding[1]);
    const auto pw = static_cast<long>(g.padding[2]);
    double* dst = cols;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
        for (std::size_t kt = 0; kt < g.kernel[0]; ++kt) {
            for (std::size_t kh = 0; kh < g.kernel[1]; ++kh) {
                for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) {
                    for (std::size_t ot = 0; ot < g.to; ++ot) {
                        const long ti = static_cast<long>(ot * g.stride[0] + kt) - pt;
                        if (ti < 0 || ti >= static_cast<long>(g.t)) {
                            std::fill(dst, dst + plane, 0.0);
                            dst += plane;
                            continue;
                        }
                        for (std::size_t oh = 0; oh < g.ho; ++oh) {
                            const long hi = static_cast<long>(oh * g.stride[1] + kh) - ph;
                            if (hi < 0 || hi >= static_cast<long>(g.h)) {
                                std::fill(dst, dst + g.wo, 0.0);
                                dst += g.wo;
                                continue;
                            }
                            const double* src =
                                x + ((ci * g.t + static_cast<std::size_t>(ti)) * g.h +
                                     static_cast<std::size_t>(hi)) * g.w;
                            for (std::size_t ow = 0; ow < g.wo; ++ow) {
                                const long wi = static_cast<long>(ow * g.stride[2] + kw) - pw;
                                *dst++ = (wi >= 0 && wi < static_cast<long>(g.w))
                                             ? src[wi]
                                             : 0.0;
                            }
                        }
                    }
                }
            }
        }
    }
}

void col2im(const double* cols, const ConvGeometry& g, double* dx) {
    const auto pt = static_cast<long>(g.padding[0]);
    const auto ph = static_cast<long>(g.padding[1]);
    const auto pw = static_cast<long>(g.padding[2]);
    const double* src = cols;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
        for (std::size_t kt = 0; kt < g.kernel[0]; ++kt) {
            for (std::size_t kh = 0; kh < g.kernel[1]; ++kh) {
                for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) {
                    for (std::size_t ot = 0; ot < g.to; ++ot) {
                        const long ti = static_cast<long>(ot * g.stride[0] + kt) - pt;
                        if (ti < 0 || ti >= static_cast<long>(g.t)) {
                            src += g.ho * g.wo;
                            continue;
                        }
                        for (std::size_t oh = 0; oh < g.ho; ++oh) {
                            const long hi = static_cast<long>(oh * g.stride[1] + kh) - ph;
                            if (hi < 0 || hi >= static_cast<long>(g.h)) {
                                src += g.wo;
                                continue;
                            }
                            double* row = dx + ((ci * g.t + static_cast<std::size_t>(ti)) * g.h +
                                                static_cast<std::size_t>(hi)) * g.w;
                            for (std::size_t ow = 0; ow < g.wo; ++ow, ++src) {
                                const long wi = static_cast<long>(ow * g.stride[2] + kw) - pw;
                                if (wi >= 0 && wi < static_cast<long>(g.w)) row[wi] += *src;
                            }
                        }
                    }
                }
            }
        }
    }
}

// Strides for broadcasting `s` into `out` (0 on broadcast axes).
std::array<std::size_t, 5> broadcast_strides(const Shape& s, const Shape& out) {
    std::array<std::size_t, 5> strides{};
    std::size_t acc = 1;
    for (int axis = 4; axis >= 0; --axis) {
        strides[axis] = (s[axis] == out[axis]) ? acc : 0;
        acc *= s[axis];
    }
    return strides;
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
    Shape out;
    for (std::size_t axis = 0; axis < 5; ++axis) {
        if (a[axis] == b[axis] || b[axis] == 1) {
            out.dims[axis] = a[axis];
        } else if (a[axis] == 1) {
            out.dims[axis] = b[axis];
        } else {
            throw DimensionError(axis_mismatch(op, axis, a[axis], b[axis]));
        }
    }
    return out;
}

template <typename Fn>
void for_each_broadcast(const Shape& out, const std::array<std::size_t, 5>& sa,
                        const std::array<std::size_t, 5>& sb, Fn&& fn) {
    std::size_t o = 0;
    for (std::size_t n = 0; n < out[0]; ++n)
        for (std::size_t c = 0; c < out[1]; ++c)
            for (std::size_t t = 0; t < out[2]; ++t)
                for (std::size_t h = 0; h < out[3]; ++h)
                    for (std::size_t w = 0; w < out[4]; ++w, ++o) {
                        const std::size_t ia = n * sa[0] + c * sa[1] + t * sa[2] + h * sa[3] + w * sa[4];
                        const std::size_t ib = n * sb[0] + c * sb[1] + t * sb[2] + h * sb[3] + w * sb[4];
                        fn(o, ia, ib);
                    }
}

struct LinearWeights {
    std::vector<std::size_t> lo, hi;
    std::vector<double> w_lo, w_hi;
};

// Half-pixel-center source coordinates, clamped at the borders.
LinearWeights bilinear_weights(std::size_t in, std::size_t out) {
    LinearWeights lw;
    lw.lo.resize(out);
    lw.hi.resize(out);
    lw.w_lo.resize(out);
    lw.w_hi.resize(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
        if (src < 0.0) src = 0.0;
        auto i0 = static_cast<std::size_t>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        const std::size_t i1 = std::min(i0 + 1, in - 1);
        const double frac = src - static_cast<double>(i0);
        lw.lo[i] = i0;
        lw.hi[i] = i1;
        lw.w_lo[i] = 1.0 - frac;
        lw.w_hi[i] = frac;
    }
    return lw;
}

}  // namespace

// ---------------------------------------------------------------------------
// conv3d
// ---------------------------------------------------------------------------

Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, Triple stride,
              Triple padding) {
    const Shape& xs = input.shape();
    const Shape& ws = weight.shape();
    if (ws.c() != xs.c()) {
        throw DimensionError("conv3d: weight expects " + std::to_string(ws.c()) +
                             " input channels on axis C, input has " + std::to_string(xs.c()));
    }
    ConvGeometry g;
    g.cin = xs.c();
    g.t = xs.t();
    g.h = xs.h();
    g.w = xs.w();
    g.cout = ws.n();
    g.kernel = {ws.t(), ws.h(), ws.w()};
    g.stride = stride;
    g.padding = padding;
    g.to = conv_extent(g.t, g.kernel[0], stride[0], padding[0], 0);
    g.ho = conv_extent(g.h, g.kernel[1], stride[1], padding[1], 1);
    g.wo = conv_extent(g.w, g.kernel[2], stride[2], padding[2], 2);
    if (bias.defined() && bias.numel() != g.cout) {
        throw DimensionError("conv3d: bias has " + std::to_string(bias.numel()) +
                             " values for " + std::to_string(g.cout) + " output channels (axis C)");
    }

    const std::size_t batch = xs.n();
    const std::size_t positions = g.positions();
    const std::size_t patch = g.patch();
    const Shape out_shape(batch, g.cout, g.to, g.ho, g.wo);
    std::vector<double> out(out_shape.numel());

    const double* x = input.data().data();
    const ConstMatMap wmat(weight.data().data(), static_cast<long>(g.cout), static_cast<long>(patch));
    std::vector<double> cols(g.pointwise() ? 0 : patch * positions);
    for (std::size_t n = 0; n < batch; ++n) {
        const double* xn = x + n * g.in_volume();
        const double* src = xn;
        if (!g.pointwise()) {
            im2col(xn, g, cols.data());
            src = cols.data();
        }
        MatMap omat(out.data() + n * g.cout * positions, static_cast<long>(g.cout),
                    static_cast<long>(positions));
        omat.noalias() = wmat * ConstMatMap(src, static_cast<long>(patch), static_cast<long>(positions));
        if (bias.defined()) {
            const auto b = bias.data();
            for (std::size_t r = 0; r < g.cout; ++r) omat.row(static_cast<long>(r)).array() += b[r];
        }
    }

    return Tensor::from_op(
        "conv3d", out_shape, std::move(out), {input, weight, bias},
        [input, weight, bias, g](const detail::TensorImpl& o) {
            auto* gx = grad_target(input);
            auto* gw = grad_target(weight);
            auto* gb = grad_target(bias);
            const std::size_t positions = g.positions();
            const std::size_t patch = g.patch();
            const ConstMatMap wmat(weight.data().data(), static_cast<long>(g.cout),
                                   static_cast<long>(patch));
            std::vector<double> cols(g.pointwise() ? 0 : patch * positions);
            std::vector<double> dcols(g.pointwise() ? 0 : patch * positions);
            const double* x = input.data().data();
            for (std::size_t n = 0; n < input.shape().n(); ++n) {
                const ConstMatMap dy(o.grad.data() + n * g.cout * positions,
                                     static_cast<long>(g.cout), static_cast<long>(positions));
                if (gb) {
                    // Plain loop: Eigen's vectorized sum peels by address, so the
                    // result would vary with allocation alignment.
                    const double* dyn = o.grad.data() + n * g.cout * positions;
                    for (std::size_t r = 0; r < g.cout; ++r) {
                        double acc = 0.0;
                        for (std::size_t q = 0; q < positions; ++q) acc += dyn[r * positions + q];
                        (*gb)[r] += acc;
                    }
                }
                const double* xn = x + n * g.in_volume();
                if (gw) {
                    const double* src = xn;
                    if (!g.pointwise()) {
                        im2col(xn, g, cols.data());
                        src = cols.data();
                    }
                    MatMap gwm(gw->data(), static_cast<long>(g.cout), static_cast<long>(patch));
                    gwm.noalias() += dy * ConstMatMap(src, static_cast<long>(patch),
                                                      static_cast<long>(positions)).transpose();
                }
                if (gx) {
                    double* gxn = gx->data() + n * g.in_volume();
                    if (g.pointwise()) {
                        MatMap gxm(gxn, static_cast<long>(patch), static_cast<long>(positions));
                        gxm.noalias() += wmat.transpose() * dy;
                    } else {
                        MatMap dc(dcols.data(), static_cast<long>(patch), static_cast<long>(positions));
                        dc.noalias() = wmat.transpose() * dy;
                        col2im(dcols.data(), g, gxn);
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

PoolMode parse_pool_mode(std::string_view name) {
    if (name == "max3d_same") return PoolMode::max3d_same;
    if (name == "max_global") return PoolMode::max_global;
    if (name == "avg_temporal_global") return PoolMode::avg_temporal_global;
    if (name == "avg_spatial") return PoolMode::avg_spatial;
    if (name == "avg_global") return PoolMode::avg_global;
    throw UsageError("unknown pool mode '" + std::string(name) +
                     "' (expected max3d_same, max_global, avg_temporal_global, avg_spatial, "
                     "avg_global)");
}

namespace {

Tensor max_pool_same(const Tensor& input) {
    const Shape s = input.shape();
    const auto x = input.data();
    std::vector<double> out(s.numel());
    std::vector<std::size_t> argmax(s.numel());
    const long T = static_cast<long>(s.t()), H = static_cast<long>(s.h()), W = static_cast<long>(s.w());
    std::size_t o = 0;
    for (std::size_t nc = 0; nc < s.n() * s.c(); ++nc) {
        const std::size_t base = nc * s.t() * s.h() * s.w();
        for (long t = 0; t < T; ++t)
            for (long h = 0; h < H; ++h)
                for (long w = 0; w < W; ++w, ++o) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_idx = base + static_cast<std::size_t>((t * H + h) * W + w);
                    for (long dt = -1; dt <= 1; ++dt) {
                        const long tt = t + dt;
                        if (tt < 0 || tt >= T) continue;
                        for (long dh = -1; dh <= 1; ++dh) {
                            const long hh = h + dh;
                            if (hh < 0 || hh >= H) continue;
                            for (long dw = -1; dw <= 1; ++dw) {
                                const long ww = w + dw;
                                if (ww < 0 || ww >= W) continue;
                                const std::size_t idx = base + static_cast<std::size_t>((tt * H + hh) * W + ww);
                                if (x[idx] > best) {
                                    best = x[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    out[o] = best;
                    argmax[o] = best_idx;
                }
    }
    return Tensor::from_op("max3d_same", s, std::move(out), {input},
                           [input, argmax = std::move(argmax)](const detail::TensorImpl& o) {
                               auto* gx = grad_target(input);
                               if (!gx) return;
                               for (std::size_t i = 0; i < argmax.size(); ++i) (*gx)[argmax[i]] += o.grad[i];
                           });
}

Tensor max_pool_global(const Tensor& input) {
    const Shape s = input.shape();
    const auto x = input.data();
    const std::size_t vol = s.t() * s.h() * s.w();
    const Shape out_shape(s.n(), s.c(), 1, 1, 1);
    std::vector<double> out(out_shape.numel());
    std::vector<std::size_t> argmax(out_shape.numel());
    for (std::size_t nc = 0; nc < s.n() * s.c(); ++nc) {
        std::size_t best = nc * vol;
        for (std::size_t i = nc * vol + 1; i < (nc + 1) * vol; ++i) {
            if (x[i] > x[best]) best = i;
        }
        out[nc] = x[best];
        argmax[nc] = best;
    }
    return Tensor::from_op("max_global", out_shape, std::move(out), {input},
                           [input, argmax = std::move(argmax)](const detail::TensorImpl& o) {
                               auto* gx = grad_target(input);
                               if (!gx) return;
                               for (std::size_t i = 0; i < argmax.size(); ++i) (*gx)[argmax[i]] += o.grad[i];
                           });
}

Tensor avg_temporal(const Tensor& input) {
    const Shape s = input.shape();
    const auto x = input.data();
    const Shape out_shape(s.n(), s.c(), 1, s.h(), s.w());
    const std::size_t plane = s.h() * s.w();
    const double inv = 1.0 / static_cast<double>(s.t());
    std::vector<double> out(out_shape.numel(), 0.0);
    for (std::size_t nc = 0; nc < s.n() * s.c(); ++nc) {
        double* dst = out.data() + nc * plane;
        for (std::size_t t = 0; t < s.t(); ++t) {
            const double* src = x.data() + (nc * s.t() + t) * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
        }
        for (std::size_t i = 0; i < plane; ++i) dst[i] *= inv;
    }
    return Tensor::from_op("avg_temporal_global", out_shape, std::move(out), {input},
                           [input, s, plane, inv](const detail::TensorImpl& o) {
                               auto* gx = grad_target(input);
                               if (!gx) return;
                               for (std::size_t nc = 0; nc < s.n() * s.c(); ++nc) {
                                   const double* dy = o.grad.data() + nc * plane;
                                   for (std::size_t t = 0; t < s.t(); ++t) {
                                       double* dst = gx->data() + (nc * s.t() + t) * plane;
                                       for (std::size_t i = 0; i < plane; ++i) dst[i] += dy[i] * inv;
                                   }
                               }
                           });
}

Tensor avg_spatial(const Tensor& input, std::size_t r) {
    if (r == 0) throw PreconditionError("avg_spatial: window size r must be >= 1");
    const Shape s = input.shape();
    const auto x = input.data();
    const std::size_t ho = (s.h() + r - 1) / r;
    const std::size_t wo = (s.w() + r - 1) / r;
    const Shape out_shape(s.n(), s.c(), s.t(), ho, wo);
    std::vector<double> out(out_shape.numel());
    const std::size_t slices = s.n() * s.c() * s.t();
    for (std::size_t sl = 0; sl < slices; ++sl) {
        const double* src = x.data() + sl * s.h() * s.w();
        double* dst = out.data() + sl * ho * wo;
        for (std::size_t oh = 0; oh < ho; ++oh) {
            const std::size_t h_end = std::min(oh * r + r, s.h());
            for (std::size_t ow = 0; ow < wo; ++ow) {
                const std::size_t w_end = std::min(ow * r + r, s.w());
                double acc = 0.0;
                for (std::size_t h = oh * r; h < h_end; ++h)
                    for (std::size_t w = ow * r; w < w_end; ++w) acc += src[h * s.w() + w];
                dst[oh * wo + ow] = acc / static_cast<double>((h_end - oh * r) * (w_end - ow * r));
            }
        }
    }
    return Tensor::from_op(
        "avg_spatial", out_shape, std::move(out), {input},
        [input, s, r, ho, wo, slices](const detail::TensorImpl& o) {
            auto* gx = grad_target(input);
            if (!gx) return;
            for (std::size_t sl = 0; sl < slices; ++sl) {
                double* dst = gx->data() + sl * s.h() * s.w();
                const double* dy = o.grad.data() + sl * ho * wo;
                for (std::size_t oh = 0; oh < ho; ++oh) {
                    const std::size_t h_end = std::min(oh * r + r, s.h());
                    for (std::size_t ow = 0; ow < wo; ++ow) {
                        const std::size_t w_end = std::min(ow * r + r, s.w());
                        const double g = dy[oh * wo + ow] /
                                         static_cast<double>((h_end - oh * r) * (w_end - ow * r));
                        for (std::size_t h = oh * r; h < h_end; ++h)
                            for (std::size_t w = ow * r; w < w_end; ++w) dst[h * s.w() + w] += g;
                    }
                }
            }
        });
}

Tensor avg_global(const Tensor& input) {
    const Shape s = input.shape();
    const auto x = input.data();
    const std::size_t vol = s.t() * s.h() * s.w();
    const Shape out_shape(s.n(), s.c(), 1, 1, 1);
    std::vector<double> out(out_shape.numel());
    const double inv = 1.0 / static_cast<double>(vol);
    for (std::size_t nc = 0; nc < s.n() * s.c(); ++nc) {
        double acc = 0.0;
        for (std::size_t i = 0; i < vol; ++i) acc += x[nc * vol + i];
        out[nc] = acc * inv;
    }
    return Tensor::from_op("avg_global", out_shape, std::move(out), {input},
                           [input, vol, inv](const detail::TensorImpl& o) {
                               auto* gx = grad_target(input);
                               if (!gx) return;
                               for (std::size_t nc = 0; nc < o.data.size(); ++nc) {
                                   const double g = o.grad[nc] * inv;
                                   for (std::size_t i = 0; i < vol; ++i) (*gx)[nc * vol + i] += g;
                               }
                           });
}

}  // namespace

Tensor pool(const Tensor& input, PoolMode mode, std::size_t r) {
    for (double v : input.data()) {
        if (!std::isfinite(v)) throw NumericError("pool: non-finite input value");
    }
    switch (mode) {
        case PoolMode::max3d_same: return max_pool_same(input);
        case PoolMode::max_global: return max_pool_global(input);
        case PoolMode::avg_temporal_global: return avg_temporal(input);
        case PoolMode::avg_spatial: return avg_spatial(input, r);
        case PoolMode::avg_global: return avg_global(input);
    }
    throw UsageError("pool: unknown mode");
}

// ---------------------------------------------------------------------------
// Resizing
// ---------------------------------------------------------------------------

Tensor repeat_temporal(const Tensor& input, std::size_t t) {
    const Shape s = input.shape();
    if (s.t() != 1) {
        throw PreconditionError("repeat_temporal: input must have T=1, got T=" + std::to_string(s.t()));
    }
    if (t == 0) throw PreconditionError("repeat_temporal: target T must be >= 1");
    const Shape out_shape(s.n(), s.c(), t, s.h(), s.w());
    const std::size_t plane = s.h() * s.w();
    const auto x = input.data();
    std::vector<double> out(out_shape.numel());
    for (std::size_t nc = 0; nc < s.n() * s.c(); ++nc)
        for (std::size_t k = 0; k < t; ++k)
            std::copy_n(x.data() + nc * plane, plane, out.data() + (nc * t + k) * plane);
    return Tensor::from_op("repeat_temporal", out_shape, std::move(out), {input},
                           [input, s, t, plane](const detail::TensorImpl& o) {
                               auto* gx = grad_target(input);
                               if (!gx) return;
                               for (std::size_t nc = 0; nc < s.n() * s.c(); ++nc)
                                   for (std::size_t k = 0; k < t; ++k)
                                       for (std::size_t i = 0; i < plane; ++i)
                                           (*gx)[nc * plane + i] += o.grad[(nc * t + k) * plane + i];
                           });
}

Tensor resize_bilinear(const Tensor& input, std::size_t h, std::size_t w) {
    if (h == 0 || w == 0) throw PreconditionError("resize_bilinear: target extents must be >= 1");
    const Shape s = input.shape();
    const Shape out_shape(s.n(), s.c(), s.t(), h, w);
    const LinearWeights wy = bilinear_weights(s.h(), h);
    const LinearWeights wx = bilinear_weights(s.w(), w);
    const auto x = input.data();
    const std::size_t slices = s.n() * s.c() * s.t();
    std::vector<double> out(out_shape.numel());
    for (std::size_t sl = 0; sl < slices; ++sl) {
        const double* src = x.data() + sl * s.h() * s.w();
        double* dst = out.data() + sl * h * w;
        for (std::size_t i = 0; i < h; ++i) {
            const double* r0 = src + wy.lo[i] * s.w();
            const double* r1 = src + wy.hi[i] * s.w();
            for (std::size_t j = 0; j < w; ++j) {
                const double top = wx.w_lo[j] * r0[wx.lo[j]] + wx.w_hi[j] * r0[wx.hi[j]];
                const double bot = wx.w_lo[j] * r1[wx.lo[j]] + wx.w_hi[j] * r1[wx.hi[j]];
                dst[i * w + j] = wy.w_lo[i] * top + wy.w_hi[i] * bot;
            }
        }
    }
    return Tensor::from_op(
        "resize_bilinear", out_shape, std::move(out), {input},
        [input, s, h, w, wy, wx, slices](const detail::TensorImpl& o) {
            auto* gx = grad_target(input);
            if (!gx) return;
            for (std::size_t sl = 0; sl < slices; ++sl) {
                double* dst = gx->data() + sl * s.h() * s.w();
                const double* dy = o.grad.data() + sl * h * w;
                for (std::size_t i = 0; i < h; ++i) {
                    double* r0 = dst + wy.lo[i] * s.w();
                    double* r1 = dst + wy.hi[i] * s.w();
                    for (std::size_t j = 0; j < w; ++j) {
                        const double g = dy[i * w + j];
                        const double gt = g * wy.w_lo[i];
                        const double gb = g * wy.w_hi[i];
                        r0[wx.lo[j]] += gt * wx.w_lo[j];
                        r0[wx.hi[j]] += gt * wx.w_hi[j];
                        r1[wx.lo[j]] += gb * wx.w_lo[j];
                        r1[wx.hi[j]] += gb * wx.w_hi[j];
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Pointwise
// ---------------------------------------------------------------------------

Tensor sigmoid(const Tensor& x) {
    const auto in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-in[i]));
    return Tensor::from_op("sigmoid", x.shape(), std::move(out), {x},
                           [x](const detail::TensorImpl& o) {
                               auto* gx = grad_target(x);
                               if (!gx) return;
                               for (std::size_t i = 0; i < o.data.size(); ++i) {
                                   const double y = o.data[i];
                                   (*gx)[i] += o.grad[i] * y * (1.0 - y);
                               }
                           });
}

Tensor relu(const Tensor& x) {
    const auto in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
    return Tensor::from_op("relu", x.shape(), std::move(out), {x},
                           [x](const detail::TensorImpl& o) {
                               auto* gx = grad_target(x);
                               if (!gx) return;
                               const auto in = x.data();
                               for (std::size_t i = 0; i < o.data.size(); ++i) {
                                   if (in[i] > 0.0) (*gx)[i] += o.grad[i];
                               }
                           });
}

Tensor add(const Tensor& a, const Tensor& b) {
    const Shape out_shape = broadcast_shape("add", a.shape(), b.shape());
    const auto sa = broadcast_strides(a.shape(), out_shape);
    const auto sb = broadcast_strides(b.shape(), out_shape);
    const auto da = a.data();
    const auto db = b.data();
    std::vector<double> out(out_shape.numel());
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
    } else {
        for_each_broadcast(out_shape, sa, sb,
                           [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = da[ia] + db[ib]; });
    }
    return Tensor::from_op("add", out_shape, std::move(out), {a, b},
                           [a, b, out_shape, sa, sb](const detail::TensorImpl& o) {
                               auto* ga = grad_target(a);
                               auto* gb = grad_target(b);
                               for_each_broadcast(out_shape, sa, sb,
                                                  [&](std::size_t i, std::size_t ia, std::size_t ib) {
                                                      if (ga) (*ga)[ia] += o.grad[i];
                                                      if (gb) (*gb)[ib] += o.grad[i];
                                                  });
                           });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const Shape out_shape = broadcast_shape("mul", a.shape(), b.shape());
    const auto sa = broadcast_strides(a.shape(), out_shape);
    const auto sb = broadcast_strides(b.shape(), out_shape);
    const auto da = a.data();
    const auto db = b.data();
    std::vector<double> out(out_shape.numel());
    for_each_broadcast(out_shape, sa, sb,
                       [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = da[ia] * db[ib]; });
    return Tensor::from_op("mul", out_shape, std::move(out), {a, b},
                           [a, b, out_shape, sa, sb](const detail::TensorImpl& o) {
                               auto* ga = grad_target(a);
                               auto* gb = grad_target(b);
                               const auto da = a.data();
                               const auto db = b.data();
                               for_each_broadcast(out_shape, sa, sb,
                                                  [&](std::size_t i, std::size_t ia, std::size_t ib) {
                                                      if (ga) (*ga)[ia] += o.grad[i] * db[ib];
                                                      if (gb) (*gb)[ib] += o.grad[i] * da[ia];
                                                  });
                           });
}

Tensor scale(const Tensor& x, double factor) {
    const auto in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * factor;
    return Tensor::from_op("scale", x.shape(), std::move(out), {x},
                           [x, factor](const detail::TensorImpl& o) {
                               auto* gx = grad_target(x);
                               if (!gx) return;
                               for (std::size_t i = 0; i < o.grad.size(); ++i) (*gx)[i] += o.grad[i] * factor;
                           });
}

// ---------------------------------------------------------------------------
// Matrix views
// ---------------------------------------------------------------------------

Tensor softmax_last(const Tensor& x) {
    const Shape s = x.shape();
    const std::size_t cols = s.w();
    const std::size_t rows = s.numel() / cols;
    const auto in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* src = in.data() + r * cols;
        double* dst = out.data() + r * cols;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < cols; ++j) {
            if (std::isnan(src[j])) throw NumericError("softmax: NaN in input row " + std::to_string(r));
            mx = std::max(mx, src[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            dst[j] = std::exp(src[j] - mx);
            total += dst[j];
        }
        for (std::size_t j = 0; j < cols; ++j) dst[j] /= total;
    }
    return Tensor::from_op("softmax", s, std::move(out), {x},
                           [x, rows, cols](const detail::TensorImpl& o) {
                               auto* gx = grad_target(x);
                               if (!gx) return;
                               for (std::size_t r = 0; r < rows; ++r) {
                                   const double* y = o.data.data() + r * cols;
                                   const double* dy = o.grad.data() + r * cols;
                                   double dot = 0.0;
                                   for (std::size_t j = 0; j < cols; ++j) dot += y[j] * dy[j];
                                   for (std::size_t j = 0; j < cols; ++j)
                                       (*gx)[r * cols + j] += y[j] * (dy[j] - dot);
                               }
                           });
}

Tensor matmul_batched(const Tensor& a, const Tensor& b) {
    const Shape sa = a.shape();
    const Shape sb = b.shape();
    for (std::size_t axis = 0; axis < 3; ++axis) {
        if (sa[axis] != sb[axis]) throw DimensionError(axis_mismatch("matmul_batched", axis, sa[axis], sb[axis]));
    }
    if (sa.w() != sb.h()) {
        throw DimensionError("matmul_batched: inner extents differ (a has " + std::to_string(sa.w()) +
                             " columns on axis W, b has " + std::to_string(sb.h()) + " rows on axis H)");
    }
    const long m = static_cast<long>(sa.h()), k = static_cast<long>(sa.w()), n = static_cast<long>(sb.w());
    const std::size_t batches = sa.n() * sa.c() * sa.t();
    const Shape out_shape(sa.n(), sa.c(), sa.t(), sa.h(), sb.w());
    std::vector<double> out(out_shape.numel());
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < batches; ++i) {
        MatMap(out.data() + i * m * n, m, n).noalias() =
            ConstMatMap(pa + i * m * k, m, k) * ConstMatMap(pb + i * k * n, k, n);
    }
    return Tensor::from_op("matmul_batched", out_shape, std::move(out), {a, b},
                           [a, b, m, k, n, batches](const detail::TensorImpl& o) {
                               auto* ga = grad_target(a);
                               auto* gb = grad_target(b);
                               const double* pa = a.data().data();
                               const double* pb = b.data().data();
                               for (std::size_t i = 0; i < batches; ++i) {
                                   const ConstMatMap dy(o.grad.data() + i * m * n, m, n);
                                   if (ga) {
                                       MatMap(ga->data() + i * m * k, m, k).noalias() +=
                                           dy * ConstMatMap(pb + i * k * n, k, n).transpose();
                                   }
                                   if (gb) {
                                       MatMap(gb->data() + i * k * n, k, n).noalias() +=
                                           ConstMatMap(pa + i * m * k, m, k).transpose() * dy;
                                   }
                               }
                           });
}

Tensor transpose_last2(const Tensor& x) {
    const Shape s = x.shape();
    const std::size_t rows = s.h(), cols = s.w();
    const std::size_t batches = s.n() * s.c() * s.t();
    const Shape out_shape(s.n(), s.c(), s.t(), cols, rows);
    const auto in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t b = 0; b < batches; ++b)
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j)
                out[b * rows * cols + j * rows + i] = in[b * rows * cols + i * cols + j];
    return Tensor::from_op("transpose_last2", out_shape, std::move(out), {x},
                           [x, rows, cols, batches](const detail::TensorImpl& o) {
                               auto* gx = grad_target(x);
                               if (!gx) return;
                               for (std::size_t b = 0; b < batches; ++b)
                                   for (std::size_t i = 0; i < rows; ++i)
                                       for (std::size_t j = 0; j < cols; ++j)
                                           (*gx)[b * rows * cols + i * cols + j] +=
                                               o.grad[b * rows * cols + j * rows + i];
                           });
}

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape.numel() != x.numel()) {
        throw DimensionError("reshape: cannot view " + x.shape().str() + " as " + shape.str());
    }
    const auto in = x.data();
    return Tensor::from_op("reshape", shape, std::vector<double>(in.begin(), in.end()), {x},
                           [x](const detail::TensorImpl& o) {
                               auto* gx = grad_target(x);
                               if (!gx) return;
                               for (std::size_t i = 0; i < o.grad.size(); ++i) (*gx)[i] += o.grad[i];
                           });
}

std::vector<Tensor> split_channels(const Tensor& x, std::size_t k) {
    const Shape s = x.shape();
    if (k == 0 || s.c() % k != 0) {
        throw PreconditionError("split_channels: " + std::to_string(s.c()) +
                                " channels are not divisible into " + std::to_string(k) + " parts");
    }
    const std::size_t part_c = s.c() / k;
    const std::size_t vol = s.t() * s.h() * s.w();
    const Shape part_shape(s.n(), part_c, s.t(), s.h(), s.w());
    const auto in = x.data();
    std::vector<Tensor> parts;
    parts.reserve(k);
    for (std::size_t j = 0; j < k; ++j) {
        std::vector<double> out(part_shape.numel());
        for (std::size_t n = 0; n < s.n(); ++n) {
            const double* src = in.data() + (n * s.c() + j * part_c) * vol;
            std::copy_n(src, part_c * vol, out.data() + n * part_c * vol);
        }
        parts.push_back(Tensor::from_op(
            "split_channels", part_shape, std::move(out), {x},
            [x, s, j, part_c, vol](const detail::TensorImpl& o) {
                auto* gx = grad_target(x);
                if (!gx) return;
                for (std::size_t n = 0; n < s.n(); ++n) {
                    double* dst = gx->data() + (n * s.c() + j * part_c) * vol;
                    const double* dy = o.grad.data() + n * part_c * vol;
                    for (std::size_t i = 0; i < part_c * vol; ++i) dst[i] += dy[i];
                }
            }));
    }
    return parts;
}

Tensor concat_channels(std::span<const Tensor> parts) {
    if (parts.empty()) throw PreconditionError("concat_channels: no inputs");
    const Shape first = parts[0].shape();
    std::size_t total_c = 0;
    for (const auto& p : parts) {
        for (std::size_t axis : {0u, 2u, 3u, 4u}) {
            if (p.shape()[axis] != first[axis]) {
                throw DimensionError(axis_mismatch("concat_channels", axis, p.shape()[axis], first[axis]));
            }
        }
        total_c += p.shape().c();
    }
    const std::size_t vol = first.t() * first.h() * first.w();
    const Shape out_shape(first.n(), total_c, first.t(), first.h(), first.w());
    std::vector<double> out(out_shape.numel());
    std::vector<std::size_t> offsets;
    std::size_t c0 = 0;
    for (const auto& p : parts) {
        offsets.push_back(c0);
        const auto in = p.data();
        const std::size_t pc = p.shape().c();
        for (std::size_t n = 0; n < first.n(); ++n)
            std::copy_n(in.data() + n * pc * vol, pc * vol, out.data() + (n * total_c + c0) * vol);
        c0 += pc;
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return Tensor::from_op("concat_channels", out_shape, std::move(out), inputs,
                           [inputs, offsets, total_c, vol, batch = first.n()](const detail::TensorImpl& o) {
                               for (std::size_t j = 0; j < inputs.size(); ++j) {
                                   auto* g = grad_target(inputs[j]);
                                   if (!g) continue;
                                   const std::size_t pc = inputs[j].shape().c();
                                   for (std::size_t n = 0; n < batch; ++n) {
                                       const double* src = o.grad.data() + (n * total_c + offsets[j]) * vol;
                                       double* dst = g->data() + n * pc * vol;
                                       for (std::size_t i = 0; i < pc * vol; ++i) dst[i] += src[i];
                                   }
                               }
                           });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    return Tensor::from_op("sum", Shape{}, {acc}, {x}, [x](const detail::TensorImpl& o) {
        auto* gx = grad_target(x);
        if (!gx) return;
        for (double& g : *gx) g += o.grad[0];
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    const Shape s = logits.shape();
    if (s.t() != 1 || s.h() != 1 || s.w() != 1) {
        throw DimensionError("cross_entropy: logits must be (N, K, 1, 1, 1), got " + s.str());
    }
    if (labels.size() != s.n()) {
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                             std::to_string(s.n()) + " on axis N");
    }
    const std::size_t k = s.c();
    const auto z = logits.data();
    std::vector<double> probs(z.size());
    double loss = 0.0;
    for (std::size_t n = 0; n < s.n(); ++n) {
        const int label = labels[n];
        if (label < 0 || static_cast<std::size_t>(label) >= k) {
            throw IndexError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                             std::to_string(k) + ")");
        }
        const double* row = z.data() + n * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) total += std::exp(row[j] - mx);
        const double lse = mx + std::log(total);
        for (std::size_t j = 0; j < k; ++j) probs[n * k + j] = std::exp(row[j] - lse);
        loss += lse - row[label];
    }
    const double inv_n = 1.0 / static_cast<double>(s.n());
    std::vector<int> owned(labels.begin(), labels.end());
    return Tensor::from_op("cross_entropy", Shape{}, {loss * inv_n}, {logits},
                           [logits, probs = std::move(probs), owned = std::move(owned), k,
                            inv_n](const detail::TensorImpl& o) {
                               auto* gz = grad_target(logits);
                               if (!gz) return;
                               const double g = o.grad[0] * inv_n;
                               for (std::size_t n = 0; n < owned.size(); ++n) {
                                   for (std::size_t j = 0; j < k; ++j) {
                                       const double target = static_cast<int>(j) == owned[n] ? 1.0 : 0.0;
                                       (*gz)[n * k + j] += g * (probs[n * k + j] - target);
                                   }
                               }
                           });
}

}  // namespace cvr
