#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cvr/model.hpp"
#include "cvr/param_store.hpp"
#include "cvr/rng.hpp"
#include "cvr/tensor.hpp"
#include "support.hpp"

// Loop-level reference implementations shared by the unit and acceptance tests.
namespace cvr::testing {

// Plain-array view for the loop oracles.
struct Grid {
    Shape s;
    std::vector<double> v;
    explicit Grid(Shape shape, double fill = 0.0) : s(shape), v(shape.numel(), fill) {}
    explicit Grid(const Tensor& t) : s(t.shape()), v(t.data().begin(), t.data().end()) {}
    double& at(std::size_t n, std::size_t c, std::size_t t, std::size_t h, std::size_t w) {
        return v[s.offset(n, c, t, h, w)];
    }
    double at(std::size_t n, std::size_t c, std::size_t t, std::size_t h, std::size_t w) const {
        return v[s.offset(n, c, t, h, w)];
    }
};

inline void randomize(ParamStore& store, Rng& rng, double lo = -0.5, double hi = 0.5) {
    for (auto& [path, e] : store)
        for (double& v : e.tensor.mutable_data()) v = rng.uniform(lo, hi);
}

inline void zero_biases(ParamStore& store) {
    for (auto& [path, e] : store)
        if (path.ends_with(".bias"))
            for (double& v : e.tensor.mutable_data()) v = 0.0;
}

// Denoising gate evaluated directly, per (n, c, t, h, w).
inline Grid dm_oracle(const Grid& x, const Tensor& w, const Tensor& b, std::size_t r) {
    const Shape& s = x.s;
    const std::size_t H = s.h(), W = s.w();
    Grid tmean(Shape(s.n(), s.c(), 1, H, W));
    for (std::size_t n = 0; n < s.n(); ++n)
        for (std::size_t c = 0; c < s.c(); ++c)
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t ww = 0; ww < W; ++ww) {
                    double acc = 0.0;
                    for (std::size_t t = 0; t < s.t(); ++t) acc += x.at(n, c, t, h, ww);
                    tmean.at(n, c, 0, h, ww) = acc / static_cast<double>(s.t());
                }
    const std::size_t ph = (H + r - 1) / r, pw = (W + r - 1) / r;
    Grid pooled(Shape(s.n(), s.c(), 1, ph, pw));
    for (std::size_t n = 0; n < s.n(); ++n)
        for (std::size_t c = 0; c < s.c(); ++c)
            for (std::size_t i = 0; i < ph; ++i)
                for (std::size_t j = 0; j < pw; ++j) {
                    double acc = 0.0;
                    std::size_t cnt = 0;
                    for (std::size_t a = i * r; a < std::min(H, i * r + r); ++a)
                        for (std::size_t bb = j * r; bb < std::min(W, j * r + r); ++bb, ++cnt)
                            acc += tmean.at(n, c, 0, a, bb);
                    pooled.at(n, c, 0, i, j) = acc / static_cast<double>(cnt);
                }
    Grid conv(pooled.s);
    for (std::size_t n = 0; n < s.n(); ++n)
        for (std::size_t co = 0; co < s.c(); ++co)
            for (std::size_t i = 0; i < ph; ++i)
                for (std::size_t j = 0; j < pw; ++j) {
                    double acc = b.data()[co];
                    for (std::size_t ci = 0; ci < s.c(); ++ci)
                        for (int di = -1; di <= 1; ++di)
                            for (int dj = -1; dj <= 1; ++dj) {
                                const long ii = static_cast<long>(i) + di, jj = static_cast<long>(j) + dj;
                                if (ii < 0 || jj < 0 || ii >= static_cast<long>(ph) || jj >= static_cast<long>(pw))
                                    continue;
                                acc += w(co, ci, 0, di + 1, dj + 1) * pooled.at(n, ci, 0, ii, jj);
                            }
                    conv.at(n, co, 0, i, j) = acc;
                }
    // Half-pixel bilinear upsampling back to H x W.
    auto src = [](std::size_t d, std::size_t in, std::size_t out, std::size_t& lo, std::size_t& hi, double& f) {
        double pos = (static_cast<double>(d) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
        pos = std::clamp(pos, 0.0, static_cast<double>(in - 1));
        lo = static_cast<std::size_t>(std::floor(pos));
        hi = std::min(lo + 1, in - 1);
        f = pos - static_cast<double>(lo);
    };
    Grid out(s);
    for (std::size_t n = 0; n < s.n(); ++n)
        for (std::size_t c = 0; c < s.c(); ++c)
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t ww = 0; ww < W; ++ww) {
                    std::size_t y0, y1, x0, x1;
                    double fy, fx;
                    src(h, ph, H, y0, y1, fy);
                    src(ww, pw, W, x0, x1, fx);
                    const double up = (1 - fy) * ((1 - fx) * conv.at(n, c, 0, y0, x0) + fx * conv.at(n, c, 0, y0, x1)) +
                                      fy * ((1 - fx) * conv.at(n, c, 0, y1, x0) + fx * conv.at(n, c, 0, y1, x1));
                    const double gate = sigmoid_ref(tmean.at(n, c, 0, h, ww) + up);
                    for (std::size_t t = 0; t < s.t(); ++t) out.at(n, c, t, h, ww) = gate * x.at(n, c, t, h, ww);
                }
    return out;
}

// Motion complement evaluated directly.
inline Grid smc_oracle(const Grid& fi, const Grid& fp, const ParamStore& p, const std::string& path) {
    const Shape& s = fp.s;
    const Tensor& w0 = p.get(path + ".spatial_squeeze.weight");
    const Tensor& b0 = p.get(path + ".spatial_squeeze.bias");
    const Tensor& w1 = p.get(path + ".spatial_expand.weight");
    const Tensor& b1 = p.get(path + ".spatial_expand.bias");
    const Tensor& w2 = p.get(path + ".channel.weight");
    const Tensor& b2 = p.get(path + ".channel.bias");
    const std::size_t C = s.c(), hid = w0.shape().n();
    Grid attended(s);
    for (std::size_t n = 0; n < s.n(); ++n)
        for (std::size_t t = 0; t < s.t(); ++t)
            for (std::size_t h = 0; h < s.h(); ++h)
                for (std::size_t w = 0; w < s.w(); ++w) {
                    std::vector<double> mp(C, -INFINITY);
                    for (std::size_t c = 0; c < C; ++c)
                        for (long a = -1; a <= 1; ++a)
                            for (long bb = -1; bb <= 1; ++bb)
                                for (long d = -1; d <= 1; ++d) {
                                    const long tt = static_cast<long>(t) + a, hh = static_cast<long>(h) + bb,
                                               ww = static_cast<long>(w) + d;
                                    if (tt < 0 || hh < 0 || ww < 0 || tt >= static_cast<long>(s.t()) ||
                                        hh >= static_cast<long>(s.h()) || ww >= static_cast<long>(s.w()))
                                        continue;
                                    mp[c] = std::max(mp[c], fp.at(n, c, tt, hh, ww));
                                }
                    std::vector<double> mid(hid);
                    for (std::size_t k = 0; k < hid; ++k) {
                        double acc = b0.data()[k];
                        for (std::size_t c = 0; c < C; ++c) acc += w0(k, c, 0, 0, 0) * mp[c];
                        mid[k] = std::max(acc, 0.0);
                    }
                    for (std::size_t c = 0; c < C; ++c) {
                        double acc = b1.data()[c];
                        for (std::size_t k = 0; k < hid; ++k) acc += w1(c, k, 0, 0, 0) * mid[k];
                        attended.at(n, c, t, h, w) = fp.at(n, c, t, h, w) * sigmoid_ref(acc);
                    }
                }
    Grid out(s);
    for (std::size_t n = 0; n < s.n(); ++n) {
        std::vector<double> g(C, -INFINITY);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < s.t(); ++t)
                for (std::size_t h = 0; h < s.h(); ++h)
                    for (std::size_t w = 0; w < s.w(); ++w) g[c] = std::max(g[c], attended.at(n, c, t, h, w));
        const std::size_t k = w2.shape().w();
        for (std::size_t c = 0; c < C; ++c) {
            double acc = b2.data()[0];
            for (std::size_t j = 0; j < k; ++j) {
                const long cc = static_cast<long>(c) + static_cast<long>(j) - static_cast<long>(k / 2);
                if (cc >= 0 && cc < static_cast<long>(C)) acc += w2(0, 0, 0, 0, j) * g[static_cast<std::size_t>(cc)];
            }
            const double wc = sigmoid_ref(acc);
            for (std::size_t t = 0; t < s.t(); ++t)
                for (std::size_t h = 0; h < s.h(); ++h)
                    for (std::size_t w = 0; w < s.w(); ++w)
                        out.at(n, c, t, h, w) = fi.at(n, c, t, h, w) + attended.at(n, c, t, h, w) * wc;
        }
    }
    return out;
}

// Non-local cross attention evaluated position by position.
inline Grid cma_oracle(const Grid& fi, const Grid& fp, const ParamStore& p, const std::string& path, std::size_t dk) {
    const Shape& s = fi.s;
    const std::size_t L = s.t() * s.h() * s.w(), C = s.c();
    auto project = [&](const Grid& f, const std::string& name) {
        const Tensor& w = p.get(path + "." + name + ".weight");
        const std::string bias_path = path + "." + name + ".bias";
        const std::vector<double> b = p.contains(bias_path)
                                          ? std::vector<double>(p.get(bias_path).data().begin(), p.get(bias_path).data().end())
                                          : std::vector<double>(dk, 0.0);
        // out[n][l][k]
        std::vector<std::vector<std::vector<double>>> out(s.n(), std::vector<std::vector<double>>(L, std::vector<double>(dk)));
        for (std::size_t n = 0; n < s.n(); ++n)
            for (std::size_t l = 0; l < L; ++l)
                for (std::size_t k = 0; k < dk; ++k) {
                    double acc = b[k];
                    for (std::size_t c = 0; c < C; ++c) acc += w(k, c, 0, 0, 0) * f.v[(n * C + c) * L + l];
                    out[n][l][k] = acc;
                }
        return out;
    };
    const auto ki = project(fi, "key_rgb"), qi = project(fi, "query_rgb"), vi = project(fi, "value_rgb");
    const auto kp = project(fp, "key_mvr"), qp = project(fp, "query_mvr"), vp = project(fp, "value_mvr");
    Grid out(Shape(s.n(), dk, s.t(), s.h(), s.w()));
    auto attend = [&](const auto& q, const auto& k, const auto& v, std::size_t n) {
        for (std::size_t i = 0; i < L; ++i) {
            std::vector<double> logit(L);
            double mx = -INFINITY;
            for (std::size_t j = 0; j < L; ++j) {
                double dot = 0.0;
                for (std::size_t d = 0; d < dk; ++d) dot += q[n][i][d] * k[n][j][d];
                logit[j] = dot / std::sqrt(static_cast<double>(dk));
                mx = std::max(mx, logit[j]);
            }
            double z = 0.0;
            for (double& e : logit) z += (e = std::exp(e - mx));
            for (std::size_t d = 0; d < dk; ++d) {
                double acc = 0.0;
                for (std::size_t j = 0; j < L; ++j) acc += logit[j] / z * v[n][j][d];
                out.v[(n * dk + d) * L + i] += acc;
            }
        }
    };
    for (std::size_t n = 0; n < s.n(); ++n) {
        attend(qp, ki, vi, n);
        attend(qi, kp, vp, n);
    }
    return out;
}

inline std::size_t msb_param_oracle(std::size_t in, std::size_t mid, std::size_t out, bool dm, bool fixed, bool shortcut) {
    const std::size_t p = mid / 4;
    std::size_t total = in * mid + mid + mid * out + out;
    for (std::size_t i = 2; i <= 4; ++i) {
        const std::size_t k = fixed ? 3 : 2 * i - 3;
        total += (dm ? 9 * p * p + p : 0) + 9 * p * p + p + k * p * p + p;
    }
    if (shortcut) total += in * out + out;
    return total;
}

inline std::size_t bottleneck_param_oracle(std::size_t in, std::size_t mid, std::size_t out, bool shortcut) {
    std::size_t total = in * mid + mid + 3 * mid * mid + mid + 9 * mid * mid + mid + mid * out + out;
    if (shortcut) total += in * out + out;
    return total;
}

inline ModelConfig small_model_config() {
    ModelConfig c;
    c.num_classes = 3;
    c.stem_width = 4;
    c.widths = {8, 16};
    c.blocks = {1, 1};
    c.temporal_strides = {1, 2};
    c.spatial_strides = {1, 2};
    c.smc_ratio = 4;
    c.cma_key_dim = 2;
    return c;
}

}  // namespace cvr::testing
