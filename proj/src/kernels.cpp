#include "lms/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lms::kernels {
namespace {

// Output indices o in [lo, hi) for which o * stride + offset lands inside [0, n_in).
void valid_range(Index n_in, Index n_out, Index stride, Index offset, Index& lo, Index& hi) {
    lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
    const Index last = n_in - 1 - offset;
    hi = last < 0 ? 0 : std::min(n_out, last / stride + 1);
    if (hi < lo) hi = lo;
}

struct ConvDims {
    Index batch, cin, cout, cin_g, cout_g, k;
    Extents3 in, out;
};

ConvDims check_conv(const Shape& xs, const Shape& ws, ConvGeometry g) {
    require_rank(xs, 5, "conv3d input");
    require_rank(ws, 5, "conv3d weight");
    if (g.stride < 1) throw_argument("conv3d: stride must be >= 1, got " + std::to_string(g.stride));
    if (g.pad < 0) throw_argument("conv3d: pad must be >= 0");
    if (g.groups < 1) throw_argument("conv3d: groups must be >= 1");
    ConvDims d{};
    d.batch = xs[0];
    d.cin = xs[1];
    d.cout = ws[0];
    d.cin_g = ws[1];
    d.k = ws[2];
    if (d.k < 1) throw_argument("conv3d: kernel size must be >= 1");
    if (ws[3] != d.k || ws[4] != d.k) throw_shape("conv3d: kernel must be cubic, got " + ws.str());
    if (d.cin % g.groups != 0) {
        throw_shape("conv3d: input channels " + std::to_string(d.cin) + " not divisible by groups " +
                    std::to_string(g.groups));
    }
    if (d.cout % g.groups != 0) {
        throw_shape("conv3d: output channels " + std::to_string(d.cout) + " not divisible by groups " +
                    std::to_string(g.groups));
    }
    if (d.cin / g.groups != d.cin_g) {
        throw_shape("conv3d: weight expects " + std::to_string(d.cin_g) + " input channels per group, input " +
                    xs.str() + " with groups " + std::to_string(g.groups) + " provides " +
                    std::to_string(d.cin / g.groups));
    }
    d.cout_g = d.cout / g.groups;
    d.in = {xs[2], xs[3], xs[4]};
    d.out = {conv_out_extent(d.in.d, d.k, g.stride, g.pad), conv_out_extent(d.in.h, d.k, g.stride, g.pad),
             conv_out_extent(d.in.w, d.k, g.stride, g.pad)};
    if (d.out.d < 1 || d.out.h < 1 || d.out.w < 1) {
        throw_shape("conv3d: input " + xs.str() + " too small for kernel " + std::to_string(d.k) + " with pad " +
                    std::to_string(g.pad));
    }
    return d;
}

// Visits every (output row, input row, kernel tap) triple of one (out-channel, in-channel) plane pair.
// fn(out_row_offset, in_row_offset, tap_index, ow_lo, ow_hi, w_offset)
template <typename Fn>
void for_each_tap_row(const ConvDims& d, ConvGeometry g, Fn&& fn) {
    const Index k = d.k, s = g.stride, p = g.pad;
    for (Index kd = 0; kd < k; ++kd) {
        Index od_lo, od_hi;
        valid_range(d.in.d, d.out.d, s, kd - p, od_lo, od_hi);
        for (Index kh = 0; kh < k; ++kh) {
            Index oh_lo, oh_hi;
            valid_range(d.in.h, d.out.h, s, kh - p, oh_lo, oh_hi);
            for (Index kw = 0; kw < k; ++kw) {
                Index ow_lo, ow_hi;
                valid_range(d.in.w, d.out.w, s, kw - p, ow_lo, ow_hi);
                if (ow_lo >= ow_hi) continue;
                const Index tap = (kd * k + kh) * k + kw;
                for (Index od = od_lo; od < od_hi; ++od) {
                    const Index id = od * s + kd - p;
                    for (Index oh = oh_lo; oh < oh_hi; ++oh) {
                        const Index ih = oh * s + kh - p;
                        fn((od * d.out.h + oh) * d.out.w, (id * d.in.h + ih) * d.in.w, tap, ow_lo, ow_hi, kw - p);
                    }
                }
            }
        }
    }
}

}  // namespace

Index conv_out_extent(Index n, Index k, Index stride, Index pad) {
    if (stride < 1) throw_argument("stride must be >= 1");
    const Index span = n + 2 * pad - k;
    if (span < 0) return 0;
    return span / stride + 1;
}

std::uint64_t conv3d_macs(const Shape& x, const Shape& w, ConvGeometry g) {
    const ConvDims d = check_conv(x, w, g);
    return static_cast<std::uint64_t>(d.batch) * static_cast<std::uint64_t>(d.cout) *
           static_cast<std::uint64_t>(d.out.voxels()) * static_cast<std::uint64_t>(d.cin_g * d.k * d.k * d.k);
}

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, ConvGeometry g) {
    const ConvDims d = check_conv(x.shape(), w.shape(), g);
    if (bias && bias->numel() != d.cout) {
        throw_shape("conv3d: bias has " + std::to_string(bias->numel()) + " entries, expected " +
                    std::to_string(d.cout));
    }
    Tensor<T> y = Tensor<T>::volume(d.batch, d.cout, d.out);
    const Index in_plane = d.in.voxels(), out_plane = d.out.voxels(), taps = d.k * d.k * d.k;
    const Index s = g.stride;
    for (Index b = 0; b < d.batch; ++b) {
        for (Index co = 0; co < d.cout; ++co) {
            T* yp = y.ptr() + (b * d.cout + co) * out_plane;
            if (bias) std::fill(yp, yp + out_plane, (*bias)[co]);
            const Index grp = co / d.cout_g;
            for (Index cl = 0; cl < d.cin_g; ++cl) {
                const Index ci = grp * d.cin_g + cl;
                const T* xp = x.ptr() + (b * d.cin + ci) * in_plane;
                const T* wp = w.ptr() + (co * d.cin_g + cl) * taps;
                for_each_tap_row(d, g, [&](Index orow, Index irow, Index tap, Index lo, Index hi, Index off) {
                    const T wv = wp[tap];
                    T* yr = yp + orow;
                    const T* xr = xp + irow + off;
                    if (s == 1) {
                        for (Index ow = lo; ow < hi; ++ow) yr[ow] += wv * xr[ow];
                    } else {
                        for (Index ow = lo; ow < hi; ++ow) yr[ow] += wv * xr[ow * s];
                    }
                });
            }
        }
    }
    return y;
}

template <typename T>
void conv3d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy, ConvGeometry g, Tensor<T>* gx,
                     Tensor<T>* gw, Tensor<T>* gb) {
    const ConvDims d = check_conv(x.shape(), w.shape(), g);
    if (gy.shape() != Shape{d.batch, d.cout, d.out.d, d.out.h, d.out.w}) {
        throw_shape("conv3d backward: gradient shape " + gy.shape().str() + " does not match output");
    }
    const Index in_plane = d.in.voxels(), out_plane = d.out.voxels(), taps = d.k * d.k * d.k;
    const Index s = g.stride;
    for (Index b = 0; b < d.batch; ++b) {
        for (Index co = 0; co < d.cout; ++co) {
            const T* gyp = gy.ptr() + (b * d.cout + co) * out_plane;
            if (gb) {
                T acc = 0;
                for (Index i = 0; i < out_plane; ++i) acc += gyp[i];
                (*gb)[co] += acc;
            }
            if (!gx && !gw) continue;
            const Index grp = co / d.cout_g;
            for (Index cl = 0; cl < d.cin_g; ++cl) {
                const Index ci = grp * d.cin_g + cl;
                const T* xp = x.ptr() + (b * d.cin + ci) * in_plane;
                const T* wp = w.ptr() + (co * d.cin_g + cl) * taps;
                T* gxp = gx ? gx->ptr() + (b * d.cin + ci) * in_plane : nullptr;
                T* gwp = gw ? gw->ptr() + (co * d.cin_g + cl) * taps : nullptr;
                for_each_tap_row(d, g, [&](Index orow, Index irow, Index tap, Index lo, Index hi, Index off) {
                    const T* gr = gyp + orow;
                    if (gxp) {
                        const T wv = wp[tap];
                        T* xr = gxp + irow + off;
                        if (s == 1) {
                            for (Index ow = lo; ow < hi; ++ow) xr[ow] += wv * gr[ow];
                        } else {
                            for (Index ow = lo; ow < hi; ++ow) xr[ow * s] += wv * gr[ow];
                        }
                    }
                    if (gwp) {
                        const T* xr = xp + irow + off;
                        T a0 = 0, a1 = 0, a2 = 0, a3 = 0;
                        Index ow = lo;
                        if (s == 1) {
                            for (; ow + 4 <= hi; ow += 4) {
                                a0 += gr[ow] * xr[ow];
                                a1 += gr[ow + 1] * xr[ow + 1];
                                a2 += gr[ow + 2] * xr[ow + 2];
                                a3 += gr[ow + 3] * xr[ow + 3];
                            }
                            for (; ow < hi; ++ow) a0 += gr[ow] * xr[ow];
                        } else {
                            for (; ow < hi; ++ow) a0 += gr[ow] * xr[ow * s];
                        }
                        gwp[tap] += (a0 + a1) + (a2 + a3);
                    }
                });
            }
        }
    }
}

namespace {

void check_convtranspose(const Shape& xs, const Shape& ws) {
    require_rank(xs, 5, "convtranspose3d input");
    require_rank(ws, 5, "convtranspose3d weight");
    if (xs[2] < 1 || xs[3] < 1 || xs[4] < 1) throw_argument("convtranspose3d: non-positive input extents " + xs.str());
    if (ws[0] != xs[1]) {
        throw_shape("convtranspose3d: weight expects " + std::to_string(ws[0]) + " input channels, got " +
                    std::to_string(xs[1]));
    }
    if (ws[2] != 2 || ws[3] != 2 || ws[4] != 2) throw_argument("convtranspose3d: only 2x2x2 kernels are supported");
}

}  // namespace

template <typename T>
Tensor<T> convtranspose3d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
    check_convtranspose(x.shape(), w.shape());
    const Index B = x.dim(0), Cin = x.dim(1), Cout = w.dim(1);
    const Extents3 in = x.extents(), out = in.doubled();
    if (bias && bias->numel() != Cout) throw_shape("convtranspose3d: bias size mismatch");
    Tensor<T> y = Tensor<T>::volume(B, Cout, out);
    const Index in_plane = in.voxels(), out_plane = out.voxels();
    for (Index b = 0; b < B; ++b) {
        for (Index co = 0; co < Cout; ++co) {
            T* yp = y.ptr() + (b * Cout + co) * out_plane;
            if (bias) std::fill(yp, yp + out_plane, (*bias)[co]);
            for (Index ci = 0; ci < Cin; ++ci) {
                const T* xp = x.ptr() + (b * Cin + ci) * in_plane;
                const T* wp = w.ptr() + (ci * Cout + co) * 8;
                for (Index a = 0; a < 2; ++a) {
                    for (Index bb = 0; bb < 2; ++bb) {
                        for (Index c = 0; c < 2; ++c) {
                            const T wv = wp[(a * 2 + bb) * 2 + c];
                            for (Index d = 0; d < in.d; ++d) {
                                for (Index h = 0; h < in.h; ++h) {
                                    const T* xr = xp + (d * in.h + h) * in.w;
                                    T* yr = yp + ((2 * d + a) * out.h + 2 * h + bb) * out.w + c;
                                    for (Index ww = 0; ww < in.w; ++ww) yr[2 * ww] += wv * xr[ww];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    return y;
}

template <typename T>
void convtranspose3d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy, Tensor<T>* gx,
                              Tensor<T>* gw, Tensor<T>* gb) {
    check_convtranspose(x.shape(), w.shape());
    const Index B = x.dim(0), Cin = x.dim(1), Cout = w.dim(1);
    const Extents3 in = x.extents(), out = in.doubled();
    const Index in_plane = in.voxels(), out_plane = out.voxels();
    for (Index b = 0; b < B; ++b) {
        for (Index co = 0; co < Cout; ++co) {
            const T* gyp = gy.ptr() + (b * Cout + co) * out_plane;
            if (gb) {
                T acc = 0;
                for (Index i = 0; i < out_plane; ++i) acc += gyp[i];
                (*gb)[co] += acc;
            }
            for (Index ci = 0; ci < Cin; ++ci) {
                const T* xp = x.ptr() + (b * Cin + ci) * in_plane;
                T* gxp = gx ? gx->ptr() + (b * Cin + ci) * in_plane : nullptr;
                const T* wp = w.ptr() + (ci * Cout + co) * 8;
                T* gwp = gw ? gw->ptr() + (ci * Cout + co) * 8 : nullptr;
                for (Index tap = 0; tap < 8; ++tap) {
                    const Index a = tap / 4, bb = (tap / 2) % 2, c = tap % 2;
                    const T wv = wp[tap];
                    T acc = 0;
                    for (Index d = 0; d < in.d; ++d) {
                        for (Index h = 0; h < in.h; ++h) {
                            const T* gr = gyp + ((2 * d + a) * out.h + 2 * h + bb) * out.w + c;
                            const Index row = (d * in.h + h) * in.w;
                            if (gxp) {
                                for (Index ww = 0; ww < in.w; ++ww) gxp[row + ww] += wv * gr[2 * ww];
                            }
                            if (gwp) {
                                for (Index ww = 0; ww < in.w; ++ww) acc += xp[row + ww] * gr[2 * ww];
                            }
                        }
                    }
                    if (gwp) gwp[tap] += acc;
                }
            }
        }
    }
}

template <typename T>
Tensor<T> maxpool3d_forward(const Tensor<T>& x, std::vector<Index>& argmax) {
    require_rank(x.shape(), 5, "maxpool3d");
    const Extents3 in = x.extents();
    if (in.d % 2 || in.h % 2 || in.w % 2) {
        throw_argument("maxpool3d: extents must be even, got " + x.shape().str());
    }
    const Index B = x.dim(0), C = x.dim(1);
    const Extents3 out = in.halved();
    Tensor<T> y = Tensor<T>::volume(B, C, out);
    argmax.assign(static_cast<std::size_t>(y.numel()), 0);
    Index o = 0;
    for (Index bc = 0; bc < B * C; ++bc) {
        const Index base = bc * in.voxels();
        for (Index d = 0; d < out.d; ++d) {
            for (Index h = 0; h < out.h; ++h) {
                for (Index w = 0; w < out.w; ++w, ++o) {
                    Index best = base + ((2 * d) * in.h + 2 * h) * in.w + 2 * w;
                    T best_v = x[best];
                    for (Index a = 0; a < 2; ++a) {
                        for (Index b = 0; b < 2; ++b) {
                            for (Index c = 0; c < 2; ++c) {
                                const Index idx = base + ((2 * d + a) * in.h + 2 * h + b) * in.w + 2 * w + c;
                                if (x[idx] > best_v) {
                                    best_v = x[idx];
                                    best = idx;
                                }
                            }
                        }
                    }
                    y[o] = best_v;
                    argmax[static_cast<std::size_t>(o)] = best;
                }
            }
        }
    }
    return y;
}

template <typename T>
void maxpool3d_backward(const std::vector<Index>& argmax, const Tensor<T>& gy, Tensor<T>& gx) {
    for (Index o = 0; o < gy.numel(); ++o) gx[argmax[static_cast<std::size_t>(o)]] += gy[o];
}

template <typename T>
Tensor<T> groupnorm_forward(const Tensor<T>& x, Index groups, const Tensor<T>& gamma, const Tensor<T>& beta,
                            double eps, GroupNormStats& stats) {
    require_rank(x.shape(), 5, "groupnorm");
    const Index B = x.dim(0), C = x.dim(1), V = x.spatial();
    if (groups < 1 || C % groups != 0) {
        throw_argument("groupnorm: channels " + std::to_string(C) + " not divisible by groups " +
                       std::to_string(groups));
    }
    if (gamma.numel() != C || beta.numel() != C) throw_shape("groupnorm: affine parameters must have C entries");
    const Index cpg = C / groups, n = cpg * V;
    stats.mean.assign(static_cast<std::size_t>(B * groups), 0.0);
    stats.rstd.assign(static_cast<std::size_t>(B * groups), 0.0);
    Tensor<T> y(x.shape());
    for (Index b = 0; b < B; ++b) {
        for (Index g = 0; g < groups; ++g) {
            const Index base = (b * C + g * cpg) * V;
            const T* xp = x.ptr() + base;
            double sum = 0;
            for (Index i = 0; i < n; ++i) sum += xp[i];
            const double mean = sum / static_cast<double>(n);
            double sq = 0;
            for (Index i = 0; i < n; ++i) {
                const double dv = xp[i] - mean;
                sq += dv * dv;
            }
            const double rstd = 1.0 / std::sqrt(sq / static_cast<double>(n) + eps);
            stats.mean[static_cast<std::size_t>(b * groups + g)] = mean;
            stats.rstd[static_cast<std::size_t>(b * groups + g)] = rstd;
            for (Index cl = 0; cl < cpg; ++cl) {
                const Index c = g * cpg + cl;
                const T* xc = xp + cl * V;
                T* yc = y.ptr() + base + cl * V;
                const T m = static_cast<T>(mean), sc = static_cast<T>(rstd * gamma[c]), sh = beta[c];
                for (Index i = 0; i < V; ++i) yc[i] = (xc[i] - m) * sc + sh;
            }
        }
    }
    return y;
}

template <typename T>
void groupnorm_backward(const Tensor<T>& x, Index groups, const Tensor<T>& gamma, const GroupNormStats& stats,
                        const Tensor<T>& gy, Tensor<T>* gx, Tensor<T>* ggamma, Tensor<T>* gbeta) {
    const Index B = x.dim(0), C = x.dim(1), V = x.spatial();
    const Index cpg = C / groups, n = cpg * V;
    for (Index b = 0; b < B; ++b) {
        for (Index g = 0; g < groups; ++g) {
            const Index base = (b * C + g * cpg) * V;
            const double mean = stats.mean[static_cast<std::size_t>(b * groups + g)];
            const double rstd = stats.rstd[static_cast<std::size_t>(b * groups + g)];
            double s_gxhat = 0, s_gxhat_xhat = 0;
            for (Index cl = 0; cl < cpg; ++cl) {
                const Index c = g * cpg + cl;
                const T* xc = x.ptr() + base + cl * V;
                const T* gc = gy.ptr() + base + cl * V;
                double sg = 0, sgx = 0;
                for (Index i = 0; i < V; ++i) {
                    const double xhat = (xc[i] - mean) * rstd;
                    sg += gc[i];
                    sgx += gc[i] * xhat;
                }
                if (ggamma) (*ggamma)[c] += static_cast<T>(sgx);
                if (gbeta) (*gbeta)[c] += static_cast<T>(sg);
                s_gxhat += sg * gamma[c];
                s_gxhat_xhat += sgx * gamma[c];
            }
            if (!gx) continue;
            const double m1 = s_gxhat / static_cast<double>(n);
            const double m2 = s_gxhat_xhat / static_cast<double>(n);
            for (Index cl = 0; cl < cpg; ++cl) {
                const Index c = g * cpg + cl;
                const T* xc = x.ptr() + base + cl * V;
                const T* gc = gy.ptr() + base + cl * V;
                T* out = gx->ptr() + base + cl * V;
                const double gm = gamma[c];
                for (Index i = 0; i < V; ++i) {
                    const double xhat = (xc[i] - mean) * rstd;
                    out[i] += static_cast<T>(rstd * (gc[i] * gm - m1 - xhat * m2));
                }
            }
        }
    }
}

AxisTaps linear_taps(Index src, Index dst) {
    if (src < 1 || dst < 1) throw_argument("resample: extents must be >= 1");
    AxisTaps t;
    t.lo.resize(static_cast<std::size_t>(dst));
    t.hi.resize(static_cast<std::size_t>(dst));
    t.frac.resize(static_cast<std::size_t>(dst));
    const double scale = static_cast<double>(src) / static_cast<double>(dst);
    for (Index i = 0; i < dst; ++i) {
        const auto k = static_cast<std::size_t>(i);
        if (src == dst) {
            t.lo[k] = t.hi[k] = i;
            t.frac[k] = 0.0;
            continue;
        }
        double pos = (static_cast<double>(i) + 0.5) * scale - 0.5;
        pos = std::clamp(pos, 0.0, static_cast<double>(src - 1));
        const auto lo = static_cast<Index>(std::floor(pos));
        t.lo[k] = lo;
        t.hi[k] = std::min(lo + 1, src - 1);
        t.frac[k] = t.hi[k] == lo ? 0.0 : pos - static_cast<double>(lo);
    }
    return t;
}

template <typename T>
Tensor<T> trilinear_forward(const Tensor<T>& x, Extents3 target) {
    require_rank(x.shape(), 5, "trilinear_resample");
    if (target.d < 1 || target.h < 1 || target.w < 1) throw_argument("trilinear_resample: target extents must be >= 1");
    const Extents3 in = x.extents();
    if (in == target) return x;
    const AxisTaps td = linear_taps(in.d, target.d), th = linear_taps(in.h, target.h), tw = linear_taps(in.w, target.w);
    const Index BC = x.dim(0) * x.dim(1);
    Tensor<T> y = Tensor<T>::volume(x.dim(0), x.dim(1), target);
    Index o = 0;
    for (Index bc = 0; bc < BC; ++bc) {
        const T* xp = x.ptr() + bc * in.voxels();
        for (Index d = 0; d < target.d; ++d) {
            const auto kd = static_cast<std::size_t>(d);
            const double fd = td.frac[kd];
            const Index d0 = td.lo[kd] * in.h * in.w, d1 = td.hi[kd] * in.h * in.w;
            for (Index h = 0; h < target.h; ++h) {
                const auto kh = static_cast<std::size_t>(h);
                const double fh = th.frac[kh];
                const Index h0 = th.lo[kh] * in.w, h1 = th.hi[kh] * in.w;
                for (Index w = 0; w < target.w; ++w, ++o) {
                    const auto kw = static_cast<std::size_t>(w);
                    const double fw = tw.frac[kw];
                    const Index w0 = tw.lo[kw], w1 = tw.hi[kw];
                    const double c00 = xp[d0 + h0 + w0] * (1 - fw) + xp[d0 + h0 + w1] * fw;
                    const double c01 = xp[d0 + h1 + w0] * (1 - fw) + xp[d0 + h1 + w1] * fw;
                    const double c10 = xp[d1 + h0 + w0] * (1 - fw) + xp[d1 + h0 + w1] * fw;
                    const double c11 = xp[d1 + h1 + w0] * (1 - fw) + xp[d1 + h1 + w1] * fw;
                    const double c0 = c00 * (1 - fh) + c01 * fh;
                    const double c1 = c10 * (1 - fh) + c11 * fh;
                    y[o] = static_cast<T>(c0 * (1 - fd) + c1 * fd);
                }
            }
        }
    }
    return y;
}

template <typename T>
void trilinear_backward(const Shape& x_shape, const Tensor<T>& gy, Tensor<T>& gx) {
    const Extents3 in{x_shape[2], x_shape[3], x_shape[4]};
    const Extents3 target = gy.extents();
    if (in == target) {
        gx.add_(gy);
        return;
    }
    const AxisTaps td = linear_taps(in.d, target.d), th = linear_taps(in.h, target.h), tw = linear_taps(in.w, target.w);
    const Index BC = x_shape[0] * x_shape[1];
    Index o = 0;
    for (Index bc = 0; bc < BC; ++bc) {
        T* gp = gx.ptr() + bc * in.voxels();
        for (Index d = 0; d < target.d; ++d) {
            const auto kd = static_cast<std::size_t>(d);
            const double fd = td.frac[kd];
            const Index d0 = td.lo[kd] * in.h * in.w, d1 = td.hi[kd] * in.h * in.w;
            for (Index h = 0; h < target.h; ++h) {
                const auto kh = static_cast<std::size_t>(h);
                const double fh = th.frac[kh];
                const Index h0 = th.lo[kh] * in.w, h1 = th.hi[kh] * in.w;
                for (Index w = 0; w < target.w; ++w, ++o) {
                    const auto kw = static_cast<std::size_t>(w);
                    const double fw = tw.frac[kw];
                    const Index w0 = tw.lo[kw], w1 = tw.hi[kw];
                    const double g = gy[o];
                    const double g0 = g * (1 - fd), g1 = g * fd;
                    const double g00 = g0 * (1 - fh), g01 = g0 * fh, g10 = g1 * (1 - fh), g11 = g1 * fh;
                    gp[d0 + h0 + w0] += static_cast<T>(g00 * (1 - fw));
                    gp[d0 + h0 + w1] += static_cast<T>(g00 * fw);
                    gp[d0 + h1 + w0] += static_cast<T>(g01 * (1 - fw));
                    gp[d0 + h1 + w1] += static_cast<T>(g01 * fw);
                    gp[d1 + h0 + w0] += static_cast<T>(g10 * (1 - fw));
                    gp[d1 + h0 + w1] += static_cast<T>(g10 * fw);
                    gp[d1 + h1 + w0] += static_cast<T>(g11 * (1 - fw));
                    gp[d1 + h1 + w1] += static_cast<T>(g11 * fw);
                }
            }
        }
    }
}

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
    require_rank(x.shape(), 5, "softmax");
    const Index B = x.dim(0), C = x.dim(1), V = x.spatial();
    Tensor<T> y(x.shape());
    std::vector<T> mx(static_cast<std::size_t>(V)), sum(static_cast<std::size_t>(V));
    for (Index b = 0; b < B; ++b) {
        const T* xp = x.ptr() + b * C * V;
        T* yp = y.ptr() + b * C * V;
        std::fill(mx.begin(), mx.end(), -std::numeric_limits<T>::infinity());
        std::fill(sum.begin(), sum.end(), T(0));
        for (Index c = 0; c < C; ++c) {
            for (Index v = 0; v < V; ++v) mx[static_cast<std::size_t>(v)] = std::max(mx[static_cast<std::size_t>(v)], xp[c * V + v]);
        }
        for (Index c = 0; c < C; ++c) {
            for (Index v = 0; v < V; ++v) {
                const T e = std::exp(xp[c * V + v] - mx[static_cast<std::size_t>(v)]);
                yp[c * V + v] = e;
                sum[static_cast<std::size_t>(v)] += e;
            }
        }
        for (Index c = 0; c < C; ++c) {
            for (Index v = 0; v < V; ++v) yp[c * V + v] /= sum[static_cast<std::size_t>(v)];
        }
    }
    return y;
}

#define LMS_INSTANTIATE(T)                                                                                          \
    template Tensor<T> conv3d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, ConvGeometry);           \
    template void conv3d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, ConvGeometry, Tensor<T>*,   \
                                  Tensor<T>*, Tensor<T>*);                                                          \
    template Tensor<T> convtranspose3d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);               \
    template void convtranspose3d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*,        \
                                           Tensor<T>*, Tensor<T>*);                                                 \
    template Tensor<T> maxpool3d_forward(const Tensor<T>&, std::vector<Index>&);                                    \
    template void maxpool3d_backward(const std::vector<Index>&, const Tensor<T>&, Tensor<T>&);                      \
    template Tensor<T> groupnorm_forward(const Tensor<T>&, Index, const Tensor<T>&, const Tensor<T>&, double,       \
                                         GroupNormStats&);                                                          \
    template void groupnorm_backward(const Tensor<T>&, Index, const Tensor<T>&, const GroupNormStats&,              \
                                     const Tensor<T>&, Tensor<T>*, Tensor<T>*, Tensor<T>*);                         \
    template Tensor<T> trilinear_forward(const Tensor<T>&, Extents3);                                               \
    template void trilinear_backward(const Shape&, const Tensor<T>&, Tensor<T>&);                                   \
    template Tensor<T> softmax_channels(const Tensor<T>&);

LMS_INSTANTIATE(float)
LMS_INSTANTIATE(double)

#undef LMS_INSTANTIATE

}  // namespace lms::kernels
