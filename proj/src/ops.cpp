#include "lms/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace lms::ops {
namespace {

template <typename T>
T sigmoid_scalar(T x) {
    return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

std::array<Index, 5> padded(const Shape& s) {
    std::array<Index, 5> out{1, 1, 1, 1, 1};
    const int off = 5 - s.rank();
    for (int i = 0; i < s.rank(); ++i) out[static_cast<std::size_t>(off + i)] = s[i];
    return out;
}

// Element strides of `in` when broadcast against `out` (0 along broadcast axes).
std::array<Index, 5> broadcast_strides(const Shape& in, const Shape& out) {
    const auto di = padded(in), dout = padded(out);
    std::array<Index, 5> st{};
    Index acc = 1;
    for (int i = 4; i >= 0; --i) {
        const auto k = static_cast<std::size_t>(i);
        st[k] = (di[k] == 1 && dout[k] != 1) ? 0 : acc;
        acc *= di[k];
    }
    return st;
}

template <typename Fn>
void broadcast_for_each(const Shape& out, const std::array<Index, 5>& sa, const std::array<Index, 5>& sb, Fn&& fn) {
    const auto d = padded(out);
    Index o = 0;
    for (Index i0 = 0; i0 < d[0]; ++i0) {
        for (Index i1 = 0; i1 < d[1]; ++i1) {
            for (Index i2 = 0; i2 < d[2]; ++i2) {
                for (Index i3 = 0; i3 < d[3]; ++i3) {
                    Index ia = i0 * sa[0] + i1 * sa[1] + i2 * sa[2] + i3 * sa[3];
                    Index ib = i0 * sb[0] + i1 * sb[1] + i2 * sb[2] + i3 * sb[3];
                    for (Index i4 = 0; i4 < d[4]; ++i4, ++o, ia += sa[4], ib += sb[4]) fn(o, ia, ib);
                }
            }
        }
    }
}

enum class BinaryKind { kAdd, kSub, kMul };

template <typename T>
Var<T> binary(Var<T> a, Var<T> b, BinaryKind kind) {
    Tape<T>& tape = *a.tape;
    const Shape out = broadcast_shape(a.shape(), b.shape());
    const auto sa = broadcast_strides(a.shape(), out), sb = broadcast_strides(b.shape(), out);
    Tensor<T> y(out);
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    switch (kind) {
        case BinaryKind::kAdd:
            broadcast_for_each(out, sa, sb, [&](Index o, Index ia, Index ib) { y[o] = av[ia] + bv[ib]; });
            break;
        case BinaryKind::kSub:
            broadcast_for_each(out, sa, sb, [&](Index o, Index ia, Index ib) { y[o] = av[ia] - bv[ib]; });
            break;
        case BinaryKind::kMul:
            broadcast_for_each(out, sa, sb, [&](Index o, Index ia, Index ib) { y[o] = av[ia] * bv[ib]; });
            break;
    }
    const int ida = a.id, idb = b.id;
    return tape.push(std::move(y), {a, b}, [=](Tape<T>& t, int self) {
        const Tensor<T>& gy = t.grad(self);
        const bool need_a = t.requires_grad(ida), need_b = t.requires_grad(idb);
        Tensor<T>* ga = need_a ? &t.grad(ida) : nullptr;
        Tensor<T>* gb = need_b ? &t.grad(idb) : nullptr;
        const Tensor<T>& av2 = t.value(ida);
        const Tensor<T>& bv2 = t.value(idb);
        broadcast_for_each(out, sa, sb, [&](Index o, Index ia, Index ib) {
            const T g = gy[o];
            switch (kind) {
                case BinaryKind::kAdd:
                    if (ga) (*ga)[ia] += g;
                    if (gb) (*gb)[ib] += g;
                    break;
                case BinaryKind::kSub:
                    if (ga) (*ga)[ia] += g;
                    if (gb) (*gb)[ib] -= g;
                    break;
                case BinaryKind::kMul:
                    if (ga) (*ga)[ia] += g * bv2[ib];
                    if (gb) (*gb)[ib] += g * av2[ia];
                    break;
            }
        });
    });
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
    if (a.rank() != b.rank()) throw_shape("broadcast: rank mismatch " + a.str() + " vs " + b.str());
    std::array<Index, 5> dims{};
    for (int i = 0; i < a.rank(); ++i) {
        if (a[i] == b[i] || b[i] == 1) {
            dims[static_cast<std::size_t>(i)] = a[i];
        } else if (a[i] == 1) {
            dims[static_cast<std::size_t>(i)] = b[i];
        } else {
            throw_shape("broadcast: incompatible shapes " + a.str() + " and " + b.str());
        }
    }
    return Shape(std::span<const Index>(dims.data(), static_cast<std::size_t>(a.rank())));
}

template <typename T>
Var<T> conv3d(Var<T> x, Var<T> w, std::optional<Var<T>> bias, ConvGeometry geom) {
    Tape<T>& tape = *x.tape;
    Tensor<T> y = kernels::conv3d_forward(x.value(), w.value(), bias ? &bias->value() : nullptr, geom);
    tape.add_macs(kernels::conv3d_macs(x.shape(), w.shape(), geom));
    const int idx = x.id, idw = w.id, idb = bias ? bias->id : -1;
    std::vector<Var<T>> parents{x, w};
    if (bias) parents.push_back(*bias);
    return tape.push(std::move(y), parents, [=](Tape<T>& t, int self) {
        kernels::conv3d_backward(t.value(idx), t.value(idw), t.grad(self), geom,
                                 t.requires_grad(idx) ? &t.grad(idx) : nullptr,
                                 t.requires_grad(idw) ? &t.grad(idw) : nullptr,
                                 idb >= 0 && t.requires_grad(idb) ? &t.grad(idb) : nullptr);
    });
}

template <typename T>
Var<T> dwconv3d(Var<T> x, Var<T> w, std::optional<Var<T>> bias, Index stride, Index pad) {
    require_rank(x.shape(), 5, "dwconv3d input");
    require_rank(w.shape(), 5, "dwconv3d weight");
    const Index channels = x.shape()[1];
    if (w.shape()[0] != channels || w.shape()[1] != 1) {
        throw_shape("dwconv3d: weight " + w.shape().str() + " does not match " + std::to_string(channels) +
                    " channels");
    }
    return conv3d(x, w, bias, ConvGeometry{stride, pad, channels});
}

template <typename T>
Var<T> convtranspose3d(Var<T> x, Var<T> w, std::optional<Var<T>> bias) {
    Tape<T>& tape = *x.tape;
    Tensor<T> y = kernels::convtranspose3d_forward(x.value(), w.value(), bias ? &bias->value() : nullptr);
    // One tap reaches each output voxel: Cin MACs per output entry.
    tape.add_macs(static_cast<std::uint64_t>(y.numel()) * static_cast<std::uint64_t>(x.shape()[1]));
    const int idx = x.id, idw = w.id, idb = bias ? bias->id : -1;
    std::vector<Var<T>> parents{x, w};
    if (bias) parents.push_back(*bias);
    return tape.push(std::move(y), parents, [=](Tape<T>& t, int self) {
        kernels::convtranspose3d_backward(t.value(idx), t.value(idw), t.grad(self),
                                          t.requires_grad(idx) ? &t.grad(idx) : nullptr,
                                          t.requires_grad(idw) ? &t.grad(idw) : nullptr,
                                          idb >= 0 && t.requires_grad(idb) ? &t.grad(idb) : nullptr);
    });
}

template <typename T>
Var<T> maxpool3d(Var<T> x) {
    std::vector<Index> argmax;
    Tensor<T> y = kernels::maxpool3d_forward(x.value(), argmax);
    const int idx = x.id;
    auto saved = std::make_shared<std::vector<Index>>(std::move(argmax));
    return x.tape->push(std::move(y), {x}, [=](Tape<T>& t, int self) {
        kernels::maxpool3d_backward(*saved, t.grad(self), t.grad(idx));
    });
}

template <typename T>
Var<T> gap3d(Var<T> x) {
    require_rank(x.shape(), 5, "gap3d");
    const Index B = x.shape()[0], C = x.shape()[1], V = x.value().spatial();
    if (V < 1) throw_shape("gap3d: empty spatial extents");
    Tensor<T> y(Shape{B, C});
    const Tensor<T>& xv = x.value();
    for (Index bc = 0; bc < B * C; ++bc) {
        double s = 0;
        for (Index i = 0; i < V; ++i) s += xv[bc * V + i];
        y[bc] = static_cast<T>(s / static_cast<double>(V));
    }
    const int idx = x.id;
    return x.tape->push(std::move(y), {x}, [=](Tape<T>& t, int self) {
        const Tensor<T>& gy = t.grad(self);
        Tensor<T>& gx = t.grad(idx);
        for (Index bc = 0; bc < B * C; ++bc) {
            const T g = gy[bc] / static_cast<T>(V);
            for (Index i = 0; i < V; ++i) gx[bc * V + i] += g;
        }
    });
}

template <typename T>
Var<T> groupnorm(Var<T> x, Index groups, Var<T> gamma, Var<T> beta, double eps) {
    auto stats = std::make_shared<kernels::GroupNormStats>();
    Tensor<T> y = kernels::groupnorm_forward(x.value(), groups, gamma.value(), beta.value(), eps, *stats);
    const int idx = x.id, idg = gamma.id, idb = beta.id;
    return x.tape->push(std::move(y), {x, gamma, beta}, [=](Tape<T>& t, int self) {
        kernels::groupnorm_backward(t.value(idx), groups, t.value(idg), *stats, t.grad(self),
                                    t.requires_grad(idx) ? &t.grad(idx) : nullptr,
                                    t.requires_grad(idg) ? &t.grad(idg) : nullptr,
                                    t.requires_grad(idb) ? &t.grad(idb) : nullptr);
    });
}

template <typename T>
Var<T> silu(Var<T> x) {
    const Tensor<T>& xv = x.value();
    Tensor<T> y(xv.shape());
    for (Index i = 0; i < xv.numel(); ++i) y[i] = xv[i] * sigmoid_scalar(xv[i]);
    const int idx = x.id;
    return x.tape->push(std::move(y), {x}, [=](Tape<T>& t, int self) {
        const Tensor<T>& gy = t.grad(self);
        const Tensor<T>& xs = t.value(idx);
        Tensor<T>& gx = t.grad(idx);
        for (Index i = 0; i < xs.numel(); ++i) {
            const T s = sigmoid_scalar(xs[i]);
            gx[i] += gy[i] * (s * (T(1) + xs[i] * (T(1) - s)));
        }
    });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
    const Tensor<T>& xv = x.value();
    Tensor<T> y(xv.shape());
    for (Index i = 0; i < xv.numel(); ++i) y[i] = sigmoid_scalar(xv[i]);
    const int idx = x.id;
    return x.tape->push(std::move(y), {x}, [idx](Tape<T>& t, int self) {
        const Tensor<T>& gy = t.grad(self);
        const Tensor<T>& ys = t.value(self);
        Tensor<T>& gx = t.grad(idx);
        for (Index i = 0; i < ys.numel(); ++i) gx[i] += gy[i] * ys[i] * (T(1) - ys[i]);
    });
}

template <typename T>
Var<T> abs(Var<T> x) {
    const Tensor<T>& xv = x.value();
    Tensor<T> y(xv.shape());
    for (Index i = 0; i < xv.numel(); ++i) y[i] = std::abs(xv[i]);
    const int idx = x.id;
    return x.tape->push(std::move(y), {x}, [=](Tape<T>& t, int self) {
        const Tensor<T>& gy = t.grad(self);
        const Tensor<T>& xs = t.value(idx);
        Tensor<T>& gx = t.grad(idx);
        for (Index i = 0; i < xs.numel(); ++i) {
            if (xs[i] > 0) {
                gx[i] += gy[i];
            } else if (xs[i] < 0) {
                gx[i] -= gy[i];
            }
        }
    });
}

template <typename T>
Var<T> affine(Var<T> x, T scale, T shift) {
    const Tensor<T>& xv = x.value();
    Tensor<T> y(xv.shape());
    for (Index i = 0; i < xv.numel(); ++i) y[i] = scale * xv[i] + shift;
    const int idx = x.id;
    return x.tape->push(std::move(y), {x}, [=](Tape<T>& t, int self) {
        const Tensor<T>& gy = t.grad(self);
        Tensor<T>& gx = t.grad(idx);
        for (Index i = 0; i < gy.numel(); ++i) gx[i] += scale * gy[i];
    });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    return binary(a, b, BinaryKind::kAdd);
}
template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    return binary(a, b, BinaryKind::kSub);
}
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    return binary(a, b, BinaryKind::kMul);
}

template <typename T>
Var<T> softmax_channels(Var<T> x) {
    Tensor<T> y = kernels::softmax_channels(x.value());
    const int idx = x.id;
    return x.tape->push(std::move(y), {x}, [idx](Tape<T>& t, int self) {
        const Tensor<T>& gy = t.grad(self);
        const Tensor<T>& ys = t.value(self);
        Tensor<T>& gx = t.grad(idx);
        const Index B = ys.dim(0), C = ys.dim(1), V = ys.spatial();
        std::vector<T> dot(static_cast<std::size_t>(V));
        for (Index b = 0; b < B; ++b) {
            const Index base = b * C * V;
            std::fill(dot.begin(), dot.end(), T(0));
            for (Index c = 0; c < C; ++c) {
                for (Index v = 0; v < V; ++v) dot[static_cast<std::size_t>(v)] += gy[base + c * V + v] * ys[base + c * V + v];
            }
            for (Index c = 0; c < C; ++c) {
                for (Index v = 0; v < V; ++v) {
                    const Index i = base + c * V + v;
                    gx[i] += ys[i] * (gy[i] - dot[static_cast<std::size_t>(v)]);
                }
            }
        }
    });
}

template <typename T>
Var<T> linear(Var<T> v, Var<T> w, std::optional<Var<T>> bias) {
    require_rank(v.shape(), 2, "linear input");
    require_rank(w.shape(), 2, "linear weight");
    const Index B = v.shape()[0], N = v.shape()[1], M = w.shape()[0];
    if (w.shape()[1] != N) {
        throw_shape("linear: weight " + w.shape().str() + " incompatible with input " + v.shape().str());
    }
    if (bias && bias->value().numel() != M) throw_shape("linear: bias size mismatch");
    const Tensor<T>& vv = v.value();
    const Tensor<T>& wv = w.value();
    Tensor<T> y(Shape{B, M});
    for (Index b = 0; b < B; ++b) {
        for (Index m = 0; m < M; ++m) {
            T acc = bias ? bias->value()[m] : T(0);
            for (Index n = 0; n < N; ++n) acc += wv[m * N + n] * vv[b * N + n];
            y[b * M + m] = acc;
        }
    }
    v.tape->add_macs(static_cast<std::uint64_t>(B * M * N));
    const int idv = v.id, idw = w.id, idb = bias ? bias->id : -1;
    std::vector<Var<T>> parents{v, w};
    if (bias) parents.push_back(*bias);
    return v.tape->push(std::move(y), parents, [=](Tape<T>& t, int self) {
        const Tensor<T>& gy = t.grad(self);
        const Tensor<T>& vs = t.value(idv);
        const Tensor<T>& ws = t.value(idw);
        Tensor<T>* gv = t.requires_grad(idv) ? &t.grad(idv) : nullptr;
        Tensor<T>* gw = t.requires_grad(idw) ? &t.grad(idw) : nullptr;
        Tensor<T>* gb = idb >= 0 && t.requires_grad(idb) ? &t.grad(idb) : nullptr;
        for (Index b = 0; b < B; ++b) {
            for (Index m = 0; m < M; ++m) {
                const T g = gy[b * M + m];
                if (gb) (*gb)[m] += g;
                for (Index n = 0; n < N; ++n) {
                    if (gv) (*gv)[b * N + n] += g * ws[m * N + n];
                    if (gw) (*gw)[m * N + n] += g * vs[b * N + n];
                }
            }
        }
    });
}

template <typename T>
Var<T> trilinear_resample(Var<T> x, Extents3 target) {
    Tensor<T> y = kernels::trilinear_forward(x.value(), target);
    const int idx = x.id;
    const Shape xs = x.shape();
    return x.tape->push(std::move(y), {x}, [=](Tape<T>& t, int self) {
        kernels::trilinear_backward(xs, t.grad(self), t.grad(idx));
    });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw_argument("concat_channels: no inputs");
    const Shape& s0 = parts.front().shape();
    require_rank(s0, 5, "concat_channels");
    Index C = 0;
    for (const Var<T>& p : parts) {
        const Shape& s = p.shape();
        require_rank(s, 5, "concat_channels");
        if (s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3] || s[4] != s0[4]) {
            throw_shape("concat_channels: " + s.str() + " incompatible with " + s0.str());
        }
        C += s[1];
    }
    const Index B = s0[0], V = s0[2] * s0[3] * s0[4];
    Tensor<T> y(Shape{B, C, s0[2], s0[3], s0[4]});
    std::vector<int> ids;
    std::vector<Index> widths;
    for (Index b = 0; b < B; ++b) {
        Index c0 = 0;
        for (const Var<T>& p : parts) {
            const Index cp = p.shape()[1];
            std::copy_n(p.value().ptr() + b * cp * V, cp * V, y.ptr() + (b * C + c0) * V);
            c0 += cp;
        }
    }
    for (const Var<T>& p : parts) {
        ids.push_back(p.id);
        widths.push_back(p.shape()[1]);
    }
    return parts.front().tape->push(std::move(y), parts, [=](Tape<T>& t, int self) {
        const Tensor<T>& gy = t.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!t.requires_grad(ids[k])) continue;
            Tensor<T>& gp = t.grad(ids[k]);
            Index c0 = 0;
            for (std::size_t j = 0; j < k; ++j) c0 += widths[j];
            const Index cp = widths[k];
            for (Index b = 0; b < B; ++b) {
                const T* src = gy.ptr() + (b * C + c0) * V;
                T* dst = gp.ptr() + b * cp * V;
                for (Index i = 0; i < cp * V; ++i) dst[i] += src[i];
            }
        }
    });
}

template <typename T>
Var<T> slice_channels(Var<T> x, Index start, Index count) {
    const Shape& s = x.shape();
    require_rank(s, 5, "slice_channels");
    if (start < 0 || count < 1 || start + count > s[1]) {
        throw_shape("slice_channels: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                    ") outside " + std::to_string(s[1]) + " channels");
    }
    const Index B = s[0], C = s[1], V = s[2] * s[3] * s[4];
    Tensor<T> y(Shape{B, count, s[2], s[3], s[4]});
    for (Index b = 0; b < B; ++b) {
        std::copy_n(x.value().ptr() + (b * C + start) * V, count * V, y.ptr() + b * count * V);
    }
    const int idx = x.id;
    return x.tape->push(std::move(y), {x}, [=](Tape<T>& t, int self) {
        const Tensor<T>& gy = t.grad(self);
        Tensor<T>& gx = t.grad(idx);
        for (Index b = 0; b < B; ++b) {
            const T* src = gy.ptr() + b * count * V;
            T* dst = gx.ptr() + (b * C + start) * V;
            for (Index i = 0; i < count * V; ++i) dst[i] += src[i];
        }
    });
}

template <typename T>
Var<T> reshape(Var<T> x, const Shape& shape) {
    Tensor<T> y = x.value().reshaped(shape);
    const int idx = x.id;
    return x.tape->push(std::move(y), {x}, [idx](Tape<T>& t, int self) {
        const Tensor<T>& gy = t.grad(self);
        Tensor<T>& gx = t.grad(idx);
        for (Index i = 0; i < gy.numel(); ++i) gx[i] += gy[i];
    });
}

template <typename T>
Var<T> sum(Var<T> x) {
    double s = 0;
    for (T v : x.value().data()) s += v;
    Tensor<T> y(Shape{1}, static_cast<T>(s));
    const int idx = x.id;
    return x.tape->push(std::move(y), {x}, [idx](Tape<T>& t, int self) {
        const T g = t.grad(self)[0];
        Tensor<T>& gx = t.grad(idx);
        for (Index i = 0; i < gx.numel(); ++i) gx[i] += g;
    });
}

#define LMS_INSTANTIATE(T)                                                                          \
    template Var<T> conv3d(Var<T>, Var<T>, std::optional<Var<T>>, ConvGeometry);                    \
    template Var<T> dwconv3d(Var<T>, Var<T>, std::optional<Var<T>>, Index, Index);                  \
    template Var<T> convtranspose3d(Var<T>, Var<T>, std::optional<Var<T>>);                         \
    template Var<T> maxpool3d(Var<T>);                                                              \
    template Var<T> gap3d(Var<T>);                                                                  \
    template Var<T> groupnorm(Var<T>, Index, Var<T>, Var<T>, double);                               \
    template Var<T> silu(Var<T>);                                                                   \
    template Var<T> sigmoid(Var<T>);                                                                \
    template Var<T> abs(Var<T>);                                                                    \
    template Var<T> affine(Var<T>, T, T);                                                           \
    template Var<T> add(Var<T>, Var<T>);                                                            \
    template Var<T> sub(Var<T>, Var<T>);                                                            \
    template Var<T> mul(Var<T>, Var<T>);                                                            \
    template Var<T> softmax_channels(Var<T>);                                                       \
    template Var<T> linear(Var<T>, Var<T>, std::optional<Var<T>>);                                  \
    template Var<T> trilinear_resample(Var<T>, Extents3);                                           \
    template Var<T> concat_channels(const std::vector<Var<T>>&);                                    \
    template Var<T> slice_channels(Var<T>, Index, Index);                                           \
    template Var<T> reshape(Var<T>, const Shape&);                                                  \
    template Var<T> sum(Var<T>);

LMS_INSTANTIATE(float)
LMS_INSTANTIATE(double)

#undef LMS_INSTANTIATE

}  // namespace lms::ops
