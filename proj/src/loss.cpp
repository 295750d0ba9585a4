#include "lms/loss.hpp"

#include <algorithm>
#include <cmath>

#include "lms/ops.hpp"

namespace lms {

void LabelVolume::validate(Index classes) const {
    if (size() != batch * voxels()) throw_shape("label volume: payload does not match extents");
    for (std::int32_t v : data) {
        if (v < 0 || v >= classes) {
            throw_argument("label " + std::to_string(v) + " outside [0, " + std::to_string(classes) + ")");
        }
    }
}

LabelVolume LabelVolume::stack(const std::vector<const LabelVolume*>& parts) {
    if (parts.empty()) throw_argument("stack: no label volumes");
    LabelVolume out;
    out.extents = parts.front()->extents;
    for (const LabelVolume* p : parts) {
        if (p->extents != out.extents) throw_shape("stack: label extents differ");
        out.batch += p->batch;
        out.data.insert(out.data.end(), p->data.begin(), p->data.end());
    }
    return out;
}

std::vector<double> class_weights(const LabelVolume& labels, Index classes) {
    labels.validate(classes);
    std::vector<double> count(static_cast<std::size_t>(classes), 0.0);
    for (std::int32_t v : labels.data) count[static_cast<std::size_t>(v)] += 1.0;
    const double omega = static_cast<double>(labels.size());
    std::vector<double> w(count.size());
    for (std::size_t c = 0; c < count.size(); ++c) {
        w[c] = omega / (static_cast<double>(classes) * std::max(count[c], 1.0));
    }
    return w;
}

std::vector<std::uint8_t> raw_boundary(const LabelVolume& labels) {
    const Extents3 e = labels.extents;
    std::vector<std::uint8_t> out(labels.data.size(), 0);
    for (Index b = 0; b < labels.batch; ++b) {
        const std::int32_t* l = labels.data.data() + b * e.voxels();
        std::uint8_t* o = out.data() + b * e.voxels();
        for (Index d = 0; d < e.d; ++d) {
            for (Index h = 0; h < e.h; ++h) {
                for (Index w = 0; w < e.w; ++w) {
                    const std::int32_t here = l[(d * e.h + h) * e.w + w];
                    bool edge = false;
                    for (Index dd = std::max<Index>(d - 1, 0); dd <= std::min(d + 1, e.d - 1) && !edge; ++dd) {
                        for (Index hh = std::max<Index>(h - 1, 0); hh <= std::min(h + 1, e.h - 1) && !edge; ++hh) {
                            for (Index ww = std::max<Index>(w - 1, 0); ww <= std::min(w + 1, e.w - 1); ++ww) {
                                if (l[(dd * e.h + hh) * e.w + ww] != here) {
                                    edge = true;
                                    break;
                                }
                            }
                        }
                    }
                    o[(d * e.h + h) * e.w + w] = edge ? 1 : 0;
                }
            }
        }
    }
    return out;
}

namespace {

// Running max of width 2r+1 along one axis of a (D,H,W) block.
void dilate_axis(std::vector<std::uint8_t>& v, std::size_t base, Index n, Index stride, Index count_outer,
                 Index outer_stride, Index count_inner, Index inner_stride, Index r) {
    std::vector<std::uint8_t> line(static_cast<std::size_t>(n));
    for (Index o = 0; o < count_outer; ++o) {
        for (Index i = 0; i < count_inner; ++i) {
            const std::size_t start = base + static_cast<std::size_t>(o * outer_stride + i * inner_stride);
            for (Index k = 0; k < n; ++k) line[static_cast<std::size_t>(k)] = v[start + static_cast<std::size_t>(k * stride)];
            for (Index k = 0; k < n; ++k) {
                std::uint8_t m = 0;
                for (Index t = std::max<Index>(k - r, 0); t <= std::min(k + r, n - 1); ++t) m |= line[static_cast<std::size_t>(t)];
                v[start + static_cast<std::size_t>(k * stride)] = m;
            }
        }
    }
}

}  // namespace

std::vector<std::uint8_t> boundary_mask(const LabelVolume& labels, Index radius) {
    if (radius < 0) throw_argument("boundary mask: negative radius");
    std::vector<std::uint8_t> m = raw_boundary(labels);
    const Extents3 e = labels.extents;
    for (Index b = 0; b < labels.batch; ++b) {
        const std::size_t base = static_cast<std::size_t>(b * e.voxels());
        // The l-inf ball is a cube, so the dilation separates into three 1D passes.
        dilate_axis(m, base, e.w, 1, e.d, e.h * e.w, e.h, e.w, radius);
        dilate_axis(m, base, e.h, e.w, e.d, e.h * e.w, e.w, 1, radius);
        dilate_axis(m, base, e.d, e.h * e.w, e.h, e.w, e.w, 1, radius);
    }
    return m;
}

namespace {

struct LossGeometry {
    Index batch, classes, voxels;
};

template <typename T>
LossGeometry check_inputs(Var<T> logits, const LabelVolume& labels, const std::vector<double>& weights) {
    require_rank(logits.shape(), 5, "loss logits");
    const Tensor<T>& z = logits.value();
    const LossGeometry g{z.dim(0), z.dim(1), z.spatial()};
    if (labels.batch != g.batch || labels.extents != z.extents()) {
        throw_shape("loss: labels do not match logits " + z.shape().str());
    }
    if (static_cast<Index>(weights.size()) != g.classes) throw_shape("loss: one weight per class required");
    labels.validate(g.classes);
    return g;
}

// Softmax over classes at every voxel, in double.
template <typename T>
std::vector<double> probabilities(const Tensor<T>& z, const LossGeometry& g) {
    std::vector<double> p(static_cast<std::size_t>(z.numel()));
    for (Index b = 0; b < g.batch; ++b) {
        for (Index v = 0; v < g.voxels; ++v) {
            const Index base = b * g.classes * g.voxels + v;
            double mx = -INFINITY;
            for (Index c = 0; c < g.classes; ++c) mx = std::max(mx, static_cast<double>(z[base + c * g.voxels]));
            double s = 0;
            for (Index c = 0; c < g.classes; ++c) {
                const double ex = std::exp(static_cast<double>(z[base + c * g.voxels]) - mx);
                p[static_cast<std::size_t>(base + c * g.voxels)] = ex;
                s += ex;
            }
            for (Index c = 0; c < g.classes; ++c) p[static_cast<std::size_t>(base + c * g.voxels)] /= s;
        }
    }
    return p;
}

// Pulls dL/dp back through the softmax: dz_k = p_k (dp_k - sum_c p_c dp_c), accumulated into gz scaled by `seed`.
template <typename T>
void softmax_backward(const std::vector<double>& p, const std::vector<double>& dp, const LossGeometry& g, double seed,
                      Tensor<T>& gz) {
    for (Index b = 0; b < g.batch; ++b) {
        for (Index v = 0; v < g.voxels; ++v) {
            const Index base = b * g.classes * g.voxels + v;
            double dot = 0;
            for (Index c = 0; c < g.classes; ++c) {
                const auto i = static_cast<std::size_t>(base + c * g.voxels);
                dot += p[i] * dp[i];
            }
            for (Index c = 0; c < g.classes; ++c) {
                const auto i = static_cast<std::size_t>(base + c * g.voxels);
                gz[base + c * g.voxels] += static_cast<T>(seed * p[i] * (dp[i] - dot));
            }
        }
    }
}

std::vector<double> normalized(const std::vector<double>& w) {
    double s = 0;
    for (double x : w) s += x;
    if (!(s > 0)) throw_argument("loss: class weights must have a positive sum");
    std::vector<double> out(w.size());
    for (std::size_t c = 0; c < w.size(); ++c) out[c] = w[c] * static_cast<double>(w.size()) / s;
    return out;
}

template <typename T>
Tensor<T> scalar(double v) {
    return Tensor<T>(Shape{1}, static_cast<T>(v));
}

}  // namespace

template <typename T>
Var<T> dice_loss(Var<T> logits, const LabelVolume& labels, const std::vector<double>& weights) {
    const LossGeometry g = check_inputs(logits, labels, weights);
    const std::vector<double> wn = normalized(weights);
    std::vector<double> p = probabilities(logits.value(), g);
    const auto C = static_cast<std::size_t>(g.classes);
    std::vector<double> inter(C, 0.0), psum(C, 0.0), ysum(C, 0.0);
    for (Index b = 0; b < g.batch; ++b) {
        for (Index c = 0; c < g.classes; ++c) {
            const double* pc = p.data() + (b * g.classes + c) * g.voxels;
            const std::int32_t* y = labels.data.data() + b * g.voxels;
            for (Index v = 0; v < g.voxels; ++v) {
                psum[static_cast<std::size_t>(c)] += pc[v];
                if (y[v] == c) {
                    inter[static_cast<std::size_t>(c)] += pc[v];
                    ysum[static_cast<std::size_t>(c)] += 1.0;
                }
            }
        }
    }
    double loss = 0;
    for (std::size_t c = 0; c < C; ++c) {
        loss += wn[c] * (1.0 - (2.0 * inter[c] + kDiceEps) / (psum[c] + ysum[c] + kDiceEps));
    }
    loss /= static_cast<double>(C);

    const int idz = logits.id;
    return logits.tape->push(scalar<T>(loss), {logits}, [=, p = std::move(p)](Tape<T>& t, int self) {
        const double seed = static_cast<double>(t.grad(self)[0]);
        std::vector<double> dp(p.size());
        for (Index b = 0; b < g.batch; ++b) {
            const std::int32_t* y = labels.data.data() + b * g.voxels;
            for (Index c = 0; c < g.classes; ++c) {
                const auto ci = static_cast<std::size_t>(c);
                const double den = psum[ci] + ysum[ci] + kDiceEps;
                const double num = 2.0 * inter[ci] + kDiceEps;
                const double k = wn[ci] / static_cast<double>(C);
                double* d = dp.data() + (b * g.classes + c) * g.voxels;
                for (Index v = 0; v < g.voxels; ++v) {
                    const double yv = y[v] == c ? 1.0 : 0.0;
                    d[v] = -k * (2.0 * yv / den - num / (den * den));
                }
            }
        }
        softmax_backward(p, dp, g, seed, t.grad(idz));
    });
}

template <typename T>
Var<T> ce_loss(Var<T> logits, const LabelVolume& labels, const std::vector<double>& weights) {
    const LossGeometry g = check_inputs(logits, labels, weights);
    std::vector<double> p = probabilities(logits.value(), g);
    const Tensor<T>& z = logits.value();
    double num = 0, wsum = 0;
    for (Index b = 0; b < g.batch; ++b) {
        for (Index v = 0; v < g.voxels; ++v) {
            const std::int32_t y = labels[b * g.voxels + v];
            const double w = weights[static_cast<std::size_t>(y)];
            // -log p_y from logits for accuracy at saturated predictions.
            const Index base = b * g.classes * g.voxels + v;
            double mx = -INFINITY;
            for (Index c = 0; c < g.classes; ++c) mx = std::max(mx, static_cast<double>(z[base + c * g.voxels]));
            double s = 0;
            for (Index c = 0; c < g.classes; ++c) s += std::exp(static_cast<double>(z[base + c * g.voxels]) - mx);
            num += w * (mx + std::log(s) - static_cast<double>(z[base + y * g.voxels]));
            wsum += w;
        }
    }
    const double loss = num / wsum;
    const int idz = logits.id;
    return logits.tape->push(scalar<T>(loss), {logits}, [=, p = std::move(p)](Tape<T>& t, int self) {
        const double seed = static_cast<double>(t.grad(self)[0]);
        Tensor<T>& gz = t.grad(idz);
        for (Index b = 0; b < g.batch; ++b) {
            for (Index v = 0; v < g.voxels; ++v) {
                const std::int32_t y = labels[b * g.voxels + v];
                const double k = seed * weights[static_cast<std::size_t>(y)] / wsum;
                const Index base = b * g.classes * g.voxels + v;
                for (Index c = 0; c < g.classes; ++c) {
                    const double target = c == y ? 1.0 : 0.0;
                    gz[base + c * g.voxels] += static_cast<T>(k * (p[static_cast<std::size_t>(base + c * g.voxels)] - target));
                }
            }
        }
    });
}

template <typename T>
Var<T> boundary_loss(Var<T> logits, const LabelVolume& labels, const std::vector<std::uint8_t>& mask,
                     const std::vector<double>& weights) {
    const LossGeometry g = check_inputs(logits, labels, weights);
    if (static_cast<Index>(mask.size()) != g.batch * g.voxels) throw_shape("boundary loss: mask size mismatch");
    Index masked = 0;
    for (std::uint8_t m : mask) masked += m ? 1 : 0;
    const double norm = static_cast<double>(std::max<Index>(masked, 1));

    // Per masked voxel, per class: log p_c and log(1 - p_c) = LSE_{k != c} z_k - LSE_k z_k, both in log space.
    const Tensor<T>& z = logits.value();
    const auto C = static_cast<std::size_t>(g.classes);
    std::vector<double> zl(C);
    auto lse_excluding = [&](std::size_t skip) {
        double mx = -INFINITY;
        for (std::size_t c = 0; c < C; ++c) {
            if (c != skip) mx = std::max(mx, zl[c]);
        }
        double s = 0;
        for (std::size_t c = 0; c < C; ++c) {
            if (c != skip) s += std::exp(zl[c] - mx);
        }
        return mx + std::log(s);
    };
    double total = 0;
    for (Index b = 0; b < g.batch; ++b) {
        for (Index v = 0; v < g.voxels; ++v) {
            if (!mask[static_cast<std::size_t>(b * g.voxels + v)]) continue;
            const Index base = b * g.classes * g.voxels + v;
            for (std::size_t c = 0; c < C; ++c) zl[c] = static_cast<double>(z[base + static_cast<Index>(c) * g.voxels]);
            const double lse = lse_excluding(C);
            const auto y = static_cast<std::size_t>(labels[b * g.voxels + v]);
            for (std::size_t c = 0; c < C; ++c) {
                const double nll = c == y ? lse - zl[c] : lse - lse_excluding(c);
                total += weights[c] * nll;
            }
        }
    }
    const double loss = total / norm;
    const int idz = logits.id;
    return logits.tape->push(scalar<T>(loss), {logits}, [=](Tape<T>& t, int self) {
        const double seed = static_cast<double>(t.grad(self)[0]) / norm;
        const Tensor<T>& zv = t.value(idz);
        Tensor<T>& gz = t.grad(idz);
        std::vector<double> zc(C), pk(C), gk(C);
        for (Index b = 0; b < g.batch; ++b) {
            for (Index v = 0; v < g.voxels; ++v) {
                if (!mask[static_cast<std::size_t>(b * g.voxels + v)]) continue;
                const Index base = b * g.classes * g.voxels + v;
                double mx = -INFINITY;
                for (std::size_t c = 0; c < C; ++c) {
                    zc[c] = static_cast<double>(zv[base + static_cast<Index>(c) * g.voxels]);
                    mx = std::max(mx, zc[c]);
                }
                double s = 0;
                for (std::size_t c = 0; c < C; ++c) s += (pk[c] = std::exp(zc[c] - mx));
                for (std::size_t c = 0; c < C; ++c) pk[c] /= s;
                std::fill(gk.begin(), gk.end(), 0.0);
                const auto y = static_cast<std::size_t>(labels[b * g.voxels + v]);
                for (std::size_t c = 0; c < C; ++c) {
                    const double w = weights[c];
                    if (c == y) {
                        // d(-log p_c)/dz_k = p_k - [k == c]
                        for (std::size_t k = 0; k < C; ++k) gk[k] += w * (pk[k] - (k == c ? 1.0 : 0.0));
                        continue;
                    }
                    // d(-log(1 - p_c))/dz_k = p_k - [k != c] q_k, q = softmax over classes other than c.
                    double mxc = -INFINITY;
                    for (std::size_t k = 0; k < C; ++k) {
                        if (k != c) mxc = std::max(mxc, zc[k]);
                    }
                    double sc = 0;
                    for (std::size_t k = 0; k < C; ++k) {
                        if (k != c) sc += std::exp(zc[k] - mxc);
                    }
                    for (std::size_t k = 0; k < C; ++k) {
                        const double q = k == c ? 0.0 : std::exp(zc[k] - mxc) / sc;
                        gk[k] += w * (pk[k] - q);
                    }
                }
                for (std::size_t k = 0; k < C; ++k) gz[base + static_cast<Index>(k) * g.voxels] += static_cast<T>(seed * gk[k]);
            }
        }
    });
}

template <typename T>
LossTerms<T> total_loss(Var<T> logits, const LabelVolume& labels) {
    require_rank(logits.shape(), 5, "loss logits");
    const std::vector<double> w = class_weights(labels, logits.shape()[1]);
    const std::vector<std::uint8_t> mask = boundary_mask(labels, 3);
    LossTerms<T> out;
    out.dice = dice_loss(logits, labels, w);
    out.ce = ce_loss(logits, labels, w);
    out.boundary = boundary_loss(logits, labels, mask, w);
    out.total = ops::add(ops::add(out.dice, out.ce), ops::affine(out.boundary, static_cast<T>(kBoundaryCoefficient), T(0)));
    return out;
}

#define LMS_INSTANTIATE(T)                                                                                \
    template Var<T> dice_loss(Var<T>, const LabelVolume&, const std::vector<double>&);                   \
    template Var<T> ce_loss(Var<T>, const LabelVolume&, const std::vector<double>&);                     \
    template Var<T> boundary_loss(Var<T>, const LabelVolume&, const std::vector<std::uint8_t>&,          \
                                  const std::vector<double>&);                                           \
    template LossTerms<T> total_loss(Var<T>, const LabelVolume&);

LMS_INSTANTIATE(float)
LMS_INSTANTIATE(double)

#undef LMS_INSTANTIATE

}  // namespace lms
