#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "mat/ops.hpp"
#include "mat/tape.hpp"
#include "mat/tensor.hpp"

// Neighborhood attention primitives: regional attention (RA), sparse global
// attention (SGA) over a dilated key lattice, their multi-range aggregations
// (MA/SMA), and a non-overlapping window attention baseline.

namespace mat {

// One attention head-group's geometry. head_dim = channels / total heads;
// bias table shape is [heads, 2k-1, 2k-1], indexed in dilated units so one
// table serves any dilation.
struct AttentionSpec {
    int range_k = 3;
    int dilation = 1;
    int heads = 1;
    int head_dim = 1;

    int extent() const { return range_k + (range_k - 1) * (dilation - 1); }
};

inline void check_attention_geometry(int k, int delta, int H, int W) {
    if (k < 1 || k % 2 == 0) throw ConfigError("range k must be odd and >= 1, got " + std::to_string(k));
    if (delta < 1) throw ConfigError("dilation must be >= 1, got " + std::to_string(delta));
    const int kd = k + (k - 1) * (delta - 1);
    if (kd > std::min(H, W))
        throw GeometryError("dilated extent k_d=" + std::to_string(kd) + " (k=" + std::to_string(k) +
                            ", dilation=" + std::to_string(delta) + ") exceeds feature map " +
                            std::to_string(H) + "x" + std::to_string(W));
}

// Key lattice along one axis for query coordinate i: k coordinates
// start + m*delta, plus the query's own lattice index for bias addressing.
// The ideal centered lattice is translated rigidly (in steps of delta, so
// relative offsets stay multiples of the dilation) until it lies in-bounds.
struct AxisLattice {
    int start = 0;
    int query_idx = 0;  // lattice slot nearest the query, in [0, k)
};

inline AxisLattice axis_lattice(int i, int k, int delta, int extent) {
    const int span = (k - 1) * delta;
    int a = i - (k / 2) * delta;
    if (a < 0) a += delta * ((-a + delta - 1) / delta);
    if (a + span > extent - 1) a -= delta * ((a + span - (extent - 1) + delta - 1) / delta);
    if (a < 0) {
        // narrow maps where no in-bounds translation keeps the query's
        // residue class: clamp directly, bias slot rounds to nearest
        a = std::clamp(i - (k / 2) * delta, 0, extent - 1 - span);
    }
    AxisLattice out;
    out.start = a;
    out.query_idx = std::clamp(int(std::lround(double(i - a) / delta)), 0, k - 1);
    return out;
}

// Ordered key coordinates for one query site, row-major over the k x k
// lattice. Exactly k^2 in-bounds entries.
inline std::vector<std::pair<int, int>> neighborhood_indices(int i, int j, int k, int delta,
                                                             int H, int W) {
    check_attention_geometry(k, delta, H, W);
    const AxisLattice ri = axis_lattice(i, k, delta, H);
    const AxisLattice cj = axis_lattice(j, k, delta, W);
    std::vector<std::pair<int, int>> out;
    out.reserve(std::size_t(k) * k);
    for (int x = 0; x < k; ++x)
        for (int y = 0; y < k; ++y)
            out.emplace_back(ri.start + x * delta, cj.start + y * delta);
    return out;
}

// ---- core kernel ----------------------------------------------------------
// Processes heads [head0, head0+gh) of q/k/v laid out as head-major channel
// groups of width d. Writes the same channel block of `out`. bias may be
// null; otherwise [gh, 2k-1, 2k-1].

template <class S>
void neigh_attn_group_fwd(const Tensor<S>& q, const Tensor<S>& kk, const Tensor<S>& v,
                          const Tensor<S>* bias, int k, int delta, int head0, int gh, int d,
                          Tensor<S>& out) {
    const int H = q.h, W = q.w;
    check_attention_geometry(k, delta, H, W);
    if (bias && (bias->n != gh || bias->c != 2 * k - 1 || bias->h != 2 * k - 1))
        throw ShapeError("bias table must be (" + std::to_string(gh) + "," +
                         std::to_string(2 * k - 1) + "," + std::to_string(2 * k - 1) +
                         ",1), got " + bias->shape_str());
    const S inv_sqrt_d = S(1) / std::sqrt(S(d));
    const int kk2 = k * k;
    std::vector<S> logits(kk2), wgt(kk2);
    std::vector<int> key_off(kk2), brow(k), bcol(k), roff(k), coff(k);
    const int HW = H * W;
    for (int ni = 0; ni < q.n; ++ni) {
        for (int h = head0; h < head0 + gh; ++h) {
            const int c0 = h * d;
            const S* qp = q.plane(ni, c0);    // d consecutive planes
            const S* kp = kk.plane(ni, c0);
            const S* vp = v.plane(ni, c0);
            S* op = out.plane(ni, c0);
            const S* bt = bias ? bias->data.data() + std::size_t(h - head0) * (2 * k - 1) * (2 * k - 1)
                               : nullptr;
            for (int i = 0; i < H; ++i) {
                const AxisLattice ri = axis_lattice(i, k, delta, H);
                for (int x = 0; x < k; ++x) {
                    roff[x] = (ri.start + x * delta) * W;
                    brow[x] = (x - ri.query_idx + k - 1) * (2 * k - 1);
                }
                for (int j = 0; j < W; ++j) {
                    const AxisLattice cj = axis_lattice(j, k, delta, W);
                    for (int y = 0; y < k; ++y) {
                        coff[y] = cj.start + y * delta;
                        bcol[y] = y - cj.query_idx + k - 1;
                    }
                    const int qsite = i * W + j;
                    for (int x = 0; x < k; ++x)
                        for (int y = 0; y < k; ++y) {
                            const int m = x * k + y;
                            key_off[m] = roff[x] + coff[y];
                            logits[m] = bt ? bt[brow[x] + bcol[y]] : S(0);
                        }
                    for (int dd = 0; dd < d; ++dd) {
                        const S qv = qp[std::size_t(dd) * HW + qsite] * inv_sqrt_d;
                        const S* kpl = kp + std::size_t(dd) * HW;
                        for (int m = 0; m < kk2; ++m) logits[m] += qv * kpl[key_off[m]];
                    }
                    S mx = logits[0];
                    for (int m = 1; m < kk2; ++m) mx = std::max(mx, logits[m]);
                    S den = 0;
                    for (int m = 0; m < kk2; ++m) {
                        wgt[m] = std::exp(logits[m] - mx);
                        den += wgt[m];
                    }
                    const S invden = S(1) / den;
                    for (int m = 0; m < kk2; ++m) wgt[m] *= invden;
                    for (int dd = 0; dd < d; ++dd) {
                        const S* vpl = vp + std::size_t(dd) * HW;
                        S acc = 0;
                        for (int m = 0; m < kk2; ++m) acc += wgt[m] * vpl[key_off[m]];
                        op[std::size_t(dd) * HW + qsite] = acc;
                    }
                }
            }
        }
    }
}

template <class S>
void neigh_attn_group_bwd(const Tensor<S>& q, const Tensor<S>& kk, const Tensor<S>& v,
                          const Tensor<S>* bias, int k, int delta, int head0, int gh, int d,
                          const Tensor<S>& dout, Tensor<S>* dq, Tensor<S>* dk, Tensor<S>* dv,
                          Tensor<S>* dbias) {
    const int H = q.h, W = q.w;
    const S inv_sqrt_d = S(1) / std::sqrt(S(d));
    const int kk2 = k * k;
    std::vector<S> logits(kk2), wgt(kk2), gw(kk2), dl(kk2);
    std::vector<int> key_off(kk2), bidx(kk2), roff(k), coff(k), brow(k), bcol(k);
    const int HW = H * W;
    for (int ni = 0; ni < q.n; ++ni) {
        for (int h = head0; h < head0 + gh; ++h) {
            const int c0 = h * d;
            const S* qp = q.plane(ni, c0);
            const S* kp = kk.plane(ni, c0);
            const S* vp = v.plane(ni, c0);
            const S* gp = dout.plane(ni, c0);
            S* dqp = dq ? dq->plane(ni, c0) : nullptr;
            S* dkp = dk ? dk->plane(ni, c0) : nullptr;
            S* dvp = dv ? dv->plane(ni, c0) : nullptr;
            const std::size_t btoff = std::size_t(h - head0) * (2 * k - 1) * (2 * k - 1);
            const S* bt = bias ? bias->data.data() + btoff : nullptr;
            S* dbt = dbias ? dbias->data.data() + btoff : nullptr;
            for (int i = 0; i < H; ++i) {
                const AxisLattice ri = axis_lattice(i, k, delta, H);
                for (int x = 0; x < k; ++x) {
                    roff[x] = (ri.start + x * delta) * W;
                    brow[x] = (x - ri.query_idx + k - 1) * (2 * k - 1);
                }
                for (int j = 0; j < W; ++j) {
                    const AxisLattice cj = axis_lattice(j, k, delta, W);
                    for (int y = 0; y < k; ++y) {
                        coff[y] = cj.start + y * delta;
                        bcol[y] = y - cj.query_idx + k - 1;
                    }
                    const int qsite = i * W + j;
                    for (int x = 0; x < k; ++x)
                        for (int y = 0; y < k; ++y) {
                            const int m = x * k + y;
                            key_off[m] = roff[x] + coff[y];
                            bidx[m] = brow[x] + bcol[y];
                            logits[m] = bt ? bt[bidx[m]] : S(0);
                        }
                    for (int dd = 0; dd < d; ++dd) {
                        const S qv = qp[std::size_t(dd) * HW + qsite] * inv_sqrt_d;
                        const S* kpl = kp + std::size_t(dd) * HW;
                        for (int m = 0; m < kk2; ++m) logits[m] += qv * kpl[key_off[m]];
                    }
                    S mx = logits[0];
                    for (int m = 1; m < kk2; ++m) mx = std::max(mx, logits[m]);
                    S den = 0;
                    for (int m = 0; m < kk2; ++m) {
                        wgt[m] = std::exp(logits[m] - mx);
                        den += wgt[m];
                    }
                    const S invden = S(1) / den;
                    for (int m = 0; m < kk2; ++m) wgt[m] *= invden;
                    // gw_m = g . v_m ; dl_m = w_m (gw_m - sum_j w_j gw_j)
                    for (int m = 0; m < kk2; ++m) gw[m] = 0;
                    for (int dd = 0; dd < d; ++dd) {
                        const S g = gp[std::size_t(dd) * HW + qsite];
                        const S* vpl = vp + std::size_t(dd) * HW;
                        S* dvl = dvp ? dvp + std::size_t(dd) * HW : nullptr;
                        for (int m = 0; m < kk2; ++m) {
                            gw[m] += g * vpl[key_off[m]];
                            if (dvl) dvl[key_off[m]] += wgt[m] * g;
                        }
                    }
                    S dot = 0;
                    for (int m = 0; m < kk2; ++m) dot += wgt[m] * gw[m];
                    for (int m = 0; m < kk2; ++m) {
                        dl[m] = wgt[m] * (gw[m] - dot);
                        if (dbt) dbt[bidx[m]] += dl[m];
                    }
                    for (int dd = 0; dd < d; ++dd) {
                        const S qv = qp[std::size_t(dd) * HW + qsite];
                        const S* kpl = kp + std::size_t(dd) * HW;
                        S* dkl = dkp ? dkp + std::size_t(dd) * HW : nullptr;
                        S acc = 0;
                        for (int m = 0; m < kk2; ++m) {
                            acc += dl[m] * kpl[key_off[m]];
                            if (dkl) dkl[key_off[m]] += dl[m] * qv * inv_sqrt_d;
                        }
                        if (dqp) dqp[std::size_t(dd) * HW + qsite] += acc * inv_sqrt_d;
                    }
                }
            }
        }
    }
}

// ---- spec-level raw entry points ------------------------------------------

template <class S>
void check_qkv_shapes(const Tensor<S>& q, const Tensor<S>& kk, const Tensor<S>& v,
                      const AttentionSpec& spec) {
    if (!q.same_shape(kk) || !q.same_shape(v))
        throw ShapeError("q/k/v shapes differ: " + q.shape_str() + " " + kk.shape_str() + " " +
                         v.shape_str());
    if (q.c < spec.heads * spec.head_dim)
        throw ShapeError("q has " + std::to_string(q.c) + " channels, need >= heads*head_dim = " +
                         std::to_string(spec.heads * spec.head_dim));
}

// Eq.-style regional attention: dilation fixed at 1.
template <class S>
Tensor<S> regional_attention(const Tensor<S>& q, const Tensor<S>& kk, const Tensor<S>& v,
                             const AttentionSpec& spec, const Tensor<S>* bias = nullptr) {
    if (spec.dilation != 1) throw ConfigError("regional_attention requires dilation 1");
    check_qkv_shapes(q, kk, v, spec);
    Tensor<S> out(q.n, q.c, q.h, q.w);
    neigh_attn_group_fwd(q, kk, v, bias, spec.range_k, 1, 0, spec.heads, spec.head_dim, out);
    return out;
}

// Same computation over the dilated lattice; reduces to RA at dilation 1.
template <class S>
Tensor<S> sparse_global_attention(const Tensor<S>& q, const Tensor<S>& kk, const Tensor<S>& v,
                                  const AttentionSpec& spec, const Tensor<S>* bias = nullptr) {
    check_qkv_shapes(q, kk, v, spec);
    Tensor<S> out(q.n, q.c, q.h, q.w);
    neigh_attn_group_fwd(q, kk, v, bias, spec.range_k, spec.dilation, 0, spec.heads,
                         spec.head_dim, out);
    return out;
}

// ---- tape op: multi-group neighborhood attention --------------------------
// Consumes a packed qkv tensor (3C channels) and runs each head-group with
// its own range/dilation over its channel slice. Head h covers channels
// [h*d, (h+1)*d) of each of Q, K, V.

struct AttnGroup {
    AttentionSpec spec;
    int head0 = 0;
    Var bias;  // [heads, 2k-1, 2k-1, 1]; bias.id < 0 for none
};

template <class S>
Tensor<S> slice_channels(const Tensor<S>& x, int c0, int cn) {
    Tensor<S> y(x.n, cn, x.h, x.w);
    const std::size_t plane = std::size_t(x.h) * x.w;
    for (int ni = 0; ni < x.n; ++ni)
        std::copy(x.plane(ni, c0), x.plane(ni, c0) + std::size_t(cn) * plane, y.plane(ni, 0));
    return y;
}

template <class S>
Var op_multi_group_attention(Tape<S>& t, Var qkv, const std::vector<AttnGroup>& groups, int C) {
    const Tensor<S>& pk = t.val(qkv);
    if (pk.c != 3 * C) throw ShapeError("packed qkv must have 3C channels");
    Tensor<S> q = slice_channels(pk, 0, C);
    Tensor<S> kk = slice_channels(pk, C, C);
    Tensor<S> v = slice_channels(pk, 2 * C, C);
    Tensor<S> out(pk.n, C, pk.h, pk.w);
    for (const auto& g : groups) {
        const Tensor<S>* bias = g.bias.id >= 0 ? &t.val(g.bias) : nullptr;
        neigh_attn_group_fwd(q, kk, v, bias, g.spec.range_k, g.spec.dilation, g.head0,
                             g.spec.heads, g.spec.head_dim, out);
    }
    Var self{int(t.num_nodes())};
    return t.push(std::move(out), [qkv, groups, C, self](Tape<S>& tp) {
        const Tensor<S>& pk2 = tp.val(qkv);
        Tensor<S> q2 = slice_channels(pk2, 0, C);
        Tensor<S> k2 = slice_channels(pk2, C, C);
        Tensor<S> v2 = slice_channels(pk2, 2 * C, C);
        Tensor<S> dq(pk2.n, C, pk2.h, pk2.w), dk(pk2.n, C, pk2.h, pk2.w),
            dv(pk2.n, C, pk2.h, pk2.w);
        const Tensor<S>& dy = tp.grad(self);
        for (const auto& g : groups) {
            const Tensor<S>* bias = g.bias.id >= 0 ? &tp.val(g.bias) : nullptr;
            Tensor<S>* dbias = g.bias.id >= 0 ? &tp.grad(g.bias) : nullptr;
            neigh_attn_group_bwd(q2, k2, v2, bias, g.spec.range_k, g.spec.dilation, g.head0,
                                 g.spec.heads, g.spec.head_dim, dy, &dq, &dk, &dv, dbias);
        }
        Tensor<S>& dpk = tp.grad(qkv);
        const std::size_t plane = std::size_t(pk2.h) * pk2.w;
        for (int ni = 0; ni < pk2.n; ++ni) {
            for (int ci = 0; ci < C; ++ci) {
                const S* a = dq.plane(ni, ci);
                const S* b = dk.plane(ni, ci);
                const S* c = dv.plane(ni, ci);
                S* pa = dpk.plane(ni, ci);
                S* pb = dpk.plane(ni, C + ci);
                S* pc = dpk.plane(ni, 2 * C + ci);
                for (std::size_t i = 0; i < plane; ++i) {
                    pa[i] += a[i];
                    pb[i] += b[i];
                    pc[i] += c[i];
                }
            }
        }
    });
}

// ---- window attention baseline (forward only; ablation parity) ------------

// Cyclic roll in h/w.
template <class S>
Tensor<S> roll2d(const Tensor<S>& x, int sh, int sw) {
    Tensor<S> y(x.n, x.c, x.h, x.w);
    for (int ni = 0; ni < x.n; ++ni)
        for (int ci = 0; ci < x.c; ++ci)
            for (int hi = 0; hi < x.h; ++hi)
                for (int wi = 0; wi < x.w; ++wi)
                    y.at(ni, ci, ((hi + sh) % x.h + x.h) % x.h, ((wi + sw) % x.w + x.w) % x.w) =
                        x.at(ni, ci, hi, wi);
    return y;
}

// Non-overlapping window softmax attention, optional half-window cyclic
// shift. Non-divisible maps are reflect-padded then cropped.
template <class S>
Tensor<S> window_attention(const Tensor<S>& q_in, const Tensor<S>& k_in, const Tensor<S>& v_in,
                           int heads, int window, bool shifted,
                           const Tensor<S>* bias = nullptr) {
    if (q_in.c % heads != 0) throw ShapeError("channels not divisible by heads");
    const int H0 = q_in.h, W0 = q_in.w;
    const int ws = std::min({window, H0, W0});
    auto pad = [&](const Tensor<S>& x, int Hp, int Wp) {
        if (Hp == x.h && Wp == x.w) return x;
        Tensor<S> y(x.n, x.c, Hp, Wp);
        for (int ni = 0; ni < x.n; ++ni)
            for (int ci = 0; ci < x.c; ++ci)
                for (int hi = 0; hi < Hp; ++hi)
                    for (int wi = 0; wi < Wp; ++wi) {
                        int sh = hi < x.h ? hi : 2 * x.h - 2 - hi;
                        int sw = wi < x.w ? wi : 2 * x.w - 2 - wi;
                        y.at(ni, ci, hi, wi) = x.at(ni, ci, sh, sw);
                    }
        return y;
    };
    const int Hp = (H0 + ws - 1) / ws * ws, Wp = (W0 + ws - 1) / ws * ws;
    Tensor<S> q = pad(q_in, Hp, Wp), kk = pad(k_in, Hp, Wp), v = pad(v_in, Hp, Wp);
    const int sh = shifted ? ws / 2 : 0;
    if (sh) {
        q = roll2d(q, -sh, -sh);
        kk = roll2d(kk, -sh, -sh);
        v = roll2d(v, -sh, -sh);
    }
    const int d = q.c / heads;
    const S inv_sqrt_d = S(1) / std::sqrt(S(d));
    Tensor<S> out(q.n, q.c, Hp, Wp);
    const int nsq = ws * ws;
    std::vector<S> logits(nsq), wgt(nsq);
    for (int ni = 0; ni < q.n; ++ni)
        for (int h = 0; h < heads; ++h)
            for (int wh = 0; wh < Hp / ws; ++wh)
                for (int ww_ = 0; ww_ < Wp / ws; ++ww_)
                    for (int qi = 0; qi < nsq; ++qi) {
                        const int qy = wh * ws + qi / ws, qx = ww_ * ws + qi % ws;
                        for (int m = 0; m < nsq; ++m) {
                            const int ky = wh * ws + m / ws, kx = ww_ * ws + m % ws;
                            S l = 0;
                            for (int dd = 0; dd < d; ++dd)
                                l += q.at(ni, h * d + dd, qy, qx) * kk.at(ni, h * d + dd, ky, kx);
                            l *= inv_sqrt_d;
                            if (bias)
                                l += bias->at(h, (m / ws - qi / ws) + ws - 1,
                                              (m % ws - qi % ws) + ws - 1, 0);
                            logits[m] = l;
                        }
                        S mx = logits[0];
                        for (int m = 1; m < nsq; ++m) mx = std::max(mx, logits[m]);
                        S den = 0;
                        for (int m = 0; m < nsq; ++m) {
                            wgt[m] = std::exp(logits[m] - mx);
                            den += wgt[m];
                        }
                        for (int dd = 0; dd < d; ++dd) {
                            S acc = 0;
                            for (int m = 0; m < nsq; ++m) {
                                const int ky = wh * ws + m / ws, kx = ww_ * ws + m % ws;
                                acc += wgt[m] * v.at(ni, h * d + dd, ky, kx);
                            }
                            out.at(ni, h * d + dd, qy, qx) = acc / den;
                        }
                    }
    if (sh) out = roll2d(out, sh, sh);
    if (Hp != H0 || Wp != W0) out = crop(out, 0, 0, H0, W0);
    return out;
}

// Maximum-dilation rule: delta = floor(min(H, W) / k), floored at 1.
inline int max_dilation(int k, int H, int W) { return std::max(1, std::min(H, W) / k); }

}  // namespace mat
