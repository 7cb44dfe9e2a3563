#pragma once

#include <cmath>

#include "mat/tape.hpp"
#include "mat/tensor.hpp"

// Differentiable operation set: each op is a pure forward kernel, a matching
// adjoint kernel, and a thin tape wrapper that pairs them. All convolutions
// are stride 1, same padding (zero fill), odd kernels.

namespace mat {

// ---- conv2d ---------------------------------------------------------------

template <class S>
void check_conv_shapes(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* b) {
    if (w.h % 2 == 0 || w.w % 2 == 0)
        throw ConfigError("conv kernel dims must be odd, got " + w.shape_str());
    if (w.c != x.c)
        throw ShapeError("conv input channels " + std::to_string(x.c) +
                         " do not match kernel Cin " + std::to_string(w.c));
    if (b && (b->c != w.n || b->n != 1 || b->h != 1 || b->w != 1))
        throw ShapeError("conv bias must be (1,Cout,1,1), got " + b->shape_str());
}

template <class S>
Tensor<S> conv2d_fwd(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* b) {
    check_conv_shapes(x, w, b);
    const int co_n = w.n, ci_n = w.c, kh = w.h, kw = w.w;
    const int ph = kh / 2, pw = kw / 2;
    Tensor<S> y(x.n, co_n, x.h, x.w);
    for (int ni = 0; ni < x.n; ++ni) {
        for (int co = 0; co < co_n; ++co) {
            S* yp = y.plane(ni, co);
            if (b) {
                const S bv = b->data[co];
                for (int i = 0; i < x.h * x.w; ++i) yp[i] = bv;
            }
            for (int ci = 0; ci < ci_n; ++ci) {
                const S* xp = x.plane(ni, ci);
                for (int dh = 0; dh < kh; ++dh) {
                    for (int dw = 0; dw < kw; ++dw) {
                        const S wv = w.at(co, ci, dh, dw);
                        if (wv == S(0)) continue;
                        const int oh0 = std::max(0, ph - dh);
                        const int oh1 = std::min(x.h, x.h + ph - dh);
                        const int ow0 = std::max(0, pw - dw);
                        const int ow1 = std::min(x.w, x.w + pw - dw);
                        for (int oh = oh0; oh < oh1; ++oh) {
                            const S* xr = xp + (oh + dh - ph) * x.w + (dw - pw);
                            S* yr = yp + oh * x.w;
                            for (int ow = ow0; ow < ow1; ++ow) yr[ow] += wv * xr[ow];
                        }
                    }
                }
            }
        }
    }
    return y;
}

template <class S>
void conv2d_bwd(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& dy,
                Tensor<S>* dx, Tensor<S>* dw, Tensor<S>* db) {
    const int co_n = w.n, ci_n = w.c, kh = w.h, kw = w.w;
    const int ph = kh / 2, pw = kw / 2;
    for (int ni = 0; ni < x.n; ++ni) {
        for (int co = 0; co < co_n; ++co) {
            const S* gp = dy.plane(ni, co);
            if (db) {
                S s = 0;
                for (int i = 0; i < x.h * x.w; ++i) s += gp[i];
                db->data[co] += s;
            }
            for (int ci = 0; ci < ci_n; ++ci) {
                const S* xp = x.plane(ni, ci);
                S* dxp = dx ? dx->plane(ni, ci) : nullptr;
                for (int dh = 0; dh < kh; ++dh) {
                    for (int dw_ = 0; dw_ < kw; ++dw_) {
                        const int oh0 = std::max(0, ph - dh);
                        const int oh1 = std::min(x.h, x.h + ph - dh);
                        const int ow0 = std::max(0, pw - dw_);
                        const int ow1 = std::min(x.w, x.w + pw - dw_);
                        const S wv = w.at(co, ci, dh, dw_);
                        S wsum = 0;
                        for (int oh = oh0; oh < oh1; ++oh) {
                            const S* xr = xp + (oh + dh - ph) * x.w + (dw_ - pw);
                            const S* gr = gp + oh * x.w;
                            if (dxp) {
                                S* dxr = dxp + (oh + dh - ph) * x.w + (dw_ - pw);
                                for (int ow = ow0; ow < ow1; ++ow) {
                                    dxr[ow] += wv * gr[ow];
                                    wsum += xr[ow] * gr[ow];
                                }
                            } else {
                                for (int ow = ow0; ow < ow1; ++ow) wsum += xr[ow] * gr[ow];
                            }
                        }
                        if (dw) dw->at(co, ci, dh, dw_) += wsum;
                    }
                }
            }
        }
    }
}

// ---- depthwise conv -------------------------------------------------------

template <class S>
Tensor<S> dwconv2d_fwd(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* b) {
    if (w.n != x.c || w.c != 1)
        throw ShapeError("dwconv kernel must be (C,1,kh,kw) with C=" + std::to_string(x.c) +
                         ", got " + w.shape_str());
    if (w.h % 2 == 0 || w.w % 2 == 0)
        throw ConfigError("dwconv kernel dims must be odd, got " + w.shape_str());
    const int kh = w.h, kw = w.w, ph = kh / 2, pw = kw / 2;
    Tensor<S> y(x.n, x.c, x.h, x.w);
    for (int ni = 0; ni < x.n; ++ni) {
        for (int ci = 0; ci < x.c; ++ci) {
            const S* xp = x.plane(ni, ci);
            S* yp = y.plane(ni, ci);
            const S bv = b ? b->data[ci] : S(0);
            for (int i = 0; i < x.h * x.w; ++i) yp[i] = bv;
            for (int dh = 0; dh < kh; ++dh) {
                for (int dw = 0; dw < kw; ++dw) {
                    const S wv = w.at(ci, 0, dh, dw);
                    if (wv == S(0)) continue;
                    const int oh0 = std::max(0, ph - dh), oh1 = std::min(x.h, x.h + ph - dh);
                    const int ow0 = std::max(0, pw - dw), ow1 = std::min(x.w, x.w + pw - dw);
                    for (int oh = oh0; oh < oh1; ++oh) {
                        const S* xr = xp + (oh + dh - ph) * x.w + (dw - pw);
                        S* yr = yp + oh * x.w;
                        for (int ow = ow0; ow < ow1; ++ow) yr[ow] += wv * xr[ow];
                    }
                }
            }
        }
    }
    return y;
}

template <class S>
void dwconv2d_bwd(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& dy,
                  Tensor<S>* dx, Tensor<S>* dw, Tensor<S>* db) {
    const int kh = w.h, kw = w.w, ph = kh / 2, pw = kw / 2;
    for (int ni = 0; ni < x.n; ++ni) {
        for (int ci = 0; ci < x.c; ++ci) {
            const S* xp = x.plane(ni, ci);
            const S* gp = dy.plane(ni, ci);
            S* dxp = dx ? dx->plane(ni, ci) : nullptr;
            if (db) {
                S s = 0;
                for (int i = 0; i < x.h * x.w; ++i) s += gp[i];
                db->data[ci] += s;
            }
            for (int dh = 0; dh < kh; ++dh) {
                for (int dw_ = 0; dw_ < kw; ++dw_) {
                    const int oh0 = std::max(0, ph - dh), oh1 = std::min(x.h, x.h + ph - dh);
                    const int ow0 = std::max(0, pw - dw_), ow1 = std::min(x.w, x.w + pw - dw_);
                    const S wv = w.at(ci, 0, dh, dw_);
                    S wsum = 0;
                    for (int oh = oh0; oh < oh1; ++oh) {
                        const S* xr = xp + (oh + dh - ph) * x.w + (dw_ - pw);
                        const S* gr = gp + oh * x.w;
                        if (dxp) {
                            S* dxr = dxp + (oh + dh - ph) * x.w + (dw_ - pw);
                            for (int ow = ow0; ow < ow1; ++ow) {
                                dxr[ow] += wv * gr[ow];
                                wsum += xr[ow] * gr[ow];
                            }
                        } else {
                            for (int ow = ow0; ow < ow1; ++ow) wsum += xr[ow] * gr[ow];
                        }
                    }
                    if (dw) dw->at(ci, 0, dh, dw_) += wsum;
                }
            }
        }
    }
}

// ---- layer norm (over channels, per spatial site) -------------------------

template <class S>
Tensor<S> layer_norm_fwd(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                         double eps = 1e-6) {
    if (gamma.c != x.c || beta.c != x.c)
        throw ShapeError("layer_norm affine params must have C=" + std::to_string(x.c));
    Tensor<S> y(x.n, x.c, x.h, x.w);
    const int hw = x.h * x.w, C = x.c;
    for (int ni = 0; ni < x.n; ++ni) {
        for (int s = 0; s < hw; ++s) {
            const S* base = x.data.data() + std::size_t(ni) * C * hw + s;
            S mean = 0;
            for (int ci = 0; ci < C; ++ci) mean += base[std::size_t(ci) * hw];
            mean /= S(C);
            S var = 0;
            for (int ci = 0; ci < C; ++ci) {
                const S d = base[std::size_t(ci) * hw] - mean;
                var += d * d;
            }
            var /= S(C);
            const S inv = S(1) / std::sqrt(var + S(eps));
            S* out = y.data.data() + std::size_t(ni) * C * hw + s;
            for (int ci = 0; ci < C; ++ci)
                out[std::size_t(ci) * hw] =
                    gamma.data[ci] * (base[std::size_t(ci) * hw] - mean) * inv + beta.data[ci];
        }
    }
    return y;
}

template <class S>
void layer_norm_bwd(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& dy,
                    Tensor<S>* dx, Tensor<S>* dgamma, Tensor<S>* dbeta, double eps = 1e-6) {
    const int hw = x.h * x.w, C = x.c;
    for (int ni = 0; ni < x.n; ++ni) {
        for (int s = 0; s < hw; ++s) {
            const std::size_t off = std::size_t(ni) * C * hw + s;
            const S* xb = x.data.data() + off;
            const S* gb = dy.data.data() + off;
            S mean = 0;
            for (int ci = 0; ci < C; ++ci) mean += xb[std::size_t(ci) * hw];
            mean /= S(C);
            S var = 0;
            for (int ci = 0; ci < C; ++ci) {
                const S d = xb[std::size_t(ci) * hw] - mean;
                var += d * d;
            }
            var /= S(C);
            const S inv = S(1) / std::sqrt(var + S(eps));
            // dxhat = dy*gamma; dx = inv*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
            S m1 = 0, m2 = 0;
            for (int ci = 0; ci < C; ++ci) {
                const S xhat = (xb[std::size_t(ci) * hw] - mean) * inv;
                const S dxh = gb[std::size_t(ci) * hw] * gamma.data[ci];
                m1 += dxh;
                m2 += dxh * xhat;
            }
            m1 /= S(C);
            m2 /= S(C);
            for (int ci = 0; ci < C; ++ci) {
                const S xhat = (xb[std::size_t(ci) * hw] - mean) * inv;
                const S dxh = gb[std::size_t(ci) * hw] * gamma.data[ci];
                if (dx) dx->data[off + std::size_t(ci) * hw] += inv * (dxh - m1 - xhat * m2);
                if (dgamma) dgamma->data[ci] += gb[std::size_t(ci) * hw] * xhat;
                if (dbeta) dbeta->data[ci] += gb[std::size_t(ci) * hw];
            }
        }
    }
}

// ---- elementwise scalar kernels ------------------------------------------

// Exact normal-CDF GELU, x * Phi(x).
inline double gelu_scalar(double x) { return x * 0.5 * std::erfc(-x * M_SQRT1_2); }
inline double gelu_grad_scalar(double x) {
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return 0.5 * std::erfc(-x * M_SQRT1_2) + x * pdf;
}

template <class S>
Tensor<S> gelu_fwd(const Tensor<S>& x) {
    Tensor<S> y = x;
    for (auto& v : y.data) v = S(gelu_scalar(double(v)));
    return y;
}

template <class S>
Tensor<S> sigmoid_fwd(const Tensor<S>& x) {
    Tensor<S> y = x;
    for (auto& v : y.data) v = S(1) / (S(1) + std::exp(-v));
    return y;
}

template <class S>
Tensor<S> relu_fwd(const Tensor<S>& x) {
    Tensor<S> y = x;
    for (auto& v : y.data) v = v > S(0) ? v : S(0);
    return y;
}

// ---- pixel shuffle --------------------------------------------------------

template <class S>
Tensor<S> pixel_shuffle_fwd(const Tensor<S>& x, int s) {
    if (s < 1) throw ConfigError("pixel_shuffle factor must be >= 1");
    if (x.c % (s * s) != 0)
        throw ConfigError("pixel_shuffle: channels " + std::to_string(x.c) +
                          " not divisible by s^2=" + std::to_string(s * s));
    const int co = x.c / (s * s);
    Tensor<S> y(x.n, co, x.h * s, x.w * s);
    for (int ni = 0; ni < x.n; ++ni)
        for (int ci = 0; ci < co; ++ci)
            for (int dy = 0; dy < s; ++dy)
                for (int dx = 0; dx < s; ++dx)
                    for (int hi = 0; hi < x.h; ++hi)
                        for (int wi = 0; wi < x.w; ++wi)
                            y.at(ni, ci, hi * s + dy, wi * s + dx) =
                                x.at(ni, ci * s * s + dy * s + dx, hi, wi);
    return y;
}

template <class S>
Tensor<S> pixel_unshuffle_fwd(const Tensor<S>& x, int s) {
    if (s < 1) throw ConfigError("pixel_unshuffle factor must be >= 1");
    if (x.h % s != 0 || x.w % s != 0)
        throw ConfigError("pixel_unshuffle: spatial dims not divisible by s");
    Tensor<S> y(x.n, x.c * s * s, x.h / s, x.w / s);
    for (int ni = 0; ni < x.n; ++ni)
        for (int ci = 0; ci < x.c; ++ci)
            for (int dy = 0; dy < s; ++dy)
                for (int dx = 0; dx < s; ++dx)
                    for (int hi = 0; hi < y.h; ++hi)
                        for (int wi = 0; wi < y.w; ++wi)
                            y.at(ni, ci * s * s + dy * s + dx, hi, wi) =
                                x.at(ni, ci, hi * s + dy, wi * s + dx);
    return y;
}

// ---- global average pool --------------------------------------------------

template <class S>
Tensor<S> global_avg_pool_fwd(const Tensor<S>& x) {
    Tensor<S> y(x.n, x.c, 1, 1);
    const int hw = x.h * x.w;
    for (int ni = 0; ni < x.n; ++ni)
        for (int ci = 0; ci < x.c; ++ci) {
            const S* p = x.plane(ni, ci);
            S s = 0;
            for (int i = 0; i < hw; ++i) s += p[i];
            y.at(ni, ci, 0, 0) = s / S(hw);
        }
    return y;
}

// ==========================================================================
// Tape wrappers. Each captures the Vars it read plus its own output Var so
// the adjoint can fetch dy and scatter into input grads.
// ==========================================================================

template <class S>
Var op_conv2d(Tape<S>& t, Var x, Var w, Var b = Var{}) {
    const Tensor<S>* bp = b.id >= 0 ? &t.val(b) : nullptr;
    Tensor<S> y = conv2d_fwd(t.val(x), t.val(w), bp);
    Var self{int(t.num_nodes())};
    return t.push(std::move(y), [x, w, b, self](Tape<S>& tp) {
        conv2d_bwd(tp.val(x), tp.val(w), tp.grad(self), &tp.grad(x), &tp.grad(w),
                   b.id >= 0 ? &tp.grad(b) : nullptr);
    });
}

template <class S>
Var op_dwconv2d(Tape<S>& t, Var x, Var w, Var b = Var{}) {
    const Tensor<S>* bp = b.id >= 0 ? &t.val(b) : nullptr;
    Tensor<S> y = dwconv2d_fwd(t.val(x), t.val(w), bp);
    Var self{int(t.num_nodes())};
    return t.push(std::move(y), [x, w, b, self](Tape<S>& tp) {
        dwconv2d_bwd(tp.val(x), tp.val(w), tp.grad(self), &tp.grad(x), &tp.grad(w),
                     b.id >= 0 ? &tp.grad(b) : nullptr);
    });
}

template <class S>
Var op_layer_norm(Tape<S>& t, Var x, Var gamma, Var beta, double eps = 1e-6) {
    Tensor<S> y = layer_norm_fwd(t.val(x), t.val(gamma), t.val(beta), eps);
    Var self{int(t.num_nodes())};
    return t.push(std::move(y), [x, gamma, beta, eps, self](Tape<S>& tp) {
        layer_norm_bwd(tp.val(x), tp.val(gamma), tp.grad(self), &tp.grad(x), &tp.grad(gamma),
                       &tp.grad(beta), eps);
    });
}

template <class S>
Var op_gelu(Tape<S>& t, Var x) {
    Tensor<S> y = gelu_fwd(t.val(x));
    Var self{int(t.num_nodes())};
    return t.push(std::move(y), [x, self](Tape<S>& tp) {
        const Tensor<S>& xv = tp.val(x);
        const Tensor<S>& dy = tp.grad(self);
        Tensor<S>& dx = tp.grad(x);
        for (std::size_t i = 0; i < xv.size(); ++i)
            dx.data[i] += dy.data[i] * S(gelu_grad_scalar(double(xv.data[i])));
    });
}

template <class S>
Var op_relu(Tape<S>& t, Var x) {
    Tensor<S> y = relu_fwd(t.val(x));
    Var self{int(t.num_nodes())};
    return t.push(std::move(y), [x, self](Tape<S>& tp) {
        const Tensor<S>& xv = tp.val(x);
        const Tensor<S>& dy = tp.grad(self);
        Tensor<S>& dx = tp.grad(x);
        for (std::size_t i = 0; i < xv.size(); ++i)
            if (xv.data[i] > S(0)) dx.data[i] += dy.data[i];
    });
}

template <class S>
Var op_sigmoid(Tape<S>& t, Var x) {
    Tensor<S> y = sigmoid_fwd(t.val(x));
    Var self{int(t.num_nodes())};
    return t.push(std::move(y), [x, self](Tape<S>& tp) {
        const Tensor<S>& yv = tp.val(self);
        const Tensor<S>& dy = tp.grad(self);
        Tensor<S>& dx = tp.grad(x);
        for (std::size_t i = 0; i < yv.size(); ++i)
            dx.data[i] += dy.data[i] * yv.data[i] * (S(1) - yv.data[i]);
    });
}

template <class S>
Var op_add(Tape<S>& t, Var a, Var b) {
    const Tensor<S>& av = t.val(a);
    const Tensor<S>& bv = t.val(b);
    if (!av.same_shape(bv))
        throw ShapeError("add: " + av.shape_str() + " vs " + bv.shape_str());
    Tensor<S> y = av;
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += bv.data[i];
    Var self{int(t.num_nodes())};
    return t.push(std::move(y), [a, b, self](Tape<S>& tp) {
        const Tensor<S>& dy = tp.grad(self);
        Tensor<S>& da = tp.grad(a);
        Tensor<S>& db = tp.grad(b);
        for (std::size_t i = 0; i < dy.size(); ++i) {
            da.data[i] += dy.data[i];
            db.data[i] += dy.data[i];
        }
    });
}

// Elementwise product; the star operation. Each branch's gradient routes
// through the other branch's value.
template <class S>
Var op_mul(Tape<S>& t, Var a, Var b) {
    const Tensor<S>& av = t.val(a);
    const Tensor<S>& bv = t.val(b);
    if (!av.same_shape(bv))
        throw ShapeError("mul: " + av.shape_str() + " vs " + bv.shape_str());
    Tensor<S> y = av;
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] *= bv.data[i];
    Var self{int(t.num_nodes())};
    return t.push(std::move(y), [a, b, self](Tape<S>& tp) {
        const Tensor<S>& av2 = tp.val(a);
        const Tensor<S>& bv2 = tp.val(b);
        const Tensor<S>& dy = tp.grad(self);
        Tensor<S>& da = tp.grad(a);
        Tensor<S>& db = tp.grad(b);
        for (std::size_t i = 0; i < dy.size(); ++i) {
            da.data[i] += dy.data[i] * bv2.data[i];
            db.data[i] += dy.data[i] * av2.data[i];
        }
    });
}

template <class S>
Var op_scale(Tape<S>& t, Var x, double s) {
    Tensor<S> y = t.val(x);
    for (auto& v : y.data) v *= S(s);
    Var self{int(t.num_nodes())};
    return t.push(std::move(y), [x, s, self](Tape<S>& tp) {
        const Tensor<S>& dy = tp.grad(self);
        Tensor<S>& dx = tp.grad(x);
        for (std::size_t i = 0; i < dy.size(); ++i) dx.data[i] += dy.data[i] * S(s);
    });
}

// x:(N,C,H,W) scaled per channel by g:(N,C,1,1); the channel-attention gate.
template <class S>
Var op_channel_scale(Tape<S>& t, Var x, Var g) {
    const Tensor<S>& xv = t.val(x);
    const Tensor<S>& gv = t.val(g);
    if (gv.n != xv.n || gv.c != xv.c || gv.h != 1 || gv.w != 1)
        throw ShapeError("channel_scale gate must be (N,C,1,1), got " + gv.shape_str());
    Tensor<S> y = xv;
    const int hw = xv.h * xv.w;
    for (int ni = 0; ni < xv.n; ++ni)
        for (int ci = 0; ci < xv.c; ++ci) {
            const S s = gv.at(ni, ci, 0, 0);
            S* p = y.plane(ni, ci);
            for (int i = 0; i < hw; ++i) p[i] *= s;
        }
    Var self{int(t.num_nodes())};
    return t.push(std::move(y), [x, g, self](Tape<S>& tp) {
        const Tensor<S>& xv2 = tp.val(x);
        const Tensor<S>& gv2 = tp.val(g);
        const Tensor<S>& dy = tp.grad(self);
        Tensor<S>& dx = tp.grad(x);
        Tensor<S>& dg = tp.grad(g);
        const int hw = xv2.h * xv2.w;
        for (int ni = 0; ni < xv2.n; ++ni)
            for (int ci = 0; ci < xv2.c; ++ci) {
                const S s = gv2.at(ni, ci, 0, 0);
                const S* xp = xv2.plane(ni, ci);
                const S* gp = dy.plane(ni, ci);
                S* dxp = dx.plane(ni, ci);
                S acc = 0;
                for (int i = 0; i < hw; ++i) {
                    dxp[i] += gp[i] * s;
                    acc += gp[i] * xp[i];
                }
                dg.at(ni, ci, 0, 0) += acc;
            }
    });
}

template <class S>
Var op_global_avg_pool(Tape<S>& t, Var x) {
    Tensor<S> y = global_avg_pool_fwd(t.val(x));
    Var self{int(t.num_nodes())};
    return t.push(std::move(y), [x, self](Tape<S>& tp) {
        const Tensor<S>& xv = tp.val(x);
        const Tensor<S>& dy = tp.grad(self);
        Tensor<S>& dx = tp.grad(x);
        const int hw = xv.h * xv.w;
        for (int ni = 0; ni < xv.n; ++ni)
            for (int ci = 0; ci < xv.c; ++ci) {
                const S g = dy.at(ni, ci, 0, 0) / S(hw);
                S* p = dx.plane(ni, ci);
                for (int i = 0; i < hw; ++i) p[i] += g;
            }
    });
}

template <class S>
Var op_pixel_shuffle(Tape<S>& t, Var x, int s) {
    Tensor<S> y = pixel_shuffle_fwd(t.val(x), s);
    Var self{int(t.num_nodes())};
    return t.push(std::move(y), [x, s, self](Tape<S>& tp) {
        // adjoint of a bijective rearrangement is the inverse rearrangement
        Tensor<S> g = pixel_unshuffle_fwd(tp.grad(self), s);
        Tensor<S>& dx = tp.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) dx.data[i] += g.data[i];
    });
}

// Scalar-shaped sum of all elements.
template <class S>
Var op_sum_all(Tape<S>& t, Var x) {
    Tensor<S> y(1, 1, 1, 1);
    y.data[0] = t.val(x).sum();
    Var self{int(t.num_nodes())};
    return t.push(std::move(y), [x, self](Tape<S>& tp) {
        const S g = tp.grad(self).data[0];
        Tensor<S>& dx = tp.grad(x);
        for (auto& v : dx.data) v += g;
    });
}

// Elementwise product with a constant tensor (no gradient to the constant).
template <class S>
Var op_mul_const(Tape<S>& t, Var x, Tensor<S> r) {
    const Tensor<S>& xv = t.val(x);
    if (!xv.same_shape(r)) throw ShapeError("mul_const shape mismatch");
    Tensor<S> y = xv;
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] *= r.data[i];
    Var self{int(t.num_nodes())};
    return t.push(std::move(y), [x, r = std::move(r), self](Tape<S>& tp) {
        const Tensor<S>& dy = tp.grad(self);
        Tensor<S>& dx = tp.grad(x);
        for (std::size_t i = 0; i < dy.size(); ++i) dx.data[i] += dy.data[i] * r.data[i];
    });
}

// Sum over a spatial window of all channels; the ERF probe readout.
template <class S>
Var op_window_sum(Tape<S>& t, Var x, int h0, int w0, int hh, int ww) {
    const Tensor<S>& xv = t.val(x);
    if (h0 < 0 || w0 < 0 || h0 + hh > xv.h || w0 + ww > xv.w)
        throw ShapeError("window_sum out of bounds");
    Tensor<S> y(1, 1, 1, 1);
    S s = 0;
    for (int ni = 0; ni < xv.n; ++ni)
        for (int ci = 0; ci < xv.c; ++ci)
            for (int hi = h0; hi < h0 + hh; ++hi)
                for (int wi = w0; wi < w0 + ww; ++wi) s += xv.at(ni, ci, hi, wi);
    y.data[0] = s;
    Var self{int(t.num_nodes())};
    return t.push(std::move(y), [x, h0, w0, hh, ww, self](Tape<S>& tp) {
        const S g = tp.grad(self).data[0];
        Tensor<S>& dx = tp.grad(x);
        for (int ni = 0; ni < dx.n; ++ni)
            for (int ci = 0; ci < dx.c; ++ci)
                for (int hi = h0; hi < h0 + hh; ++hi)
                    for (int wi = w0; wi < w0 + ww; ++wi) dx.at(ni, ci, hi, wi) += g;
    });
}

}  // namespace mat
