#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "stfl/tensor.hpp"

// The closed op set needed by the U-Net and the translation GAN: convolutions
// (stride 1 or 2, zero padding), transposed convolution, pointwise
// nonlinearities, instance normalization, elementwise arithmetic, channel
// concatenation, mean reduction and the three losses. Each op validates input
// shapes, checks its output for non-finite values, and records its backward pass
// on the tape of its inputs.

namespace stfl::nn {

namespace detail {

template <class T>
inline void check_finite(const char* op, const std::vector<T>& v) {
    for (const T x : v)
        if (!std::isfinite(static_cast<double>(x)))
            throw NumericFault(std::string(op) + ": non-finite value in output");
}

template <class T>
TapeT<T>* common_tape(std::initializer_list<const TensorT<T>*> ts) {
    TapeT<T>* tape = nullptr;
    for (const TensorT<T>* t : ts) {
        if (t->tape == nullptr) continue;
        if (tape == nullptr) tape = t->tape;
        else if (tape != t->tape)
            throw ProtocolError("op inputs recorded on different tapes");
    }
    return tape;
}

inline void conv_range(int kpos, int pad, int stride, int in_extent, int out_extent,
                       int& lo, int& hi) {
    // valid out positions o with 0 <= o*stride - pad + kpos < in_extent
    const int off = pad - kpos;
    lo = off <= 0 ? 0 : (off + stride - 1) / stride;
    const int num = in_extent - 1 + pad - kpos;
    hi = num < 0 ? -1 : std::min(out_extent - 1, num / stride);
}

inline std::string shape_str(const std::vector<int>& s) {
    std::string r = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + ")";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: x (N,Ci,H,W) * w (Co,Ci,K,K) + b (Co) -> (N,Co,Ho,Wo)
// Ho = floor((H + 2p - K)/s) + 1
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                  int stride, int pad) {
    if (x.shape.size() != 4 || w.shape.size() != 4 || b.shape.size() != 1)
        throw ShapeError("conv2d: expected x rank 4, w rank 4, b rank 1; got x" +
                         detail::shape_str(x.shape) + " w" + detail::shape_str(w.shape));
    if (stride != 1 && stride != 2) throw ShapeError("conv2d: stride must be 1 or 2");
    if (pad < 0) throw ShapeError("conv2d: pad must be >= 0");
    const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = w.dim(0), K = w.dim(2);
    if (w.dim(1) != Ci)
        throw ShapeError("conv2d: weight in-channels " + std::to_string(w.dim(1)) +
                         " != input channels " + std::to_string(Ci));
    if (w.dim(3) != K) throw ShapeError("conv2d: kernel must be square");
    if (b.dim(0) != Co) throw ShapeError("conv2d: bias size != out channels");
    const int Ho = (H + 2 * pad - K) / stride + 1;
    const int Wo = (W + 2 * pad - K) / stride + 1;
    if (Ho <= 0 || Wo <= 0)
        throw ShapeError("conv2d: empty output for input " + detail::shape_str(x.shape));

    TensorT<T> out = TensorT<T>::full({N, Co, Ho, Wo}, T(0));
    const T* xp = x.ptr();
    const T* wp = w.ptr();
    const T* bp = b.ptr();
    T* op = out.data->data();

    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co) {
            T* plane = op + (static_cast<std::size_t>(n) * Co + co) * Ho * Wo;
            const T bias = bp[co];
            for (int i = 0; i < Ho * Wo; ++i) plane[i] = bias;
        }

    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co)
            for (int ci = 0; ci < Ci; ++ci)
                for (int kh = 0; kh < K; ++kh) {
                    int oh_lo, oh_hi;
                    detail::conv_range(kh, pad, stride, H, Ho, oh_lo, oh_hi);
                    for (int kw = 0; kw < K; ++kw) {
                        int ow_lo, ow_hi;
                        detail::conv_range(kw, pad, stride, W, Wo, ow_lo, ow_hi);
                        const T wv = wp[((static_cast<std::size_t>(co) * Ci + ci) * K + kh) * K + kw];
                        if (wv == T(0)) continue;
                        for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                            const int ih = oh * stride - pad + kh;
                            const T* xrow =
                                xp + ((static_cast<std::size_t>(n) * Ci + ci) * H + ih) * W - pad + kw;
                            T* orow = op + ((static_cast<std::size_t>(n) * Co + co) * Ho + oh) * Wo;
                            if (stride == 1)
                                for (int ow = ow_lo; ow <= ow_hi; ++ow) orow[ow] += wv * xrow[ow];
                            else
                                for (int ow = ow_lo; ow <= ow_hi; ++ow) orow[ow] += wv * xrow[2 * ow];
                        }
                    }
                }

    detail::check_finite("conv2d", *out.data);
    TapeT<T>* tape = detail::common_tape<T>({&x, &w, &b});
    if (!tape) return out;
    out.tape = tape;
    auto xd = x.data, wd = w.data;
    const int xn = x.node, wn = w.node, bn = b.node;
    out.node = tape->add_node(out.numel(), [=](TapeT<T>& tp, int self) {
        const std::vector<T>& go = tp.grad_buffer(self);
        if (bn >= 0) {
            std::vector<T>& gb = tp.grad_buffer(bn);
            for (int n = 0; n < N; ++n)
                for (int co = 0; co < Co; ++co) {
                    const T* plane = go.data() + (static_cast<std::size_t>(n) * Co + co) * Ho * Wo;
                    T acc = T(0);
                    for (int i = 0; i < Ho * Wo; ++i) acc += plane[i];
                    gb[co] += acc;
                }
        }
        if (wn >= 0) {
            std::vector<T>& gw = tp.grad_buffer(wn);
            const T* xpb = xd->data();
            for (int n = 0; n < N; ++n)
                for (int co = 0; co < Co; ++co)
                    for (int ci = 0; ci < Ci; ++ci)
                        for (int kh = 0; kh < K; ++kh) {
                            int oh_lo, oh_hi;
                            detail::conv_range(kh, pad, stride, H, Ho, oh_lo, oh_hi);
                            for (int kw = 0; kw < K; ++kw) {
                                int ow_lo, ow_hi;
                                detail::conv_range(kw, pad, stride, W, Wo, ow_lo, ow_hi);
                                T acc = T(0);
                                for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                                    const int ih = oh * stride - pad + kh;
                                    const T* xrow =
                                        xpb + ((static_cast<std::size_t>(n) * Ci + ci) * H + ih) * W -
                                        pad + kw;
                                    const T* grow =
                                        go.data() + ((static_cast<std::size_t>(n) * Co + co) * Ho + oh) * Wo;
                                    if (stride == 1)
                                        for (int ow = ow_lo; ow <= ow_hi; ++ow) acc += xrow[ow] * grow[ow];
                                    else
                                        for (int ow = ow_lo; ow <= ow_hi; ++ow)
                                            acc += xrow[2 * ow] * grow[ow];
                                }
                                gw[((static_cast<std::size_t>(co) * Ci + ci) * K + kh) * K + kw] += acc;
                            }
                        }
        }
        if (xn >= 0) {
            std::vector<T>& gx = tp.grad_buffer(xn);
            const T* wpb = wd->data();
            for (int n = 0; n < N; ++n)
                for (int co = 0; co < Co; ++co)
                    for (int ci = 0; ci < Ci; ++ci)
                        for (int kh = 0; kh < K; ++kh) {
                            int oh_lo, oh_hi;
                            detail::conv_range(kh, pad, stride, H, Ho, oh_lo, oh_hi);
                            for (int kw = 0; kw < K; ++kw) {
                                int ow_lo, ow_hi;
                                detail::conv_range(kw, pad, stride, W, Wo, ow_lo, ow_hi);
                                const T wv =
                                    wpb[((static_cast<std::size_t>(co) * Ci + ci) * K + kh) * K + kw];
                                if (wv == T(0)) continue;
                                for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                                    const int ih = oh * stride - pad + kh;
                                    T* gxrow =
                                        gx.data() + ((static_cast<std::size_t>(n) * Ci + ci) * H + ih) * W -
                                        pad + kw;
                                    const T* grow =
                                        go.data() + ((static_cast<std::size_t>(n) * Co + co) * Ho + oh) * Wo;
                                    if (stride == 1)
                                        for (int ow = ow_lo; ow <= ow_hi; ++ow) gxrow[ow] += wv * grow[ow];
                                    else
                                        for (int ow = ow_lo; ow <= ow_hi; ++ow)
                                            gxrow[2 * ow] += wv * grow[ow];
                                }
                            }
                        }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// conv2d_transpose: adjoint of conv2d with the same (K, stride, pad).
// x (N,Ci,H,W) * w (Ci,Co,K,K) + b (Co) -> (N,Co,Ho,Wo), Ho = (H-1)s - 2p + K
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> conv2d_transpose(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                            int stride, int pad) {
    if (x.shape.size() != 4 || w.shape.size() != 4 || b.shape.size() != 1)
        throw ShapeError("conv2d_transpose: expected x rank 4, w rank 4, b rank 1");
    if (stride != 1 && stride != 2) throw ShapeError("conv2d_transpose: stride must be 1 or 2");
    if (pad < 0) throw ShapeError("conv2d_transpose: pad must be >= 0");
    const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = w.dim(1), K = w.dim(2);
    if (w.dim(0) != Ci)
        throw ShapeError("conv2d_transpose: weight in-channels " + std::to_string(w.dim(0)) +
                         " != input channels " + std::to_string(Ci));
    if (w.dim(3) != K) throw ShapeError("conv2d_transpose: kernel must be square");
    if (b.dim(0) != Co) throw ShapeError("conv2d_transpose: bias size != out channels");
    const int Ho = (H - 1) * stride - 2 * pad + K;
    const int Wo = (W - 1) * stride - 2 * pad + K;
    if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d_transpose: empty output");

    TensorT<T> out = TensorT<T>::full({N, Co, Ho, Wo}, T(0));
    const T* xp = x.ptr();
    const T* wp = w.ptr();
    const T* bp = b.ptr();
    T* op = out.data->data();

    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co) {
            T* plane = op + (static_cast<std::size_t>(n) * Co + co) * Ho * Wo;
            const T bias = bp[co];
            for (int i = 0; i < Ho * Wo; ++i) plane[i] = bias;
        }

    // scatter: out[h*s - p + kh][w*s - p + kw] += x[h][w] * wt
    for (int n = 0; n < N; ++n)
        for (int ci = 0; ci < Ci; ++ci)
            for (int co = 0; co < Co; ++co)
                for (int kh = 0; kh < K; ++kh) {
                    int h_lo, h_hi;
                    detail::conv_range(kh, pad, stride, Ho, H, h_lo, h_hi);
                    for (int kw = 0; kw < K; ++kw) {
                        int w_lo, w_hi;
                        detail::conv_range(kw, pad, stride, Wo, W, w_lo, w_hi);
                        const T wv = wp[((static_cast<std::size_t>(ci) * Co + co) * K + kh) * K + kw];
                        if (wv == T(0)) continue;
                        for (int h = h_lo; h <= h_hi; ++h) {
                            const int oh = h * stride - pad + kh;
                            const T* xrow = xp + ((static_cast<std::size_t>(n) * Ci + ci) * H + h) * W;
                            T* orow = op + ((static_cast<std::size_t>(n) * Co + co) * Ho + oh) * Wo -
                                      pad + kw;
                            if (stride == 1)
                                for (int v = w_lo; v <= w_hi; ++v) orow[v] += wv * xrow[v];
                            else
                                for (int v = w_lo; v <= w_hi; ++v) orow[2 * v] += wv * xrow[v];
                        }
                    }
                }

    detail::check_finite("conv2d_transpose", *out.data);
    TapeT<T>* tape = detail::common_tape<T>({&x, &w, &b});
    if (!tape) return out;
    out.tape = tape;
    auto xd = x.data, wd = w.data;
    const int xn = x.node, wn = w.node, bn = b.node;
    out.node = tape->add_node(out.numel(), [=](TapeT<T>& tp, int self) {
        const std::vector<T>& go = tp.grad_buffer(self);
        if (bn >= 0) {
            std::vector<T>& gb = tp.grad_buffer(bn);
            for (int n = 0; n < N; ++n)
                for (int co = 0; co < Co; ++co) {
                    const T* plane = go.data() + (static_cast<std::size_t>(n) * Co + co) * Ho * Wo;
                    T acc = T(0);
                    for (int i = 0; i < Ho * Wo; ++i) acc += plane[i];
                    gb[co] += acc;
                }
        }
        if (wn >= 0) {
            // gw[ci][co][kh][kw] = sum_n,h,w x[n ci h w] * go[n co h*s-p+kh w*s-p+kw]
            std::vector<T>& gw = tp.grad_buffer(wn);
            const T* xpb = xd->data();
            for (int n = 0; n < N; ++n)
                for (int ci = 0; ci < Ci; ++ci)
                    for (int co = 0; co < Co; ++co)
                        for (int kh = 0; kh < K; ++kh) {
                            int h_lo, h_hi;
                            detail::conv_range(kh, pad, stride, Ho, H, h_lo, h_hi);
                            for (int kw = 0; kw < K; ++kw) {
                                int w_lo, w_hi;
                                detail::conv_range(kw, pad, stride, Wo, W, w_lo, w_hi);
                                T acc = T(0);
                                for (int h = h_lo; h <= h_hi; ++h) {
                                    const int oh = h * stride - pad + kh;
                                    const T* xrow =
                                        xpb + ((static_cast<std::size_t>(n) * Ci + ci) * H + h) * W;
                                    const T* grow =
                                        go.data() + ((static_cast<std::size_t>(n) * Co + co) * Ho + oh) * Wo -
                                        pad + kw;
                                    if (stride == 1)
                                        for (int v = w_lo; v <= w_hi; ++v) acc += xrow[v] * grow[v];
                                    else
                                        for (int v = w_lo; v <= w_hi; ++v) acc += xrow[v] * grow[2 * v];
                                }
                                gw[((static_cast<std::size_t>(ci) * Co + co) * K + kh) * K + kw] += acc;
                            }
                        }
        }
        if (xn >= 0) {
            // gx[n ci h w] = sum_co,kh,kw wt * go[n co h*s-p+kh w*s-p+kw]  (a gather)
            std::vector<T>& gx = tp.grad_buffer(xn);
            const T* wpb = wd->data();
            for (int n = 0; n < N; ++n)
                for (int ci = 0; ci < Ci; ++ci)
                    for (int co = 0; co < Co; ++co)
                        for (int kh = 0; kh < K; ++kh) {
                            int h_lo, h_hi;
                            detail::conv_range(kh, pad, stride, Ho, H, h_lo, h_hi);
                            for (int kw = 0; kw < K; ++kw) {
                                int w_lo, w_hi;
                                detail::conv_range(kw, pad, stride, Wo, W, w_lo, w_hi);
                                const T wv =
                                    wpb[((static_cast<std::size_t>(ci) * Co + co) * K + kh) * K + kw];
                                if (wv == T(0)) continue;
                                for (int h = h_lo; h <= h_hi; ++h) {
                                    const int oh = h * stride - pad + kh;
                                    T* gxrow =
                                        gx.data() + ((static_cast<std::size_t>(n) * Ci + ci) * H + h) * W;
                                    const T* grow =
                                        go.data() + ((static_cast<std::size_t>(n) * Co + co) * Ho + oh) * Wo -
                                        pad + kw;
                                    if (stride == 1)
                                        for (int v = w_lo; v <= w_hi; ++v) gxrow[v] += wv * grow[v];
                                    else
                                        for (int v = w_lo; v <= w_hi; ++v) gxrow[v] += wv * grow[2 * v];
                                }
                            }
                        }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities
// ---------------------------------------------------------------------------

namespace detail {

template <class T, class Fwd, class Bwd>
TensorT<T> pointwise(const char* name, const TensorT<T>& x, Fwd fwd, Bwd bwd_factor) {
    TensorT<T> out = TensorT<T>::full(x.shape, T(0));
    const T* xp = x.ptr();
    T* op = out.data->data();
    const int n = x.numel();
    for (int i = 0; i < n; ++i) op[i] = fwd(xp[i]);
    check_finite(name, *out.data);
    if (!x.on_tape()) return out;
    out.tape = x.tape;
    auto xd = x.data, od = out.data;
    const int xn = x.node;
    out.node = x.tape->add_node(n, [=](TapeT<T>& tp, int self) {
        if (xn < 0) return;
        const std::vector<T>& go = tp.grad_buffer(self);
        std::vector<T>& gx = tp.grad_buffer(xn);
        const T* xpb = xd->data();
        const T* opb = od->data();
        for (int i = 0; i < n; ++i) gx[i] += go[i] * bwd_factor(xpb[i], opb[i]);
    });
    return out;
}

}  // namespace detail

template <class T>
TensorT<T> relu(const TensorT<T>& x) {
    return detail::pointwise(
        "relu", x, [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
TensorT<T> leaky_relu(const TensorT<T>& x, T slope = T(0.2)) {
    return detail::pointwise(
        "leaky_relu", x, [slope](T v) { return v > T(0) ? v : slope * v; },
        [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <class T>
TensorT<T> sigmoid(const TensorT<T>& x) {
    return detail::pointwise(
        "sigmoid", x,
        [](T v) {
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <class T>
TensorT<T> tanh_act(const TensorT<T>& x) {
    return detail::pointwise(
        "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

// ---------------------------------------------------------------------------
// instance_norm: per (n,c) plane, y = (x - mean) / sqrt(var + eps), no affine
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> instance_norm(const TensorT<T>& x, T eps = T(1e-5)) {
    if (x.shape.size() != 4) throw ShapeError("instance_norm: expected rank-4 input");
    const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    if (HW < 2) throw ShapeError("instance_norm: spatial extent too small");
    TensorT<T> out = TensorT<T>::full(x.shape, T(0));
    std::vector<T> inv_std(static_cast<std::size_t>(N) * C);
    const T* xp = x.ptr();
    T* op = out.data->data();
    for (int nc = 0; nc < N * C; ++nc) {
        const T* plane = xp + static_cast<std::size_t>(nc) * HW;
        T* oplane = op + static_cast<std::size_t>(nc) * HW;
        T mean = T(0);
        for (int i = 0; i < HW; ++i) mean += plane[i];
        mean /= T(HW);
        T var = T(0);
        for (int i = 0; i < HW; ++i) {
            const T d = plane[i] - mean;
            var += d * d;
        }
        var /= T(HW);
        const T inv = T(1) / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(nc)] = inv;
        for (int i = 0; i < HW; ++i) oplane[i] = (plane[i] - mean) * inv;
    }
    detail::check_finite("instance_norm", *out.data);
    if (!x.on_tape()) return out;
    out.tape = x.tape;
    auto od = out.data;
    const int xn = x.node;
    out.node = x.tape->add_node(x.numel(), [=, inv = std::move(inv_std)](TapeT<T>& tp, int self) {
        if (xn < 0) return;
        const std::vector<T>& go = tp.grad_buffer(self);
        std::vector<T>& gx = tp.grad_buffer(xn);
        const T* opb = od->data();
        for (int nc = 0; nc < N * C; ++nc) {
            const T* y = opb + static_cast<std::size_t>(nc) * HW;
            const T* g = go.data() + static_cast<std::size_t>(nc) * HW;
            T* gxp = gx.data() + static_cast<std::size_t>(nc) * HW;
            T gmean = T(0), gymean = T(0);
            for (int i = 0; i < HW; ++i) {
                gmean += g[i];
                gymean += g[i] * y[i];
            }
            gmean /= T(HW);
            gymean /= T(HW);
            const T is = inv[static_cast<std::size_t>(nc)];
            for (int i = 0; i < HW; ++i) gxp[i] += is * (g[i] - gmean - y[i] * gymean);
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void require_same_shape(const char* op, const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape != b.shape)
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
}

}  // namespace detail

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape("add", a, b);
    TensorT<T> out = TensorT<T>::full(a.shape, T(0));
    const int n = a.numel();
    const T* ap = a.ptr();
    const T* bp = b.ptr();
    T* op = out.data->data();
    for (int i = 0; i < n; ++i) op[i] = ap[i] + bp[i];
    detail::check_finite("add", *out.data);
    TapeT<T>* tape = detail::common_tape<T>({&a, &b});
    if (!tape) return out;
    out.tape = tape;
    const int an = a.node, bn = b.node;
    out.node = tape->add_node(n, [=](TapeT<T>& tp, int self) {
        const std::vector<T>& go = tp.grad_buffer(self);
        if (an >= 0) {
            std::vector<T>& ga = tp.grad_buffer(an);
            for (int i = 0; i < n; ++i) ga[i] += go[i];
        }
        if (bn >= 0) {
            std::vector<T>& gb = tp.grad_buffer(bn);
            for (int i = 0; i < n; ++i) gb[i] += go[i];
        }
    });
    return out;
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape("sub", a, b);
    TensorT<T> out = TensorT<T>::full(a.shape, T(0));
    const int n = a.numel();
    const T* ap = a.ptr();
    const T* bp = b.ptr();
    T* op = out.data->data();
    for (int i = 0; i < n; ++i) op[i] = ap[i] - bp[i];
    detail::check_finite("sub", *out.data);
    TapeT<T>* tape = detail::common_tape<T>({&a, &b});
    if (!tape) return out;
    out.tape = tape;
    const int an = a.node, bn = b.node;
    out.node = tape->add_node(n, [=](TapeT<T>& tp, int self) {
        const std::vector<T>& go = tp.grad_buffer(self);
        if (an >= 0) {
            std::vector<T>& ga = tp.grad_buffer(an);
            for (int i = 0; i < n; ++i) ga[i] += go[i];
        }
        if (bn >= 0) {
            std::vector<T>& gb = tp.grad_buffer(bn);
            for (int i = 0; i < n; ++i) gb[i] -= go[i];
        }
    });
    return out;
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape("mul", a, b);
    TensorT<T> out = TensorT<T>::full(a.shape, T(0));
    const int n = a.numel();
    const T* ap = a.ptr();
    const T* bp = b.ptr();
    T* op = out.data->data();
    for (int i = 0; i < n; ++i) op[i] = ap[i] * bp[i];
    detail::check_finite("mul", *out.data);
    TapeT<T>* tape = detail::common_tape<T>({&a, &b});
    if (!tape) return out;
    out.tape = tape;
    auto ad = a.data, bd = b.data;
    const int an = a.node, bn = b.node;
    out.node = tape->add_node(n, [=](TapeT<T>& tp, int self) {
        const std::vector<T>& go = tp.grad_buffer(self);
        if (an >= 0) {
            std::vector<T>& ga = tp.grad_buffer(an);
            const T* bpb = bd->data();
            for (int i = 0; i < n; ++i) ga[i] += go[i] * bpb[i];
        }
        if (bn >= 0) {
            std::vector<T>& gb = tp.grad_buffer(bn);
            const T* apb = ad->data();
            for (int i = 0; i < n; ++i) gb[i] += go[i] * apb[i];
        }
    });
    return out;
}

template <class T>
TensorT<T> mul_scalar(const TensorT<T>& a, T s) {
    return detail::pointwise(
        "mul_scalar", a, [s](T v) { return s * v; }, [s](T, T) { return s; });
}

// ---------------------------------------------------------------------------
// concat along channel dimension
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape.size() != 4 || b.shape.size() != 4)
        throw ShapeError("concat_channels: expected rank-4 inputs");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw ShapeError("concat_channels: shape mismatch " + detail::shape_str(a.shape) +
                         " vs " + detail::shape_str(b.shape));
    const int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), HW = a.dim(2) * a.dim(3);
    TensorT<T> out = TensorT<T>::full({N, Ca + Cb, a.dim(2), a.dim(3)}, T(0));
    const T* ap = a.ptr();
    const T* bp = b.ptr();
    T* op = out.data->data();
    for (int n = 0; n < N; ++n) {
        std::copy(ap + static_cast<std::size_t>(n) * Ca * HW,
                  ap + static_cast<std::size_t>(n + 1) * Ca * HW,
                  op + static_cast<std::size_t>(n) * (Ca + Cb) * HW);
        std::copy(bp + static_cast<std::size_t>(n) * Cb * HW,
                  bp + static_cast<std::size_t>(n + 1) * Cb * HW,
                  op + static_cast<std::size_t>(n) * (Ca + Cb) * HW + Ca * HW);
    }
    TapeT<T>* tape = detail::common_tape<T>({&a, &b});
    if (!tape) return out;
    out.tape = tape;
    const int an = a.node, bn = b.node;
    out.node = tape->add_node(out.numel(), [=](TapeT<T>& tp, int self) {
        const std::vector<T>& go = tp.grad_buffer(self);
        if (an >= 0) {
            std::vector<T>& ga = tp.grad_buffer(an);
            for (int n = 0; n < N; ++n) {
                const T* src = go.data() + static_cast<std::size_t>(n) * (Ca + Cb) * HW;
                T* dst = ga.data() + static_cast<std::size_t>(n) * Ca * HW;
                for (int i = 0; i < Ca * HW; ++i) dst[i] += src[i];
            }
        }
        if (bn >= 0) {
            std::vector<T>& gb = tp.grad_buffer(bn);
            for (int n = 0; n < N; ++n) {
                const T* src = go.data() + static_cast<std::size_t>(n) * (Ca + Cb) * HW + Ca * HW;
                T* dst = gb.data() + static_cast<std::size_t>(n) * Cb * HW;
                for (int i = 0; i < Cb * HW; ++i) dst[i] += src[i];
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Reductions and losses (all reduce to scalar means)
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> mean_all(const TensorT<T>& x) {
    const int n = x.numel();
    if (n == 0) throw ShapeError("mean_all: empty tensor");
    T acc = T(0);
    const T* xp = x.ptr();
    for (int i = 0; i < n; ++i) acc += xp[i];
    TensorT<T> out = TensorT<T>::constant({1}, {acc / T(n)});
    detail::check_finite("mean_all", *out.data);
    if (!x.on_tape()) return out;
    out.tape = x.tape;
    const int xn = x.node;
    out.node = x.tape->add_node(1, [=](TapeT<T>& tp, int self) {
        if (xn < 0) return;
        const T g = tp.grad_buffer(self)[0] / T(n);
        std::vector<T>& gx = tp.grad_buffer(xn);
        for (int i = 0; i < n; ++i) gx[i] += g;
    });
    return out;
}

// Numerically stable binary cross entropy on logits, mean over all elements.
template <class T>
TensorT<T> bce_with_logits_loss(const TensorT<T>& logits, const TensorT<T>& targets) {
    detail::require_same_shape("bce_with_logits_loss", logits, targets);
    const int n = logits.numel();
    const T* zp = logits.ptr();
    const T* tp_ = targets.ptr();
    T acc = T(0);
    for (int i = 0; i < n; ++i) {
        const T z = zp[i];
        acc += std::max(z, T(0)) - z * tp_[i] + std::log1p(std::exp(-std::abs(z)));
    }
    TensorT<T> out = TensorT<T>::constant({1}, {acc / T(n)});
    detail::check_finite("bce_with_logits_loss", *out.data);
    TapeT<T>* tape = detail::common_tape<T>({&logits, &targets});
    if (!tape) return out;
    out.tape = tape;
    auto zd = logits.data, td = targets.data;
    const int zn = logits.node, tn = targets.node;
    out.node = tape->add_node(1, [=](TapeT<T>& tp, int self) {
        const T g = tp.grad_buffer(self)[0] / T(n);
        const T* zpb = zd->data();
        const T* tpb = td->data();
        if (zn >= 0) {
            std::vector<T>& gz = tp.grad_buffer(zn);
            for (int i = 0; i < n; ++i) {
                const T z = zpb[i];
                const T sig = z >= T(0) ? T(1) / (T(1) + std::exp(-z))
                                        : std::exp(z) / (T(1) + std::exp(z));
                gz[i] += g * (sig - tpb[i]);
            }
        }
        if (tn >= 0) {
            std::vector<T>& gt = tp.grad_buffer(tn);
            for (int i = 0; i < n; ++i) gt[i] += g * (-zpb[i]);
        }
    });
    return out;
}

template <class T>
TensorT<T> mse_loss(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape("mse_loss", a, b);
    const int n = a.numel();
    const T* ap = a.ptr();
    const T* bp = b.ptr();
    T acc = T(0);
    for (int i = 0; i < n; ++i) {
        const T d = ap[i] - bp[i];
        acc += d * d;
    }
    TensorT<T> out = TensorT<T>::constant({1}, {acc / T(n)});
    detail::check_finite("mse_loss", *out.data);
    TapeT<T>* tape = detail::common_tape<T>({&a, &b});
    if (!tape) return out;
    out.tape = tape;
    auto ad = a.data, bd = b.data;
    const int an = a.node, bn = b.node;
    out.node = tape->add_node(1, [=](TapeT<T>& tp, int self) {
        const T g = tp.grad_buffer(self)[0] * T(2) / T(n);
        const T* apb = ad->data();
        const T* bpb = bd->data();
        if (an >= 0) {
            std::vector<T>& ga = tp.grad_buffer(an);
            for (int i = 0; i < n; ++i) ga[i] += g * (apb[i] - bpb[i]);
        }
        if (bn >= 0) {
            std::vector<T>& gb = tp.grad_buffer(bn);
            for (int i = 0; i < n; ++i) gb[i] -= g * (apb[i] - bpb[i]);
        }
    });
    return out;
}

template <class T>
TensorT<T> l1_loss(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape("l1_loss", a, b);
    const int n = a.numel();
    const T* ap = a.ptr();
    const T* bp = b.ptr();
    T acc = T(0);
    for (int i = 0; i < n; ++i) acc += std::abs(ap[i] - bp[i]);
    TensorT<T> out = TensorT<T>::constant({1}, {acc / T(n)});
    detail::check_finite("l1_loss", *out.data);
    TapeT<T>* tape = detail::common_tape<T>({&a, &b});
    if (!tape) return out;
    out.tape = tape;
    auto ad = a.data, bd = b.data;
    const int an = a.node, bn = b.node;
    out.node = tape->add_node(1, [=](TapeT<T>& tp, int self) {
        const T g = tp.grad_buffer(self)[0] / T(n);
        const T* apb = ad->data();
        const T* bpb = bd->data();
        if (an >= 0) {
            std::vector<T>& ga = tp.grad_buffer(an);
            for (int i = 0; i < n; ++i) {
                const T d = apb[i] - bpb[i];
                ga[i] += g * (d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)));
            }
        }
        if (bn >= 0) {
            std::vector<T>& gb = tp.grad_buffer(bn);
            for (int i = 0; i < n; ++i) {
                const T d = apb[i] - bpb[i];
                gb[i] -= g * (d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)));
            }
        }
    });
    return out;
}

}  // namespace stfl::nn
