#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "gca/gemm.hpp"
#include "gca/tensor.hpp"

// Differentiable operations. Every op validates shapes, computes the forward
// result with a fixed accumulation order, and records a backward closure that
// accumulates (+=) into its parents' gradients.

namespace gca {

namespace detail {

template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad,
            int OH, int OW, T* col) {
    // col is (C*kh*kw, OH*OW); k index = (c*kh + ky)*kw + kx
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                T* dst = col + (i64(c) * kh * kw + ky * kw + kx) * OH * OW;
                for (int oy = 0; oy < OH; ++oy) {
                    int y = oy * stride + ky - pad;
                    if (y < 0 || y >= H) {
                        for (int ox = 0; ox < OW; ++ox) dst[i64(oy) * OW + ox] = T(0);
                        continue;
                    }
                    const T* src = x + (i64(c) * H + y) * W;
                    for (int ox = 0; ox < OW; ++ox) {
                        int xw = ox * stride + kx - pad;
                        dst[i64(oy) * OW + ox] = (xw >= 0 && xw < W) ? src[xw] : T(0);
                    }
                }
            }
}

template <typename T>
void col2im_add(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                int OH, int OW, T* x) {
    // Scatter-add; channels are independent so this parallelizes cleanly.
    parallel_for(C, 1, [&](i64 c) {
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                const T* src = col + (c * kh * kw + i64(ky) * kw + kx) * OH * OW;
                for (int oy = 0; oy < OH; ++oy) {
                    int y = oy * stride + ky - pad;
                    if (y < 0 || y >= H) continue;
                    T* dst = x + (c * H + y) * W;
                    for (int ox = 0; ox < OW; ++ox) {
                        int xw = ox * stride + kx - pad;
                        if (xw >= 0 && xw < W) dst[xw] += src[i64(oy) * OW + ox];
                    }
                }
            }
    });
}

}  // namespace detail

// --- convolution --------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride, int pad) {
    check(x.rank() == 4 && w.rank() == 4 && b.rank() == 1, "conv2d: bad ranks");
    const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    check(w.dim(1) == Cin, "conv2d: input channels do not match kernel");
    check(b.dim(0) == Cout, "conv2d: bias extent must equal output channels");
    check((kh == 1 || kh == 3) && (kw == 1 || kw == 3), "conv2d: kernel must be 1 or 3");
    check(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
    check(pad >= 0 && H + 2 * pad >= kh && W + 2 * pad >= kw, "conv2d: input too small");
    const int OH = (H + 2 * pad - kh) / stride + 1;
    const int OW = (W + 2 * pad - kw) / stride + 1;
    check(OH > 0 && OW > 0, "conv2d: non-positive output extent");

    const i64 K = i64(Cin) * kh * kw, OHW = i64(OH) * OW;
    auto out = Tensor<T>::raw({N, Cout, OH, OW});
    std::vector<T> col(static_cast<size_t>(K * OHW));
    for (int n = 0; n < N; ++n) {
        detail::im2col(x.ptr() + i64(n) * Cin * H * W, Cin, H, W, kh, kw, stride, pad,
                       OH, OW, col.data());
        T* y = out.ptr() + i64(n) * Cout * OHW;
        std::fill(y, y + Cout * OHW, T(0));
        gemm_acc(w.ptr(), col.data(), y, Cout, K, OHW);
        for (int oc = 0; oc < Cout; ++oc) {
            T bias = b.ptr()[oc];
            T* row = y + i64(oc) * OHW;
            for (i64 p = 0; p < OHW; ++p) row[p] += bias;
        }
    }
    count_macs(i64(N) * Cout * OHW * K);

    detail::record<T>(out, {x.node(), w.node(), b.node()}, [=](Node<T>& o) {
        auto& xn = *o.parents[0];
        auto& wn = *o.parents[1];
        auto& bn = *o.parents[2];
        const T* dy_all = o.grad.data();
        std::vector<T> col(static_cast<size_t>(K * OHW));
        std::vector<T> wT;
        if (xn.requires_grad) wT = transposed(wn.data.data(), Cout, K);
        std::vector<T> dcol(xn.requires_grad ? static_cast<size_t>(K * OHW) : 0);
        std::vector<T> dwT(wn.requires_grad ? static_cast<size_t>(K * Cout) : 0, T(0));
        std::vector<T> dyT(wn.requires_grad ? static_cast<size_t>(Cout * OHW) : 0);
        if (xn.requires_grad) xn.ensure_grad();
        if (wn.requires_grad) wn.ensure_grad();
        if (bn.requires_grad) bn.ensure_grad();
        for (int n = 0; n < N; ++n) {
            const T* dy = dy_all + i64(n) * Cout * OHW;
            if (bn.requires_grad) {
                for (int oc = 0; oc < Cout; ++oc) {
                    T s = 0;
                    for (i64 p = 0; p < OHW; ++p) s += dy[i64(oc) * OHW + p];
                    bn.grad[oc] += s;
                }
            }
            if (wn.requires_grad) {
                detail::im2col(xn.data.data() + i64(n) * Cin * H * W, Cin, H, W, kh, kw,
                               stride, pad, OH, OW, col.data());
                transpose(dy, dyT.data(), Cout, OHW);
                gemm_acc(col.data(), dyT.data(), dwT.data(), K, OHW, Cout);
            }
            if (xn.requires_grad) {
                std::fill(dcol.begin(), dcol.end(), T(0));
                gemm_acc(wT.data(), dy, dcol.data(), K, Cout, OHW);
                detail::col2im_add(dcol.data(), Cin, H, W, kh, kw, stride, pad, OH, OW,
                                   xn.grad.data() + i64(n) * Cin * H * W);
            }
        }
        if (wn.requires_grad) {
            for (int oc = 0; oc < Cout; ++oc)
                for (i64 k = 0; k < K; ++k) wn.grad[i64(oc) * K + k] += dwT[k * Cout + oc];
        }
    });
    return out;
}

// --- fully connected -----------------------------------------------------------

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    check(x.rank() == 2 && w.rank() == 2 && b.rank() == 1, "linear: bad ranks");
    const i64 N = x.dim(0), Din = x.dim(1), Dout = w.dim(0);
    check(w.dim(1) == Din, "linear: input width does not match weights");
    check(b.dim(0) == Dout, "linear: bias extent mismatch");

    auto out = Tensor<T>::raw({int(N), int(Dout)});
    {
        auto xT = transposed(x.ptr(), N, Din);
        std::vector<T> yT(static_cast<size_t>(Dout * N), T(0));
        gemm_acc(w.ptr(), xT.data(), yT.data(), Dout, Din, N);
        transpose(yT.data(), out.ptr(), Dout, N);
        for (i64 n = 0; n < N; ++n)
            for (i64 o = 0; o < Dout; ++o) out.ptr()[n * Dout + o] += b.ptr()[o];
    }
    count_macs(N * Din * Dout);

    detail::record<T>(out, {x.node(), w.node(), b.node()}, [=](Node<T>& o) {
        auto& xn = *o.parents[0];
        auto& wn = *o.parents[1];
        auto& bn = *o.parents[2];
        const T* dy = o.grad.data();
        if (bn.requires_grad) {
            bn.ensure_grad();
            for (i64 n = 0; n < N; ++n)
                for (i64 d = 0; d < Dout; ++d) bn.grad[d] += dy[n * Dout + d];
        }
        if (wn.requires_grad) {
            wn.ensure_grad();
            auto dyT = transposed(dy, N, Dout);
            gemm_acc(dyT.data(), xn.data.data(), wn.grad.data(), Dout, N, Din);
        }
        if (xn.requires_grad) {
            xn.ensure_grad();
            gemm_acc(dy, wn.data.data(), xn.grad.data(), N, Dout, Din);
        }
    });
    return out;
}

// --- activations ----------------------------------------------------------------

enum class Act { relu, sigmoid };

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    auto out = Tensor<T>::raw(x.shape());
    const T* xd = x.ptr();
    T* yd = out.ptr();
    const i64 n = x.numel();
    for (i64 i = 0; i < n; ++i) yd[i] = xd[i] > T(0) ? xd[i] : T(0);
    detail::record<T>(out, {x.node()}, [n](Node<T>& o) {
        auto& xn = *o.parents[0];
        xn.ensure_grad();
        for (i64 i = 0; i < n; ++i)
            if (xn.data[i] > T(0)) xn.grad[i] += o.grad[i];
    });
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    auto out = Tensor<T>::raw(x.shape());
    const T* xd = x.ptr();
    T* yd = out.ptr();
    const i64 n = x.numel();
    const T hi = T(1) - std::numeric_limits<T>::epsilon();
    const T lo = std::numeric_limits<T>::min();
    for (i64 i = 0; i < n; ++i) {
        T v = xd[i];
        T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                        : std::exp(v) / (T(1) + std::exp(v));
        yd[i] = std::min(hi, std::max(lo, s));  // keep the open interval (0,1)
    }
    detail::record<T>(out, {x.node()}, [n](Node<T>& o) {
        auto& xn = *o.parents[0];
        xn.ensure_grad();
        for (i64 i = 0; i < n; ++i) {
            T s = o.data[i];
            xn.grad[i] += o.grad[i] * s * (T(1) - s);
        }
    });
    return out;
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Act kind) {
    return kind == Act::relu ? relu(x) : sigmoid(x);
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
    auto out = Tensor<T>::raw(x.shape());
    const i64 n = x.numel();
    for (i64 i = 0; i < n; ++i) {
        T v = x.ptr()[i];
        out.ptr()[i] = v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    }
    detail::record<T>(out, {x.node()}, [n](Node<T>& o) {
        auto& xn = *o.parents[0];
        xn.ensure_grad();
        for (i64 i = 0; i < n; ++i) {
            T v = xn.data[i];
            T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                            : std::exp(v) / (T(1) + std::exp(v));
            xn.grad[i] += o.grad[i] * s;
        }
    });
    return out;
}

// --- pooling / resampling --------------------------------------------------------

template <typename T>
Tensor<T> adaptive_avg_pool(const Tensor<T>& x, int oh, int ow) {
    check(x.rank() == 4, "adaptive_avg_pool: rank-4 input required");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    check(oh > 0 && ow > 0, "adaptive_avg_pool: output extents must be positive");
    check(oh <= H && ow <= W, "adaptive_avg_pool: output larger than input");

    auto bin = [](int i, int in, int out) {
        int lo = (i * in) / out;
        int hi = ((i + 1) * in + out - 1) / out;  // ceil
        return std::pair<int, int>(lo, hi);
    };
    auto out = Tensor<T>::raw({N, C, oh, ow});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* src = x.ptr() + (i64(n) * C + c) * H * W;
            T* dst = out.ptr() + (i64(n) * C + c) * oh * ow;
            for (int i = 0; i < oh; ++i) {
                auto [y0, y1] = bin(i, H, oh);
                for (int j = 0; j < ow; ++j) {
                    auto [x0, x1] = bin(j, W, ow);
                    T s = 0;
                    for (int y = y0; y < y1; ++y)
                        for (int xx = x0; xx < x1; ++xx) s += src[i64(y) * W + xx];
                    dst[i64(i) * ow + j] = s / T((y1 - y0) * (x1 - x0));
                }
            }
        }
    detail::record<T>(out, {x.node()}, [=](Node<T>& o) {
        auto& xn = *o.parents[0];
        xn.ensure_grad();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                T* dx = xn.grad.data() + (i64(n) * C + c) * H * W;
                const T* dy = o.grad.data() + (i64(n) * C + c) * oh * ow;
                for (int i = 0; i < oh; ++i) {
                    auto [y0, y1] = bin(i, H, oh);
                    for (int j = 0; j < ow; ++j) {
                        auto [x0, x1] = bin(j, W, ow);
                        T g = dy[i64(i) * ow + j] / T((y1 - y0) * (x1 - x0));
                        for (int y = y0; y < y1; ++y)
                            for (int xx = x0; xx < x1; ++xx) dx[i64(y) * W + xx] += g;
                    }
                }
            }
    });
    return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    check(x.rank() == 4, "global_avg_pool: rank-4 input required");
    const int N = x.dim(0), C = x.dim(1);
    const i64 HW = i64(x.dim(2)) * x.dim(3);
    auto out = Tensor<T>::raw({N, C});
    for (i64 nc = 0; nc < i64(N) * C; ++nc) {
        const T* src = x.ptr() + nc * HW;
        T s = 0;
        for (i64 p = 0; p < HW; ++p) s += src[p];
        out.ptr()[nc] = s / T(HW);
    }
    detail::record<T>(out, {x.node()}, [=](Node<T>& o) {
        auto& xn = *o.parents[0];
        xn.ensure_grad();
        for (i64 nc = 0; nc < i64(N) * C; ++nc) {
            T g = o.grad[nc] / T(HW);
            T* dx = xn.grad.data() + nc * HW;
            for (i64 p = 0; p < HW; ++p) dx[p] += g;
        }
    });
    return out;
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
    check(x.rank() == 4, "upsample_nearest2x: rank-4 input required");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    auto out = Tensor<T>::raw({N, C, 2 * H, 2 * W});
    for (i64 nc = 0; nc < i64(N) * C; ++nc) {
        const T* src = x.ptr() + nc * H * W;
        T* dst = out.ptr() + nc * 4 * H * W;
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
                T v = src[i64(y) * W + xx];
                i64 base = i64(2 * y) * 2 * W + 2 * xx;
                dst[base] = v;
                dst[base + 1] = v;
                dst[base + 2 * W] = v;
                dst[base + 2 * W + 1] = v;
            }
    }
    detail::record<T>(out, {x.node()}, [=](Node<T>& o) {
        auto& xn = *o.parents[0];
        xn.ensure_grad();
        for (i64 nc = 0; nc < i64(N) * C; ++nc) {
            T* dx = xn.grad.data() + nc * H * W;
            const T* dy = o.grad.data() + nc * 4 * H * W;
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    i64 base = i64(2 * y) * 2 * W + 2 * xx;
                    dx[i64(y) * W + xx] +=
                        dy[base] + dy[base + 1] + dy[base + 2 * W] + dy[base + 2 * W + 1];
                }
        }
    });
    return out;
}

// --- shape ops -------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
    check(!xs.empty(), "concat_channels: empty list");
    const int rank = xs[0].rank();
    check(rank == 2 || rank == 4, "concat_channels: rank-2 or rank-4 inputs");
    const int N = xs[0].dim(0);
    const i64 HW = rank == 4 ? i64(xs[0].dim(2)) * xs[0].dim(3) : 1;
    int Ctot = 0;
    for (const auto& t : xs) {
        check(t.rank() == rank && t.dim(0) == N, "concat_channels: batch mismatch");
        if (rank == 4)
            check(t.dim(2) == xs[0].dim(2) && t.dim(3) == xs[0].dim(3),
                  "concat_channels: spatial mismatch");
        Ctot += t.dim(1);
    }
    std::vector<int> oshape = rank == 4
                                  ? std::vector<int>{N, Ctot, xs[0].dim(2), xs[0].dim(3)}
                                  : std::vector<int>{N, Ctot};
    auto out = Tensor<T>::raw(oshape);
    for (int n = 0; n < N; ++n) {
        i64 coff = 0;
        for (const auto& t : xs) {
            const i64 block = i64(t.dim(1)) * HW;
            std::copy_n(t.ptr() + i64(n) * block, block,
                        out.ptr() + (i64(n) * Ctot + coff) * HW);
            coff += t.dim(1);
        }
    }
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::vector<int> widths;
    for (const auto& t : xs) {
        parents.push_back(t.node());
        widths.push_back(t.dim(1));
    }
    detail::record<T>(out, parents, [=](Node<T>& o) {
        for (int n = 0; n < N; ++n) {
            i64 coff = 0;
            for (size_t p = 0; p < o.parents.size(); ++p) {
                auto& pn = *o.parents[p];
                const i64 block = i64(widths[p]) * HW;
                if (pn.requires_grad) {
                    pn.ensure_grad();
                    const T* src = o.grad.data() + (i64(n) * Ctot + coff) * HW;
                    T* dst = pn.grad.data() + i64(n) * block;
                    for (i64 i = 0; i < block; ++i) dst[i] += src[i];
                }
                coff += widths[p];
            }
        }
    });
    return out;
}

// concatenation of rank-1 tensors along their only axis.
template <typename T>
Tensor<T> concat_flat(const std::vector<Tensor<T>>& xs) {
    check(!xs.empty(), "concat_flat: empty list");
    i64 total = 0;
    for (const auto& t : xs) {
        check(t.rank() == 1, "concat_flat: rank-1 inputs required");
        total += t.numel();
    }
    auto out = Tensor<T>::raw({int(total)});
    i64 off = 0;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::vector<i64> sizes;
    for (const auto& t : xs) {
        std::copy(t.data().begin(), t.data().end(), out.data().begin() + off);
        off += t.numel();
        parents.push_back(t.node());
        sizes.push_back(t.numel());
    }
    detail::record<T>(out, parents, [sizes](Node<T>& o) {
        i64 off = 0;
        for (size_t p = 0; p < o.parents.size(); ++p) {
            auto& pn = *o.parents[p];
            if (pn.requires_grad) {
                pn.ensure_grad();
                for (i64 i = 0; i < sizes[p]; ++i) pn.grad[i] += o.grad[off + i];
            }
            off += sizes[p];
        }
    });
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<int> shape) {
    check(numel_of(shape) == x.numel(), "reshape: element count must be preserved");
    auto out = Tensor<T>::raw(std::move(shape));
    std::copy(x.data().begin(), x.data().end(), out.data().begin());
    detail::record<T>(out, {x.node()}, [](Node<T>& o) {
        auto& xn = *o.parents[0];
        xn.ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) xn.grad[i] += o.grad[i];
    });
    return out;
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
    check(x.rank() == 4, "flatten: rank-4 input required");
    return reshape(x, {x.dim(0), int(x.numel() / x.dim(0))});
}

// --- elementwise -------------------------------------------------------------------

enum class Ew { add, mul };

template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, Ew kind) {
    check(same_shape(a, b), "elementwise: shape mismatch");
    auto out = Tensor<T>::raw(a.shape());
    const i64 n = a.numel();
    if (kind == Ew::add)
        for (i64 i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] + b.ptr()[i];
    else
        for (i64 i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] * b.ptr()[i];
    detail::record<T>(out, {a.node(), b.node()}, [n, kind](Node<T>& o) {
        auto& an = *o.parents[0];
        auto& bn = *o.parents[1];
        if (an.requires_grad) {
            an.ensure_grad();
            if (kind == Ew::add)
                for (i64 i = 0; i < n; ++i) an.grad[i] += o.grad[i];
            else
                for (i64 i = 0; i < n; ++i) an.grad[i] += o.grad[i] * bn.data[i];
        }
        if (bn.requires_grad) {
            bn.ensure_grad();
            if (kind == Ew::add)
                for (i64 i = 0; i < n; ++i) bn.grad[i] += o.grad[i];
            else
                for (i64 i = 0; i < n; ++i) bn.grad[i] += o.grad[i] * an.data[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return elementwise(a, b, Ew::add);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return elementwise(a, b, Ew::mul);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
    auto out = Tensor<T>::raw(x.shape());
    const i64 n = x.numel();
    for (i64 i = 0; i < n; ++i) out.ptr()[i] = x.ptr()[i] * c;
    detail::record<T>(out, {x.node()}, [n, c](Node<T>& o) {
        auto& xn = *o.parents[0];
        xn.ensure_grad();
        for (i64 i = 0; i < n; ++i) xn.grad[i] += o.grad[i] * c;
    });
    return out;
}

// x is (N,C,H,W) or (N,C); s is (N,C). Every spatial element of channel c in
// sample n is multiplied by s[n,c].
template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& s) {
    check(x.rank() == 2 || x.rank() == 4, "channel_scale: rank-2 or rank-4 input");
    check(s.rank() == 2, "channel_scale: scales must be rank-2");
    const int N = x.dim(0), C = x.dim(1);
    check(s.dim(0) == N && s.dim(1) == C, "channel_scale: channel mismatch");
    const i64 HW = x.rank() == 4 ? i64(x.dim(2)) * x.dim(3) : 1;
    auto out = Tensor<T>::raw(x.shape());
    for (i64 nc = 0; nc < i64(N) * C; ++nc) {
        const T sv = s.ptr()[nc];
        const T* src = x.ptr() + nc * HW;
        T* dst = out.ptr() + nc * HW;
        for (i64 p = 0; p < HW; ++p) dst[p] = src[p] * sv;
    }
    detail::record<T>(out, {x.node(), s.node()}, [=](Node<T>& o) {
        auto& xn = *o.parents[0];
        auto& sn = *o.parents[1];
        if (xn.requires_grad) {
            xn.ensure_grad();
            for (i64 nc = 0; nc < i64(N) * C; ++nc) {
                const T sv = sn.data[nc];
                const T* dy = o.grad.data() + nc * HW;
                T* dx = xn.grad.data() + nc * HW;
                for (i64 p = 0; p < HW; ++p) dx[p] += dy[p] * sv;
            }
        }
        if (sn.requires_grad) {
            sn.ensure_grad();
            for (i64 nc = 0; nc < i64(N) * C; ++nc) {
                const T* dy = o.grad.data() + nc * HW;
                const T* xd = xn.data.data() + nc * HW;
                T g = 0;
                for (i64 p = 0; p < HW; ++p) g += dy[p] * xd[p];
                sn.grad[nc] += g;
            }
        }
    });
    return out;
}

// --- gathers ------------------------------------------------------------------------

// rows of x (N,C) selected by idx -> (R,C); backward scatter-adds.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<int>& idx) {
    check(x.rank() == 2, "gather_rows: rank-2 input required");
    const int C = x.dim(1), N = x.dim(0);
    check(!idx.empty(), "gather_rows: empty index list");
    for (int r : idx) check(r >= 0 && r < N, "gather_rows: index out of range");
    auto out = Tensor<T>::raw({int(idx.size()), C});
    for (size_t r = 0; r < idx.size(); ++r)
        std::copy_n(x.ptr() + i64(idx[r]) * C, C, out.ptr() + i64(r) * C);
    detail::record<T>(out, {x.node()}, [idx, C](Node<T>& o) {
        auto& xn = *o.parents[0];
        xn.ensure_grad();
        for (size_t r = 0; r < idx.size(); ++r) {
            const T* src = o.grad.data() + i64(r) * C;
            T* dst = xn.grad.data() + i64(idx[r]) * C;
            for (int c = 0; c < C; ++c) dst[c] += src[c];
        }
    });
    return out;
}

// flat-index gather over the whole storage -> rank-1 tensor.
template <typename T>
Tensor<T> gather_flat(const Tensor<T>& x, const std::vector<i64>& idx) {
    check(!idx.empty(), "gather_flat: empty index list");
    const i64 n = x.numel();
    for (i64 i : idx) check(i >= 0 && i < n, "gather_flat: index out of range");
    auto out = Tensor<T>::raw({int(idx.size())});
    for (size_t k = 0; k < idx.size(); ++k) out.ptr()[k] = x.ptr()[idx[k]];
    detail::record<T>(out, {x.node()}, [idx](Node<T>& o) {
        auto& xn = *o.parents[0];
        xn.ensure_grad();
        for (size_t k = 0; k < idx.size(); ++k) xn.grad[idx[k]] += o.grad[k];
    });
    return out;
}

// --- reductions and losses ------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T s = 0;
    for (T v : x.data()) s += v;
    auto out = Tensor<T>::from_data({1}, {s});
    detail::record<T>(out, {x.node()}, [](Node<T>& o) {
        auto& xn = *o.parents[0];
        xn.ensure_grad();
        for (auto& g : xn.grad) g += o.grad[0];
    });
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / T(x.numel()));
}

// sum of smooth-L1 of (pred - target): 0.5 d^2 for |d|<1, |d|-0.5 otherwise.
template <typename T>
Tensor<T> smooth_l1_sum(const Tensor<T>& pred, const std::vector<T>& target) {
    check(static_cast<i64>(target.size()) == pred.numel(), "smooth_l1: length mismatch");
    T s = 0;
    const i64 n = pred.numel();
    for (i64 i = 0; i < n; ++i) {
        T d = pred.ptr()[i] - target[i];
        T a = std::abs(d);
        s += a < T(1) ? T(0.5) * d * d : a - T(0.5);
    }
    auto out = Tensor<T>::from_data({1}, {s});
    detail::record<T>(out, {pred.node()}, [target, n](Node<T>& o) {
        auto& pn = *o.parents[0];
        pn.ensure_grad();
        for (i64 i = 0; i < n; ++i) {
            T d = pn.data[i] - target[i];
            T g = std::abs(d) < T(1) ? d : (d > T(0) ? T(1) : T(-1));
            pn.grad[i] += o.grad[0] * g;
        }
    });
    return out;
}

// mean binary cross-entropy with logits against constant targets in [0,1].
template <typename T>
Tensor<T> bce_with_logits_mean(const Tensor<T>& logits, const std::vector<T>& targets) {
    check(static_cast<i64>(targets.size()) == logits.numel(), "bce: length mismatch");
    const i64 n = logits.numel();
    T s = 0;
    for (i64 i = 0; i < n; ++i) {
        T l = logits.ptr()[i];
        T sp = l > T(0) ? l + std::log1p(std::exp(-l)) : std::log1p(std::exp(l));
        s += sp - l * targets[i];
    }
    auto out = Tensor<T>::from_data({1}, {s / T(n)});
    detail::record<T>(out, {logits.node()}, [targets, n](Node<T>& o) {
        auto& ln = *o.parents[0];
        ln.ensure_grad();
        for (i64 i = 0; i < n; ++i) {
            T l = ln.data[i];
            T sig = l >= T(0) ? T(1) / (T(1) + std::exp(-l))
                              : std::exp(l) / (T(1) + std::exp(l));
            ln.grad[i] += o.grad[0] * (sig - targets[i]) / T(n);
        }
    });
    return out;
}

// mean cross-entropy over rows of (R,C) logits with integer labels.
template <typename T>
Tensor<T> cross_entropy_mean(const Tensor<T>& logits, const std::vector<int>& labels) {
    check(logits.rank() == 2, "cross_entropy: rank-2 logits required");
    const i64 R = logits.dim(0), C = logits.dim(1);
    check(static_cast<i64>(labels.size()) == R, "cross_entropy: label count mismatch");
    for (int l : labels) check(l >= 0 && l < C, "cross_entropy: label out of range");
    T total = 0;
    for (i64 r = 0; r < R; ++r) {
        const T* row = logits.ptr() + r * C;
        T m = row[0];
        for (i64 c = 1; c < C; ++c) m = std::max(m, row[c]);
        T lse = 0;
        for (i64 c = 0; c < C; ++c) lse += std::exp(row[c] - m);
        total += m + std::log(lse) - row[labels[r]];
    }
    auto out = Tensor<T>::from_data({1}, {total / T(R)});
    detail::record<T>(out, {logits.node()}, [labels, R, C](Node<T>& o) {
        auto& ln = *o.parents[0];
        ln.ensure_grad();
        for (i64 r = 0; r < R; ++r) {
            const T* row = ln.data.data() + r * C;
            T m = row[0];
            for (i64 c = 1; c < C; ++c) m = std::max(m, row[c]);
            T z = 0;
            for (i64 c = 0; c < C; ++c) z += std::exp(row[c] - m);
            for (i64 c = 0; c < C; ++c) {
                T p = std::exp(row[c] - m) / z;
                T g = p - (c == labels[r] ? T(1) : T(0));
                ln.grad[r * C + c] += o.grad[0] * g / T(R);
            }
        }
    });
    return out;
}

// inference-only row softmax (no tape).
template <typename T>
std::vector<T> softmax_rows(const Tensor<T>& logits) {
    check(logits.rank() == 2, "softmax_rows: rank-2 logits required");
    const i64 R = logits.dim(0), C = logits.dim(1);
    std::vector<T> probs(static_cast<size_t>(R * C));
    for (i64 r = 0; r < R; ++r) {
        const T* row = logits.ptr() + r * C;
        T m = row[0];
        for (i64 c = 1; c < C; ++c) m = std::max(m, row[c]);
        T z = 0;
        for (i64 c = 0; c < C; ++c) z += std::exp(row[c] - m);
        for (i64 c = 0; c < C; ++c) probs[r * C + c] = std::exp(row[c] - m) / z;
    }
    return probs;
}

}  // namespace gca
