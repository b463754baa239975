#include <algorithm>
#include <cmath>

#include "rvseg/autodiff.hpp"
#include "rvseg/errors.hpp"
#include "rvseg/ops.hpp"

namespace rvseg {

namespace {

// outer/inner strides around one axis of a dense row-major tensor.
struct AxisStrides {
    std::int64_t outer = 1;
    std::int64_t n = 1;
    std::int64_t inner = 1;
};

template <typename T>
AxisStrides axis_strides(const Tensor<T>& x, int axis, const char* op) {
    if (axis < 0 || axis >= x.rank()) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(x.shape()));
    }
    AxisStrides s;
    for (int a = 0; a < axis; ++a) s.outer *= x.extent(a);
    s.n = x.extent(axis);
    for (int a = axis + 1; a < x.rank(); ++a) s.inner *= x.extent(a);
    return s;
}

// Mask layouts accepted by softmax: one flag per entry, or one flag per
// position along the softmax axis.
enum class MaskMode { None, Full, Axis };

template <typename T>
MaskMode mask_mode(const Tensor<T>& x, const Mask* mask, int axis) {
    if (!mask) return MaskMode::None;
    if (shape_eq(mask->shape, x.shape())) return MaskMode::Full;
    if (mask->shape == Shape{x.extent(axis)}) return MaskMode::Axis;
    throw ShapeError("softmax: mask shape " + shape_str(mask->shape) +
                     " matches neither the input shape " + shape_str(x.shape()) +
                     " nor the softmax axis");
}

template <typename T>
Tensor<T> softmax_impl(const Tensor<T>& x, int axis, const Mask* mask) {
    const AxisStrides s = axis_strides(x, axis, "softmax");
    const MaskMode mode = mask_mode(x, mask, axis);
    const T* px = x.data();
    std::vector<T> out(static_cast<std::size_t>(x.numel()), T(0));

    auto valid = [&](std::int64_t flat, std::int64_t i) {
        switch (mode) {
            case MaskMode::None: return true;
            case MaskMode::Full: return mask->at(flat);
            case MaskMode::Axis: return mask->at(i);
        }
        return true;
    };

    for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t in = 0; in < s.inner; ++in) {
            // Max over the valid entries keeps the exponentials in range.
            T mx = T(0);
            bool any = false;
            for (std::int64_t i = 0; i < s.n; ++i) {
                const std::int64_t flat = (o * s.n + i) * s.inner + in;
                if (!valid(flat, i)) continue;
                if (!any || px[flat] > mx) mx = px[flat];
                any = true;
            }
            if (!any) {
                throw DegenerateSliceError("softmax: a slice along axis " +
                                           std::to_string(axis) + " is fully masked");
            }
            T denom = T(0);
            for (std::int64_t i = 0; i < s.n; ++i) {
                const std::int64_t flat = (o * s.n + i) * s.inner + in;
                if (!valid(flat, i)) continue;
                const T e = std::exp(px[flat] - mx);
                out[static_cast<std::size_t>(flat)] = e;
                denom += e;
            }
            for (std::int64_t i = 0; i < s.n; ++i) {
                const std::int64_t flat = (o * s.n + i) * s.inner + in;
                out[static_cast<std::size_t>(flat)] /= denom;
            }
        }
    }
    Tensor<T> y = Tensor<T>::from_data(x.shape(), std::move(out));
    detail::maybe_record<T>(y, {&x}, [y, s](const Tensor<T>& g) {
        // dx = y * (g - sum(g * y)) per slice; masked entries have y == 0.
        const T* py = y.data();
        const T* pg = g.data();
        std::vector<T> gx(static_cast<std::size_t>(y.numel()));
        for (std::int64_t o = 0; o < s.outer; ++o) {
            for (std::int64_t in = 0; in < s.inner; ++in) {
                T dot = T(0);
                for (std::int64_t i = 0; i < s.n; ++i) {
                    const std::int64_t flat = (o * s.n + i) * s.inner + in;
                    dot += pg[flat] * py[flat];
                }
                for (std::int64_t i = 0; i < s.n; ++i) {
                    const std::int64_t flat = (o * s.n + i) * s.inner + in;
                    gx[static_cast<std::size_t>(flat)] = py[flat] * (pg[flat] - dot);
                }
            }
        }
        return std::vector<Tensor<T>>{Tensor<T>::from_data(y.shape(), std::move(gx))};
    });
    return y;
}

}  // namespace

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    return softmax_impl(x, axis, nullptr);
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis, const Mask& mask) {
    return softmax_impl(x, axis, &mask);
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, int axis, double eps) {
    const AxisStrides s = axis_strides(x, axis, "l2_normalize");
    const T* px = x.data();
    std::vector<T> out(static_cast<std::size_t>(x.numel()));
    std::vector<T> norms(static_cast<std::size_t>(s.outer * s.inner));
    for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t in = 0; in < s.inner; ++in) {
            T sq = T(0);
            for (std::int64_t i = 0; i < s.n; ++i) {
                const T v = px[(o * s.n + i) * s.inner + in];
                sq += v * v;
            }
            const T norm = std::sqrt(sq);
            norms[static_cast<std::size_t>(o * s.inner + in)] = norm;
            const T d = norm + static_cast<T>(eps);
            for (std::int64_t i = 0; i < s.n; ++i) {
                const std::int64_t flat = (o * s.n + i) * s.inner + in;
                out[static_cast<std::size_t>(flat)] = px[flat] / d;
            }
        }
    }
    Tensor<T> y = Tensor<T>::from_data(x.shape(), std::move(out));
    detail::maybe_record<T>(y, {&x}, [x, s, eps, norms](const Tensor<T>& g) {
        const T* px = x.data();
        const T* pg = g.data();
        std::vector<T> gx(static_cast<std::size_t>(x.numel()));
        for (std::int64_t o = 0; o < s.outer; ++o) {
            for (std::int64_t in = 0; in < s.inner; ++in) {
                const T norm = norms[static_cast<std::size_t>(o * s.inner + in)];
                const T d = norm + static_cast<T>(eps);
                T dot = T(0);
                for (std::int64_t i = 0; i < s.n; ++i) {
                    const std::int64_t flat = (o * s.n + i) * s.inner + in;
                    dot += pg[flat] * px[flat];
                }
                // d/dx_j [x/(|x|+eps)]: the |x| term vanishes when x == 0.
                const T coef = norm > T(0) ? dot / (d * d * norm) : T(0);
                for (std::int64_t i = 0; i < s.n; ++i) {
                    const std::int64_t flat = (o * s.n + i) * s.inner + in;
                    gx[static_cast<std::size_t>(flat)] = pg[flat] / d - coef * px[flat];
                }
            }
        }
        return std::vector<Tensor<T>>{Tensor<T>::from_data(x.shape(), std::move(gx))};
    });
    return y;
}

template <typename T>
Tensor<T> layer_norm_cols(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          double eps) {
    if (x.rank() != 2) throw ShapeError("layer_norm_cols: want x[D,T]");
    const std::int64_t d = x.extent(0), t = x.extent(1);
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
        throw ShapeError("layer_norm_cols: gamma/beta must have shape [" + std::to_string(d) +
                         "]");
    }
    const T* px = x.data();
    const T* pgm = gamma.data();
    const T* pbt = beta.data();
    std::vector<T> xhat(static_cast<std::size_t>(d * t));
    std::vector<T> inv_std(static_cast<std::size_t>(t));
    std::vector<T> out(static_cast<std::size_t>(d * t));
    for (std::int64_t c = 0; c < t; ++c) {
        T mean = T(0);
        for (std::int64_t r = 0; r < d; ++r) mean += px[r * t + c];
        mean /= static_cast<T>(d);
        T var = T(0);
        for (std::int64_t r = 0; r < d; ++r) {
            const T dv = px[r * t + c] - mean;
            var += dv * dv;
        }
        var /= static_cast<T>(d);
        const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
        inv_std[static_cast<std::size_t>(c)] = inv;
        for (std::int64_t r = 0; r < d; ++r) {
            const T xh = (px[r * t + c] - mean) * inv;
            xhat[static_cast<std::size_t>(r * t + c)] = xh;
            out[static_cast<std::size_t>(r * t + c)] = pgm[r] * xh + pbt[r];
        }
    }
    Tensor<T> y = Tensor<T>::from_data(x.shape(), std::move(out));
    detail::maybe_record<T>(
        y, {&x, &gamma, &beta}, [gamma, xhat, inv_std, d, t](const Tensor<T>& g) {
            const T* pg = g.data();
            const T* pgm = gamma.data();
            std::vector<T> gx(static_cast<std::size_t>(d * t));
            std::vector<T> ggm(static_cast<std::size_t>(d), T(0));
            std::vector<T> gbt(static_cast<std::size_t>(d), T(0));
            for (std::int64_t c = 0; c < t; ++c) {
                T m1 = T(0), m2 = T(0);
                for (std::int64_t r = 0; r < d; ++r) {
                    const std::size_t k = static_cast<std::size_t>(r * t + c);
                    const T gh = pg[k] * pgm[r];
                    m1 += gh;
                    m2 += gh * xhat[k];
                }
                m1 /= static_cast<T>(d);
                m2 /= static_cast<T>(d);
                const T inv = inv_std[static_cast<std::size_t>(c)];
                for (std::int64_t r = 0; r < d; ++r) {
                    const std::size_t k = static_cast<std::size_t>(r * t + c);
                    const T gh = pg[k] * pgm[r];
                    gx[k] = inv * (gh - m1 - xhat[k] * m2);
                    ggm[static_cast<std::size_t>(r)] += pg[k] * xhat[k];
                    gbt[static_cast<std::size_t>(r)] += pg[k];
                }
            }
            return std::vector<Tensor<T>>{Tensor<T>::from_data({d, t}, std::move(gx)),
                                          Tensor<T>::from_data({d}, std::move(ggm)),
                                          Tensor<T>::from_data({d}, std::move(gbt))};
        });
    return y;
}

namespace {

struct ConvDims {
    std::int64_t cin, h, w, cout, kh, kw, ho, wo;
    int stride, pad;
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
    if (x.rank() != 3 || w.rank() != 4) {
        throw ShapeError("conv2d: want x[Cin,H,W] and w[Cout,Cin,kh,kw]; got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
    }
    if (stride < 1 || pad < 0) throw ShapeError("conv2d: stride must be >= 1 and pad >= 0");
    ConvDims d;
    d.cin = x.extent(0);
    d.h = x.extent(1);
    d.w = x.extent(2);
    d.cout = w.extent(0);
    d.kh = w.extent(2);
    d.kw = w.extent(3);
    d.stride = stride;
    d.pad = pad;
    if (w.extent(1) != d.cin) {
        throw ShapeError("conv2d: input has " + std::to_string(d.cin) +
                         " channels but the kernel expects " + std::to_string(w.extent(1)));
    }
    const std::int64_t hspan = d.h + 2 * pad - d.kh;
    const std::int64_t wspan = d.w + 2 * pad - d.kw;
    if (hspan < 0 || wspan < 0 || hspan % stride != 0 || wspan % stride != 0) {
        throw ShapeError("conv2d: geometry H=" + std::to_string(d.h) + " W=" +
                         std::to_string(d.w) + " k=" + std::to_string(d.kh) + "x" +
                         std::to_string(d.kw) + " stride=" + std::to_string(stride) + " pad=" +
                         std::to_string(pad) + " does not produce integral output extents");
    }
    d.ho = hspan / stride + 1;
    d.wo = wspan / stride + 1;
    return d;
}

template <typename T>
Tensor<T> conv2d_impl(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int stride,
                      int pad) {
    const ConvDims dm = conv_dims(x, w, stride, pad);
    if (bias && bias->shape() != Shape{dm.cout}) {
        throw ShapeError("conv2d: bias shape " + shape_str(bias->shape()) + " is not [" +
                         std::to_string(dm.cout) + "]");
    }
    const T* px = x.data();
    const T* pw = w.data();
    std::vector<T> out(static_cast<std::size_t>(dm.cout * dm.ho * dm.wo), T(0));
    if (bias) {
        const T* pb = bias->data();
        for (std::int64_t co = 0; co < dm.cout; ++co) {
            std::fill_n(out.begin() + co * dm.ho * dm.wo, dm.ho * dm.wo, pb[co]);
        }
    }
    for (std::int64_t co = 0; co < dm.cout; ++co) {
        for (std::int64_t ci = 0; ci < dm.cin; ++ci) {
            for (std::int64_t u = 0; u < dm.kh; ++u) {
                for (std::int64_t v = 0; v < dm.kw; ++v) {
                    const T wv = pw[((co * dm.cin + ci) * dm.kh + u) * dm.kw + v];
                    if (wv == T(0)) continue;
                    for (std::int64_t ho = 0; ho < dm.ho; ++ho) {
                        const std::int64_t hi = ho * stride + u - pad;
                        if (hi < 0 || hi >= dm.h) continue;
                        const T* xrow = px + (ci * dm.h + hi) * dm.w;
                        T* orow = out.data() + (co * dm.ho + ho) * dm.wo;
                        for (std::int64_t wo = 0; wo < dm.wo; ++wo) {
                            const std::int64_t wi = wo * stride + v - pad;
                            if (wi < 0 || wi >= dm.w) continue;
                            orow[wo] += wv * xrow[wi];
                        }
                    }
                }
            }
        }
    }
    Tensor<T> y = Tensor<T>::from_data({dm.cout, dm.ho, dm.wo}, std::move(out));

    auto backward = [x, w, dm, with_bias = bias != nullptr](const Tensor<T>& g) {
        const T* px = x.data();
        const T* pw = w.data();
        const T* pg = g.data();
        std::vector<T> gx(static_cast<std::size_t>(x.numel()), T(0));
        std::vector<T> gw(static_cast<std::size_t>(w.numel()), T(0));
        for (std::int64_t co = 0; co < dm.cout; ++co) {
            for (std::int64_t ci = 0; ci < dm.cin; ++ci) {
                for (std::int64_t u = 0; u < dm.kh; ++u) {
                    for (std::int64_t v = 0; v < dm.kw; ++v) {
                        const std::size_t wk =
                            static_cast<std::size_t>(((co * dm.cin + ci) * dm.kh + u) * dm.kw + v);
                        const T wv = pw[wk];
                        T wacc = T(0);
                        for (std::int64_t ho = 0; ho < dm.ho; ++ho) {
                            const std::int64_t hi = ho * dm.stride + u - dm.pad;
                            if (hi < 0 || hi >= dm.h) continue;
                            const T* xrow = px + (ci * dm.h + hi) * dm.w;
                            T* gxrow = gx.data() + (ci * dm.h + hi) * dm.w;
                            const T* grow = pg + (co * dm.ho + ho) * dm.wo;
                            for (std::int64_t wo = 0; wo < dm.wo; ++wo) {
                                const std::int64_t wi = wo * dm.stride + v - dm.pad;
                                if (wi < 0 || wi >= dm.w) continue;
                                gxrow[wi] += wv * grow[wo];
                                wacc += xrow[wi] * grow[wo];
                            }
                        }
                        gw[wk] += wacc;
                    }
                }
            }
        }
        std::vector<Tensor<T>> grads{Tensor<T>::from_data(x.shape(), std::move(gx)),
                                     Tensor<T>::from_data(w.shape(), std::move(gw))};
        if (with_bias) {
            std::vector<T> gb(static_cast<std::size_t>(dm.cout), T(0));
            for (std::int64_t co = 0; co < dm.cout; ++co) {
                for (std::int64_t i = 0; i < dm.ho * dm.wo; ++i) {
                    gb[static_cast<std::size_t>(co)] += pg[co * dm.ho * dm.wo + i];
                }
            }
            grads.push_back(Tensor<T>::from_data({dm.cout}, std::move(gb)));
        }
        return grads;
    };

    if (bias) {
        detail::maybe_record<T>(y, {&x, &w, bias}, backward);
    } else {
        detail::maybe_record<T>(y, {&x, &w}, backward);
    }
    return y;
}

template <typename T>
Tensor<T> conv1x1_impl(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
    if (x.rank() != 3 || w.rank() != 2 || w.extent(1) != x.extent(0)) {
        throw ShapeError("conv1x1: want x[Cin,H,W] and w[Cout,Cin]; got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
    }
    const std::int64_t cin = x.extent(0), h = x.extent(1), ww = x.extent(2);
    const std::int64_t cout = w.extent(0), hw = h * ww;
    if (bias && bias->shape() != Shape{cout}) {
        throw ShapeError("conv1x1: bias shape " + shape_str(bias->shape()) + " is not [" +
                         std::to_string(cout) + "]");
    }
    const T* px = x.data();
    const T* pw = w.data();
    std::vector<T> out(static_cast<std::size_t>(cout * hw), T(0));
    if (bias) {
        const T* pb = bias->data();
        for (std::int64_t co = 0; co < cout; ++co) std::fill_n(out.begin() + co * hw, hw, pb[co]);
    }
    for (std::int64_t co = 0; co < cout; ++co) {
        for (std::int64_t ci = 0; ci < cin; ++ci) {
            const T wv = pw[co * cin + ci];
            const T* xrow = px + ci * hw;
            T* orow = out.data() + co * hw;
            for (std::int64_t i = 0; i < hw; ++i) orow[i] += wv * xrow[i];
        }
    }
    Tensor<T> y = Tensor<T>::from_data({cout, h, ww}, std::move(out));

    auto backward = [x, w, cin, cout, hw, with_bias = bias != nullptr](const Tensor<T>& g) {
        const T* px = x.data();
        const T* pw = w.data();
        const T* pg = g.data();
        std::vector<T> gx(static_cast<std::size_t>(cin * hw), T(0));
        std::vector<T> gw(static_cast<std::size_t>(cout * cin), T(0));
        for (std::int64_t co = 0; co < cout; ++co) {
            for (std::int64_t ci = 0; ci < cin; ++ci) {
                const T wv = pw[co * cin + ci];
                const T* grow = pg + co * hw;
                const T* xrow = px + ci * hw;
                T* gxrow = gx.data() + ci * hw;
                T acc = T(0);
                for (std::int64_t i = 0; i < hw; ++i) {
                    gxrow[i] += wv * grow[i];
                    acc += xrow[i] * grow[i];
                }
                gw[static_cast<std::size_t>(co * cin + ci)] = acc;
            }
        }
        std::vector<Tensor<T>> grads{Tensor<T>::from_data(x.shape(), std::move(gx)),
                                     Tensor<T>::from_data(w.shape(), std::move(gw))};
        if (with_bias) {
            std::vector<T> gb(static_cast<std::size_t>(cout), T(0));
            for (std::int64_t co = 0; co < cout; ++co) {
                for (std::int64_t i = 0; i < hw; ++i) {
                    gb[static_cast<std::size_t>(co)] += pg[co * hw + i];
                }
            }
            grads.push_back(Tensor<T>::from_data({cout}, std::move(gb)));
        }
        return grads;
    };

    if (bias) {
        detail::maybe_record<T>(y, {&x, &w, bias}, backward);
    } else {
        detail::maybe_record<T>(y, {&x, &w}, backward);
    }
    return y;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
    return conv2d_impl<T>(x, w, nullptr, stride, pad);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride,
                 int pad) {
    return conv2d_impl<T>(x, w, &bias, stride, pad);
}

template <typename T>
Tensor<T> conv1x1(const Tensor<T>& x, const Tensor<T>& w) {
    return conv1x1_impl<T>(x, w, nullptr);
}

template <typename T>
Tensor<T> conv1x1(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    return conv1x1_impl<T>(x, w, &bias);
}

template <typename T>
Tensor<T> depthwise_dilated_conv(const Tensor<T>& x, const Tensor<T>& k, int d) {
    if (x.rank() != 3 || k.rank() != 5) {
        throw ShapeError("depthwise_dilated_conv: want x[C,H,W] and k[C,3,3,H,W]");
    }
    const std::int64_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    if (k.shape() != Shape{c, 3, 3, h, w}) {
        throw ShapeError("depthwise_dilated_conv: kernel shape " + shape_str(k.shape()) +
                         " does not match x " + shape_str(x.shape()));
    }
    if (d < 1) throw ShapeError("depthwise_dilated_conv: dilation must be >= 1");

    const T* px = x.data();
    const T* pk = k.data();
    const std::int64_t hw = h * w;
    std::vector<T> out(static_cast<std::size_t>(c * hw), T(0));
    for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t u = 0; u < 3; ++u) {
            for (std::int64_t v = 0; v < 3; ++v) {
                const T* kmap = pk + ((ch * 3 + u) * 3 + v) * hw;
                const std::int64_t dy = (u - 1) * d, dx = (v - 1) * d;
                for (std::int64_t i = 0; i < h; ++i) {
                    const std::int64_t yy = i + dy;
                    if (yy < 0 || yy >= h) continue;
                    const T* xrow = px + (ch * h + yy) * w;
                    const T* krow = kmap + i * w;
                    T* orow = out.data() + (ch * h + i) * w;
                    const std::int64_t j0 = std::max<std::int64_t>(0, -dx);
                    const std::int64_t j1 = std::min<std::int64_t>(w, w - dx);
                    for (std::int64_t j = j0; j < j1; ++j) orow[j] += krow[j] * xrow[j + dx];
                }
            }
        }
    }
    Tensor<T> y = Tensor<T>::from_data({c, h, w}, std::move(out));
    detail::maybe_record<T>(y, {&x, &k}, [x, k, c, h, w, hw, d](const Tensor<T>& g) {
        const T* px = x.data();
        const T* pk = k.data();
        const T* pg = g.data();
        std::vector<T> gx(static_cast<std::size_t>(c * hw), T(0));
        std::vector<T> gk(static_cast<std::size_t>(c * 9 * hw), T(0));
        for (std::int64_t ch = 0; ch < c; ++ch) {
            for (std::int64_t u = 0; u < 3; ++u) {
                for (std::int64_t v = 0; v < 3; ++v) {
                    const std::int64_t base = ((ch * 3 + u) * 3 + v) * hw;
                    const std::int64_t dy = (u - 1) * d, dx = (v - 1) * d;
                    for (std::int64_t i = 0; i < h; ++i) {
                        const std::int64_t yy = i + dy;
                        if (yy < 0 || yy >= h) continue;
                        const T* xrow = px + (ch * h + yy) * w;
                        T* gxrow = gx.data() + (ch * h + yy) * w;
                        const T* grow = pg + (ch * h + i) * w;
                        const T* krow = pk + base + i * w;
                        T* gkrow = gk.data() + base + i * w;
                        const std::int64_t j0 = std::max<std::int64_t>(0, -dx);
                        const std::int64_t j1 = std::min<std::int64_t>(w, w - dx);
                        for (std::int64_t j = j0; j < j1; ++j) {
                            gxrow[j + dx] += krow[j] * grow[j];
                            gkrow[j] = xrow[j + dx] * grow[j];
                        }
                    }
                }
            }
        }
        return std::vector<Tensor<T>>{Tensor<T>::from_data(x.shape(), std::move(gx)),
                                      Tensor<T>::from_data(k.shape(), std::move(gk))};
    });
    return y;
}

template <typename T>
Tensor<T> generate_position_kernels(const Tensor<T>& w, const Tensor<T>& g) {
    if (w.rank() != 4 || g.rank() != 3) {
        throw ShapeError("generate_position_kernels: want w[3,3,C,C] and g[C,H,W]");
    }
    const std::int64_t c = g.extent(0), h = g.extent(1), ww = g.extent(2);
    if (w.shape() != Shape{3, 3, c, c}) {
        throw ShapeError("generate_position_kernels: weight shape " + shape_str(w.shape()) +
                         " does not match guidance " + shape_str(g.shape()));
    }
    const std::int64_t hw = h * ww;
    const T* pw = w.data();
    const T* pg = g.data();
    // out[ch,u,v,:] = sum_e w[u,v,ch,e] * g[e,:]  (a [C,C] x [C,HW] product
    // per tap, so nothing quadratic in the pixel count is materialized).
    std::vector<T> out(static_cast<std::size_t>(c * 9 * hw), T(0));
    for (std::int64_t u = 0; u < 3; ++u) {
        for (std::int64_t v = 0; v < 3; ++v) {
            const T* wmat = pw + (u * 3 + v) * c * c;
            for (std::int64_t ch = 0; ch < c; ++ch) {
                T* orow = out.data() + ((ch * 3 + u) * 3 + v) * hw;
                for (std::int64_t e = 0; e < c; ++e) {
                    const T wv = wmat[ch * c + e];
                    if (wv == T(0)) continue;
                    const T* grow = pg + e * hw;
                    for (std::int64_t i = 0; i < hw; ++i) orow[i] += wv * grow[i];
                }
            }
        }
    }
    Tensor<T> y = Tensor<T>::from_data({c, 3, 3, h, ww}, std::move(out));
    detail::maybe_record<T>(y, {&w, &g}, [w, g, c, hw](const Tensor<T>& up) {
        const T* pw = w.data();
        const T* pg = g.data();
        const T* pu = up.data();
        std::vector<T> gw(static_cast<std::size_t>(9 * c * c), T(0));
        std::vector<T> gg(static_cast<std::size_t>(c * hw), T(0));
        for (std::int64_t u = 0; u < 3; ++u) {
            for (std::int64_t v = 0; v < 3; ++v) {
                const std::int64_t tap = u * 3 + v;
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const T* urow = pu + ((ch * 3 + u) * 3 + v) * hw;
                    for (std::int64_t e = 0; e < c; ++e) {
                        const T* grow = pg + e * hw;
                        T* ggrow = gg.data() + e * hw;
                        const T wv = pw[(tap * c + ch) * c + e];
                        T acc = T(0);
                        for (std::int64_t i = 0; i < hw; ++i) {
                            acc += urow[i] * grow[i];
                            ggrow[i] += wv * urow[i];
                        }
                        gw[static_cast<std::size_t>((tap * c + ch) * c + e)] = acc;
                    }
                }
            }
        }
        return std::vector<Tensor<T>>{Tensor<T>::from_data(w.shape(), std::move(gw)),
                                      Tensor<T>::from_data(g.shape(), std::move(gg))};
    });
    return y;
}

namespace {

// Half-pixel source coordinate for a x2 upsample: one source index pair and
// an interpolation weight per output index.
struct Lerp {
    std::int64_t lo, hi;
    double frac;
};

std::vector<Lerp> lerp_table(std::int64_t out_n, std::int64_t in_n) {
    std::vector<Lerp> t(static_cast<std::size_t>(out_n));
    for (std::int64_t i = 0; i < out_n; ++i) {
        const double src = (static_cast<double>(i) + 0.5) / 2.0 - 0.5;
        const double fl = std::floor(src);
        const std::int64_t lo = static_cast<std::int64_t>(fl);
        t[static_cast<std::size_t>(i)] = {
            std::clamp<std::int64_t>(lo, 0, in_n - 1),
            std::clamp<std::int64_t>(lo + 1, 0, in_n - 1),
            src - fl,
        };
    }
    return t;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_upsample2x(const Tensor<T>& x) {
    if (x.rank() != 3) throw ShapeError("bilinear_upsample2x: want x[C,H,W]");
    const std::int64_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    const std::int64_t oh = 2 * h, ow = 2 * w;
    const std::vector<Lerp> ty = lerp_table(oh, h);
    const std::vector<Lerp> tx = lerp_table(ow, w);
    const T* px = x.data();
    std::vector<T> out(static_cast<std::size_t>(c * oh * ow));
    for (std::int64_t ch = 0; ch < c; ++ch) {
        const T* plane = px + ch * h * w;
        for (std::int64_t i = 0; i < oh; ++i) {
            const Lerp& ly = ty[static_cast<std::size_t>(i)];
            const T* r0 = plane + ly.lo * w;
            const T* r1 = plane + ly.hi * w;
            T* orow = out.data() + (ch * oh + i) * ow;
            for (std::int64_t j = 0; j < ow; ++j) {
                const Lerp& lx = tx[static_cast<std::size_t>(j)];
                const double top = (1.0 - lx.frac) * r0[lx.lo] + lx.frac * r0[lx.hi];
                const double bot = (1.0 - lx.frac) * r1[lx.lo] + lx.frac * r1[lx.hi];
                orow[j] = static_cast<T>((1.0 - ly.frac) * top + ly.frac * bot);
            }
        }
    }
    Tensor<T> y = Tensor<T>::from_data({c, oh, ow}, std::move(out));
    detail::maybe_record<T>(y, {&x}, [c, h, w, oh, ow, ty, tx](const Tensor<T>& g) {
        const T* pg = g.data();
        std::vector<T> gx(static_cast<std::size_t>(c * h * w), T(0));
        for (std::int64_t ch = 0; ch < c; ++ch) {
            T* plane = gx.data() + ch * h * w;
            for (std::int64_t i = 0; i < oh; ++i) {
                const Lerp& ly = ty[static_cast<std::size_t>(i)];
                const T* grow = pg + (ch * oh + i) * ow;
                for (std::int64_t j = 0; j < ow; ++j) {
                    const Lerp& lx = tx[static_cast<std::size_t>(j)];
                    const double gv = static_cast<double>(grow[j]);
                    plane[ly.lo * w + lx.lo] += static_cast<T>((1 - ly.frac) * (1 - lx.frac) * gv);
                    plane[ly.lo * w + lx.hi] += static_cast<T>((1 - ly.frac) * lx.frac * gv);
                    plane[ly.hi * w + lx.lo] += static_cast<T>(ly.frac * (1 - lx.frac) * gv);
                    plane[ly.hi * w + lx.hi] += static_cast<T>(ly.frac * lx.frac * gv);
                }
            }
        }
        return std::vector<Tensor<T>>{Tensor<T>::from_data({c, h, w}, std::move(gx))};
    });
    return y;
}

template <typename T>
Tensor<T> embed_tokens(const Tensor<T>& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw ShapeError("embed_tokens: want table[V,D]");
    if (ids.empty()) throw InputError("embed_tokens: empty token sequence");
    const std::int64_t vocab = table.extent(0), d = table.extent(1);
    const std::int64_t t = static_cast<std::int64_t>(ids.size());
    for (int id : ids) {
        if (id < 0 || id >= vocab) {
            throw InputError("embed_tokens: token id " + std::to_string(id) +
                             " out of range for vocabulary of " + std::to_string(vocab));
        }
    }
    const T* pt = table.data();
    std::vector<T> out(static_cast<std::size_t>(d * t));
    for (std::int64_t col = 0; col < t; ++col) {
        const T* row = pt + static_cast<std::int64_t>(ids[static_cast<std::size_t>(col)]) * d;
        for (std::int64_t r = 0; r < d; ++r) out[static_cast<std::size_t>(r * t + col)] = row[r];
    }
    Tensor<T> y = Tensor<T>::from_data({d, t}, std::move(out));
    detail::maybe_record<T>(y, {&table}, [vocab, d, t, ids](const Tensor<T>& g) {
        const T* pg = g.data();
        std::vector<T> gt(static_cast<std::size_t>(vocab * d), T(0));
        for (std::int64_t col = 0; col < t; ++col) {
            T* row = gt.data() + static_cast<std::int64_t>(ids[static_cast<std::size_t>(col)]) * d;
            for (std::int64_t r = 0; r < d; ++r) row[r] += pg[r * t + col];
        }
        return std::vector<Tensor<T>>{Tensor<T>::from_data({vocab, d}, std::move(gt))};
    });
    return y;
}

template <typename T>
Tensor<T> bce_with_logits_mean(const Tensor<T>& logits, const Tensor<T>& targets) {
    if (!shape_eq(logits.shape(), targets.shape())) {
        throw ShapeError("bce_with_logits_mean: logits " + shape_str(logits.shape()) +
                         " and targets " + shape_str(targets.shape()) + " differ");
    }
    const std::int64_t n = logits.numel();
    const T* pz = logits.data();
    const T* py = targets.data();
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double z = pz[i], yv = py[i];
        acc += std::max(z, 0.0) - z * yv + std::log1p(std::exp(-std::abs(z)));
    }
    Tensor<T> y = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
    detail::maybe_record<T>(y, {&logits, &targets}, [logits, targets, n](const Tensor<T>& g) {
        const T gv = g.item();
        const T* pz = logits.data();
        const T* py = targets.data();
        std::vector<T> gz(static_cast<std::size_t>(n));
        std::vector<T> gy(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            const T z = pz[i];
            const T s = z >= T(0) ? T(1) / (T(1) + std::exp(-z))
                                  : static_cast<T>(std::exp(z) / (T(1) + std::exp(z)));
            gz[static_cast<std::size_t>(i)] = (s - py[i]) * gv / static_cast<T>(n);
            gy[static_cast<std::size_t>(i)] = -z * gv / static_cast<T>(n);
        }
        return std::vector<Tensor<T>>{Tensor<T>::from_data(logits.shape(), std::move(gz)),
                                      Tensor<T>::from_data(targets.shape(), std::move(gy))};
    });
    return y;
}

#define RVSEG_INSTANTIATE_NN(T)                                                               \
    template Tensor<T> softmax<T>(const Tensor<T>&, int);                                     \
    template Tensor<T> softmax<T>(const Tensor<T>&, int, const Mask&);                        \
    template Tensor<T> l2_normalize<T>(const Tensor<T>&, int, double);                        \
    template Tensor<T> layer_norm_cols<T>(const Tensor<T>&, const Tensor<T>&,                 \
                                          const Tensor<T>&, double);                          \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, int, int);               \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int,   \
                                 int);                                                        \
    template Tensor<T> conv1x1<T>(const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> conv1x1<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
    template Tensor<T> depthwise_dilated_conv<T>(const Tensor<T>&, const Tensor<T>&, int);    \
    template Tensor<T> generate_position_kernels<T>(const Tensor<T>&, const Tensor<T>&);      \
    template Tensor<T> bilinear_upsample2x<T>(const Tensor<T>&);                              \
    template Tensor<T> embed_tokens<T>(const Tensor<T>&, const std::vector<int>&);            \
    template Tensor<T> bce_with_logits_mean<T>(const Tensor<T>&, const Tensor<T>&);

RVSEG_INSTANTIATE_NN(float)
RVSEG_INSTANTIATE_NN(double)
#undef RVSEG_INSTANTIATE_NN

}  // namespace rvseg
