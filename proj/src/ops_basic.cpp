#include <algorithm>
#include <cmath>

#include "rvseg/autodiff.hpp"
#include "rvseg/errors.hpp"
#include "rvseg/fault.hpp"
#include "rvseg/ops.hpp"

namespace rvseg::fault {
namespace {
thread_local std::string g_armed_op;
}  // namespace

void arm(const std::string& op) { g_armed_op = op; }
void disarm() { g_armed_op.clear(); }
bool armed(const std::string& op) { return g_armed_op == op; }

}  // namespace rvseg::fault

namespace rvseg {

namespace {

enum class Bcast { Same, Scalar, Suffix };

// Classifies how b aligns with a for elementwise arithmetic.
template <typename T>
Bcast bcast_kind(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (shape_eq(a.shape(), b.shape())) return Bcast::Same;
    if (b.numel() == 1) return Bcast::Scalar;
    if (b.rank() < a.rank()) {
        const int off = a.rank() - b.rank();
        bool suffix = true;
        for (int i = 0; i < b.rank(); ++i) {
            suffix = suffix && a.shape()[static_cast<std::size_t>(off + i)] ==
                                   b.shape()[static_cast<std::size_t>(i)];
        }
        if (suffix) return Bcast::Suffix;
    }
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " are not broadcast-compatible");
}

// Sums the leading axes of g so the result has b's shape (the reverse of a
// suffix/scalar broadcast).
template <typename T>
Tensor<T> reduce_to(const Tensor<T>& g, const Shape& target) {
    const std::int64_t nb = shape_numel(target);
    std::vector<T> out(static_cast<std::size_t>(nb), T(0));
    const T* p = g.data();
    const std::int64_t n = g.numel();
    for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i % nb)] += p[i];
    return Tensor<T>::from_data(target, std::move(out));
}

template <typename T, typename Fwd>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd,
                    typename Tape<T>::BackwardFn (*make_bwd)(const Tensor<T>&, const Tensor<T>&,
                                                             Bcast)) {
    const Bcast kind = bcast_kind(a, b, name);
    const std::int64_t n = a.numel();
    const std::int64_t nb = b.numel();
    const T* pa = a.data();
    const T* pb = b.data();
    std::vector<T> out(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        out[static_cast<std::size_t>(i)] = fwd(pa[i], pb[i % nb]);
    }
    Tensor<T> y = Tensor<T>::from_data(a.shape(), std::move(out));
    detail::maybe_record<T>(y, {&a, &b}, make_bwd(a, b, kind));
    return y;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        a, b, "add", [](T x, T y) { return x + y; },
        +[](const Tensor<T>& /*a*/, const Tensor<T>& b, Bcast kind) ->
        typename Tape<T>::BackwardFn {
            return [b, kind](const Tensor<T>& g) {
                Tensor<T> gb = kind == Bcast::Same ? g : reduce_to(g, b.shape());
                return std::vector<Tensor<T>>{g, std::move(gb)};
            };
        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        a, b, "sub", [](T x, T y) { return x - y; },
        +[](const Tensor<T>& /*a*/, const Tensor<T>& b, Bcast kind) ->
        typename Tape<T>::BackwardFn {
            return [b, kind](const Tensor<T>& g) {
                Tensor<T> neg = scale(g, -1.0);
                Tensor<T> gb = kind == Bcast::Same ? std::move(neg) : reduce_to(neg, b.shape());
                return std::vector<Tensor<T>>{g, std::move(gb)};
            };
        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        a, b, "mul", [](T x, T y) { return x * y; },
        +[](const Tensor<T>& a, const Tensor<T>& b, Bcast kind) -> typename Tape<T>::BackwardFn {
            return [a, b, kind](const Tensor<T>& g) {
                const std::int64_t n = a.numel(), nb = b.numel();
                const T* pg = g.data();
                const T* pa = a.data();
                const T* pb = b.data();
                std::vector<T> ga(static_cast<std::size_t>(n));
                std::vector<T> gb_full(static_cast<std::size_t>(nb), T(0));
                for (std::int64_t i = 0; i < n; ++i) {
                    ga[static_cast<std::size_t>(i)] = pg[i] * pb[i % nb];
                    gb_full[static_cast<std::size_t>(i % nb)] += pg[i] * pa[i];
                }
                Tensor<T> gat = Tensor<T>::from_data(a.shape(), std::move(ga));
                Shape bshape = kind == Bcast::Same ? a.shape() : b.shape();
                Tensor<T> gbt = Tensor<T>::from_data(std::move(bshape), std::move(gb_full));
                return std::vector<Tensor<T>>{std::move(gat), std::move(gbt)};
            };
        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double s) {
    std::vector<T> out(x.vec());
    for (T& v : out) v = static_cast<T>(v * s);
    Tensor<T> y = Tensor<T>::from_data(x.shape(), std::move(out));
    detail::maybe_record<T>(y, {&x}, [s](const Tensor<T>& g) {
        return std::vector<Tensor<T>>{scale(g, s)};
    });
    return y;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    std::vector<T> out(x.vec());
    for (T& v : out) v = v > T(0) ? v : T(0);
    Tensor<T> y = Tensor<T>::from_data(x.shape(), std::move(out));
    const T sign = fault::armed("relu") ? T(-1) : T(1);
    detail::maybe_record<T>(y, {&x}, [x, sign](const Tensor<T>& g) {
        std::vector<T> gx(g.vec());
        const T* px = x.data();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] = (px[i] > T(0)) ? sign * gx[i] : T(0);
        }
        return std::vector<Tensor<T>>{Tensor<T>::from_data(x.shape(), std::move(gx))};
    });
    return y;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    std::vector<T> out(x.vec());
    for (T& v : out) {
        v = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                      : static_cast<T>(std::exp(v) / (T(1) + std::exp(v)));
    }
    Tensor<T> y = Tensor<T>::from_data(x.shape(), std::move(out));
    detail::maybe_record<T>(y, {&x}, [y](const Tensor<T>& g) {
        std::vector<T> gx(g.vec());
        const T* py = y.data();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= py[i] * (T(1) - py[i]);
        return std::vector<Tensor<T>>{Tensor<T>::from_data(y.shape(), std::move(gx))};
    });
    return y;
}

template <typename T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& b) {
    if (x.rank() != 2 || b.rank() != 1 || b.extent(0) != x.extent(0)) {
        throw ShapeError("add_row_bias: want x[M,N], b[M]; got " + shape_str(x.shape()) +
                         " and " + shape_str(b.shape()));
    }
    const std::int64_t m = x.extent(0), n = x.extent(1);
    std::vector<T> out(x.vec());
    const T* pb = b.data();
    for (std::int64_t r = 0; r < m; ++r) {
        for (std::int64_t c = 0; c < n; ++c) out[static_cast<std::size_t>(r * n + c)] += pb[r];
    }
    Tensor<T> y = Tensor<T>::from_data(x.shape(), std::move(out));
    detail::maybe_record<T>(y, {&x, &b}, [m, n](const Tensor<T>& g) {
        std::vector<T> gb(static_cast<std::size_t>(m), T(0));
        const T* pg = g.data();
        for (std::int64_t r = 0; r < m; ++r) {
            for (std::int64_t c = 0; c < n; ++c) {
                gb[static_cast<std::size_t>(r)] += pg[r * n + c];
            }
        }
        return std::vector<Tensor<T>>{g, Tensor<T>::from_data({m}, std::move(gb))};
    });
    return y;
}

template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& v) {
    if (v.rank() != 1 || x.extent(0) != v.extent(0)) {
        throw ShapeError("scale_channels: want x[C,...], v[C]; got " + shape_str(x.shape()) +
                         " and " + shape_str(v.shape()));
    }
    const std::int64_t c = x.extent(0);
    const std::int64_t stride = x.numel() / c;
    std::vector<T> out(x.vec());
    const T* pv = v.data();
    for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t i = 0; i < stride; ++i) {
            out[static_cast<std::size_t>(ch * stride + i)] *= pv[ch];
        }
    }
    Tensor<T> y = Tensor<T>::from_data(x.shape(), std::move(out));
    detail::maybe_record<T>(y, {&x, &v}, [x, v, c, stride](const Tensor<T>& g) {
        const T* pg = g.data();
        const T* px = x.data();
        const T* pv = v.data();
        std::vector<T> gx(static_cast<std::size_t>(x.numel()));
        std::vector<T> gv(static_cast<std::size_t>(c), T(0));
        for (std::int64_t ch = 0; ch < c; ++ch) {
            for (std::int64_t i = 0; i < stride; ++i) {
                const std::int64_t k = ch * stride + i;
                gx[static_cast<std::size_t>(k)] = pg[k] * pv[ch];
                gv[static_cast<std::size_t>(ch)] += pg[k] * px[k];
            }
        }
        return std::vector<Tensor<T>>{Tensor<T>::from_data(x.shape(), std::move(gx)),
                                      Tensor<T>::from_data({c}, std::move(gv))};
    });
    return y;
}

template <typename T>
Tensor<T> tile_channels(const Tensor<T>& v, std::int64_t h, std::int64_t w) {
    if (v.rank() != 1 || h < 1 || w < 1) {
        throw ShapeError("tile_channels: want v[C] with positive extents");
    }
    const std::int64_t c = v.extent(0), hw = h * w;
    std::vector<T> out(static_cast<std::size_t>(c * hw));
    const T* pv = v.data();
    for (std::int64_t ch = 0; ch < c; ++ch) {
        std::fill_n(out.begin() + ch * hw, hw, pv[ch]);
    }
    Tensor<T> y = Tensor<T>::from_data({c, h, w}, std::move(out));
    detail::maybe_record<T>(y, {&v}, [c, hw](const Tensor<T>& g) {
        std::vector<T> gv(static_cast<std::size_t>(c), T(0));
        const T* pg = g.data();
        for (std::int64_t ch = 0; ch < c; ++ch) {
            for (std::int64_t i = 0; i < hw; ++i) gv[static_cast<std::size_t>(ch)] += pg[ch * hw + i];
        }
        return std::vector<Tensor<T>>{Tensor<T>::from_data({c}, std::move(gv))};
    });
    return y;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
    }
    Tensor<T> y = Tensor<T>::wrap(shape, x.buffer());
    const Shape in_shape = x.shape();
    detail::maybe_record<T>(y, {&x}, [in_shape](const Tensor<T>& g) {
        return std::vector<Tensor<T>>{Tensor<T>::wrap(in_shape, g.buffer())};
    });
    return y;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x) {
    if (x.rank() != 2) {
        throw ShapeError("transpose2d: want a rank-2 tensor, got " + shape_str(x.shape()));
    }
    const std::int64_t m = x.extent(0), n = x.extent(1);
    std::vector<T> out(static_cast<std::size_t>(m * n));
    const T* px = x.data();
    for (std::int64_t r = 0; r < m; ++r) {
        for (std::int64_t c = 0; c < n; ++c) out[static_cast<std::size_t>(c * m + r)] = px[r * n + c];
    }
    Tensor<T> y = Tensor<T>::from_data({n, m}, std::move(out));
    detail::maybe_record<T>(y, {&x}, [](const Tensor<T>& g) {
        return std::vector<Tensor<T>>{transpose2d(g)};
    });
    return y;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const int rank = parts[0].rank();
    if (axis < 0 || axis >= rank) throw ShapeError("concat: axis out of range");
    Shape out_shape = parts[0].shape();
    std::vector<std::int64_t> lens;
    lens.reserve(parts.size());
    lens.push_back(parts[0].extent(axis));
    for (std::size_t i = 1; i < parts.size(); ++i) {
        const Tensor<T>& p = parts[i];
        if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
        for (int a = 0; a < rank; ++a) {
            if (a != axis && p.shape()[static_cast<std::size_t>(a)] !=
                                 out_shape[static_cast<std::size_t>(a)]) {
                throw ShapeError("concat: extents differ off the concat axis: " +
                                 shape_str(out_shape) + " vs " + shape_str(p.shape()));
            }
        }
        lens.push_back(p.extent(axis));
        out_shape[static_cast<std::size_t>(axis)] += p.extent(axis);
    }

    std::int64_t outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= out_shape[static_cast<std::size_t>(a)];
    for (int a = axis + 1; a < rank; ++a) inner *= out_shape[static_cast<std::size_t>(a)];
    const std::int64_t total_axis = out_shape[static_cast<std::size_t>(axis)];

    std::vector<T> out(static_cast<std::size_t>(outer * total_axis * inner));
    std::int64_t off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const T* src = parts[i].data();
        const std::int64_t len = lens[i];
        for (std::int64_t o = 0; o < outer; ++o) {
            std::copy_n(src + o * len * inner, len * inner,
                        out.begin() + (o * total_axis + off) * inner);
        }
        off += len;
    }
    Tensor<T> y = Tensor<T>::from_data(out_shape, std::move(out));

    std::vector<const Tensor<T>*> ins;
    ins.reserve(parts.size());
    for (const Tensor<T>& p : parts) ins.push_back(&p);
    detail::maybe_record<T>(y, ins, [lens, axis](const Tensor<T>& g) {
        std::vector<Tensor<T>> grads;
        grads.reserve(lens.size());
        std::int64_t off = 0;
        for (std::int64_t len : lens) {
            grads.push_back(slice(g, axis, off, len));
            off += len;
        }
        return grads;
    });
    return y;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::int64_t start, std::int64_t len) {
    if (axis < 0 || axis >= x.rank()) throw ShapeError("slice: axis out of range");
    const std::int64_t extent = x.extent(axis);
    if (start < 0 || len < 1 || start + len > extent) {
        throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of bounds for extent " +
                         std::to_string(extent));
    }
    std::int64_t outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= x.extent(a);
    for (int a = axis + 1; a < x.rank(); ++a) inner *= x.extent(a);

    Shape out_shape = x.shape();
    out_shape[static_cast<std::size_t>(axis)] = len;
    std::vector<T> out(static_cast<std::size_t>(outer * len * inner));
    const T* px = x.data();
    for (std::int64_t o = 0; o < outer; ++o) {
        std::copy_n(px + (o * extent + start) * inner, len * inner,
                    out.begin() + o * len * inner);
    }
    Tensor<T> y = Tensor<T>::from_data(std::move(out_shape), std::move(out));

    const Shape in_shape = x.shape();
    detail::maybe_record<T>(y, {&x}, [in_shape, axis, start, len, outer, inner,
                                     extent](const Tensor<T>& g) {
        std::vector<T> gx(static_cast<std::size_t>(shape_numel(in_shape)), T(0));
        const T* pg = g.data();
        for (std::int64_t o = 0; o < outer; ++o) {
            std::copy_n(pg + o * len * inner, len * inner,
                        gx.begin() + (o * extent + start) * inner);
        }
        return std::vector<Tensor<T>>{Tensor<T>::from_data(in_shape, std::move(gx))};
    });
    return y;
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, int axis) {
    if (axis < 0 || axis >= x.rank()) throw ShapeError("sum_axis: axis out of range");
    std::int64_t outer = 1, inner = 1;
    const std::int64_t n = x.extent(axis);
    for (int a = 0; a < axis; ++a) outer *= x.extent(a);
    for (int a = axis + 1; a < x.rank(); ++a) inner *= x.extent(a);

    Shape out_shape;
    for (int a = 0; a < x.rank(); ++a) {
        if (a != axis) out_shape.push_back(x.extent(a));
    }
    if (out_shape.empty()) out_shape = {1};

    std::vector<T> out(static_cast<std::size_t>(outer * inner), T(0));
    const T* px = x.data();
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < n; ++i) {
            const T* row = px + (o * n + i) * inner;
            T* dst = out.data() + o * inner;
            for (std::int64_t k = 0; k < inner; ++k) dst[k] += row[k];
        }
    }
    Tensor<T> y = Tensor<T>::from_data(std::move(out_shape), std::move(out));

    const Shape in_shape = x.shape();
    detail::maybe_record<T>(y, {&x}, [in_shape, n, outer, inner](const Tensor<T>& g) {
        std::vector<T> gx(static_cast<std::size_t>(shape_numel(in_shape)));
        const T* pg = g.data();
        for (std::int64_t o = 0; o < outer; ++o) {
            for (std::int64_t i = 0; i < n; ++i) {
                std::copy_n(pg + o * inner, inner, gx.begin() + (o * n + i) * inner);
            }
        }
        return std::vector<Tensor<T>>{Tensor<T>::from_data(in_shape, std::move(gx))};
    });
    return y;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    T acc = T(0);
    for (T v : x.vec()) acc += v;
    Tensor<T> y = Tensor<T>::scalar(acc);
    const Shape in_shape = x.shape();
    detail::maybe_record<T>(y, {&x}, [in_shape](const Tensor<T>& g) {
        return std::vector<Tensor<T>>{Tensor<T>::full(in_shape, g.item())};
    });
    return y;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    const std::int64_t n = x.numel();
    T acc = T(0);
    for (T v : x.vec()) acc += v;
    Tensor<T> y = Tensor<T>::scalar(static_cast<T>(acc / static_cast<T>(n)));
    const Shape in_shape = x.shape();
    detail::maybe_record<T>(y, {&x}, [in_shape, n](const Tensor<T>& g) {
        return std::vector<Tensor<T>>{
            Tensor<T>::full(in_shape, static_cast<T>(g.item() / static_cast<T>(n)))};
    });
    return y;
}

template <typename T>
Tensor<T> masked_max_cols(const Tensor<T>& x, const Mask& mask) {
    if (x.rank() != 2) throw ShapeError("masked_max_cols: want x[M,N]");
    const std::int64_t m = x.extent(0), n = x.extent(1);
    if (mask.shape != Shape{n}) {
        throw ShapeError("masked_max_cols: mask shape " + shape_str(mask.shape) +
                         " does not match column count " + std::to_string(n));
    }
    if (mask.count() == 0) {
        throw DegenerateSliceError("masked_max_cols: every column is masked out");
    }
    std::vector<T> out(static_cast<std::size_t>(m));
    std::vector<std::int64_t> arg(static_cast<std::size_t>(m), -1);
    const T* px = x.data();
    for (std::int64_t r = 0; r < m; ++r) {
        T best = T(0);
        std::int64_t bi = -1;
        for (std::int64_t c = 0; c < n; ++c) {
            if (!mask.at(c)) continue;
            const T v = px[r * n + c];
            if (bi < 0 || v > best) {
                best = v;
                bi = c;
            }
        }
        out[static_cast<std::size_t>(r)] = best;
        arg[static_cast<std::size_t>(r)] = bi;
    }
    Tensor<T> y = Tensor<T>::from_data({m}, std::move(out));
    detail::maybe_record<T>(y, {&x}, [m, n, arg](const Tensor<T>& g) {
        std::vector<T> gx(static_cast<std::size_t>(m * n), T(0));
        const T* pg = g.data();
        for (std::int64_t r = 0; r < m; ++r) {
            gx[static_cast<std::size_t>(r * n + arg[static_cast<std::size_t>(r)])] = pg[r];
        }
        return std::vector<Tensor<T>>{Tensor<T>::from_data({m, n}, std::move(gx))};
    });
    return y;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const std::int64_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    std::vector<T> out(static_cast<std::size_t>(m * n), T(0));
    const T* pa = a.data();
    const T* pb = b.data();
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t p = 0; p < k; ++p) {
            const T av = pa[i * k + p];
            const T* brow = pb + p * n;
            T* orow = out.data() + i * n;
            for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    Tensor<T> y = Tensor<T>::from_data({m, n}, std::move(out));
    const double sign = fault::armed("matmul") ? -1.0 : 1.0;
    detail::maybe_record<T>(y, {&a, &b}, [a, b, sign](const Tensor<T>& g) {
        return std::vector<Tensor<T>>{scale(matmul(g, transpose2d(b)), sign),
                                      matmul(transpose2d(a), g)};
    });
    return y;
}

template <typename T>
Mask binarize(const Tensor<T>& x, double threshold) {
    std::vector<std::uint8_t> v(static_cast<std::size_t>(x.numel()));
    const T* px = x.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = static_cast<double>(px[i]) > threshold ? 1 : 0;
    }
    return Mask::from_data(x.shape(), std::move(v));
}

#define RVSEG_INSTANTIATE_BASIC(T)                                                            \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> scale<T>(const Tensor<T>&, double);                                    \
    template Tensor<T> relu<T>(const Tensor<T>&);                                             \
    template Tensor<T> sigmoid<T>(const Tensor<T>&);                                          \
    template Tensor<T> add_row_bias<T>(const Tensor<T>&, const Tensor<T>&);                   \
    template Tensor<T> scale_channels<T>(const Tensor<T>&, const Tensor<T>&);                 \
    template Tensor<T> tile_channels<T>(const Tensor<T>&, std::int64_t, std::int64_t);        \
    template Tensor<T> reshape<T>(const Tensor<T>&, const Shape&);                            \
    template Tensor<T> transpose2d<T>(const Tensor<T>&);                                      \
    template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, int);                         \
    template Tensor<T> slice<T>(const Tensor<T>&, int, std::int64_t, std::int64_t);           \
    template Tensor<T> sum_axis<T>(const Tensor<T>&, int);                                    \
    template Tensor<T> sum_all<T>(const Tensor<T>&);                                          \
    template Tensor<T> mean_all<T>(const Tensor<T>&);                                         \
    template Tensor<T> masked_max_cols<T>(const Tensor<T>&, const Mask&);                     \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                         \
    template Mask binarize<T>(const Tensor<T>&, double);

RVSEG_INSTANTIATE_BASIC(float)
RVSEG_INSTANTIATE_BASIC(double)
#undef RVSEG_INSTANTIATE_BASIC

}  // namespace rvseg
