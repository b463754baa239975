#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "rvseg/tensor.hpp"

namespace rvseg {

// Differentiable tensor operations.
//
// Every op validates shapes up front (throwing ShapeError), computes its
// result into a fresh buffer, and — when a tape is active and at least one
// input is tracked — records a backward closure. reshape() is the one
// exception to "fresh buffer": it shares the input's storage.
//
// Binary arithmetic accepts b with the same shape as a, a one-element b,
// or b whose shape is a trailing suffix of a's shape (broadcast over the
// leading axes).

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, double s);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

// y[m, n] = x[m, n] + b[m] for x of shape [M, N], b of shape [M].
template <typename T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& b);

// Multiplies each channel slice by a scalar: x has shape [C, ...], v has
// shape [C]; y[c, ...] = x[c, ...] * v[c].
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& v);

// Repeats a channel vector over a spatial grid: v[C] -> y[C, H, W].
template <typename T>
Tensor<T> tile_channels(const Tensor<T>& v, std::int64_t h, std::int64_t w);

// Reinterprets the extents without copying; the volume must be unchanged
// and the result shares the input's buffer.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape);

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x);

// Concatenates along `axis`; all other extents must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);

// Copies `len` extents of `axis` starting at `start`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::int64_t start, std::int64_t len);

// Sums away one axis. A rank-1 input yields shape [1].
template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, int axis);

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x);
template <typename T>
Tensor<T> mean_all(const Tensor<T>& x);

// Row-wise maximum of x[M, N] over the columns where mask (shape [N]) is
// true. Gradient flows to the first maximal column of each row. A mask
// with no true entry raises DegenerateSliceError.
template <typename T>
Tensor<T> masked_max_cols(const Tensor<T>& x, const Mask& mask);

// [M, K] x [K, N] -> [M, N].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Numerically stabilized softmax along `axis` (max subtraction per slice).
// With a mask — either x's shape or rank-1 of length extent(axis) — masked
// entries are exactly zero and excluded from the maximum and the sum; a
// slice with every entry masked raises DegenerateSliceError.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis);
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis, const Mask& mask);

// Scales each vector along `axis` to unit Euclidean norm; the denominator
// is norm + eps, so zero vectors map to zero.
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, int axis, double eps = 1e-12);

// Normalizes each column of x[D, T] to zero mean / unit variance over the
// D entries, then applies the affine pair gamma, beta (both [D]).
template <typename T>
Tensor<T> layer_norm_cols(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          double eps = 1e-5);

// Cross-correlation of x[Cin, H, W] with w[Cout, Cin, kh, kw] under zero
// padding. The output extents (H + 2*pad - kh) / stride + 1 must be exact
// integers; anything else is a ShapeError. Optional bias has shape [Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad);
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride,
                 int pad);

// Channel projection: x[Cin, H, W], w[Cout, Cin] -> [Cout, H, W].
template <typename T>
Tensor<T> conv1x1(const Tensor<T>& x, const Tensor<T>& w);
template <typename T>
Tensor<T> conv1x1(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

// Applies a separate 3x3 kernel at every channel and position:
// y[c,i,j] = sum_{u,v} k[c,u+1,v+1,i,j] * x[c, i+u*d, j+v*d], zero padded,
// with x[C,H,W] and k[C,3,3,H,W]. `d` is the dilation (d >= 1).
template <typename T>
Tensor<T> depthwise_dilated_conv(const Tensor<T>& x, const Tensor<T>& k, int d);

// Expands a guidance map into per-position depthwise kernels:
// out[c,u,v,i,j] = sum_e w[u,v,c,e] * g[e,i,j], with w[3,3,C,C] and
// g[C,H,W] -> out[C,3,3,H,W]. Fused so no [HW, HW]-sized (or otherwise
// quadratic-in-pixels) temporary is ever formed.
template <typename T>
Tensor<T> generate_position_kernels(const Tensor<T>& w, const Tensor<T>& g);

// Doubles both spatial extents with bilinear interpolation at half-pixel
// sample centers, clamping reads at the border.
template <typename T>
Tensor<T> bilinear_upsample2x(const Tensor<T>& x);

// Gathers embedding columns: table[V, D], ids (each in [0, V)) -> [D, T]
// with column t equal to table row ids[t].
template <typename T>
Tensor<T> embed_tokens(const Tensor<T>& table, const std::vector<int>& ids);

// Mean binary cross-entropy between logits and {0,1} targets of the same
// shape, computed in the stable max(z,0) - z*y + log1p(exp(-|z|)) form.
template <typename T>
Tensor<T> bce_with_logits_mean(const Tensor<T>& logits, const Tensor<T>& targets);

// Foreground mask of entries strictly greater than `threshold`.
template <typename T>
Mask binarize(const Tensor<T>& x, double threshold);

#define RVSEG_DECLARE_OPS(T)                                                                      \
    extern template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                         \
    extern template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                         \
    extern template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                         \
    extern template Tensor<T> scale<T>(const Tensor<T>&, double);                                 \
    extern template Tensor<T> relu<T>(const Tensor<T>&);                                          \
    extern template Tensor<T> sigmoid<T>(const Tensor<T>&);                                       \
    extern template Tensor<T> add_row_bias<T>(const Tensor<T>&, const Tensor<T>&);                \
    extern template Tensor<T> scale_channels<T>(const Tensor<T>&, const Tensor<T>&);              \
    extern template Tensor<T> tile_channels<T>(const Tensor<T>&, std::int64_t, std::int64_t);     \
    extern template Tensor<T> reshape<T>(const Tensor<T>&, const Shape&);                         \
    extern template Tensor<T> transpose2d<T>(const Tensor<T>&);                                   \
    extern template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, int);                      \
    extern template Tensor<T> slice<T>(const Tensor<T>&, int, std::int64_t, std::int64_t);        \
    extern template Tensor<T> sum_axis<T>(const Tensor<T>&, int);                                 \
    extern template Tensor<T> sum_all<T>(const Tensor<T>&);                                       \
    extern template Tensor<T> mean_all<T>(const Tensor<T>&);                                      \
    extern template Tensor<T> masked_max_cols<T>(const Tensor<T>&, const Mask&);                  \
    extern template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                      \
    extern template Tensor<T> softmax<T>(const Tensor<T>&, int);                                  \
    extern template Tensor<T> softmax<T>(const Tensor<T>&, int, const Mask&);                     \
    extern template Tensor<T> l2_normalize<T>(const Tensor<T>&, int, double);                     \
    extern template Tensor<T> layer_norm_cols<T>(const Tensor<T>&, const Tensor<T>&,              \
                                                 const Tensor<T>&, double);                       \
    extern template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, int, int);            \
    extern template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                        int, int);                                                \
    extern template Tensor<T> conv1x1<T>(const Tensor<T>&, const Tensor<T>&);                     \
    extern template Tensor<T> conv1x1<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
    extern template Tensor<T> depthwise_dilated_conv<T>(const Tensor<T>&, const Tensor<T>&, int); \
    extern template Tensor<T> generate_position_kernels<T>(const Tensor<T>&, const Tensor<T>&);   \
    extern template Tensor<T> bilinear_upsample2x<T>(const Tensor<T>&);                           \
    extern template Tensor<T> embed_tokens<T>(const Tensor<T>&, const std::vector<int>&);         \
    extern template Tensor<T> bce_with_logits_mean<T>(const Tensor<T>&, const Tensor<T>&);        \
    extern template Mask binarize<T>(const Tensor<T>&, double);

RVSEG_DECLARE_OPS(float)
RVSEG_DECLARE_OPS(double)
#undef RVSEG_DECLARE_OPS

}  // namespace rvseg
