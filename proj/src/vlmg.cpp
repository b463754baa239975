#include "rvseg/vlmg.hpp"

#include <cmath>

#include "rvseg/errors.hpp"

namespace rvseg {
namespace {

// (wv v_flat)^T (wl L) -> [HW, T].
template <typename T>
Tensor<T> affinity_logits(const Tensor<T>& wv, const Tensor<T>& wl, const Tensor<T>& v_flat,
                          const Tensor<T>& l_feats) {
    return matmul(transpose2d(matmul(wv, v_flat)), matmul(wl, l_feats));
}

template <typename T>
Tensor<T> flatten_map(const Tensor<T>& v) {
    if (v.rank() != 3) throw ShapeError("expected [D,H,W], got " + shape_str(v.shape()));
    return reshape(v, {v.extent(0), v.extent(1) * v.extent(2)});
}

}  // namespace

template <typename T>
VlmgParams<T> VlmgParams<T>::init(int dim, int c_stage, int inner, int heads, Rng& rng) {
    if (dim <= 0 || c_stage <= 0 || inner <= 0)
        throw ContractError("vlmg widths must be positive");
    const T affinity_std = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dim)));
    VlmgParams p;
    p.dim = dim;
    p.inner = inner;
    p.heads = heads;
    p.proj = ConvLayer<T>::lin(dim, c_stage, rng);
    p.wv1 = Tensor<T>::randn({inner, dim}, rng, affinity_std);
    p.wl1 = Tensor<T>::randn({inner, dim}, rng, affinity_std);
    p.wv2 = Tensor<T>::randn({inner, dim}, rng, affinity_std);
    p.wl2 = Tensor<T>::randn({inner, dim}, rng, affinity_std);
    p.co_block = TransformerBlockParams<T>::init(dim, rng);
    p.fuse = ConvLayer<T>::lin(dim, 2 * dim, rng);
    return p;
}

template <typename T>
Tensor<T> vision_to_language(const Tensor<T>& v, const LanguageState<T>& l,
                             const VlmgParams<T>& p, Affinity<T>* affinity_out) {
    const Tensor<T> v_flat = flatten_map(v);
    const Tensor<T> logits = affinity_logits(p.wv1, p.wl1, v_flat, l.features);
    const Tensor<T> attn = softmax(logits, 0);  // normalize over pixels, per word
    if (affinity_out) *affinity_out = Affinity<T>{attn, 0};
    return matmul(v_flat, attn);
}

template <typename T>
LanguageState<T> co_embed(const Tensor<T>& v_tilde, const LanguageState<T>& l,
                          const VlmgParams<T>& p) {
    LanguageState<T> next = l;
    next.features = transformer_block(add(v_tilde, l.features), p.co_block, p.heads, l.valid);
    return next;
}

template <typename T>
Tensor<T> language_to_vision(const Tensor<T>& v, const LanguageState<T>& l_next,
                             const VlmgParams<T>& p, Affinity<T>* affinity_out) {
    const Tensor<T> v_flat = flatten_map(v);
    const Tensor<T> logits = affinity_logits(p.wv2, p.wl2, v_flat, l_next.features);
    // [T,HW]; each pixel column is normalized over the valid words.
    const Tensor<T> attn = softmax(transpose2d(logits), 0, l_next.valid);
    if (affinity_out) *affinity_out = Affinity<T>{attn, 0};
    const Tensor<T> mapped = matmul(l_next.features, attn);
    return reshape(mapped, v.shape());
}

template <typename T>
Tensor<T> inject(const Tensor<T>& v, const Tensor<T>& l_tilde, const VlmgParams<T>& p) {
    if (!shape_eq(v.shape(), l_tilde.shape()))
        throw ShapeError("inject: shape mismatch " + shape_str(v.shape()) + " vs " +
                         shape_str(l_tilde.shape()));
    const Tensor<T> fused =
        conv1x1(concat(std::vector<Tensor<T>>{v, l_tilde}, 0), p.fuse.w, p.fuse.b);
    return add(l2_normalize(v, 0), l2_normalize(fused, 0));
}

template <typename T>
VlmgOut<T> vlmg_step(const Tensor<T>& v_stage, const LanguageState<T>& l,
                     const VlmgParams<T>& p) {
    const Tensor<T> v = conv1x1(v_stage, p.proj.w, p.proj.b);
    const Tensor<T> v_tilde = vision_to_language(v, l, p);
    LanguageState<T> l_next = co_embed(v_tilde, l, p);
    const Tensor<T> l_tilde = language_to_vision(v, l_next, p);
    return VlmgOut<T>{inject(v, l_tilde, p), std::move(l_next)};
}

#define RVSEG_INSTANTIATE_VLMG(T)                                                         \
    template struct VlmgParams<T>;                                                        \
    template Tensor<T> vision_to_language<T>(const Tensor<T>&, const LanguageState<T>&,   \
                                             const VlmgParams<T>&, Affinity<T>*);         \
    template LanguageState<T> co_embed<T>(const Tensor<T>&, const LanguageState<T>&,      \
                                          const VlmgParams<T>&);                          \
    template Tensor<T> language_to_vision<T>(const Tensor<T>&, const LanguageState<T>&,   \
                                             const VlmgParams<T>&, Affinity<T>*);         \
    template Tensor<T> inject<T>(const Tensor<T>&, const Tensor<T>&, const VlmgParams<T>&); \
    template VlmgOut<T> vlmg_step<T>(const Tensor<T>&, const LanguageState<T>&,           \
                                     const VlmgParams<T>&);

RVSEG_INSTANTIATE_VLMG(float)
RVSEG_INSTANTIATE_VLMG(double)
#undef RVSEG_INSTANTIATE_VLMG

}  // namespace rvseg
