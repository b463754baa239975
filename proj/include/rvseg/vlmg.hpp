#pragma once

#include <string>

#include "rvseg/layers.hpp"
#include "rvseg/transformer.hpp"

namespace rvseg {

// Cross-modal affinity with its normalized axis: slices taken along `axis`
// sum to 1 over valid entries (masked word entries are exactly 0).
template <typename T>
struct Affinity {
    Tensor<T> values;
    int axis = 0;
};

// Vision-language mutual guidance: one fused stage of the interleaved
// encoder. The visual stage output is projected to model width D, mapped
// into the language space through a pixel-normalized affinity, co-embedded
// with the linguistic state by a transformer block, mapped back through a
// word-normalized affinity, and injected into the visual stream as an
// L2-normalized residual.
template <typename T>
struct VlmgParams {
    int dim = 0;    // model width D
    int inner = 0;  // affinity width C1
    int heads = 1;

    ConvLayer<T> proj;                  // stage input projection [D, C_stage]
    Tensor<T> wv1, wl1;                 // vision->language affinity, [C1, D]
    Tensor<T> wv2, wl2;                 // language->vision affinity, [C1, D]
    TransformerBlockParams<T> co_block;
    ConvLayer<T> fuse;                  // residual injection, [D, 2D]

    static VlmgParams init(int dim, int c_stage, int inner, int heads, Rng& rng);

    template <typename F>
    void for_each(const std::string& prefix, F&& f) {
        proj.for_each(prefix + ".proj", f);
        f(prefix + ".wv1", wv1);
        f(prefix + ".wl1", wl1);
        f(prefix + ".wv2", wv2);
        f(prefix + ".wl2", wl2);
        co_block.for_each(prefix + ".co_block", f);
        fuse.for_each(prefix + ".fuse", f);
    }
};

// v is [D,H,W] (already projected). Affinity (wv1 v)^T (wl1 L) is normalized
// over the pixel axis; each returned column of the [D,T] result is a convex
// combination of pixel features. Pad-word columns are computed but carry no
// meaning downstream (the language state's mask flags them).
template <typename T>
Tensor<T> vision_to_language(const Tensor<T>& v, const LanguageState<T>& l,
                             const VlmgParams<T>& p, Affinity<T>* affinity_out = nullptr);

// Advances the linguistic state: features <- transformer_block(v_tilde + L).
template <typename T>
LanguageState<T> co_embed(const Tensor<T>& v_tilde, const LanguageState<T>& l,
                          const VlmgParams<T>& p);

// Affinity transposed to [T,HW] and normalized over valid words per pixel;
// returns L~ = L_next * A reshaped to [D,H,W] — each pixel is a convex
// combination of valid word features.
template <typename T>
Tensor<T> language_to_vision(const Tensor<T>& v, const LanguageState<T>& l_next,
                             const VlmgParams<T>& p, Affinity<T>* affinity_out = nullptr);

// V_bar = Norm(v) + Norm(conv1x1(cat(v, l_tilde))), Norm = per-position L2
// over channels.
template <typename T>
Tensor<T> inject(const Tensor<T>& v, const Tensor<T>& l_tilde, const VlmgParams<T>& p);

template <typename T>
struct VlmgOut {
    Tensor<T> v_bar;         // [D,H,W], fed to the next encoder stage
    LanguageState<T> l_next;
};

template <typename T>
VlmgOut<T> vlmg_step(const Tensor<T>& v_stage, const LanguageState<T>& l,
                     const VlmgParams<T>& p);

#define RVSEG_DECLARE_VLMG(T)                                                             \
    extern template struct VlmgParams<T>;                                                 \
    extern template Tensor<T> vision_to_language<T>(const Tensor<T>&,                     \
                                                    const LanguageState<T>&,              \
                                                    const VlmgParams<T>&, Affinity<T>*);  \
    extern template LanguageState<T> co_embed<T>(const Tensor<T>&, const LanguageState<T>&, \
                                                 const VlmgParams<T>&);                   \
    extern template Tensor<T> language_to_vision<T>(const Tensor<T>&,                     \
                                                    const LanguageState<T>&,              \
                                                    const VlmgParams<T>&, Affinity<T>*);  \
    extern template Tensor<T> inject<T>(const Tensor<T>&, const Tensor<T>&,               \
                                        const VlmgParams<T>&);                            \
    extern template VlmgOut<T> vlmg_step<T>(const Tensor<T>&, const LanguageState<T>&,    \
                                            const VlmgParams<T>&);

RVSEG_DECLARE_VLMG(float)
RVSEG_DECLARE_VLMG(double)
#undef RVSEG_DECLARE_VLMG

}  // namespace rvseg
