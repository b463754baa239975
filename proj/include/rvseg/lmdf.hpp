#pragma once

#include <string>
#include <vector>

#include "rvseg/vlmg.hpp"

namespace rvseg {

// Variants of the temporal filtering path:
//   kFull    - position-adaptive guidance from the word-normalized affinity
//   kMaxPool - guidance = V_bar^c channel-weighted by max-pooled L^c
//   kShare   - one pooled guidance vector, identical kernels everywhere
//   kNoPre   - skip both modulation stages; guidance derives from L_0
enum class LmdfMode { kFull, kMaxPool, kShare, kNoPre };

LmdfMode lmdf_mode_from_string(const std::string& s);
std::string to_string(LmdfMode mode);

// Language-guided multi-scale dynamic filtering. The language features are
// modulated by the reference frame, then the current frame; a per-position
// guidance vector is read back out of the modulated language; nine learned
// transforms turn each guidance vector into a 3x3 depthwise kernel, applied
// at several dilations; the filtered maps are fused by a 1x1 conv.
template <typename T>
struct LmdfParams {
    int dim = 0;
    int inner = 0;
    int heads = 1;

    Tensor<T> wv3, wl3;  // reference-frame modulation affinity, [C1, D]
    Tensor<T> wv4, wl4;  // current-frame modulation affinity
    Tensor<T> wv5, wl5;  // guidance affinity
    TransformerBlockParams<T> block_ref, block_cur;
    Tensor<T> bank;      // [3,3,D,D]; bank[u,v] maps guidance to the (u-1, v-1) tap
    ConvLayer<T> fuse;   // [D, (1 + n_dilations) * D]

    static LmdfParams init(int dim, int inner, int heads, int n_dilations, Rng& rng);

    template <typename F>
    void for_each(const std::string& prefix, F&& f) {
        f(prefix + ".wv3", wv3);
        f(prefix + ".wl3", wl3);
        f(prefix + ".wv4", wv4);
        f(prefix + ".wl4", wl4);
        f(prefix + ".wv5", wv5);
        f(prefix + ".wl5", wl5);
        block_ref.for_each(prefix + ".block_ref", f);
        block_cur.for_each(prefix + ".block_cur", f);
        f(prefix + ".bank", bank);
        fuse.for_each(prefix + ".fuse", f);
    }
};

// Same structure as the VLMG vision->language + co-embed pair, with the
// reference frame's features and independent parameters.
template <typename T>
LanguageState<T> modulate_with_reference(const Tensor<T>& v_ref, const LanguageState<T>& l0,
                                         const LmdfParams<T>& p);

template <typename T>
LanguageState<T> modulate_with_current(const Tensor<T>& v_cur, const LanguageState<T>& l_ref,
                                       const LmdfParams<T>& p);

// Per-position guidance; map is [D,H,W], each position a convex combination
// of valid word columns of l_c. The affinity is [T,HW], word-normalized.
template <typename T>
struct GuidanceMap {
    Tensor<T> map;
    Affinity<T> affinity;  // values undefined in the pooled modes
};

template <typename T>
GuidanceMap<T> guidance(const Tensor<T>& v_cur, const LanguageState<T>& l_c,
                        const LmdfParams<T>& p);

// Kernels [D,3,3,H,W] with kernel(c,u,v,i,j) = (bank[u,v] . g(:,i,j))(c).
template <typename T>
Tensor<T> position_kernels(const GuidanceMap<T>& g, const LmdfParams<T>& p);

// One dilation of Eq.-12-style filtering: kernels from the guidance applied
// as a per-position depthwise conv over v_cur.
template <typename T>
Tensor<T> dynamic_filter(const Tensor<T>& v_cur, const GuidanceMap<T>& g,
                         const LmdfParams<T>& p, int dilation);

template <typename T>
struct LmdfOut {
    Tensor<T> v_out;       // [D,H,W] fused multi-dilation output
    LanguageState<T> l_c;  // current-frame modulated language
    GuidanceMap<T> guide;
};

template <typename T>
LmdfOut<T> lmdf_step(const Tensor<T>& v_ref, const Tensor<T>& v_cur,
                     const LanguageState<T>& l0, const LmdfParams<T>& p,
                     const std::vector<int>& dilations, LmdfMode mode = LmdfMode::kFull);

#define RVSEG_DECLARE_LMDF(T)                                                              \
    extern template struct LmdfParams<T>;                                                  \
    extern template LanguageState<T> modulate_with_reference<T>(                           \
        const Tensor<T>&, const LanguageState<T>&, const LmdfParams<T>&);                  \
    extern template LanguageState<T> modulate_with_current<T>(                             \
        const Tensor<T>&, const LanguageState<T>&, const LmdfParams<T>&);                  \
    extern template GuidanceMap<T> guidance<T>(const Tensor<T>&, const LanguageState<T>&,  \
                                               const LmdfParams<T>&);                      \
    extern template Tensor<T> position_kernels<T>(const GuidanceMap<T>&,                   \
                                                  const LmdfParams<T>&);                   \
    extern template Tensor<T> dynamic_filter<T>(const Tensor<T>&, const GuidanceMap<T>&,   \
                                                const LmdfParams<T>&, int);                \
    extern template LmdfOut<T> lmdf_step<T>(const Tensor<T>&, const Tensor<T>&,            \
                                            const LanguageState<T>&, const LmdfParams<T>&, \
                                            const std::vector<int>&, LmdfMode);

RVSEG_DECLARE_LMDF(float)
RVSEG_DECLARE_LMDF(double)
#undef RVSEG_DECLARE_LMDF

}  // namespace rvseg
