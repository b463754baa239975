#include "rvseg/lmdf.hpp"

#include <cmath>

#include "rvseg/errors.hpp"

namespace rvseg {
namespace {

template <typename T>
Tensor<T> flatten_map(const Tensor<T>& v) {
    if (v.rank() != 3) throw ShapeError("expected [D,H,W], got " + shape_str(v.shape()));
    return reshape(v, {v.extent(0), v.extent(1) * v.extent(2)});
}

// Shared shape of both modulation stages: map the frame into the language
// space through a pixel-normalized affinity, then co-embed.
template <typename T>
LanguageState<T> modulate(const Tensor<T>& v, const LanguageState<T>& l,
                          const Tensor<T>& wv, const Tensor<T>& wl,
                          const TransformerBlockParams<T>& block, int heads) {
    const Tensor<T> v_flat = flatten_map(v);
    const Tensor<T> logits = matmul(transpose2d(matmul(wv, v_flat)), matmul(wl, l.features));
    const Tensor<T> attn = softmax(logits, 0);  // over pixels, per word
    const Tensor<T> v_tilde = matmul(v_flat, attn);
    LanguageState<T> next = l;
    next.features = transformer_block(add(v_tilde, l.features), block, heads, l.valid);
    return next;
}

// Valid-word max pool of the language features, [D].
template <typename T>
Tensor<T> pooled_language(const LanguageState<T>& l) {
    return masked_max_cols(l.features, l.valid);
}

}  // namespace

LmdfMode lmdf_mode_from_string(const std::string& s) {
    if (s == "none" || s == "full") return LmdfMode::kFull;
    if (s == "maxpool") return LmdfMode::kMaxPool;
    if (s == "share") return LmdfMode::kShare;
    if (s == "nopre") return LmdfMode::kNoPre;
    throw InputError("unknown ablation '" + s + "' (expected none|maxpool|share|nopre)");
}

std::string to_string(LmdfMode mode) {
    switch (mode) {
        case LmdfMode::kFull: return "none";
        case LmdfMode::kMaxPool: return "maxpool";
        case LmdfMode::kShare: return "share";
        case LmdfMode::kNoPre: return "nopre";
    }
    throw ContractError("invalid LmdfMode");
}

template <typename T>
LmdfParams<T> LmdfParams<T>::init(int dim, int inner, int heads, int n_dilations, Rng& rng) {
    if (dim <= 0 || inner <= 0 || n_dilations <= 0)
        throw ContractError("lmdf widths must be positive");
    const T affinity_std = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dim)));
    LmdfParams p;
    p.dim = dim;
    p.inner = inner;
    p.heads = heads;
    p.wv3 = Tensor<T>::randn({inner, dim}, rng, affinity_std);
    p.wl3 = Tensor<T>::randn({inner, dim}, rng, affinity_std);
    p.wv4 = Tensor<T>::randn({inner, dim}, rng, affinity_std);
    p.wl4 = Tensor<T>::randn({inner, dim}, rng, affinity_std);
    p.wv5 = Tensor<T>::randn({inner, dim}, rng, affinity_std);
    p.wl5 = Tensor<T>::randn({inner, dim}, rng, affinity_std);
    p.block_ref = TransformerBlockParams<T>::init(dim, rng);
    p.block_cur = TransformerBlockParams<T>::init(dim, rng);
    p.bank = Tensor<T>::randn({3, 3, dim, dim}, rng, affinity_std);
    p.fuse = ConvLayer<T>::lin(dim, (1 + n_dilations) * dim, rng);
    return p;
}

template <typename T>
LanguageState<T> modulate_with_reference(const Tensor<T>& v_ref, const LanguageState<T>& l0,
                                         const LmdfParams<T>& p) {
    return modulate(v_ref, l0, p.wv3, p.wl3, p.block_ref, p.heads);
}

template <typename T>
LanguageState<T> modulate_with_current(const Tensor<T>& v_cur, const LanguageState<T>& l_ref,
                                       const LmdfParams<T>& p) {
    return modulate(v_cur, l_ref, p.wv4, p.wl4, p.block_cur, p.heads);
}

template <typename T>
GuidanceMap<T> guidance(const Tensor<T>& v_cur, const LanguageState<T>& l_c,
                        const LmdfParams<T>& p) {
    const Tensor<T> v_flat = flatten_map(v_cur);
    const Tensor<T> logits =
        matmul(transpose2d(matmul(p.wv5, v_flat)), matmul(p.wl5, l_c.features));
    // [T,HW]; per-pixel distribution over valid words.
    const Tensor<T> attn = softmax(transpose2d(logits), 0, l_c.valid);
    const Tensor<T> mapped = matmul(l_c.features, attn);
    return GuidanceMap<T>{reshape(mapped, v_cur.shape()), Affinity<T>{attn, 0}};
}

template <typename T>
Tensor<T> position_kernels(const GuidanceMap<T>& g, const LmdfParams<T>& p) {
    return generate_position_kernels(p.bank, g.map);
}

template <typename T>
Tensor<T> dynamic_filter(const Tensor<T>& v_cur, const GuidanceMap<T>& g,
                         const LmdfParams<T>& p, int dilation) {
    return depthwise_dilated_conv(v_cur, position_kernels(g, p), dilation);
}

template <typename T>
LmdfOut<T> lmdf_step(const Tensor<T>& v_ref, const Tensor<T>& v_cur,
                     const LanguageState<T>& l0, const LmdfParams<T>& p,
                     const std::vector<int>& dilations, LmdfMode mode) {
    if (!shape_eq(v_ref.shape(), v_cur.shape()))
        throw ShapeError("lmdf_step: frame feature shapes differ");
    if (dilations.empty()) throw ContractError("lmdf_step: dilations must be non-empty");

    LmdfOut<T> out;
    if (mode == LmdfMode::kNoPre) {
        out.l_c = l0;
    } else {
        const LanguageState<T> l_ref = modulate_with_reference(v_ref, l0, p);
        out.l_c = modulate_with_current(v_cur, l_ref, p);
    }

    switch (mode) {
        case LmdfMode::kFull:
        case LmdfMode::kNoPre:
            out.guide = guidance(v_cur, out.l_c, p);
            break;
        case LmdfMode::kMaxPool:
            // The pooled language vector re-weights the frame feature
            // channel-wise; that product is the per-position guidance.
            out.guide.map = scale_channels(v_cur, pooled_language(out.l_c));
            break;
        case LmdfMode::kShare:
            // Position-independent guidance -> one shared kernel set.
            out.guide.map = tile_channels(pooled_language(out.l_c), v_cur.extent(1),
                                          v_cur.extent(2));
            break;
    }

    std::vector<Tensor<T>> branches;
    branches.reserve(dilations.size() + 1);
    branches.push_back(v_cur);
    const Tensor<T> kernels = position_kernels(out.guide, p);
    for (int d : dilations) branches.push_back(depthwise_dilated_conv(v_cur, kernels, d));
    out.v_out = conv1x1(concat(branches, 0), p.fuse.w, p.fuse.b);
    return out;
}

#define RVSEG_INSTANTIATE_LMDF(T)                                                       \
    template struct LmdfParams<T>;                                                      \
    template LanguageState<T> modulate_with_reference<T>(                               \
        const Tensor<T>&, const LanguageState<T>&, const LmdfParams<T>&);               \
    template LanguageState<T> modulate_with_current<T>(                                 \
        const Tensor<T>&, const LanguageState<T>&, const LmdfParams<T>&);               \
    template GuidanceMap<T> guidance<T>(const Tensor<T>&, const LanguageState<T>&,      \
                                        const LmdfParams<T>&);                          \
    template Tensor<T> position_kernels<T>(const GuidanceMap<T>&, const LmdfParams<T>&); \
    template Tensor<T> dynamic_filter<T>(const Tensor<T>&, const GuidanceMap<T>&,       \
                                         const LmdfParams<T>&, int);                    \
    template LmdfOut<T> lmdf_step<T>(const Tensor<T>&, const Tensor<T>&,                \
                                     const LanguageState<T>&, const LmdfParams<T>&,     \
                                     const std::vector<int>&, LmdfMode);

RVSEG_INSTANTIATE_LMDF(float)
RVSEG_INSTANTIATE_LMDF(double)
#undef RVSEG_INSTANTIATE_LMDF

}  // namespace rvseg
