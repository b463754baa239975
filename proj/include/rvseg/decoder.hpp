#pragma once

#include <array>
#include <string>
#include <vector>

#include "rvseg/layers.hpp"

namespace rvseg {

// Feature-pyramid decoder: five lateral 1x1 transforms to width D_dec, a
// top-down pathway (upsample x2, add, 3x3 smooth) from level 5 down to
// level 1, a single-logit head at level 1 (H/2), and a final bilinear
// upsample to full resolution.
template <typename T>
struct DecoderParams {
    int d_dec = 0;
    std::array<ConvLayer<T>, 5> lateral;  // lateral[i] takes level i+1, [D_dec, C_in]
    std::array<ConvLayer<T>, 4> smooth;   // smooth[i] refines merged level i+1
    ConvLayer<T> head;                    // [1, D_dec]

    // in_widths: channel width of each pyramid level fed to decode().
    static DecoderParams init(const std::vector<int>& in_widths, int d_dec, Rng& rng);

    template <typename F>
    void for_each(const std::string& prefix, F&& f) {
        for (size_t i = 0; i < lateral.size(); ++i)
            lateral[i].for_each(prefix + ".lateral" + std::to_string(i + 1), f);
        for (size_t i = 0; i < smooth.size(); ++i)
            smooth[i].for_each(prefix + ".smooth" + std::to_string(i + 1), f);
        head.for_each(prefix + ".head", f);
    }
};

template <typename T>
struct MaskPrediction {
    Tensor<T> logits;         // [1,H,W]
    Tensor<T> probabilities;  // sigmoid(logits)
    Mask mask;                // [H,W], probability >= 0.5
};

// v1, v2 are raw backbone features (levels 1-2); p3..p5 are the fused
// temporal features (levels 3-5). Spatial sizes must form the /2../32
// pyramid of a common full resolution.
template <typename T>
MaskPrediction<T> decode(const Tensor<T>& p3, const Tensor<T>& p4, const Tensor<T>& p5,
                         const Tensor<T>& v1, const Tensor<T>& v2,
                         const DecoderParams<T>& params);

#define RVSEG_DECLARE_DECODER(T)                                              \
    extern template struct DecoderParams<T>;                                  \
    extern template MaskPrediction<T> decode<T>(                              \
        const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
        const Tensor<T>&, const DecoderParams<T>&);

RVSEG_DECLARE_DECODER(float)
RVSEG_DECLARE_DECODER(double)
#undef RVSEG_DECLARE_DECODER

}  // namespace rvseg
