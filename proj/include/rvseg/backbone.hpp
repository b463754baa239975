#pragma once

#include <array>
#include <string>
#include <vector>

#include "rvseg/layers.hpp"

namespace rvseg {

// Five-stage convolutional pyramid. Each stage halves the spatial size with
// a 4x4/stride-2/pad-1 conv, then refines with a 3x3/stride-1/pad-1 conv,
// ReLU after both. Stage i output is [C_i, H/2^i, W/2^i].
template <typename T>
struct BackboneStage {
    ConvLayer<T> down;  // [C_i, C_{i-1}, 4, 4]
    ConvLayer<T> same;  // [C_i, C_i, 3, 3]

    template <typename F>
    void for_each(const std::string& prefix, F&& f) {
        down.for_each(prefix + ".down", f);
        same.for_each(prefix + ".same", f);
    }
};

template <typename T>
struct BackboneParams {
    std::array<BackboneStage<T>, 5> stages;
    std::vector<int> channels;  // [C1..C5]

    // Stage i input width is C_{i-1} (stage 1 takes RGB). The interleaved
    // encoder feeds stages 4 and 5 width-D fusion outputs instead of raw
    // stage outputs; the model layer enforces C3 = C4 = C5 = D so the same
    // weights serve both the raw extract() pyramid and the interleaved pass.
    static BackboneParams init(const std::vector<int>& channels, Rng& rng);

    template <typename F>
    void for_each(const std::string& prefix, F&& f) {
        for (size_t i = 0; i < stages.size(); ++i)
            stages[i].for_each(prefix + ".stage" + std::to_string(i + 1), f);
    }
};

template <typename T>
struct FeaturePyramid {
    std::array<Tensor<T>, 5> levels;  // levels[i] = V_{i+1}

    const Tensor<T>& v(int i) const { return levels.at(static_cast<size_t>(i - 1)); }
};

// One stage: relu(conv3x3(relu(conv4x4s2(x)))).
template <typename T>
Tensor<T> backbone_stage(const Tensor<T>& x, const BackboneStage<T>& s);

// Full raw pyramid (no language). frame is [3,H,W] with H,W divisible by 32.
template <typename T>
FeaturePyramid<T> extract(const Tensor<T>& frame, const BackboneParams<T>& p);

#define RVSEG_DECLARE_BACKBONE(T)                                                \
    extern template struct BackboneParams<T>;                                    \
    extern template Tensor<T> backbone_stage<T>(const Tensor<T>&,                \
                                                const BackboneStage<T>&);        \
    extern template FeaturePyramid<T> extract<T>(const Tensor<T>&,               \
                                                 const BackboneParams<T>&);

RVSEG_DECLARE_BACKBONE(float)
RVSEG_DECLARE_BACKBONE(double)
#undef RVSEG_DECLARE_BACKBONE

}  // namespace rvseg
