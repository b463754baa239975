#include "rvseg/backbone.hpp"

#include <cmath>

#include "rvseg/errors.hpp"

namespace rvseg {

template <typename T>
ConvLayer<T> ConvLayer<T>::conv(int out_ch, int in_ch, int kh, int kw, Rng& rng,
                                T bias_init) {
    const double fan_in = static_cast<double>(in_ch) * kh * kw;
    const T std = static_cast<T>(std::sqrt(2.0 / fan_in));
    ConvLayer l;
    l.w = Tensor<T>::randn({out_ch, in_ch, kh, kw}, rng, std);
    l.b = Tensor<T>::full({out_ch}, bias_init);
    return l;
}

template <typename T>
ConvLayer<T> ConvLayer<T>::lin(int out_ch, int in_ch, Rng& rng, T bias_init) {
    const T std = static_cast<T>(std::sqrt(2.0 / in_ch));
    ConvLayer l;
    l.w = Tensor<T>::randn({out_ch, in_ch}, rng, std);
    l.b = Tensor<T>::full({out_ch}, bias_init);
    return l;
}

template struct ConvLayer<float>;
template struct ConvLayer<double>;

template <typename T>
BackboneParams<T> BackboneParams<T>::init(const std::vector<int>& channels, Rng& rng) {
    if (channels.size() != 5) throw ContractError("backbone needs exactly 5 stage widths");
    for (int c : channels)
        if (c <= 0) throw ContractError("backbone stage widths must be positive");
    BackboneParams p;
    p.channels = channels;
    int in_ch = 3;
    for (size_t i = 0; i < 5; ++i) {
        const int out_ch = channels[i];
        p.stages[i].down = ConvLayer<T>::conv(out_ch, in_ch, 4, 4, rng);
        p.stages[i].same = ConvLayer<T>::conv(out_ch, out_ch, 3, 3, rng);
        in_ch = out_ch;
    }
    return p;
}

template <typename T>
Tensor<T> backbone_stage(const Tensor<T>& x, const BackboneStage<T>& s) {
    const Tensor<T> half = relu(conv2d(x, s.down.w, s.down.b, /*stride=*/2, /*pad=*/1));
    return relu(conv2d(half, s.same.w, s.same.b, /*stride=*/1, /*pad=*/1));
}

template <typename T>
FeaturePyramid<T> extract(const Tensor<T>& frame, const BackboneParams<T>& p) {
    if (frame.rank() != 3 || frame.extent(0) != 3)
        throw ShapeError("extract expects a [3,H,W] frame, got " + shape_str(frame.shape()));
    const int64_t h = frame.extent(1);
    const int64_t w = frame.extent(2);
    if (h % 32 != 0 || w % 32 != 0)
        throw ShapeError("frame size " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by 32");
    FeaturePyramid<T> pyr;
    Tensor<T> x = frame;
    for (size_t i = 0; i < 5; ++i) {
        x = backbone_stage(x, p.stages[i]);
        pyr.levels[i] = x;
    }
    return pyr;
}

#define RVSEG_INSTANTIATE_BACKBONE(T)                                              \
    template struct BackboneParams<T>;                                             \
    template Tensor<T> backbone_stage<T>(const Tensor<T>&, const BackboneStage<T>&); \
    template FeaturePyramid<T> extract<T>(const Tensor<T>&, const BackboneParams<T>&);

RVSEG_INSTANTIATE_BACKBONE(float)
RVSEG_INSTANTIATE_BACKBONE(double)
#undef RVSEG_INSTANTIATE_BACKBONE

}  // namespace rvseg
