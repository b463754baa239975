#include "rvseg/decoder.hpp"

#include "rvseg/errors.hpp"

namespace rvseg {

template <typename T>
DecoderParams<T> DecoderParams<T>::init(const std::vector<int>& in_widths, int d_dec,
                                        Rng& rng) {
    if (in_widths.size() != 5) throw ContractError("decoder needs 5 input widths");
    if (d_dec <= 0) throw ContractError("decoder width must be positive");
    DecoderParams p;
    p.d_dec = d_dec;
    for (size_t i = 0; i < 5; ++i)
        p.lateral[i] = ConvLayer<T>::lin(d_dec, in_widths[i], rng);
    for (size_t i = 0; i < 4; ++i)
        p.smooth[i] = ConvLayer<T>::conv(d_dec, d_dec, 3, 3, rng);
    p.head = ConvLayer<T>::lin(1, d_dec, rng, /*bias_init=*/T(0));
    return p;
}

namespace {

template <typename T>
void check_level(const Tensor<T>& x, int level, int64_t h, int64_t w) {
    const int64_t want_h = h >> level;
    const int64_t want_w = w >> level;
    if (x.rank() != 3 || x.extent(1) != want_h || x.extent(2) != want_w)
        throw ShapeError("decode: level " + std::to_string(level) + " expected spatial " +
                         std::to_string(want_h) + "x" + std::to_string(want_w) + ", got " +
                         shape_str(x.shape()));
}

}  // namespace

template <typename T>
MaskPrediction<T> decode(const Tensor<T>& p3, const Tensor<T>& p4, const Tensor<T>& p5,
                         const Tensor<T>& v1, const Tensor<T>& v2,
                         const DecoderParams<T>& params) {
    if (v1.rank() != 3) throw ShapeError("decode: v1 must be [C,H/2,W/2]");
    const int64_t h = v1.extent(1) * 2;
    const int64_t w = v1.extent(2) * 2;
    check_level(v1, 1, h, w);
    check_level(v2, 2, h, w);
    check_level(p3, 3, h, w);
    check_level(p4, 4, h, w);
    check_level(p5, 5, h, w);

    const std::array<const Tensor<T>*, 5> inputs = {&v1, &v2, &p3, &p4, &p5};
    Tensor<T> top = conv1x1(*inputs[4], params.lateral[4].w, params.lateral[4].b);
    for (int level = 4; level >= 1; --level) {
        const auto i = static_cast<size_t>(level - 1);
        const Tensor<T> lat = conv1x1(*inputs[i], params.lateral[i].w, params.lateral[i].b);
        const Tensor<T> merged = add(bilinear_upsample2x(top), lat);
        top = conv2d(merged, params.smooth[i].w, params.smooth[i].b, 1, 1);
    }

    MaskPrediction<T> out;
    out.logits = bilinear_upsample2x(conv1x1(top, params.head.w, params.head.b));
    out.probabilities = sigmoid(out.logits);
    out.mask = Mask::zeros({h, w});
    const T* z = out.logits.data();
    for (int64_t i = 0; i < out.mask.numel(); ++i)
        out.mask.v[static_cast<size_t>(i)] = z[i] >= T(0) ? 1 : 0;
    return out;
}

#define RVSEG_INSTANTIATE_DECODER(T)                                                  \
    template struct DecoderParams<T>;                                                 \
    template MaskPrediction<T> decode<T>(const Tensor<T>&, const Tensor<T>&,          \
                                         const Tensor<T>&, const Tensor<T>&,          \
                                         const Tensor<T>&, const DecoderParams<T>&);

RVSEG_INSTANTIATE_DECODER(float)
RVSEG_INSTANTIATE_DECODER(double)
#undef RVSEG_INSTANTIATE_DECODER

}  // namespace rvseg
