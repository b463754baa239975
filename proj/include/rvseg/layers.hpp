#pragma once

#include <string>

#include "rvseg/ops.hpp"
#include "rvseg/rng.hpp"
#include "rvseg/tensor.hpp"

namespace rvseg {

// Weight/bias pair for conv2d ([Cout,Cin,kh,kw]) or conv1x1 ([Cout,Cin]).
// He-normal weights; the small default bias keeps early activations away
// from the zero point of downstream L2 normalization.
template <typename T>
struct ConvLayer {
    Tensor<T> w;
    Tensor<T> b;

    static ConvLayer conv(int out_ch, int in_ch, int kh, int kw, Rng& rng,
                          T bias_init = static_cast<T>(0.01));
    static ConvLayer lin(int out_ch, int in_ch, Rng& rng,
                         T bias_init = static_cast<T>(0.01));

    template <typename F>
    void for_each(const std::string& prefix, F&& f) {
        f(prefix + ".w", w);
        f(prefix + ".b", b);
    }
};

extern template struct ConvLayer<float>;
extern template struct ConvLayer<double>;

}  // namespace rvseg
