#pragma once

#include <string>

#include "rvseg/tensor.hpp"

namespace rvseg {

// Binary PPM (P6, maxval 255). Frames are [3,H,W] with scalars in [0,1];
// writing clamps, reading divides by 255.
template <typename T>
void write_ppm(const std::string& path, const Tensor<T>& frame);

template <typename T>
Tensor<T> read_ppm(const std::string& path);

// Binary PGM (P5, maxval 255). Masks store 0 = background, 255 = foreground;
// reading maps values >= 128 to foreground.
void write_pgm(const std::string& path, const Mask& mask);
Mask read_pgm_mask(const std::string& path);

// Probability map [1,H,W] or [H,W] quantized to 0..255.
template <typename T>
void write_pgm_prob(const std::string& path, const Tensor<T>& prob);

extern template void write_ppm<float>(const std::string&, const Tensor<float>&);
extern template void write_ppm<double>(const std::string&, const Tensor<double>&);
extern template Tensor<float> read_ppm<float>(const std::string&);
extern template Tensor<double> read_ppm<double>(const std::string&);
extern template void write_pgm_prob<float>(const std::string&, const Tensor<float>&);
extern template void write_pgm_prob<double>(const std::string&, const Tensor<double>&);

}  // namespace rvseg
