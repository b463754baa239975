#pragma once

#include <string>
#include <vector>

#include "rvseg/tensor.hpp"

namespace rvseg {

// Deterministic synthetic scenes: colored shapes gliding over a gray canvas,
// with templated referring expressions and pixel-exact ground truth.

enum class ShapeKind { kSquare, kCircle };

struct ShapeSpec {
    ShapeKind kind = ShapeKind::kSquare;
    std::string color;    // red, green, blue, yellow, magenta, cyan, white
    int size = 0;         // side / diameter in pixels
    double x0 = 0, y0 = 0;  // start center (x = column, y = row)
    double vx = 0, vy = 0;  // pixels per frame
};

struct SceneSpec {
    int width = 64;
    int height = 64;
    int frames = 1;
    uint64_t seed = 42;
    std::vector<ShapeSpec> shapes;

    static SceneSpec from_json(const std::string& text);
    static SceneSpec from_json_file(const std::string& path);
    std::string to_json() const;

    // Shape list non-empty, kinds/colors known, sizes positive, every shape
    // fully inside the canvas at every frame. Violations -> SceneError.
    void validate() const;
};

template <typename T>
struct ReferringSample {
    std::vector<Tensor<T>> frames;  // [3,H,W] scalars in [0,1]
    std::string query;              // "the <color> <kind> on the <left|right>"
    std::vector<Mask> gt;           // [H,W] per frame
    int target = 0;                 // index into spec.shapes
};

// RGB in [0,1] for a known color name; SceneError otherwise.
std::array<double, 3> color_rgb(const std::string& name);

// Exact raster of one shape at one frame.
Mask rasterize(const ShapeSpec& shape, int frame, int width, int height);

// One sample per shape, each with the grammar query that uniquely names its
// shape. Two shapes sharing color+kind+side -> SceneError.
template <typename T>
std::vector<ReferringSample<T>> generate(const SceneSpec& spec);

extern template struct ReferringSample<float>;
extern template struct ReferringSample<double>;
extern template std::vector<ReferringSample<float>> generate<float>(const SceneSpec&);
extern template std::vector<ReferringSample<double>> generate<double>(const SceneSpec&);

}  // namespace rvseg
