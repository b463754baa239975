#include "rvseg/synth.hpp"

#include <array>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rvseg/errors.hpp"

namespace rvseg {
namespace {

constexpr double kBackground = 0.2;  // off-zero so features never vanish at init

ShapeKind kind_from_string(const std::string& s) {
    if (s == "square") return ShapeKind::kSquare;
    if (s == "circle") return ShapeKind::kCircle;
    throw SceneError("unknown shape kind: " + s);
}

std::string kind_name(ShapeKind k) {
    return k == ShapeKind::kSquare ? "square" : "circle";
}

// Side of the canvas the shape starts on, for the query template.
std::string side_name(const ShapeSpec& s, int width) {
    return s.x0 < static_cast<double>(width) / 2.0 ? "left" : "right";
}

}  // namespace

std::array<double, 3> color_rgb(const std::string& name) {
    if (name == "red") return {1, 0, 0};
    if (name == "green") return {0, 1, 0};
    if (name == "blue") return {0, 0, 1};
    if (name == "yellow") return {1, 1, 0};
    if (name == "magenta") return {1, 0, 1};
    if (name == "cyan") return {0, 1, 1};
    if (name == "white") return {1, 1, 1};
    throw SceneError("unknown color: " + name);
}

SceneSpec SceneSpec::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw SceneError(std::string("scene JSON parse error: ") + e.what());
    }
    SceneSpec spec;
    try {
        spec.width = j.value("width", 64);
        spec.height = j.value("height", 64);
        spec.frames = j.value("frames", 1);
        spec.seed = j.value("seed", static_cast<uint64_t>(42));
        for (const auto& js : j.at("shapes")) {
            ShapeSpec s;
            s.kind = kind_from_string(js.at("kind").get<std::string>());
            s.color = js.at("color").get<std::string>();
            s.size = js.at("size").get<int>();
            const auto& start = js.at("start");
            s.x0 = start.at(0).get<double>();
            s.y0 = start.at(1).get<double>();
            if (js.contains("velocity")) {
                s.vx = js["velocity"].at(0).get<double>();
                s.vy = js["velocity"].at(1).get<double>();
            }
            spec.shapes.push_back(s);
        }
    } catch (const nlohmann::json::exception& e) {
        throw SceneError(std::string("scene JSON missing/invalid field: ") + e.what());
    }
    spec.validate();
    return spec;
}

SceneSpec SceneSpec::from_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open scene spec: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return from_json(ss.str());
}

std::string SceneSpec::to_json() const {
    nlohmann::ordered_json j;
    j["width"] = width;
    j["height"] = height;
    j["frames"] = frames;
    j["seed"] = seed;
    j["shapes"] = nlohmann::json::array();
    for (const ShapeSpec& s : shapes) {
        nlohmann::ordered_json js;
        js["kind"] = kind_name(s.kind);
        js["color"] = s.color;
        js["size"] = s.size;
        js["start"] = {s.x0, s.y0};
        js["velocity"] = {s.vx, s.vy};
        j["shapes"].push_back(js);
    }
    return j.dump(2);
}

void SceneSpec::validate() const {
    if (width <= 0 || height <= 0) throw SceneError("canvas size must be positive");
    if (frames < 1) throw SceneError("frame count must be >= 1");
    if (shapes.empty()) throw SceneError("scene needs at least one shape");
    for (const ShapeSpec& s : shapes) {
        (void)color_rgb(s.color);
        if (s.size <= 0) throw SceneError("shape size must be positive");
        const double half = static_cast<double>(s.size) / 2.0;
        for (int t = 0; t < frames; ++t) {
            const double cx = s.x0 + t * s.vx;
            const double cy = s.y0 + t * s.vy;
            if (cx - half < 0 || cx + half > width || cy - half < 0 || cy + half > height)
                throw SceneError("shape leaves the canvas at frame " + std::to_string(t));
        }
    }
}

Mask rasterize(const ShapeSpec& shape, int frame, int width, int height) {
    const double cx = shape.x0 + frame * shape.vx;
    const double cy = shape.y0 + frame * shape.vy;
    const double half = static_cast<double>(shape.size) / 2.0;
    Mask m = Mask::zeros({height, width});
    for (int64_t r = 0; r < height; ++r)
        for (int64_t c = 0; c < width; ++c) {
            // Pixel-center convention: pixel (r,c) covers (c+0.5, r+0.5).
            const double px = static_cast<double>(c) + 0.5;
            const double py = static_cast<double>(r) + 0.5;
            bool inside = false;
            if (shape.kind == ShapeKind::kSquare) {
                inside = px >= cx - half && px <= cx + half && py >= cy - half &&
                         py <= cy + half;
            } else {
                const double dx = px - cx;
                const double dy = py - cy;
                inside = dx * dx + dy * dy <= half * half;
            }
            if (inside) m.v[static_cast<size_t>(r * width + c)] = 1;
        }
    return m;
}

template <typename T>
std::vector<ReferringSample<T>> generate(const SceneSpec& spec) {
    spec.validate();

    std::vector<std::string> queries;
    for (const ShapeSpec& s : spec.shapes) {
        const std::string q =
            "the " + s.color + " " + kind_name(s.kind) + " on the " + side_name(s, spec.width);
        for (const std::string& prev : queries)
            if (prev == q) throw SceneError("ambiguous scene: two shapes answer \"" + q + "\"");
        queries.push_back(q);
    }

    // Render frames once; samples share the tensors.
    std::vector<Tensor<T>> frames;
    std::vector<std::vector<Mask>> rasters(spec.shapes.size());
    for (int t = 0; t < spec.frames; ++t) {
        std::vector<T> img(static_cast<size_t>(3 * spec.height * spec.width),
                           static_cast<T>(kBackground));
        for (size_t si = 0; si < spec.shapes.size(); ++si) {
            const Mask m = rasterize(spec.shapes[si], t, spec.width, spec.height);
            const auto rgb = color_rgb(spec.shapes[si].color);
            for (int64_t r = 0; r < spec.height; ++r)
                for (int64_t c = 0; c < spec.width; ++c)
                    if (m.v[static_cast<size_t>(r * spec.width + c)])
                        for (int64_t ch = 0; ch < 3; ++ch)
                            img[static_cast<size_t>((ch * spec.height + r) * spec.width + c)] =
                                static_cast<T>(rgb[static_cast<size_t>(ch)]);
            rasters[si].push_back(std::move(m));
        }
        frames.push_back(
            Tensor<T>::from_data({3, spec.height, spec.width}, std::move(img)));
    }

    std::vector<ReferringSample<T>> samples;
    for (size_t si = 0; si < spec.shapes.size(); ++si) {
        ReferringSample<T> sample;
        sample.frames = frames;
        sample.query = queries[si];
        sample.gt = std::move(rasters[si]);
        sample.target = static_cast<int>(si);
        samples.push_back(std::move(sample));
    }
    return samples;
}

template struct ReferringSample<float>;
template struct ReferringSample<double>;
template std::vector<ReferringSample<float>> generate<float>(const SceneSpec&);
template std::vector<ReferringSample<double>> generate<double>(const SceneSpec&);

}  // namespace rvseg
