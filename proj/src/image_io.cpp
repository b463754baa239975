#include "rvseg/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "rvseg/errors.hpp"
#include "rvseg/ops.hpp"

namespace rvseg {
namespace {

uint8_t quantize(double v) {
    const double scaled = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
    return static_cast<uint8_t>(scaled);
}

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& is) {
    std::string tok;
    int c = is.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = is.get();
        } else if (std::isspace(c)) {
            c = is.get();
        } else {
            break;
        }
    }
    while (c != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        c = is.get();
    }
    return tok;
}

struct PnmHeader {
    int64_t w = 0, h = 0, maxval = 0;
};

PnmHeader read_header(std::istream& is, const std::string& magic, const std::string& path) {
    if (next_token(is) != magic) throw IoError("not a " + magic + " file: " + path);
    PnmHeader hd;
    try {
        hd.w = std::stoll(next_token(is));
        hd.h = std::stoll(next_token(is));
        hd.maxval = std::stoll(next_token(is));
    } catch (const std::exception&) {
        throw IoError("malformed header in " + path);
    }
    if (hd.w <= 0 || hd.h <= 0) throw IoError("bad image size in " + path);
    if (hd.maxval != 255) throw IoError("unsupported maxval in " + path + " (need 255)");
    return hd;
}

}  // namespace

template <typename T>
void write_ppm(const std::string& path, const Tensor<T>& frame) {
    if (frame.rank() != 3 || frame.extent(0) != 3)
        throw ShapeError("write_ppm expects [3,H,W], got " + shape_str(frame.shape()));
    const int64_t h = frame.extent(1);
    const int64_t w = frame.extent(2);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "P6\n" << w << " " << h << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
    for (int64_t r = 0; r < h; ++r) {
        for (int64_t c = 0; c < w; ++c)
            for (int64_t ch = 0; ch < 3; ++ch)
                row[static_cast<size_t>(c * 3 + ch)] =
                    quantize(static_cast<double>(frame.at(ch, r, c)));
        os.write(reinterpret_cast<const char*>(row.data()),
                 static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw IoError("write failure: " + path);
}

template <typename T>
Tensor<T> read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    const PnmHeader hd = read_header(is, "P6", path);
    std::vector<uint8_t> raw(static_cast<size_t>(hd.w * hd.h * 3));
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!is) throw IoError("truncated pixel data in " + path);
    std::vector<T> data(static_cast<size_t>(3 * hd.h * hd.w));
    for (int64_t r = 0; r < hd.h; ++r)
        for (int64_t c = 0; c < hd.w; ++c)
            for (int64_t ch = 0; ch < 3; ++ch)
                data[static_cast<size_t>((ch * hd.h + r) * hd.w + c)] =
                    static_cast<T>(raw[static_cast<size_t>((r * hd.w + c) * 3 + ch)]) /
                    static_cast<T>(255);
    return Tensor<T>::from_data({3, hd.h, hd.w}, std::move(data));
}

void write_pgm(const std::string& path, const Mask& mask) {
    if (mask.shape.size() != 2) throw ShapeError("write_pgm expects an [H,W] mask");
    const int64_t h = mask.shape[0];
    const int64_t w = mask.shape[1];
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "P5\n" << w << " " << h << "\n255\n";
    std::vector<uint8_t> bytes(mask.v.size());
    for (size_t i = 0; i < mask.v.size(); ++i) bytes[i] = mask.v[i] ? 255 : 0;
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failure: " + path);
}

Mask read_pgm_mask(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    const PnmHeader hd = read_header(is, "P5", path);
    std::vector<uint8_t> raw(static_cast<size_t>(hd.w * hd.h));
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!is) throw IoError("truncated pixel data in " + path);
    Mask m = Mask::zeros({hd.h, hd.w});
    for (size_t i = 0; i < raw.size(); ++i) m.v[i] = raw[i] >= 128 ? 1 : 0;
    return m;
}

template <typename T>
void write_pgm_prob(const std::string& path, const Tensor<T>& prob) {
    Tensor<T> p = prob;
    if (p.rank() == 3 && p.extent(0) == 1) p = reshape(p, {p.extent(1), p.extent(2)});
    if (p.rank() != 2) throw ShapeError("write_pgm_prob expects [H,W] or [1,H,W]");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "P5\n" << p.extent(1) << " " << p.extent(0) << "\n255\n";
    std::vector<uint8_t> bytes(static_cast<size_t>(p.numel()));
    const T* d = p.data();
    for (int64_t i = 0; i < p.numel(); ++i)
        bytes[static_cast<size_t>(i)] = quantize(static_cast<double>(d[i]));
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failure: " + path);
}

template void write_ppm<float>(const std::string&, const Tensor<float>&);
template void write_ppm<double>(const std::string&, const Tensor<double>&);
template Tensor<float> read_ppm<float>(const std::string&);
template Tensor<double> read_ppm<double>(const std::string&);
template void write_pgm_prob<float>(const std::string&, const Tensor<float>&);
template void write_pgm_prob<double>(const std::string&, const Tensor<double>&);

}  // namespace rvseg
