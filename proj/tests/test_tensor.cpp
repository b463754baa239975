#include <doctest.h>

#include <cmath>
#include <vector>

#include "rvseg/errors.hpp"
#include "rvseg/ops.hpp"
#include "rvseg/rng.hpp"
#include "rvseg/tensor.hpp"

using namespace rvseg;

namespace {

// Naive reference convolution used as an independent oracle.
template <typename T>
std::vector<T> ref_conv2d(const Tensor<T>& x, const Tensor<T>& w, const T* bias, int stride,
                          int pad, std::int64_t ho, std::int64_t wo) {
    const std::int64_t cin = x.extent(0), h = x.extent(1), ww = x.extent(2);
    const std::int64_t cout = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    std::vector<T> out(static_cast<std::size_t>(cout * ho * wo), T(0));
    for (std::int64_t co = 0; co < cout; ++co) {
        for (std::int64_t i = 0; i < ho; ++i) {
            for (std::int64_t j = 0; j < wo; ++j) {
                T acc = bias ? bias[co] : T(0);
                for (std::int64_t ci = 0; ci < cin; ++ci) {
                    for (std::int64_t u = 0; u < kh; ++u) {
                        for (std::int64_t v = 0; v < kw; ++v) {
                            const std::int64_t y = i * stride + u - pad;
                            const std::int64_t z = j * stride + v - pad;
                            if (y < 0 || y >= h || z < 0 || z >= ww) continue;
                            acc += w.at(co, ci, u, v) * x.at(ci, y, z);
                        }
                    }
                }
                out[static_cast<std::size_t>((co * ho + i) * wo + j)] = acc;
            }
        }
    }
    return out;
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("shape validation") {
    CHECK_THROWS_AS(Tensor<double>::from_data({}, {}), ShapeError);
    CHECK_THROWS_AS(Tensor<double>::from_data({0}, {}), ShapeError);
    CHECK_THROWS_AS(Tensor<double>::from_data({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
    CHECK_THROWS_AS(Tensor<double>::from_data({2, -1}, {1.0, 2.0}), ShapeError);
    const Tensor<double> t = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.rank() == 2);
    CHECK(t.numel() == 6);
    CHECK(t.extent(1) == 3);
    CHECK_THROWS_AS(t.extent(2), ShapeError);
    CHECK(t.at(1, 2) == 6.0);
    CHECK_THROWS_AS(t.at(1, 3), ShapeError);
    CHECK_THROWS_AS(t.at(1), ShapeError);
    CHECK_THROWS_AS(t.item(), ShapeError);
    CHECK(Tensor<double>::scalar(7.0).item() == 7.0);
}

TEST_CASE("factories") {
    const Tensor<float> z = Tensor<float>::zeros({2, 2});
    const Tensor<float> o = Tensor<float>::ones({4});
    const Tensor<float> f = Tensor<float>::full({3}, 2.5f);
    for (float v : z.vec()) CHECK(v == 0.0f);
    for (float v : o.vec()) CHECK(v == 1.0f);
    for (float v : f.vec()) CHECK(v == 2.5f);
}

TEST_CASE("randn is deterministic per seed") {
    Rng a(42), b(42), c(43);
    const Tensor<double> ta = Tensor<double>::randn({64}, a);
    const Tensor<double> tb = Tensor<double>::randn({64}, b);
    const Tensor<double> tc = Tensor<double>::randn({64}, c);
    CHECK(ta.vec() == tb.vec());
    CHECK(ta.vec() != tc.vec());
    double mean = 0;
    for (double v : ta.vec()) mean += v;
    mean /= 64.0;
    CHECK(std::abs(mean) < 0.5);
}

TEST_CASE("reshape shares the buffer, slice and transpose copy") {
    const Tensor<double> x = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor<double> r = reshape(x, {3, 2});
    CHECK(r.buffer().get() == x.buffer().get());
    CHECK(r.at(2, 1) == 6.0);
    CHECK_THROWS_AS(reshape(x, {4, 2}), ShapeError);

    const Tensor<double> tr = transpose2d(x);
    CHECK(tr.buffer().get() != x.buffer().get());
    CHECK(tr.shape() == Shape{3, 2});
    CHECK(tr.at(2, 0) == 3.0);
    CHECK(tr.at(0, 1) == 4.0);

    const Tensor<double> s = slice(x, 1, 1, 2);
    CHECK(s.shape() == Shape{2, 2});
    CHECK(s.at(0, 0) == 2.0);
    CHECK(s.at(1, 1) == 6.0);
    CHECK_THROWS_AS(slice(x, 1, 2, 2), ShapeError);
}

TEST_CASE("allocation observer sees fresh buffers only") {
    struct Recorder : AllocObserver {
        std::vector<std::pair<int, std::int64_t>> events;
        void on_alloc(int rank, std::int64_t numel) override { events.emplace_back(rank, numel); }
    } rec;
    {
        AllocScope scope(&rec);
        const Tensor<float> x = Tensor<float>::zeros({4, 5});
        const Tensor<float> y = reshape(x, {20});
        const Tensor<float> z = y;  // copies never allocate
        (void)z;
    }
    REQUIRE(rec.events.size() == 1);
    CHECK(rec.events[0] == std::pair<int, std::int64_t>{2, 20});
    const Tensor<float> after = Tensor<float>::zeros({7});  // outside the scope
    (void)after;
    CHECK(rec.events.size() == 1);
}

TEST_CASE("elementwise arithmetic with trailing broadcast") {
    const Tensor<double> a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
    const Tensor<double> b = Tensor<double>::from_data({2}, {10, 20});
    const Tensor<double> s = add(a, b);
    CHECK(s.vec() == std::vector<double>{11, 22, 13, 24});
    CHECK(sub(a, Tensor<double>::scalar(1.0)).vec() == std::vector<double>{0, 1, 2, 3});
    CHECK(mul(a, b).vec() == std::vector<double>{10, 40, 30, 80});
    CHECK(scale(a, -2.0).vec() == std::vector<double>{-2, -4, -6, -8});
    const Tensor<double> bad = Tensor<double>::from_data({3}, {1, 2, 3});
    CHECK_THROWS_AS(add(a, bad), ShapeError);
    // Broadcast works trailing-first: [2,2] + [2,1] is not a suffix match.
    const Tensor<double> col = Tensor<double>::from_data({2, 1}, {1, 2});
    CHECK_THROWS_AS(add(a, col), ShapeError);
}

TEST_CASE("channel helpers") {
    const Tensor<double> x =
        Tensor<double>::from_data({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    const Tensor<double> v = Tensor<double>::from_data({2}, {2, 10});
    CHECK(scale_channels(x, v).vec() == std::vector<double>{2, 4, 6, 8, 50, 60, 70, 80});
    CHECK(tile_channels(v, 1, 3).vec() == std::vector<double>{2, 2, 2, 10, 10, 10});
    const Tensor<double> m = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor<double> bias = Tensor<double>::from_data({2}, {10, 20});
    CHECK(add_row_bias(m, bias).vec() == std::vector<double>{11, 12, 13, 24, 25, 26});
}

TEST_CASE("reductions") {
    const Tensor<double> x = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(sum_axis(x, 0).vec() == std::vector<double>{5, 7, 9});
    CHECK(sum_axis(x, 1).vec() == std::vector<double>{6, 15});
    CHECK(sum_axis(x, 1).shape() == Shape{2});
    CHECK(sum_axis(Tensor<double>::from_data({3}, {1, 2, 4}), 0).shape() == Shape{1});
    CHECK(sum_all(x).item() == 21.0);
    CHECK(mean_all(x).item() == 3.5);
}

TEST_CASE("concat and its shape checks") {
    const Tensor<double> a = Tensor<double>::from_data({1, 2}, {1, 2});
    const Tensor<double> b = Tensor<double>::from_data({2, 2}, {3, 4, 5, 6});
    const Tensor<double> c = concat<double>({a, b}, 0);
    CHECK(c.shape() == Shape{3, 2});
    CHECK(c.vec() == std::vector<double>{1, 2, 3, 4, 5, 6});
    const Tensor<double> d = concat<double>({b, b}, 1);
    CHECK(d.shape() == Shape{2, 4});
    CHECK(d.vec() == std::vector<double>{3, 4, 3, 4, 5, 6, 5, 6});
    CHECK_THROWS_AS(concat<double>({a, Tensor<double>::ones({2, 3})}, 0), ShapeError);
    CHECK_THROWS_AS(concat<double>({}, 0), ShapeError);
}

TEST_CASE("matmul") {
    const Tensor<double> a = Tensor<double>::from_data({1, 2}, {1, 2});
    const Tensor<double> b = Tensor<double>::from_data({2, 1}, {3, 4});
    CHECK(matmul(a, b).item() == 11.0);
    const Tensor<double> c = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor<double> d =
        Tensor<double>::from_data({3, 2}, {7, 8, 9, 10, 11, 12});
    CHECK(matmul(c, d).vec() == std::vector<double>{58, 64, 139, 154});
    CHECK_THROWS_AS(matmul(c, a), ShapeError);
    CHECK_THROWS_AS(matmul(c, reshape(d, {2, 3})), ShapeError);
}

TEST_CASE("softmax matches frozen values and normalizes") {
    const Tensor<double> x = Tensor<double>::from_data({3}, {1, 2, 3});
    const Tensor<double> y = softmax(x, 0);
    CHECK(y.at(0) == doctest::Approx(0.09003057317038046).epsilon(1e-12));
    CHECK(y.at(1) == doctest::Approx(0.24472847105479767).epsilon(1e-12));
    CHECK(y.at(2) == doctest::Approx(0.6652409557748219).epsilon(1e-12));

    // Large magnitudes must not overflow thanks to max subtraction.
    const Tensor<double> big = Tensor<double>::from_data({2}, {1000.0, 1001.0});
    const Tensor<double> yb = softmax(big, 0);
    CHECK(std::isfinite(yb.at(0)));
    CHECK(yb.at(0) + yb.at(1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("masked softmax zeroes masked entries and rejects empty slices") {
    const Tensor<double> x = Tensor<double>::from_data({4}, {1, 2, 3, 4});
    const Mask m = Mask::from_data({4}, {1, 1, 0, 1});
    const Tensor<double> y = softmax(x, 0, m);
    CHECK(y.at(2) == 0.0);
    CHECK(y.at(0) == doctest::Approx(0.04201006613406605).epsilon(1e-12));
    CHECK(y.at(1) == doctest::Approx(0.11419519938459449).epsilon(1e-12));
    CHECK(y.at(3) == doctest::Approx(0.8437947344813395).epsilon(1e-12));
    CHECK(y.at(0) + y.at(1) + y.at(3) == doctest::Approx(1.0).epsilon(1e-12));

    const Mask none = Mask::from_data({4}, {0, 0, 0, 0});
    CHECK_THROWS_AS(softmax(x, 0, none), DegenerateSliceError);

    // 2-D input with an axis mask: each row is normalized independently.
    const Tensor<double> x2 = Tensor<double>::from_data({2, 4}, {1, 2, 3, 4, 4, 3, 2, 1});
    const Tensor<double> y2 = softmax(x2, 1, m);
    CHECK(y2.at(0, 2) == 0.0);
    CHECK(y2.at(1, 2) == 0.0);
    CHECK(y2.at(0, 0) + y2.at(0, 1) + y2.at(0, 3) == doctest::Approx(1.0).epsilon(1e-12));

    const Mask wrong = Mask::from_data({3}, {1, 1, 1});
    CHECK_THROWS_AS(softmax(x2, 1, wrong), ShapeError);
}

TEST_CASE("l2_normalize") {
    const Tensor<double> x = Tensor<double>::from_data({2}, {3, 4});
    const Tensor<double> y = l2_normalize(x, 0);
    CHECK(y.at(0) == doctest::Approx(0.6).epsilon(1e-9));
    CHECK(y.at(1) == doctest::Approx(0.8).epsilon(1e-9));

    // A zero vector maps to zero (denominator is norm + eps).
    const Tensor<double> z = Tensor<double>::zeros({3});
    const Tensor<double> zn = l2_normalize(z, 0);
    for (double v : zn.vec()) CHECK(v == 0.0);

    // Per-position normalization over the channel axis of a [C,H,W] map.
    const Tensor<double> m = Tensor<double>::from_data({2, 1, 2}, {3, 5, 4, 12});
    const Tensor<double> ym = l2_normalize(m, 0);
    CHECK(ym.at(0, 0, 0) == doctest::Approx(0.6).epsilon(1e-9));
    CHECK(ym.at(1, 0, 0) == doctest::Approx(0.8).epsilon(1e-9));
    CHECK(ym.at(0, 0, 1) == doctest::Approx(5.0 / 13.0).epsilon(1e-9));
    CHECK(ym.at(1, 0, 1) == doctest::Approx(12.0 / 13.0).epsilon(1e-9));
}

TEST_CASE("layer_norm_cols") {
    const Tensor<double> x = Tensor<double>::from_data({2, 2}, {1, 0, 3, 4});
    const Tensor<double> gamma = Tensor<double>::ones({2});
    const Tensor<double> beta = Tensor<double>::zeros({2});
    const Tensor<double> y = layer_norm_cols(x, gamma, beta, 1e-5);
    // Column 0 holds {1,3}: mean 2, var 1 -> roughly {-1, +1}.
    CHECK(y.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(y.at(1, 0) == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(y.at(0, 1) == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(y.at(1, 1) == doctest::Approx(1.0).epsilon(1e-4));
    const Tensor<double> b2 = Tensor<double>::from_data({2}, {5, 7});
    const Tensor<double> y2 = layer_norm_cols(x, gamma, b2, 1e-5);
    CHECK(y2.at(0, 0) == doctest::Approx(4.0).epsilon(1e-4));
    CHECK(y2.at(1, 0) == doctest::Approx(8.0).epsilon(1e-4));
}

TEST_CASE("conv2d frozen values and geometry contract") {
    const Tensor<double> x =
        Tensor<double>::from_data({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    const Tensor<double> w = Tensor<double>::ones({1, 1, 2, 2});
    const Tensor<double> y = conv2d(x, w, 1, 0);
    CHECK(y.shape() == Shape{1, 2, 2});
    CHECK(y.vec() == std::vector<double>{12, 16, 24, 28});

    // Non-integral geometry is rejected, not rounded.
    const Tensor<double> x5 = Tensor<double>::ones({1, 5, 5});
    const Tensor<double> k2 = Tensor<double>::ones({1, 1, 2, 2});
    CHECK_THROWS_AS(conv2d(x5, k2, 2, 0), ShapeError);

    // Exact halving with the 4x4/stride-2/pad-1 geometry.
    const Tensor<double> x4 = Tensor<double>::ones({1, 4, 4});
    const Tensor<double> k4 = Tensor<double>::ones({1, 1, 4, 4});
    const Tensor<double> yh = conv2d(x4, k4, 2, 1);
    CHECK(yh.shape() == Shape{1, 2, 2});
    CHECK(yh.vec() == std::vector<double>{9, 9, 9, 9});
}

TEST_CASE("conv2d and conv1x1 match a naive reference") {
    Rng rng(7);
    const Tensor<double> x = Tensor<double>::randn({3, 6, 8}, rng);
    const Tensor<double> w = Tensor<double>::randn({4, 3, 3, 3}, rng);
    const Tensor<double> b = Tensor<double>::randn({4}, rng);
    const Tensor<double> y = conv2d(x, w, b, 1, 1);
    REQUIRE(y.shape() == Shape{4, 6, 8});
    const std::vector<double> ref = ref_conv2d(x, w, b.data(), 1, 1, 6, 8);
    for (std::size_t i = 0; i < ref.size(); ++i) {
        CHECK(y.vec()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }

    const Tensor<double> w1 = Tensor<double>::randn({5, 3}, rng);
    const Tensor<double> y1 = conv1x1(x, w1);
    REQUIRE(y1.shape() == Shape{5, 6, 8});
    // conv1x1 is conv2d with a 1x1 kernel.
    const Tensor<double> w1r = reshape(w1, {5, 3, 1, 1});
    const std::vector<double> ref1 = ref_conv2d<double>(x, w1r, nullptr, 1, 0, 6, 8);
    for (std::size_t i = 0; i < ref1.size(); ++i) {
        CHECK(y1.vec()[i] == doctest::Approx(ref1[i]).epsilon(1e-12));
    }
}

TEST_CASE("strided conv halves odd-free extents exactly") {
    Rng rng(11);
    const Tensor<double> x = Tensor<double>::randn({2, 8, 8}, rng);
    const Tensor<double> w = Tensor<double>::randn({3, 2, 4, 4}, rng);
    const Tensor<double> y = conv2d(x, w, 2, 1);
    REQUIRE(y.shape() == Shape{3, 4, 4});
    const std::vector<double> ref = ref_conv2d<double>(x, w, nullptr, 2, 1, 4, 4);
    for (std::size_t i = 0; i < ref.size(); ++i) {
        CHECK(y.vec()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
}

TEST_CASE("depthwise_dilated_conv applies per-position kernels") {
    // One channel, 3x3 input, kernels that pick out the center everywhere.
    Tensor<double> x = Tensor<double>::from_data({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    std::vector<double> kdata(1 * 9 * 9, 0.0);
    // k[0, u=1, v=1, :, :] = 1 -> identity.
    for (int i = 0; i < 9; ++i) kdata[static_cast<std::size_t>((1 * 3 + 1) * 9 + i)] = 1.0;
    const Tensor<double> k = Tensor<double>::from_data({1, 3, 3, 3, 3}, kdata);
    CHECK(depthwise_dilated_conv(x, k, 1).vec() == x.vec());
    // Dilation beyond the border only sees zeros, so identity still holds.
    CHECK(depthwise_dilated_conv(x, k, 5).vec() == x.vec());

    // A kernel reading the left neighbor shifts the row right.
    std::vector<double> kl(1 * 9 * 9, 0.0);
    for (int i = 0; i < 9; ++i) kl[static_cast<std::size_t>((1 * 3 + 0) * 9 + i)] = 1.0;
    const Tensor<double> ks = Tensor<double>::from_data({1, 3, 3, 3, 3}, kl);
    CHECK(depthwise_dilated_conv(x, ks, 1).vec() ==
          std::vector<double>{0, 1, 2, 0, 4, 5, 0, 7, 8});

    CHECK_THROWS_AS(depthwise_dilated_conv(x, ks, 0), ShapeError);
    CHECK_THROWS_AS(depthwise_dilated_conv(Tensor<double>::ones({2, 3, 3}), ks, 1), ShapeError);
}

TEST_CASE("generate_position_kernels matches a naive reference") {
    Rng rng(13);
    const std::int64_t c = 3, h = 2, w = 4;
    const Tensor<double> wt = Tensor<double>::randn({3, 3, c, c}, rng);
    const Tensor<double> g = Tensor<double>::randn({c, h, w}, rng);
    const Tensor<double> out = generate_position_kernels(wt, g);
    REQUIRE(out.shape() == Shape{c, 3, 3, h, w});
    for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t u = 0; u < 3; ++u) {
            for (std::int64_t v = 0; v < 3; ++v) {
                for (std::int64_t i = 0; i < h; ++i) {
                    for (std::int64_t j = 0; j < w; ++j) {
                        double acc = 0;
                        for (std::int64_t e = 0; e < c; ++e) {
                            acc += wt.at(u, v, ch, e) * g.at(e, i, j);
                        }
                        CHECK(out.at(ch, u, v, i, j) == doctest::Approx(acc).epsilon(1e-12));
                    }
                }
            }
        }
    }
}

TEST_CASE("bilinear_upsample2x frozen 2x2 -> 4x4") {
    const Tensor<double> x = Tensor<double>::from_data({1, 2, 2}, {1, 2, 3, 4});
    const Tensor<double> y = bilinear_upsample2x(x);
    REQUIRE(y.shape() == Shape{1, 4, 4});
    const std::vector<double> expect{1.0, 1.25, 1.75, 2.0,  1.5, 1.75, 2.25, 2.5,
                                     2.5, 2.75, 3.25, 3.5,  3.0, 3.25, 3.75, 4.0};
    for (std::size_t i = 0; i < expect.size(); ++i) {
        CHECK(y.vec()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
}

TEST_CASE("embed_tokens gathers columns") {
    const Tensor<double> table = Tensor<double>::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
    const Tensor<double> e = embed_tokens(table, {2, 0, 2});
    CHECK(e.shape() == Shape{2, 3});
    CHECK(e.vec() == std::vector<double>{5, 1, 5, 6, 2, 6});
    CHECK_THROWS_AS(embed_tokens(table, {3}), InputError);
    CHECK_THROWS_AS(embed_tokens(table, {-1}), InputError);
    CHECK_THROWS_AS(embed_tokens(table, {}), InputError);
}

TEST_CASE("masked_max_cols") {
    const Tensor<double> x = Tensor<double>::from_data({2, 3}, {1, 5, 3, 9, 2, 8});
    const Mask m = Mask::from_data({3}, {1, 0, 1});
    CHECK(masked_max_cols(x, m).vec() == std::vector<double>{3, 9});
    CHECK_THROWS_AS(masked_max_cols(x, Mask::from_data({3}, {0, 0, 0})),
                    DegenerateSliceError);
}

TEST_CASE("bce_with_logits_mean") {
    const Tensor<double> z = Tensor<double>::zeros({2});
    const Tensor<double> t = Tensor<double>::from_data({2}, {0, 1});
    CHECK(bce_with_logits_mean(z, t).item() ==
          doctest::Approx(0.6931471805599453).epsilon(1e-12));
    // Extreme logits stay finite.
    const Tensor<double> ze = Tensor<double>::from_data({2}, {1000, -1000});
    const Tensor<double> te = Tensor<double>::from_data({2}, {1, 0});
    CHECK(bce_with_logits_mean(ze, te).item() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::isfinite(bce_with_logits_mean(scale(ze, -1.0), te).item()));
    CHECK_THROWS_AS(bce_with_logits_mean(z, Tensor<double>::zeros({3})), ShapeError);
}

TEST_CASE("sigmoid and relu") {
    const Tensor<double> x = Tensor<double>::from_data({3}, {-2, 0, 3});
    const Tensor<double> s = sigmoid(x);
    CHECK(s.at(1) == 0.5);
    CHECK(s.at(0) == doctest::Approx(0.11920292202211755).epsilon(1e-12));
    CHECK(s.at(2) == doctest::Approx(0.9525741268224334).epsilon(1e-12));
    CHECK(std::isfinite(sigmoid(Tensor<double>::from_data({1}, {-745.0})).item()));
    CHECK(relu(x).vec() == std::vector<double>{0, 0, 3});
}

TEST_CASE("binarize uses a strict threshold") {
    const Tensor<double> x = Tensor<double>::from_data({4}, {0.4, 0.5, 0.5000001, 0.9});
    const Mask m = binarize(x, 0.5);
    CHECK(m.v == std::vector<std::uint8_t>{0, 0, 1, 1});
}

}  // TEST_SUITE
