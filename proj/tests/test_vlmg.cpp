#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "rvseg/ops.hpp"
#include "rvseg/vlmg.hpp"

using namespace rvseg;
using D64 = Tensor<double>;

namespace {

struct Fixture {
    Rng rng{21};
    int d = 8, inner = 8, heads = 2, t_max = 6, n_valid = 4;
    VlmgParams<double> p = VlmgParams<double>::init(d, d, inner, heads, rng);
    LanguageState<double> l;
    D64 v;

    Fixture() {
        l.ids.assign(size_t(t_max), 0);
        for (int i = 0; i < n_valid; ++i) l.ids[size_t(i)] = i + 2;
        l.n_valid = n_valid;
        l.valid = Mask::zeros({t_max});
        for (int i = 0; i < n_valid; ++i) l.valid.v[size_t(i)] = 1;
        l.features = D64::randn({d, t_max}, rng, 0.7);
        v = D64::randn({d, 4, 5}, rng, 0.9);
    }
};

}  // namespace

TEST_SUITE("vlmg") {

TEST_CASE("pixel-normalized affinity columns sum to one") {
    Fixture fx;
    Affinity<double> aff;
    const D64 vt = vision_to_language(fx.v, fx.l, fx.p, &aff);
    CHECK(vt.extent(0) == fx.d);
    CHECK(vt.extent(1) == fx.t_max);

    REQUIRE(aff.values.rank() == 2);
    const int64_t hw = fx.v.extent(1) * fx.v.extent(2);
    REQUIRE(aff.values.extent(aff.axis) == hw);
    const int64_t t = aff.values.extent(1 - aff.axis);
    CHECK(t == fx.t_max);
    for (int64_t j = 0; j < t; ++j) {
        double sum = 0;
        for (int64_t i = 0; i < hw; ++i)
            sum += aff.axis == 0 ? aff.values.at(i, j) : aff.values.at(j, i);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("v_tilde columns stay in the convex hull of pixel features") {
    Fixture fx;
    const D64 vt = vision_to_language(fx.v, fx.l, fx.p);
    const int64_t hw = fx.v.extent(1) * fx.v.extent(2);
    for (int64_t c = 0; c < fx.d; ++c) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (int64_t i = 0; i < hw; ++i) {
            const double val = fx.v.vec()[size_t(c * hw + i)];
            lo = std::min(lo, val);
            hi = std::max(hi, val);
        }
        for (int64_t j = 0; j < fx.t_max; ++j) {
            CHECK(vt.at(c, j) >= lo - 1e-12);
            CHECK(vt.at(c, j) <= hi + 1e-12);
        }
    }
}

TEST_CASE("word-normalized affinity zeroes pad words and sums to one") {
    Fixture fx;
    const auto l_next = co_embed(vision_to_language(fx.v, fx.l, fx.p), fx.l, fx.p);
    Affinity<double> aff;
    const D64 lt = language_to_vision(fx.v, l_next, fx.p, &aff);
    CHECK(lt.extent(0) == fx.d);
    CHECK(lt.extent(1) == fx.v.extent(1));
    CHECK(lt.extent(2) == fx.v.extent(2));

    const int64_t hw = fx.v.extent(1) * fx.v.extent(2);
    REQUIRE(aff.values.extent(0) == fx.t_max);
    REQUIRE(aff.values.extent(1) == hw);
    for (int64_t i = 0; i < hw; ++i) {
        double sum = 0;
        for (int64_t tt = 0; tt < fx.t_max; ++tt) sum += aff.values.at(tt, i);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        for (int64_t tt = fx.n_valid; tt < fx.t_max; ++tt)
            CHECK(aff.values.at(tt, i) == 0.0);  // exactly, not approximately
    }
}

TEST_CASE("l_tilde pixels stay in the hull of valid word features") {
    Fixture fx;
    const auto l_next = co_embed(vision_to_language(fx.v, fx.l, fx.p), fx.l, fx.p);
    const D64 lt = language_to_vision(fx.v, l_next, fx.p);
    const int64_t hw = fx.v.extent(1) * fx.v.extent(2);
    for (int64_t c = 0; c < fx.d; ++c) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (int64_t tt = 0; tt < fx.n_valid; ++tt) {
            lo = std::min(lo, l_next.features.at(c, tt));
            hi = std::max(hi, l_next.features.at(c, tt));
        }
        for (int64_t i = 0; i < hw; ++i) {
            CHECK(lt.vec()[size_t(c * hw + i)] >= lo - 1e-12);
            CHECK(lt.vec()[size_t(c * hw + i)] <= hi + 1e-12);
        }
    }
}

TEST_CASE("co_embed keeps the token bookkeeping") {
    Fixture fx;
    const auto l_next = co_embed(vision_to_language(fx.v, fx.l, fx.p), fx.l, fx.p);
    CHECK(l_next.n_valid == fx.l.n_valid);
    CHECK(l_next.ids == fx.l.ids);
    CHECK(l_next.features.extent(0) == fx.d);
    CHECK(l_next.features.extent(1) == fx.t_max);
}

TEST_CASE("injected output is bounded by the two unit-norm branches") {
    Fixture fx;
    const auto out = vlmg_step(fx.v, fx.l, fx.p);
    CHECK(out.v_bar.extent(0) == fx.d);
    CHECK(out.v_bar.extent(1) == fx.v.extent(1));
    CHECK(out.v_bar.extent(2) == fx.v.extent(2));
    // V_bar = Norm(v) + Norm(conv(cat)): per-position L2 of each branch is 1,
    // so every channel entry lies in [-2, 2].
    for (double x : out.v_bar.vec()) {
        CHECK(x <= 2.0 + 1e-12);
        CHECK(x >= -2.0 - 1e-12);
    }
}

TEST_CASE("a degenerate all-pad state is rejected") {
    Fixture fx;
    fx.l.n_valid = 0;
    std::fill(fx.l.valid.v.begin(), fx.l.valid.v.end(), 0);
    CHECK_THROWS(vlmg_step(fx.v, fx.l, fx.p));
}

}  // TEST_SUITE
