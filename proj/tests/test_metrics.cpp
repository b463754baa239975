#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "rvseg/errors.hpp"
#include "rvseg/metrics.hpp"
#include "rvseg/rng.hpp"

using namespace rvseg;

namespace {

Mask rect(int64_t h, int64_t w, int64_t r0, int64_t r1, int64_t c0, int64_t c1) {
    Mask m = Mask::zeros({h, w});
    for (int64_t r = r0; r < r1; ++r)
        for (int64_t c = c0; c < c1; ++c) m.v[static_cast<size_t>(r * w + c)] = 1;
    return m;
}

// Pred keeps the first `keep` pixels of gt in row-major order: intersection
// = keep, union = |gt|, iou = keep / |gt| exactly.
Mask subset(const Mask& gt, int64_t keep) {
    Mask m = Mask::zeros(gt.shape);
    int64_t taken = 0;
    for (int64_t i = 0; i < gt.numel() && taken < keep; ++i)
        if (gt.at(i)) {
            m.v[static_cast<size_t>(i)] = 1;
            ++taken;
        }
    return m;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("iou basics") {
    const Mask a = rect(8, 8, 2, 6, 2, 6);  // 16 px
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(Mask::zeros({8, 8}), Mask::zeros({8, 8})) == 1.0);
    CHECK(iou(Mask::zeros({8, 8}), a) == 0.0);
    const Mask half = rect(8, 8, 2, 6, 2, 4);  // left half, 8 px
    CHECK(iou(half, a) == 0.5);
    const Mask shifted = rect(8, 8, 2, 6, 4, 8);  // overlap 8, union 24
    CHECK(iou(shifted, a) == doctest::Approx(8.0 / 24.0).epsilon(1e-12));
}

TEST_CASE("hand-counted five-sample aggregate") {
    // ious by construction: 1.0, 18/25 = 0.72, 11/20 = 0.55, 6/20 = 0.30, 0.
    const Mask gt1 = rect(16, 16, 2, 7, 2, 7);    // 25 px
    const Mask gt2 = rect(16, 16, 2, 7, 2, 7);
    const Mask gt3 = rect(16, 16, 1, 5, 1, 6);    // 20 px
    const Mask gt4 = rect(16, 16, 8, 12, 8, 13);  // 20 px
    const Mask gt5 = rect(16, 16, 0, 3, 0, 3);    // 9 px
    const Mask pr5 = rect(16, 16, 10, 13, 10, 13);  // disjoint 9 px

    std::vector<SampleEval> evals = {
        evaluate_sample(gt1, gt1),
        evaluate_sample(subset(gt2, 18), gt2),
        evaluate_sample(subset(gt3, 11), gt3),
        evaluate_sample(subset(gt4, 6), gt4),
        evaluate_sample(pr5, gt5),
    };
    CHECK(evals[1].iou == 0.72);
    CHECK(evals[2].iou == 0.55);
    CHECK(evals[3].iou == doctest::Approx(0.30).epsilon(1e-12));

    const MetricReport rep = aggregate(evals);
    // prec@X counts ious strictly above X.
    CHECK(rep.prec[0] == 0.6);  // 1.0, .72, .55
    CHECK(rep.prec[1] == 0.4);  // 1.0, .72
    CHECK(rep.prec[2] == 0.4);  // 0.72 > 0.70 still counts
    CHECK(rep.prec[3] == 0.2);
    CHECK(rep.prec[4] == 0.2);
    // Per sample, thresholds 0.50:0.05:0.95 passed: 10, 5, 1, 0, 0.
    CHECK(rep.map_50_95 == 16.0 / 50.0);
    // Pooled: (25 + 18 + 11 + 6 + 0) / (25 + 25 + 20 + 20 + 18).
    CHECK(rep.overall_iou == 60.0 / 108.0);
    CHECK(rep.mean_iou == doctest::Approx((1.0 + 0.72 + 0.55 + 0.30 + 0.0) / 5).epsilon(1e-12));
    CHECK(rep.jf_mean == doctest::Approx((rep.mean_iou + rep.mean_f) / 2).epsilon(1e-12));
}

TEST_CASE("aggregate rejects empty input") {
    CHECK_THROWS_AS(aggregate({}), InputError);
}

TEST_CASE("fuzzed aggregates keep structural identities") {
    Rng rng(99);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 1 + static_cast<int>(rng.uniform() * 7);
        std::vector<SampleEval> evals;
        for (int i = 0; i < n; ++i) {
            const Mask gt = rect(12, 12, 1, 1 + 1 + int(rng.uniform() * 9),
                                 1, 1 + 1 + int(rng.uniform() * 9));
            const int64_t keep = static_cast<int64_t>(rng.uniform() * double(gt.count() + 1));
            evals.push_back(evaluate_sample(subset(gt, keep), gt, 1.0));
        }
        const MetricReport rep = aggregate(evals);
        for (int k = 1; k < 5; ++k) CHECK(rep.prec[k] <= rep.prec[k - 1]);
        CHECK(rep.map_50_95 <= rep.prec[0] + 1e-12);
        CHECK(rep.mean_iou >= 0.0);
        CHECK(rep.mean_iou <= 1.0);
        CHECK(rep.overall_iou >= 0.0);
        CHECK(rep.overall_iou <= 1.0);
    }
}

TEST_CASE("boundary F on hand cases") {
    const Mask sq = rect(16, 16, 4, 10, 4, 10);
    SUBCASE("identical masks are perfect") {
        const BoundaryScore b = boundary_f(sq, sq, 1.0);
        CHECK(b.precision == 1.0);
        CHECK(b.recall == 1.0);
        CHECK(b.f == 1.0);
    }
    SUBCASE("both empty is perfect, one empty is zero") {
        const Mask empty = Mask::zeros({16, 16});
        CHECK(boundary_f(empty, empty, 1.0).f == 1.0);
        CHECK(boundary_f(sq, empty, 1.0).f == 0.0);
        CHECK(boundary_f(empty, sq, 1.0).f == 0.0);
    }
    SUBCASE("one-pixel shift within tolerance") {
        const Mask moved = rect(16, 16, 5, 11, 4, 10);
        CHECK(boundary_f(moved, sq, 1.5).f == 1.0);
        CHECK(boundary_f(moved, sq, 0.5).f < 1.0);
    }
}

TEST_CASE("default boundary tolerance") {
    // ceil(0.008 * diagonal)
    CHECK(default_boundary_tol(64, 64) == std::ceil(0.008 * std::sqrt(64.0 * 64 + 64 * 64)));
    CHECK(default_boundary_tol(480, 854) == std::ceil(0.008 * std::hypot(480.0, 854.0)));
}

TEST_CASE("report serialization carries every field") {
    const Mask a = rect(8, 8, 2, 6, 2, 6);
    const MetricReport rep = aggregate({evaluate_sample(a, a)});
    const std::string js = rep.json();
    for (const char* key : {"prec@0.5", "prec@0.9", "map_50_95", "overall_iou", "mean_iou",
                            "mean_f", "jf_mean"})
        CHECK(js.find(key) != std::string::npos);
    CHECK(rep.table().find("P@0.5") != std::string::npos);
}

}  // TEST_SUITE
