#pragma once

#include <array>
#include <string>
#include <vector>

#include "rvseg/tensor.hpp"

namespace rvseg {

// Intersection over union of two binary masks; 1.0 when both are empty.
double iou(const Mask& pred, const Mask& gt);

struct BoundaryScore {
    double precision = 0;
    double recall = 0;
    double f = 0;
};

// DAVIS-style contour accuracy. Boundary pixels are mask pixels with a
// 4-neighbor outside the mask or lying on the image border; a boundary
// pixel matches when some opposing boundary pixel lies within Euclidean
// distance tol. Both boundaries empty -> perfect score; exactly one
// empty -> zero.
BoundaryScore boundary_f(const Mask& pred, const Mask& gt, double tol);

// ceil(0.8% of the image diagonal), the DAVIS default.
double default_boundary_tol(int64_t h, int64_t w);

struct SampleEval {
    int64_t intersection = 0;
    int64_t union_count = 0;
    double iou = 0;
    BoundaryScore boundary;
};

// tol < 0 selects default_boundary_tol for the mask's size.
SampleEval evaluate_sample(const Mask& pred, const Mask& gt, double tol = -1.0);

struct MetricReport {
    std::array<double, 5> prec{};  // thresholds 0.5 .. 0.9
    double map_50_95 = 0;
    double overall_iou = 0;
    double mean_iou = 0;  // J
    double mean_f = 0;    // F
    double jf_mean = 0;   // (J + F) / 2

    std::string json() const;
    std::string table() const;
};

// prec@X = fraction of samples with iou strictly above X; map_50_95 averages
// that fraction over thresholds 0.50:0.05:0.95; overall pools intersections
// and unions. Throws InputError on an empty list.
MetricReport aggregate(const std::vector<SampleEval>& samples);

}  // namespace rvseg
