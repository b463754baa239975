#include "rvseg/metrics.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>

#include <json.hpp>

#include "rvseg/errors.hpp"

namespace rvseg {
namespace {

void check_pair(const Mask& pred, const Mask& gt, const char* op) {
    if (!shape_eq(pred.shape, gt.shape))
        throw ShapeError(std::string(op) + ": mask shapes differ: " + shape_str(pred.shape) +
                         " vs " + shape_str(gt.shape));
    if (pred.shape.size() != 2) throw ShapeError(std::string(op) + ": masks must be [H,W]");
}

struct Pixel {
    int64_t r, c;
};

std::vector<Pixel> boundary_pixels(const Mask& m) {
    const int64_t h = m.shape[0];
    const int64_t w = m.shape[1];
    const auto at = [&](int64_t r, int64_t c) -> bool {
        return m.v[static_cast<size_t>(r * w + c)] != 0;
    };
    std::vector<Pixel> out;
    for (int64_t r = 0; r < h; ++r)
        for (int64_t c = 0; c < w; ++c) {
            if (!at(r, c)) continue;
            const bool border = r == 0 || c == 0 || r == h - 1 || c == w - 1;
            if (border || !at(r - 1, c) || !at(r + 1, c) || !at(r, c - 1) || !at(r, c + 1))
                out.push_back({r, c});
        }
    return out;
}

size_t count_matched(const std::vector<Pixel>& from, const std::vector<Pixel>& to,
                     double tol) {
    const double tol2 = tol * tol;
    size_t matched = 0;
    for (const Pixel& p : from)
        for (const Pixel& q : to) {
            const double dr = static_cast<double>(p.r - q.r);
            const double dc = static_cast<double>(p.c - q.c);
            if (dr * dr + dc * dc <= tol2) {
                ++matched;
                break;
            }
        }
    return matched;
}

}  // namespace

double iou(const Mask& pred, const Mask& gt) {
    check_pair(pred, gt, "iou");
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        const bool p = pred.v[i] != 0;
        const bool g = gt.v[i] != 0;
        inter += (p && g) ? 1 : 0;
        uni += (p || g) ? 1 : 0;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double default_boundary_tol(int64_t h, int64_t w) {
    const double diag = std::sqrt(static_cast<double>(h * h + w * w));
    return std::ceil(0.008 * diag);
}

BoundaryScore boundary_f(const Mask& pred, const Mask& gt, double tol) {
    check_pair(pred, gt, "boundary_f");
    const auto pb = boundary_pixels(pred);
    const auto gb = boundary_pixels(gt);
    if (pb.empty() && gb.empty()) return {1.0, 1.0, 1.0};
    if (pb.empty() || gb.empty()) return {0.0, 0.0, 0.0};
    BoundaryScore s;
    s.precision = static_cast<double>(count_matched(pb, gb, tol)) / static_cast<double>(pb.size());
    s.recall = static_cast<double>(count_matched(gb, pb, tol)) / static_cast<double>(gb.size());
    s.f = (s.precision + s.recall) == 0
              ? 0.0
              : 2.0 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}

SampleEval evaluate_sample(const Mask& pred, const Mask& gt, double tol) {
    check_pair(pred, gt, "evaluate_sample");
    SampleEval e;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        const bool p = pred.v[i] != 0;
        const bool g = gt.v[i] != 0;
        e.intersection += (p && g) ? 1 : 0;
        e.union_count += (p || g) ? 1 : 0;
    }
    e.iou = e.union_count == 0
                ? 1.0
                : static_cast<double>(e.intersection) / static_cast<double>(e.union_count);
    if (tol < 0) tol = default_boundary_tol(pred.shape[0], pred.shape[1]);
    e.boundary = boundary_f(pred, gt, tol);
    return e;
}

MetricReport aggregate(const std::vector<SampleEval>& samples) {
    if (samples.empty()) throw InputError("aggregate: no samples");
    const auto n = static_cast<double>(samples.size());
    MetricReport r;
    const auto hits_above = [&](double thr) {
        std::int64_t hits = 0;
        for (const SampleEval& s : samples)
            if (s.iou > thr) ++hits;
        return hits;
    };
    for (size_t i = 0; i < r.prec.size(); ++i)
        r.prec[i] = static_cast<double>(hits_above(0.5 + 0.1 * static_cast<double>(i))) / n;
    // Single division keeps the mean over thresholds exact in floating point.
    std::int64_t map_hits = 0;
    for (int i = 0; i < 10; ++i) map_hits += hits_above(0.50 + 0.05 * i);
    r.map_50_95 = static_cast<double>(map_hits) / (10.0 * n);
    int64_t inter = 0, uni = 0;
    double iou_sum = 0, f_sum = 0;
    for (const SampleEval& s : samples) {
        inter += s.intersection;
        uni += s.union_count;
        iou_sum += s.iou;
        f_sum += s.boundary.f;
    }
    r.overall_iou = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    r.mean_iou = iou_sum / n;
    r.mean_f = f_sum / n;
    r.jf_mean = 0.5 * (r.mean_iou + r.mean_f);
    return r;
}

std::string MetricReport::json() const {
    nlohmann::ordered_json j;
    j["prec@0.5"] = prec[0];
    j["prec@0.6"] = prec[1];
    j["prec@0.7"] = prec[2];
    j["prec@0.8"] = prec[3];
    j["prec@0.9"] = prec[4];
    j["map_50_95"] = map_50_95;
    j["overall_iou"] = overall_iou;
    j["mean_iou"] = mean_iou;
    j["mean_f"] = mean_f;
    j["jf_mean"] = jf_mean;
    return j.dump(2);
}

std::string MetricReport::table() const {
    char buf[512];
    std::string out =
        "  P@0.5   P@0.6   P@0.7   P@0.8   P@0.9     mAP    oIoU    mIoU\n";
    std::snprintf(buf, sizeof(buf), "%7.3f %7.3f %7.3f %7.3f %7.3f %7.3f %7.3f %7.3f\n",
                  prec[0], prec[1], prec[2], prec[3], prec[4], map_50_95, overall_iou,
                  mean_iou);
    out += buf;
    return out;
}

}  // namespace rvseg
