#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rvseg/metrics.hpp"
#include "rvseg/model.hpp"
#include "rvseg/synth.hpp"

namespace rvseg {

// One (reference frame, current frame, ground truth, query) training unit.
// The query is kept as text because the embedding table trains: it must be
// re-embedded on the tape every step.
template <typename T>
struct TrainSample {
    Tensor<T> ref, cur;
    Tensor<T> gt;  // [H,W], exactly 0/1
    Mask gt_mask;
    std::string query;
};

// Expands clips into per-frame pairs (frame 0 self-references).
template <typename T>
std::vector<TrainSample<T>> make_pair_samples(const std::vector<ReferringSample<T>>& clips);

struct StepLog {
    int64_t step = 0;   // 1-based
    double loss = 0;
    double mean_iou = 0;  // training IoU at this step's predictions
};

template <typename T>
struct TrainResult {
    std::vector<StepLog> trace;  // every log_every steps plus the final step
    MetricReport final_report;   // post-training evaluation on the samples
};

// Full-batch SGD overfit loop: each step embeds the queries, accumulates the
// mean loss over all samples on one tape, backprops, and updates. Non-finite
// loss aborts with the step number. Deterministic given (params, samples).
template <typename T>
TrainResult<T> train_overfit(ModelParams<T>& params, const ModelConfig& cfg,
                             const std::vector<TrainSample<T>>& samples, int steps,
                             const SgdHyper& hyper, int log_every = 10,
                             const std::function<void(const StepLog&)>& on_log = nullptr);

// Inference + evaluation over samples (no recording).
template <typename T>
MetricReport evaluate_samples(const ModelParams<T>& params, const ModelConfig& cfg,
                              const std::vector<TrainSample<T>>& samples);

#define RVSEG_DECLARE_TRAINER(T)                                                        \
    extern template struct TrainSample<T>;                                              \
    extern template std::vector<TrainSample<T>> make_pair_samples<T>(                   \
        const std::vector<ReferringSample<T>>&);                                        \
    extern template struct TrainResult<T>;                                              \
    extern template TrainResult<T> train_overfit<T>(                                    \
        ModelParams<T>&, const ModelConfig&, const std::vector<TrainSample<T>>&, int,   \
        const SgdHyper&, int, const std::function<void(const StepLog&)>&);              \
    extern template MetricReport evaluate_samples<T>(                                   \
        const ModelParams<T>&, const ModelConfig&, const std::vector<TrainSample<T>>&);

RVSEG_DECLARE_TRAINER(float)
RVSEG_DECLARE_TRAINER(double)
#undef RVSEG_DECLARE_TRAINER

}  // namespace rvseg
