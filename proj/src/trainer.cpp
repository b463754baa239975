#include "rvseg/trainer.hpp"

#include <cmath>
#include <map>

#include "rvseg/errors.hpp"

namespace rvseg {

template <typename T>
std::vector<TrainSample<T>> make_pair_samples(const std::vector<ReferringSample<T>>& clips) {
    std::vector<TrainSample<T>> out;
    for (const ReferringSample<T>& clip : clips) {
        for (size_t t = 0; t < clip.frames.size(); ++t) {
            TrainSample<T> s;
            s.ref = clip.frames[t == 0 ? 0 : t - 1];
            s.cur = clip.frames[t];
            s.gt_mask = clip.gt[t];
            s.gt = mask_to_tensor<T>(clip.gt[t]);
            s.query = clip.query;
            out.push_back(std::move(s));
        }
    }
    return out;
}

namespace {

// Embeds each distinct query once (on the active tape, if any).
template <typename T>
std::map<std::string, LanguageState<T>> embed_queries(
    const ModelParams<T>& params, const std::vector<TrainSample<T>>& samples) {
    std::map<std::string, LanguageState<T>> by_query;
    for (const TrainSample<T>& s : samples)
        if (!by_query.count(s.query)) by_query.emplace(s.query, embed(params.table, s.query));
    return by_query;
}

}  // namespace

template <typename T>
TrainResult<T> train_overfit(ModelParams<T>& params, const ModelConfig& cfg,
                             const std::vector<TrainSample<T>>& samples, int steps,
                             const SgdHyper& hyper, int log_every,
                             const std::function<void(const StepLog&)>& on_log) {
    if (samples.empty()) throw InputError("train_overfit: no samples");
    if (steps < 1) throw InputError("train_overfit: steps must be >= 1");
    if (log_every < 1) log_every = 1;

    TrainResult<T> result;
    TrainState<T> state;
    state.hyper = hyper;

    for (int step = 1; step <= steps; ++step) {
        Tape<T> tape;
        TapeScope<T> scope(tape);
        params.for_each([&tape](const std::string&, Tensor<T>& p) { tape.watch(p); });
        const auto l0 = embed_queries(params, samples);

        Tensor<T> total;
        double iou_sum = 0;
        for (const TrainSample<T>& s : samples) {
            const MaskPrediction<T> pred =
                forward(s.ref, s.cur, l0.at(s.query), params, cfg);
            const Tensor<T> li = loss(pred, s.gt);
            total = total.defined() ? add(total, li) : li;
            iou_sum += iou(pred.mask, s.gt_mask);
        }
        total = scale(total, 1.0 / static_cast<double>(samples.size()));

        const double loss_val = static_cast<double>(total.item());
        if (!std::isfinite(loss_val))
            throw TrainingError("non-finite loss at step " + std::to_string(step));

        GradStore<T> grads = tape.backward(total);
        sgd_step(params, state, grads);

        if (step % log_every == 0 || step == steps) {
            const StepLog log{step, loss_val,
                              iou_sum / static_cast<double>(samples.size())};
            result.trace.push_back(log);
            if (on_log) on_log(log);
        }
    }

    result.final_report = evaluate_samples(params, cfg, samples);
    return result;
}

template <typename T>
MetricReport evaluate_samples(const ModelParams<T>& params, const ModelConfig& cfg,
                              const std::vector<TrainSample<T>>& samples) {
    if (samples.empty()) throw InputError("evaluate_samples: no samples");
    NoRecordScope<T> quiet;
    std::map<std::string, LanguageState<T>> l0;
    std::vector<SampleEval> evals;
    for (const TrainSample<T>& s : samples) {
        if (!l0.count(s.query)) l0.emplace(s.query, embed(params.table, s.query));
        const MaskPrediction<T> pred = forward(s.ref, s.cur, l0.at(s.query), params, cfg);
        evals.push_back(evaluate_sample(pred.mask, s.gt_mask));
    }
    return aggregate(evals);
}

#define RVSEG_INSTANTIATE_TRAINER(T)                                                  \
    template struct TrainSample<T>;                                                   \
    template std::vector<TrainSample<T>> make_pair_samples<T>(                        \
        const std::vector<ReferringSample<T>>&);                                      \
    template struct TrainResult<T>;                                                   \
    template TrainResult<T> train_overfit<T>(ModelParams<T>&, const ModelConfig&,     \
                                             const std::vector<TrainSample<T>>&, int, \
                                             const SgdHyper&, int,                    \
                                             const std::function<void(const StepLog&)>&); \
    template MetricReport evaluate_samples<T>(const ModelParams<T>&, const ModelConfig&, \
                                              const std::vector<TrainSample<T>>&);

RVSEG_INSTANTIATE_TRAINER(float)
RVSEG_INSTANTIATE_TRAINER(double)
#undef RVSEG_INSTANTIATE_TRAINER

}  // namespace rvseg
