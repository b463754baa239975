#pragma once

#include <array>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rvseg/autodiff.hpp"
#include "rvseg/backbone.hpp"
#include "rvseg/decoder.hpp"
#include "rvseg/lmdf.hpp"
#include "rvseg/vlmg.hpp"

namespace rvseg {

// Architecture + run configuration. The channel plan must satisfy
// C3 = C4 = C5 = D: stages 4 and 5 consume fused width-D maps, and the
// same stage weights also serve the raw extract() pyramid.
struct ModelConfig {
    int d = 32;
    int heads = 4;
    int t_max = 20;
    std::vector<int> channels = {8, 16, 32, 32, 32};
    std::vector<int> dilations = {1, 3, 5};
    int d_dec = 32;
    int c1 = 0;  // affinity inner width; 0 means "use d"
    uint64_t seed = 42;
    std::string dtype = "f32";
    std::string ablation = "none";

    int inner() const { return c1 > 0 ? c1 : d; }
    LmdfMode mode() const { return lmdf_mode_from_string(ablation); }
    void validate() const;

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
    static ModelConfig from_json_file(const std::string& path);

    // Architecture equality (everything except the seed).
    bool compatible_with(const ModelConfig& other) const;
};

template <typename T>
struct ModelParams {
    BackboneParams<T> backbone;
    TokenTable<T> table;
    std::array<VlmgParams<T>, 3> vlmg;  // stages 3,4,5
    std::array<LmdfParams<T>, 3> lmdf;  // stages 3,4,5
    DecoderParams<T> decoder;

    static ModelParams init(const ModelConfig& cfg, std::vector<std::string> vocab,
                            Rng& rng);

    template <typename F>
    void for_each(F&& f) {
        backbone.for_each("backbone", f);
        table.for_each("table", f);
        for (size_t i = 0; i < 3; ++i)
            vlmg[i].for_each("vlmg" + std::to_string(i + 3), f);
        for (size_t i = 0; i < 3; ++i)
            lmdf[i].for_each("lmdf" + std::to_string(i + 3), f);
        decoder.for_each("decoder", f);
    }

    int64_t parameter_count();
    std::vector<std::pair<std::string, Tensor<T>>> named();
};

// Per-frame interleaved encoder pass: stages 1-2 raw, stages 3-5 fused.
template <typename T>
struct EncodeOut {
    Tensor<T> v1, v2;
    std::array<Tensor<T>, 3> v_bar;  // VLMG outputs at stages 3,4,5
    LanguageState<T> l_final;        // L_3
};

template <typename T>
EncodeOut<T> encode_frame(const Tensor<T>& frame, const LanguageState<T>& l0,
                          const ModelParams<T>& params, const ModelConfig& cfg);

// Full two-frame pass. Both frames run the shared encoder from the same L_0;
// per stage the temporal module consumes (reference V_bar, current V_bar,
// L_0); the decoder mixes its outputs with the current frame's raw stage
// 1-2 features.
template <typename T>
MaskPrediction<T> forward(const Tensor<T>& ref_frame, const Tensor<T>& cur_frame,
                          const LanguageState<T>& l0, const ModelParams<T>& params,
                          const ModelConfig& cfg);

// Mean BCE on logits. gt is [H,W] with entries exactly 0 or 1.
template <typename T>
Tensor<T> loss(const MaskPrediction<T>& pred, const Tensor<T>& gt);

template <typename T>
Tensor<T> mask_to_tensor(const Mask& m);

struct SgdHyper {
    double lr = 1e-3;
    double momentum = 0.9;
    double weight_decay = 5e-4;
};

template <typename T>
struct TrainState {
    SgdHyper hyper;
    int64_t step = 0;
    std::unordered_map<std::string, Tensor<T>> velocity;
};

// v <- momentum*v + grad + wd*param; param <- param - lr*v. A non-finite
// gradient aborts with the parameter's name.
template <typename T>
void sgd_step(ModelParams<T>& params, TrainState<T>& state, const GradStore<T>& grads);

// Sequential clip inference: frame 0 self-references, frame t uses t-1.
template <typename T>
std::vector<MaskPrediction<T>> run_clip(const std::vector<Tensor<T>>& frames,
                                        const std::string& query,
                                        const ModelParams<T>& params,
                                        const ModelConfig& cfg);

// Checkpoint = ModelConfig JSON header + named parameter blobs.
template <typename T>
void save_model(const std::string& path, const ModelConfig& cfg, ModelParams<T>& params);

// Rebuilds params from the stored blobs. The stored config must be
// architecture-compatible with `cfg` and dtype must match T, else IoError.
template <typename T>
ModelParams<T> load_model(const std::string& path, const ModelConfig& cfg,
                          std::vector<std::string> vocab);

#define RVSEG_DECLARE_MODEL(T)                                                            \
    extern template struct ModelParams<T>;                                                \
    extern template EncodeOut<T> encode_frame<T>(const Tensor<T>&, const LanguageState<T>&, \
                                                 const ModelParams<T>&, const ModelConfig&); \
    extern template MaskPrediction<T> forward<T>(const Tensor<T>&, const Tensor<T>&,      \
                                                 const LanguageState<T>&,                 \
                                                 const ModelParams<T>&, const ModelConfig&); \
    extern template Tensor<T> loss<T>(const MaskPrediction<T>&, const Tensor<T>&);        \
    extern template Tensor<T> mask_to_tensor<T>(const Mask&);                             \
    extern template struct TrainState<T>;                                                 \
    extern template void sgd_step<T>(ModelParams<T>&, TrainState<T>&, const GradStore<T>&); \
    extern template std::vector<MaskPrediction<T>> run_clip<T>(                           \
        const std::vector<Tensor<T>>&, const std::string&, const ModelParams<T>&,         \
        const ModelConfig&);                                                              \
    extern template void save_model<T>(const std::string&, const ModelConfig&,            \
                                       ModelParams<T>&);                                  \
    extern template ModelParams<T> load_model<T>(const std::string&, const ModelConfig&,  \
                                                 std::vector<std::string>);

RVSEG_DECLARE_MODEL(float)
RVSEG_DECLARE_MODEL(double)
#undef RVSEG_DECLARE_MODEL

}  // namespace rvseg
