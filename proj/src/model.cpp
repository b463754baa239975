#include "rvseg/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rvseg/errors.hpp"
#include "rvseg/serialize.hpp"

namespace rvseg {

void ModelConfig::validate() const {
    if (d <= 0) throw ContractError("config: d must be positive");
    if (heads <= 0 || d % heads != 0)
        throw ContractError("config: d must be divisible by heads");
    if (t_max < 1) throw ContractError("config: t_max must be >= 1");
    if (channels.size() != 5) throw ContractError("config: channel plan needs 5 stages");
    for (int c : channels)
        if (c <= 0) throw ContractError("config: channel widths must be positive");
    if (channels[2] != d || channels[3] != d || channels[4] != d)
        throw ContractError(
            "config: stages 3-5 must have width d (they exchange features with the "
            "fusion blocks)");
    if (dilations.empty()) throw ContractError("config: dilations must be non-empty");
    for (int dil : dilations)
        if (dil < 1) throw ContractError("config: dilations must be >= 1");
    if (d_dec <= 0) throw ContractError("config: d_dec must be positive");
    if (c1 < 0) throw ContractError("config: c1 must be >= 0");
    if (dtype != "f32" && dtype != "f64")
        throw InputError("config: dtype must be f32 or f64");
    (void)lmdf_mode_from_string(ablation);
}

std::string ModelConfig::to_json() const {
    nlohmann::ordered_json j;
    j["d"] = d;
    j["heads"] = heads;
    j["t_max"] = t_max;
    j["channels"] = channels;
    j["dilations"] = dilations;
    j["d_dec"] = d_dec;
    j["c1"] = c1;
    j["seed"] = seed;
    j["dtype"] = dtype;
    j["ablation"] = ablation;
    return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("config JSON parse error: ") + e.what());
    }
    ModelConfig cfg;
    try {
        cfg.d = j.value("d", cfg.d);
        cfg.heads = j.value("heads", cfg.heads);
        cfg.t_max = j.value("t_max", cfg.t_max);
        cfg.channels = j.value("channels", cfg.channels);
        cfg.dilations = j.value("dilations", cfg.dilations);
        cfg.d_dec = j.value("d_dec", cfg.d_dec);
        cfg.c1 = j.value("c1", cfg.c1);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.dtype = j.value("dtype", cfg.dtype);
        cfg.ablation = j.value("ablation", cfg.ablation);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("config JSON invalid field: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

ModelConfig ModelConfig::from_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return from_json(ss.str());
}

bool ModelConfig::compatible_with(const ModelConfig& other) const {
    return d == other.d && heads == other.heads && t_max == other.t_max &&
           channels == other.channels && dilations == other.dilations &&
           d_dec == other.d_dec && c1 == other.c1 && dtype == other.dtype &&
           ablation == other.ablation;
}

template <typename T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& cfg, std::vector<std::string> vocab,
                                    Rng& rng) {
    cfg.validate();
    ModelParams p;
    Rng backbone_rng = rng.fork(0);
    Rng table_rng = rng.fork(1);
    p.backbone = BackboneParams<T>::init(cfg.channels, backbone_rng);
    p.table = TokenTable<T>::init(std::move(vocab), cfg.d, cfg.t_max, table_rng);
    const auto n_dil = static_cast<int>(cfg.dilations.size());
    for (size_t i = 0; i < 3; ++i) {
        Rng vlmg_rng = rng.fork(2 + i);
        Rng lmdf_rng = rng.fork(5 + i);
        p.vlmg[i] = VlmgParams<T>::init(cfg.d, cfg.channels[2 + i], cfg.inner(), cfg.heads,
                                        vlmg_rng);
        p.lmdf[i] = LmdfParams<T>::init(cfg.d, cfg.inner(), cfg.heads, n_dil, lmdf_rng);
    }
    Rng dec_rng = rng.fork(8);
    p.decoder = DecoderParams<T>::init(
        {cfg.channels[0], cfg.channels[1], cfg.d, cfg.d, cfg.d}, cfg.d_dec, dec_rng);
    return p;
}

template <typename T>
int64_t ModelParams<T>::parameter_count() {
    int64_t n = 0;
    for_each([&n](const std::string&, Tensor<T>& t) { n += t.numel(); });
    return n;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> ModelParams<T>::named() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for_each([&out](const std::string& name, Tensor<T>& t) { out.emplace_back(name, t); });
    return out;
}

template <typename T>
EncodeOut<T> encode_frame(const Tensor<T>& frame, const LanguageState<T>& l0,
                          const ModelParams<T>& params, const ModelConfig& cfg) {
    (void)cfg;
    EncodeOut<T> out;
    out.v1 = backbone_stage(frame, params.backbone.stages[0]);
    out.v2 = backbone_stage(out.v1, params.backbone.stages[1]);
    Tensor<T> x = backbone_stage(out.v2, params.backbone.stages[2]);
    LanguageState<T> l = l0;
    for (size_t i = 0; i < 3; ++i) {
        VlmgOut<T> fused = vlmg_step(x, l, params.vlmg[i]);
        out.v_bar[i] = fused.v_bar;
        l = std::move(fused.l_next);
        if (i < 2) x = backbone_stage(out.v_bar[i], params.backbone.stages[3 + i]);
    }
    out.l_final = std::move(l);
    return out;
}

template <typename T>
MaskPrediction<T> forward(const Tensor<T>& ref_frame, const Tensor<T>& cur_frame,
                          const LanguageState<T>& l0, const ModelParams<T>& params,
                          const ModelConfig& cfg) {
    if (!shape_eq(ref_frame.shape(), cur_frame.shape()))
        throw ShapeError("forward: frame shapes differ");
    const EncodeOut<T> ref = encode_frame(ref_frame, l0, params, cfg);
    const EncodeOut<T> cur = encode_frame(cur_frame, l0, params, cfg);
    const LmdfMode mode = cfg.mode();
    std::array<Tensor<T>, 3> fused;
    for (size_t i = 0; i < 3; ++i)
        fused[i] = lmdf_step(ref.v_bar[i], cur.v_bar[i], l0, params.lmdf[i], cfg.dilations,
                             mode)
                       .v_out;
    return decode(fused[0], fused[1], fused[2], cur.v1, cur.v2, params.decoder);
}

template <typename T>
Tensor<T> mask_to_tensor(const Mask& m) {
    std::vector<T> data(m.v.size());
    for (size_t i = 0; i < m.v.size(); ++i) data[i] = m.v[i] ? T(1) : T(0);
    return Tensor<T>::from_data(m.shape, std::move(data));
}

template <typename T>
Tensor<T> loss(const MaskPrediction<T>& pred, const Tensor<T>& gt) {
    if (gt.rank() != 2) throw ShapeError("loss: gt must be [H,W]");
    for (int64_t i = 0; i < gt.numel(); ++i) {
        const T v = gt.data()[i];
        if (v != T(0) && v != T(1))
            throw InputError("loss: gt entries must be exactly 0 or 1");
    }
    return bce_with_logits_mean(reshape(pred.logits, gt.shape()), gt);
}

template <typename T>
void sgd_step(ModelParams<T>& params, TrainState<T>& state, const GradStore<T>& grads) {
    const T lr = static_cast<T>(state.hyper.lr);
    const T mom = static_cast<T>(state.hyper.momentum);
    const T wd = static_cast<T>(state.hyper.weight_decay);
    params.for_each([&](const std::string& name, Tensor<T>& p) {
        const Tensor<T> g = grads.grad(p);
        const T* pg = g.data();
        for (int64_t i = 0; i < g.numel(); ++i)
            if (!std::isfinite(static_cast<double>(pg[i])))
                throw TrainingError("non-finite gradient in " + name + " at step " +
                                    std::to_string(state.step));
        auto it = state.velocity.find(name);
        if (it == state.velocity.end())
            it = state.velocity.emplace(name, Tensor<T>::zeros(p.shape())).first;
        const T* pv = it->second.data();
        const T* pp = p.data();
        std::vector<T> v_new(static_cast<size_t>(p.numel()));
        std::vector<T> p_new(static_cast<size_t>(p.numel()));
        for (int64_t i = 0; i < p.numel(); ++i) {
            v_new[static_cast<size_t>(i)] = mom * pv[i] + pg[i] + wd * pp[i];
            p_new[static_cast<size_t>(i)] = pp[i] - lr * v_new[static_cast<size_t>(i)];
        }
        it->second = Tensor<T>::from_data(p.shape(), std::move(v_new));
        p = Tensor<T>::from_data(p.shape(), std::move(p_new));
    });
    ++state.step;
}

template <typename T>
std::vector<MaskPrediction<T>> run_clip(const std::vector<Tensor<T>>& frames,
                                        const std::string& query,
                                        const ModelParams<T>& params,
                                        const ModelConfig& cfg) {
    if (frames.empty()) throw InputError("run_clip: empty clip");
    const LanguageState<T> l0 = embed(params.table, query);
    std::vector<MaskPrediction<T>> preds;
    preds.reserve(frames.size());
    for (size_t t = 0; t < frames.size(); ++t) {
        const Tensor<T>& ref = frames[t == 0 ? 0 : t - 1];
        preds.push_back(forward(ref, frames[t], l0, params, cfg));
    }
    return preds;
}

template <typename T>
void save_model(const std::string& path, const ModelConfig& cfg, ModelParams<T>& params) {
    if (dtype_name(dtype_of<T>()) != cfg.dtype)
        throw ContractError("save_model: params dtype differs from config dtype");
    save_checkpoint<T>(path, cfg.to_json(), params.named());
}

template <typename T>
ModelParams<T> load_model(const std::string& path, const ModelConfig& cfg,
                          std::vector<std::string> vocab) {
    const Checkpoint<T> ck = load_checkpoint<T>(path);
    const ModelConfig stored = ModelConfig::from_json(ck.config_json);
    if (!stored.compatible_with(cfg))
        throw IoError("checkpoint config mismatch: stored " + stored.to_json() +
                      "\nvs requested " + cfg.to_json());
    Rng rng(cfg.seed);
    ModelParams<T> params = ModelParams<T>::init(cfg, std::move(vocab), rng);
    std::unordered_map<std::string, const Tensor<T>*> by_name;
    for (const auto& [name, t] : ck.tensors) {
        if (!by_name.emplace(name, &t).second)
            throw IoError("checkpoint has duplicate tensor: " + name);
    }
    size_t used = 0;
    params.for_each([&](const std::string& name, Tensor<T>& p) {
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw IoError("checkpoint missing tensor: " + name);
        if (!shape_eq(it->second->shape(), p.shape()))
            throw IoError("checkpoint tensor " + name + " has shape " +
                          shape_str(it->second->shape()) + ", expected " +
                          shape_str(p.shape()));
        p = *it->second;
        ++used;
    });
    if (used != by_name.size())
        throw IoError("checkpoint contains unknown tensors (" + std::to_string(by_name.size()) +
                      " stored, " + std::to_string(used) + " consumed)");
    return params;
}

#define RVSEG_INSTANTIATE_MODEL(T)                                                        \
    template struct ModelParams<T>;                                                       \
    template EncodeOut<T> encode_frame<T>(const Tensor<T>&, const LanguageState<T>&,      \
                                          const ModelParams<T>&, const ModelConfig&);     \
    template MaskPrediction<T> forward<T>(const Tensor<T>&, const Tensor<T>&,             \
                                          const LanguageState<T>&, const ModelParams<T>&, \
                                          const ModelConfig&);                            \
    template Tensor<T> loss<T>(const MaskPrediction<T>&, const Tensor<T>&);               \
    template Tensor<T> mask_to_tensor<T>(const Mask&);                                    \
    template struct TrainState<T>;                                                        \
    template void sgd_step<T>(ModelParams<T>&, TrainState<T>&, const GradStore<T>&);      \
    template std::vector<MaskPrediction<T>> run_clip<T>(                                  \
        const std::vector<Tensor<T>>&, const std::string&, const ModelParams<T>&,         \
        const ModelConfig&);                                                              \
    template void save_model<T>(const std::string&, const ModelConfig&, ModelParams<T>&); \
    template ModelParams<T> load_model<T>(const std::string&, const ModelConfig&,         \
                                          std::vector<std::string>);

RVSEG_INSTANTIATE_MODEL(float)
RVSEG_INSTANTIATE_MODEL(double)
#undef RVSEG_INSTANTIATE_MODEL

}  // namespace rvseg
