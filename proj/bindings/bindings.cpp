// Python bindings (f64 only). NumPy arrays are copied at the boundary in both
// directions: Tensor buffers are immutable and shared, so views would either
// dangle or break that invariant.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <string>
#include <vector>

#include "rvseg/check.hpp"
#include "rvseg/errors.hpp"
#include "rvseg/metrics.hpp"
#include "rvseg/model.hpp"
#include "rvseg/ops.hpp"
#include "rvseg/serialize.hpp"
#include "rvseg/synth.hpp"
#include "rvseg/trainer.hpp"
#include "rvseg/transformer.hpp"

namespace py = pybind11;
using rvseg::Mask;
using rvseg::ModelConfig;
using Tensor = rvseg::Tensor<double>;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
                         int expect_rank, const char* what) {
    if (a.ndim() != expect_rank)
        throw rvseg::InputError(std::string(what) + ": expected rank " +
                                std::to_string(expect_rank) + ", got " +
                                std::to_string(a.ndim()));
    rvseg::Shape shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) {
        if (a.shape(i) < 1)
            throw rvseg::InputError(std::string(what) + ": zero-sized axis");
        shape[static_cast<size_t>(i)] = a.shape(i);
    }
    std::vector<double> data(a.data(), a.data() + a.size());
    return Tensor::from_data(std::move(shape), std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::memcpy(out.mutable_data(), t.data(), sizeof(double) * static_cast<size_t>(t.numel()));
    return out;
}

Mask mask_from_array(const py::array_t<bool, py::array::c_style | py::array::forcecast>& a,
                     const char* what) {
    if (a.ndim() != 2)
        throw rvseg::InputError(std::string(what) + ": expected a 2-D mask");
    rvseg::Shape shape{a.shape(0), a.shape(1)};
    std::vector<std::uint8_t> v(static_cast<size_t>(a.size()));
    for (py::ssize_t i = 0; i < a.size(); ++i) v[static_cast<size_t>(i)] = a.data()[i] ? 1 : 0;
    return Mask::from_data(std::move(shape), std::move(v));
}

py::array_t<bool> array_from_mask(const Mask& m) {
    std::vector<py::ssize_t> shape(m.shape.begin(), m.shape.end());
    py::array_t<bool> out(shape);
    for (std::int64_t i = 0; i < m.numel(); ++i) out.mutable_data()[i] = m.at(i);
    return out;
}

py::dict report_dict(const rvseg::MetricReport& r) {
    py::dict d;
    py::list prec;
    for (double p : r.prec) prec.append(p);
    d["prec"] = prec;
    d["map_50_95"] = r.map_50_95;
    d["overall_iou"] = r.overall_iou;
    d["mean_iou"] = r.mean_iou;
    d["mean_f"] = r.mean_f;
    d["jf_mean"] = r.jf_mean;
    return d;
}

py::dict prediction_dict(const rvseg::MaskPrediction<double>& p) {
    py::dict d;
    d["logits"] = array_from_tensor(p.logits);
    d["probabilities"] = array_from_tensor(p.probabilities);
    d["mask"] = array_from_mask(p.mask);
    return d;
}

// The f64 model plus everything needed to rebuild or persist it.
struct Model {
    ModelConfig cfg;
    std::vector<std::string> vocab;
    rvseg::ModelParams<double> params;

    Model(const std::string& config_json, std::vector<std::string> vocab_in)
        : cfg(ModelConfig::from_json(config_json)), vocab(std::move(vocab_in)) {
        cfg.dtype = "f64";
        cfg.validate();
        rvseg::Rng rng(cfg.seed);
        params = rvseg::ModelParams<double>::init(cfg, vocab, rng);
    }

    Model(const std::string& path, std::vector<std::string> vocab_in, bool /*tag*/)
        : cfg(ModelConfig::from_json(rvseg::read_checkpoint_header(path))),
          vocab(std::move(vocab_in)) {
        if (cfg.dtype != "f64")
            throw rvseg::IoError("python bindings are f64 only; checkpoint is " + cfg.dtype);
        params = rvseg::load_model<double>(path, cfg, vocab);
    }

    void save(const std::string& path) { rvseg::save_model(path, cfg, params); }

    py::list run_clip(const py::array_t<double, py::array::c_style | py::array::forcecast>& frames,
                      const std::string& query) {
        Tensor clip = tensor_from_array(frames, 4, "frames");
        if (clip.extent(1) != 3) throw rvseg::InputError("frames: expected [T,3,H,W]");
        std::vector<Tensor> seq;
        for (std::int64_t t = 0; t < clip.extent(0); ++t)
            seq.push_back(rvseg::reshape(rvseg::slice(clip, 0, t, 1),
                                         {3, clip.extent(2), clip.extent(3)}));
        auto preds = rvseg::run_clip(seq, query, params, cfg);
        py::list out;
        for (const auto& p : preds) out.append(prediction_dict(p));
        return out;
    }

    py::dict forward_pair(
        const py::array_t<double, py::array::c_style | py::array::forcecast>& ref,
        const py::array_t<double, py::array::c_style | py::array::forcecast>& cur,
        const std::string& query) {
        Tensor r = tensor_from_array(ref, 3, "ref");
        Tensor c = tensor_from_array(cur, 3, "cur");
        auto l0 = rvseg::embed(params.table, query);
        return prediction_dict(rvseg::forward(r, c, l0, params, cfg));
    }

    py::list train_on_scene(const std::string& scene_json, int steps, double lr,
                            double momentum, double weight_decay, int log_every) {
        auto spec = rvseg::SceneSpec::from_json(scene_json);
        auto clips = rvseg::generate<double>(spec);
        auto samples = rvseg::make_pair_samples(clips);
        rvseg::SgdHyper hyper{lr, momentum, weight_decay};
        auto result = rvseg::train_overfit(params, cfg, samples, steps, hyper, log_every);
        py::list out;
        for (const auto& log : result.trace) {
            py::dict d;
            d["step"] = log.step;
            d["loss"] = log.loss;
            d["mean_iou"] = log.mean_iou;
            out.append(d);
        }
        return out;
    }

    py::dict evaluate_scene(const std::string& scene_json) {
        auto spec = rvseg::SceneSpec::from_json(scene_json);
        auto samples = rvseg::make_pair_samples(rvseg::generate<double>(spec));
        return report_dict(rvseg::evaluate_samples(params, cfg, samples));
    }

    std::int64_t parameter_count() { return params.parameter_count(); }
    std::string config_json() const { return cfg.to_json(); }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "referring video segmentation core (double precision)";
    m.attr("__version__") = "0.1.0";

    py::register_exception<rvseg::InputError>(m, "InputError", PyExc_ValueError);
    py::register_exception<rvseg::SceneError>(m, "SceneError", PyExc_ValueError);
    py::register_exception<rvseg::ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<rvseg::IoError>(m, "IoError", PyExc_RuntimeError);
    py::register_exception<rvseg::ContractError>(m, "ContractError", PyExc_RuntimeError);
    py::register_exception<rvseg::TrainingError>(m, "TrainingError", PyExc_RuntimeError);

    m.def(
        "check",
        [](std::uint64_t seed, const std::string& fault) {
            py::list out;
            for (const auto& r : rvseg::run_check_suites(seed, fault)) {
                py::dict d;
                d["name"] = r.name;
                d["passed"] = r.passed;
                d["detail"] = r.detail;
                out.append(d);
            }
            return out;
        },
        py::arg("seed") = 42, py::arg("fault") = "",
        "Run the numeric self-check suites; returns one dict per suite.");

    m.def("tokenize", &rvseg::tokenize, py::arg("text"));
    m.def("load_vocab", &rvseg::load_vocab, py::arg("path"));

    m.def(
        "iou",
        [](const py::array_t<bool, py::array::c_style | py::array::forcecast>& pred,
           const py::array_t<bool, py::array::c_style | py::array::forcecast>& gt) {
            return rvseg::iou(mask_from_array(pred, "pred"), mask_from_array(gt, "gt"));
        },
        py::arg("pred"), py::arg("gt"));

    m.def(
        "boundary_f",
        [](const py::array_t<bool, py::array::c_style | py::array::forcecast>& pred,
           const py::array_t<bool, py::array::c_style | py::array::forcecast>& gt, double tol) {
            Mask p = mask_from_array(pred, "pred");
            Mask g = mask_from_array(gt, "gt");
            if (tol < 0) tol = rvseg::default_boundary_tol(p.shape[0], p.shape[1]);
            auto b = rvseg::boundary_f(p, g, tol);
            py::dict d;
            d["precision"] = b.precision;
            d["recall"] = b.recall;
            d["f"] = b.f;
            return d;
        },
        py::arg("pred"), py::arg("gt"), py::arg("tol") = -1.0);

    m.def(
        "evaluate",
        [](const std::vector<py::array_t<bool, py::array::c_style | py::array::forcecast>>& preds,
           const std::vector<py::array_t<bool, py::array::c_style | py::array::forcecast>>& gts,
           double tol) {
            if (preds.size() != gts.size())
                throw rvseg::InputError("evaluate: pred/gt count mismatch");
            std::vector<rvseg::SampleEval> evals;
            for (size_t i = 0; i < preds.size(); ++i)
                evals.push_back(rvseg::evaluate_sample(mask_from_array(preds[i], "pred"),
                                                       mask_from_array(gts[i], "gt"), tol));
            return report_dict(rvseg::aggregate(evals));
        },
        py::arg("preds"), py::arg("gts"), py::arg("tol") = -1.0,
        "Aggregate prec@X / mAP / IoU / boundary metrics over mask pairs.");

    m.def(
        "render_scene",
        [](const std::string& spec_json) {
            auto spec = rvseg::SceneSpec::from_json(spec_json);
            py::list out;
            for (const auto& s : rvseg::generate<double>(spec)) {
                py::dict d;
                d["query"] = s.query;
                d["target"] = s.target;
                py::list frames, gt;
                for (const auto& f : s.frames) frames.append(array_from_tensor(f));
                for (const auto& g : s.gt) gt.append(array_from_mask(g));
                d["frames"] = frames;
                d["gt"] = gt;
                out.append(d);
            }
            return out;
        },
        py::arg("spec_json"),
        "Deterministic synthetic clips: one sample per shape with query and "
        "pixel-exact ground truth.");

    py::class_<Model>(m, "Model")
        .def(py::init<const std::string&, std::vector<std::string>>(), py::arg("config_json"),
             py::arg("vocab"))
        .def_static(
            "load",
            [](const std::string& path, std::vector<std::string> vocab) {
                return Model(path, std::move(vocab), true);
            },
            py::arg("path"), py::arg("vocab"))
        .def("save", &Model::save, py::arg("path"))
        .def("run_clip", &Model::run_clip, py::arg("frames"), py::arg("query"),
             "Sequential clip inference on [T,3,H,W]; frame 0 self-references.")
        .def("forward_pair", &Model::forward_pair, py::arg("ref"), py::arg("cur"),
             py::arg("query"))
        .def("train_on_scene", &Model::train_on_scene, py::arg("scene_json"),
             py::arg("steps"), py::arg("lr") = 1e-3, py::arg("momentum") = 0.9,
             py::arg("weight_decay") = 5e-4, py::arg("log_every") = 10)
        .def("evaluate_scene", &Model::evaluate_scene, py::arg("scene_json"))
        .def_property_readonly("parameter_count", &Model::parameter_count)
        .def_property_readonly("config", &Model::config_json);
}
