// Command-line front end: self-check, desk-scale overfit training, clip
// inference, mask-directory evaluation, and fixture dumping.
//
// Exit codes: 0 success, 1 suite/metric/training failure, 2 usage error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "rvseg/check.hpp"
#include "rvseg/errors.hpp"
#include "rvseg/image_io.hpp"
#include "rvseg/model.hpp"
#include "rvseg/serialize.hpp"
#include "rvseg/synth.hpp"
#include "rvseg/trainer.hpp"
#include "rvseg/transformer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct Options {
    std::string mode;
    std::string config_path;
    std::string vocab;
    std::string ckpt;
    std::string scene;
    std::string out = ".";
    std::string query;
    std::string pred_dir;
    std::string gt_dir;
    std::string fault;
    std::vector<std::string> frames;
    int steps = 300;
    double lr = 1e-3;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw rvseg::IoError("cannot write " + path.string());
    out << text;
}

int mode_check(const rvseg::ModelConfig& cfg, const Options& opt) {
    if (cfg.dtype != "f64") {
        std::cerr << "check runs the numeric suites in f64 only; pass --dtype f64\n";
        return 2;
    }
    auto results = rvseg::run_check_suites(cfg.seed, opt.fault);
    for (const auto& r : results)
        std::printf("[%s] %-22s %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(),
                    r.detail.c_str());
    const std::string report = rvseg::suites_json(cfg.seed, results);
    std::cout << report << "\n";
    if (opt.out != ".") {
        fs::create_directories(opt.out);
        write_text(fs::path(opt.out) / "check.json", report);
    }
    return rvseg::all_passed(results) ? 0 : 1;
}

template <typename T>
int mode_overfit(const rvseg::ModelConfig& cfg, const Options& opt) {
    if (opt.scene.empty()) {
        std::cerr << "overfit requires --scene\n";
        return 2;
    }
    if (opt.vocab.empty()) {
        std::cerr << "overfit requires --vocab\n";
        return 2;
    }
    auto spec = rvseg::SceneSpec::from_json_file(opt.scene);
    auto clips = rvseg::generate<T>(spec);
    auto samples = rvseg::make_pair_samples(clips);
    auto vocab = rvseg::load_vocab(opt.vocab);

    rvseg::Rng rng(cfg.seed);
    auto params = rvseg::ModelParams<T>::init(cfg, vocab, rng);
    rvseg::SgdHyper hyper;
    hyper.lr = opt.lr;

    auto result = rvseg::train_overfit(
        params, cfg, samples, opt.steps, hyper, 10, [](const rvseg::StepLog& log) {
            std::printf("step %5lld  loss %.6f  mean_iou %.4f\n",
                        static_cast<long long>(log.step), log.loss, log.mean_iou);
            std::fflush(stdout);
        });

    fs::create_directories(opt.out);
    const fs::path out(opt.out);
    rvseg::save_model((out / "checkpoint.itse").string(), cfg, params);

    ordered_json trace = ordered_json::array();
    for (const auto& log : result.trace)
        trace.push_back({{"step", log.step}, {"loss", log.loss}, {"mean_iou", log.mean_iou}});
    write_text(out / "trace.json", trace.dump(2));
    write_text(out / "report.json", result.final_report.json());

    std::cout << result.final_report.table();
    std::cout << result.final_report.json() << "\n";
    return 0;
}

template <typename T>
int mode_infer(rvseg::ModelConfig cfg, const Options& opt) {
    if (opt.ckpt.empty() || opt.frames.empty()) {
        std::cerr << "infer requires --ckpt and --frames\n";
        return 2;
    }
    if (opt.query.empty()) {
        std::cerr << "infer requires a non-empty --query\n";
        return 2;
    }
    if (opt.vocab.empty()) {
        std::cerr << "infer requires --vocab\n";
        return 2;
    }
    auto vocab = rvseg::load_vocab(opt.vocab);
    auto params = rvseg::load_model<T>(opt.ckpt, cfg, vocab);

    std::vector<rvseg::Tensor<T>> frames;
    for (const auto& p : opt.frames) frames.push_back(rvseg::read_ppm<T>(p));
    auto preds = rvseg::run_clip(frames, opt.query, params, cfg);

    fs::create_directories(opt.out);
    const fs::path out(opt.out);
    ordered_json index;
    index["query"] = opt.query;
    index["frames"] = opt.frames;
    index["masks"] = ordered_json::array();
    for (size_t t = 0; t < preds.size(); ++t) {
        char name[32];
        std::snprintf(name, sizeof(name), "mask_%03zu.pgm", t);
        rvseg::write_pgm((out / name).string(), preds[t].mask);
        index["masks"].push_back(name);
    }
    write_text(out / "index.json", index.dump(2));
    std::cout << "wrote " << preds.size() << " masks to " << opt.out << "\n";
    return 0;
}

std::set<std::string> pgm_names(const std::string& dir) {
    if (!fs::is_directory(dir)) throw rvseg::InputError("not a directory: " + dir);
    std::set<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".pgm")
            names.insert(entry.path().filename().string());
    return names;
}

int mode_eval(const Options& opt) {
    if (opt.pred_dir.empty() || opt.gt_dir.empty()) {
        std::cerr << "eval requires --pred and --gt mask directories\n";
        return 2;
    }
    const auto pred_names = pgm_names(opt.pred_dir);
    const auto gt_names = pgm_names(opt.gt_dir);

    bool missing = false;
    for (const auto& n : pred_names)
        if (!gt_names.count(n)) {
            std::cerr << "missing ground-truth counterpart: " << n << "\n";
            missing = true;
        }
    for (const auto& n : gt_names)
        if (!pred_names.count(n)) {
            std::cerr << "missing prediction counterpart: " << n << "\n";
            missing = true;
        }
    if (missing) return 1;
    if (pred_names.empty()) throw rvseg::InputError("no .pgm files to evaluate");

    std::vector<rvseg::SampleEval> evals;
    for (const auto& n : pred_names) {
        auto pred = rvseg::read_pgm_mask((fs::path(opt.pred_dir) / n).string());
        auto gt = rvseg::read_pgm_mask((fs::path(opt.gt_dir) / n).string());
        evals.push_back(rvseg::evaluate_sample(pred, gt));
    }
    auto report = rvseg::aggregate(evals);
    std::cout << report.table();
    std::cout << report.json() << "\n";
    if (opt.out != ".") {
        fs::create_directories(opt.out);
        write_text(fs::path(opt.out) / "report.json", report.json());
    }
    return 0;
}

int mode_dump_fixtures(const Options& opt) {
    if (opt.scene.empty()) {
        std::cerr << "dump-fixtures requires --scene\n";
        return 2;
    }
    auto spec = rvseg::SceneSpec::from_json_file(opt.scene);
    auto samples = rvseg::generate<double>(spec);

    fs::create_directories(opt.out);
    const fs::path out(opt.out);
    write_text(out / "scene.json", spec.to_json());

    ordered_json index = ordered_json::array();
    for (size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const fs::path dir = out / ("sample_" + std::to_string(i));
        fs::create_directories(dir);
        ordered_json entry;
        entry["sample"] = i;
        entry["query"] = s.query;
        entry["target"] = s.target;
        entry["frames"] = ordered_json::array();
        entry["masks"] = ordered_json::array();
        for (size_t t = 0; t < s.frames.size(); ++t) {
            char fname[32], mname[32];
            std::snprintf(fname, sizeof(fname), "frame_%03zu.ppm", t);
            std::snprintf(mname, sizeof(mname), "gt_%03zu.pgm", t);
            rvseg::write_ppm((dir / fname).string(), s.frames[t]);
            rvseg::write_pgm((dir / mname).string(), s.gt[t]);
            entry["frames"].push_back((fs::path("sample_" + std::to_string(i)) / fname).string());
            entry["masks"].push_back((fs::path("sample_" + std::to_string(i)) / mname).string());
        }
        index.push_back(entry);
    }
    write_text(out / "queries.json", index.dump(2));
    std::cout << "wrote " << samples.size() << " samples to " << opt.out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"referring video segmentation: check / overfit / infer / eval / dump-fixtures"};
    Options opt;
    int width = 0;
    std::uint64_t seed = 42;
    std::vector<int> dilations;
    std::string dtype, ablation;

    app.add_option("--mode", opt.mode, "run mode")
        ->required()
        ->check(CLI::IsMember({"check", "overfit", "infer", "eval", "dump-fixtures"}));
    app.add_option("--config", opt.config_path, "model config JSON; explicit flags win");
    app.add_option("--seed", seed, "rng seed (default 42)");
    app.add_option("--steps", opt.steps, "training steps for overfit");
    app.add_option("--width", width,
                   "model width D; also derives the channel plan {D/4,D/2,D,D,D} and D_dec=D");
    app.add_option("--dilations", dilations, "dilation list, e.g. 1,3,5")->delimiter(',');
    app.add_option("--dtype", dtype, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
    app.add_option("--ablation", ablation, "temporal-filter variant")
        ->check(CLI::IsMember({"none", "full", "maxpool", "share", "nopre"}));
    app.add_option("--lr", opt.lr, "SGD learning rate (default 1e-3)");
    app.add_option("--vocab", opt.vocab, "vocabulary file (one token per line)");
    app.add_option("--ckpt", opt.ckpt, "checkpoint path for infer");
    app.add_option("--scene", opt.scene, "scene spec JSON for overfit/dump-fixtures");
    app.add_option("--out", opt.out, "output directory");
    app.add_option("--query", opt.query, "referring expression for infer");
    app.add_option("--frames", opt.frames, "PPM frame paths for infer")->delimiter(',');
    app.add_option("--pred", opt.pred_dir, "predicted-mask directory for eval");
    app.add_option("--gt", opt.gt_dir, "ground-truth-mask directory for eval");
    app.add_option("--fault", opt.fault,
                   "debug: arm a flipped backward rule (matmul|relu) during check")
        ->check(CLI::IsMember({"matmul", "relu"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        rvseg::ModelConfig cfg;
        if (opt.mode == "infer" && !opt.ckpt.empty())
            cfg = rvseg::ModelConfig::from_json(rvseg::read_checkpoint_header(opt.ckpt));
        if (!opt.config_path.empty())
            cfg = rvseg::ModelConfig::from_json_file(opt.config_path);
        if (app.count("--width")) {
            cfg.d = width;
            cfg.channels = {std::max(1, width / 4), std::max(1, width / 2), width, width, width};
            cfg.d_dec = width;
        }
        if (app.count("--seed")) cfg.seed = seed;
        if (app.count("--dilations")) cfg.dilations = dilations;
        if (app.count("--dtype")) cfg.dtype = dtype;
        if (app.count("--ablation")) cfg.ablation = ablation;
        cfg.validate();

        if (opt.mode == "check") return mode_check(cfg, opt);
        if (opt.mode == "eval") return mode_eval(opt);
        if (opt.mode == "dump-fixtures") return mode_dump_fixtures(opt);
        if (opt.mode == "overfit")
            return cfg.dtype == "f64" ? mode_overfit<double>(cfg, opt)
                                      : mode_overfit<float>(cfg, opt);
        if (opt.mode == "infer")
            return cfg.dtype == "f64" ? mode_infer<double>(cfg, opt) : mode_infer<float>(cfg, opt);
        std::cerr << "unknown mode: " << opt.mode << "\n";
        return 2;
    } catch (const rvseg::TrainingError& e) {
        std::cerr << "training aborted: " << e.what() << "\n";
        return 1;
    } catch (const rvseg::InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const rvseg::SceneError& e) {
        std::cerr << "scene error: " << e.what() << "\n";
        return 2;
    } catch (const rvseg::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const rvseg::ContractError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
