#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <string>
#include <unistd.h>
#include <vector>

#include "rvseg/errors.hpp"
#include "rvseg/model.hpp"
#include "rvseg/ops.hpp"

using namespace rvseg;
using D64 = Tensor<double>;

namespace {

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.d = 8;
    cfg.heads = 2;
    cfg.t_max = 6;
    cfg.channels = {4, 8, 8, 8, 8};
    cfg.dilations = {1, 3};
    cfg.d_dec = 8;
    cfg.seed = 5;
    cfg.dtype = "f64";
    return cfg;
}

const std::vector<std::string> kVocab = {"<pad>", "<unk>", "the", "red",
                                         "square", "on", "left"};

struct Fixture {
    ModelConfig cfg = small_config();
    Rng rng{5};
    ModelParams<double> params = ModelParams<double>::init(cfg, kVocab, rng);
    D64 ref, cur, gt;

    Fixture() {
        Rng data(99);
        ref = D64::randn({3, 32, 32}, data, 0.3);
        cur = D64::randn({3, 32, 32}, data, 0.3);
        std::vector<double> g(32 * 32, 0.0);
        for (int64_t y = 8; y < 20; ++y)
            for (int64_t x = 6; x < 18; ++x) g[size_t(y * 32 + x)] = 1.0;
        gt = D64::from_data({32, 32}, std::move(g));
    }
};

std::string tmp_ckpt(const std::string& stem) {
    return "/tmp/rvseg_model_" + stem + "_" + std::to_string(::getpid()) + ".itse";
}

bool bits_equal(const D64& a, const D64& b) {
    return a.numel() == b.numel() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * size_t(a.numel())) == 0;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("config validation and json round-trip") {
    ModelConfig cfg = small_config();
    CHECK_NOTHROW(cfg.validate());

    const ModelConfig back = ModelConfig::from_json(cfg.to_json());
    CHECK(back.compatible_with(cfg));
    CHECK(back.d == cfg.d);
    CHECK(back.dilations == cfg.dilations);
    CHECK(back.dtype == "f64");

    ModelConfig bad = cfg;
    bad.channels = {4, 8, 8, 8, 16};  // C5 != d
    CHECK_THROWS_AS(bad.validate(), ContractError);
    bad = cfg;
    bad.heads = 3;  // does not divide d
    CHECK_THROWS_AS(bad.validate(), ContractError);
    CHECK_THROWS_AS(ModelConfig::from_json("{not json"), InputError);
    CHECK_THROWS_AS(ModelConfig::from_json_file("/nonexistent/cfg.json"), IoError);
}

TEST_CASE("forward produces a full-resolution prediction") {
    Fixture fx;
    const auto l0 = embed(fx.params.table, "the red square");
    const auto pred = forward(fx.ref, fx.cur, l0, fx.params, fx.cfg);
    CHECK(pred.logits.extent(0) == 1);
    CHECK(pred.logits.extent(1) == 32);
    CHECK(pred.logits.extent(2) == 32);
    for (double v : pred.logits.vec()) CHECK(std::isfinite(v));
}

TEST_CASE("loss at exactly-zero logits is ln 2") {
    Fixture fx;
    MaskPrediction<double> pred;
    pred.logits = D64::zeros({1, 32, 32});
    pred.probabilities = sigmoid(pred.logits);
    const double l = loss(pred, fx.gt).item();
    // ln 2 up to accumulation roundoff over H*W identical terms
    CHECK(l == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("loss rejects fractional ground truth") {
    Fixture fx;
    MaskPrediction<double> pred;
    pred.logits = D64::zeros({1, 32, 32});
    pred.probabilities = sigmoid(pred.logits);
    const D64 bad = D64::full({32, 32}, 0.5);
    CHECK_THROWS_AS(loss(pred, bad), InputError);
}

TEST_CASE("sgd with zero learning rate freezes every parameter") {
    Fixture fx;
    GradStore<double> grads;
    {
        Tape<double> tape;
        TapeScope<double> scope(tape);
        fx.params.for_each([&tape](const std::string&, D64& t) { tape.watch(t); });
        const auto l0 = embed(fx.params.table, "the red square");
        const auto pred = forward(fx.ref, fx.cur, l0, fx.params, fx.cfg);
        grads = tape.backward(loss(pred, fx.gt));
    }
    std::vector<D64> before;
    fx.params.for_each([&](const std::string&, D64& t) { before.push_back(t); });

    TrainState<double> st;
    st.hyper.lr = 0.0;
    sgd_step(fx.params, st, grads);

    size_t i = 0;
    fx.params.for_each([&](const std::string&, D64& t) { CHECK(bits_equal(t, before[i++])); });
}

TEST_CASE("sgd applies momentum and weight decay") {
    // One parameter, one step: v = g + wd*p, p' = p - lr*v.
    ModelConfig cfg = small_config();
    Rng rng(6);
    auto params = ModelParams<double>::init(cfg, kVocab, rng);
    double p0 = 0, g0 = 0;
    params.for_each([&](const std::string& name, D64& t) {
        if (name == "decoder.head.b") p0 = t.vec()[0];
    });

    GradStore<double> grads;
    Fixture fx;
    {
        Tape<double> tape;
        TapeScope<double> scope(tape);
        params.for_each([&tape](const std::string&, D64& t) { tape.watch(t); });
        const auto l0 = embed(params.table, "the red square");
        const auto pred = forward(fx.ref, fx.cur, l0, params, cfg);
        grads = tape.backward(loss(pred, fx.gt));
    }
    params.for_each([&](const std::string& name, D64& t) {
        if (name == "decoder.head.b") g0 = grads.grad(t).vec()[0];
    });

    TrainState<double> st;  // lr 1e-3, momentum 0.9, wd 5e-4
    sgd_step(params, st, grads);
    params.for_each([&](const std::string& name, D64& t) {
        if (name == "decoder.head.b")
            CHECK(t.vec()[0] ==
                  doctest::Approx(p0 - 1e-3 * (g0 + 5e-4 * p0)).epsilon(1e-12));
    });
    CHECK(st.step == 1);
}

TEST_CASE("parameter count is stable for the reference configs") {
    Fixture fx;
    // Frozen totals: catches silent architecture drift.
    CHECK(fx.params.parameter_count() == 21505);

    ModelConfig big;
    big.dtype = "f64";
    Rng rng(1);
    auto params = ModelParams<double>::init(big, {"<pad>", "<unk>", "x"}, rng);
    CHECK(params.parameter_count() == 309265);
}

TEST_CASE("checkpoint round-trip reproduces the forward pass bit-exactly") {
    Fixture fx;
    const std::string path = tmp_ckpt("round");
    save_model(path, fx.cfg, fx.params);

    auto loaded = load_model<double>(path, fx.cfg, kVocab);
    const auto l0a = embed(fx.params.table, "the red square");
    const auto l0b = embed(loaded.table, "the red square");
    const auto a = forward(fx.ref, fx.cur, l0a, fx.params, fx.cfg);
    const auto b = forward(fx.ref, fx.cur, l0b, loaded, fx.cfg);
    CHECK(bits_equal(a.logits, b.logits));
    std::remove(path.c_str());
}

TEST_CASE("checkpoint config mismatches are rejected") {
    Fixture fx;
    const std::string path = tmp_ckpt("mismatch");
    save_model(path, fx.cfg, fx.params);

    ModelConfig other = fx.cfg;
    other.d = 16;
    other.channels = {4, 8, 16, 16, 16};
    other.d_dec = 16;
    CHECK_THROWS_AS(load_model<double>(path, other, kVocab), IoError);
    CHECK_THROWS_AS(load_model<float>(path, fx.cfg, kVocab), IoError);
    CHECK_THROWS_AS(load_model<double>("/nonexistent/x.itse", fx.cfg, kVocab), IoError);
    std::remove(path.c_str());
}

TEST_CASE("run_clip self-references the first frame") {
    Fixture fx;
    const auto preds = run_clip({fx.cur}, "the red square", fx.params, fx.cfg);
    REQUIRE(preds.size() == 1);

    const auto l0 = embed(fx.params.table, "the red square");
    const auto direct = forward(fx.cur, fx.cur, l0, fx.params, fx.cfg);
    CHECK(bits_equal(preds[0].logits, direct.logits));

    CHECK_THROWS_AS(run_clip({}, "the red square", fx.params, fx.cfg), InputError);
}

TEST_CASE("run_clip chains the previous frame as reference") {
    Fixture fx;
    const auto preds = run_clip({fx.ref, fx.cur}, "the red square", fx.params, fx.cfg);
    REQUIRE(preds.size() == 2);
    const auto l0 = embed(fx.params.table, "the red square");
    const auto second = forward(fx.ref, fx.cur, l0, fx.params, fx.cfg);
    CHECK(bits_equal(preds[1].logits, second.logits));
}

}  // TEST_SUITE
