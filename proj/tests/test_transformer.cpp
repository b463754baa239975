#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "rvseg/errors.hpp"
#include "rvseg/ops.hpp"
#include "rvseg/transformer.hpp"

using namespace rvseg;
using D64 = Tensor<double>;

namespace {

std::string write_temp(const std::string& stem, const std::string& body) {
    const std::string path = "/tmp/rvseg_vocab_" + stem + "_" + std::to_string(::getpid());
    std::ofstream(path) << body;
    return path;
}

double max_abs_diff(const D64& a, const D64& b) {
    double m = 0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(a.vec()[size_t(i)] - b.vec()[size_t(i)]));
    return m;
}

}  // namespace

TEST_SUITE("transformer") {

TEST_CASE("tokenize lowercases and splits") {
    CHECK(tokenize("The  RED\tsquare\n") == std::vector<std::string>{"the", "red", "square"});
    CHECK_THROWS_AS(tokenize("   \t\n"), InputError);
}

TEST_CASE("vocab loading validates the reserved lines") {
    const std::string good = write_temp("good", "<pad>\n<unk>\nred\nsquare\n");
    const auto words = load_vocab(good);
    CHECK(words.size() == 4);
    CHECK(words[0] == "<pad>");
    std::remove(good.c_str());

    const std::string bad = write_temp("bad", "red\n<unk>\nsquare\n");
    CHECK_THROWS_AS(load_vocab(bad), IoError);
    std::remove(bad.c_str());

    CHECK_THROWS_AS(load_vocab("/nonexistent/vocab.txt"), IoError);
}

TEST_CASE("token table lookup falls back to <unk>") {
    Rng rng(3);
    auto table = TokenTable<double>::init({"<pad>", "<unk>", "red", "square"}, 8, 6, rng);
    CHECK(table.vocab_size() == 4);
    CHECK(table.id_of("red") == 2);
    CHECK(table.id_of("chartreuse") == 1);
}

TEST_CASE("embed truncates, pads, and flags validity") {
    Rng rng(4);
    auto table = TokenTable<double>::init({"<pad>", "<unk>", "a", "b", "c"}, 8, 3, rng);
    const auto l = embed(table, "a b c a b");  // longer than t_max
    CHECK(l.n_valid == 3);
    CHECK(l.ids == std::vector<int>{2, 3, 4});
    CHECK(l.features.extent(0) == 8);
    CHECK(l.features.extent(1) == 3);

    const auto s = embed(table, "a");
    CHECK(s.n_valid == 1);
    CHECK(s.ids == std::vector<int>{2, 0, 0});
    CHECK(s.valid.at(0));
    CHECK(!s.valid.at(1));
}

TEST_CASE("pad columns carry the pad embedding regardless of position") {
    Rng rng(5);
    auto table = TokenTable<double>::init({"<pad>", "<unk>", "a"}, 4, 5, rng);
    const auto l = embed(table, "a");
    // Columns 1..4 are all pad: identical features even at different positions.
    for (int64_t t = 2; t < 5; ++t)
        for (int64_t d = 0; d < 4; ++d)
            CHECK(l.features.at(d, t) == l.features.at(d, 1));
}

TEST_CASE("msa validates the head split") {
    Rng rng(6);
    auto p = TransformerBlockParams<double>::init(8, rng);
    const D64 x = D64::randn({8, 5}, rng);
    const Mask valid = Mask::ones({5});
    CHECK_THROWS_AS(msa(x, p, 3, valid), ContractError);
    const D64 y = msa(x, p, 2, valid);
    CHECK(y.extent(0) == 8);
    CHECK(y.extent(1) == 5);
}

TEST_CASE("block reduces to identity when output projections vanish") {
    Rng rng(7);
    auto p = TransformerBlockParams<double>::init(8, rng);
    p.wo = D64::zeros({8, 8});
    p.ffn_w2 = D64::zeros({8, 32});
    p.ffn_b2 = D64::zeros({8});
    const D64 x = D64::randn({8, 4}, rng);
    const D64 y = transformer_block(x, p, 2, Mask::ones({4}));
    CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("masked keys cannot influence valid columns") {
    Rng rng(8);
    auto p = TransformerBlockParams<double>::init(8, rng);
    Mask valid = Mask::ones({5});
    valid.v[3] = 0;
    valid.v[4] = 0;

    const D64 x = D64::randn({8, 5}, rng);
    // Overwrite the masked columns with junk; valid outputs must not move.
    std::vector<double> mod = x.vec();
    for (int64_t d = 0; d < 8; ++d) {
        mod[size_t(d * 5 + 3)] = 1e3;
        mod[size_t(d * 5 + 4)] = -7.0;
    }
    const D64 x2 = D64::from_data({8, 5}, std::move(mod));

    const D64 y1 = transformer_block(x, p, 2, valid);
    const D64 y2 = transformer_block(x2, p, 2, valid);
    for (int64_t d = 0; d < 8; ++d)
        for (int64_t t = 0; t < 3; ++t) CHECK(y1.at(d, t) == y2.at(d, t));
}

TEST_CASE("attention rows over valid keys form a convex combination") {
    // With wv = I and wo = I, a one-hot value pattern lets us read the
    // attention weights straight out of the msa output.
    Rng rng(9);
    auto p = TransformerBlockParams<double>::init(4, rng);
    std::vector<double> eye(16, 0.0);
    for (int i = 0; i < 4; ++i) eye[size_t(i * 4 + i)] = 1.0;
    p.wv = D64::from_data({4, 4}, std::vector<double>(eye));
    p.wo = D64::from_data({4, 4}, std::vector<double>(eye));

    std::vector<double> xv(4 * 3, 0.0);
    xv[0 * 3 + 0] = 1.0;  // channel 0 lights token 0 only
    const D64 x = D64::from_data({4, 3}, std::move(xv));
    Mask valid = Mask::ones({3});
    valid.v[2] = 0;

    const D64 y = msa(x, p, 1, valid);
    // Row 0 of y = attention weight that each query places on key 0; weights
    // over the two valid keys are positive and sum with the key-1 weight to 1.
    for (int64_t t = 0; t < 2; ++t) {
        CHECK(y.at(0, t) > 0.0);
        CHECK(y.at(0, t) < 1.0);
    }
}

}  // TEST_SUITE
