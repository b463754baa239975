#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <unistd.h>

#include "rvseg/errors.hpp"
#include "rvseg/rng.hpp"
#include "rvseg/serialize.hpp"
#include "rvseg/tensor.hpp"

using namespace rvseg;

namespace {

std::string tmp_file(const std::string& stem) {
    return "/tmp/rvseg_ser_" + stem + "_" + std::to_string(::getpid()) + ".bin";
}

struct FileGuard {
    std::string path;
    ~FileGuard() { std::remove(path.c_str()); }
};

}  // namespace

TEST_SUITE("serialize") {

TEST_CASE("blob round-trip is bit-exact") {
    Rng rng(123);
    const auto t = Tensor<double>::randn({3, 4, 5}, rng);
    std::stringstream ss;
    write_blob(ss, t);
    const auto back = read_blob<double>(ss);
    REQUIRE(shape_eq(back.shape(), t.shape()));
    CHECK(std::memcmp(back.data(), t.data(), sizeof(double) * t.numel()) == 0);
}

TEST_CASE("special values survive") {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const double inf = std::numeric_limits<double>::infinity();
    const auto t = Tensor<double>::from_data({5}, {nan, inf, -inf, -0.0, 1e-308});
    std::stringstream ss;
    write_blob(ss, t);
    const auto back = read_blob<double>(ss);
    CHECK(std::memcmp(back.data(), t.data(), sizeof(double) * 5) == 0);
    CHECK(std::signbit(back.at(3)));
}

TEST_CASE("dtype is enforced") {
    Rng rng(1);
    std::stringstream ss;
    write_blob(ss, Tensor<float>::randn({4}, rng));
    CHECK(peek_blob_dtype(ss) == Dtype::F32);
    CHECK_THROWS_AS(read_blob<double>(ss), IoError);
}

TEST_CASE("corrupt streams are rejected") {
    Rng rng(2);
    std::stringstream good;
    write_blob(good, Tensor<double>::randn({2, 2}, rng));
    const std::string bytes = good.str();

    SUBCASE("bad magic") {
        std::string bad = bytes;
        bad[0] = 'X';
        std::stringstream ss(bad);
        CHECK_THROWS_AS(read_blob<double>(ss), IoError);
    }
    SUBCASE("truncated payload") {
        std::stringstream ss(bytes.substr(0, bytes.size() - 3));
        CHECK_THROWS_AS(read_blob<double>(ss), IoError);
    }
    SUBCASE("empty stream") {
        std::stringstream ss;
        CHECK_THROWS_AS(read_blob<double>(ss), IoError);
    }
}

TEST_CASE("tensor file round-trip") {
    FileGuard g{tmp_file("tensor")};
    Rng rng(7);
    const auto t = Tensor<float>::randn({6, 2}, rng);
    save_tensor(g.path, t);
    const auto back = load_tensor<float>(g.path);
    CHECK(std::memcmp(back.data(), t.data(), sizeof(float) * t.numel()) == 0);
    CHECK_THROWS_AS(load_tensor<float>("/nonexistent/dir/x.itse"), IoError);
}

TEST_CASE("checkpoint keeps header and named blobs in order") {
    FileGuard g{tmp_file("ckpt")};
    Rng rng(9);
    const std::string header = R"({"d":8,"note":"verbatim"})";
    std::vector<std::pair<std::string, Tensor<double>>> tensors;
    tensors.emplace_back("alpha.w", Tensor<double>::randn({2, 3}, rng));
    tensors.emplace_back("beta.b", Tensor<double>::randn({4}, rng));
    save_checkpoint(g.path, header, tensors);

    CHECK(read_checkpoint_header(g.path) == header);
    const auto ck = load_checkpoint<double>(g.path);
    CHECK(ck.config_json == header);
    REQUIRE(ck.tensors.size() == 2);
    CHECK(ck.tensors[0].first == "alpha.w");
    CHECK(ck.tensors[1].first == "beta.b");
    for (size_t i = 0; i < 2; ++i)
        CHECK(std::memcmp(ck.tensors[i].second.data(), tensors[i].second.data(),
                          sizeof(double) * tensors[i].second.numel()) == 0);
}

TEST_CASE("checkpoint header errors") {
    CHECK_THROWS_AS(read_checkpoint_header("/nonexistent/x.itse"), IoError);
    FileGuard g{tmp_file("short")};
    std::ofstream(g.path, std::ios::binary) << "\x02";  // not even a length
    CHECK_THROWS_AS(read_checkpoint_header(g.path), IoError);
}

}  // TEST_SUITE
