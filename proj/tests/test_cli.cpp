// Spawns the real binary; RVSEG_CLI_PATH is injected by the build.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
    const std::string cmd =
        std::string(RVSEG_CLI_PATH) + " " + args + " >/dev/null 2>/dev/null";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& stem)
        : path(fs::path("/tmp") / ("rvseg_cli_" + stem + "_" + std::to_string(::getpid()))) {
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

void write_file(const std::string& path, const std::string& body) {
    std::ofstream(path) << body;
}

const char* kScene = R"({"width": 32, "height": 32, "frames": 2, "seed": 13, "shapes": [
  {"kind": "square", "color": "red", "size": 10, "start": [10, 16], "velocity": [1, 0]}]})";

const char* kVocab = "<pad>\n<unk>\nthe\nred\nsquare\non\nleft\n";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit with code 2") {
    CHECK(run_cli("") == 2);                                   // --mode is required
    CHECK(run_cli("--mode juggle") == 2);                      // not a member
    CHECK(run_cli("--mode check --dtype f32 --seed 1") == 2);  // checks are f64 only
    CHECK(run_cli("--mode check --fault sigmoid") == 2);       // unknown fault target
    CHECK(run_cli("--mode overfit --steps 1") == 2);           // missing --scene
    CHECK(run_cli("--mode eval --pred /tmp") == 2);            // missing --gt
    CHECK(run_cli("--mode infer --ckpt /nonexistent.itse --frames x.ppm --query q "
                  "--vocab /nonexistent.txt") == 2);
}

TEST_CASE("help exits cleanly") {
    CHECK(run_cli("--help") == 0);
}

TEST_CASE("fixtures, training, inference, and evaluation chain together") {
    TempDir dir("chain");
    const std::string scene = dir / "scene.json";
    const std::string vocab = dir / "vocab.txt";
    write_file(scene, kScene);
    write_file(vocab, kVocab);

    const std::string fixtures = dir / "fixtures";
    REQUIRE(run_cli("--mode dump-fixtures --scene " + scene + " --out " + fixtures) == 0);
    CHECK(fs::exists(fixtures + "/queries.json"));
    CHECK(fs::exists(fixtures + "/scene.json"));
    CHECK(fs::exists(fixtures + "/sample_0/frame_000.ppm"));
    CHECK(fs::exists(fixtures + "/sample_0/frame_001.ppm"));
    CHECK(fs::exists(fixtures + "/sample_0/gt_000.pgm"));

    const std::string run = dir / "run";
    REQUIRE(run_cli("--mode overfit --scene " + scene + " --vocab " + vocab +
                    " --steps 10 --width 8 --dtype f64 --seed 3 --out " + run) == 0);
    CHECK(fs::exists(run + "/checkpoint.itse"));
    CHECK(fs::exists(run + "/trace.json"));
    CHECK(fs::exists(run + "/report.json"));

    // Inference pulls its architecture from the checkpoint header.
    const std::string masks = dir / "masks";
    REQUIRE(run_cli("--mode infer --ckpt " + run + "/checkpoint.itse --vocab " + vocab +
                    " --frames " + fixtures + "/sample_0/frame_000.ppm," + fixtures +
                    "/sample_0/frame_001.ppm --query \"the red square on the left\" --out " +
                    masks) == 0);
    CHECK(fs::exists(masks + "/mask_000.pgm"));
    CHECK(fs::exists(masks + "/mask_001.pgm"));
    CHECK(fs::exists(masks + "/index.json"));

    // Self-evaluation of the ground truth is exact.
    const std::string gt = dir / "gt";
    fs::create_directories(gt);
    fs::copy(fixtures + "/sample_0/gt_000.pgm", gt + "/m.pgm");
    const std::string report = dir / "evalout";
    REQUIRE(run_cli("--mode eval --pred " + gt + " --gt " + gt + " --out " + report) == 0);
    std::ifstream in(report + "/report.json");
    std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(body.find("\"mean_iou\": 1.0") != std::string::npos);

    // Mismatched directory listings fail rather than silently skipping.
    const std::string empty = dir / "empty";
    fs::create_directories(empty);
    CHECK(run_cli("--mode eval --pred " + gt + " --gt " + empty) == 1);
}

TEST_CASE("an armed backward fault makes the check suite fail loudly") {
    CHECK(run_cli("--mode check --dtype f64 --seed 42 --fault matmul") == 1);
}

}  // TEST_SUITE
