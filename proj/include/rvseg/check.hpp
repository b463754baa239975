#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rvseg {

// Outcome of one self-check battery. `detail` carries the worst observed
// error or the first violated property, so a failing run names its culprit.
struct SuiteResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

// All suites run the f64 path; they are deterministic functions of the seed.
SuiteResult check_op_gradients(std::uint64_t seed);
SuiteResult check_composite_gradients(std::uint64_t seed);
SuiteResult check_filter_oracle(std::uint64_t seed);
SuiteResult check_affinity_contracts(std::uint64_t seed);
SuiteResult check_memory_footprint(std::uint64_t seed);
SuiteResult check_determinism(std::uint64_t seed);
SuiteResult check_pad_invariance(std::uint64_t seed);
SuiteResult check_clip_semantics(std::uint64_t seed);
SuiteResult check_metrics_sanity(std::uint64_t seed);

// Runs every suite in order, converting exceptions into failures. A non-empty
// `fault_op` arms the named backward-rule fault ("matmul" or "relu") for the
// duration, which the gradient suites must then catch and name.
std::vector<SuiteResult> run_check_suites(std::uint64_t seed,
                                          const std::string& fault_op = "");

bool all_passed(const std::vector<SuiteResult>& results);

// {"seed": ..., "all_passed": ..., "suites": [{name, passed, detail}, ...]}
std::string suites_json(std::uint64_t seed, const std::vector<SuiteResult>& results);

}  // namespace rvseg
