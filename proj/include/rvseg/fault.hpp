#pragma once

#include <string>

namespace rvseg::fault {

// Debug-only backward-rule sabotage for exercising the gradient checker:
// while a fault is armed for an op name, that op records a backward rule
// with one flipped sign, so finite-difference checks must flag it.
// Supported targets: "matmul", "relu".
void arm(const std::string& op);
void disarm();
bool armed(const std::string& op);

}  // namespace rvseg::fault
