#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedleak {

using Vec = std::vector<double>;
using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

// Configuration / input validation problems. The CLI maps these to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

inline bool all_finite(const Vec& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Canonical 12-significant-digit rounding. Scores and serialized report
// numbers go through this so outputs are stable against last-ulp input
// perturbations (e.g. uniformly rescaled gradients).
inline double round_sig(double x, int digits = 12) {
  if (x == 0.0 || !std::isfinite(x)) return x;
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, x);
  return std::strtod(buf, nullptr);
}

}  // namespace fedleak
