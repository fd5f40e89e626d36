#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "apn/tensor.hpp"

namespace apn {

// Seeded generator with a portable double conversion (std distributions are
// implementation-defined, this is not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::size_t below(std::size_t n);
  double normal();

 private:
  std::mt19937_64 engine_;
};

// Derives an independent seed for a named sub-stream ("data", "init", ...).
std::uint64_t substream(std::uint64_t seed, std::string_view name);

Tensor uniform_tensor(Shape shape, Rng& rng, double lo, double hi);

}  // namespace apn
