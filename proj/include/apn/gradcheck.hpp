#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "apn/config.hpp"
#include "apn/tape.hpp"

// Analytic-vs-central-difference checks over whole subgraphs.
namespace apn::gradcheck {

constexpr double kStep = 1e-5;
constexpr double kTolerance = 1e-4;

struct Report {
  std::string module;
  std::uint64_t seed = 0;
  std::size_t checked = 0;  // coordinates compared
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  bool passed() const { return max_rel_error < kTolerance; }
};

using TensorMap = std::map<std::string, Tensor>;

// Builds the scalar under test on `tape`, placing every entry of `values` as a
// leaf (tracked when `track` is set) and returning those leaves by name.
struct Graph {
  Var loss;
  std::map<std::string, Var> leaves;
};
using Builder = std::function<Graph(Tape& tape, const TensorMap& values, bool track)>;

// Compares backward() against central differences for every coordinate of every input.
Report check(const std::string& module, std::uint64_t seed, const TensorMap& inputs, const Builder& build);

// The small configuration the end-to-end check runs on.
ModelConfig e2e_config();

Report check_apu(std::uint64_t seed);
Report check_cau(std::uint64_t seed);
Report check_losses(std::uint64_t seed);
Report check_e2e(std::uint64_t seed, const ModelConfig& config = e2e_config());

// "apu" | "cau" | "losses" | "e2e"
Report run(const std::string& module, std::uint64_t seed);
const std::vector<std::string>& modules();

}  // namespace apn::gradcheck
