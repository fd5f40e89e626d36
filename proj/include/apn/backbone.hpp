#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include "apn/apu.hpp"
#include "apn/cau.hpp"
#include "apn/config.hpp"
#include "apn/tape.hpp"

// U-Net style frame predictor: an encoder over the T stacked input frames,
// optional CAU + APU at one encoder level, and a decoder with skip connections.
namespace apn::backbone {

// Named learned tensors; std::map keeps names in lexicographic order.
using ParamSet = std::map<std::string, Tensor>;

// Names and shapes implied by the config (no values).
std::map<std::string, Shape> param_shapes(const ModelConfig& config);

// Fan-in scaled uniform init; the output layer starts at zero.
ParamSet build(const ModelConfig& config, std::uint64_t seed);

std::size_t param_count(const ParamSet& params);
// FNV-1a over names, shapes and raw bytes.
std::string checksum(const ParamSet& params);

// Parameters placed on a tape as leaves.
class Bound {
 public:
  Bound(Tape& tape, const ParamSet& params, const std::function<bool(const std::string&)>& trainable);
  Var operator[](const std::string& name) const;
  const std::map<std::string, Var>& vars() const { return vars_; }
  // Gradients of the trainable leaves after backward.
  std::map<std::string, Tensor> grads() const;

 private:
  std::map<std::string, Var> vars_;
};

struct Prediction {
  Var frame;                       // [channels x h x w], in [-1, 1]
  std::optional<apu::Result> apu;  // present when the APU is enabled
};

// frames [T x channels x h x w]; the frames are stacked along channels.
Prediction predict(const ModelConfig& config, const Bound& params, Var frames, cau::OpCounter* counter = nullptr);

// Human-readable layer/placement layout, e.g. for the docs table.
std::string insert_points(const ModelConfig& config);

struct Checkpoint {
  json config;  // full run config
  ParamSet params;
};

// "APNCKPT1", u64 LE json length, canonical json, u32 tensor count, then per
// tensor in name order: u32 name length, name, u32 rank, u64 dims, f64 LE data.
void save_checkpoint(const std::filesystem::path& path, const json& config, const ParamSet& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Throws CheckpointMismatch if the tensor names or shapes differ from the config.
void require_compatible(const ModelConfig& config, const ParamSet& params);

}  // namespace apn::backbone
