#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "apn/backbone.hpp"
#include "apn/config.hpp"
#include "apn/data.hpp"

namespace apn::train {

using GradMap = std::map<std::string, Tensor>;

// AdamW moments for the trainable tensors plus the constants they were built with.
struct OptimState {
  GradMap m;
  GradMap v;
  std::uint64_t step = 0;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

OptimState make_state(const TrainSettings& settings, double lr);

// One decoupled-decay update of every tensor that has a gradient:
//   p <- p (1 - lr wd) - lr mhat / (sqrt(vhat) + eps)
// Tensors without an entry in `grads` are left untouched.
void adamw_step(backbone::ParamSet& params, const GradMap& grads, OptimState& state);

// Scales all gradients so their joint L2 norm is at most max_norm; returns the
// norm before scaling. max_norm <= 0 disables clipping.
double clip_global_norm(GradMap& grads, double max_norm);

// '*' matches any run of characters.
bool glob_match(const std::string& pattern, const std::string& name);

enum class Phase { pretrain, apu_finetune };
const char* phase_name(Phase phase);
Phase parse_phase(const std::string& name);  // "pretrain" | "apu" | "apu_finetune"

struct TrainPlan {
  Phase phase = Phase::pretrain;
  std::size_t epochs = 0;
  std::size_t batch_size = 4;
  double lr = 1e-4;
  std::vector<std::string> frozen;
  std::size_t checkpoint_every = 5;  // epochs; 0 = only the final checkpoint
  std::uint64_t seed = 0;

  bool is_frozen(const std::string& name) const;
};

TrainPlan make_plan(const RunConfig& config, Phase phase, std::uint64_t seed);

struct LossRow {
  std::uint64_t step = 0;
  double frame = 0.0;
  double compact = 0.0;
  double diversity = 0.0;
  double covariance = 0.0;
  double total = 0.0;
};

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRow>& rows);
std::vector<LossRow> read_loss_csv(const std::filesystem::path& path);

// Mean loss and gradient over one mini-batch.
struct BatchResult {
  LossRow loss;
  GradMap grads;
};

BatchResult batch_gradients(const RunConfig& config, const backbone::ParamSet& params,
                            const std::vector<const data::ClipSample*>& batch,
                            const std::function<bool(const std::string&)>& trainable);

// Sample order for one epoch: a seeded permutation that depends only on
// (seed, phase, epoch), so a resumed run draws the same order.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, Phase phase, std::size_t epoch);

struct PhaseState {
  backbone::ParamSet params;
  OptimState optim;
  std::size_t epochs_done = 0;
  std::vector<LossRow> log;
};

// Written beside every checkpoint so the phase can continue from it.
void save_resume_state(const std::filesystem::path& path, const TrainPlan& plan, const PhaseState& state);
PhaseState load_resume_state(const std::filesystem::path& path, const TrainPlan& plan,
                             const backbone::ParamSet& params);

struct PhaseOutputs {
  std::filesystem::path dir;       // empty: keep everything in memory
  json config;                     // stored inside every checkpoint
};

// Runs the remaining epochs of `plan` starting from `state`. Checkpoints land
// in outputs.dir as <phase>_epochNNN.ckpt every checkpoint_every epochs and
// <phase>.ckpt at the end, each with a .state companion. Raises NonFiniteLoss
// with the offending step; verifies frozen tensors are byte-identical at the end.
PhaseState run_phase(const TrainPlan& plan, const RunConfig& config, PhaseState state,
                     const std::vector<data::ClipSample>& samples, const PhaseOutputs& outputs = {});

PhaseState fresh_state(const RunConfig& config, const TrainPlan& plan, backbone::ParamSet params);

// Training windows from every video of the train split, in manifest order.
std::vector<data::ClipSample> training_samples(const data::Dataset& dataset, std::size_t window);

}  // namespace apn::train
