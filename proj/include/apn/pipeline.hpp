#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "apn/backbone.hpp"
#include "apn/config.hpp"
#include "apn/data.hpp"
#include "apn/scoring.hpp"
#include "apn/train.hpp"

// Glue between the modules: whole-dataset training and scoring.
namespace apn::pipeline {

// Worker cap from APN_THREADS (default 1).
std::size_t worker_count();

// Raw per-frame descriptors for one video.
scoring::RawScores score_video(const ModelConfig& config, const backbone::ParamSet& params,
                               const data::VideoRecord& video);

// Scores every video of `split`, fanning out over videos on up to `threads`
// workers; results do not depend on the worker count.
std::vector<scoring::ScoreRecord> score_split(const RunConfig& config, const backbone::ParamSet& params,
                                              const data::Dataset& dataset, const std::string& split = "test",
                                              std::size_t threads = 1);

struct TrainResult {
  backbone::ParamSet params;
  std::vector<train::LossRow> pretrain_log;
  std::vector<train::LossRow> finetune_log;
};

// Fresh init from `seed`, then the pretrain and APU finetune phases. With a
// non-empty out_dir the checkpoints, states and loss CSVs are written there.
TrainResult train_full(const RunConfig& config, const data::Dataset& dataset, std::uint64_t seed,
                       const std::filesystem::path& out_dir = {});

}  // namespace apn::pipeline
