#include "apn/pipeline.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

#include "apn/errors.hpp"

namespace apn::pipeline {

std::size_t worker_count() {
  const char* env = std::getenv("APN_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw InvalidConfig(std::string("APN_THREADS must be a positive integer, got '") + env + "'");
  return static_cast<std::size_t>(n);
}

scoring::RawScores score_video(const ModelConfig& config, const backbone::ParamSet& params,
                               const data::VideoRecord& video) {
  scoring::RawScores raw;
  raw.video_id = video.id;
  for (const data::ClipSample& clip : data::window(video.video, config.window)) {
    Tape tape;
    backbone::Bound bound(tape, params, nullptr);
    backbone::Prediction pred = backbone::predict(config, bound, tape.constant(clip.inputs));
    raw.frame_index.push_back(clip.target_index);
    raw.labels.push_back(clip.label);
    raw.psnr.push_back(scoring::psnr(pred.frame.value(), clip.target));
    if (pred.apu) {
      raw.feature_error.push_back(scoring::feature_error(pred.apu->encoding_nc.value(), pred.apu->prototypes.value(),
                                                         pred.apu->scores.value()));
    }
  }
  return raw;
}

std::vector<scoring::ScoreRecord> score_split(const RunConfig& config, const backbone::ParamSet& params,
                                              const data::Dataset& dataset, const std::string& split,
                                              std::size_t threads) {
  backbone::require_compatible(config.model, params);
  const auto videos = dataset.split(split);
  if (videos.empty()) throw EmptyVideo("score: split '" + split + "' has no videos");
  std::vector<scoring::RawScores> raw(videos.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < videos.size();) {
      try {
        raw[i] = score_video(config.model, params, *videos[i]);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(threads, videos.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return scoring::finalize(raw, config.score);
}

TrainResult train_full(const RunConfig& config, const data::Dataset& dataset, std::uint64_t seed,
                       const std::filesystem::path& out_dir) {
  config.validate();
  const auto samples = train::training_samples(dataset, config.model.window);
  const train::PhaseOutputs outputs{out_dir, to_json(config)};
  TrainResult result;

  const train::TrainPlan pre = train::make_plan(config, train::Phase::pretrain, seed);
  train::PhaseState st = train::fresh_state(config, pre, backbone::build(config.model, seed));
  st = train::run_phase(pre, config, std::move(st), samples, outputs);
  result.pretrain_log = st.log;

  if (config.model.apu_enabled || config.model.cau_enabled) {
    const train::TrainPlan fine = train::make_plan(config, train::Phase::apu_finetune, seed);
    train::PhaseState ft = train::fresh_state(config, fine, std::move(st.params));
    ft = train::run_phase(fine, config, std::move(ft), samples, outputs);
    result.finetune_log = ft.log;
    result.params = std::move(ft.params);
  } else {
    result.params = std::move(st.params);
  }
  return result;
}

}  // namespace apn::pipeline
