#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

namespace apn {

using json = nlohmann::json;

enum class Activation { elu, leaky_relu };

struct ModelConfig {
  std::size_t window = 4;      // T input frames
  std::size_t channels = 1;    // per-frame channels
  std::size_t frame_height = 64;
  std::size_t frame_width = 64;
  std::size_t base_channels = 8;
  std::size_t depth = 3;
  Activation activation = Activation::elu;
  bool apu_enabled = true;
  std::size_t apu_level = 1;   // 1 = highest resolution, depth = bottleneck
  std::size_t prototypes = 10; // M
  double sharpness = 1.0;
  bool cau_enabled = true;
  std::size_t loops = 2;       // R
  std::size_t qk_reduction = 8;
  double affinity_temperature = 1.0;

  // Throws InvalidConfig.
  void validate() const;
  std::size_t level_channels(std::size_t level) const { return base_channels << (level - 1); }
  std::size_t level_height(std::size_t level) const { return frame_height >> (level - 1); }
  std::size_t level_width(std::size_t level) const { return frame_width >> (level - 1); }
};

enum class FrameLossKind { l2, mse };
enum class DiversityKind { hinge, squared_hinge };
enum class CovarianceKind { abs, frobenius };

struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 0.01;
  double lambda3 = 0.01;
  double gamma = 1.0;
  FrameLossKind frame = FrameLossKind::l2;
  DiversityKind diversity = DiversityKind::hinge;
  CovarianceKind covariance = CovarianceKind::abs;

  void validate() const;
};

struct PhaseSettings {
  std::size_t epochs = 0;
  std::size_t batch_size = 4;
  double lr = 1e-4;
  std::vector<std::string> frozen;  // glob patterns ('*' wildcard) over tensor names
};

struct TrainSettings {
  PhaseSettings pretrain{15, 4, 1e-4, {}};
  PhaseSettings finetune{6, 4, 1e-5, {"enc*", "dec*", "out.*"}};
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 10.0;  // <= 0 disables clipping
  std::size_t checkpoint_every = 5;

  void validate() const;
};

enum class Normalization { per_video, global };
enum class AucMode { global, per_video_mean };

struct ScoreSettings {
  double lambda_s = 1.0;
  Normalization normalization = Normalization::per_video;
  AucMode auc = AucMode::global;

  void validate() const;
};

struct RunConfig {
  ModelConfig model;
  LossWeights loss;
  TrainSettings train;
  ScoreSettings score;

  void validate() const;
};

// Full-depth conversion. Unknown keys raise InvalidConfig naming the path;
// missing keys keep their defaults.
json to_json(const ModelConfig& c);
json to_json(const LossWeights& c);
json to_json(const TrainSettings& c);
json to_json(const ScoreSettings& c);
json to_json(const RunConfig& c);

ModelConfig model_config_from_json(const json& j);
RunConfig run_config_from_json(const json& j);
RunConfig load_run_config(const std::string& path);

// Sorted keys, no whitespace.
std::string canonical(const json& j);

}  // namespace apn
