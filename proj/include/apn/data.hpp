#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "apn/config.hpp"
#include "apn/tensor.hpp"

// Seeded synthetic video: sprites drifting over a dark background, with
// optional injected anomalies, plus clip windowing and file formats.
namespace apn::data {

enum class Shape2D { square, circle };
enum class AnomalyType { fast_sprite, alien_shape, teleport };

struct Sprite {
  Shape2D shape = Shape2D::square;
  std::size_t size = 8;    // side / diameter in pixels
  double intensity = 0.8;  // in [0, 1]
};

struct AnomalySpec {
  AnomalyType type = AnomalyType::fast_sprite;
  std::size_t onset = 0;
  std::size_t duration = 0;
};

struct SceneSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t length = 200;
  std::vector<Sprite> sprites{{Shape2D::square, 8, 0.8}, {Shape2D::square, 8, 0.6}, {Shape2D::square, 8, 0.7}};
  double min_speed = 1.0;  // px/frame
  double max_speed = 2.0;
  double fast_multiplier = 4.0;
  Sprite alien{Shape2D::circle, 10, 0.72};  // 80 px: squared-value mass within 2% of an 8 px square at 0.8
  std::optional<AnomalySpec> anomaly;
  std::uint64_t seed = 0;

  void validate() const;  // throws InvalidSpec
};

struct Video {
  Tensor frames;            // [n x h x w], values in [-1, 1]
  std::vector<int> labels;  // 1 on anomalous frames
};

Video generate_video(const SceneSpec& spec);

struct ClipSample {
  Tensor inputs;  // [T x 1 x h x w]
  Tensor target;  // [1 x h x w]
  int label = 0;  // label of the target frame
  std::size_t target_index = 0;
};

// Sliding windows; sample i has inputs [i, i+T) and target i+T. All-background
// clips are dropped.
std::vector<ClipSample> window(const Video& video, std::size_t window_length);

// "APNVID1\n", u32 LE n_frames, h, w, f32 LE pixels frame-major.
void store_frames(const std::filesystem::path& path, const Tensor& frames);
Tensor load_frames(const std::filesystem::path& path);

// A gen-data spec: shared scene settings plus one entry per video.
struct VideoEntrySpec {
  std::size_t length = 200;
  std::optional<AnomalySpec> anomaly;
};

struct DatasetSpec {
  SceneSpec scene;  // its length/anomaly/seed are overridden per video
  std::vector<VideoEntrySpec> train;
  std::vector<VideoEntrySpec> test;

  void validate() const;  // rejects anomalies in the training split
};

DatasetSpec default_dataset_spec();
DatasetSpec dataset_spec_from_json(const json& j);
DatasetSpec load_dataset_spec(const std::filesystem::path& path);  // diagnostics carry the file name
json to_json(const DatasetSpec& spec);

struct VideoRecord {
  std::string id;     // e.g. "test_001"
  std::string split;  // "train" | "test"
  std::string path;   // relative to the dataset root
  Video video;
};

struct Dataset {
  std::filesystem::path root;
  json manifest;
  std::vector<VideoRecord> videos;

  std::vector<const VideoRecord*> split(const std::string& name) const;
};

// Writes train/ and test/ frame files and manifest.json under `out`.
Dataset generate_dataset(const DatasetSpec& spec, std::uint64_t seed, const std::filesystem::path& out);
Dataset load_dataset(const std::filesystem::path& root);

}  // namespace apn::data
