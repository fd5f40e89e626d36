#include "apn/data.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "apn/errors.hpp"
#include "apn/rng.hpp"
#include "binio.hpp"
#include "json_reader.hpp"

namespace apn::data {
namespace {

constexpr char kVideoMagic[8] = {'A', 'P', 'N', 'V', 'I', 'D', '1', '\n'};

struct Motion {
  double x, y, vx, vy;
};

double wrap(double v, double extent) {
  v = std::fmod(v, extent);
  return v < 0.0 ? v + extent : v;
}

void draw(std::vector<double>& raw, std::size_t h, std::size_t w, const Sprite& sprite, double x, double y) {
  const long x0 = static_cast<long>(std::floor(x)), y0 = static_cast<long>(std::floor(y));
  const double half = static_cast<double>(sprite.size) / 2.0;
  for (std::size_t dy = 0; dy < sprite.size; ++dy)
    for (std::size_t dx = 0; dx < sprite.size; ++dx) {
      if (sprite.shape == Shape2D::circle) {
        const double ox = static_cast<double>(dx) + 0.5 - half, oy = static_cast<double>(dy) + 0.5 - half;
        if (ox * ox + oy * oy > half * half) continue;
      }
      const std::size_t py = static_cast<std::size_t>((y0 + static_cast<long>(dy)) % static_cast<long>(h));
      const std::size_t px = static_cast<std::size_t>((x0 + static_cast<long>(dx)) % static_cast<long>(w));
      double& cell = raw[py * w + px];
      cell = std::max(cell, sprite.intensity);
    }
}

const std::initializer_list<std::pair<const char*, Shape2D>> kShapes = {{"square", Shape2D::square},
                                                                        {"circle", Shape2D::circle}};
const std::initializer_list<std::pair<const char*, AnomalyType>> kAnomalies = {
    {"fast_sprite", AnomalyType::fast_sprite}, {"alien_shape", AnomalyType::alien_shape},
    {"teleport", AnomalyType::teleport}};

template <class E>
const char* name_of(E v, std::initializer_list<std::pair<const char*, E>> names) {
  for (const auto& [n, value] : names)
    if (value == v) return n;
  return "?";
}

Sprite read_sprite(const json& j, const std::string& path) {
  Sprite s;
  ObjectReader<InvalidSpec> r(j, path);
  r.get_enum("shape", s.shape, kShapes);
  r.get("size", s.size);
  r.get("intensity", s.intensity);
  r.finish();
  return s;
}

json sprite_json(const Sprite& s) {
  return {{"shape", name_of(s.shape, kShapes)}, {"size", s.size}, {"intensity", s.intensity}};
}

std::optional<AnomalySpec> read_anomaly(const json* j, const std::string& path) {
  if (!j || j->is_null()) return std::nullopt;
  AnomalySpec a;
  ObjectReader<InvalidSpec> r(*j, path);
  r.get_enum("type", a.type, kAnomalies);
  r.get("onset", a.onset);
  r.get("duration", a.duration);
  r.finish();
  return a;
}

json anomaly_json(const std::optional<AnomalySpec>& a) {
  if (!a) return nullptr;
  return {{"type", name_of(a->type, kAnomalies)}, {"onset", a->onset}, {"duration", a->duration}};
}

std::vector<VideoEntrySpec> read_entries(const json* j, const std::string& path) {
  std::vector<VideoEntrySpec> out;
  if (!j) return out;
  if (!j->is_array()) throw InvalidSpec(path + ": expected an array");
  for (std::size_t i = 0; i < j->size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "]";
    VideoEntrySpec e;
    ObjectReader<InvalidSpec> r((*j)[i], p);
    r.get("length", e.length);
    e.anomaly = read_anomaly(r.child("anomaly"), p + ".anomaly");
    r.finish();
    out.push_back(e);
  }
  return out;
}

json entries_json(const std::vector<VideoEntrySpec>& entries) {
  json arr = json::array();
  for (const auto& e : entries) arr.push_back({{"length", e.length}, {"anomaly", anomaly_json(e.anomaly)}});
  return arr;
}

}  // namespace

void SceneSpec::validate() const {
  auto fail = [](const std::string& m) { throw InvalidSpec(m); };
  if (height == 0 || width == 0) fail("scene: frame size must be positive");
  if (length == 0) fail("scene: video length must be positive");
  if (sprites.empty()) fail("scene: at least one sprite is required");
  for (const Sprite* s : {&alien}) {
    if (s->size == 0 || s->size > std::min(height, width)) fail("scene: alien size out of range");
  }
  for (std::size_t i = 0; i < sprites.size(); ++i) {
    const Sprite& s = sprites[i];
    if (s.size == 0 || s.size > std::min(height, width)) fail("scene.sprites[" + std::to_string(i) + "].size out of range");
    if (!(s.intensity > 0.0 && s.intensity <= 1.0)) {
      fail("scene.sprites[" + std::to_string(i) + "].intensity must be in (0, 1]");
    }
  }
  if (!(alien.intensity > 0.0 && alien.intensity <= 1.0)) fail("scene.alien.intensity must be in (0, 1]");
  if (!(min_speed >= 0.0 && max_speed >= min_speed)) fail("scene: speed range must satisfy 0 <= min <= max");
  if (!(fast_multiplier > 0.0)) fail("scene: fast_multiplier must be positive");
  if (anomaly) {
    if (anomaly->duration == 0) fail("anomaly.duration must be positive");
    if (anomaly->onset + anomaly->duration > length) fail("anomaly interval exceeds the video length");
  }
}

Video generate_video(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t h = spec.height, w = spec.width, n = spec.length;
  const double fh = static_cast<double>(h), fw = static_cast<double>(w);
  std::vector<Motion> motion;
  for (std::size_t s = 0; s < spec.sprites.size(); ++s) {
    Motion m{};
    m.x = rng.uniform(0.0, fw);
    m.y = rng.uniform(0.0, fh);
    const double speed = rng.uniform(spec.min_speed, spec.max_speed);
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    m.vx = speed * std::cos(angle);
    m.vy = speed * std::sin(angle);
    motion.push_back(m);
  }

  Video video{Tensor({n, h, w}), std::vector<int>(n, 0)};
  std::vector<double> raw(h * w);
  for (std::size_t t = 0; t < n; ++t) {
    const bool active = spec.anomaly && t >= spec.anomaly->onset && t < spec.anomaly->onset + spec.anomaly->duration;
    const AnomalyType type = spec.anomaly ? spec.anomaly->type : AnomalyType::fast_sprite;
    video.labels[t] = active ? 1 : 0;
    if (t > 0) {
      for (std::size_t s = 0; s < motion.size(); ++s) {
        const double mult = (active && type == AnomalyType::fast_sprite && s == 0) ? spec.fast_multiplier : 1.0;
        motion[s].x = wrap(motion[s].x + motion[s].vx * mult, fw);
        motion[s].y = wrap(motion[s].y + motion[s].vy * mult, fh);
      }
      if (active && type == AnomalyType::teleport) {
        motion[0].x = rng.uniform(0.0, fw);
        motion[0].y = rng.uniform(0.0, fh);
      }
    }
    std::fill(raw.begin(), raw.end(), 0.0);
    for (std::size_t s = 0; s < motion.size(); ++s) {
      const bool alien = active && type == AnomalyType::alien_shape && s == 0;
      draw(raw, h, w, alien ? spec.alien : spec.sprites[s], motion[s].x, motion[s].y);
    }
    // Stored as f32 on disk, so keep values exactly representable there.
    for (std::size_t i = 0; i < h * w; ++i) {
      video.frames[t * h * w + i] = static_cast<double>(static_cast<float>(2.0 * raw[i] - 1.0));
    }
  }
  return video;
}

std::vector<ClipSample> window(const Video& video, std::size_t window_length) {
  if (video.frames.rank() != 3) throw ShapeMismatch("window: frames must be [n x h x w]");
  const std::size_t n = video.frames.dim(0), h = video.frames.dim(1), w = video.frames.dim(2);
  if (window_length == 0 || n < window_length + 1) {
    throw TooShort("window: video has " + std::to_string(n) + " frames, need at least " +
                   std::to_string(window_length + 1));
  }
  const std::size_t plane = h * w;
  std::vector<ClipSample> out;
  out.reserve(n - window_length);
  for (std::size_t i = 0; i + window_length < n; ++i) {
    const double* begin = video.frames.data().data() + i * plane;
    const double* end = begin + (window_length + 1) * plane;
    if (std::all_of(begin, end, [](double v) { return v <= -1.0; })) continue;
    ClipSample s;
    s.inputs = Tensor({window_length, 1, h, w}, std::vector<double>(begin, begin + window_length * plane));
    s.target = Tensor({1, h, w}, std::vector<double>(begin + window_length * plane, end));
    s.target_index = i + window_length;
    s.label = video.labels.empty() ? 0 : video.labels[s.target_index];
    out.push_back(std::move(s));
  }
  return out;
}

void store_frames(const std::filesystem::path& path, const Tensor& frames) {
  if (frames.rank() != 3) throw ShapeMismatch("store_frames: expected [n x h x w], got " + shape_str(frames.shape()));
  binio::Writer w;
  w.bytes(kVideoMagic, sizeof kVideoMagic);
  for (std::size_t d = 0; d < 3; ++d) w.put<std::uint32_t>(static_cast<std::uint32_t>(frames.dim(d)));
  for (double v : frames.data()) w.put<float>(static_cast<float>(v));
  w.save(path);
}

Tensor load_frames(const std::filesystem::path& path) {
  binio::Reader r(path);
  char magic[8];
  r.bytes(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kVideoMagic, sizeof magic) != 0) throw BadMagic(path.string() + ": not an APNVID1 file");
  const std::size_t n = r.get<std::uint32_t>("header"), h = r.get<std::uint32_t>("header"),
                    w = r.get<std::uint32_t>("header");
  const std::size_t expected = n * h * w * sizeof(float);
  if (r.remaining() < expected) {
    throw TruncatedFile(path.string() + ": payload expected " + std::to_string(expected) + " bytes, found " +
                        std::to_string(r.remaining()));
  }
  if (r.remaining() > expected) {
    throw ShapeMismatch(path.string() + ": " + std::to_string(r.remaining() - expected) + " trailing bytes after " +
                        std::to_string(n) + "x" + std::to_string(h) + "x" + std::to_string(w) + " frames");
  }
  Tensor frames({n, h, w});
  for (double& v : frames.data()) v = static_cast<double>(r.get<float>("payload"));
  frames.check_finite("load_frames");
  return frames;
}

void DatasetSpec::validate() const {
  SceneSpec probe = scene;
  probe.anomaly.reset();
  probe.validate();
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].anomaly) {
      throw InvalidSpec("train[" + std::to_string(i) + "].anomaly: training videos must be anomaly-free");
    }
  }
  if (train.empty()) throw InvalidSpec("train: at least one training video is required");
  for (const auto* split : {&train, &test}) {
    for (std::size_t i = 0; i < split->size(); ++i) {
      SceneSpec s = scene;
      s.length = (*split)[i].length;
      s.anomaly = (*split)[i].anomaly;
      try {
        s.validate();
      } catch (const InvalidSpec& e) {
        throw InvalidSpec(std::string(split == &train ? "train[" : "test[") + std::to_string(i) + "]: " + e.what());
      }
    }
  }
}

DatasetSpec default_dataset_spec() {
  DatasetSpec d;
  d.train = {{200, std::nullopt}, {200, std::nullopt}, {200, std::nullopt}};
  d.test = {{200, AnomalySpec{AnomalyType::fast_sprite, 80, 60}},
            {200, AnomalySpec{AnomalyType::alien_shape, 80, 60}},
            {200, AnomalySpec{AnomalyType::teleport, 80, 60}}};
  return d;
}

DatasetSpec dataset_spec_from_json(const json& j) {
  DatasetSpec d = default_dataset_spec();
  ObjectReader<InvalidSpec> r(j, "spec");
  std::vector<std::size_t> size{d.scene.height, d.scene.width};
  r.get("frame_size", size);
  if (size.size() != 2) throw InvalidSpec("spec.frame_size: expected [height, width]");
  d.scene.height = size[0];
  d.scene.width = size[1];
  if (const json* s = r.child("sprites")) {
    if (!s->is_array()) throw InvalidSpec("spec.sprites: expected an array");
    d.scene.sprites.clear();
    for (std::size_t i = 0; i < s->size(); ++i) d.scene.sprites.push_back(read_sprite((*s)[i], "spec.sprites[" + std::to_string(i) + "]"));
  }
  std::vector<double> speed{d.scene.min_speed, d.scene.max_speed};
  r.get("speed_range", speed);
  if (speed.size() != 2) throw InvalidSpec("spec.speed_range: expected [min, max]");
  d.scene.min_speed = speed[0];
  d.scene.max_speed = speed[1];
  r.get("fast_multiplier", d.scene.fast_multiplier);
  if (const json* a = r.child("alien")) d.scene.alien = read_sprite(*a, "spec.alien");
  if (const json* t = r.child("train")) d.train = read_entries(t, "spec.train");
  if (const json* t = r.child("test")) d.test = read_entries(t, "spec.test");
  r.finish();
  d.validate();
  return d;
}

DatasetSpec load_dataset_spec(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InvalidSpec("cannot open spec " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw InvalidSpec(path.string() + ": " + e.what());
  }
  try {
    return dataset_spec_from_json(j);
  } catch (const InvalidSpec& e) {
    throw InvalidSpec(path.string() + ": " + e.what());
  }
}

json to_json(const DatasetSpec& d) {
  json sprites = json::array();
  for (const auto& s : d.scene.sprites) sprites.push_back(sprite_json(s));
  return {{"frame_size", {d.scene.height, d.scene.width}},
          {"sprites", sprites},
          {"speed_range", {d.scene.min_speed, d.scene.max_speed}},
          {"fast_multiplier", d.scene.fast_multiplier},
          {"alien", sprite_json(d.scene.alien)},
          {"train", entries_json(d.train)},
          {"test", entries_json(d.test)}};
}

std::vector<const VideoRecord*> Dataset::split(const std::string& name) const {
  std::vector<const VideoRecord*> out;
  for (const auto& v : videos)
    if (v.split == name) out.push_back(&v);
  return out;
}

Dataset generate_dataset(const DatasetSpec& spec, std::uint64_t seed, const std::filesystem::path& out) {
  spec.validate();
  namespace fs = std::filesystem;
  Dataset ds;
  ds.root = out;
  json videos = json::array();
  for (const char* split : {"train", "test"}) {
    const auto& entries = std::string(split) == "train" ? spec.train : spec.test;
    fs::create_directories(out / split);
    for (std::size_t i = 0; i < entries.size(); ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "%s_%03zu", split, i);
      SceneSpec scene = spec.scene;
      scene.length = entries[i].length;
      scene.anomaly = entries[i].anomaly;
      scene.seed = substream(seed, std::string("data/") + id);
      VideoRecord rec{id, split, std::string(split) + "/" + id + ".apnv", generate_video(scene)};
      store_frames(out / rec.path, rec.video.frames);
      videos.push_back({{"id", rec.id},
                        {"split", rec.split},
                        {"path", rec.path},
                        {"frames", scene.length},
                        {"height", scene.height},
                        {"width", scene.width},
                        {"anomaly", anomaly_json(scene.anomaly)},
                        {"labels", rec.video.labels}});
      ds.videos.push_back(std::move(rec));
    }
  }
  ds.manifest = {{"seed", seed}, {"spec", to_json(spec)}, {"videos", videos}};
  std::ofstream os(out / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + (out / "manifest.json").string());
  os << canonical(ds.manifest) << '\n';
  return ds;
}

Dataset load_dataset(const std::filesystem::path& root) {
  std::ifstream is(root / "manifest.json");
  if (!is) throw InvalidSpec("no manifest.json under " + root.string());
  Dataset ds;
  ds.root = root;
  try {
    ds.manifest = json::parse(is);
    for (const auto& v : ds.manifest.at("videos")) {
      VideoRecord rec;
      rec.id = v.at("id").get<std::string>();
      rec.split = v.at("split").get<std::string>();
      rec.path = v.at("path").get<std::string>();
      rec.video.frames = load_frames(root / rec.path);
      rec.video.labels = v.at("labels").get<std::vector<int>>();
      if (rec.video.labels.size() != rec.video.frames.dim(0)) {
        throw InvalidSpec(rec.id + ": label count does not match frame count");
      }
      ds.videos.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw InvalidSpec(root.string() + "/manifest.json: " + e.what());
  }
  return ds;
}

}  // namespace apn::data
