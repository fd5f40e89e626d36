#include "apn/backbone.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "apn/errors.hpp"
#include "apn/ops.hpp"
#include "apn/rng.hpp"
#include "binio.hpp"

namespace apn::backbone {
namespace {

constexpr char kCkptMagic[8] = {'A', 'P', 'N', 'C', 'K', 'P', 'T', '1'};
constexpr double kLeakySlope = 0.1;

std::string enc_name(std::size_t level) { return "enc" + std::to_string(level); }
std::string dec_name(std::size_t level) { return "dec" + std::to_string(level); }

Var activate(const ModelConfig& c, Var x) {
  return c.activation == Activation::elu ? ops::elu(x) : ops::leaky_relu(x, kLeakySlope);
}

Var conv_block(const ModelConfig& c, const Bound& p, const std::string& name, Var x) {
  return activate(c, ops::add_channel_bias(ops::conv2d(x, p[name + ".weight"], 1, 1), p[name + ".bias"]));
}

}  // namespace

std::map<std::string, Shape> param_shapes(const ModelConfig& c) {
  c.validate();
  std::map<std::string, Shape> shapes;
  std::size_t in = c.window * c.channels;
  for (std::size_t l = 1; l <= c.depth; ++l) {
    const std::size_t out = c.level_channels(l);
    shapes[enc_name(l) + ".weight"] = {out, in, 3, 3};
    shapes[enc_name(l) + ".bias"] = {out};
    in = out;
  }
  for (std::size_t l = c.depth - 1; l >= 1; --l) {
    const std::size_t out = c.level_channels(l);
    shapes[dec_name(l) + ".weight"] = {out, c.level_channels(l + 1) + out, 3, 3};
    shapes[dec_name(l) + ".bias"] = {out};
  }
  shapes["out.weight"] = {c.channels, c.level_channels(1), 3, 3};
  shapes["out.bias"] = {c.channels};
  const std::size_t hc = c.level_channels(c.apu_level);
  if (c.apu_enabled) shapes["apu.heads"] = {c.prototypes, hc};
  if (c.cau_enabled) {
    const std::size_t r = cau::reduced_channels(hc, c.qk_reduction);
    shapes["cau.query"] = {r, hc};
    shapes["cau.key"] = {r, hc};
    shapes["cau.value"] = {hc, hc};
    shapes["cau.fuse.weight"] = {hc, 2 * hc};
    shapes["cau.fuse.bias"] = {hc};
  }
  return shapes;
}

ParamSet build(const ModelConfig& config, std::uint64_t seed) {
  Rng rng(substream(seed, "init"));
  ParamSet params;
  // std::map iteration order makes the draw sequence a function of the names only.
  for (const auto& [name, shape] : param_shapes(config)) {
    Tensor t(shape);
    const bool is_bias = name.ends_with(".bias");
    const bool is_output = name.starts_with("out.");
    if (!is_bias && !is_output) {
      std::size_t fan_in = 1;
      for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (double& v : t.data()) v = rng.uniform(-bound, bound);
    }
    params.emplace(name, std::move(t));
  }
  return params;
}

std::size_t param_count(const ParamSet& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

std::string checksum(const ParamSet& params) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : params) {
    mix(name.data(), name.size());
    for (auto d : t.shape()) mix(&d, sizeof(d));
    mix(t.data().data(), t.size() * sizeof(double));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Bound::Bound(Tape& tape, const ParamSet& params, const std::function<bool(const std::string&)>& trainable) {
  for (const auto& [name, t] : params) vars_.emplace(name, tape.leaf(t, trainable ? trainable(name) : false));
}

Var Bound::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw CheckpointMismatch("missing parameter '" + name + "'");
  return it->second;
}

std::map<std::string, Tensor> Bound::grads() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : vars_) {
    if (v.requires_grad()) out.emplace(name, v.grad());
  }
  return out;
}

Prediction predict(const ModelConfig& c, const Bound& p, Var frames, cau::OpCounter* counter) {
  const Shape expect{c.window, c.channels, c.frame_height, c.frame_width};
  if (frames.shape() != expect) {
    throw ShapeMismatch("predict: frames " + shape_str(frames.shape()) + ", expected " + shape_str(expect));
  }
  Prediction pred;
  Var x = ops::reshape(frames, {c.window * c.channels, c.frame_height, c.frame_width});
  std::vector<Var> skips(c.depth + 1);
  for (std::size_t l = 1; l <= c.depth; ++l) {
    if (l > 1) x = ops::avg_pool2(x);
    x = conv_block(c, p, enc_name(l), x);
    if (l == c.apu_level) {
      if (c.cau_enabled) {
        cau::Weights w{p["cau.query"], p["cau.key"], p["cau.value"], p["cau.fuse.weight"], p["cau.fuse.bias"]};
        x = cau::rca_forward(x, w, c.loops, counter, {c.affinity_temperature});
      }
      if (c.apu_enabled) {
        pred.apu = apu::forward(x, p["apu.heads"], {c.sharpness});
        x = pred.apu->out;
      }
    }
    skips[l] = x;
  }
  Var y = skips[c.depth];
  for (std::size_t l = c.depth - 1; l >= 1; --l) {
    y = conv_block(c, p, dec_name(l), ops::concat(ops::upsample2(y), skips[l]));
  }
  y = ops::add_channel_bias(ops::conv2d(y, p["out.weight"], 1, 1), p["out.bias"]);
  pred.frame = ops::tanh(y);
  return pred;
}

std::string insert_points(const ModelConfig& c) {
  c.validate();
  std::ostringstream os;
  for (std::size_t l = 1; l <= c.depth; ++l) {
    if (l > 1) os << " -> pool";
    os << (l > 1 ? " -> " : "") << enc_name(l) << "(" << c.level_channels(l) << "@" << c.level_height(l) << "x"
       << c.level_width(l) << ")";
    if (l == c.apu_level) {
      if (c.cau_enabled) os << " -> CAU(R=" << c.loops << ")";
      if (c.apu_enabled) os << " -> APU(M=" << c.prototypes << ")";
    }
  }
  for (std::size_t l = c.depth - 1; l >= 1; --l) os << " -> up+skip" << l << " -> " << dec_name(l);
  os << " -> out(tanh)";
  return os.str();
}

void save_checkpoint(const std::filesystem::path& path, const json& config, const ParamSet& params) {
  binio::Writer w;
  w.bytes(kCkptMagic, sizeof kCkptMagic);
  const std::string cfg = canonical(config);
  w.put<std::uint64_t>(cfg.size());
  w.str(cfg);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.str(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.put<std::uint64_t>(d);
    w.bytes(t.data().data(), t.size() * sizeof(double));
  }
  w.save(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  binio::Reader r(path);
  char magic[8];
  r.bytes(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kCkptMagic, sizeof magic) != 0) throw BadMagic(path.string() + ": not a checkpoint");
  Checkpoint ck;
  const auto cfg_len = r.get<std::uint64_t>("config length");
  const std::string cfg = r.str(cfg_len, "config");
  try {
    ck.config = json::parse(cfg);
  } catch (const json::parse_error& e) {
    throw CheckpointMismatch(path.string() + ": bad config json: " + e.what());
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>("name length");
    std::string name = r.str(name_len, "name");
    const auto rank = r.get<std::uint32_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>("dims");
    r.need(numel(shape) * sizeof(double), "tensor payload");
    Tensor t(shape);
    r.bytes(t.data().data(), t.size() * sizeof(double), "tensor payload");
    ck.params.emplace(std::move(name), std::move(t));
  }
  return ck;
}

void require_compatible(const ModelConfig& config, const ParamSet& params) {
  const auto shapes = param_shapes(config);
  for (const auto& [name, shape] : shapes) {
    auto it = params.find(name);
    if (it == params.end()) throw CheckpointMismatch("checkpoint lacks tensor '" + name + "'");
    if (it->second.shape() != shape) {
      throw CheckpointMismatch("tensor '" + name + "' has shape " + shape_str(it->second.shape()) + ", config wants " +
                               shape_str(shape));
    }
  }
  for (const auto& [name, t] : params) {
    if (!shapes.count(name)) throw CheckpointMismatch("checkpoint has unexpected tensor '" + name + "'");
  }
}

}  // namespace apn::backbone
