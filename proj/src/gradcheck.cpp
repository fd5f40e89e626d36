#include "apn/gradcheck.hpp"

#include <cmath>
#include <memory>

#include "apn/apu.hpp"
#include "apn/backbone.hpp"
#include "apn/cau.hpp"
#include "apn/errors.hpp"
#include "apn/losses.hpp"
#include "apn/numerics.hpp"
#include "apn/ops.hpp"
#include "apn/rng.hpp"

namespace apn::gradcheck {
namespace {

// Leaves named after the map keys; `track` selects whether they need gradients.
std::map<std::string, Var> place(Tape& tape, const TensorMap& values, bool track) {
  std::map<std::string, Var> out;
  for (const auto& [name, t] : values) out.emplace(name, tape.leaf(t, track));
  return out;
}

// Random linear readout so every output coordinate reaches the scalar.
Var project(Var x, const Tensor& weights) { return ops::sum(ops::mul(x, x.tape()->constant(weights))); }

// Lazily fixed argmax assignment taken at the unperturbed point.
using Assignment = std::shared_ptr<std::vector<std::size_t>>;

Var compact(const apu::Result& r, const Assignment& fixed) {
  if (fixed->empty()) *fixed = losses::assignment(r.scores.value());
  return losses::compact_loss(r.encoding_nc, r.prototypes, *fixed);
}

}  // namespace

Report check(const std::string& module, std::uint64_t seed, const TensorMap& inputs, const Builder& build) {
  Report rep;
  rep.module = module;
  rep.seed = seed;

  Tape tape;
  Graph g = build(tape, inputs, true);
  tape.backward(g.loss);

  for (const auto& [name, value] : inputs) {
    auto it = g.leaves.find(name);
    if (it == g.leaves.end()) throw Error("gradcheck: builder did not place input '" + name + "'");
    const Tensor analytic = it->second.grad();
    ScalarFn f = [&, name = name](const Tensor& theta) {
      TensorMap perturbed = inputs;
      perturbed.at(name) = theta;
      Tape t;
      return build(t, perturbed, false).loss.value().item();
    };
    const Tensor numeric = finite_diff_grad(f, value, kStep);
    const GradComparison cmp = compare_gradients(analytic, numeric);
    rep.checked += value.size();
    if (cmp.max_rel_error > rep.max_rel_error || rep.worst_tensor.empty()) {
      rep.max_rel_error = cmp.max_rel_error;
      rep.worst_tensor = name;
      rep.worst_index = cmp.worst_index;
      rep.worst_analytic = cmp.worst_analytic;
      rep.worst_numeric = cmp.worst_numeric;
    }
  }
  return rep;
}

ModelConfig e2e_config() {
  ModelConfig c;
  c.frame_height = 16;
  c.frame_width = 16;
  c.depth = 2;
  c.base_channels = 4;
  c.prototypes = 2;
  c.loops = 2;
  c.apu_level = 1;
  return c;
}

Report check_apu(std::uint64_t seed) {
  Rng rng(substream(seed, "gradcheck/apu"));
  const std::size_t c = 4, h = 3, w = 5, m = 3;
  TensorMap in{{"encoding", uniform_tensor({c, h, w}, rng, -1.0, 1.0)},
               {"heads", uniform_tensor({m, c}, rng, -1.0, 1.0)}};
  const Tensor readout = uniform_tensor({c, h, w}, rng, -1.0, 1.0);
  auto fixed = std::make_shared<std::vector<std::size_t>>();
  return check("apu", seed, in, [=](Tape& tape, const TensorMap& v, bool track) {
    Graph g{Var{}, place(tape, v, track)};
    apu::Result r = apu::forward(g.leaves.at("encoding"), g.leaves.at("heads"), {1.5});
    Var loss = project(r.out, readout);
    loss = ops::add(loss, compact(r, fixed));
    loss = ops::add(loss, losses::diversity_loss(r.prototypes, 1.0));
    loss = ops::add(loss, losses::covariance_loss(r.covariance));
    g.loss = loss;
    return g;
  });
}

Report check_cau(std::uint64_t seed) {
  Rng rng(substream(seed, "gradcheck/cau"));
  const std::size_t c = 4, h = 4, w = 5, r = 2;
  TensorMap in{{"feat", uniform_tensor({c, h, w}, rng, -1.0, 1.0)},
               {"query", uniform_tensor({r, c}, rng, -1.0, 1.0)},
               {"key", uniform_tensor({r, c}, rng, -1.0, 1.0)},
               {"value", uniform_tensor({c, c}, rng, -0.5, 0.5)},
               {"fuse.weight", uniform_tensor({c, 2 * c}, rng, -0.5, 0.5)},
               {"fuse.bias", uniform_tensor({c}, rng, -0.5, 0.5)}};
  const Tensor readout = uniform_tensor({c, h, w}, rng, -1.0, 1.0);
  return check("cau", seed, in, [=](Tape& tape, const TensorMap& v, bool track) {
    Graph g{Var{}, place(tape, v, track)};
    const auto& l = g.leaves;
    cau::Weights wts{l.at("query"), l.at("key"), l.at("value"), l.at("fuse.weight"), l.at("fuse.bias")};
    g.loss = project(cau::rca_forward(l.at("feat"), wts, 2), readout);
    return g;
  });
}

Report check_losses(std::uint64_t seed) {
  Rng rng(substream(seed, "gradcheck/losses"));
  const std::size_t n = 12, c = 3, m = 4;
  TensorMap in{{"predicted", uniform_tensor({1, 4, 4}, rng, -1.0, 1.0)},
               {"target", uniform_tensor({1, 4, 4}, rng, -1.0, 1.0)},
               {"encoding", uniform_tensor({n, c}, rng, -1.0, 1.0)},
               {"prototypes", uniform_tensor({m, c}, rng, -1.0, 1.0)},
               {"covariance", uniform_tensor({m, m}, rng, -1.0, 1.0)}};
  Tensor scores = uniform_tensor({n, m}, rng, 0.0, 1.0);
  const auto fixed = losses::assignment(scores);
  return check("losses", seed, in, [=](Tape& tape, const TensorMap& v, bool track) {
    Graph g{Var{}, place(tape, v, track)};
    const auto& l = g.leaves;
    Var loss = losses::frame_loss(l.at("predicted"), l.at("target"), FrameLossKind::l2);
    loss = ops::add(loss, losses::frame_loss(l.at("predicted"), l.at("target"), FrameLossKind::mse));
    loss = ops::add(loss, losses::compact_loss(l.at("encoding"), l.at("prototypes"), fixed));
    // A margin near the typical pair distance keeps some pairs active, some not.
    loss = ops::add(loss, losses::diversity_loss(l.at("prototypes"), 1.2, DiversityKind::hinge));
    loss = ops::add(loss, losses::diversity_loss(l.at("prototypes"), 1.2, DiversityKind::squared_hinge));
    loss = ops::add(loss, losses::covariance_loss(l.at("covariance"), CovarianceKind::abs));
    loss = ops::add(loss, losses::covariance_loss(l.at("covariance"), CovarianceKind::frobenius));
    g.loss = loss;
    return g;
  });
}

Report check_e2e(std::uint64_t seed, const ModelConfig& config) {
  Rng rng(substream(seed, "gradcheck/e2e"));
  // Re-randomize everything, including the zero-initialized output layer and
  // biases, so no parameter sits at an exactly-zero gradient by construction.
  TensorMap params;
  for (const auto& [name, shape] : backbone::param_shapes(config)) {
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    const double bound = shape.size() == 1 ? 0.2 : 1.0 / std::sqrt(static_cast<double>(fan_in));
    params.emplace(name, uniform_tensor(shape, rng, -bound, bound));
  }
  const Tensor frames =
      uniform_tensor({config.window, config.channels, config.frame_height, config.frame_width}, rng, -1.0, 1.0);
  const Tensor target = uniform_tensor({config.channels, config.frame_height, config.frame_width}, rng, -1.0, 1.0);
  LossWeights weights;
  auto fixed = std::make_shared<std::vector<std::size_t>>();
  return check("e2e", seed, params, [=](Tape& tape, const TensorMap& v, bool track) {
    backbone::Bound bound(tape, v, [track](const std::string&) { return track; });
    backbone::Prediction pred = backbone::predict(config, bound, tape.constant(frames));
    if (pred.apu && fixed->empty()) *fixed = losses::assignment(pred.apu->scores.value());
    losses::Terms terms = losses::total_loss(pred.frame, tape.constant(target), pred.apu, weights,
                                             pred.apu ? fixed.get() : nullptr);
    return Graph{terms.total, bound.vars()};
  });
}

const std::vector<std::string>& modules() {
  static const std::vector<std::string> names{"apu", "cau", "losses", "e2e"};
  return names;
}

Report run(const std::string& module, std::uint64_t seed) {
  if (module == "apu") return check_apu(seed);
  if (module == "cau") return check_cau(seed);
  if (module == "losses") return check_losses(seed);
  if (module == "e2e") return check_e2e(seed);
  throw InvalidConfig("gradcheck: unknown module '" + module + "' (expected apu|cau|losses|e2e)");
}

}  // namespace apn::gradcheck
