#include "apn/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "apn/errors.hpp"
#include "apn/losses.hpp"
#include "apn/rng.hpp"

namespace apn::train {
namespace {

bool all_finite(const GradMap& grads) {
  for (const auto& [name, g] : grads)
    if (!g.all_finite()) return false;
  return true;
}

backbone::ParamSet frozen_subset(const backbone::ParamSet& params, const TrainPlan& plan) {
  backbone::ParamSet out;
  for (const auto& [name, t] : params)
    if (plan.is_frozen(name)) out.emplace(name, t);
  return out;
}

void save_phase_files(const std::filesystem::path& ckpt, const TrainPlan& plan, const PhaseState& state,
                      const json& config) {
  backbone::save_checkpoint(ckpt, config, state.params);
  save_resume_state(std::filesystem::path(ckpt).concat(".state"), plan, state);
}

}  // namespace

OptimState make_state(const TrainSettings& s, double lr) {
  OptimState st;
  st.lr = lr;
  st.weight_decay = s.weight_decay;
  st.beta1 = s.beta1;
  st.beta2 = s.beta2;
  st.eps = s.eps;
  return st;
}

void adamw_step(backbone::ParamSet& params, const GradMap& grads, OptimState& st) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw ShapeMismatch("adamw: gradient for unknown tensor '" + name + "'");
    if (it->second.shape() != g.shape()) {
      throw ShapeMismatch("adamw: '" + name + "' is " + shape_str(it->second.shape()) + ", gradient is " +
                          shape_str(g.shape()));
    }
  }
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double bc1 = 1.0 - std::pow(st.beta1, t);
  const double bc2 = 1.0 - std::pow(st.beta2, t);
  const double shrink = 1.0 - st.lr * st.weight_decay;
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    auto [mi, m_new] = st.m.try_emplace(name, g.shape());
    auto [vi, v_new] = st.v.try_emplace(name, g.shape());
    Tensor& m = mi->second;
    Tensor& v = vi->second;
    if (m.shape() != g.shape() || v.shape() != g.shape()) {
      throw ShapeMismatch("adamw: moment buffers for '" + name + "' do not match its gradient");
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
      v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1, vhat = v[i] / bc2;
      p[i] = p[i] * shrink - st.lr * mhat / (std::sqrt(vhat) + st.eps);
    }
  }
}

double clip_global_norm(GradMap& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double x : g.data()) sq += x * x;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads)
      for (double& x : g.data()) x *= s;
  }
  return norm;
}

bool glob_match(const std::string& pattern, const std::string& name) {
  // Iterative wildcard match with single-star backtracking.
  std::size_t p = 0, n = 0, star = std::string::npos, mark = 0;
  while (n < name.size()) {
    if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = n;
    } else if (p < pattern.size() && pattern[p] == name[n]) {
      ++p;
      ++n;
    } else if (star != std::string::npos) {
      p = star + 1;
      n = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

const char* phase_name(Phase phase) { return phase == Phase::pretrain ? "pretrain" : "apu_finetune"; }

Phase parse_phase(const std::string& name) {
  if (name == "pretrain") return Phase::pretrain;
  if (name == "apu" || name == "apu_finetune") return Phase::apu_finetune;
  throw InvalidConfig("unknown phase '" + name + "' (expected pretrain|apu)");
}

bool TrainPlan::is_frozen(const std::string& name) const {
  for (const auto& p : frozen)
    if (glob_match(p, name)) return true;
  return false;
}

TrainPlan make_plan(const RunConfig& config, Phase phase, std::uint64_t seed) {
  config.validate();
  const PhaseSettings& s = phase == Phase::pretrain ? config.train.pretrain : config.train.finetune;
  TrainPlan plan;
  plan.phase = phase;
  plan.epochs = s.epochs;
  plan.batch_size = s.batch_size;
  plan.lr = s.lr;
  plan.frozen = s.frozen;
  plan.checkpoint_every = config.train.checkpoint_every;
  plan.seed = seed;
  if (phase == Phase::apu_finetune) {
    // The finetune contract: the backbone path is frozen and the attention path is live.
    for (const auto& [name, shape] : backbone::param_shapes(config.model)) {
      const bool attention_path = name.starts_with("apu.") || name.starts_with("cau.");
      if (attention_path && plan.is_frozen(name)) {
        throw InvalidConfig("train.finetune.frozen freezes '" + name + "', which the finetune phase optimizes");
      }
      if (!attention_path && !plan.is_frozen(name)) {
        throw InvalidConfig("train.finetune.frozen leaves backbone tensor '" + name + "' trainable");
      }
    }
  }
  return plan;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRow>& rows) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << "step,L_fra,L_c,L_d,L_cov,L_total\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g,%.17g\n", static_cast<unsigned long long>(r.step),
                  r.frame, r.compact, r.diversity, r.covariance, r.total);
    os << buf;
  }
}

std::vector<LossRow> read_loss_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  std::vector<LossRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    LossRow r;
    unsigned long long step = 0;
    if (std::sscanf(line.c_str(), "%llu,%lf,%lf,%lf,%lf,%lf", &step, &r.frame, &r.compact, &r.diversity,
                    &r.covariance, &r.total) != 6) {
      throw Error(path.string() + ": malformed row '" + line + "'");
    }
    r.step = step;
    rows.push_back(r);
  }
  return rows;
}

BatchResult batch_gradients(const RunConfig& config, const backbone::ParamSet& params,
                            const std::vector<const data::ClipSample*>& batch,
                            const std::function<bool(const std::string&)>& trainable) {
  if (batch.empty()) throw ShapeMismatch("batch_gradients: empty batch");
  BatchResult out;
  for (const data::ClipSample* s : batch) {
    Tape tape;
    backbone::Bound bound(tape, params, trainable);
    backbone::Prediction pred = backbone::predict(config.model, bound, tape.constant(s->inputs));
    losses::Terms terms = losses::total_loss(pred.frame, tape.constant(s->target), pred.apu, config.loss);
    const losses::LossBreakdown lb = terms.values();
    out.loss.frame += lb.frame;
    out.loss.compact += lb.compact;
    out.loss.diversity += lb.diversity;
    out.loss.covariance += lb.covariance;
    out.loss.total += lb.total;
    if (!std::isfinite(lb.total)) return out;  // caller reports the step
    if (!terms.total.requires_grad()) continue;
    tape.backward(terms.total);
    for (auto& [name, g] : bound.grads()) {
      auto [it, inserted] = out.grads.try_emplace(name, std::move(g));
      if (!inserted) {
        Tensor& acc = it->second;
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (double* v : {&out.loss.frame, &out.loss.compact, &out.loss.diversity, &out.loss.covariance, &out.loss.total})
    *v *= inv;
  for (auto& [name, g] : out.grads)
    for (double& x : g.data()) x *= inv;
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, Phase phase, std::size_t epoch) {
  Rng rng(substream(seed, std::string("shuffle/") + phase_name(phase) + "/" + std::to_string(epoch)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

void save_resume_state(const std::filesystem::path& path, const TrainPlan& plan, const PhaseState& state) {
  json log = json::array();
  for (const auto& r : state.log) log.push_back({r.step, r.frame, r.compact, r.diversity, r.covariance, r.total});
  const OptimState& o = state.optim;
  json meta = {{"phase", phase_name(plan.phase)}, {"epochs_done", state.epochs_done},
               {"step", o.step},                  {"lr", o.lr},
               {"weight_decay", o.weight_decay},  {"beta1", o.beta1},
               {"beta2", o.beta2},                {"eps", o.eps},
               {"seed", plan.seed},               {"log", log}};
  backbone::ParamSet moments;
  for (const auto& [name, t] : o.m) moments.emplace("m/" + name, t);
  for (const auto& [name, t] : o.v) moments.emplace("v/" + name, t);
  backbone::save_checkpoint(path, meta, moments);
}

PhaseState load_resume_state(const std::filesystem::path& path, const TrainPlan& plan,
                             const backbone::ParamSet& params) {
  backbone::Checkpoint ck = backbone::load_checkpoint(path);
  PhaseState st;
  st.params = params;
  try {
    const json& j = ck.config;
    if (j.at("phase").get<std::string>() != phase_name(plan.phase)) {
      throw CheckpointMismatch(path.string() + ": state belongs to phase " + j.at("phase").get<std::string>());
    }
    if (j.at("seed").get<std::uint64_t>() != plan.seed) {
      throw CheckpointMismatch(path.string() + ": state was written with a different seed");
    }
    st.epochs_done = j.at("epochs_done").get<std::size_t>();
    st.optim.step = j.at("step").get<std::uint64_t>();
    st.optim.lr = j.at("lr").get<double>();
    st.optim.weight_decay = j.at("weight_decay").get<double>();
    st.optim.beta1 = j.at("beta1").get<double>();
    st.optim.beta2 = j.at("beta2").get<double>();
    st.optim.eps = j.at("eps").get<double>();
    for (const auto& row : j.at("log")) {
      st.log.push_back({row.at(0).get<std::uint64_t>(), row.at(1).get<double>(), row.at(2).get<double>(),
                        row.at(3).get<double>(), row.at(4).get<double>(), row.at(5).get<double>()});
    }
  } catch (const json::exception& e) {
    throw CheckpointMismatch(path.string() + ": malformed training state: " + e.what());
  }
  for (auto& [key, t] : ck.params) {
    const std::string name = key.substr(2);
    auto p = params.find(name);
    if (p == params.end() || p->second.shape() != t.shape()) {
      throw CheckpointMismatch(path.string() + ": moment '" + key + "' does not match the parameters");
    }
    (key.starts_with("m/") ? st.optim.m : st.optim.v).emplace(name, std::move(t));
  }
  return st;
}

PhaseState fresh_state(const RunConfig& config, const TrainPlan& plan, backbone::ParamSet params) {
  backbone::require_compatible(config.model, params);
  PhaseState st;
  st.params = std::move(params);
  st.optim = make_state(config.train, plan.lr);
  return st;
}

PhaseState run_phase(const TrainPlan& plan, const RunConfig& config, PhaseState state,
                     const std::vector<data::ClipSample>& samples, const PhaseOutputs& outputs) {
  if (plan.batch_size == 0) throw InvalidConfig("train: batch_size must be >= 1");
  if (plan.epochs > state.epochs_done && samples.empty()) throw TooShort("train: no training samples");
  backbone::require_compatible(config.model, state.params);
  const std::string frozen_before = backbone::checksum(frozen_subset(state.params, plan));
  auto trainable = [&plan](const std::string& name) { return !plan.is_frozen(name); };
  const bool to_disk = !outputs.dir.empty();
  if (to_disk) std::filesystem::create_directories(outputs.dir);

  for (std::size_t epoch = state.epochs_done; epoch < plan.epochs; ++epoch) {
    const auto order = epoch_order(samples.size(), plan.seed, plan.phase, epoch);
    for (std::size_t b = 0; b < order.size(); b += plan.batch_size) {
      std::vector<const data::ClipSample*> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + plan.batch_size); ++i) batch.push_back(&samples[order[i]]);
      const long step = static_cast<long>(state.optim.step + 1);
      BatchResult r;
      try {
        r = batch_gradients(config, state.params, batch, trainable);
      } catch (const NonFiniteError& e) {
        throw NonFiniteLoss(std::string("non-finite value at step ") + std::to_string(step) + ": " + e.what(), step);
      }
      if (!std::isfinite(r.loss.total) || !all_finite(r.grads)) {
        throw NonFiniteLoss("non-finite loss at step " + std::to_string(step), step);
      }
      clip_global_norm(r.grads, config.train.clip_norm);
      adamw_step(state.params, r.grads, state.optim);
      r.loss.step = state.optim.step;
      state.log.push_back(r.loss);
    }
    state.epochs_done = epoch + 1;
    if (to_disk && plan.checkpoint_every > 0 && state.epochs_done % plan.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "%s_epoch%03zu.ckpt", phase_name(plan.phase), state.epochs_done);
      save_phase_files(outputs.dir / name, plan, state, outputs.config);
    }
  }

  if (backbone::checksum(frozen_subset(state.params, plan)) != frozen_before) {
    throw Error("train: frozen tensors changed during " + std::string(phase_name(plan.phase)));
  }
  if (to_disk) {
    save_phase_files(outputs.dir / (std::string(phase_name(plan.phase)) + ".ckpt"), plan, state, outputs.config);
    write_loss_csv(outputs.dir / (std::string(phase_name(plan.phase)) + "_loss.csv"), state.log);
  }
  return state;
}

std::vector<data::ClipSample> training_samples(const data::Dataset& dataset, std::size_t window) {
  std::vector<data::ClipSample> out;
  for (const data::VideoRecord* v : dataset.split("train")) {
    auto clips = data::window(v->video, window);
    out.insert(out.end(), std::make_move_iterator(clips.begin()), std::make_move_iterator(clips.end()));
  }
  return out;
}

}  // namespace apn::train
