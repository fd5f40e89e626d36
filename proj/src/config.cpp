#include "apn/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "apn/errors.hpp"
#include "json_reader.hpp"

namespace apn {
namespace {

template <class E>
const char* enum_name(E v, std::initializer_list<std::pair<const char*, E>> names) {
  for (const auto& [name, value] : names)
    if (value == v) return name;
  return "?";
}

const std::initializer_list<std::pair<const char*, Activation>> kActivations = {{"elu", Activation::elu},
                                                                                {"leaky_relu", Activation::leaky_relu}};
const std::initializer_list<std::pair<const char*, FrameLossKind>> kFrameLoss = {{"l2", FrameLossKind::l2},
                                                                                {"mse", FrameLossKind::mse}};
const std::initializer_list<std::pair<const char*, DiversityKind>> kDiversity = {
    {"hinge", DiversityKind::hinge}, {"squared_hinge", DiversityKind::squared_hinge}};
const std::initializer_list<std::pair<const char*, CovarianceKind>> kCovariance = {
    {"abs", CovarianceKind::abs}, {"frobenius", CovarianceKind::frobenius}};
const std::initializer_list<std::pair<const char*, Normalization>> kNormalization = {
    {"per_video", Normalization::per_video}, {"global", Normalization::global}};
const std::initializer_list<std::pair<const char*, AucMode>> kAuc = {{"global", AucMode::global},
                                                                    {"per_video_mean", AucMode::per_video_mean}};

void require(bool ok, const std::string& msg) {
  if (!ok) throw InvalidConfig(msg);
}

ModelConfig read_model(const json& j, const std::string& path) {
  ModelConfig c;
  ObjectReader r(j, path);
  r.get("window", c.window);
  r.get("channels", c.channels);
  r.get("frame_height", c.frame_height);
  r.get("frame_width", c.frame_width);
  r.get("base_channels", c.base_channels);
  r.get("depth", c.depth);
  r.get_enum("activation", c.activation, kActivations);
  r.get("apu_enabled", c.apu_enabled);
  r.get("apu_level", c.apu_level);
  r.get("prototypes", c.prototypes);
  r.get("sharpness", c.sharpness);
  r.get("cau_enabled", c.cau_enabled);
  r.get("loops", c.loops);
  r.get("qk_reduction", c.qk_reduction);
  r.get("affinity_temperature", c.affinity_temperature);
  r.finish();
  return c;
}

PhaseSettings read_phase(const json& j, const std::string& path, PhaseSettings c) {
  ObjectReader r(j, path);
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("lr", c.lr);
  r.get("frozen", c.frozen);
  r.finish();
  return c;
}

json phase_json(const PhaseSettings& p) {
  return {{"epochs", p.epochs}, {"batch_size", p.batch_size}, {"lr", p.lr}, {"frozen", p.frozen}};
}

}  // namespace

void ModelConfig::validate() const {
  require(window >= 1, "model.window must be >= 1");
  require(channels >= 1, "model.channels must be >= 1");
  require(base_channels >= 1, "model.base_channels must be >= 1");
  require(depth >= 1 && depth <= 8, "model.depth must be in [1, 8]");
  const std::size_t div = std::size_t{1} << (depth - 1);
  require(frame_height >= div && frame_width >= div && frame_height % div == 0 && frame_width % div == 0,
          "model.frame size must be divisible by 2^(depth-1)");
  require(apu_level >= 1 && apu_level <= depth, "model.apu_level must be in [1, depth]");
  require(prototypes >= 1, "model.prototypes must be >= 1");
  require(loops >= 1, "model.loops must be >= 1");
  require(qk_reduction >= 1, "model.qk_reduction must be >= 1");
  require(sharpness > 0.0, "model.sharpness must be positive");
  require(affinity_temperature > 0.0, "model.affinity_temperature must be positive");
}

void LossWeights::validate() const {
  require(lambda1 >= 0 && lambda2 >= 0 && lambda3 >= 0, "loss weights must be nonnegative");
  require(gamma > 0, "loss.gamma must be positive");
}

void TrainSettings::validate() const {
  for (const PhaseSettings* p : {&pretrain, &finetune}) {
    require(p->batch_size >= 1, "train batch_size must be >= 1");
    require(p->lr > 0, "train lr must be positive");
  }
  require(weight_decay >= 0, "train.weight_decay must be nonnegative");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "train betas must be in [0, 1)");
  require(eps > 0, "train.eps must be positive");
}

void ScoreSettings::validate() const { require(lambda_s >= 0, "score.lambda_s must be nonnegative"); }

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  train.validate();
  score.validate();
}

json to_json(const ModelConfig& c) {
  return {{"window", c.window},
          {"channels", c.channels},
          {"frame_height", c.frame_height},
          {"frame_width", c.frame_width},
          {"base_channels", c.base_channels},
          {"depth", c.depth},
          {"activation", enum_name(c.activation, kActivations)},
          {"apu_enabled", c.apu_enabled},
          {"apu_level", c.apu_level},
          {"prototypes", c.prototypes},
          {"sharpness", c.sharpness},
          {"cau_enabled", c.cau_enabled},
          {"loops", c.loops},
          {"qk_reduction", c.qk_reduction},
          {"affinity_temperature", c.affinity_temperature}};
}

json to_json(const LossWeights& c) {
  return {{"lambda1", c.lambda1},
          {"lambda2", c.lambda2},
          {"lambda3", c.lambda3},
          {"gamma", c.gamma},
          {"frame", enum_name(c.frame, kFrameLoss)},
          {"diversity", enum_name(c.diversity, kDiversity)},
          {"covariance", enum_name(c.covariance, kCovariance)}};
}

json to_json(const TrainSettings& c) {
  return {{"pretrain", phase_json(c.pretrain)},
          {"finetune", phase_json(c.finetune)},
          {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"clip_norm", c.clip_norm},
          {"checkpoint_every", c.checkpoint_every}};
}

json to_json(const ScoreSettings& c) {
  return {{"lambda_s", c.lambda_s},
          {"normalization", enum_name(c.normalization, kNormalization)},
          {"auc", enum_name(c.auc, kAuc)}};
}

json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)}, {"loss", to_json(c.loss)}, {"train", to_json(c.train)},
          {"score", to_json(c.score)}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c = read_model(j, "model");
  c.validate();
  return c;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  ObjectReader r(j, "config");
  if (const json* m = r.child("model")) c.model = read_model(*m, "model");
  if (const json* l = r.child("loss")) {
    ObjectReader lr(*l, "loss");
    lr.get("lambda1", c.loss.lambda1);
    lr.get("lambda2", c.loss.lambda2);
    lr.get("lambda3", c.loss.lambda3);
    lr.get("gamma", c.loss.gamma);
    lr.get_enum("frame", c.loss.frame, kFrameLoss);
    lr.get_enum("diversity", c.loss.diversity, kDiversity);
    lr.get_enum("covariance", c.loss.covariance, kCovariance);
    lr.finish();
  }
  if (const json* t = r.child("train")) {
    ObjectReader tr(*t, "train");
    if (const json* p = tr.child("pretrain")) c.train.pretrain = read_phase(*p, "train.pretrain", c.train.pretrain);
    if (const json* p = tr.child("finetune")) c.train.finetune = read_phase(*p, "train.finetune", c.train.finetune);
    tr.get("weight_decay", c.train.weight_decay);
    tr.get("beta1", c.train.beta1);
    tr.get("beta2", c.train.beta2);
    tr.get("eps", c.train.eps);
    tr.get("clip_norm", c.train.clip_norm);
    tr.get("checkpoint_every", c.train.checkpoint_every);
    tr.finish();
  }
  if (const json* s = r.child("score")) {
    ObjectReader sr(*s, "score");
    sr.get("lambda_s", c.score.lambda_s);
    sr.get_enum("normalization", c.score.normalization, kNormalization);
    sr.get_enum("auc", c.score.auc, kAuc);
    sr.finish();
  }
  r.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InvalidConfig("cannot open config " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw InvalidConfig(path + ": " + e.what());
  }
  try {
    return run_config_from_json(j);
  } catch (const InvalidConfig& e) {
    throw InvalidConfig(path + ": " + e.what());
  }
}

std::string canonical(const json& j) { return j.dump(); }

}  // namespace apn
