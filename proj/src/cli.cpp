#include "apn/cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "apn/apu.hpp"
#include "apn/backbone.hpp"
#include "apn/cau.hpp"
#include "apn/config.hpp"
#include "apn/data.hpp"
#include "apn/errors.hpp"
#include "apn/gradcheck.hpp"
#include "apn/pipeline.hpp"
#include "apn/scoring.hpp"
#include "apn/train.hpp"

namespace apn::cli {
namespace fs = std::filesystem;
namespace {

// What every command records in its manifest.
struct Run {
  std::string command;
  std::uint64_t seed = 0;
  json config = nullptr;
  json inputs = json::object();
  json outputs = json::object();
  json details = json::object();
  fs::path manifest;
};

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << canonical(j) << '\n';
}

fs::path beside(const fs::path& file, const std::string& command) {
  return file.parent_path() / (file.filename().string() + "." + command + ".manifest.json");
}

int exit_code(std::exception_ptr e, std::string& message, json& details) {
  try {
    std::rethrow_exception(e);
  } catch (const NonFiniteLoss& x) {
    message = x.what();
    details["step"] = x.step();
    return kNonFinite;
  } catch (const SingleClass& x) {
    message = x.what();
    return kSingleClass;
  } catch (const InvalidConfig& x) {
    message = x.what();
  } catch (const InvalidSpec& x) {
    message = x.what();
  } catch (const CheckpointMismatch& x) {
    message = x.what();
  } catch (const BadMagic& x) {
    message = x.what();
  } catch (const TruncatedFile& x) {
    message = x.what();
  } catch (const TooShort& x) {
    message = x.what();
  } catch (const std::exception& x) {
    message = x.what();
    return kFailure;
  }
  return kBadInput;
}

RunConfig resolve_config(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

void require_frame_size(const ModelConfig& m, const data::Dataset& ds) {
  for (const auto& v : ds.videos) {
    if (v.video.frames.dim(1) != m.frame_height || v.video.frames.dim(2) != m.frame_width) {
      throw InvalidConfig("model.frame_height/frame_width " + std::to_string(m.frame_height) + "x" +
                          std::to_string(m.frame_width) + " do not match video " + v.id + " (" +
                          std::to_string(v.video.frames.dim(1)) + "x" + std::to_string(v.video.frames.dim(2)) + ")");
    }
  }
}

// ---- gen-data ----

struct GenDataArgs {
  std::string spec, out;
};

void gen_data(Run& run, const GenDataArgs& a, std::ostream& out) {
  run.manifest = fs::path(a.out) / "gen-data.manifest.json";
  run.inputs["spec"] = a.spec.empty() ? json(nullptr) : json(a.spec);
  const data::DatasetSpec spec = a.spec.empty() ? data::default_dataset_spec() : data::load_dataset_spec(a.spec);
  run.config = data::to_json(spec);
  const data::Dataset ds = data::generate_dataset(spec, run.seed, a.out);
  json files = json::array();
  for (const auto& v : ds.videos) files.push_back(v.path);
  run.outputs = {{"dir", a.out}, {"manifest", "manifest.json"}, {"videos", files}};
  out << "wrote " << ds.videos.size() << " videos to " << a.out << "\n";
}

// ---- train ----

struct TrainArgs {
  std::string config, data, out, phase = "all", init, resume;
};

void train_cmd(Run& run, const TrainArgs& a, std::ostream& out) {
  const fs::path dir(a.out);
  run.manifest = dir / "train.manifest.json";
  run.inputs = {{"config", a.config}, {"data", a.data}, {"init", a.init}, {"resume", a.resume}, {"phase", a.phase}};
  if (a.phase != "all" && a.phase != "pretrain" && a.phase != "apu") {
    throw InvalidConfig("--phase must be pretrain|apu|all, got '" + a.phase + "'");
  }
  const RunConfig cfg = resolve_config(a.config);
  run.config = to_json(cfg);
  const data::Dataset ds = data::load_dataset(a.data);
  require_frame_size(cfg.model, ds);
  const auto samples = train::training_samples(ds, cfg.model.window);
  fs::create_directories(dir);
  write_json(dir / "config.json", run.config);
  const train::PhaseOutputs outputs{dir, run.config};

  auto run_one = [&](train::Phase phase, train::PhaseState state) {
    const train::TrainPlan plan = train::make_plan(cfg, phase, run.seed);
    const auto t0 = std::chrono::steady_clock::now();
    state = train::run_phase(plan, cfg, std::move(state), samples, outputs);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const std::string name = train::phase_name(phase);
    run.outputs[name] = {{"checkpoint", name + ".ckpt"}, {"loss_csv", name + "_loss.csv"}, {"steps", state.optim.step},
                         {"seconds", secs}, {"param_checksum", backbone::checksum(state.params)}};
    out << name << ": " << state.optim.step << " steps, "
        << (state.log.empty() ? std::string("no updates") : "final L_total " + std::to_string(state.log.back().total))
        << "\n";
    return state;
  };
  auto load_params = [&](const fs::path& p) {
    backbone::Checkpoint ck = backbone::load_checkpoint(p);
    if (canonical(ck.config) != canonical(run.config)) {
      throw CheckpointMismatch(p.string() + ": checkpoint was written with a different configuration");
    }
    backbone::require_compatible(cfg.model, ck.params);
    return std::move(ck.params);
  };

  bool need_pretrain = a.phase != "apu";
  bool need_finetune = a.phase != "pretrain" && (cfg.model.apu_enabled || cfg.model.cau_enabled);
  std::optional<train::PhaseState> carried;

  if (!a.resume.empty()) {
    const fs::path state_path = fs::path(a.resume).concat(".state");
    const std::string phase_str = backbone::load_checkpoint(state_path).config.value("phase", "");
    const train::Phase phase = train::parse_phase(phase_str);
    const train::TrainPlan plan = train::make_plan(cfg, phase, run.seed);
    train::PhaseState st = train::load_resume_state(state_path, plan, load_params(a.resume));
    out << "resuming " << phase_str << " after epoch " << st.epochs_done << "\n";
    carried = run_one(phase, std::move(st));
    if (phase == train::Phase::apu_finetune) need_finetune = false;
    need_pretrain = false;
  }
  if (need_pretrain) {
    const train::TrainPlan plan = train::make_plan(cfg, train::Phase::pretrain, run.seed);
    carried = run_one(train::Phase::pretrain, train::fresh_state(cfg, plan, backbone::build(cfg.model, run.seed)));
  }
  if (need_finetune) {
    backbone::ParamSet start;
    if (carried) {
      start = std::move(carried->params);
    } else {
      const fs::path init = a.init.empty() ? dir / "pretrain.ckpt" : fs::path(a.init);
      if (!fs::exists(init)) throw InvalidConfig("--phase apu needs a pretrained checkpoint (--init or " + init.string() + ")");
      start = load_params(init);
    }
    const train::TrainPlan plan = train::make_plan(cfg, train::Phase::apu_finetune, run.seed);
    carried = run_one(train::Phase::apu_finetune, train::fresh_state(cfg, plan, std::move(start)));
  }
  if (carried) {
    backbone::save_checkpoint(dir / "model.ckpt", run.config, carried->params);
    run.outputs["model"] = "model.ckpt";
  }
}

// ---- score / eval ----

struct ScoreArgs {
  std::string ckpt, data, out = "scores.csv", config, split = "test";
};

void score_cmd(Run& run, const ScoreArgs& a, std::ostream& out) {
  run.manifest = beside(a.out, "score");
  run.inputs = {{"ckpt", a.ckpt}, {"data", a.data}, {"config", a.config}, {"split", a.split}};
  backbone::Checkpoint ck = backbone::load_checkpoint(a.ckpt);
  RunConfig cfg;
  try {
    cfg = a.config.empty() ? run_config_from_json(ck.config) : load_run_config(a.config);
  } catch (const InvalidConfig& e) {
    throw CheckpointMismatch(std::string("checkpoint config: ") + e.what());
  }
  run.config = to_json(cfg);
  backbone::require_compatible(cfg.model, ck.params);
  const data::Dataset ds = data::load_dataset(a.data);
  require_frame_size(cfg.model, ds);
  const std::size_t threads = pipeline::worker_count();
  const auto records = pipeline::score_split(cfg, ck.params, ds, a.split, threads);
  scoring::write_scores_csv(a.out, records);
  run.outputs = {{"scores", a.out}, {"frames", records.size()}};
  run.details["threads"] = threads;
  out << "scored " << records.size() << " frames -> " << a.out << "\n";
}

struct EvalArgs {
  std::string scores, out = "auc.json", field = "combined", mode = "global";
};

void eval_cmd(Run& run, const EvalArgs& a, std::ostream& out) {
  run.manifest = beside(a.out, "eval");
  run.inputs = {{"scores", a.scores}, {"field", a.field}, {"mode", a.mode}};
  const scoring::ScoreField field = a.field == "pred" ? scoring::ScoreField::pred
                                    : a.field == "feat" ? scoring::ScoreField::feat
                                                        : scoring::ScoreField::combined;
  const AucMode mode = a.mode == "per_video_mean" ? AucMode::per_video_mean : AucMode::global;
  const auto records = scoring::read_scores_csv(a.scores);
  const scoring::RocCurve curve = scoring::evaluate(records, field, mode);
  json report = scoring::auc_report(curve);
  report["field"] = a.field;
  report["mode"] = a.mode;
  write_json(a.out, report);
  run.outputs = {{"auc_json", a.out}, {"auc", curve.auc}};
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", curve.auc);
  out << "AUC(" << a.field << ", " << a.mode << ") = " << buf << " (" << curve.n_pos << " positive, " << curve.n_neg
      << " negative)\n";
}

// ---- gradcheck ----

struct GradcheckArgs {
  std::string module = "all", out = ".";
  std::size_t seeds = 1;
};

int gradcheck_cmd(Run& run, const GradcheckArgs& a, std::ostream& out) {
  run.manifest = fs::path(a.out) / "gradcheck.manifest.json";
  run.inputs = {{"module", a.module}, {"seeds", a.seeds}};
  std::vector<std::string> mods = a.module == "all" ? gradcheck::modules() : std::vector<std::string>{a.module};
  run.config = to_json(gradcheck::e2e_config());
  json reports = json::array();
  bool ok = true;
  gradcheck::Report worst;
  for (const auto& m : mods) {
    for (std::size_t s = 0; s < a.seeds; ++s) {
      const gradcheck::Report r = gradcheck::run(m, run.seed + s);
      char line[256];
      std::snprintf(line, sizeof line, "%-6s seed %-4llu %5zu coords  max rel err %.3e  worst %s[%zu] (%.9g vs %.9g)  %s\n",
                    m.c_str(), static_cast<unsigned long long>(r.seed), r.checked, r.max_rel_error,
                    r.worst_tensor.c_str(), r.worst_index, r.worst_analytic, r.worst_numeric,
                    r.passed() ? "ok" : "FAIL");
      out << line;
      reports.push_back({{"module", m}, {"seed", r.seed}, {"checked", r.checked}, {"max_rel_error", r.max_rel_error},
                         {"worst_tensor", r.worst_tensor}, {"worst_index", r.worst_index},
                         {"analytic", r.worst_analytic}, {"numeric", r.worst_numeric}, {"passed", r.passed()}});
      ok = ok && r.passed();
      if (r.max_rel_error >= worst.max_rel_error) worst = r;
    }
  }
  out << "worst offender: " << worst.module << " seed " << worst.seed << " " << worst.worst_tensor << "["
      << worst.worst_index << "] rel err " << worst.max_rel_error << " (tolerance " << gradcheck::kTolerance << ")\n";
  run.outputs["reports"] = reports;
  return ok ? kOk : kGradcheck;
}

// ---- bench-attn ----

struct BenchArgs {
  std::string sizes = "8x8,16x16,16x32,32x32", out = "bench_attn.csv";
  std::size_t loops = 2, channels = 8;
};

std::vector<std::pair<std::size_t, std::size_t>> parse_sizes(const std::string& list) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    const auto x = item.find('x');
    try {
      std::size_t used = 0;
      const unsigned long h = std::stoul(item.substr(0, x), &used);
      if (used != item.substr(0, x).size()) throw std::invalid_argument(item);
      unsigned long w = h;
      if (x != std::string::npos) {
        w = std::stoul(item.substr(x + 1), &used);
        if (used != item.substr(x + 1).size()) throw std::invalid_argument(item);
      }
      if (h == 0 || w == 0) throw std::invalid_argument(item);
      out.emplace_back(h, w);
    } catch (const std::logic_error&) {
      throw InvalidConfig("--sizes: cannot parse '" + item + "' (expected HxW or N)");
    }
  }
  if (out.empty()) throw InvalidConfig("--sizes: no sizes given");
  return out;
}

void bench_cmd(Run& run, const BenchArgs& a, std::ostream& out) {
  run.manifest = beside(a.out, "bench-attn");
  run.inputs = {{"sizes", a.sizes}, {"R", a.loops}, {"channels", a.channels}};
  if (a.loops == 0) throw InvalidConfig("--R must be >= 1");
  const auto sizes = parse_sizes(a.sizes);
  std::ofstream csv(a.out, std::ios::binary | std::ios::trunc);
  if (!csv) throw Error("cannot write " + a.out);
  csv << "h,w,R,cc_ops,dense_ops,wall_time_cc,wall_time_dense\n";
  json rows = json::array();
  for (const auto& [h, w] : sizes) {
    const cau::ComplexityReport r = cau::complexity_report(h, w, a.loops, a.channels, run.seed);
    char line[256];
    std::snprintf(line, sizeof line, "%zu,%zu,%zu,%llu,%llu,%.6e,%.6e\n", h, w, a.loops,
                  static_cast<unsigned long long>(r.cc_ops), static_cast<unsigned long long>(r.dense_ops),
                  r.cc_seconds, r.dense_seconds);
    csv << line;
    out << line;
    rows.push_back({{"h", h}, {"w", w}, {"cc_ops", r.cc_ops}, {"dense_ops", r.dense_ops},
                    {"cc_predicted", r.cc_predicted}, {"dense_predicted", r.dense_predicted}});
    if (!r.counts_match()) {
      throw Error("bench-attn: counters disagree with R*H*W*(H+W-1) / (HW)^2 at " + std::to_string(h) + "x" +
                  std::to_string(w));
    }
  }
  run.outputs = {{"csv", a.out}, {"rows", rows}};
}

// ---- export-maps ----

struct ExportArgs {
  std::string ckpt, data, video, out = "maps";
  std::size_t frame = 0;
};

void export_cmd(Run& run, const ExportArgs& a, std::ostream& out) {
  const fs::path dir(a.out);
  run.manifest = dir / "export-maps.manifest.json";
  run.inputs = {{"ckpt", a.ckpt}, {"data", a.data}, {"video", a.video}, {"frame", a.frame}};
  backbone::Checkpoint ck = backbone::load_checkpoint(a.ckpt);
  const RunConfig cfg = run_config_from_json(ck.config);
  run.config = ck.config;
  backbone::require_compatible(cfg.model, ck.params);
  if (!cfg.model.apu_enabled) throw InvalidConfig("export-maps: the checkpoint has no APU");
  const data::Dataset ds = data::load_dataset(a.data);
  require_frame_size(cfg.model, ds);
  const data::VideoRecord* video = nullptr;
  for (const auto& v : ds.videos) {
    if (a.video.empty() ? v.split == "test" : v.id == a.video) {
      video = &v;
      break;
    }
  }
  if (!video) throw InvalidConfig("export-maps: no video '" + a.video + "' in " + a.data);
  const auto clips = data::window(video->video, cfg.model.window);
  auto clip = std::find_if(clips.begin(), clips.end(), [&](const auto& c) { return c.target_index == a.frame; });
  if (clip == clips.end()) {
    throw InvalidConfig("export-maps: frame " + std::to_string(a.frame) + " of " + video->id +
                        " is not a predictable target (needs index >= window)");
  }
  Tape tape;
  backbone::Bound bound(tape, ck.params, nullptr);
  const backbone::Prediction pred = backbone::predict(cfg.model, bound, tape.constant(clip->inputs));
  const std::size_t h = cfg.model.level_height(cfg.model.apu_level), w = cfg.model.level_width(cfg.model.apu_level);
  const auto images = apu::normalcy_images(pred.apu->maps.value(), h, w);
  fs::create_directories(dir);
  json files = json::array();
  for (std::size_t m = 0; m < images.size(); ++m) {
    char name[32];
    if (m + 1 < images.size()) {
      std::snprintf(name, sizeof name, "map_%02zu.pgm", m);
    } else {
      std::snprintf(name, sizeof name, "map_sum.pgm");
    }
    apu::write_pgm(dir / name, images[m]);
    files.push_back(name);
  }
  run.outputs = {{"dir", a.out}, {"video", video->id}, {"files", files}};
  out << "wrote " << images.size() << " maps for " << video->id << " frame " << a.frame << " to " << a.out << "\n";
}

// ---- print-config ----

struct PrintArgs {
  std::string config, what = "run", out = ".";
};

void print_cmd(Run& run, const PrintArgs& a, std::ostream& out) {
  run.manifest = fs::path(a.out) / "print-config.manifest.json";
  run.inputs = {{"config", a.config}, {"what", a.what}};
  if (a.what == "dataset") {
    run.config = data::to_json(a.config.empty() ? data::default_dataset_spec() : data::load_dataset_spec(a.config));
  } else {
    run.config = to_json(resolve_config(a.config));
  }
  out << run.config.dump(2) << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attention-prototype video anomaly detection at desk scale", "apn"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Root seed for every random sub-stream")->capture_default_str();

  GenDataArgs gd;
  auto* c_gen = app.add_subcommand("gen-data", "Generate the synthetic video dataset");
  c_gen->add_option("--spec", gd.spec, "Dataset spec JSON (default: built-in spec)");
  c_gen->add_option("--out", gd.out, "Output directory")->required();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Pretrain the predictor and finetune the APU");
  c_train->add_option("--config", tr.config, "Run config JSON (default: built-in desk config)");
  c_train->add_option("--data", tr.data, "Dataset directory")->required();
  c_train->add_option("--out", tr.out, "Output directory")->required();
  c_train->add_option("--phase", tr.phase, "pretrain | apu | all")->capture_default_str();
  c_train->add_option("--init", tr.init, "Pretrained checkpoint for --phase apu");
  c_train->add_option("--resume", tr.resume, "Continue from a checkpoint that has a .state companion");

  ScoreArgs sc;
  auto* c_score = app.add_subcommand("score", "Score every test frame");
  c_score->add_option("--ckpt", sc.ckpt, "Model checkpoint")->required();
  c_score->add_option("--data", sc.data, "Dataset directory")->required();
  c_score->add_option("--out", sc.out, "Scores CSV")->capture_default_str();
  c_score->add_option("--config", sc.config, "Override the config stored in the checkpoint");
  c_score->add_option("--split", sc.split, "Split to score")->capture_default_str();

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Frame-level ROC AUC of a scores CSV");
  c_eval->add_option("--scores", ev.scores, "Scores CSV")->required();
  c_eval->add_option("--out", ev.out, "AUC JSON")->capture_default_str();
  c_eval->add_option("--field", ev.field, "Score column")
      ->check(CLI::IsMember({"combined", "pred", "feat"}))
      ->capture_default_str();
  c_eval->add_option("--mode", ev.mode, "AUC aggregation")
      ->check(CLI::IsMember({"global", "per_video_mean"}))
      ->capture_default_str();

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Compare backward() with central differences");
  c_gc->add_option("--module", gc.module, "apu | cau | losses | e2e | all")
      ->check(CLI::IsMember({"apu", "cau", "losses", "e2e", "all"}))
      ->capture_default_str();
  c_gc->add_option("--seeds", gc.seeds, "Number of consecutive seeds")->capture_default_str();
  c_gc->add_option("--out", gc.out, "Directory for the manifest")->capture_default_str();

  BenchArgs be;
  auto* c_bench = app.add_subcommand("bench-attn", "Criss-cross vs dense attention cost");
  c_bench->add_option("--sizes", be.sizes, "Comma-separated HxW list")->capture_default_str();
  c_bench->add_option("--R", be.loops, "Criss-cross loops")->capture_default_str();
  c_bench->add_option("--channels", be.channels, "Feature channels")->capture_default_str();
  c_bench->add_option("--out", be.out, "Complexity CSV")->capture_default_str();

  ExportArgs ex;
  auto* c_export = app.add_subcommand("export-maps", "Write the APU normalcy maps of one frame as PGM");
  c_export->add_option("--ckpt", ex.ckpt, "Model checkpoint")->required();
  c_export->add_option("--data", ex.data, "Dataset directory")->required();
  c_export->add_option("--frame", ex.frame, "Target frame index")->required();
  c_export->add_option("--video", ex.video, "Video id (default: first test video)");
  c_export->add_option("--out", ex.out, "Output directory")->capture_default_str();

  PrintArgs pc;
  auto* c_print = app.add_subcommand("print-config", "Print the fully resolved config");
  c_print->add_option("--config", pc.config, "Config (or dataset spec) JSON to resolve");
  c_print->add_option("--what", pc.what, "run | dataset")
      ->check(CLI::IsMember({"run", "dataset"}))
      ->capture_default_str();
  c_print->add_option("--out", pc.out, "Directory for the manifest")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  Run r;
  r.seed = seed;
  CLI::App* chosen = app.get_subcommands().front();
  r.command = chosen->get_name();
  const auto t0 = std::chrono::steady_clock::now();
  int code = kOk;
  std::string message;
  try {
    if (chosen == c_gen) gen_data(r, gd, out);
    else if (chosen == c_train) train_cmd(r, tr, out);
    else if (chosen == c_score) score_cmd(r, sc, out);
    else if (chosen == c_eval) eval_cmd(r, ev, out);
    else if (chosen == c_gc) code = gradcheck_cmd(r, gc, out);
    else if (chosen == c_bench) bench_cmd(r, be, out);
    else if (chosen == c_export) export_cmd(r, ex, out);
    else if (chosen == c_print) print_cmd(r, pc, out);
  } catch (...) {
    code = exit_code(std::current_exception(), message, r.details);
    err << "apn " << r.command << ": " << message << "\n";
  }

  if (!r.manifest.empty()) {
    json m = {{"command", r.command},
              {"config", r.config},
              {"seed", r.seed},
              {"tool_version", kVersion},
              {"inputs", r.inputs},
              {"outputs", r.outputs},
              {"details", r.details},
              {"wall_time_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()},
              {"exit_code", code},
              {"status", code == kOk ? "ok" : "error"}};
    if (!message.empty()) m["error"] = message;
    try {
      write_json(r.manifest, m);
    } catch (const std::exception& e) {
      err << "apn " << r.command << ": could not write manifest: " << e.what() << "\n";
      if (code == kOk) code = kFailure;
    }
  }
  return code;
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace apn::cli
