#include "clcagan/cli/commands.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>
#include <fstream>
#include <ostream>
#include <sstream>

#include "clcagan/cli/reports.hpp"
#include "clcagan/cli/run_config.hpp"
#include "clcagan/detect_eval.hpp"
#include "clcagan/hsi_data.hpp"

namespace clcagan::cli {

namespace fs = std::filesystem;

int exit_code_for(const Error& error) {
  if (error.code() == ErrorCode::ConfigError) return kExitUsage;
  if (is_numerical(error.code())) return kExitNumerical;
  return kExitData;
}

SceneSource parse_scene_arg(const std::string& arg) {
  if (arg.empty()) throw Error(ErrorCode::ConfigError, "empty scene argument");
  SceneSource s;
  const auto comma = arg.find(',');
  if (comma != std::string::npos) {
    s.cube = arg.substr(0, comma);
    s.truth = fs::path(arg.substr(comma + 1));
    s.name = s.cube.stem().string();
    return s;
  }
  const fs::path p(arg);
  if (fs::is_directory(p)) {
    s.cube = p / "scene.hsib";
    if (fs::exists(p / "truth.msk")) s.truth = p / "truth.msk";
    s.name = p.filename().empty() ? p.parent_path().filename().string() : p.filename().string();
  } else {
    s.cube = p;
    s.name = p.stem().string();
  }
  return s;
}

Task load_task(const SceneSource& source) {
  auto cube = load_hsi(source.cube);
  std::optional<GroundTruthMask> truth;
  if (source.truth) {
    truth = load_mask(*source.truth);
    if (!truth->matches(cube)) {
      throw Error(ErrorCode::ShapeMismatch, "truth " + source.truth->string() + " does not match " +
                                                source.cube.string());
    }
  }
  return {source.name, std::move(cube), std::move(truth)};
}

namespace {

struct Dims {
  std::size_t h = 0, w = 0, c = 0;
};

Dims parse_size(const std::string& text) {
  Dims d;
  char x1 = 0, x2 = 0;
  std::istringstream in(text);
  if (!(in >> d.h >> x1 >> d.w >> x2 >> d.c) || x1 != 'x' || x2 != 'x' || !in.eof()) {
    throw Error(ErrorCode::ConfigError, "--size expects MxNxC, got '" + text + "'");
  }
  return d;
}

// --------------------------------------------------------------------------

struct SynthArgs {
  std::uint64_t seed = 7;
  std::string size = "64x64x32";
  std::size_t anomalies = 5;
  double contrast = 0.3;
  int max_radius = 3;
  std::string out;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const auto d = parse_size(a.size);
  SceneOptions opts;
  opts.max_blob_radius = a.max_radius;
  const auto scene = generate_synthetic_scene(a.seed, d.h, d.w, d.c, a.anomalies, a.contrast, opts);
  fs::create_directories(a.out);
  const auto cube_path = fs::path(a.out) / "scene.hsib";
  const auto truth_path = fs::path(a.out) / "truth.msk";
  save_hsi(scene.cube, cube_path);
  save_mask(scene.truth, truth_path);
  out << "wrote " << cube_path.string() << " (" << d.h << "x" << d.w << "x" << d.c << ")\n";
  out << "wrote " << truth_path.string() << " (" << scene.truth.anomaly_count() << " anomaly pixels)\n";
  return kExitOk;
}

// --------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> scenes;
  std::vector<std::string> names;
  std::string mode;
  int epochs = 0;
  std::uint64_t seed = 0;
  std::string out;
  std::vector<std::string> sets;
  int threads = 1;
  std::string resume;
};

json task_json(const SceneSource& src, const Task& t) {
  return {{"name", t.name},
          {"cube", src.cube.string()},
          {"truth", src.truth ? json(src.truth->string()) : json(nullptr)},
          {"height", t.cube.height()},
          {"width", t.cube.width()},
          {"bands", t.cube.channels()}};
}

json comparable_config(json resolved) {
  for (const char* k : {"scenes", "names", "out", "threads"}) resolved.erase(k);
  return resolved;
}

std::optional<ClMetrics> try_metrics(const AucMatrix& m) {
  try {
    return cl_metrics(m);
  } catch (const Error&) {
    return std::nullopt;
  }
}

StreamState load_resume_state(const fs::path& dir, const ResolvedConfig& rc, const std::vector<SceneSource>& sources) {
  const auto manifest = read_json_file(dir / "manifest.json");
  try {
    if (comparable_config(manifest.at("config").at("resolved")) != comparable_config(rc.resolved)) {
      throw Error(ErrorCode::ConfigError, "resume run was trained with a different configuration");
    }
    const auto& prior_tasks = manifest.at("tasks");
    if (prior_tasks.size() > sources.size()) {
      throw Error(ErrorCode::ConfigError, "resume run has more tasks than this stream");
    }
    for (std::size_t i = 0; i < prior_tasks.size(); ++i) {
      if (prior_tasks[i].at("cube").get<std::string>() != sources[i].cube.string()) {
        throw Error(ErrorCode::ConfigError, "resume run's task " + std::to_string(i + 1) + " differs from this stream");
      }
    }
    StreamState st;
    for (const auto& s : manifest.at("stages")) st.stages.push_back(stage_from_json(s));
    st.completed = st.stages.size();
    st.auc_matrix = auc_matrix_from_json(manifest.at("auc_matrix"));
    if (st.completed > 0) {
      const auto& last = manifest.at("stages").back();
      st.params = load_checkpoint(dir / last.at("checkpoint").get<std::string>());
      st.buffer = load_buffer(dir / last.at("buffer").get<std::string>());
    } else {
      st.buffer = ReplayBuffer(rc.config.train.replay_capacity);
    }
    return st;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("malformed manifest: ") + e.what());
  }
}

int cmd_train(const TrainArgs& a, const CLI::App& sub, std::ostream& out) {
  json flags = json::object();
  if (sub.count("--scene")) flags["scenes"] = a.scenes;
  if (sub.count("--name")) flags["names"] = a.names;
  if (sub.count("--mode")) flags["mode"] = a.mode;
  if (sub.count("--epochs")) flags["epochs"] = a.epochs;
  if (sub.count("--seed")) flags["seed"] = a.seed;
  if (sub.count("--out")) flags["out"] = a.out;
  if (sub.count("--threads")) flags["threads"] = a.threads;
  for (const auto& s : a.sets) apply_assignment(flags, s);
  const auto rc = resolve_config(a.config.empty() ? std::nullopt : std::optional<fs::path>(a.config), flags);
  const auto& cfg = rc.config;
  if (cfg.scenes.empty()) throw Error(ErrorCode::ConfigError, "no scenes given (--scene or \"scenes\")");
  if (cfg.out.empty()) throw Error(ErrorCode::ConfigError, "no output directory given (--out or \"out\")");

  // Everything that can fail on input is checked before the first write.
  std::vector<SceneSource> sources;
  TaskStream stream;
  json tasks = json::array();
  for (std::size_t i = 0; i < cfg.scenes.size(); ++i) {
    auto src = parse_scene_arg(cfg.scenes[i]);
    if (!cfg.names.empty()) src.name = cfg.names[i];
    auto task = load_task(src);
    tasks.push_back(task_json(src, task));
    sources.push_back(src);
    stream.add(std::move(task));
  }
  stream.validate();
  std::optional<StreamState> resume;
  if (!a.resume.empty()) resume = load_resume_state(a.resume, rc, sources);

  Eigen::setNbThreads(cfg.threads);
  const fs::path dir(cfg.out);
  fs::create_directories(dir);

  json manifest = {{"tool", "clcagan"},
                   {"command", "train"},
                   {"config", {{"defaults", rc.defaults}, {"file", rc.file}, {"flags", rc.flags}, {"resolved", rc.resolved}}},
                   {"seed", cfg.train.seed},
                   {"mode", to_string(cfg.train.mode)},
                   {"threads", cfg.threads},
                   {"tasks", tasks},
                   {"stages", json::array()},
                   {"auc_matrix", json::array()}};
  if (resume) {
    for (const auto& s : resume->stages) {
      auto sj = stage_json(s);
      sj["checkpoint"] = "stage_" + std::to_string(s.stage) + ".caps";
      sj["buffer"] = "buffer_stage_" + std::to_string(s.stage) + ".rply";
      manifest["stages"].push_back(sj);
      // carry the earlier stage files so the output directory is self-contained
      if (fs::path(a.resume) != dir) {
        for (const auto& f : {sj["checkpoint"].get<std::string>(), sj["buffer"].get<std::string>()}) {
          fs::copy_file(fs::path(a.resume) / f, dir / f, fs::copy_options::overwrite_existing);
        }
      }
    }
    manifest["auc_matrix"] = auc_matrix_json(resume->auc_matrix);
  }

  AucMatrix matrix = resume ? resume->auc_matrix : AucMatrix{};
  auto on_stage = [&](const StageLog& s, const NetworkParams& params, const ReplayBuffer& buffer) {
    const auto caps = "stage_" + std::to_string(s.stage) + ".caps";
    const auto rply = "buffer_stage_" + std::to_string(s.stage) + ".rply";
    save_checkpoint(params, dir / caps);
    save_buffer(buffer, dir / rply);
    auto sj = stage_json(s);
    sj["checkpoint"] = caps;
    sj["buffer"] = rply;
    manifest["stages"].push_back(sj);
    matrix.push_back(s.auc_row);
    manifest["auc_matrix"] = auc_matrix_json(matrix);
    write_json_file(manifest, dir / "manifest.json");
    out << "stage " << s.stage << " (" << s.task << "): AUC row [";
    for (std::size_t i = 0; i < s.auc_row.size(); ++i) {
      out << (i ? ", " : "");
      if (s.auc_row[i]) {
        out << *s.auc_row[i];
      } else {
        out << "-";
      }
    }
    out << "], buffer " << s.buffer_size << "\n";
  };

  const auto result = train_stream(stream, cfg.train, resume ? &*resume : nullptr, on_stage);
  manifest["feature_dim"] = result.feature_dim;
  manifest["auc_matrix"] = auc_matrix_json(result.auc_matrix);
  json matrix_doc = {{"auc_matrix", auc_matrix_json(result.auc_matrix)}};
  if (const auto m = try_metrics(result.auc_matrix)) {
    manifest["metrics"] = metrics_json(*m);
    matrix_doc["metrics"] = metrics_json(*m);
    out << "acc " << m->acc;
    if (m->bwt) out << ", bwt " << *m->bwt;
    out << "\n";
  }
  save_buffer(result.buffer, dir / "buffer.rply");
  write_json_file(matrix_doc, dir / "auc_matrix.json");
  write_json_file(manifest, dir / "manifest.json");
  return kExitOk;
}

// --------------------------------------------------------------------------

struct DetectArgs {
  std::string checkpoint;
  std::string scene;
  std::string out;
  std::size_t window = kDefaultWindow;
  std::size_t thresholds = kDefaultRocThresholds;
};

int cmd_detect(const DetectArgs& a, std::ostream& out) {
  const auto params = load_checkpoint(a.checkpoint);
  const auto task = load_task(parse_scene_arg(a.scene));
  const auto bands = params.generator.arch.feature_dim / 2;
  const auto cube = unify_cube(task.cube, bands);
  const auto features = ss_features(cube, a.window);
  const auto map = score_map(params.generator, features, true);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  save_score_grid(map, dir / "scores.txt");
  save_score_map(map, dir / "scores.scm");
  out << "wrote " << (dir / "scores.txt").string() << " and " << (dir / "scores.scm").string() << "\n";
  if (task.truth) {
    const auto report = auc_suite(roc_3d(map, *task.truth, a.thresholds));
    auto doc = auc_report_json(report);
    doc["identity_residual"] = report.identity_residual();
    doc["checkpoint"] = a.checkpoint;
    doc["scene"] = a.scene;
    write_json_file(doc, dir / "report.json");
    out << "auc_df " << report.auc_df << ", auc_odp " << report.auc_odp << "\n";
  }
  return kExitOk;
}

// --------------------------------------------------------------------------

struct ReportArgs {
  std::string matrix;
  std::string out;
};

int cmd_report(const ReportArgs& a, std::ostream& out) {
  const auto doc = read_json_file(a.matrix);
  const auto metrics = cl_metrics(auc_matrix_from_json(doc));
  const auto result = metrics_json(metrics);
  fs::create_directories(a.out);
  write_json_file(result, fs::path(a.out) / "metrics.json");
  out << result.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Capsule GAN continual hyperspectral anomaly detection"};
  app.name("clcagan");
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Write a synthetic scene (scene.hsib, truth.msk)");
  synth->add_option("--seed", sa.seed, "Random seed")->capture_default_str();
  synth->add_option("--size", sa.size, "Height x width x bands")->capture_default_str();
  synth->add_option("--anomalies", sa.anomalies, "Number of anomaly blobs")->capture_default_str();
  synth->add_option("--contrast", sa.contrast, "Minimum spectral angle of anomalies (rad)")->capture_default_str();
  synth->add_option("--max-radius", sa.max_radius, "Largest blob radius")->capture_default_str();
  synth->add_option("--out", sa.out, "Output directory")->required();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train on one scene or a continual stream");
  train->add_option("--config", ta.config, "JSON run configuration")->check(CLI::ExistingFile);
  train->add_option("--scene", ta.scenes, "Scene directory or cube.hsib[,truth.msk]; repeat in task order");
  train->add_option("--name", ta.names, "Task names, one per scene");
  train->add_option("--mode", ta.mode, "full, fine_tune, distill_only, replay_only, joint, isolated");
  train->add_option("--epochs", ta.epochs, "Epochs per task");
  train->add_option("--seed", ta.seed, "Random seed");
  train->add_option("--out", ta.out, "Output directory");
  train->add_option("--set", ta.sets, "Override a config key: key=value (dotted for nested keys)");
  train->add_option("--threads", ta.threads, "Worker threads (recorded in the manifest)");
  train->add_option("--resume", ta.resume, "Continue from an earlier run's output directory")
      ->check(CLI::ExistingDirectory);

  DetectArgs da;
  auto* detect = app.add_subcommand("detect", "Score a scene with a trained checkpoint");
  detect->add_option("--checkpoint", da.checkpoint, "CAPS checkpoint")->required()->check(CLI::ExistingFile);
  detect->add_option("--scene", da.scene, "Scene directory or cube.hsib[,truth.msk]")->required();
  detect->add_option("--out", da.out, "Output directory")->required();
  detect->add_option("--window", da.window, "Local mean window")->capture_default_str();
  detect->add_option("--thresholds", da.thresholds, "ROC threshold cap")->capture_default_str();

  ReportArgs ra;
  auto* report = app.add_subcommand("report", "ACC and BWT from an AUC matrix");
  report->add_option("--matrix", ra.matrix, "JSON AUC matrix")->required()->check(CLI::ExistingFile);
  report->add_option("--out", ra.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(sa, out);
    if (*train) return cmd_train(ta, *train, out);
    if (*detect) return cmd_detect(da, out);
    if (*report) return cmd_report(ra, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    if (e.code() == ErrorCode::ConfigError) err << app.get_subcommands().front()->help();
    return exit_code_for(e);
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace clcagan::cli
