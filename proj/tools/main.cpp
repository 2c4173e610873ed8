#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "dualseg/config.hpp"
#include "dualseg/evaluation.hpp"
#include "dualseg/plot.hpp"
#include "dualseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace dualseg;

namespace {

std::string runs_root() {
  if (const char* env = std::getenv("DUALSEG_RUN_ROOT")) return env;
  return "runs";
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw std::invalid_argument("cannot open " + p.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

RunConfig config_from_args(const std::string& config_path,
                           const std::vector<std::string>& overrides) {
  std::string text = config_path.empty() ? run_config_to_json(RunConfig{})
                                         : read_file(config_path);
  apply_overrides(text, overrides);
  return run_config_from_json(text);
}

int cmd_synth(int count, int classes, int side, std::uint64_t seed, const std::string& out) {
  Corpus corpus = generate_synthetic(count, classes, side, seed);
  save_corpus(corpus, out);
  std::printf("wrote %zu samples (K=%d, side=%d) to %s\n", corpus.samples.size(), classes, side,
              out.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, std::vector<std::string> overrides,
              const std::string& out, const std::string& resume_dir, bool verbose) {
  TrainOptions opts;
  opts.quiet = !verbose;

  if (!resume_dir.empty()) {
    const RunConfig config = load_run_config(fs::path(resume_dir) / "config.json");
    Corpus corpus = realize_corpus(config.data);
    Corpus eval_corpus;
    if (!config.data.eval_manifest.empty()) {
      const fs::path m(config.data.eval_manifest);
      eval_corpus = load_corpus(m.parent_path(), m);
      opts.eval_corpus = &eval_corpus;
    }
    RunArtifacts artifacts = resume(resume_dir, corpus, opts);
    std::printf("resumed run complete: %s (%zu step records)\n",
                artifacts.run_dir.string().c_str(), artifacts.records.size());
    return 0;
  }

  const RunConfig config = config_from_args(config_path, overrides);
  Corpus corpus = realize_corpus(config.data);
  Corpus eval_corpus;
  if (!config.data.eval_manifest.empty()) {
    const fs::path m(config.data.eval_manifest);
    eval_corpus = load_corpus(m.parent_path(), m);
    opts.eval_corpus = &eval_corpus;
  }

  fs::path run_dir = out;
  if (run_dir.empty())
    run_dir = fs::path(runs_root()) /
              ("run_" + config_fingerprint(config) + "_s" + std::to_string(config.seed));

  RunArtifacts artifacts = train(config, corpus, run_dir, opts);
  std::printf("run complete: %s\n", artifacts.run_dir.string().c_str());
  std::printf("miou_global=%s miou_local=%s miou_fused=%s (eval on %s)\n",
              format_real(artifacts.final_eval.global_student.miou).c_str(),
              format_real(artifacts.final_eval.local_student.miou).c_str(),
              format_real(artifacts.final_eval.fused.miou).c_str(), artifacts.eval_on.c_str());
  return 0;
}

int cmd_eval(const std::string& run_dir, const std::string& manifest, const std::string& out) {
  const RunConfig config = load_run_config(fs::path(run_dir) / "config.json");
  Corpus train_corpus = realize_corpus(config.data);

  DualStudentModel model(config, train_corpus);
  model.load_checkpoint(fs::path(run_dir) / "checkpoints" / "final");

  const fs::path m(manifest);
  Corpus eval_corpus = load_corpus(m.parent_path(), m);
  ModelEvalResult result = evaluate_model(model.global_student(), model.local_student(),
                                          eval_corpus, config_fingerprint(config));

  const fs::path out_dir = out.empty() ? fs::path(run_dir) / "eval" : fs::path(out);
  fs::create_directories(out_dir);
  std::ofstream(out_dir / "report_global.json") << result.global_student.to_json() << "\n";
  std::ofstream(out_dir / "report_local.json") << result.local_student.to_json() << "\n";
  std::ofstream(out_dir / "report_fused.json") << result.fused.to_json() << "\n";
  render_reports({{"global", result.global_student},
                  {"local", result.local_student},
                  {"fused", result.fused}},
                 {}, out_dir);
  std::printf("miou_global=%s miou_local=%s miou_fused=%s\n",
              format_real(result.global_student.miou).c_str(),
              format_real(result.local_student.miou).c_str(),
              format_real(result.fused.miou).c_str());
  return 0;
}

int cmd_monitor(const std::string& run_dir, int epochs, const std::string& out) {
  const fs::path steps_path = fs::path(run_dir) / "steps.jsonl";
  if (!fs::exists(steps_path))
    throw std::invalid_argument("monitor: missing " + steps_path.string());
  const auto records = read_step_records(steps_path.string());

  std::vector<LabeledCurve> curves;
  curves.push_back({"global student", pseudo_curve(records, StudentSide::global_student, epochs)});
  curves.push_back({"local student", pseudo_curve(records, StudentSide::local_student, epochs)});

  const fs::path out_dir = out.empty() ? fs::path(run_dir) / "monitor" : fs::path(out);
  render_reports({}, curves, out_dir);
  std::printf("wrote %s\n", (out_dir / "pseudo_accuracy.svg").string().c_str());
  return 0;
}

struct AblateRun {
  std::string matrix;
  std::string variant;
  std::vector<std::string> overrides;
};

int cmd_ablate(const std::string& config_path, std::vector<std::string> overrides,
               const std::string& out, const std::string& matrix, int jobs) {
  std::vector<AblateRun> plan;
  const bool all = matrix == "all";
  if (all || matrix == "guidance") {
    plan.push_back({"guidance", "none", {"toggles.use_esg=false", "toggles.use_isg=false"}});
    plan.push_back({"guidance", "isg", {"toggles.use_esg=false", "toggles.use_isg=true"}});
    plan.push_back({"guidance", "esg", {"toggles.use_esg=true", "toggles.use_isg=false"}});
    plan.push_back({"guidance", "esg_isg", {"toggles.use_esg=true", "toggles.use_isg=true"}});
  }
  if (all || matrix == "students") {
    plan.push_back({"students", "local_local", {"toggles.homogeneous_students=both_local"}});
    plan.push_back({"students", "global_global", {"toggles.homogeneous_students=both_global"}});
    plan.push_back({"students", "global_local", {"toggles.homogeneous_students=off"}});
  }
  if (all || matrix == "losses") {
    plan.push_back({"losses", "sup", {"toggles.use_ct=false", "toggles.use_sta=false"}});
    plan.push_back({"losses", "sup_ct", {"toggles.use_ct=true", "toggles.use_sta=false"}});
    plan.push_back({"losses", "sup_ct_sta", {"toggles.use_ct=true", "toggles.use_sta=true"}});
  }
  if (plan.empty()) throw std::invalid_argument("ablate: unknown matrix '" + matrix + "'");

  const fs::path out_dir(out);
  fs::create_directories(out_dir);

  struct Row {
    std::string matrix, variant, status;
    real miou_global = 0, miou_local = 0, miou_fused = 0;
  };
  std::vector<Row> rows(plan.size());

  auto run_one = [&](size_t i) {
    const AblateRun& r = plan[i];
    rows[i].matrix = r.matrix;
    rows[i].variant = r.variant;
    try {
      std::vector<std::string> ov = overrides;
      ov.insert(ov.end(), r.overrides.begin(), r.overrides.end());
      const RunConfig config = config_from_args(config_path, ov);
      Corpus corpus = realize_corpus(config.data);
      Corpus eval_corpus;
      TrainOptions opts;
      if (!config.data.eval_manifest.empty()) {
        const fs::path m(config.data.eval_manifest);
        eval_corpus = load_corpus(m.parent_path(), m);
        opts.eval_corpus = &eval_corpus;
      }
      RunArtifacts a = train(config, corpus, out_dir / r.matrix / r.variant, opts);
      rows[i].status = "ok";
      rows[i].miou_global = a.final_eval.global_student.miou;
      rows[i].miou_local = a.final_eval.local_student.miou;
      rows[i].miou_fused = a.final_eval.fused.miou;
    } catch (const std::exception& e) {
      rows[i].status = std::string("failed: ") + e.what();
    }
  };

  if (jobs <= 1) {
    for (size_t i = 0; i < plan.size(); ++i) run_one(i);
  } else {
    for (size_t wave = 0; wave < plan.size(); wave += jobs) {
      std::vector<std::thread> pool;
      for (size_t i = wave; i < std::min(plan.size(), wave + jobs); ++i)
        pool.emplace_back(run_one, i);
      for (auto& t : pool) t.join();
    }
  }

  std::ofstream csv(out_dir / "summary.csv");
  csv << "matrix,variant,status,miou_global,miou_local,miou_fused\n";
  bool any_failed = false;
  for (const auto& r : rows) {
    csv << r.matrix << "," << r.variant << "," << (r.status == "ok" ? "ok" : "failed") << ","
        << format_real(r.miou_global) << "," << format_real(r.miou_local) << ","
        << format_real(r.miou_fused) << "\n";
    if (r.status != "ok") {
      any_failed = true;
      std::fprintf(stderr, "%s/%s %s\n", r.matrix.c_str(), r.variant.c_str(), r.status.c_str());
    }
  }
  std::printf("wrote %s\n", (out_dir / "summary.csv").string().c_str());
  return any_failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-student semi-supervised segmentation trainer"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  int count = 64, classes = 4, side = 64;
  std::uint64_t synth_seed = 0;
  std::string synth_out = "corpus";
  synth->add_option("--count", count, "number of samples");
  synth->add_option("--classes", classes, "class count K (>= 2)");
  synth->add_option("--side", side, "image side length (>= 32)");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", synth_out, "output directory");

  // train
  auto* train_cmd = app.add_subcommand("train", "run the training loop");
  std::string config_path, train_out, resume_dir;
  std::vector<std::string> overrides;
  bool verbose = false;
  std::uint64_t seed_flag = 0;
  bool seed_set = false;
  train_cmd->add_option("--config", config_path, "run config JSON");
  train_cmd->add_option("--out", train_out, "run directory (default under $DUALSEG_RUN_ROOT)");
  train_cmd->add_option("--resume", resume_dir, "resume a checkpointed run directory");
  train_cmd->add_option("--override", overrides, "dotted-path key=value override")
      ->take_all();
  train_cmd->add_flag("--verbose", verbose, "per-epoch progress on stderr");
  train_cmd->add_option("--seed", seed_flag, "run seed (shorthand for --override seed=...)")
      ->each([&](const std::string&) { seed_set = true; });

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a finished run on a labeled corpus");
  std::string eval_run, eval_manifest, eval_out;
  eval_cmd->add_option("--run", eval_run, "run directory")->required();
  eval_cmd->add_option("--manifest", eval_manifest, "evaluation manifest.jsonl")->required();
  eval_cmd->add_option("--out", eval_out, "report directory (default <run>/eval)");

  // monitor
  auto* mon = app.add_subcommand("monitor", "pseudo-label accuracy curves");
  std::string mon_run, mon_out;
  int mon_epochs = 10;
  mon->add_option("run", mon_run, "run directory")->required();
  mon->add_option("--epochs", mon_epochs, "window of early epochs (0 = all)");
  mon->add_option("--out", mon_out, "output directory (default <run>/monitor)");

  // ablate
  auto* abl = app.add_subcommand("ablate", "run ablation matrices");
  std::string abl_config, abl_out = "ablations", abl_matrix = "all";
  std::vector<std::string> abl_overrides;
  int jobs = 1;
  abl->add_option("--config", abl_config, "base run config JSON");
  abl->add_option("--out", abl_out, "output directory");
  abl->add_option("--matrix", abl_matrix, "guidance | students | losses | all");
  abl->add_option("--override", abl_overrides, "base overrides applied to every run")->take_all();
  abl->add_option("--jobs", jobs, "bounded parallelism across independent runs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) return cmd_synth(count, classes, side, synth_seed, synth_out);
    if (*train_cmd) {
      if (seed_set) overrides.push_back("seed=" + std::to_string(seed_flag));
      return cmd_train(config_path, overrides, train_out, resume_dir, verbose);
    }
    if (*eval_cmd) return cmd_eval(eval_run, eval_manifest, eval_out);
    if (*mon) return cmd_monitor(mon_run, mon_epochs, mon_out);
    if (*abl) return cmd_ablate(abl_config, abl_overrides, abl_out, abl_matrix, jobs);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
