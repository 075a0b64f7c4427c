// fshgr: synthesize data, train, evaluate, gradient-check and replay the
// few-shot gesture recognition pipeline. One binary, one manifest per run;
// re-running any command with --config <manifest> reproduces it exactly.
//
// Exit codes: 0 success, 1 usage, 2 data/format, 3 numeric failure.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fshgr/checkpoint.hpp"
#include "fshgr/config.hpp"
#include "fshgr/dataset.hpp"
#include "fshgr/episodes.hpp"
#include "fshgr/gradcheck_suite.hpp"
#include "fshgr/training.hpp"
#include "fshgr/version.hpp"

namespace fs = std::filesystem;
using namespace fshgr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&tt, &tm_utc);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

void stamp(ConfigMap& m, const std::string& command) {
  m.set("run.command", command);
  m.set("run.version", kVersion);
  m.set("run.timestamp", now_iso8601());
}

void write_manifest(const ConfigMap& m, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  m.write_file(out_dir / "manifest.cfg",
               {"fshgr run manifest; re-run with: fshgr " + m.get("run.command", "?") +
                " --config " + (out_dir / "manifest.cfg").string()});
}

int resolve_workers_key(const ConfigMap& m, const std::string& key) {
  if (m.has(key)) return static_cast<int>(m.get_int(key, 0));
  if (const char* env = std::getenv("FSHGR_WORKERS")) return std::atoi(env);
  return 0;  // auto
}

// Precedence: defaults < command-line flags < config file.
void overlay_config_file(ConfigMap& m, const std::string& config_path,
                         const std::string& command) {
  if (config_path.empty()) return;
  m.overlay(ConfigMap::parse_file(config_path));
  stamp(m, command);  // refresh run metadata after the overlay
}

void print_clamp_stats(const MetaSplit& split) {
  if (split.clamps.total_samples == 0) return;
  const double pct = 100.0 * static_cast<double>(split.clamps.minmax_clamped) /
                     static_cast<double>(split.clamps.total_samples);
  std::cout << "preprocess: " << split.clamps.minmax_clamped << " / "
            << split.clamps.total_samples << " samples clamped by minmax (" << pct << "%), "
            << split.clamps.prescale_clamped << " clamped pre-mu-law";
  if (split.clamps.degenerate_channels)
    std::cout << ", " << split.clamps.degenerate_channels << " degenerate-channel samples";
  std::cout << "\n";
}

// --- synth -------------------------------------------------------------------

int cmd_synth(const ConfigMap& m) {
  SynthSpec spec;
  spec.subjects = static_cast<int>(m.get_int("synth.subjects", spec.subjects));
  spec.gestures = static_cast<int>(m.get_int("synth.gestures", spec.gestures));
  spec.reps = static_cast<int>(m.get_int("synth.reps", spec.reps));
  spec.duration_s = m.get_double("synth.duration_s", spec.duration_s);
  spec.fs = m.get_double("synth.fs", spec.fs);
  spec.channels = static_cast<int>(m.get_int("synth.channels", spec.channels));
  spec.noise = m.get_double("synth.noise", spec.noise);
  spec.rep_jitter = m.get_double("synth.rep_jitter", spec.rep_jitter);
  spec.subject_jitter = m.get_double("synth.subject_jitter", spec.subject_jitter);
  spec.with_rest = m.get_bool("synth.with_rest", spec.with_rest);
  spec.validate();
  const std::uint64_t seed = m.get_u64("run.seed", 0);
  const fs::path out = m.require("run.out");

  write_manifest(m, out);
  const std::size_t files = generate_synthetic(spec, seed, out);
  const Catalog cat = Catalog::build(out);
  std::cout << "wrote " << files << " recordings under " << out << "\n";
  std::cout << "catalog: " << cat.size() << " entries, " << cat.subjects().size()
            << " subjects, " << cat.gestures().size() << " gestures, "
            << cat.repetitions().size() << " repetitions\n";
  return kExitOk;
}

// --- train -------------------------------------------------------------------

int cmd_train(const ConfigMap& m) {
  const fs::path data = m.require("run.data");
  const fs::path out = m.require("run.out");

  ModelConfig mcfg = model_config_from_map(m);
  TrainConfig tcfg = train_config_from_map(m);
  PreprocessConfig prep = preprocess_config_from_map(m);
  mcfg.n_way = tcfg.n_way;
  mcfg.k_shot = tcfg.k_shot;
  mcfg.embedding.window_len = prep.window_samples();

  // materialize every resolved value, then persist the manifest up front
  ConfigMap resolved = m;
  to_map(mcfg, resolved);
  to_map(tcfg, resolved);
  to_map(prep, resolved);
  resolved.set_int("train.batch_size_resolved", tcfg.resolved_batch_size());
  write_manifest(resolved, out);

  const Catalog cat = Catalog::build(data);
  std::cout << "catalog: " << cat.size() << " recordings from " << data << "\n";
  MetaSplit split = build_meta_split(cat, tcfg.scenario, prep, tcfg.include_rest);
  print_clamp_stats(split);
  std::cout << "pools: train=" << split.train.size() << " val=" << split.val.size()
            << " test=" << split.test.size() << " windows"
            << (split.val_overlaps_train ? " (val carved from train repetitions)" : "")
            << "\n";
  split.stats.save(out / "norm_stats.fsn1");

  std::ofstream report_stream(out / "report.txt");
  report_stream << "# step/split/loss/acc/stderr records, one eval point per line\n";
  class Tee : public std::ostream, private std::streambuf {
   public:
    Tee(std::ostream& a, std::ostream& b) : std::ostream(this), a_(a), b_(b) {}

   private:
    int overflow(int c) override {
      if (c != EOF) {
        a_.put(static_cast<char>(c));
        b_.put(static_cast<char>(c));
      }
      return c;
    }
    std::ostream& a_;
    std::ostream& b_;
  } tee(std::cout, report_stream);

  TrainResult<float> result = train_model<float>(split, mcfg, tcfg, &tee);

  save_checkpoint(out / "checkpoint.fsh1", result.params);
  ConfigMap model_map;
  to_map(mcfg, model_map);
  to_map(prep, model_map);
  model_map.set("data.scenario", to_string(tcfg.scenario));
  model_map.set_bool("data.include_rest", tcfg.include_rest);
  model_map.set("data.sampling_mode", to_string(tcfg.sampling_mode));
  model_map.set_bool("data.label_shuffle", tcfg.label_shuffle);
  model_map.write_file(out / "model.cfg", {"model + preprocessing config for eval/replay"});
  ConfigMap summary = result.report.summary();
  summary.write_file(out / "summary.cfg");

  std::cout << "best val acc " << result.report.best_val_acc << " at step "
            << result.report.best_step << "; test acc " << result.report.final_test.acc
            << " +/- " << result.report.final_test.stderr_ << "\n";
  std::cout << "checkpoint: " << (out / "checkpoint.fsh1") << "\n";
  return kExitOk;
}

// --- eval / replay -------------------------------------------------------------

struct LoadedModel {
  ModelConfig mcfg;
  PreprocessConfig prep;
  Scenario scenario;
  bool include_rest;
  SamplingMode mode;
  bool label_shuffle;
  ParamSet<float> params;
  std::unique_ptr<Model<float>> model;
};

LoadedModel load_model(const ConfigMap& m) {
  const fs::path ckpt = m.require("run.checkpoint");
  fs::path model_cfg_path = m.get("run.model_config", (ckpt.parent_path() / "model.cfg").string());
  if (!fs::exists(model_cfg_path))
    throw FormatError("model config not found at " + model_cfg_path.string() +
                      " (pass --model-config)");
  ConfigMap mm = ConfigMap::parse_file(model_cfg_path);

  LoadedModel lm;
  lm.mcfg = model_config_from_map(mm);
  lm.prep = preprocess_config_from_map(mm);
  lm.scenario = scenario_from_string(
      m.get("data.scenario", mm.get("data.scenario", "new-subjects")));
  lm.include_rest = m.has("data.include_rest")
                        ? m.get_bool("data.include_rest", false)
                        : mm.get_bool("data.include_rest", false);
  lm.mode = sampling_mode_from_string(
      m.get("data.sampling_mode", mm.get("data.sampling_mode", "same-subject")));
  lm.label_shuffle = m.has("data.label_shuffle")
                         ? m.get_bool("data.label_shuffle", true)
                         : mm.get_bool("data.label_shuffle", true);

  RngStream init = RngStream(lm.mcfg.seed).fork("init");
  lm.model = std::make_unique<Model<float>>(lm.mcfg, lm.params, init);
  load_checkpoint_into(ckpt, lm.params);
  return lm;
}

int cmd_eval(const ConfigMap& m_in) {
  ConfigMap m = m_in;
  LoadedModel lm = load_model(m);
  const fs::path data = m.require("run.data");
  const Split split_name = split_from_string(m.get("run.split", "meta-test"));
  const int episodes = static_cast<int>(m.get_int("run.episodes", 1000));
  if (episodes < 1) throw ParameterError("--episodes must be >= 1");
  const std::uint64_t seed = m.get_u64("run.seed", 0);
  const int workers = resolve_workers_key(m, "run.workers");
  const fs::path ckpt = m.require("run.checkpoint");
  const fs::path out = m.get("run.out", (ckpt.parent_path() /
                                         ("eval-" + to_string(split_name) + "-seed" +
                                          std::to_string(seed)))
                                            .string());
  m.set("run.out", out.string());
  m.set("run.split", to_string(split_name));
  m.set_int("run.episodes", episodes);
  write_manifest(m, out);

  const Catalog cat = Catalog::build(data);
  MetaSplit split = build_meta_split(cat, lm.scenario, lm.prep, lm.include_rest);
  const WindowPool& pool = split.pool(split_name);
  check_pool_feasibility(pool, lm.mcfg.n_way, lm.mcfg.k_shot, lm.mode);

  RngStream rng = RngStream(seed).fork("eval-episodes");
  std::vector<Episode> eps;
  eps.reserve(static_cast<std::size_t>(episodes));
  for (int i = 0; i < episodes; ++i)
    eps.push_back(sample_episode(pool, lm.mcfg.n_way, lm.mcfg.k_shot, lm.mode, rng,
                                 lm.label_shuffle));
  const EvalOutcome outcome = evaluate_episodes(*lm.model, lm.params, pool,
                                                std::span<const Episode>(eps.data(), eps.size()),
                                                workers);
  save_replay(out / "replay.fsep", seed, lm.mcfg.n_way, lm.mcfg.k_shot, lm.mode,
              std::span<const Episode>(eps.data(), eps.size()), pool);

  ConfigMap summary;
  summary.set("eval.split", to_string(split_name));
  summary.set_double("eval.acc", outcome.acc);
  summary.set_double("eval.stderr", outcome.stderr_);
  summary.set_double("eval.loss", outcome.loss);
  summary.set_int("eval.episodes", outcome.episodes);
  summary.set_u64("eval.seed", seed);
  summary.write_file(out / "summary.cfg");

  std::printf("%s accuracy %.4f +/- %.4f (loss %.4f, %d episodes)\n",
              to_string(split_name).c_str(), outcome.acc, outcome.stderr_, outcome.loss,
              outcome.episodes);
  std::cout << "replay file: " << (out / "replay.fsep") << "\n";
  return kExitOk;
}

int cmd_replay(const ConfigMap& m_in) {
  ConfigMap m = m_in;
  LoadedModel lm = load_model(m);
  const fs::path data = m.require("run.data");
  const fs::path replay_path = m.require("run.replay");
  const Split split_name = split_from_string(m.get("run.split", "meta-test"));
  const int workers = resolve_workers_key(m, "run.workers");

  const Catalog cat = Catalog::build(data);
  MetaSplit split = build_meta_split(cat, lm.scenario, lm.prep, lm.include_rest);
  const WindowPool& pool = split.pool(split_name);
  const ReplayFile rf = load_replay(replay_path, pool);
  if (rf.n_way != lm.mcfg.n_way || rf.k_shot != lm.mcfg.k_shot)
    throw FormatError("replay file is " + std::to_string(rf.n_way) + "-way " +
                      std::to_string(rf.k_shot) + "-shot but the checkpoint expects " +
                      std::to_string(lm.mcfg.n_way) + "-way " +
                      std::to_string(lm.mcfg.k_shot) + "-shot");
  const EvalOutcome outcome =
      evaluate_episodes(*lm.model, lm.params, pool,
                        std::span<const Episode>(rf.episodes.data(), rf.episodes.size()),
                        workers);
  std::printf("replayed %zu episodes: accuracy %.4f +/- %.4f (loss %.4f)\n",
              rf.episodes.size(), outcome.acc, outcome.stderr_, outcome.loss);
  if (m.has("run.out")) {
    const fs::path out = m.require("run.out");
    write_manifest(m, out);
    ConfigMap summary;
    summary.set("eval.split", to_string(split_name));
    summary.set_double("eval.acc", outcome.acc);
    summary.set_double("eval.stderr", outcome.stderr_);
    summary.set_double("eval.loss", outcome.loss);
    summary.set_int("eval.episodes", outcome.episodes);
    summary.write_file(out / "summary.cfg");
  }
  return kExitOk;
}

// --- gradcheck -------------------------------------------------------------------

int cmd_gradcheck(const ConfigMap& m) {
  const std::uint64_t seed = m.get_u64("run.seed", 0);
  const int seeds_per_op = static_cast<int>(m.get_int("run.seeds_per_op", 10));
  const double tol = m.get_double("run.tol", 1e-4);
  const double h = m.get_double("run.h", 1e-5);

  const std::string fault = m.get("run.inject_fault", "");
  if (!fault.empty()) {
    bool found = false;
    for (int op = 0; op <= static_cast<int>(OpKind::Sum); ++op) {
      if (fault == op_name(static_cast<OpKind>(op))) {
        debug::gradient_fault = {true, static_cast<OpKind>(op), 1.01};
        found = true;
        break;
      }
    }
    if (!found) throw ParameterError("unknown op for --inject-fault: " + fault);
    std::cout << "injecting 1% gradient fault into backward of '" << fault << "'\n";
  }

  if (m.has("run.out")) write_manifest(m, m.require("run.out"));

  const auto results = run_gradient_suite(seed, seeds_per_op, tol, h);
  bool ok = true;
  std::printf("%-28s %12s %8s %8s  %s\n", "op", "max_rel_err", "checked", "skipped", "status");
  for (const auto& r : results) {
    std::printf("%-28s %12.3e %8lld %8lld  %s\n", r.name.c_str(), r.max_rel_err,
                static_cast<long long>(r.checked), static_cast<long long>(r.skipped),
                r.pass ? "ok" : "FAIL");
    ok = ok && r.pass;
  }
  if (!ok) {
    std::cout << "gradient check FAILED (tolerance " << tol << ")\n";
    return kExitNumeric;
  }
  std::cout << "all gradient checks passed (tolerance " << tol << ")\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fshgr: few-shot sEMG gesture recognition pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  // Every flag lands in a ConfigMap key; a --config file overlays the flags,
  // and the fully resolved map is written to the run manifest.
  struct FlagSpec {
    std::string key;
    std::string value;
  };

  ConfigMap flags[5];
  std::string config_path[5];

  const auto add_common = [&](CLI::App* sub, int idx) {
    sub->add_option_function<std::string>(
           "--config", [&, idx](const std::string& v) { config_path[idx] = v; },
           "config file; its keys override command-line flags");
    sub->add_option_function<std::uint64_t>(
           "--seed", [&, idx](std::uint64_t v) { flags[idx].set_u64("run.seed", v); },
           "master RNG seed");
  };
  const auto opt = [&](CLI::App* sub, int idx, const std::string& flag, const std::string& key,
                       const std::string& help) {
    sub->add_option_function<std::string>(
        flag, [&, idx, key](const std::string& v) { flags[idx].set(key, v); }, help);
  };
  const auto flag_bool = [&](CLI::App* sub, int idx, const std::string& flag,
                             const std::string& key, const std::string& value,
                             const std::string& help) {
    sub->add_flag_function(
        flag, [&, idx, key, value](std::int64_t) { flags[idx].set(key, value); }, help);
  };

  // synth ----------------------------------------------------------------
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic FSE1 recording tree");
  add_common(synth, 0);
  opt(synth, 0, "--out", "run.out", "output directory (data root)");
  opt(synth, 0, "--subjects", "synth.subjects", "number of subjects");
  opt(synth, 0, "--gestures", "synth.gestures", "number of gesture classes");
  opt(synth, 0, "--reps", "synth.reps", "repetitions per gesture");
  opt(synth, 0, "--duration", "synth.duration_s", "seconds per recording");
  opt(synth, 0, "--fs", "synth.fs", "sampling rate in Hz");
  opt(synth, 0, "--channels", "synth.channels", "electrode channels");
  opt(synth, 0, "--noise", "synth.noise", "white-noise sigma");
  opt(synth, 0, "--rep-jitter", "synth.rep_jitter", "repetition jitter level");
  opt(synth, 0, "--subject-jitter", "synth.subject_jitter", "subject jitter level");
  flag_bool(synth, 0, "--with-rest", "synth.with_rest", "true", "also emit rest (gesture 0)");

  // train ----------------------------------------------------------------
  CLI::App* train = app.add_subcommand("train", "train on a recording tree");
  add_common(train, 1);
  opt(train, 1, "--data", "run.data", "FSE1 data root");
  opt(train, 1, "--out", "run.out", "run output directory");
  opt(train, 1, "--scenario", "train.scenario",
      "generalization scenario {new-repetitions, new-subjects, new-gestures}");
  opt(train, 1, "--n", "train.n_way", "classes per episode (N)");
  opt(train, 1, "--k", "train.k_shot", "support examples per class (k)");
  train->add_option_function<std::string>(
      "--embedding",
      [&](const std::string& v) {
        embedding_kind_from_string(v);  // usage error on bogus values
        flags[1].set("model.embedding", v);
      },
      "embedding module {fc, lstm, tblock1, tblock2}");
  opt(train, 1, "--mode", "train.sampling_mode",
      "episode sampling mode {same-subject, cross-subject}");
  opt(train, 1, "--steps", "train.max_steps", "optimizer steps");
  opt(train, 1, "--batch", "train.batch_size", "episodes per batch (0 = auto)");
  opt(train, 1, "--lr", "train.lr", "Adam learning rate");
  opt(train, 1, "--eval-every", "train.eval_every", "steps between meta-val evaluations");
  opt(train, 1, "--eval-episodes", "train.eval_episodes", "episodes per evaluation");
  opt(train, 1, "--workers", "train.workers", "worker threads (0 = all cores)");
  opt(train, 1, "--out-dim", "model.out_dim", "embedding feature width");
  opt(train, 1, "--hidden-time", "model.hidden_time", "time-axis FC hidden size");
  opt(train, 1, "--filters", "model.tcn_filters", "temporal block filters");
  opt(train, 1, "--kernel", "model.tcn_kernel", "temporal block kernel size");
  opt(train, 1, "--dk", "model.d_k", "attention key/query width");
  opt(train, 1, "--dv", "model.d_v", "attention value width");
  opt(train, 1, "--model-seed", "model.seed", "parameter init seed");
  flag_bool(train, 1, "--no-causal-mask", "model.causal_mask", "false",
            "disable the causal attention mask");
  flag_bool(train, 1, "--include-rest", "train.include_rest", "true",
            "include rest (gesture 0) in the label space");
  flag_bool(train, 1, "--no-label-shuffle", "train.label_shuffle", "false",
            "fixed gesture->slot assignment (ablation)");
  opt(train, 1, "--window-ms", "prep.window_ms", "window length in ms");
  opt(train, 1, "--step-ms", "prep.step_ms", "window stride in ms");
  opt(train, 1, "--cutoff", "prep.cutoff_hz", "Butterworth cutoff in Hz");
  opt(train, 1, "--mu", "prep.mu", "mu-law parameter");

  // eval -----------------------------------------------------------------
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_common(eval, 2);
  opt(eval, 2, "--checkpoint", "run.checkpoint", "FSH1 checkpoint path");
  opt(eval, 2, "--model-config", "run.model_config", "model.cfg path (default: next to checkpoint)");
  opt(eval, 2, "--data", "run.data", "FSE1 data root");
  opt(eval, 2, "--split", "run.split", "split {meta-train, meta-val, meta-test}");
  eval->add_option_function<std::string>(
      "--episodes",
      [&](const std::string& v) {
        if (std::atoll(v.c_str()) < 1) throw CLI::ValidationError("--episodes must be >= 1");
        flags[2].set("run.episodes", v);
      },
      "number of evaluation episodes");
  opt(eval, 2, "--out", "run.out", "output directory for replay + summary");
  opt(eval, 2, "--workers", "run.workers", "worker threads (0 = all cores)");
  opt(eval, 2, "--scenario", "data.scenario", "override the scenario recorded at training");
  opt(eval, 2, "--mode", "data.sampling_mode", "override the sampling mode");

  // gradcheck ---------------------------------------------------------------
  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference verification of every op and the tiny end-to-end model");
  add_common(gradcheck, 3);
  opt(gradcheck, 3, "--seeds-per-op", "run.seeds_per_op", "random inputs per op (default 10)");
  opt(gradcheck, 3, "--tol", "run.tol", "relative-error tolerance (default 1e-4)");
  opt(gradcheck, 3, "--fd-step", "run.h", "finite-difference step (default 1e-5)");
  opt(gradcheck, 3, "--out", "run.out", "optional output directory for the manifest");
  opt(gradcheck, 3, "--inject-fault", "run.inject_fault",
      "test hook: corrupt the named op's backward and expect a failure");

  // replay --------------------------------------------------------------------
  CLI::App* replay = app.add_subcommand("replay", "re-evaluate an exact episode stream");
  add_common(replay, 4);
  opt(replay, 4, "--checkpoint", "run.checkpoint", "FSH1 checkpoint path");
  opt(replay, 4, "--model-config", "run.model_config", "model.cfg path");
  opt(replay, 4, "--data", "run.data", "FSE1 data root");
  opt(replay, 4, "--replay", "run.replay", "FSEP replay file");
  opt(replay, 4, "--split", "run.split", "split the episodes were sampled from");
  opt(replay, 4, "--out", "run.out", "optional output directory");
  opt(replay, 4, "--workers", "run.workers", "worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const auto run = [&](int idx, const std::string& name,
                       int (*fn)(const ConfigMap&)) -> int {
    ConfigMap m = flags[idx];
    stamp(m, name);
    overlay_config_file(m, config_path[idx], name);
    return fn(m);
  };

  try {
    if (synth->parsed()) return run(0, "synth", cmd_synth);
    if (train->parsed()) return run(1, "train", cmd_train);
    if (eval->parsed()) return run(2, "eval", cmd_eval);
    if (gradcheck->parsed()) return run(3, "gradcheck", cmd_gradcheck);
    if (replay->parsed()) return run(4, "replay", cmd_replay);
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const CatalogError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const SamplingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
