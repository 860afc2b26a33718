#include "weatherseg/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "weatherseg/checkpoint.hpp"
#include "weatherseg/config.hpp"
#include "weatherseg/errors.hpp"
#include "weatherseg/gradcheck.hpp"
#include "weatherseg/pseudo_label.hpp"
#include "weatherseg/report.hpp"
#include "weatherseg/rng.hpp"
#include "weatherseg/synthdata.hpp"
#include "weatherseg/trainer.hpp"

#ifndef WEATHERSEG_VERSION
#define WEATHERSEG_VERSION "0.0.0"
#endif

namespace weatherseg {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr std::uint64_t kEvalSceneDomain = 0x65766373ULL;
constexpr std::uint64_t kDumpDomain = 0x64756d70ULL;

// ---------------------------------------------------------------------------
// Options. Every command's resolved options round-trip through the manifest.

struct ConfigFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::optional<std::size_t> epochs;
  std::optional<double> tau;
  std::optional<double> alpha;
  std::optional<double> lambda1;
  std::optional<double> lambda2;
  std::optional<double> lambda3;

  bool any_override() const {
    return seed || variant || epochs || tau || alpha || lambda1 || lambda2 || lambda3 ||
           !config_path.empty();
  }
};

struct TrainOptions {
  std::size_t checkpoint_every = 0;  // epochs; 0 keeps only the final checkpoint
  std::int64_t stop_at_step = -1;    // -1 runs to completion
  std::string resume;
};

struct EvalOptions {
  std::string checkpoint;
  std::uint64_t seed = 0;
  std::size_t count = 24;
  std::vector<double> betas;  // empty: the checkpoint's training levels
};

struct AblateOptions {
  std::size_t seeds = 5;
  std::uint64_t first_seed = 0;
  unsigned jobs = 1;
  std::vector<std::string> variants;  // empty: all five
};

struct VarianceOptions {
  std::vector<double> rhos{0.0};
  double sigma = 0.5;
  std::size_t trials = 100000;
  std::uint64_t seed = 0;
  std::size_t classes = 4;
  unsigned jobs = 1;
};

struct GradcheckCliOptions {
  std::uint64_t seed = 0;
};

struct DumpOptions {
  std::size_t count = 4;
  std::uint64_t seed = 0;
  std::vector<double> betas{0.0, 0.2, 0.5, 0.7};
  bool night = false;
  std::size_t size = 16;
};

json to_json(const TrainOptions& o) {
  return {{"checkpoint_every", o.checkpoint_every}, {"stop_at_step", o.stop_at_step},
          {"resume", o.resume}};
}
json to_json(const EvalOptions& o) {
  return {{"checkpoint", o.checkpoint}, {"seed", o.seed}, {"count", o.count}, {"betas", o.betas}};
}
json to_json(const AblateOptions& o) {
  return {{"seeds", o.seeds}, {"first_seed", o.first_seed}, {"jobs", o.jobs}, {"variants", o.variants}};
}
json to_json(const VarianceOptions& o) {
  return {{"rhos", o.rhos},       {"sigma", o.sigma},     {"trials", o.trials},
          {"seed", o.seed},       {"classes", o.classes}, {"jobs", o.jobs}};
}
json to_json(const GradcheckCliOptions& o) { return {{"seed", o.seed}}; }
json to_json(const DumpOptions& o) {
  return {{"count", o.count}, {"seed", o.seed}, {"betas", o.betas}, {"night", o.night}, {"size", o.size}};
}

template <typename T>
void get_to(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

void from_json(const json& j, TrainOptions& o) {
  get_to(j, "checkpoint_every", o.checkpoint_every);
  get_to(j, "stop_at_step", o.stop_at_step);
  get_to(j, "resume", o.resume);
}
void from_json(const json& j, EvalOptions& o) {
  get_to(j, "checkpoint", o.checkpoint);
  get_to(j, "seed", o.seed);
  get_to(j, "count", o.count);
  get_to(j, "betas", o.betas);
}
void from_json(const json& j, AblateOptions& o) {
  get_to(j, "seeds", o.seeds);
  get_to(j, "first_seed", o.first_seed);
  get_to(j, "jobs", o.jobs);
  get_to(j, "variants", o.variants);
}
void from_json(const json& j, VarianceOptions& o) {
  get_to(j, "rhos", o.rhos);
  get_to(j, "sigma", o.sigma);
  get_to(j, "trials", o.trials);
  get_to(j, "seed", o.seed);
  get_to(j, "classes", o.classes);
  get_to(j, "jobs", o.jobs);
}
void from_json(const json& j, GradcheckCliOptions& o) { get_to(j, "seed", o.seed); }
void from_json(const json& j, DumpOptions& o) {
  get_to(j, "count", o.count);
  get_to(j, "seed", o.seed);
  get_to(j, "betas", o.betas);
  get_to(j, "night", o.night);
  get_to(j, "size", o.size);
}

void add_config_flags(CLI::App* app, ConfigFlags& f) {
  app->add_option("--config", f.config_path, "JSON training config; missing keys use defaults")
      ->check(CLI::ExistingFile);
  app->add_option("--seed", f.seed, "Run seed");
  app->add_option("--variant", f.variant, "STB, STFW, DTFW, DTC or COMPLETE");
  app->add_option("--epochs", f.epochs, "Training epochs");
  app->add_option("--tau", f.tau, "Pseudo-label confidence threshold");
  app->add_option("--alpha", f.alpha, "Teacher EMA coefficient");
  app->add_option("--lambda1", f.lambda1, "Pseudo-label loss weight");
  app->add_option("--lambda2", f.lambda2, "Consistency loss weight");
  app->add_option("--lambda3", f.lambda3, "Class-weight regulariser weight");
}

TrainConfig resolve_config(const ConfigFlags& f) {
  TrainConfig cfg = f.config_path.empty() ? TrainConfig{} : load_config(f.config_path);
  if (f.seed) cfg.seed = *f.seed;
  if (f.variant) cfg.variant = parse_variant(*f.variant);
  if (f.epochs) cfg.epochs = *f.epochs;
  if (f.tau) cfg.tau = *f.tau;
  if (f.alpha) cfg.ema.alpha = *f.alpha;
  if (f.lambda1) cfg.weights.lambda1 = *f.lambda1;
  if (f.lambda2) cfg.weights.lambda2 = *f.lambda2;
  if (f.lambda3) cfg.weights.lambda3 = *f.lambda3;
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Output helpers

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  return os;
}

void write_manifest(const fs::path& dir, const std::string& command, const json& options,
                    const TrainConfig* cfg) {
  json m;
  m["tool"] = "weatherseg";
  m["version"] = WEATHERSEG_VERSION;
  m["command"] = command;
  if (cfg) {
    m["config"] = json::parse(config_to_json(*cfg));
    m["seed"] = cfg->seed;
  } else if (options.contains("seed")) {
    m["seed"] = options.at("seed");
  }
  m["options"] = options;
  open_out(dir / "manifest.json") << m.dump(2) << '\n';
}

void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

std::string padded(std::int64_t v, int width) {
  std::string s = std::to_string(v);
  return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

std::vector<WeatherConfig> modes_for(const std::vector<double>& betas) {
  std::vector<WeatherConfig> modes;
  for (double b : betas) {
    WeatherConfig w = WeatherConfig::from_beta(b);
    w.validate();
    modes.push_back(w);
  }
  return modes;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_train(TrainConfig cfg, const TrainOptions& o, const fs::path& dir, std::ostream& out) {
  prepare_dir(dir / "checkpoints");
  std::unique_ptr<Trainer> trainer;
  if (!o.resume.empty()) {
    Checkpoint ck = load_checkpoint(o.resume);
    cfg = ck.config;
    trainer = std::make_unique<Trainer>(cfg, std::move(ck.state));
  } else {
    trainer = std::make_unique<Trainer>(cfg);
  }
  write_manifest(dir, "train", to_json(o), &cfg);

  const auto spe = static_cast<std::int64_t>(cfg.steps_per_epoch);
  const auto every = static_cast<std::int64_t>(o.checkpoint_every) * spe;
  while (!trainer->finished() && trainer->state().step != o.stop_at_step) {
    trainer->step();
    const std::int64_t step = trainer->state().step;
    if (every > 0 && step % every == 0 && !trainer->finished()) {
      save_checkpoint(dir / "checkpoints" / ("step_" + padded(step, 6) + ".ckpt"), cfg,
                      trainer->state());
    }
  }
  const TrainState& state = trainer->state();
  save_checkpoint(dir / "checkpoints" / (trainer->finished() ? "final.ckpt"
                                                             : "step_" + padded(state.step, 6) + ".ckpt"),
                  cfg, state);

  {
    auto os = open_out(dir / "losses.csv");
    write_loss_csv_header(os);
    for (const auto& row : state.losses) write_loss_csv_row(os, row);
  }
  const MetricsHistory history = trainer->history();
  {
    auto os = open_out(dir / "metrics.csv");
    write_metrics_csv(os, history);
  }
  open_out(dir / "history.json") << history_to_json(history) << '\n';

  out << "variant " << variant_name(cfg.variant) << ", seed " << cfg.seed << ", step " << state.step
      << "/" << trainer->total_steps();
  if (!history.rows.empty()) {
    const auto& last = history.rows.back();
    out << ": epoch " << last.epoch << " mIoU " << last.miou << " pixel acc " << last.pixel_acc
        << " loss " << last.total;
  }
  out << '\n';
  return kExitOk;
}

int cmd_eval(const EvalOptions& o, const fs::path& dir, std::ostream& out) {
  prepare_dir(dir);
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  if (o.count == 0) throw ConfigError("--count must be positive");
  write_manifest(dir, "eval", to_json(o), &ck.config);
  const auto betas = o.betas.empty() ? ck.config.data.betas : o.betas;
  const SceneDataset data = make_split(ck.config.dims, o.count, 1.0, modes_for(betas),
                                       derive_seed(o.seed, kEvalSceneDomain));
  std::vector<std::size_t> idx(data.samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const EvalResult r = evaluate(ck.state, data.batch(idx), ck.config);

  auto os = open_out(dir / "eval.csv");
  os.precision(17);
  os << "checkpoint_step,scenes,seed,miou,pixel_acc,weight_deviation\n"
     << ck.state.step << ',' << o.count << ',' << o.seed << ',' << r.miou << ',' << r.pixel_acc << ','
     << r.weight_deviation << '\n';
  out << "mIoU " << r.miou << " pixel acc " << r.pixel_acc << " on " << o.count << " scenes\n";
  return kExitOk;
}

int cmd_ablate(const TrainConfig& cfg, const AblateOptions& o, const fs::path& dir, std::ostream& out) {
  prepare_dir(dir);
  if (o.seeds == 0) throw ConfigError("--seeds must be positive");
  write_manifest(dir, "ablate", to_json(o), &cfg);
  std::vector<Variant> variants;
  for (const auto& name : o.variants) variants.push_back(parse_variant(name));
  if (variants.empty()) variants = all_variants();
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < o.seeds; ++i) seeds.push_back(o.first_seed + i);

  const auto cells = run_ablation(cfg, variants, seeds, o.jobs);
  {
    auto os = open_out(dir / "ablation.csv");
    write_ablation_csv(os, cells);
  }
  const auto summary = summarize_ablation(cells);
  print_ablation_table(out, summary);
  if (find_summary(summary, Variant::kComplete) && find_summary(summary, Variant::kSingleTeacher)) {
    out << "ordering COMPLETE >= DTC >= DTFW >= STFW: "
        << (ablation_ordering_holds(summary) ? "holds" : "does not hold") << '\n';
  }
  return kExitOk;
}

int cmd_variance(const VarianceOptions& o, const fs::path& dir, std::ostream& out) {
  prepare_dir(dir);
  if (o.rhos.empty()) throw ConfigError("--rho needs at least one value");
  write_manifest(dir, "variance-study", to_json(o), nullptr);
  std::vector<VarianceReport> rows;
  for (double rho : o.rhos) {
    VarianceStudyConfig vc;
    vc.rho = rho;
    vc.sigma = o.sigma;
    vc.trials = o.trials;
    vc.seed = o.seed;
    vc.classes = o.classes;
    vc.workers = o.jobs;
    rows.push_back(variance_study(vc));
  }
  {
    auto os = open_out(dir / "variance.csv");
    write_variance_csv(os, rows);
  }
  for (const auto& r : rows) {
    out << "rho " << r.rho << ": var_single " << r.var_single << " var_avg " << r.var_avg
        << " ratio " << r.ratio << '\n';
  }
  return kExitOk;
}

int cmd_gradcheck(const GradcheckCliOptions& o, const fs::path& dir, std::ostream& out) {
  prepare_dir(dir);
  write_manifest(dir, "gradcheck", to_json(o), nullptr);
  const auto rows = gradcheck_sweep(o.seed);
  {
    auto os = open_out(dir / "gradcheck.csv");
    write_gradcheck_csv(os, rows);
  }
  std::string failed;
  for (const auto& r : rows) {
    if (!r.passed) failed += (failed.empty() ? "" : ",") + r.name;
  }
  out << rows.size() - static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(),
                                                              [](const auto& r) { return !r.passed; }))
      << "/" << rows.size() << " gradient checks passed\n";
  if (!failed.empty()) throw NumericError("gradcheck", "finite-difference mismatch in " + failed);
  return kExitOk;
}

int cmd_dump(const DumpOptions& o, const fs::path& dir, std::ostream& out) {
  prepare_dir(dir / "scenes");
  if (o.size == 0) throw ConfigError("--size must be positive");
  write_manifest(dir, "dump-scenes", to_json(o), nullptr);
  ModelDims dims;
  dims.height = dims.width = o.size;
  auto index = open_out(dir / "scenes.csv");
  index << "image,mask,seed,beta,night\n";
  std::size_t written = 0;
  for (std::size_t i = 0; i < o.count; ++i) {
    const std::uint64_t seed = derive_seed(o.seed, kDumpDomain, i);
    for (double beta : o.betas) {
      WeatherConfig w = WeatherConfig::from_beta(beta, o.night);
      w.validate();
      const Scene s = generate_scene(dims, w, seed);
      const std::string stem =
          "scene_" + padded(static_cast<std::int64_t>(i), 3) + "_b" +
          padded(static_cast<std::int64_t>(std::lround(beta * 100.0)), 3);
      write_ppm(dir / "scenes" / (stem + ".ppm"), s.image, dims);
      write_pgm(dir / "scenes" / (stem + ".pgm"), s.mask, dims);
      index << "scenes/" << stem << ".ppm,scenes/" << stem << ".pgm," << seed << ',' << beta << ','
            << (o.night ? 1 : 0) << '\n';
      ++written;
    }
  }
  out << written << " scenes written to " << (dir / "scenes").string() << '\n';
  return kExitOk;
}

int replay(const fs::path& manifest_path, const fs::path& dir, std::ostream& out) {
  std::ifstream is(manifest_path);
  if (!is) throw IoError("cannot read manifest " + manifest_path.string());
  json m;
  try {
    m = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("manifest is not valid JSON: ") + e.what());
  }
  const std::string command = m.value("command", "");
  const json options = m.value("options", json::object());
  auto config = [&] {
    if (!m.contains("config")) throw ConfigError("manifest has no config");
    TrainConfig cfg = config_from_json(m.at("config").dump());
    cfg.validate();
    return cfg;
  };
  try {
    if (command == "train") return cmd_train(config(), options.get<TrainOptions>(), dir, out);
    if (command == "eval") return cmd_eval(options.get<EvalOptions>(), dir, out);
    if (command == "ablate") return cmd_ablate(config(), options.get<AblateOptions>(), dir, out);
    if (command == "variance-study") return cmd_variance(options.get<VarianceOptions>(), dir, out);
    if (command == "gradcheck") return cmd_gradcheck(options.get<GradcheckCliOptions>(), dir, out);
    if (command == "dump-scenes") return cmd_dump(options.get<DumpOptions>(), dir, out);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed manifest options: ") + e.what());
  }
  throw ConfigError("manifest names unknown command '" + command + "'");
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual-teacher semi-supervised segmentation on synthetic weather scenes", "weatherseg"};
  app.set_version_flag("--version", std::string(WEATHERSEG_VERSION));
  app.require_subcommand(1);

  std::string out_dir;
  auto add_out = [&](CLI::App* sub, const std::string& fallback) {
    sub->add_option("--out", out_dir, "Output directory")->default_str(fallback);
  };

  ConfigFlags flags;
  TrainOptions train_opts;
  auto* train = app.add_subcommand("train", "Train one configuration");
  add_config_flags(train, flags);
  add_out(train, "runs/train");
  train->add_option("--checkpoint-every", train_opts.checkpoint_every, "Checkpoint every N epochs");
  train->add_option("--stop-at-step", train_opts.stop_at_step, "Stop (and checkpoint) at this step");
  train->add_option("--resume", train_opts.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);

  EvalOptions eval_opts;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on freshly generated scenes");
  eval->add_option("--checkpoint", eval_opts.checkpoint, "Checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--seed", eval_opts.seed, "Scene seed");
  eval->add_option("--count", eval_opts.count, "Number of scenes");
  eval->add_option("--beta", eval_opts.betas, "Degradation levels (comma separated)")->delimiter(',');
  add_out(eval, "runs/eval");

  ConfigFlags ablate_flags;
  AblateOptions ablate_opts;
  auto* ablate = app.add_subcommand("ablate", "Train every variant over several seeds");
  add_config_flags(ablate, ablate_flags);
  ablate->add_option("--seeds", ablate_opts.seeds, "Number of seeds");
  ablate->add_option("--jobs", ablate_opts.jobs, "Parallel runs");
  ablate->add_option("--variants", ablate_opts.variants, "Subset of variants")->delimiter(',');
  add_out(ablate, "runs/ablate");

  VarianceOptions var_opts;
  auto* variance = app.add_subcommand("variance-study", "Monte-Carlo variance of averaged teachers");
  variance->add_option("--rho", var_opts.rhos, "Teacher noise correlation(s)")->delimiter(',');
  variance->add_option("--sigma", var_opts.sigma, "Logit noise scale");
  variance->add_option("--trials", var_opts.trials, "Monte-Carlo trials");
  variance->add_option("--seed", var_opts.seed, "RNG seed");
  variance->add_option("--classes", var_opts.classes, "Class count");
  variance->add_option("--jobs", var_opts.jobs, "Worker threads");
  add_out(variance, "runs/variance");

  GradcheckCliOptions gc_opts;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
  gradcheck->add_option("--seed", gc_opts.seed, "RNG seed");
  add_out(gradcheck, "runs/gradcheck");

  DumpOptions dump_opts;
  auto* dump = app.add_subcommand("dump-scenes", "Write sample scenes as PPM/PGM");
  dump->add_option("--count", dump_opts.count, "Scene geometries");
  dump->add_option("--seed", dump_opts.seed, "RNG seed");
  dump->add_option("--beta", dump_opts.betas, "Degradation levels (comma separated)")->delimiter(',');
  dump->add_flag("--night", dump_opts.night, "Night-time rendering");
  dump->add_option("--size", dump_opts.size, "Scene height and width");
  add_out(dump, "runs/scenes");

  std::string manifest;
  auto* rerun = app.add_subcommand("replay", "Rerun the command recorded in a manifest");
  rerun->add_option("--manifest", manifest, "manifest.json of an earlier run")
      ->required()
      ->check(CLI::ExistingFile);
  add_out(rerun, "runs/replay");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << WEATHERSEG_VERSION << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    const CLI::App* failing = &app;
    for (const auto* sub : app.get_subcommands()) failing = sub;
    err << failing->help();
    err << "error: code=USAGE message=" << one_line(e.what()) << '\n';
    return kExitInvalid;
  }

  auto dir_for = [&](const char* fallback) { return fs::path(out_dir.empty() ? fallback : out_dir); };
  try {
    if (*train) {
      if (!train_opts.resume.empty() && flags.any_override()) {
        throw ConfigError("--resume takes its configuration from the checkpoint; drop the config flags");
      }
      const TrainConfig cfg = train_opts.resume.empty() ? resolve_config(flags) : TrainConfig{};
      return cmd_train(cfg, train_opts, dir_for("runs/train"), out);
    }
    if (*eval) return cmd_eval(eval_opts, dir_for("runs/eval"), out);
    if (*ablate) {
      ablate_opts.first_seed = ablate_flags.seed.value_or(0);
      ablate_flags.seed.reset();
      return cmd_ablate(resolve_config(ablate_flags), ablate_opts, dir_for("runs/ablate"), out);
    }
    if (*variance) return cmd_variance(var_opts, dir_for("runs/variance"), out);
    if (*gradcheck) return cmd_gradcheck(gc_opts, dir_for("runs/gradcheck"), out);
    if (*dump) return cmd_dump(dump_opts, dir_for("runs/scenes"), out);
    if (*rerun) return replay(manifest, dir_for("runs/replay"), out);
  } catch (const NumericError& e) {
    err << "error: code=" << e.code() << " component=" << e.component()
        << " message=" << one_line(e.what()) << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    err << "error: code=" << e.code() << " message=" << one_line(e.what()) << '\n';
    return kExitInvalid;
  } catch (const fs::filesystem_error& e) {
    err << "error: code=IO message=" << one_line(e.what()) << '\n';
    return kExitInvalid;
  }
  return kExitInvalid;
}

}  // namespace weatherseg
