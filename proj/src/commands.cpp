#include "vesselkit/commands.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "vesselkit/checkpoint.hpp"
#include "vesselkit/config.hpp"
#include "vesselkit/experiment.hpp"
#include "vesselkit/gradcheck.hpp"
#include "vesselkit/image_io.hpp"

namespace vk {

namespace fs = std::filesystem;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const CheckFailure*>(&e)) return kExitCheckFailed;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const FormatError*>(&e)) return kExitConfig;
  return kExitRuntime;
}

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create directory " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct ManifestEntry {
  std::string split;
  int index;
  std::uint64_t seed;
  const LabeledSample* sample;
};

std::vector<ManifestEntry> manifest_entries(const PhantomSuite& suite) {
  std::vector<ManifestEntry> out;
  int index = 0;
  for (const auto& [name, list] : {std::pair<const char*, const std::vector<LabeledSample>*>{"train", &suite.train},
                                   {"val", &suite.val},
                                   {"test", &suite.test}}) {
    for (const auto& s : *list) out.push_back({name, index++, s.seed, &s});
  }
  return out;
}

std::string sample_dir(int index) { return fmt::format("sample_{:03d}", index); }

}  // namespace

std::string suite_manifest(const PhantomSuite& suite) {
  std::string out = "split,index,seed,dir\n";
  for (const auto& e : manifest_entries(suite)) {
    out += fmt::format("{},{},{},{}\n", e.split, e.index, e.seed, sample_dir(e.index));
  }
  return out;
}

void save_suite(const std::string& dir, const PhantomSuite& suite) {
  ensure_dir(dir);
  for (const auto& e : manifest_entries(suite)) {
    const fs::path d = fs::path(dir) / sample_dir(e.index);
    ensure_dir(d);
    write_pfm((d / "image.pfm").string(), e.sample->image);
    write_mask_png((d / "label.png").string(), e.sample->label);
    write_mask_png((d / "fov.png").string(), e.sample->fov);
    write_pfm((d / "diameter.pfm").string(), e.sample->diameter);
  }
  write_text(fs::path(dir) / "manifest.csv", suite_manifest(suite));
}

PhantomSuite load_suite(const std::string& dir) {
  const fs::path manifest = fs::path(dir) / "manifest.csv";
  std::istringstream in(read_text(manifest));
  std::string line;
  if (!std::getline(in, line) || line != "split,index,seed,dir") {
    throw FormatError(manifest.string() + ": missing or unexpected header");
  }
  PhantomSuite suite;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 4) throw FormatError(manifest.string() + ": malformed line '" + line + "'");
    const fs::path d = fs::path(dir) / f[3];
    LabeledSample s;
    try {
      s.seed = std::stoull(f[2]);
    } catch (const std::logic_error&) {
      throw FormatError(manifest.string() + ": malformed seed '" + f[2] + "'");
    }
    s.image = read_pfm((d / "image.pfm").string());
    s.label = read_mask_png((d / "label.png").string());
    s.fov = read_mask_png((d / "fov.png").string());
    s.diameter = read_pfm((d / "diameter.pfm").string());
    s.weight = weight_map(s.label).weight;
    if (f[0] == "train") {
      suite.train.push_back(std::move(s));
    } else if (f[0] == "val") {
      suite.val.push_back(std::move(s));
    } else if (f[0] == "test") {
      suite.test.push_back(std::move(s));
    } else {
      throw FormatError(manifest.string() + ": unknown split '" + f[0] + "'");
    }
  }
  return suite;
}

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string precision = "f32";
};

PipelineConfig load_pipeline_config(const CommonOptions& o) {
  PipelineConfig cfg = o.config.empty() ? preset("GF+FN") : load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  return cfg;
}

PhantomSuite obtain_suite(const std::string& data_dir, const PipelineConfig& cfg) {
  if (!data_dir.empty()) return load_suite(data_dir);
  return generate_suite(cfg.data.suite_size, cfg.data.suite_seed, cfg.data.phantom);
}

bool is_f64(const CommonOptions& o) {
  if (o.precision == "f64") return true;
  if (o.precision == "f32") return false;
  throw ConfigError("--precision must be f32 or f64, got '" + o.precision + "'");
}

template <typename T>
void load_into(Pipeline<T>& p, const std::string& checkpoint) {
  if (checkpoint.empty()) return;
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  apply_checkpoint<T>(ckpt, p.config().architecture(), p.config().fingerprint(), p.parameters());
}

int cmd_phantom(const CommonOptions& o, std::ostream& out) {
  PipelineConfig cfg = load_pipeline_config(o);
  if (o.seed) cfg.data.suite_seed = *o.seed;
  if (o.out.empty()) throw ConfigError("phantom: --out is required");
  const PhantomSuite suite = generate_suite(cfg.data.suite_size, cfg.data.suite_seed, cfg.data.phantom);
  save_suite(o.out, suite);
  out << fmt::format("wrote {} samples to {} (train {}, val {}, test {})\n",
                     suite.train.size() + suite.val.size() + suite.test.size(), o.out, suite.train.size(),
                     suite.val.size(), suite.test.size());
  return kExitOk;
}

template <typename T>
int run_train(const PipelineConfig& cfg, const CommonOptions& o, const std::string& data_dir,
              std::ostream& out) {
  const PhantomSuite suite = obtain_suite(data_dir, cfg);
  const auto train = prepare_samples(suite.train, cfg.data);
  const auto val = prepare_samples(suite.val, cfg.data);
  Pipeline<T> pipeline(cfg);
  out << format_parameter_accounting(parameter_accounting(cfg));
  out << fmt::format("pipeline {}: {} trainable parameters\n", cfg.name, pipeline.count_params().total());
  const fs::path dir(o.out);
  ensure_dir(dir);
  std::vector<LossRecord> history;
  auto on_record = [&](const LossRecord& r) {
    if (r.val_auc) {
      out << fmt::format("step {:>6}  lr {:.3e}  val_loss {:.6f}  val_auc {:.6f}\n", r.step, r.lr,
                         r.val_loss.value_or(0.0), *r.val_auc);
    }
  };
  TrainResult<T> result = train_loop(pipeline, train, val, cfg.seed, on_record);
  const auto arch = cfg.architecture();
  const auto fp = cfg.fingerprint();
  save_checkpoint((dir / "final.vkcp").string(), make_checkpoint<T>(arch, fp, pipeline.parameters()));
  restore(pipeline, result.best);
  save_checkpoint((dir / "best.vkcp").string(), make_checkpoint<T>(arch, fp, pipeline.parameters()));
  write_text(dir / "loss.csv", loss_history_csv(result.history));
  write_text(dir / "config.ini", dump_config(cfg));
  out << fmt::format("best val AUC {:.6f} at step {}; wrote {}\n", result.best_val_auc, result.best_step,
                     dir.string());
  return kExitOk;
}

int cmd_train(const CommonOptions& o, const std::string& data_dir, std::ostream& out) {
  const PipelineConfig cfg = load_pipeline_config(o);
  cfg.validate(true);
  if (o.out.empty()) throw ConfigError("train: --out is required");
  return is_f64(o) ? run_train<double>(cfg, o, data_dir, out) : run_train<float>(cfg, o, data_dir, out);
}

std::string strip_extension(const std::string& path) {
  const fs::path p(path);
  if (p.extension() == ".pfm" || p.extension() == ".png") return (p.parent_path() / p.stem()).string();
  return path;
}

void write_map(const std::string& base, const ImagePlane& map) {
  write_pfm(base + ".pfm", map);
  write_png(base + ".png", to_8bit(map));
}

template <typename T>
int run_infer(const PipelineConfig& cfg, const std::string& checkpoint, const std::string& image_path,
              const std::string& out_path, bool emit_intermediate, std::ostream& out) {
  Pipeline<T> pipeline(cfg);
  load_into(pipeline, checkpoint);
  pipeline.set_training(false);
  const ImagePlane image = prepare_input(load_plane(image_path), cfg.data);
  const std::string base = strip_extension(out_path);
  if (fs::path(base).has_parent_path()) ensure_dir(fs::path(base).parent_path());
  write_map(base, pipeline.predict(image));
  out << "wrote " << base << ".pfm and " << base << ".png\n";
  if (emit_intermediate) {
    write_map(base + "_enhanced", pipeline.enhance(image));
    out << "wrote " << base << "_enhanced.pfm and " << base << "_enhanced.png\n";
  }
  return kExitOk;
}

int cmd_infer(const CommonOptions& o, const std::string& checkpoint, const std::string& image,
              bool emit_intermediate, std::ostream& out) {
  const PipelineConfig cfg = load_pipeline_config(o);
  cfg.validate(false);
  if (o.out.empty()) throw ConfigError("infer: --out is required");
  return is_f64(o) ? run_infer<double>(cfg, checkpoint, image, o.out, emit_intermediate, out)
                   : run_infer<float>(cfg, checkpoint, image, o.out, emit_intermediate, out);
}

template <typename T>
int run_eval(PipelineConfig cfg, const CommonOptions& o, const std::string& checkpoint,
             const std::string& data_dir, std::ostream& out) {
  const PhantomSuite suite = obtain_suite(data_dir, cfg);
  if (suite.val.empty() || suite.test.empty()) throw DataError("eval: validation and test splits are required");
  const auto val = prepare_samples(suite.val, cfg.data);
  const auto test = prepare_samples(suite.test, cfg.data);
  Pipeline<T> pipeline(cfg);
  load_into(pipeline, checkpoint);
  pipeline.set_training(false);
  const Evaluation ev = evaluate(pipeline, val, test);
  const std::string table = format_metrics_table({ev.row});
  std::string counts = "parameters:";
  for (const auto& [k, v] : ev.row.pooled.param_counts) counts += fmt::format(" {}={}", k, v);
  counts += "\n";
  out << table << counts;
  if (!o.out.empty()) {
    const fs::path dir(o.out);
    ensure_dir(dir);
    write_text(dir / "metrics.txt", table + counts);
    write_text(dir / "metrics.csv", format_metrics_csv({ev.row}));
    std::string params_csv = "pipeline,component,parameters\n";
    for (const auto& [k, v] : ev.row.pooled.param_counts) params_csv += fmt::format("{},{},{}\n", cfg.name, k, v);
    write_text(dir / "parameters.csv", params_csv);
  }
  return kExitOk;
}

int cmd_eval(const CommonOptions& o, const std::string& checkpoint, const std::string& data_dir,
             std::optional<int> fov_erosion, std::ostream& out) {
  PipelineConfig cfg = load_pipeline_config(o);
  if (fov_erosion) cfg.data.fov_erosion = *fov_erosion;
  cfg.validate(false);
  return is_f64(o) ? run_eval<double>(cfg, o, checkpoint, data_dir, out)
                   : run_eval<float>(cfg, o, checkpoint, data_dir, out);
}

int cmd_gradcheck(const CommonOptions& o, bool inject_fault, int probes, std::ostream& out) {
  const PipelineConfig cfg = load_pipeline_config(o);
  cfg.validate(true);
  GradCheckOptions opts;
  opts.probes = probes;
  const GradCheckReport report = grad_check_pipeline(cfg, opts, inject_fault);
  out << report.format();
  if (!o.out.empty()) write_text(o.out, report.format());
  return report.passed() ? kExitOk : kExitCheckFailed;
}

int cmd_params(const CommonOptions& o, std::ostream& out) {
  const PipelineConfig cfg = load_pipeline_config(o);
  cfg.validate(false);
  out << format_parameter_accounting(parameter_accounting(cfg));
  const Pipeline<float> pipeline(cfg);
  out << fmt::format("\npipeline {} breakdown\n", cfg.name);
  for (const auto& [name, n] : pipeline.count_params().entries) out << fmt::format("  {:<32} {:>8}\n", name, n);
  out << fmt::format("  {:<32} {:>8}\n", "total", pipeline.count_params().total());
  return kExitOk;
}

int cmd_config(const CommonOptions& o, std::ostream& out) {
  out << dump_config(load_pipeline_config(o));
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Known-operator retinal vessel segmentation toolkit", "vesselkit"};
  app.require_subcommand(1);
  CommonOptions o;
  std::uint64_t seed_value = 0;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "pipeline configuration file (INI)");
    cmd->add_option("--seed", seed_value, "override the seed");
    cmd->add_option("--out", o.out, "output path");
    cmd->add_option("--precision", o.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  };

  auto* phantom = app.add_subcommand("phantom", "generate a synthetic phantom suite");
  add_common(phantom);

  std::string data_dir;
  auto* train = app.add_subcommand("train", "train a pipeline");
  add_common(train);
  train->add_option("--data", data_dir, "suite directory (generated from the config if omitted)");

  std::string checkpoint;
  std::string image;
  bool emit_intermediate = false;
  auto* infer = app.add_subcommand("infer", "vessel probability map for one image");
  add_common(infer);
  infer->add_option("--checkpoint", checkpoint, "checkpoint file");
  infer->add_option("--image", image, "input image (pfm, pgm or png)")->required();
  infer->add_flag("--emit-intermediate", emit_intermediate, "also write the preprocessing output");

  int fov_erosion = 4;
  auto* eval = app.add_subcommand("eval", "threshold on validation, metrics on test");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file");
  eval->add_option("--data", data_dir, "suite directory (generated from the config if omitted)");
  auto* erosion_opt = eval->add_option("--fov-erosion", fov_erosion, "FOV erosion in pixels")
                          ->check(CLI::NonNegativeNumber);

  bool inject_fault = false;
  int probes = 20;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common(gradcheck);
  gradcheck->add_flag("--inject-fault", inject_fault, "add an op with a deliberately wrong gradient");
  gradcheck->add_option("--probes", probes, "probes per op kind")->check(CLI::PositiveNumber);

  auto* params = app.add_subcommand("params", "parameter accounting");
  add_common(params);

  auto* config = app.add_subcommand("config", "print the effective configuration");
  add_common(config);

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  auto seed_given = [&](CLI::App* cmd) { return cmd->count("--seed") > 0; };
  try {
    for (CLI::App* cmd : app.get_subcommands()) {
      if (seed_given(cmd)) o.seed = seed_value;
    }
    if (*phantom) return cmd_phantom(o, out);
    if (*train) return cmd_train(o, data_dir, out);
    if (*infer) return cmd_infer(o, checkpoint, image, emit_intermediate, out);
    if (*eval) {
      return cmd_eval(o, checkpoint, data_dir, erosion_opt->count() ? std::optional<int>(fov_erosion) : std::nullopt,
                      out);
    }
    if (*gradcheck) return cmd_gradcheck(o, inject_fault, probes, out);
    if (*params) return cmd_params(o, out);
    if (*config) return cmd_config(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitConfig;
}

}  // namespace vk
