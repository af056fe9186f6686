// ckan-sr: dataset tools, training stages, inference, evaluation, benchmark
// and self-test behind one binary. Exit codes: 0 ok, 1 runtime failure,
// 2 configuration or usage error.

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "bench.h"
#include "checks.h"
#include "ckan/autograd.h"
#include "ckan/ckan_operator.h"
#include "ckan/data.h"
#include "ckan/errors.h"
#include "ckan/metrics.h"
#include "ckan/training.h"
#include "run_config.h"

namespace fs = std::filesystem;
using namespace ckan;
using namespace ckan::cli;

namespace {

struct ConfigArgs {
  std::string file;
  std::vector<std::string> sets;
};

void add_config_options(CLI::App* cmd, ConfigArgs& a, Stage stage) {
  cmd->add_option("--config", a.file, "key = value config file (dotted keys)");
  cmd->add_option("--set", a.sets, "KEY=VALUE override, repeatable; applied after --config");
  std::string footer = "\nConfig keys and defaults (CKAN_SR_SEED overrides train.seed):\n";
  for (const auto& [k, v] : effective_values(RunConfig::defaults(stage))) footer += "  " + k + " = " + v + "\n";
  cmd->footer(footer);
}

// Defaults, then the file, then CKAN_SR_SEED, then --set.
RunConfig resolve_config(Stage stage, const ConfigArgs& a) {
  RunConfig cfg = RunConfig::defaults(stage);
  if (!a.file.empty()) apply_config_file(cfg, a.file);
  if (const char* env = std::getenv("CKAN_SR_SEED")) apply_setting(cfg, "train.seed", env);
  for (const auto& s : a.sets) apply_override(cfg, s);
  cfg.generator.validate();
  cfg.train.validate();
  return cfg;
}

void echo_config(const RunConfig& cfg, const fs::path& out_dir) {
  std::cout << "# effective configuration\n";
  std::ostringstream file;
  for (const auto& [k, v] : effective_values(cfg)) {
    std::cout << "#   " << k << " = " << v << '\n';
    file << k << " = " << v << '\n';
  }
  if (!out_dir.empty()) {
    std::ofstream out(out_dir / "config.txt");
    if (!out) throw IoError("cannot write " + (out_dir / "config.txt").string());
    out << file.str();
  }
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

std::string db(double v) {
  if (std::isinf(v)) return "inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

void print_epochs(const TrainResult& r) {
  std::cout << "initial: psnr_y " << db(r.initial.psnr_y) << " (bicubic " << db(r.initial.bicubic_psnr_y)
            << "), perc_dist " << r.initial.perc_dist << '\n';
  for (const auto& e : r.epochs) {
    std::cout << "epoch " << e.epoch << ": l_g " << e.l_g;
    if (e.l_d) std::cout << " l_d " << *e.l_d;
    std::cout << " psnr_y " << db(e.val.psnr_y) << " msssim_y " << e.val.msssim_y << " perc_dist " << e.val.perc_dist
              << (e.new_best ? " [best]" : "") << '\n';
  }
  for (const auto& w : r.warnings) std::cout << "warning: " << w << '\n';
}

// ---- synth / degrade ----------------------------------------------------

struct SynthArgs {
  std::size_t n = 8, size = 128, scale = 4;
  std::uint64_t seed = 7;
  std::string out, split = "train";
};

int cmd_synth(const SynthArgs& a) {
  const fs::path m = synth_dataset(a.out, a.n, a.size, a.seed, a.split, a.scale);
  std::cout << "wrote " << a.n << " images and " << m.string() << '\n';
  return 0;
}

struct DegradeArgs {
  std::string manifest, out;
  std::size_t scale = 0;
  double noise_sigma = 0.0, blur_sigma = 0.0;
  std::uint64_t seed = 0;
};

int cmd_degrade(const DegradeArgs& a) {
  const DatasetManifest in = load_manifest(a.manifest);
  const std::size_t s = a.scale ? a.scale : in.scale;
  if (a.noise_sigma < 0.0 || a.blur_sigma < 0.0) throw ConfigError("sigmas must be >= 0");
  make_dir(a.out);
  DatasetManifest out;
  out.scale = s;
  out.split = in.split;
  for (std::size_t i = 0; i < in.entries.size(); ++i) {
    const auto& e = in.entries[i];
    DegradeOptions opts;
    if (a.blur_sigma > 0.0) {
      opts.blur = gaussian_kernel(a.blur_sigma, static_cast<std::size_t>(std::ceil(3.0 * a.blur_sigma)));
    }
    opts.noise_sigma = a.noise_sigma;
    opts.noise_seed = derive_seed(a.seed, 0x444547, i);
    const ImageBuffer lr = degrade(load_image(e.hr), s, opts);
    const fs::path lr_path = fs::path(a.out) / (e.hr.stem().string() + "_x" + std::to_string(s) + ".ppm");
    save_image(lr_path, lr);
    out.entries.push_back({fs::absolute(e.hr), fs::absolute(lr_path)});
  }
  save_manifest(fs::path(a.out) / "manifest.txt", out);
  std::cout << "degraded " << out.entries.size() << " images by x" << s << " into " << a.out << '\n';
  return 0;
}

// ---- training -----------------------------------------------------------

struct TrainArgs {
  ConfigArgs config;
  std::string train, val, out, resume, from;
};

int run_stage(Stage stage, const TrainArgs& a) {
  if (stage == Stage::kAdversarial && a.from.empty()) {
    throw ConfigError("gan requires --from <pretrain checkpoint>");
  }
  RunConfig cfg = resolve_config(stage, a.config);
  make_dir(a.out);
  cfg.train.checkpoint_dir = a.out;
  echo_config(cfg, a.out);
  const Dataset train_set = load_dataset(a.train);
  const Dataset val_set = load_dataset(a.val);
  TrainState state = make_train_state(cfg.generator, cfg.discriminator);
  const fs::path log_path = fs::path(a.out) / (stage == Stage::kPretrain ? "pretrain.jsonl" : "gan.jsonl");
  TrainResult r;
  if (!a.resume.empty()) {
    load_checkpoint(a.resume, state);
    std::cout << "resuming from " << a.resume << " at epoch " << state.epoch << '\n';
    JsonlLog log(log_path, true);
    r = train(cfg.train, state, train_set, val_set, &log);
  } else if (stage == Stage::kAdversarial) {
    JsonlLog log(log_path, false);
    r = adversarial_train(cfg.train, a.from, state, train_set, val_set, &log);
  } else {
    JsonlLog log(log_path, false);
    r = pretrain(cfg.train, state, train_set, val_set, &log);
  }
  print_epochs(r);
  std::cout << "checkpoints in " << a.out << ", log " << log_path.string() << '\n';
  return 0;
}

// ---- inference ----------------------------------------------------------

struct InferArgs {
  ConfigArgs config;
  std::string checkpoint, out;
  std::vector<std::string> inputs;
  bool baseline = false;
};

int cmd_infer(const InferArgs& a) {
  const RunConfig cfg = resolve_config(Stage::kPretrain, a.config);
  TrainState state = make_train_state(cfg.generator, cfg.discriminator);
  load_checkpoint(a.checkpoint, state);
  make_dir(a.out);
  if (a.baseline) make_dir(fs::path(a.out) / "bicubic");
  NoGradGuard ng;
  const std::size_t s = cfg.generator.upscale;
  for (const auto& in : a.inputs) {
    const ImageBuffer lr = load_image(in);
    const ImageBuffer sr = ImageBuffer::from_tensor(generator_forward(lr.to_tensor(), state.g));
    const fs::path name = fs::path(in).filename();
    save_image(fs::path(a.out) / name, sr);
    if (a.baseline) save_image(fs::path(a.out) / "bicubic" / name, bicubic_resample(lr, lr.width * s, lr.height * s));
    std::cout << in << ": " << lr.width << "x" << lr.height << " -> " << sr.width << "x" << sr.height << '\n';
  }
  return 0;
}

// ---- evaluation ---------------------------------------------------------

struct EvalArgs {
  std::string hr, out;
  std::vector<std::string> models;
  std::uint64_t extractor_seed = 0x5EED;
};

// HR name as is, else what degrade/infer write for it: <stem>_x<s>.ppm
fs::path model_image(const fs::path& dir, const fs::path& hr) {
  const fs::path same = dir / hr.filename();
  if (fs::exists(same) || !fs::is_directory(dir)) return same;
  const std::string prefix = hr.stem().string() + "_x";
  for (const auto& f : fs::directory_iterator(dir)) {
    const std::string n = f.path().filename().string();
    if (n.rfind(prefix, 0) == 0 && f.path().extension() == ".ppm") return f.path();
  }
  return same;
}

int cmd_eval(const EvalArgs& a) {
  const DatasetManifest m = load_manifest(a.hr);
  if (m.entries.empty()) throw ConfigError("manifest " + a.hr + " lists no images");
  make_dir(a.out);
  const PerceptualExtractor ex(a.extractor_seed);
  std::ostringstream md;
  md << "| Model | PSNR-Y (dB) | SSIM-Y | MS-SSIM-Y | Perceptual distance |\n";
  md << "|---|---|---|---|---|\n";
  for (const auto& spec : a.models) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--model expects NAME=DIR, got '" + spec + "'");
    const std::string name = spec.substr(0, eq);
    const fs::path dir = spec.substr(eq + 1);
    std::vector<EvalPair> pairs;
    for (const auto& e : m.entries) {
      pairs.push_back({e.hr.filename().string(), load_image(e.hr).to_tensor(),
                       load_image(model_image(dir, e.hr)).to_tensor()});
    }
    const MetricReport rep = evaluate_set(pairs, ex);
    const fs::path csv = fs::path(a.out) / (name + ".csv");
    std::ofstream out(csv);
    if (!out) throw IoError("cannot write " + csv.string());
    write_csv(out, rep);
    md << "| " << name << " | " << db(rep.mean.psnr_y) << " | " << std::fixed << std::setprecision(4) << rep.mean.ssim_y
       << " | " << rep.mean.msssim_y << " | " << rep.mean.perc_dist << " |\n";
  }
  std::ofstream summary(fs::path(a.out) / "summary.md");
  if (!summary) throw IoError("cannot write summary.md");
  summary << md.str();
  std::cout << md.str();
  return 0;
}

// ---- bench --------------------------------------------------------------

struct BenchArgs {
  BenchSweep sweep;
  std::string csv;
};

int cmd_bench(const BenchArgs& a) {
  for (std::size_t c : a.sweep.chunks)
    if (c == 0) throw ConfigError("chunk sizes must be >= 1");
  const auto points = run_bench(a.sweep);
  const BenchSummary s = summarize(points);
  if (!a.csv.empty()) {
    std::ofstream out(a.csv);
    if (!out) throw IoError("cannot write " + a.csv);
    write_bench_csv(out, points);
  } else {
    write_bench_csv(std::cout, points);
  }
  const bool r2_ok = s.min_r2 > 0.999, diff_ok = s.max_total_rel_diff < 0.01;
  std::cout << "points: " << s.points << '\n'
            << "unfold == B*K*L at every point: " << (s.unfold_exact ? "yes" : "NO") << '\n'
            << "projection MACs == cost model: " << (s.projection_exact ? "yes" : "NO") << '\n'
            << "peak patch buffer <= B*K*min(chunk, L): " << (s.peak_within_bound ? "yes" : "NO")
            << (s.peak_equals_bound ? " (equal at every point)" : "") << '\n'
            << "min R^2 of peak vs chunk: " << std::setprecision(8) << s.min_r2 << (r2_ok ? "" : " (<= 0.999)") << '\n'
            << "max |chunked - full| / full total ops: " << s.max_total_rel_diff << (diff_ok ? "" : " (>= 1%)")
            << '\n';
  return s.unfold_exact && s.projection_exact && s.peak_within_bound && r2_ok && diff_ok ? 0 : 1;
}

// ---- selftest -----------------------------------------------------------

struct SelftestArgs {
  std::string filter;
  bool break_fold = false;
};

int cmd_selftest(const SelftestArgs& a) {
  debug::set_break_fold(a.break_fold);
  const auto results = run_checks(a.filter);
  debug::set_break_fold(false);
  if (results.empty()) throw ConfigError("no self-test matches filter '" + a.filter + "'");
  std::size_t failed = 0;
  for (const auto& r : results) {
    failed += !r.passed;
    std::cout << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(22) << r.name << std::right << std::fixed
              << std::setprecision(2) << std::setw(7) << r.seconds << "s  " << r.detail << '\n';
  }
  std::cout << results.size() - failed << "/" << results.size() << " passed\n";
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CKAN super-resolution toolkit"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "write a synthetic texture dataset");
  c_synth->add_option("--n", synth.n, "number of images");
  c_synth->add_option("--size", synth.size, "image side in pixels");
  c_synth->add_option("--seed", synth.seed, "dataset seed");
  c_synth->add_option("--out", synth.out, "output directory")->required();
  c_synth->add_option("--split", synth.split, "split name stored in the manifest");
  c_synth->add_option("--scale", synth.scale, "scale factor stored in the manifest");

  DegradeArgs deg;
  auto* c_deg = app.add_subcommand("degrade", "make LR images from an HR manifest");
  c_deg->add_option("--manifest", deg.manifest, "HR manifest")->required();
  c_deg->add_option("--out", deg.out, "output directory")->required();
  c_deg->add_option("--scale", deg.scale, "downscale factor (0: from the manifest)");
  c_deg->add_option("--noise-sigma", deg.noise_sigma, "Gaussian noise sigma after downsampling");
  c_deg->add_option("--blur-sigma", deg.blur_sigma, "Gaussian blur sigma before downsampling");
  c_deg->add_option("--seed", deg.seed, "noise seed");

  TrainArgs pre, gan;
  auto* c_pre = app.add_subcommand("pretrain", "reconstruction-loss training stage");
  auto* c_gan = app.add_subcommand("gan", "adversarial training stage from a pretrained checkpoint");
  for (auto [cmd, args] : {std::pair{c_pre, &pre}, std::pair{c_gan, &gan}}) {
    add_config_options(cmd, args->config, cmd == c_pre ? Stage::kPretrain : Stage::kAdversarial);
    cmd->add_option("--train", args->train, "training manifest")->required();
    cmd->add_option("--val", args->val, "validation manifest")->required();
    cmd->add_option("--out", args->out, "checkpoint and log directory")->required();
    cmd->add_option("--resume", args->resume, "continue from a last.ckpt of this stage");
  }
  c_gan->add_option("--from", gan.from, "pretraining checkpoint (required)");

  InferArgs inf;
  auto* c_inf = app.add_subcommand("infer", "upscale images with a trained generator");
  add_config_options(c_inf, inf.config, Stage::kPretrain);
  c_inf->add_option("--checkpoint", inf.checkpoint, "checkpoint file")->required();
  c_inf->add_option("--input", inf.inputs, "LR PPM images")->required();
  c_inf->add_option("--out", inf.out, "output directory")->required();
  c_inf->add_flag("--baseline", inf.baseline, "also write bicubic upsampling to <out>/bicubic");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "metrics of model outputs against HR references");
  c_ev->add_option("--hr", ev.hr, "HR manifest")->required();
  c_ev->add_option("--model", ev.models, "NAME=DIR with one image per HR file name, repeatable")->required();
  c_ev->add_option("--out", ev.out, "directory for NAME.csv and summary.md")->required();
  c_ev->add_option("--extractor-seed", ev.extractor_seed, "perceptual feature extractor seed");

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "operation counts and patch buffer peaks against the cost model");
  c_bench->add_option("--sizes", bench.sweep.sizes, "square input sides");
  c_bench->add_option("--chunks", bench.sweep.chunks, "chunk_pixels values");
  c_bench->add_option("--kernels", bench.sweep.kernels, "square kernel sides");
  c_bench->add_option("--channels", bench.sweep.channels, "channel counts (c_in = c_out)");
  c_bench->add_option("--batch", bench.sweep.batch, "batch size");
  c_bench->add_option("--hidden", bench.sweep.hidden, "KAN hidden width");
  c_bench->add_option("--seed", bench.sweep.seed, "weight and input seed");
  c_bench->add_option("--csv", bench.csv, "write points here instead of stdout");

  SelftestArgs st;
  auto* c_st = app.add_subcommand("selftest", "run the reference-oracle checks");
  c_st->add_option("--filter", st.filter, "only checks whose name or tag contains this");
  c_st->add_flag("--break-fold", st.break_fold, "negative control: scramble the spatial fold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (c_synth->parsed()) return cmd_synth(synth);
    if (c_deg->parsed()) return cmd_degrade(deg);
    if (c_pre->parsed()) return run_stage(Stage::kPretrain, pre);
    if (c_gan->parsed()) return run_stage(Stage::kAdversarial, gan);
    if (c_inf->parsed()) return cmd_infer(inf);
    if (c_ev->parsed()) return cmd_eval(ev);
    if (c_bench->parsed()) return cmd_bench(bench);
    if (c_st->parsed()) return cmd_selftest(st);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
