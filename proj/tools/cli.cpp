#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "ldrps/checkpoint.hpp"
#include "ldrps/config.hpp"
#include "ldrps/dataset.hpp"
#include "ldrps/degrade.hpp"
#include "ldrps/errors.hpp"
#include "ldrps/image_io.hpp"
#include "ldrps/metrics.hpp"
#include "ldrps/sampler.hpp"
#include "ldrps/training.hpp"

namespace ldrps::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string timestamp(const char* fmt) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[64];
  std::strftime(buf, sizeof buf, fmt, &tm);
  return buf;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError(tmp.string(), "cannot open for writing");
    out << text;
    if (!out) throw IoError(tmp.string(), "write failed");
  }
  fs::rename(tmp, path);
}

void write_loss_csv(const fs::path& path, const std::vector<double>& loss) {
  std::ostringstream o;
  o << std::setprecision(10) << "step,loss\n";
  for (std::size_t i = 0; i < loss.size(); ++i) o << i + 1 << ',' << loss[i] << '\n';
  write_text_atomic(path, o.str());
}

struct Context {
  config::Config cfg;
  fs::path runs;

  fs::path checkpoint_dir() const {
    return cfg.models.checkpoint_dir.empty() ? runs / "checkpoints" : fs::path(cfg.models.checkpoint_dir);
  }
  fs::path dataset_dir() const {
    if (cfg.models.dataset_dir.empty()) throw ConfigError("models.dataset_dir is required but not set");
    return cfg.models.dataset_dir;
  }
};

Context make_context(const std::string& config_path, const std::vector<std::string>& sets) {
  Context ctx;
  ctx.cfg = config_path.empty() ? config::parse("") : config::load(config_path);
  for (const auto& s : sets) config::apply_override(ctx.cfg, s);
  const char* env = std::getenv("LDRPS_RUNS_DIR");
  ctx.runs = env && *env ? fs::path(env) : fs::path("runs");
  return ctx;
}

// ------------------------------------------------------------------ models

struct LoadedModels {
  models::Autoencoder ae;
  models::Denoiser denoiser;
  models::PerceptualExtractor perceptual;
  json hashes;

  models::ModelSet view() const { return {&ae, &denoiser, &perceptual}; }
};

std::unique_ptr<LoadedModels> load_models(const Context& ctx, const NoiseSchedule& sched) {
  const fs::path dir = ctx.checkpoint_dir();
  const fs::path ae_path = dir / "ae.ckpt", den_path = dir / "denoiser.ckpt";
  auto perceptual = ctx.cfg.models.perceptual == "identity"
                        ? models::PerceptualExtractor::identity()
                        : models::PerceptualExtractor(ctx.cfg.models.perceptual_seed);
  std::unique_ptr<LoadedModels> m(new LoadedModels{models::load_autoencoder(ae_path),
                                                   models::load_denoiser(den_path, sched), std::move(perceptual), {}});
  m->hashes = {{"ae", {{"path", ae_path.string()}, {"fnv1a", hex64(file_hash(ae_path))}}},
               {"denoiser", {{"path", den_path.string()}, {"fnv1a", hex64(file_hash(den_path))}}},
               {"schedule", hex64(sched.hash())}};
  return m;
}

// --------------------------------------------------------------- gen / train

int cmd_gen_dataset(const Context& ctx, std::string out, std::optional<int> count, std::optional<std::uint64_t> seed) {
  const fs::path dir = out.empty() ? ctx.dataset_dir() : fs::path(out);
  const int n = count.value_or(ctx.cfg.models.dataset_count);
  const Dataset ds = generate_toy_dataset(n, ctx.cfg.models.image_size, seed.value_or(ctx.cfg.models.seed));
  ds.save(dir);
  std::cout << "wrote " << n << " images to " << dir.string() << '\n';
  return kExitOk;
}

int cmd_train(const Context& ctx, const std::string& stage) {
  const auto t0 = Clock::now();
  const Dataset data = Dataset::load(ctx.dataset_dir());
  const NoiseSchedule sched = ctx.cfg.make_schedule();
  const fs::path dir = ctx.checkpoint_dir();
  fs::create_directories(dir);
  auto progress = [](const std::string& line) { std::cerr << line << '\n'; };

  json manifest = {{"kind", "train"},
                   {"timestamp", timestamp("%Y-%m-%dT%H:%M:%SZ")},
                   {"seed", ctx.cfg.models.seed},
                   {"config", config::to_json(ctx.cfg)},
                   {"dataset", {{"path", ctx.dataset_dir().string()}, {"images", data.size()}}}};
  json timings;

  std::optional<models::Autoencoder> ae;
  if (stage == "all" || stage == "ae") {
    models::AutoencoderTrainConfig acfg = ctx.cfg.models.ae;
    acfg.seed = ctx.cfg.models.seed;
    models::TrainLog log;
    const auto t = Clock::now();
    ae.emplace(models::train_autoencoder(data, acfg, &log, progress));
    timings["autoencoder_seconds"] = seconds_since(t);
    models::save_autoencoder(dir / "ae.ckpt", *ae, acfg.seed);
    write_loss_csv(dir / "ae_loss.csv", log.step_loss);
    manifest["autoencoder"] = {{"steps", log.step_loss.size()},
                               {"final_loss", log.step_loss.back()},
                               {"epoch_loss", log.epoch_loss},
                               {"latent_scale", ae->latent_scale}};
  } else {
    ae.emplace(models::load_autoencoder(dir / "ae.ckpt"));
  }

  if (stage == "all" || stage == "denoiser") {
    models::DenoiserTrainConfig dcfg = ctx.cfg.models.denoiser;
    dcfg.seed = ctx.cfg.models.seed;
    models::TrainLog log;
    const auto t = Clock::now();
    const models::Denoiser d = models::train_denoiser(data, *ae, sched, dcfg, &log, progress);
    timings["denoiser_seconds"] = seconds_since(t);
    models::save_denoiser(dir / "denoiser.ckpt", d, sched, dcfg.seed);
    write_loss_csv(dir / "denoiser_loss.csv", log.step_loss);
    manifest["denoiser"] = {{"steps", log.step_loss.size()}, {"final_loss", log.step_loss.back()}};
  }

  json hashes;
  for (const char* name : {"ae.ckpt", "denoiser.ckpt"}) {
    if (fs::exists(dir / name)) hashes[name] = hex64(file_hash(dir / name));
  }
  manifest["checkpoints"] = hashes;
  timings["total_seconds"] = seconds_since(t0);
  manifest["timings"] = timings;
  write_text_atomic(dir / "train_manifest.json", manifest.dump(2) + "\n");
  std::cout << "checkpoints in " << dir.string() << '\n';
  return kExitOk;
}

// ------------------------------------------------------------ degrade / eval

int cmd_degrade(const Context& ctx, const std::string& out, const std::string& dataset) {
  const Dataset data = Dataset::load(dataset.empty() ? ctx.dataset_dir() : fs::path(dataset));
  const degrade::DegradationSpec spec = ctx.cfg.degradation();
  const fs::path dir = out.empty() ? ctx.runs / ("pairs-" + std::string(degrade::kind_name(spec.kind))) : fs::path(out);
  const auto summary =
      degrade::make_paired_set(data, spec, static_cast<std::size_t>(ctx.cfg.degrade.count), dir);
  std::cout << std::fixed << std::setprecision(4) << "wrote " << summary.count << " pairs (" << spec.describe()
            << ") to " << dir.string() << "; baseline PSNR " << summary.baseline_psnr << " dB, SSIM "
            << summary.baseline_ssim << '\n';
  return kExitOk;
}

int cmd_evaluate(const std::string& restored, const std::string& clean, const std::string& out) {
  const metrics::MetricReport r = metrics::evaluate_set(restored, clean);
  const fs::path dir = out.empty() ? fs::path(restored).parent_path() : fs::path(out);
  r.write_csv(dir / "report.csv");
  metrics::write_psnr_bar_plot(r, dir / "psnr_bar.png");
  std::cout << std::fixed << std::setprecision(4) << r.count() << " images: PSNR " << r.psnr_mean << " +- "
            << r.psnr_std << " dB, SSIM " << r.ssim_mean << " +- " << r.ssim_std << '\n';
  return kExitOk;
}

// ------------------------------------------------------------------ restore

struct RestoreOptions {
  std::string input;
  std::string out;
  std::string clean;
  std::optional<int> recurrences;
  std::optional<std::uint64_t> seed;
  bool dump_fpam = false;
  bool trace = false;
  int jobs = 1;
};

struct ImageOutcome {
  std::string file;
  int token = -1;
  std::uint64_t seed = 0;
  double seconds = 0.0;
  std::vector<Tensor> passes;
  Tensor degraded;
  std::optional<Tensor> clean;
};

std::vector<fs::path> list_inputs(const fs::path& input) {
  if (fs::is_regular_file(input)) return {input};
  if (!fs::is_directory(input)) throw IoError(input.string(), "input not found");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(input)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError(input.string(), "no PNG inputs");
  return files;
}

// Paired-set layout: <root>/degraded/x.png next to <root>/clean/x.png and <root>/manifest.txt.
fs::path paired_root(const fs::path& input) {
  const fs::path dir = fs::is_directory(input) ? input : input.parent_path();
  return dir.filename() == "degraded" ? dir.parent_path() : fs::path();
}

std::map<std::string, int> manifest_labels(const fs::path& root) {
  std::map<std::string, int> labels;
  if (root.empty()) return labels;
  std::ifstream in(root / "manifest.txt");
  std::string line;
  while (std::getline(in, line)) {
    const std::string prefix = "image.", suffix = ".label = ";
    const auto pos = line.find(suffix);
    if (line.rfind(prefix, 0) != 0 || pos == std::string::npos) continue;
    labels[line.substr(prefix.size(), pos - prefix.size())] = std::stoi(line.substr(pos + suffix.size()));
  }
  return labels;
}

// One row per image, nearest-neighbour upscaled, separated by white gutters.
void write_grid(const fs::path& path, const std::vector<std::vector<const Tensor*>>& rows) {
  constexpr int kScale = 3, kGap = 4;
  std::size_t cols = 0;
  int h = 0, w = 0;
  for (const auto& r : rows) {
    cols = std::max(cols, r.size());
    for (const Tensor* t : r) {
      h = std::max(h, t->shape().h);
      w = std::max(w, t->shape().w);
    }
  }
  Rgb8 img;
  img.width = static_cast<int>(cols) * (w * kScale + kGap) + kGap;
  img.height = static_cast<int>(rows.size()) * (h * kScale + kGap) + kGap;
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height * 3, 255);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const Rgb8 tile = to_rgb8(*rows[r][c]);
      const int ox = kGap + static_cast<int>(c) * (w * kScale + kGap);
      const int oy = kGap + static_cast<int>(r) * (h * kScale + kGap);
      for (int y = 0; y < tile.height * kScale; ++y)
        for (int x = 0; x < tile.width * kScale; ++x)
          for (int ch = 0; ch < 3; ++ch) {
            img.pixels[(static_cast<std::size_t>(oy + y) * img.width + ox + x) * 3 + ch] =
                tile.pixels[(static_cast<std::size_t>(y / kScale) * tile.width + x / kScale) * 3 + ch];
          }
    }
  write_png(path, img);
}

fs::path fresh_run_dir(const fs::path& runs) {
  const std::string base = "restore-" + timestamp("%Y%m%d-%H%M%S");
  fs::path dir = runs / base;
  for (int i = 1; fs::exists(dir); ++i) dir = runs / (base + "-" + std::to_string(i));
  return dir;
}

int cmd_restore(Context ctx, const RestoreOptions& opt) {
  const auto t0 = Clock::now();
  auto& cfg = ctx.cfg;
  if (opt.recurrences) cfg.sampler.cfg.recurrence.n = *opt.recurrences;
  if (opt.seed) cfg.sampler.seed = *opt.seed;
  if (opt.jobs < 1) throw ConfigError("--jobs must be >= 1");
  const NoiseSchedule sched = cfg.make_schedule();
  const sampler::RestoreConfig rcfg = cfg.restore_config();
  const auto models = load_models(ctx, sched);
  const double load_seconds = seconds_since(t0);

  const fs::path input(opt.input);
  const auto files = list_inputs(input);
  const fs::path root = paired_root(input);
  const fs::path clean_dir = !opt.clean.empty() ? fs::path(opt.clean)
                             : (!root.empty() && fs::is_directory(root / "clean")) ? root / "clean"
                                                                                    : fs::path();
  const auto labels = cfg.sampler.token_from_manifest ? manifest_labels(root) : std::map<std::string, int>{};
  const fs::path run_dir = opt.out.empty() ? fresh_run_dir(ctx.runs) : fs::path(opt.out);
  fs::create_directories(run_dir / "restored");

  std::vector<ImageOutcome> outcomes(files.size());
  std::mutex log_mutex;
  auto work = [&](std::size_t i) {
    ImageOutcome& o = outcomes[i];
    const auto start = Clock::now();
    o.file = files[i].filename().string();
    const std::string stem = files[i].stem().string();
    o.degraded = load_image(files[i]);
    if (!clean_dir.empty()) o.clean = load_image(clean_dir / o.file);
    const auto label = labels.find(o.file);
    o.token = label != labels.end() ? label->second : cfg.sampler.token;
    o.seed = Rng::derive(cfg.sampler.seed, o.file);
    sampler::StepCallback on_step;
    if (opt.trace) {
      on_step = [&, file = o.file](const sampler::TraceRecord& r) {
        std::lock_guard lock(log_mutex);
        std::cerr << file << " r" << r.recurrence << " step " << r.step << " t=" << r.t << " S_psi=" << r.S_psi
                  << " S_dis=" << r.S_dis;
        if (r.L) std::cerr << " L=" << *r.L;
        if (r.Q) std::cerr << " Q=" << *r.Q;
        std::cerr << " |g|=" << r.g_norm << '\n';
      };
    }
    sampler::RestoreResult res;
    try {
      res = sampler::restore(o.degraded, models::ConditioningToken{o.token}, models->view(), rcfg, sched, o.seed,
                             on_step);
    } catch (const NumericalError& e) {
      throw NumericalError(o.file + ": " + e.what());
    }
    save_image(run_dir / "restored" / o.file, res.image);
    for (std::size_t p = 0; p < res.trace.intermediates.size(); ++p) {
      save_image(run_dir / "intermediates" / stem / ("pass" + std::to_string(p) + ".png"),
                 res.trace.intermediates[p]);
    }
    res.trace.write_csv(run_dir / "traces" / (stem + ".csv"));
    if (opt.dump_fpam) {
      fpam::save_fpam(run_dir / "fpam" / (stem + ".ckpt"), res.state->psi);
      const Tensor psi = res.state->psi.apply_image(ad::constant(unit_to_signed(res.image))).value();
      Tensor unit = signed_to_unit(psi);
      for (auto& v : unit.vec()) v = std::clamp(v, 0.0, 1.0);
      save_image(run_dir / "fpam" / (stem + "_psi.png"), unit);
    }
    o.passes = std::move(res.trace.intermediates);
    o.seconds = seconds_since(start);
    std::lock_guard lock(log_mutex);
    std::cerr << "restored " << o.file << " (token " << o.token << ") in " << std::fixed << std::setprecision(1)
              << o.seconds << "s\n";
  };

  std::vector<std::exception_ptr> errors(files.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < files.size();) {
      try {
        work(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const int n = std::min<int>(opt.jobs, static_cast<int>(files.size()));
    for (int j = 1; j < n; ++j) pool.emplace_back(worker);
    worker();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  // report
  std::vector<std::vector<const Tensor*>> grid;
  json images = json::array();
  std::vector<metrics::ImageScore> scores;
  const std::size_t passes = outcomes.front().passes.size();
  std::vector<double> pass_psnr(passes, 0.0), pass_ssim(passes, 0.0);
  double baseline = 0.0;
  int improved = 0;
  for (const auto& o : outcomes) {
    std::vector<const Tensor*> row{&o.degraded};
    for (const auto& p : o.passes) row.push_back(&p);
    json entry = {{"file", o.file}, {"token", o.token}, {"seed", o.seed}, {"seconds", o.seconds}};
    if (o.clean) {
      row.push_back(&*o.clean);
      json per_pass = json::array();
      for (std::size_t p = 0; p < passes; ++p) {
        const double ps = metrics::psnr(o.passes[p], *o.clean), ss = metrics::ssim(o.passes[p], *o.clean);
        pass_psnr[p] += ps;
        pass_ssim[p] += ss;
        per_pass.push_back({{"pass", p}, {"psnr_db", ps}, {"ssim", ss}});
      }
      const double final_psnr = metrics::psnr(o.passes.back(), *o.clean);
      const double base = metrics::psnr(o.degraded, *o.clean);
      baseline += base;
      improved += final_psnr > base ? 1 : 0;
      scores.push_back({o.file, final_psnr, metrics::ssim(o.passes.back(), *o.clean)});
      entry["psnr_db"] = final_psnr;
      entry["ssim"] = scores.back().ssim;
      entry["baseline_psnr_db"] = base;
      entry["baseline_ssim"] = metrics::ssim(o.degraded, *o.clean);
      entry["passes"] = per_pass;
    }
    images.push_back(entry);
    grid.push_back(std::move(row));
  }
  write_grid(run_dir / "grid.png", grid);

  json manifest = {{"run_id", run_dir.filename().string()},
                   {"timestamp", timestamp("%Y-%m-%dT%H:%M:%SZ")},
                   {"seed", cfg.sampler.seed},
                   {"config", config::to_json(cfg)},
                   {"checkpoints", models->hashes},
                   {"input", input.string()},
                   {"clean", clean_dir.empty() ? json() : json(clean_dir.string())},
                   {"images", images}};
  const double n = static_cast<double>(outcomes.size());
  if (!scores.empty()) {
    const metrics::MetricReport report = metrics::summarize(scores);
    report.write_csv(run_dir / "metrics.csv");
    metrics::write_psnr_bar_plot(report, run_dir / "psnr_bar.png");
    json per_rec = json::array();
    for (std::size_t p = 0; p < passes; ++p) {
      per_rec.push_back({{"pass", p}, {"mean_psnr_db", pass_psnr[p] / n}, {"mean_ssim", pass_ssim[p] / n}});
    }
    manifest["recurrences"] = per_rec;
    manifest["summary"] = {{"mean_psnr_db", report.psnr_mean},
                           {"mean_ssim", report.ssim_mean},
                           {"mean_baseline_psnr_db", baseline / n},
                           {"improved_fraction", improved / n}};
    std::cout << std::fixed << std::setprecision(4) << "mean PSNR " << report.psnr_mean << " dB (degraded "
              << baseline / n << " dB), improved " << improved << "/" << outcomes.size() << '\n';
  }
  manifest["timings"] = {{"load_seconds", load_seconds}, {"total_seconds", seconds_since(t0)}};
  write_text_atomic(run_dir / "config.toml", config::to_toml(cfg));
  write_text_atomic(run_dir / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "run directory " << run_dir.string() << '\n';
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Recurrent latent-diffusion posterior sampling for blind restoration of toy images", "ldrps"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> sets;
  app.add_option("-c,--config", config_path, "TOML config file")->check(CLI::ExistingFile);
  app.add_option("-s,--set", sets, "override a key: section.key=value (repeatable)");

  auto* gen = app.add_subcommand("gen-dataset", "render the procedural toy dataset");
  std::string gen_out;
  std::optional<int> gen_count;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("-o,--out", gen_out, "output directory (default models.dataset_dir)");
  gen->add_option("-n,--count", gen_count, "number of images (default models.dataset_count)");
  gen->add_option("--seed", gen_seed, "generator seed (default models.seed)");

  auto* train = app.add_subcommand("train", "train the autoencoder and denoiser");
  std::string stage = "all";
  train->add_option("--stage", stage, "all, ae or denoiser")->check(CLI::IsMember({"all", "ae", "denoiser"}));

  auto* deg = app.add_subcommand("degrade", "write a paired clean/degraded set");
  std::string deg_out, deg_data;
  deg->add_option("-o,--out", deg_out, "output directory");
  deg->add_option("--dataset", deg_data, "source dataset (default models.dataset_dir)");

  auto* rest = app.add_subcommand("restore", "restore an image or a directory of images");
  RestoreOptions ro;
  rest->add_option("input", ro.input, "degraded PNG or directory")->required();
  rest->add_option("-o,--out", ro.out, "run directory (default $LDRPS_RUNS_DIR/restore-<time>)");
  rest->add_option("--clean", ro.clean, "clean references for metrics (auto-detected for paired sets)");
  rest->add_option("-n,--recurrences", ro.recurrences, "number of recurrent refinements");
  rest->add_option("--seed", ro.seed, "sampling seed");
  rest->add_flag("--dump-fpam", ro.dump_fpam, "save the final F-PAM weights and its view of each result");
  rest->add_flag("--trace", ro.trace, "stream per-step losses to stderr");
  rest->add_option("-j,--jobs", ro.jobs, "images restored concurrently");

  auto* eval = app.add_subcommand("evaluate", "score restored images against clean references");
  std::string ev_restored, ev_clean, ev_out;
  eval->add_option("restored", ev_restored, "restored directory")->required();
  eval->add_option("clean", ev_clean, "clean directory")->required();
  eval->add_option("-o,--out", ev_out, "report directory (default parent of restored)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) return kExitOk;
    std::cerr << app.help();
    return kExitConfig;
  }

  try {
    if (*eval) return cmd_evaluate(ev_restored, ev_clean, ev_out);
    const Context ctx = make_context(config_path, sets);
    if (*gen) return cmd_gen_dataset(ctx, gen_out, gen_count, gen_seed);
    if (*train) return cmd_train(ctx, stage);
    if (*deg) return cmd_degrade(ctx, deg_out, deg_data);
    if (*rest) return cmd_restore(ctx, ro);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitConfig;
}

}  // namespace ldrps::cli
