// psinvert: synthetic data, reconstruction, evaluation and probes in one binary.
//
// Exit status: 0 success, 1 data error, 2 usage error. Failures also print one
// JSON line {"error": kind, "message": text} on stderr.

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>

#include "psinvert/data.hpp"
#include "psinvert/gbr.hpp"
#include "psinvert/gradcheck.hpp"
#include "psinvert/optimize.hpp"
#include "psinvert/outputs.hpp"

namespace fs = std::filesystem;
using namespace psinvert;

namespace {

int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << '\n';
  return code;
}

std::string kebab(std::string s) {
  std::replace(s.begin(), s.end(), '_', '-');
  return s;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  SynthSceneSpec spec;
  std::string shape = "sphere";
  std::string layout = "two-region";
  std::string light_file;
};

void add_synth_flags(CLI::App* app, SynthArgs& a) {
  SynthSceneSpec& s = a.spec;
  app->add_option("--shape", a.shape, "sphere | heightfield")->capture_default_str();
  app->add_option("--height", s.height)->capture_default_str();
  app->add_option("--width", s.width)->capture_default_str();
  app->add_option("--radius", s.radius, "sphere radius in pixels")->capture_default_str();
  app->add_option("--bump-amplitude", s.bump_amplitude)->capture_default_str();
  app->add_option("--bump-frequency", s.bump_frequency)->capture_default_str();
  app->add_option("--layout", a.layout, "uniform | two-region | textured-noise")->capture_default_str();
  app->add_option("--diffuse-a", s.diffuse_a)->capture_default_str();
  app->add_option("--diffuse-b", s.diffuse_b)->capture_default_str();
  app->add_option("--specular-a", s.specular_a, "specular albedo per basis, region a")->expected(1, -1);
  app->add_option("--specular-b", s.specular_b, "specular albedo per basis, region b")->expected(1, -1);
  app->add_option("--k", s.k)->capture_default_str();
  app->add_option("--r-top", s.r_top)->capture_default_str();
  app->add_option("--r-bottom", s.r_bottom)->capture_default_str();
  app->add_option("--lights", s.light_count, "number of lights")->capture_default_str();
  app->add_option("--cap-deg", s.cap_deg, "light cone half-angle")->capture_default_str();
  app->add_option("--intensity-jitter", s.intensity_jitter)->capture_default_str();
  app->add_option("--light-file", a.light_file, "explicit light directions, one 'lx ly lz' per line");
  app->add_option("--noise", s.noise_sigma, "Gaussian pixel noise sigma")->capture_default_str();
  app->add_option("--seed", s.seed)->capture_default_str();
}

SynthSceneSpec resolve_spec(SynthArgs a) {
  a.spec.shape = parse_shape(a.shape);
  a.spec.layout = parse_layout(a.layout);
  if (!a.light_file.empty()) {
    const LightTable t = read_lights_file(a.light_file);
    a.spec.light_directions.clear();
    for (int j = 0; j < t.size(); ++j) a.spec.light_directions.push_back(t.direction(j).vec());
    a.spec.light_count = t.size();
  }
  return a.spec;
}

// ---------------------------------------------------------------------------
// reconstruct

// Defaults < config file < PSINVERT_SEED < flags. The CLI defaults to all cores.
TrainConfig resolve_config(const std::string& config_file, const std::map<std::string, std::string>& flags) {
  TrainConfig cfg;
  cfg.threads = 0;
  if (!config_file.empty()) load_config_file(cfg, config_file);
  if (!flags.count("seed")) {
    if (const char* env = std::getenv("PSINVERT_SEED"); env && *env) set_config_value(cfg, "seed", env);
  }
  for (const auto& [k, v] : flags) set_config_value(cfg, k, v);
  cfg.validate();
  return cfg;
}

void print_epoch(const EpochLog& e, int epochs) {
  std::fprintf(stderr, "epoch %d/%d loss %.6f alpha %.3f", e.epoch + 1, epochs, e.loss, e.alpha);
  if (e.skipped) std::fprintf(stderr, " skipped %d", e.skipped);
  if (e.normal_mae) std::fprintf(stderr, " normal_mae %.3f", *e.normal_mae);
  if (e.dir_mae) std::fprintf(stderr, " dir_mae %.3f", *e.dir_mae);
  if (e.int_err) std::fprintf(stderr, " int_err %.4f", *e.int_err);
  std::fputc('\n', stderr);
}

std::string summary_line(const EvalReport& r) {
  auto f = [](const char* name, const std::optional<double>& v) {
    char buf[64];
    if (v) std::snprintf(buf, sizeof(buf), "%s=%.6g", name, *v);
    else std::snprintf(buf, sizeof(buf), "%s=na", name);
    return std::string(buf);
  };
  return f("normal_mae_deg", r.normal_mae_deg) + " " + f("light_dir_mae_deg", r.light_dir_mae_deg) + " " +
         f("intensity_si_error", r.intensity_si_error) + " " + f("psnr_db", r.psnr_db);
}

int run(int argc, char** argv) {
  CLI::App app{"Uncalibrated photometric stereo by neural inverse rendering"};
  app.require_subcommand(1, 1);

  // synth
  SynthArgs synth_args;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write a synthetic dataset directory");
  add_synth_flags(synth, synth_args);
  synth->add_option("--out", synth_out, "dataset directory")->required();

  // render
  std::string model_path, render_out;
  double render_alpha = -1.0;
  auto* render = app.add_subcommand("render", "re-render a reconstruction to PFM images");
  render->add_option("--model", model_path, "reconstruction output directory or checkpoint.bin")->required();
  render->add_option("--out", render_out, "output directory")->required();
  render->add_option("--alpha", render_alpha, "basis activation level (default: all bases)");

  // reconstruct
  std::string dataset_dir, recon_out, config_file;
  bool quiet = false;
  std::map<std::string, std::string> cfg_flags;
  auto* recon = app.add_subcommand("reconstruct", "estimate normals, materials and lights");
  recon->add_option("dataset", dataset_dir, "dataset directory")->required();
  recon->add_option("--out", recon_out, "output directory")->required();
  recon->add_option("--config", config_file, "file of key = value lines");
  recon->add_flag("--quiet", quiet, "no per-epoch progress");
  for (const auto& [key, value] : config_entries(TrainConfig{})) {
    const std::string name = key;
    recon->add_option_function<std::string>(
        "--" + kebab(key), [&cfg_flags, name](const std::string& v) { cfg_flags[name] = v; },
        "default " + (key == "threads" ? std::string("0 (all cores)") : value));
  }

  // eval
  std::string est_dir, gt_dir, report_path;
  auto* eval = app.add_subcommand("eval", "score a reconstruction against ground truth");
  eval->add_option("--est", est_dir, "reconstruction output directory")->required();
  eval->add_option("--gt", gt_dir, "dataset directory with ground truth")->required();
  eval->add_option("--report", report_path, "report path (default <est>/report.json)");

  // gbr-probe
  SynthArgs probe_args;
  probe_args.spec.layout = SynthSceneSpec::Layout::Uniform;
  probe_args.layout = "uniform";
  std::string probe_out;
  int grid_count = 9, probe_threads = 0;
  std::vector<double> mu_range{-1.0, 1.0}, lambda_range{0.5, 2.0};
  auto* probe = app.add_subcommand("gbr-probe", "loss over a grid of GBR transforms of a synthetic scene");
  add_synth_flags(probe, probe_args);
  probe->add_option("--grid", grid_count, "values per axis")->capture_default_str();
  probe->add_option("--mu-range", mu_range, "range of mu and nu")->expected(2);
  probe->add_option("--lambda-range", lambda_range, "range of lambda")->expected(2);
  probe->add_option("--threads", probe_threads, "0 = all cores")->capture_default_str();
  probe->add_option("--out", probe_out, "CSV path (default stdout)");

  // gradcheck
  PipelineCheckOptions gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "analytic vs numeric gradients of the full pipeline");
  gradcheck->add_option("--trials", gc.trials)->capture_default_str();
  gradcheck->add_option("--seed", gc.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << '\n';
    return fail("Usage", e.what(), 2);
  }

  if (*synth) {
    const SyntheticScene scene = synth_scene(resolve_spec(synth_args));
    save_dataset(scene.dataset, synth_out);
    std::cout << "wrote " << scene.dataset.count() << " images to " << synth_out << '\n';
    return 0;
  }

  if (*render) {
    fs::path ckpt_path = model_path;
    if (fs::is_directory(ckpt_path)) ckpt_path /= "checkpoint.bin";
    const RestoredModel rm = restore_model(read_checkpoint(ckpt_path));
    const FieldEstimate fields = evaluate_fields(rm.model, rm.mask);
    const SpecularBasisBank bank = rm.model.bank();
    const double alpha = render_alpha < 0.0 ? bank.k() : render_alpha;
    PhotometricDataset out;
    out.mask = rm.mask;
    out.gt_lights = rm.model.lights;
    out.gt_normals = fields.normals;
    for (int j = 0; j < rm.model.lights.size(); ++j) {
      char name[32];
      std::snprintf(name, sizeof(name), "render_%03d", j);
      out.names.push_back(name);
      out.images.push_back(render_image(fields.normals, fields.materials, rm.model.lights.light(j), bank,
                                        alpha, rm.mask));
    }
    save_dataset(out, render_out);
    std::cout << "rendered " << out.count() << " images to " << render_out << '\n';
    return 0;
  }

  if (*recon) {
    const TrainConfig cfg = resolve_config(config_file, cfg_flags);
    const PhotometricDataset ds = load_dataset(dataset_dir);
    EpochCallback cb;
    if (!quiet) cb = [&](const EpochLog& e) { print_epoch(e, cfg.epochs); };
    const Solution sol = reconstruct(ds, cfg, cb);
    save_outputs(sol, ds, cfg, recon_out);
    std::cout << "final_loss=" << sol.final_full_loss << " psnr_db=" << sol.final_psnr
              << " skipped=" << sol.skipped_iterations << '\n';
    return 0;
  }

  if (*eval) {
    const PhotometricDataset gt = load_dataset(gt_dir);
    const fs::path est = est_dir;
    const NormalMap normals = to_normal_map(read_pfm(est / "normal_est.pfm"));
    const LightTable lights = read_lights_file(est / "lights_est.txt", gt.count());
    std::vector<Image> rendered;
    TrainConfig cfg;
    if (fs::exists(est / "checkpoint.bin")) {
      RestoredModel rm = restore_model(read_checkpoint(est / "checkpoint.bin"));
      cfg = rm.config;
      rendered = render_model(rm.model, evaluate_fields(rm.model, gt.mask), gt.mask);
    }
    const EvalReport rep = evaluate(normals, lights, rendered, gt);
    const fs::path out = report_path.empty() ? est / "report.json" : fs::path(report_path);
    std::ofstream(out, std::ios::binary)
        << report_json(rep, gt.count(), static_cast<long>(gt.mask.count()), cfg);
    std::cout << summary_line(rep) << '\n';
    return 0;
  }

  if (*probe) {
    const SyntheticScene scene = synth_scene(resolve_spec(probe_args));
    const GbrGrid grid = GbrGrid::regular(grid_count, mu_range[0], mu_range[1], lambda_range[0], lambda_range[1]);
    const GbrSurface surface = gbr_grid_search(gbr_scene(scene), grid, probe_threads);
    std::ofstream file;
    if (!probe_out.empty()) {
      file.open(probe_out, std::ios::binary);
      if (!file) throw Error(ErrorKind::MissingFile, "cannot write " + probe_out);
    }
    std::ostream& out = probe_out.empty() ? std::cout : file;
    out << "mu,nu,lambda,loss\n";
    char line[128];
    for (const GbrCell& c : surface.cells) {
      std::snprintf(line, sizeof(line), "%.17g,%.17g,%.17g,%.17g\n", c.params.mu, c.params.nu,
                    c.params.lambda, c.loss);
      out << line;
    }
    const GbrCell& best = surface.best();
    std::fprintf(stderr, "argmin mu %.4g nu %.4g lambda %.4g loss %.6g\n", best.params.mu, best.params.nu,
                 best.params.lambda, best.loss);
    return 0;
  }

  if (*gradcheck) {
    const PipelineCheckReport r = pipeline_gradient_check(gc);
    std::printf("max_relative_error=%.3e checked=%d near_kink=%d trials=%d\n", r.max_relative_error,
                r.checked, r.near_kink, r.trials);
    return r.max_relative_error < 1e-4 ? 0 : 1;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    const bool usage = e.kind() == ErrorKind::BadConfig || e.kind() == ErrorKind::BadSpec;
    return fail(std::string(to_string(e.kind())), e.what(), usage ? 2 : 1);
  } catch (const std::exception& e) {
    return fail("Internal", e.what(), 1);
  }
}
