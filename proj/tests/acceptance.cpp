// Acceptance checks: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <json.hpp>

#include "psinvert/data.hpp"
#include "psinvert/gbr.hpp"
#include "psinvert/gradcheck.hpp"
#include "psinvert/metrics.hpp"
#include "psinvert/optimize.hpp"
#include "psinvert/outputs.hpp"
#include "test_util.hpp"

using namespace psinvert;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// The shiny two-region sphere used by the optimization trends.
SynthSceneSpec trend_scene() { return SynthSceneSpec{}; }

// Network width for the multi-run trend criteria; the default width makes the
// ten-run ablation exceed its time budget on one core.
TrainConfig trend_config() {
  TrainConfig cfg;
  cfg.epochs = 500;
  cfg.hidden_width = 64;
  cfg.threads = 0;
  cfg.metrics_interval = 50;
  return cfg;
}

double final_mae(const Solution& sol) { return sol.log.back().normal_mae.value(); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  PipelineCheckOptions opt;
  opt.trials = 100;
  const PipelineCheckReport r = pipeline_gradient_check(opt);
  const double t = seconds_since(t0);
  return {r.max_relative_error < 1e-4 && t < 30.0,
          fmt("max rel err %.3g over %d coords (%d near kinks skipped), %.1f s", r.max_relative_error,
              r.checked, r.near_kink, t)};
}

Outcome lambertian_invariance() {
  SynthSceneSpec spec;
  spec.layout = SynthSceneSpec::Layout::TwoRegion;
  spec.specular_a = {0.0};
  spec.specular_b = {0.0};
  const GbrScene scene = gbr_scene(synth_scene(spec));
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> mu(-2.0, 2.0), lam(0.25, 4.0);
  const std::vector<double> none(scene.roughness.size(), 0.0);
  double worst = 0.0;
  long count = 0;
  for (int t = 0; t < 20; ++t) {
    const GbrParams g{mu(rng), mu(rng), lam(rng)};
    for (Eigen::Index p = 0; p < scene.B.cols(); ++p)
      for (Eigen::Index j = 0; j < scene.S.cols(); ++j) {
        if (!(scene.observed(p, j) > 0.0)) continue;
        const double base = gbr_render({0, 0, 1}, scene.B.col(p), scene.S.col(j), none, scene.roughness);
        const double moved = gbr_render(g, scene.B.col(p), scene.S.col(j), none, scene.roughness);
        worst = std::max(worst, std::abs(moved - base));
        ++count;
      }
  }
  return {worst < 1e-10, fmt("max |diff| %.3g over %ld lit samples", worst, count)};
}

Outcome specular_breaking() {
  const auto t0 = Clock::now();
  SynthSceneSpec spec;
  spec.layout = SynthSceneSpec::Layout::Uniform;
  const GbrScene scene = gbr_scene(synth_scene(spec));
  const GbrSurface s = gbr_grid_search(scene, GbrGrid::regular(9, -1, 1, 0.5, 2), 0);
  const GbrCell& best = s.best();
  const bool at_identity = best.params.mu == 0.0 && best.params.nu == 0.0 && best.params.lambda == 1.0;
  double identity = -1.0, closest_far = std::numeric_limits<double>::infinity();
  for (const GbrCell& c : s.cells) {
    const GbrParams& g = c.params;
    if (g.mu == 0.0 && g.nu == 0.0 && g.lambda == 1.0) identity = c.loss;
    if (std::abs(g.mu) + std::abs(g.nu) >= 0.5 || std::abs(g.lambda - 1.0) >= 0.5)
      closest_far = std::min(closest_far, c.loss);
  }
  const double t = seconds_since(t0);
  return {at_identity && identity >= 0.0 && identity < 0.5 * closest_far && t < 300.0,
          fmt("argmin (%.3g, %.3g, %.3g), identity loss %.3g, smallest far loss %.3g, %ld pixels x %ld lights, %.1f s",
              best.params.mu, best.params.nu, best.params.lambda, identity, closest_far,
              static_cast<long>(scene.B.cols()), static_cast<long>(scene.S.cols()), t)};
}

Outcome specular_spikes() {
  SynthSceneSpec spec;
  spec.layout = SynthSceneSpec::Layout::Uniform;
  spec.diffuse_a = 0.1;
  spec.specular_a = {1.0};
  const SyntheticScene scene = synth_scene(spec);
  const PhotometricDataset& ds = scene.dataset;
  double worst = 0.0;
  for (int j = 0; j < ds.count(); ++j) {
    Image masked = ds.images[j];
    for (int r = 0; r < ds.rows(); ++r)
      for (int c = 0; c < ds.cols(); ++c)
        if (!ds.mask(r, c)) masked(r, c) = -1.0;
    Eigen::Index r, c;
    masked.maxCoeff(&r, &c);
    const UnitVec3 h = half_vector(ds.view, ds.gt_lights->direction(j));
    worst = std::max(worst, angle_deg((*ds.gt_normals)(r, c), h.vec()));
  }
  return {worst < 2.0, fmt("max angle to bisector %.3f deg over %d lights", worst, ds.count())};
}

Outcome woodham() {
  SynthSceneSpec spec;
  spec.specular_a = {0.0};
  spec.specular_b = {0.0};
  const SyntheticScene scene = synth_scene(spec);
  const PhotometricDataset& ds = scene.dataset;
  const std::vector<Pixel> px = masked_pixels(ds.mask);
  Eigen::MatrixXd M(px.size(), ds.count());
  Eigen::Matrix3Xd S(3, ds.count());
  for (int j = 0; j < ds.count(); ++j) {
    S.col(j) = ds.gt_lights->intensity(j) * to_eigen(ds.gt_lights->direction(j).vec());
    for (std::size_t p = 0; p < px.size(); ++p) M(p, j) = ds.images[j](px[p].row, px[p].col);
  }
  const Eigen::Matrix3Xd B = lambertian_solve(M, S);
  double sum = 0.0;
  long used = 0, unsolved = 0;
  for (std::size_t p = 0; p < px.size(); ++p) {
    if (B.col(p).norm() == 0.0) {
      ++unsolved;
      continue;
    }
    sum += angle_deg(from_eigen(B.col(p).normalized()), (*ds.gt_normals)(px[p].row, px[p].col));
    ++used;
  }
  const double mae = used ? sum / used : 180.0;
  return {mae < 0.1 && used > 0,
          fmt("MAE %.2e deg over %ld pixels (%ld with fewer than 3 lit images)", mae, used, unsolved)};
}

Outcome psb_ablation() {
  const auto t0 = Clock::now();
  const SyntheticScene scene = synth_scene(trend_scene());
  std::vector<double> with, without;
  for (int seed = 0; seed < 5; ++seed) {
    for (bool psb : {true, false}) {
      TrainConfig cfg = trend_config();
      cfg.seed = static_cast<std::uint64_t>(seed);
      cfg.psb = psb;
      const double mae = final_mae(reconstruct(scene.dataset, cfg));
      (psb ? with : without).push_back(mae);
      std::fprintf(stderr, "  psb=%d seed=%d normal MAE %.3f\n", psb, seed, mae);
    }
  }
  const double t = seconds_since(t0);
  const double a = median(with), b = median(without);
  return {a <= b && t < 1800.0, fmt("median MAE with PSB %.3f, without %.3f, %.0f s", a, b, t)};
}

Outcome light_noise() {
  const SyntheticScene scene = synth_scene(trend_scene());
  double gt_mae = 0.0;
  std::string detail;
  bool pass = true;
  for (const char* init : {"gt-noise:0", "gt-noise:30", "gt-noise:70"}) {
    TrainConfig cfg = trend_config();
    cfg.light_init = LightInit::parse(init);
    const Solution sol = reconstruct(scene.dataset, cfg);
    const double mae = final_mae(sol);
    const double dir = light_direction_error(sol.lights, *scene.dataset.gt_lights);
    std::fprintf(stderr, "  %s normal MAE %.3f light MAE %.3f\n", init, mae, dir);
    if (std::strcmp(init, "gt-noise:0") == 0) {
      gt_mae = mae;
    } else {
      pass = pass && mae <= gt_mae + 1.5 && dir < 8.0;
    }
    detail += fmt("%s%s: normal %.2f light %.2f", detail.empty() ? "" : "; ", init, mae, dir);
  }
  return {pass, detail};
}

Outcome scale_invariant_error() {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.05, 2.0);
  std::uniform_int_distribution<int> len(1, 32);
  double worst_s = 0.0, worst_scaled = 0.0;
  bool exact = true;
  for (int t = 0; t < 1000; ++t) {
    const int n = len(rng);
    std::vector<double> e(n), g(n);
    for (int i = 0; i < n; ++i) {
      e[i] = u(rng);
      g[i] = u(rng);
    }
    auto objective = [&](double s) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += (s * e[i] - g[i]) * (s * e[i] - g[i]);
      return acc;
    };
    // log grid over [1e-3, 1e3], then golden-section search between the
    // neighbours of the best grid point
    constexpr int kGrid = 10000;
    int best = 0;
    double best_val = std::numeric_limits<double>::infinity();
    auto grid = [](int i) { return std::pow(10.0, -3.0 + 6.0 * i / (kGrid - 1)); };
    for (int i = 0; i < kGrid; ++i) {
      const double v = objective(grid(i));
      if (v < best_val) {
        best_val = v;
        best = i;
      }
    }
    double lo = grid(std::max(best - 1, 0)), hi = grid(std::min(best + 1, kGrid - 1));
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    while (hi - lo > 1e-12) {
      const double a = hi - phi * (hi - lo), b = lo + phi * (hi - lo);
      if (objective(a) < objective(b)) {
        hi = b;
      } else {
        lo = a;
      }
    }
    const double brute = 0.5 * (lo + hi);
    worst_s = std::max(worst_s, std::abs(brute - intensity_scale(e, g)));

    const double base = scale_invariant_intensity_error(e, g);
    std::vector<double> twice(e), scaled(e);
    const double k = u(rng) * 10.0;
    for (int i = 0; i < n; ++i) {
      twice[i] *= 4.0;
      scaled[i] *= k;
    }
    exact = exact && scale_invariant_intensity_error(twice, g) == base;
    worst_scaled = std::max(worst_scaled, std::abs(scale_invariant_intensity_error(scaled, g) - base));
  }
  return {worst_s < 1e-6 && exact && worst_scaled < 1e-12,
          fmt("max |s - s_search| %.2e; power-of-two scaling exact: %s; arbitrary scaling max diff %.2e",
              worst_s, exact ? "yes" : "no", worst_scaled)};
}

int run_command(const std::string& cmd) {
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

// Regression baseline for the desk run: the first green run reached 3.19 deg
// (single core, seed 0); the margin absorbs toolchain and thread-count drift.
constexpr double kDeskMaeBaselineDeg = 3.5;

Outcome desk_run() {
  TempDir dir("accept_desk");
  const std::string cli = PSINVERT_CLI;
  const std::string ds = (dir / "ds").string(), out = (dir / "out").string();
  const auto t0 = Clock::now();
  if (run_command(cli + " synth --out " + ds + " > /dev/null") != 0) return {false, "synth failed"};
  if (run_command(cli + " reconstruct " + ds + " --out " + out + " --epochs 500 --quiet > /dev/null") != 0)
    return {false, "reconstruct failed"};
  if (run_command(cli + " eval --est " + out + " --gt " + ds + " > /dev/null") != 0) return {false, "eval failed"};
  const double t = seconds_since(t0);

  std::ifstream in(dir / "out" / "report.json");
  const nlohmann::json report = nlohmann::json::parse(in);
  const double psnr_db = report["psnr_db"].get<double>();
  const double mae = report["normal_mae_deg"].get<double>();

  // the untrained field under the same configuration
  const PhotometricDataset data = load_dataset(ds);
  TrainConfig cfg;
  cfg.epochs = 500;
  const Model m = Model::create(cfg, data.mask, LightTable(data.count()));
  const double initial = mean_angular_error(evaluate_fields(m, data.mask).normals, *data.gt_normals, data.mask);
  return {t < 600.0 && psnr_db > 35.0 && mae * 10.0 <= initial && mae <= kDeskMaeBaselineDeg,
          fmt("PSNR %.2f dB, normal MAE %.3f deg (epoch-0 field %.3f deg, baseline %.2f), light MAE %.3f deg, "
              "%.0f s",
              psnr_db, mae, initial, kDeskMaeBaselineDeg, report["light_dir_mae_deg"].get<double>(), t)};
}

Outcome format_contracts() {
  TempDir dir("accept_fmt");
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<float> u(-100.0f, 100.0f);
  bool pfm = true;
  for (int channels : {1, 3}) {
    PfmImage img;
    img.width = 13;
    img.height = 7;
    img.channels = channels;
    img.data.resize(static_cast<std::size_t>(13 * 7 * channels));
    for (float& v : img.data) v = u(rng);
    img.data[0] = std::numeric_limits<float>::denorm_min();
    img.data[1] = -0.0f;
    write_pfm(img, dir / "img.pfm");
    const PfmImage back = read_pfm(dir / "img.pfm");
    pfm = pfm && back.width == img.width && back.height == img.height && back.channels == channels &&
          std::memcmp(back.data.data(), img.data.data(), img.data.size() * sizeof(float)) == 0;
  }

  SynthSceneSpec spec;
  spec.height = spec.width = 32;
  spec.radius = 14;
  spec.light_count = 8;
  const SyntheticScene scene = synth_scene(spec);
  save_dataset(scene.dataset, dir / "ds");
  const PhotometricDataset back = load_dataset(dir / "ds");
  bool dual = back.names == scene.dataset.names && (back.mask == scene.dataset.mask).all();
  for (int j = 0; j < back.count(); ++j)
    dual = dual && (back.images[j] == scene.dataset.images[j].cast<float>().cast<double>()).all();
  for (const Pixel& p : masked_pixels(back.mask)) {
    const Vec3d a = (*back.gt_normals)(p.row, p.col), b = (*scene.dataset.gt_normals)(p.row, p.col);
    dual = dual && norm(a - b) < 1e-6;
  }

  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.hidden_width = 16;
  cfg.normal_layers = 3;
  cfg.material_layers = 3;
  cfg.seed = 77;
  cfg.threads = 0;
  const std::string a = train_log_csv(reconstruct(scene.dataset, cfg).log);
  const std::string b = train_log_csv(reconstruct(scene.dataset, cfg).log);
  const bool det = a == b && !a.empty();
  return {pfm && dual && det, fmt("pfm bit-exact: %s; dataset duality: %s; train_log deterministic: %s",
                                  pfm ? "yes" : "no", dual ? "yes" : "no", det ? "yes" : "no")};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "gradient fidelity", gradient_fidelity},
      {2, "Lambertian GBR invariance", lambertian_invariance},
      {3, "specular GBR breaking", specular_breaking},
      {4, "specular spike geometry", specular_spikes},
      {5, "Woodham oracle", woodham},
      {6, "PSB ablation trend", psb_ablation},
      {7, "light-noise robustness", light_noise},
      {8, "scale-invariant error", scale_invariant_error},
      {9, "end-to-end desk run", desk_run},
      {10, "format contracts", format_contracts},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const Criterion& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("criterion %2d %s: %s (%s)\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
