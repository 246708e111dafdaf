#include "psinvert/optimize.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_map>

#include "psinvert/metrics.hpp"
#include "psinvert/parallel.hpp"

namespace psinvert {

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  auto bad = [](const std::string& why) { throw Error(ErrorKind::BadConfig, why); };
  if (k < 2) bad("k must be at least 2");
  if (!(r_top > r_bottom && r_bottom > 0.0)) bad("need r_top > r_bottom > 0");
  if (epochs < 1) bad("epochs must be at least 1");
  if (!(learning_rate > 0.0)) bad("learning_rate must be positive");
  if (!(light_lr_scale > 0.0)) bad("light_lr_scale must be positive");
  if (images_per_iteration < 1) bad("images_per_iteration must be at least 1");
  if (pixels_per_iteration < 1) bad("pixels_per_iteration must be at least 1");
  if (!(psb_fraction > 0.0 && psb_fraction <= 1.0)) bad("psb_fraction must lie in (0, 1]");
  if (!(early_prior_fraction > 0.0 && early_prior_fraction <= 1.0)) {
    bad("early_prior_fraction must lie in (0, 1]");
  }
  if (!(lambda_smooth >= 0.0 && lambda_contour >= 0.0)) bad("prior weights must be non-negative");
  if (encoding_levels < 1) bad("encoding_levels must be at least 1");
  if (hidden_width < 1 || normal_layers < 1 || material_layers < 1) bad("network sizes must be positive");
  if (threads < 0) bad("threads must be non-negative");
  if (metrics_interval < 1) bad("metrics_interval must be at least 1");
}

namespace {

std::string normalize_key(std::string key) {
  std::replace(key.begin(), key.end(), '-', '_');
  return key;
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error(ErrorKind::BadConfig, key + ": expected a number, got '" + v + "'");
  }
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw Error(ErrorKind::BadConfig, key + ": expected an integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw Error(ErrorKind::BadConfig, key + ": expected a boolean, got '" + v + "'");
}

}  // namespace

void set_config_value(TrainConfig& cfg, const std::string& raw_key, const std::string& v) {
  const std::string key = normalize_key(raw_key);
  auto as_int = [&] { return static_cast<int>(to_int(key, v)); };
  if (key == "k") cfg.k = as_int();
  else if (key == "r_top") cfg.r_top = to_double(key, v);
  else if (key == "r_bottom") cfg.r_bottom = to_double(key, v);
  else if (key == "epochs") cfg.epochs = as_int();
  else if (key == "learning_rate") cfg.learning_rate = to_double(key, v);
  else if (key == "images_per_iteration") cfg.images_per_iteration = as_int();
  else if (key == "pixels_per_iteration") cfg.pixels_per_iteration = as_int();
  else if (key == "psb") cfg.psb = to_bool(key, v);
  else if (key == "psb_fraction") cfg.psb_fraction = to_double(key, v);
  else if (key == "trainable_roughness") cfg.trainable_roughness = to_bool(key, v);
  else if (key == "train_lights") cfg.train_lights = to_bool(key, v);
  else if (key == "light_lr_scale") cfg.light_lr_scale = to_double(key, v);
  else if (key == "lambda_smooth") cfg.lambda_smooth = to_double(key, v);
  else if (key == "lambda_contour") cfg.lambda_contour = to_double(key, v);
  else if (key == "early_prior_fraction") cfg.early_prior_fraction = to_double(key, v);
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(to_int(key, v));
  else if (key == "encoding_levels") cfg.encoding_levels = as_int();
  else if (key == "hidden_width") cfg.hidden_width = as_int();
  else if (key == "normal_layers") cfg.normal_layers = as_int();
  else if (key == "material_layers") cfg.material_layers = as_int();
  else if (key == "light_init") cfg.light_init = LightInit::parse(v);
  else if (key == "threads") cfg.threads = as_int();
  else if (key == "metrics_interval") cfg.metrics_interval = as_int();
  else throw Error(ErrorKind::BadConfig, "unknown config key '" + raw_key + "'");
}

void load_config_file(TrainConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open config " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::BadConfig, path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& c) {
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"k", std::to_string(c.k)},
      {"r_top", fmt(c.r_top)},
      {"r_bottom", fmt(c.r_bottom)},
      {"epochs", std::to_string(c.epochs)},
      {"learning_rate", fmt(c.learning_rate)},
      {"images_per_iteration", std::to_string(c.images_per_iteration)},
      {"pixels_per_iteration", std::to_string(c.pixels_per_iteration)},
      {"psb", b(c.psb)},
      {"psb_fraction", fmt(c.psb_fraction)},
      {"trainable_roughness", b(c.trainable_roughness)},
      {"train_lights", b(c.train_lights)},
      {"light_lr_scale", fmt(c.light_lr_scale)},
      {"lambda_smooth", fmt(c.lambda_smooth)},
      {"lambda_contour", fmt(c.lambda_contour)},
      {"early_prior_fraction", fmt(c.early_prior_fraction)},
      {"seed", std::to_string(c.seed)},
      {"encoding_levels", std::to_string(c.encoding_levels)},
      {"hidden_width", std::to_string(c.hidden_width)},
      {"normal_layers", std::to_string(c.normal_layers)},
      {"material_layers", std::to_string(c.material_layers)},
      {"light_init", c.light_init.to_string()},
      {"threads", std::to_string(c.threads)},
      {"metrics_interval", std::to_string(c.metrics_interval)},
  };
}

// ---------------------------------------------------------------------------
// Loss pieces

double photometric_loss(std::span<const double> observed, std::span<const double> rendered) {
  if (observed.empty()) throw Error(ErrorKind::EmptyBatch, "photometric loss over an empty batch");
  if (observed.size() != rendered.size()) {
    throw Error(ErrorKind::ShapeMismatch, "observed and rendered batches differ in size");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) sum += std::abs(observed[i] - rendered[i]);
  return sum / static_cast<double>(observed.size());
}

double alpha_schedule(int epoch, const TrainConfig& cfg) {
  if (!cfg.psb) return cfg.k;
  const double ramp = cfg.psb_fraction * cfg.epochs;
  return cfg.k * std::clamp(epoch / ramp, 0.0, 1.0);
}

bool early_priors_active(int epoch, const TrainConfig& cfg) {
  return epoch < cfg.early_prior_fraction * cfg.epochs;
}

template <class T>
T early_priors(std::span<const Vec3<T>> normals,
               std::span<const std::pair<std::size_t, std::size_t>> pairs,
               std::span<const ContourTerm> contour, int epoch, const TrainConfig& cfg) {
  T zero{};
  if constexpr (std::is_same_v<T, Var>) {
    if (normals.empty()) throw Error(ErrorKind::EmptyBatch, "priors need at least one normal");
    zero = normals[0].x * 0.0;
  }
  if (!early_priors_active(epoch, cfg)) return zero;
  T total = zero;
  if (!pairs.empty() && cfg.lambda_smooth > 0.0) {
    T sum = zero;
    for (const auto& [p, q] : pairs) sum = sum + (1.0 - dot(normals[p], normals[q]));
    total = total + sum * (cfg.lambda_smooth / static_cast<double>(pairs.size()));
  }
  if (!contour.empty() && cfg.lambda_contour > 0.0) {
    T sum = zero;
    for (const ContourTerm& c : contour) {
      const Vec3<T>& n = normals[c.index];
      sum = sum + (1.0 - (n.x * c.outward.x + n.y * c.outward.y + n.z * c.outward.z));
    }
    total = total + sum * (cfg.lambda_contour / static_cast<double>(contour.size()));
  }
  return total;
}

template double early_priors<double>(std::span<const Vec3d>,
                                     std::span<const std::pair<std::size_t, std::size_t>>,
                                     std::span<const ContourTerm>, int, const TrainConfig&);
template Var early_priors<Var>(std::span<const Vec3<Var>>,
                               std::span<const std::pair<std::size_t, std::size_t>>,
                               std::span<const ContourTerm>, int, const TrainConfig&);

// ---------------------------------------------------------------------------
// Adam

void AdamState::step(std::span<Eigen::VectorXd* const> params,
                     std::span<const Eigen::VectorXd* const> grads, double lr,
                     std::span<const double> scales) {
  if (params.size() != grads.size() || (!scales.empty() && scales.size() != params.size()))
    throw Error(ErrorKind::ShapeMismatch, "Adam block count mismatch");
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (grads[b]->size() != params[b]->size()) {
      throw Error(ErrorKind::ShapeMismatch, "Adam gradient and parameter sizes differ");
    }
    if (!grads[b]->allFinite()) throw Error(ErrorKind::NonFiniteGradient, "non-finite gradient");
  }
  if (m_.empty()) {
    for (auto* p : params) {
      m_.push_back(Eigen::VectorXd::Zero(p->size()));
      v_.push_back(Eigen::VectorXd::Zero(p->size()));
    }
  } else if (m_.size() != params.size()) {
    throw Error(ErrorKind::ShapeMismatch, "Adam block count changed between steps");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t b = 0; b < params.size(); ++b) {
    const Eigen::VectorXd& g = *grads[b];
    m_[b] = beta1_ * m_[b] + (1.0 - beta1_) * g;
    v_[b] = beta2_ * v_[b] + (1.0 - beta2_) * g.cwiseAbs2();
    const double step = scales.empty() ? lr : lr * scales[b];
    params[b]->array() -= step * (m_[b].array() / c1) / ((v_[b].array() / c2).sqrt() + epsilon_);
  }
}

// ---------------------------------------------------------------------------
// Model

Model Model::create(const TrainConfig& cfg, const Mask& mask, LightTable lights) {
  cfg.validate();
  Model m;
  m.encoder = PositionalEncoder(cfg.encoding_levels, true);
  m.frame = CoordinateFrame(mask);
  std::mt19937_64 rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
  m.normal_net = Mlp({m.encoder.width(), cfg.hidden_width, cfg.normal_layers, 3});
  m.normal_net.initialize(rng);
  m.normal_net.bias(cfg.normal_layers - 1)(2) += 1.0;
  m.material_net = Mlp({m.encoder.width(), cfg.hidden_width, cfg.material_layers, 1 + cfg.k});
  m.material_net.initialize(rng);
  m.material_net.bias(cfg.material_layers - 1).tail(cfg.k).array() -= 3.0;
  m.lights = std::move(lights);
  const std::vector<double> r = roughness_ladder(cfg.k, cfg.r_top, cfg.r_bottom);
  m.log_roughness.resize(cfg.k);
  for (int i = 0; i < cfg.k; ++i) m.log_roughness(i) = std::log(-r[i]);
  m.trainable_roughness = cfg.trainable_roughness;
  return m;
}

std::vector<double> Model::roughness() const {
  std::vector<double> r(static_cast<std::size_t>(k()));
  for (int i = 0; i < k(); ++i) r[i] = -std::exp(log_roughness(i));
  return r;
}

SpecularBasisBank Model::bank() const { return SpecularBasisBank(roughness(), trainable_roughness); }

bool ModelGradient::all_finite() const {
  return std::isfinite(loss) && normal_net.allFinite() && material_net.allFinite() &&
         lights.allFinite() && log_roughness.allFinite();
}

ContourMap ContourMap::build(const Mask& mask) {
  ContourMap map;
  map.cols = static_cast<int>(mask.cols());
  for (const Pixel& p : mask_boundary(mask)) {
    const Vec3d d = outward_direction(mask, p);
    if (norm(d) > 0.5) {
      map.entries.emplace_back(static_cast<std::size_t>(p.row) * map.cols + p.col, d);
    }
  }
  return map;
}

const Vec3d* ContourMap::find(const Pixel& p) const {
  const std::size_t key = static_cast<std::size_t>(p.row) * cols + p.col;
  auto it = std::lower_bound(entries.begin(), entries.end(), key,
                             [](const auto& e, std::size_t k) { return e.first < k; });
  if (it == entries.end() || it->first != key) return nullptr;
  return &it->second;
}

namespace {

struct PriorSets {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<ContourTerm> contour;
};

// Right/down 4-neighbour pairs with both ends in the batch, and batch pixels
// on the mask contour.
PriorSets prior_sets(const Batch& batch, const ContourMap& contour) {
  PriorSets sets;
  std::unordered_map<std::size_t, std::size_t> where;
  where.reserve(batch.pixels.size() * 2);
  const std::size_t cols = static_cast<std::size_t>(contour.cols);
  for (std::size_t i = 0; i < batch.pixels.size(); ++i) {
    where[static_cast<std::size_t>(batch.pixels[i].row) * cols + batch.pixels[i].col] = i;
  }
  for (std::size_t i = 0; i < batch.pixels.size(); ++i) {
    const Pixel& p = batch.pixels[i];
    const std::size_t key = static_cast<std::size_t>(p.row) * cols + p.col;
    if (p.col + 1 < contour.cols) {
      if (auto it = where.find(key + 1); it != where.end()) sets.pairs.emplace_back(i, it->second);
    }
    if (auto it = where.find(key + cols); it != where.end()) sets.pairs.emplace_back(i, it->second);
    if (const Vec3d* d = contour.find(p)) sets.contour.push_back({i, *d});
  }
  return sets;
}

struct BatchForward {
  Eigen::MatrixXd normal_raw;    // 3 x P
  Eigen::MatrixXd material_raw;  // (1 + k) x P
  MlpActivations normal_saved;
  MlpActivations material_saved;
};

BatchForward forward_batch(const Model& model, const Batch& batch, bool keep) {
  BatchForward f;
  const Eigen::MatrixXd features = encode_pixels(model.encoder, model.frame, batch.pixels);
  f.normal_raw = model.normal_net.forward(features, keep ? &f.normal_saved : nullptr);
  f.material_raw = model.material_net.forward(features, keep ? &f.material_saved : nullptr);
  return f;
}

// Per-worker scratch and partial sums.
struct Accumulator {
  Tape tape;
  std::vector<double> adjoint;
  double loss = 0.0;
  Eigen::VectorXd lights;
  Eigen::VectorXd log_roughness;
};

template <class R>
Var pixel_objective(Tape& tape, const Vec3<Var>& n, const Var& diffuse, std::span<const Var> spec,
                    std::span<const R> rough, std::span<const Var> light_leaves,
                    const std::vector<double>& observed, std::span<const double> weights,
                    double scale) {
  const Vec3<Var> view{tape.constant(0.0), tape.constant(0.0), tape.constant(1.0)};
  Var total = tape.constant(0.0);
  for (std::size_t j = 0; j < observed.size(); ++j) {
    const Vec3<Var> d{light_leaves[4 * j], light_leaves[4 * j + 1], light_leaves[4 * j + 2]};
    const Vec3<Var> l = normalized(d);
    const Var e = exp(light_leaves[4 * j + 3]);
    const Var m = render_pixel<Var, R>(n, diffuse, spec, l, e, view, rough, weights);
    total = total + abs(m - observed[j]);
  }
  return total * scale;
}

void accumulate_pixel(Accumulator& acc, const Model& model, const PhotometricDataset& ds,
                      const Batch& batch, const BatchForward& fwd, std::size_t p,
                      std::span<const double> weights, double scale, Eigen::MatrixXd& d_normal,
                      Eigen::MatrixXd& d_material) {
  Tape& tape = acc.tape;
  tape.clear();
  const int k = model.k();
  const Pixel px = batch.pixels[p];
  const auto col = static_cast<Eigen::Index>(p);

  const Vec3<Var> raw{tape.variable(fwd.normal_raw(0, col)), tape.variable(fwd.normal_raw(1, col)),
                      tape.variable(fwd.normal_raw(2, col))};
  std::vector<Var> mat_leaves;
  mat_leaves.reserve(static_cast<std::size_t>(k + 1));
  for (int i = 0; i <= k; ++i) mat_leaves.push_back(tape.variable(fwd.material_raw(i, col)));
  std::vector<Var> light_leaves;
  light_leaves.reserve(4 * batch.images.size());
  std::vector<double> observed;
  observed.reserve(batch.images.size());
  for (int j : batch.images) {
    for (int q = 0; q < 4; ++q) light_leaves.push_back(tape.variable(model.lights.params()(4 * j + q)));
    observed.push_back(ds.images[j](px.row, px.col));
  }
  std::vector<Var> rough_leaves;
  if (model.trainable_roughness) {
    for (int i = 0; i < k; ++i) rough_leaves.push_back(tape.variable(model.log_roughness(i)));
  }

  const Vec3<Var> n = normalized(raw);
  const Var diffuse = softplus(mat_leaves[0]);
  std::vector<Var> spec;
  spec.reserve(static_cast<std::size_t>(k));
  for (int i = 1; i <= k; ++i) spec.push_back(softplus(mat_leaves[i]));

  Var objective;
  if (model.trainable_roughness) {
    std::vector<Var> rough;
    rough.reserve(static_cast<std::size_t>(k));
    for (const Var& xi : rough_leaves) rough.push_back(-exp(xi));
    objective = pixel_objective<Var>(tape, n, diffuse, spec, rough, light_leaves, observed, weights, scale);
  } else {
    const std::vector<double> rough = model.roughness();
    objective = pixel_objective<double>(tape, n, diffuse, spec, rough, light_leaves, observed, weights, scale);
  }
  acc.loss += objective.value();

  tape.backward(objective, acc.adjoint);
  d_normal(0, col) = acc.adjoint[raw.x.index()];
  d_normal(1, col) = acc.adjoint[raw.y.index()];
  d_normal(2, col) = acc.adjoint[raw.z.index()];
  for (int i = 0; i <= k; ++i) d_material(i, col) = acc.adjoint[mat_leaves[i].index()];
  for (std::size_t j = 0; j < batch.images.size(); ++j)
    for (int q = 0; q < 4; ++q)
      acc.lights(4 * batch.images[j] + q) += acc.adjoint[light_leaves[4 * j + q].index()];
  for (std::size_t i = 0; i < rough_leaves.size(); ++i) {
    acc.log_roughness(static_cast<Eigen::Index>(i)) += acc.adjoint[rough_leaves[i].index()];
  }
}

void check_batch(const Model& model, const PhotometricDataset& ds, const Batch& batch) {
  if (batch.pixels.empty() || batch.images.empty()) throw Error(ErrorKind::EmptyBatch, "empty batch");
  for (int j : batch.images)
    if (j < 0 || j >= ds.count()) throw Error(ErrorKind::OutOfRange, "batch image index out of range");
  if (model.lights.size() != ds.count()) {
    throw Error(ErrorKind::CountMismatch, "light table and dataset differ in image count");
  }
}

}  // namespace

ModelGradient loss_and_gradient(const Model& model, const PhotometricDataset& ds,
                                const Batch& batch, double alpha, bool priors,
                                const ContourMap& contour, const TrainConfig& cfg, int threads) {
  check_batch(model, ds, batch);
  const int k = model.k();
  const std::size_t P = batch.pixels.size();
  const std::vector<double> weights = psb_weights(alpha, k);
  const double scale = 1.0 / (static_cast<double>(P) * static_cast<double>(batch.images.size()));

  BatchForward fwd = forward_batch(model, batch, true);
  Eigen::MatrixXd d_normal = Eigen::MatrixXd::Zero(3, static_cast<Eigen::Index>(P));
  Eigen::MatrixXd d_material = Eigen::MatrixXd::Zero(k + 1, static_cast<Eigen::Index>(P));

  const int workers = std::max(1, threads);
  std::vector<Accumulator> accs(static_cast<std::size_t>(workers));
  for (auto& a : accs) {
    a.lights = Eigen::VectorXd::Zero(model.lights.params().size());
    a.log_roughness = Eigen::VectorXd::Zero(k);
  }
  parallel_for(P, workers, [&](std::size_t begin, std::size_t end, int w) {
    Accumulator& acc = accs[static_cast<std::size_t>(w)];
    for (std::size_t p = begin; p < end; ++p) {
      accumulate_pixel(acc, model, ds, batch, fwd, p, weights, scale, d_normal, d_material);
    }
  });

  ModelGradient g;
  g.lights = Eigen::VectorXd::Zero(model.lights.params().size());
  g.log_roughness = Eigen::VectorXd::Zero(k);
  for (const auto& a : accs) {
    g.photometric += a.loss;
    g.lights += a.lights;
    g.log_roughness += a.log_roughness;
  }

  if (priors) {
    const PriorSets sets = prior_sets(batch, contour);
    if (!sets.pairs.empty() || !sets.contour.empty()) {
      Tape tape;
      std::vector<Vec3<Var>> raw, normals;
      raw.reserve(P);
      normals.reserve(P);
      for (std::size_t p = 0; p < P; ++p) {
        const auto c = static_cast<Eigen::Index>(p);
        raw.push_back({tape.variable(fwd.normal_raw(0, c)), tape.variable(fwd.normal_raw(1, c)),
                       tape.variable(fwd.normal_raw(2, c))});
        normals.push_back(normalized(raw.back()));
      }
      // Priors are gated by the caller; evaluate them as active.
      const Var prior = early_priors<Var>(normals, sets.pairs, sets.contour, 0, cfg);
      g.prior = prior.value();
      const Gradients grads = backward(tape, prior);
      for (std::size_t p = 0; p < P; ++p) {
        const auto c = static_cast<Eigen::Index>(p);
        d_normal(0, c) += grads[raw[p].x];
        d_normal(1, c) += grads[raw[p].y];
        d_normal(2, c) += grads[raw[p].z];
      }
    }
  }
  g.loss = g.photometric + g.prior;

  g.normal_net = Eigen::VectorXd::Zero(model.normal_net.params().size());
  g.material_net = Eigen::VectorXd::Zero(model.material_net.params().size());
  model.normal_net.backward(fwd.normal_saved, d_normal, g.normal_net);
  model.material_net.backward(fwd.material_saved, d_material, g.material_net);
  if (!model.trainable_roughness) g.log_roughness.setZero();
  return g;
}

double batch_loss(const Model& model, const PhotometricDataset& ds, const Batch& batch,
                  double alpha, bool priors, const ContourMap& contour, const TrainConfig& cfg) {
  check_batch(model, ds, batch);
  const int k = model.k();
  const std::vector<double> weights = psb_weights(alpha, k);
  const std::vector<double> rough = model.roughness();
  const BatchForward fwd = forward_batch(model, batch, false);
  const Vec3d view = kViewDirection;

  std::vector<double> observed, rendered;
  std::vector<Vec3d> normals;
  for (std::size_t p = 0; p < batch.pixels.size(); ++p) {
    const auto c = static_cast<Eigen::Index>(p);
    const Vec3d n = normalized(Vec3d{fwd.normal_raw(0, c), fwd.normal_raw(1, c), fwd.normal_raw(2, c)});
    normals.push_back(n);
    const Material mat = material_from_raw(
        std::span<const double>(fwd.material_raw.col(c).data(), static_cast<std::size_t>(k + 1)));
    for (int j : batch.images) {
      const Vec3d l = normalized(model.lights.raw_direction(j));
      const double e = model.lights.intensity(j);
      rendered.push_back(render_pixel<double, double>(n, mat.diffuse, mat.specular, l, e, view, rough, weights));
      observed.push_back(ds.images[j](batch.pixels[p].row, batch.pixels[p].col));
    }
  }
  double loss = photometric_loss(observed, rendered);
  if (priors) {
    const PriorSets sets = prior_sets(batch, contour);
    loss += early_priors<double>(normals, sets.pairs, sets.contour, 0, cfg);
  }
  return loss;
}

FieldEstimate evaluate_fields(const Model& model, const Mask& mask) {
  FieldEstimate f;
  f.normals = NormalMap(static_cast<int>(mask.rows()), static_cast<int>(mask.cols()), Vec3d{0, 0, 0});
  Material zero;
  zero.specular.assign(static_cast<std::size_t>(model.k()), 0.0);
  f.materials = Grid<Material>(static_cast<int>(mask.rows()), static_cast<int>(mask.cols()), zero);
  const std::vector<Pixel> pixels = masked_pixels(mask);
  constexpr std::size_t kChunk = 4096;
  for (std::size_t begin = 0; begin < pixels.size(); begin += kChunk) {
    const std::size_t end = std::min(pixels.size(), begin + kChunk);
    const std::span<const Pixel> chunk(pixels.data() + begin, end - begin);
    const Eigen::MatrixXd features = encode_pixels(model.encoder, model.frame, chunk);
    const Eigen::MatrixXd nr = model.normal_net.forward(features);
    const Eigen::MatrixXd mr = model.material_net.forward(features);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      const Vec3d raw{nr(0, c), nr(1, c), nr(2, c)};
      // A vanishing network output has no direction; report the view axis.
      f.normals(chunk[i].row, chunk[i].col) =
          norm(raw) >= kMinRawNormal ? normal_from_raw(raw).vec() : kViewDirection;
      f.materials(chunk[i].row, chunk[i].col) =
          material_from_raw(std::span<const double>(mr.col(c).data(), static_cast<std::size_t>(mr.rows())));
    }
  }
  return f;
}

std::vector<Image> render_model(const Model& model, const FieldEstimate& fields, const Mask& mask) {
  const SpecularBasisBank bank = model.bank();
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(model.lights.size()));
  for (int j = 0; j < model.lights.size(); ++j) {
    out.push_back(render_image(fields.normals, fields.materials, model.lights.light(j), bank, bank.k(), mask));
  }
  return out;
}

double full_image_loss(const std::vector<Image>& rendered, const PhotometricDataset& ds) {
  if (rendered.size() != ds.images.size()) throw Error(ErrorKind::CountMismatch, "rendered image count");
  double sum = 0.0;
  const auto count = ds.mask.count();
  if (count == 0) throw Error(ErrorKind::EmptyMask, "mask has no foreground pixels");
  for (std::size_t j = 0; j < rendered.size(); ++j) {
    sum += ds.mask.select((rendered[j] - ds.images[j]).abs(), 0.0).sum();
  }
  return sum / (static_cast<double>(count) * static_cast<double>(rendered.size()));
}

double full_image_psnr(const std::vector<Image>& rendered, const PhotometricDataset& ds) {
  if (rendered.size() != ds.images.size()) throw Error(ErrorKind::CountMismatch, "rendered image count");
  double sse = 0.0;
  for (std::size_t j = 0; j < rendered.size(); ++j) {
    sse += ds.mask.select((rendered[j] - ds.images[j]).square(), 0.0).sum();
  }
  const double mse = sse / (static_cast<double>(ds.mask.count()) * static_cast<double>(rendered.size()));
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

// ---------------------------------------------------------------------------
// Reconstruction

namespace {

void fill_light_metrics(EpochLog& log, const LightTable& est, const PhotometricDataset& ds) {
  if (!ds.gt_lights) return;
  log.dir_mae = light_direction_error(est, *ds.gt_lights);
  std::vector<double> e, g;
  for (int j = 0; j < est.size(); ++j) {
    e.push_back(est.intensity(j));
    g.push_back(ds.gt_lights->intensity(j));
  }
  log.int_err = scale_invariant_intensity_error(e, g);
}

}  // namespace

Solution reconstruct(const PhotometricDataset& dataset, const TrainConfig& cfg,
                     const EpochCallback& on_epoch) {
  cfg.validate();
  if (dataset.mask.count() == 0) throw Error(ErrorKind::EmptyMask, "mask has no foreground pixels");
  return reconstruct(dataset, cfg, light_init(cfg.light_init, dataset, cfg.seed), on_epoch);
}

Solution reconstruct(const PhotometricDataset& dataset, const TrainConfig& cfg,
                     LightTable initial_lights, const EpochCallback& on_epoch) {
  cfg.validate();
  dataset.validate();
  if (dataset.count() < 4) throw Error(ErrorKind::TooFewImages, "need at least 4 images");
  if (dataset.mask.count() == 0) throw Error(ErrorKind::EmptyMask, "mask has no foreground pixels");
  if (initial_lights.size() != dataset.count()) {
    throw Error(ErrorKind::CountMismatch, "initial light count differs from image count");
  }

  Solution sol;
  sol.model = Model::create(cfg, dataset.mask, std::move(initial_lights));
  Model& model = sol.model;
  const int threads = resolve_threads(cfg.threads);
  const std::vector<Pixel> pixels = masked_pixels(dataset.mask);
  const ContourMap contour = ContourMap::build(dataset.mask);

  {
    const FieldEstimate f0 = evaluate_fields(model, dataset.mask);
    sol.initial_full_loss = full_image_loss(render_model(model, f0, dataset.mask), dataset);
    if (dataset.gt_normals) {
      sol.initial_normal_mae = mean_angular_error(f0.normals, *dataset.gt_normals, dataset.mask);
    }
  }

  const int n = dataset.count();
  const int per_batch = std::min(cfg.images_per_iteration, n);
  const int iterations = (n + per_batch - 1) / per_batch;
  const std::size_t pixel_count = std::min<std::size_t>(pixels.size(), static_cast<std::size_t>(cfg.pixels_per_iteration));

  std::mt19937_64 rng(cfg.seed);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::vector<std::size_t> pixel_index(pixels.size());
  std::iota(pixel_index.begin(), pixel_index.end(), 0);
  AdamState adam;

  Batch batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const double alpha = alpha_schedule(epoch, cfg);
    const bool priors = early_priors_active(epoch, cfg);

    EpochLog log;
    log.epoch = epoch;
    log.alpha = alpha;
    double loss_sum = 0.0;
    int done = 0;
    for (int it = 0; it < iterations; ++it) {
      batch.images.clear();
      for (int q = 0; static_cast<int>(batch.images.size()) < per_batch; ++q) {
        const int j = order[static_cast<std::size_t>((it * per_batch + q) % n)];
        if (std::find(batch.images.begin(), batch.images.end(), j) == batch.images.end()) {
          batch.images.push_back(j);
        }
      }
      // Partial Fisher-Yates: the first pixel_count entries become the sample.
      for (std::size_t i = 0; i < pixel_count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pixel_index.size() - 1);
        std::swap(pixel_index[i], pixel_index[pick(rng)]);
      }
      batch.pixels.clear();
      for (std::size_t i = 0; i < pixel_count; ++i) batch.pixels.push_back(pixels[pixel_index[i]]);

      ModelGradient g;
      try {
        g = loss_and_gradient(model, dataset, batch, alpha, priors, contour, cfg, threads);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::DegenerateVector) throw;
        ++log.skipped;
        continue;
      }
      if (!g.all_finite()) {
        ++log.skipped;
        continue;
      }
      if (!cfg.train_lights) g.lights.setZero();
      std::vector<Eigen::VectorXd*> params{&model.normal_net.params(), &model.material_net.params(),
                                           &model.lights.params(), &model.log_roughness};
      std::vector<const Eigen::VectorXd*> grads{&g.normal_net, &g.material_net, &g.lights, &g.log_roughness};
      const std::array<double, 4> scales{1.0, 1.0, cfg.light_lr_scale, 1.0};
      adam_step(adam, params, grads, cfg.learning_rate, scales);
      model.lights.guard();
      loss_sum += g.loss;
      ++done;
    }
    sol.skipped_iterations += log.skipped;
    log.loss = done > 0 ? loss_sum / done : 0.0;
    fill_light_metrics(log, model.lights, dataset);
    const bool last = epoch + 1 == cfg.epochs;
    if (dataset.gt_normals && (last || (epoch + 1) % cfg.metrics_interval == 0)) {
      const FieldEstimate f = evaluate_fields(model, dataset.mask);
      log.normal_mae = mean_angular_error(f.normals, *dataset.gt_normals, dataset.mask);
    }
    sol.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }

  sol.fields = evaluate_fields(model, dataset.mask);
  const std::vector<Image> rendered = render_model(model, sol.fields, dataset.mask);
  sol.final_full_loss = full_image_loss(rendered, dataset);
  sol.final_psnr = full_image_psnr(rendered, dataset);
  sol.lights = model.lights;
  sol.bank = model.bank();
  return sol;
}

}  // namespace psinvert
