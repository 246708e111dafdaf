#include "psinvert/field.hpp"

#include <cmath>
#include <numbers>

#include "psinvert/data.hpp"

namespace psinvert {

// ---------------------------------------------------------------------------
// Lights

LightTable::LightTable(int count) : params_(Eigen::VectorXd::Zero(kStride * count)) {
  for (int j = 0; j < count; ++j) params_(kStride * j + 2) = 1.0;
}

LightTable LightTable::from_lights(const std::vector<Light>& lights) {
  LightTable t(static_cast<int>(lights.size()));
  for (int j = 0; j < t.size(); ++j) {
    t.set_direction(j, lights[j].direction);
    t.params_(kStride * j + 3) = lights[j].log_intensity;
  }
  return t;
}

Vec3d LightTable::raw_direction(int j) const {
  return {params_(kStride * j), params_(kStride * j + 1), params_(kStride * j + 2)};
}

UnitVec3 LightTable::direction(int j) const { return normalize(raw_direction(j)); }

void LightTable::set_direction(int j, const Vec3d& d) {
  const Vec3d u = normalize(d);
  params_(kStride * j) = u.x;
  params_(kStride * j + 1) = u.y;
  params_(kStride * j + 2) = u.z;
}

void LightTable::set_intensity(int j, double e) {
  if (!(e > 0.0)) throw Error(ErrorKind::OutOfRange, "light intensity must be positive");
  params_(kStride * j + 3) = std::log(e);
}

int LightTable::guard() {
  int touched = 0;
  for (int j = 0; j < size(); ++j) {
    const Vec3d d = raw_direction(j);
    const double len = norm(d);
    if (std::isfinite(len) && len >= kMinRawNorm) continue;
    ++touched;
    if (std::isfinite(len) && len > 0.0) {
      set_direction(j, d);
    } else {
      set_direction(j, kViewDirection);
    }
  }
  return touched;
}

// ---------------------------------------------------------------------------
// Positional encoding

PositionalEncoder::PositionalEncoder(int levels, bool include_raw)
    : levels_(levels), include_raw_(include_raw) {
  if (levels < 1) throw Error(ErrorKind::OutOfRange, "encoder needs at least one level");
}

Eigen::VectorXd PositionalEncoder::encode(double x, double y) const {
  Eigen::VectorXd out(width());
  encode_into(x, y, out);
  return out;
}

void PositionalEncoder::encode_into(double x, double y, Eigen::Ref<Eigen::VectorXd> out) const {
  constexpr double kSlack = 1e-9;
  if (!(std::abs(x) <= 1.0 + kSlack) || !(std::abs(y) <= 1.0 + kSlack)) {
    throw Error(ErrorKind::OutOfRange, "encoder inputs must lie in [-1, 1]");
  }
  if (out.size() != width()) throw Error(ErrorKind::ShapeMismatch, "encoder output has wrong size");
  Eigen::Index k = 0;
  if (include_raw_) {
    out(k++) = x;
    out(k++) = y;
  }
  for (double t : {x, y}) {
    double freq = std::numbers::pi;
    for (int j = 0; j < levels_; ++j, freq *= 2.0) {
      out(k++) = std::sin(freq * t);
      out(k++) = std::cos(freq * t);
    }
  }
}

// ---------------------------------------------------------------------------
// MLP

std::int64_t MlpSpec::parameter_count() const {
  std::int64_t n = 0;
  int in = input;
  for (int l = 0; l < layers; ++l) {
    const int out = l + 1 == layers ? output : hidden;
    n += static_cast<std::int64_t>(out) * in + out;
    in = out;
  }
  return n;
}

Mlp::Mlp(const MlpSpec& spec) : spec_(spec) {
  if (spec.layers < 1 || spec.input < 1 || spec.output < 1 || (spec.layers > 1 && spec.hidden < 1)) {
    throw Error(ErrorKind::ShapeMismatch, "invalid MLP shape");
  }
  params_ = Eigen::VectorXd::Zero(spec.parameter_count());
  std::int64_t off = 0;
  int in = spec.input;
  for (int l = 0; l < spec.layers; ++l) {
    const int out = l + 1 == spec.layers ? spec.output : spec.hidden;
    offsets_.push_back(off);
    off += static_cast<std::int64_t>(out) * in + out;
    in = out;
  }
}

namespace {

int layer_in(const MlpSpec& s, int l) { return l == 0 ? s.input : s.hidden; }
int layer_out(const MlpSpec& s, int l) { return l + 1 == s.layers ? s.output : s.hidden; }

}  // namespace

std::int64_t Mlp::bias_offset(int layer) const {
  return offsets_[layer] + static_cast<std::int64_t>(layer_out(spec_, layer)) * layer_in(spec_, layer);
}

Eigen::Map<Eigen::MatrixXd> Mlp::weight(int l) {
  return {params_.data() + offsets_[l], layer_out(spec_, l), layer_in(spec_, l)};
}
Eigen::Map<const Eigen::MatrixXd> Mlp::weight(int l) const {
  return {params_.data() + offsets_[l], layer_out(spec_, l), layer_in(spec_, l)};
}
Eigen::Map<Eigen::VectorXd> Mlp::bias(int l) {
  return {params_.data() + bias_offset(l), layer_out(spec_, l)};
}
Eigen::Map<const Eigen::VectorXd> Mlp::bias(int l) const {
  return {params_.data() + bias_offset(l), layer_out(spec_, l)};
}

void Mlp::initialize(std::mt19937_64& rng) {
  for (int l = 0; l < spec_.layers; ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer_in(spec_, l)));
    std::uniform_real_distribution<double> u(-bound, bound);
    auto w = weight(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
    auto b = bias(l);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = u(rng);
  }
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& features, MlpActivations* saved) const {
  if (features.rows() != spec_.input) {
    throw Error(ErrorKind::ShapeMismatch, "MLP input width mismatch");
  }
  if (saved) saved->inputs.resize(static_cast<std::size_t>(spec_.layers));
  Eigen::MatrixXd a = features;
  for (int l = 0; l < spec_.layers; ++l) {
    Eigen::MatrixXd z = weight(l) * a;
    z.colwise() += bias(l);
    if (saved) saved->inputs[l] = std::move(a);
    if (l + 1 == spec_.layers) return z;
    a = z.cwiseMax(0.0);
  }
  return a;
}

void Mlp::backward(const MlpActivations& saved, const Eigen::MatrixXd& output_grad,
                   Eigen::VectorXd& grad) const {
  if (grad.size() != params_.size()) grad = Eigen::VectorXd::Zero(params_.size());
  if (saved.inputs.size() != static_cast<std::size_t>(spec_.layers) ||
      output_grad.rows() != spec_.output || output_grad.cols() != saved.inputs[0].cols()) {
    throw Error(ErrorKind::ShapeMismatch, "MLP backward shapes do not match the forward pass");
  }
  Eigen::MatrixXd dz = output_grad;
  for (int l = spec_.layers - 1; l >= 0; --l) {
    const Eigen::MatrixXd& in = saved.inputs[l];
    Eigen::Map<Eigen::MatrixXd> gw(grad.data() + offsets_[l], layer_out(spec_, l), layer_in(spec_, l));
    Eigen::Map<Eigen::VectorXd> gb(grad.data() + bias_offset(l), layer_out(spec_, l));
    gw.noalias() += dz * in.transpose();
    gb += dz.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd da = weight(l).transpose() * dz;
    // Rectifier derivative is 0 at exactly 0.
    dz = (in.array() > 0.0).select(da, 0.0);
  }
}

template <class F>
std::vector<Var> mlp_forward(const MlpSpec& spec, std::span<const Var> params,
                             std::span<const F> features) {
  if (static_cast<int>(features.size()) != spec.input ||
      static_cast<std::int64_t>(params.size()) != spec.parameter_count()) {
    throw Error(ErrorKind::ShapeMismatch, "MLP parameter or feature count mismatch");
  }
  Tape& tape = *const_cast<Tape*>(params[0].tape());
  std::vector<Var> a;
  for (const F& f : features) {
    if constexpr (std::is_same_v<F, Var>) {
      a.push_back(f);
    } else {
      a.push_back(tape.constant(f));
    }
  }
  std::size_t off = 0;
  for (int l = 0; l < spec.layers; ++l) {
    const int in = layer_in(spec, l);
    const int out = layer_out(spec, l);
    const std::size_t bias_off = off + static_cast<std::size_t>(out) * in;
    std::vector<Var> z;
    z.reserve(static_cast<std::size_t>(out));
    for (int j = 0; j < out; ++j) {
      Var acc = params[bias_off + j];
      for (int i = 0; i < in; ++i) acc = acc + params[off + j + static_cast<std::size_t>(i) * out] * a[i];
      z.push_back(l + 1 == spec.layers ? acc : relu(acc));
    }
    a = std::move(z);
    off = bias_off + out;
  }
  return a;
}

template std::vector<Var> mlp_forward<double>(const MlpSpec&, std::span<const Var>,
                                              std::span<const double>);
template std::vector<Var> mlp_forward<Var>(const MlpSpec&, std::span<const Var>,
                                           std::span<const Var>);

Eigen::VectorXd mlp_forward(const Mlp& mlp, const Eigen::VectorXd& features) {
  return mlp.forward(features);
}

// ---------------------------------------------------------------------------
// Readouts

UnitVec3 normal_from_raw(const Vec3d& raw) {
  if (!(norm(raw) >= kMinRawNormal)) {
    throw Error(ErrorKind::DegenerateVector, "normal network output has vanishing norm");
  }
  return normalize(raw);
}

Material material_from_raw(std::span<const double> raw) {
  Material m;
  m.diffuse = softplus(raw[0]);
  m.specular.reserve(raw.size() - 1);
  for (std::size_t i = 1; i < raw.size(); ++i) m.specular.push_back(softplus(raw[i]));
  return m;
}

UnitVec3 normal_at(const Mlp& normal_net, const PositionalEncoder& enc, double x, double y) {
  const Eigen::VectorXd out = normal_net.forward(enc.encode(x, y));
  if (out.size() != 3) throw Error(ErrorKind::ShapeMismatch, "normal network must output 3 values");
  return normal_from_raw({out(0), out(1), out(2)});
}

Material material_at(const Mlp& material_net, const PositionalEncoder& enc, double x, double y) {
  const Eigen::VectorXd out = material_net.forward(enc.encode(x, y));
  return material_from_raw(std::span<const double>(out.data(), static_cast<std::size_t>(out.size())));
}

CoordinateFrame::CoordinateFrame(const Mask& mask) {
  int r0 = mask.rows(), r1 = -1, c0 = mask.cols(), c1 = -1;
  for (int r = 0; r < mask.rows(); ++r)
    for (int c = 0; c < mask.cols(); ++c)
      if (mask(r, c)) {
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
      }
  if (r1 < 0) throw Error(ErrorKind::EmptyMask, "mask has no foreground pixels");
  center_row_ = (r0 + r1 + 1) / 2.0;
  center_col_ = (c0 + c1 + 1) / 2.0;
  half_extent_ = std::max(r1 - r0 + 1, c1 - c0 + 1) / 2.0;
}

Eigen::MatrixXd encode_pixels(const PositionalEncoder& enc, const CoordinateFrame& frame,
                              std::span<const Pixel> pixels) {
  Eigen::MatrixXd out(enc.width(), static_cast<Eigen::Index>(pixels.size()));
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    enc.encode_into(frame.x(pixels[i].col), frame.y(pixels[i].row), out.col(static_cast<Eigen::Index>(i)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Light initialization

LightInit LightInit::parse(const std::string& text) {
  const auto colon = text.find(':');
  const std::string head = text.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
  LightInit init;
  auto degrees = [&]() {
    try {
      std::size_t used = 0;
      const double v = std::stod(arg, &used);
      if (used != arg.size() || !(v >= 0.0)) throw std::invalid_argument(arg);
      return v;
    } catch (const std::exception&) {
      throw Error(ErrorKind::BadConfig, "light init '" + text + "' needs a non-negative angle");
    }
  };
  if (head == "view-jitter") {
    init.kind = Kind::ViewJitter;
    init.sigma_deg = arg.empty() ? 0.0 : degrees();
  } else if (head == "gt-noise") {
    init.kind = Kind::GtNoise;
    init.sigma_deg = arg.empty() ? 0.0 : degrees();
  } else if (head == "file" && !arg.empty()) {
    init.kind = Kind::FromFile;
    init.path = arg;
  } else {
    throw Error(ErrorKind::BadConfig, "unknown light init '" + text + "'");
  }
  return init;
}

std::string LightInit::to_string() const {
  auto deg = [this] {
    std::string s = std::to_string(sigma_deg);
    s.erase(s.find_last_not_of('0') + 1);
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
  };
  switch (kind) {
    case Kind::ViewJitter: return "view-jitter:" + deg();
    case Kind::GtNoise: return "gt-noise:" + deg();
    case Kind::FromFile: return "file:" + path;
  }
  return {};
}

LightTable light_init(const LightInit& strategy, const PhotometricDataset& dataset,
                      std::uint64_t seed) {
  const int n = dataset.count();
  switch (strategy.kind) {
    case LightInit::Kind::ViewJitter: {
      LightTable view(n);
      return perturb_lights(view, strategy.sigma_deg, seed);
    }
    case LightInit::Kind::GtNoise:
      if (!dataset.gt_lights) {
        throw Error(ErrorKind::MissingGroundTruth, "gt-noise light init needs ground-truth lights");
      }
      return perturb_lights(*dataset.gt_lights, strategy.sigma_deg, seed);
    case LightInit::Kind::FromFile:
      return read_lights_file(strategy.path, n);
  }
  throw Error(ErrorKind::BadConfig, "unknown light init strategy");
}

}  // namespace psinvert
