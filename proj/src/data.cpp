#include "psinvert/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace psinvert {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Dataset

void PhotometricDataset::validate() const {
  if (names.size() != images.size()) {
    throw Error(ErrorKind::CountMismatch, "dataset names and images differ in count");
  }
  for (const Image& img : images) {
    require_same_shape(img, mask, "dataset images and mask differ in size");
    if (!img.allFinite() || (img < 0.0).any()) {
      throw Error(ErrorKind::FileFormat, "dataset images must be finite and non-negative");
    }
  }
  if (gt_lights && gt_lights->size() != count()) {
    throw Error(ErrorKind::CountMismatch, "ground-truth light count differs from image count");
  }
  if (gt_normals) require_same_shape(*gt_normals, mask, "ground-truth normals and mask differ in size");
}

// ---------------------------------------------------------------------------
// PFM

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

float byteswap_float(float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  bits = ((bits & 0xFF) << 24) | ((bits & 0xFF00) << 8) | ((bits >> 8) & 0xFF00) | (bits >> 24);
  std::memcpy(&v, &bits, 4);
  return v;
}

// Reads one whitespace-delimited header token; PFM headers end each field
// with a single whitespace byte before the payload.
std::string header_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF && std::isspace(ch)) {
  }
  while (ch != EOF && !std::isspace(ch)) {
    tok.push_back(static_cast<char>(ch));
    ch = in.get();
  }
  return tok;
}

}  // namespace

void write_pfm(const PfmImage& image, const fs::path& path) {
  if (image.channels != 1 && image.channels != 3) {
    throw Error(ErrorKind::FileFormat, "PFM supports 1 or 3 channels");
  }
  if (image.width <= 0 || image.height <= 0 ||
      image.data.size() != static_cast<std::size_t>(image.width) * image.height * image.channels) {
    throw Error(ErrorKind::FileFormat, "PFM dimensions do not match its data");
  }
  for (float v : image.data)
    if (!std::isfinite(v)) throw Error(ErrorKind::FileFormat, "PFM data must be finite");

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot open " + path.string() + " for writing");
  out << (image.channels == 3 ? "PF" : "Pf") << '\n'
      << image.width << ' ' << image.height << '\n'
      << "-1.0\n";
  const std::size_t row_len = static_cast<std::size_t>(image.width) * image.channels;
  std::vector<float> row(row_len);
  for (int r = image.height - 1; r >= 0; --r) {
    std::copy_n(image.data.begin() + static_cast<std::ptrdiff_t>(r * row_len), row_len, row.begin());
    if constexpr (std::endian::native == std::endian::big) {
      for (float& v : row) v = byteswap_float(v);
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row_len * 4));
  }
  if (!out) throw Error(ErrorKind::FileFormat, "failed writing " + path.string());
}

PfmImage read_pfm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());
  PfmImage img;
  const std::string magic = header_token(in);
  if (magic == "Pf") {
    img.channels = 1;
  } else if (magic == "PF") {
    img.channels = 3;
  } else {
    throw Error(ErrorKind::FileFormat, path.string() + ": bad PFM magic '" + magic + "'");
  }
  double scale = 0.0;
  try {
    img.width = std::stoi(header_token(in));
    img.height = std::stoi(header_token(in));
    scale = std::stod(header_token(in));
  } catch (const std::exception&) {
    throw Error(ErrorKind::FileFormat, path.string() + ": malformed PFM header");
  }
  if (img.width <= 0 || img.height <= 0 || img.width > (1 << 16) || img.height > (1 << 16) ||
      scale == 0.0 || !std::isfinite(scale)) {
    throw Error(ErrorKind::FileFormat, path.string() + ": bad PFM dimensions or scale");
  }
  const bool little = scale < 0.0;
  const std::size_t row_len = static_cast<std::size_t>(img.width) * img.channels;
  img.data.resize(row_len * img.height);
  for (int r = img.height - 1; r >= 0; --r) {
    float* dst = img.data.data() + static_cast<std::size_t>(r) * row_len;
    if (!in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(row_len * 4))) {
      throw Error(ErrorKind::FileFormat, path.string() + ": truncated PFM payload");
    }
    if (little != (std::endian::native == std::endian::little)) {
      for (std::size_t i = 0; i < row_len; ++i) dst[i] = byteswap_float(dst[i]);
    }
  }
  return img;
}

PfmImage to_pfm(const Image& image) {
  PfmImage p;
  p.width = static_cast<int>(image.cols());
  p.height = static_cast<int>(image.rows());
  p.channels = 1;
  p.data.resize(static_cast<std::size_t>(p.width) * p.height);
  for (int r = 0; r < p.height; ++r)
    for (int c = 0; c < p.width; ++c) p.at(r, c) = static_cast<float>(image(r, c));
  return p;
}

PfmImage to_pfm(const NormalMap& normals) {
  PfmImage p;
  p.width = normals.cols();
  p.height = normals.rows();
  p.channels = 3;
  p.data.resize(static_cast<std::size_t>(p.width) * p.height * 3);
  for (int r = 0; r < p.height; ++r)
    for (int c = 0; c < p.width; ++c) {
      const Vec3d& n = normals(r, c);
      p.at(r, c, 0) = static_cast<float>(n.x);
      p.at(r, c, 1) = static_cast<float>(n.y);
      p.at(r, c, 2) = static_cast<float>(n.z);
    }
  return p;
}

Image to_image(const PfmImage& pfm) {
  Image img(pfm.height, pfm.width);
  for (int r = 0; r < pfm.height; ++r)
    for (int c = 0; c < pfm.width; ++c) {
      if (pfm.channels == 1) {
        img(r, c) = pfm.at(r, c);
      } else {
        img(r, c) = 0.2126 * pfm.at(r, c, 0) + 0.7152 * pfm.at(r, c, 1) + 0.0722 * pfm.at(r, c, 2);
      }
    }
  return img;
}

NormalMap to_normal_map(const PfmImage& pfm) {
  if (pfm.channels != 3) throw Error(ErrorKind::FileFormat, "normal maps must have 3 channels");
  NormalMap n(pfm.height, pfm.width);
  for (int r = 0; r < pfm.height; ++r)
    for (int c = 0; c < pfm.width; ++c) n(r, c) = {pfm.at(r, c, 0), pfm.at(r, c, 1), pfm.at(r, c, 2)};
  return n;
}

// ---------------------------------------------------------------------------
// Dataset directories

namespace {

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, "missing " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    lines.push_back(line.substr(b, e - b + 1));
  }
  return lines;
}

std::vector<double> parse_numbers(const std::string& line, const fs::path& path) {
  std::istringstream ss(line);
  std::vector<double> v;
  std::string tok;
  while (ss >> tok) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw Error(ErrorKind::FileFormat, path.string() + ": not a number '" + tok + "'");
    }
  }
  return v;
}

fs::path image_path(const fs::path& dir, const std::string& name) {
  if (name.size() > 4 && name.ends_with(".pfm")) return dir / name;
  return dir / (name + ".pfm");
}

}  // namespace

LightTable read_lights_file(const fs::path& path, int expected) {
  const auto lines = read_lines(path);
  if (expected >= 0 && static_cast<int>(lines.size()) != expected) {
    throw Error(ErrorKind::CountMismatch, path.string() + ": expected " + std::to_string(expected) +
                                              " lights, found " + std::to_string(lines.size()));
  }
  LightTable t(static_cast<int>(lines.size()));
  for (std::size_t j = 0; j < lines.size(); ++j) {
    const auto v = parse_numbers(lines[j], path);
    if (v.size() != 3 && v.size() != 4) {
      throw Error(ErrorKind::FileFormat, path.string() + ": light lines need 3 or 4 values");
    }
    const Vec3d d{v[0], v[1], v[2]};
    if (!is_finite(d) || std::abs(norm(d) - 1.0) > 1e-3) {
      throw Error(ErrorKind::FileFormat, path.string() + ": light direction is not unit length");
    }
    t.set_direction(static_cast<int>(j), d);
    if (v.size() == 4) t.set_intensity(static_cast<int>(j), v[3]);
  }
  return t;
}

PhotometricDataset load_dataset(const fs::path& dir) {
  PhotometricDataset ds;
  ds.names = read_lines(dir / "filenames.txt");
  if (ds.names.empty()) throw Error(ErrorKind::FileFormat, "filenames.txt lists no images");

  const fs::path mask_path = dir / "mask.pfm";
  if (!fs::exists(mask_path)) throw Error(ErrorKind::MissingFile, "missing " + mask_path.string());
  const Image mask_img = to_image(read_pfm(mask_path));
  ds.mask = mask_img > 0.5;

  for (const auto& name : ds.names) {
    const fs::path p = image_path(dir, name);
    if (!fs::exists(p)) throw Error(ErrorKind::MissingFile, "missing " + p.string());
    ds.images.push_back(to_image(read_pfm(p)));
  }

  const int n = ds.count();
  const fs::path dirs_path = dir / "light_directions.txt";
  if (fs::exists(dirs_path)) {
    LightTable lights = read_lights_file(dirs_path, n);
    const fs::path int_path = dir / "light_intensities.txt";
    if (fs::exists(int_path)) {
      const auto lines = read_lines(int_path);
      if (static_cast<int>(lines.size()) != n) {
        throw Error(ErrorKind::CountMismatch, int_path.string() + ": line count differs from image count");
      }
      for (int j = 0; j < n; ++j) {
        const auto v = parse_numbers(lines[j], int_path);
        if (v.size() != 1 && v.size() != 3) {
          throw Error(ErrorKind::FileFormat, int_path.string() + ": intensity lines need 1 or 3 values");
        }
        double e = 0.0;
        for (double x : v) e += x;
        e /= static_cast<double>(v.size());
        if (!(e > 0.0)) throw Error(ErrorKind::FileFormat, int_path.string() + ": intensities must be positive");
        lights.set_intensity(j, e);
      }
    }
    ds.gt_lights = std::move(lights);
  }

  const fs::path normal_path = dir / "normal_gt.pfm";
  if (fs::exists(normal_path)) {
    NormalMap normals = to_normal_map(read_pfm(normal_path));
    require_same_shape(normals, ds.mask, "normal_gt.pfm and mask differ in size");
    for (int r = 0; r < normals.rows(); ++r)
      for (int c = 0; c < normals.cols(); ++c) {
        if (!ds.mask(r, c)) continue;
        if (norm(normals(r, c)) <= kDegenerateNorm) {
          throw Error(ErrorKind::FileFormat, "normal_gt.pfm has a zero normal inside the mask");
        }
        normals(r, c) = normalized(normals(r, c));
      }
    ds.gt_normals = std::move(normals);
  }
  ds.validate();
  return ds;
}

void save_dataset(const PhotometricDataset& ds, const fs::path& dir) {
  ds.validate();
  fs::create_directories(dir);
  {
    std::ofstream names(dir / "filenames.txt");
    for (const auto& n : ds.names) names << n << '\n';
  }
  for (int j = 0; j < ds.count(); ++j) write_pfm(to_pfm(ds.images[j]), image_path(dir, ds.names[j]));
  write_pfm(to_pfm(Image(ds.mask.cast<double>())), dir / "mask.pfm");
  if (ds.gt_lights) {
    std::ofstream dirs(dir / "light_directions.txt");
    std::ofstream ints(dir / "light_intensities.txt");
    for (int j = 0; j < ds.gt_lights->size(); ++j) {
      const UnitVec3 l = ds.gt_lights->direction(j);
      dirs << format_double(l.x()) << ' ' << format_double(l.y()) << ' ' << format_double(l.z()) << '\n';
      ints << format_double(ds.gt_lights->intensity(j)) << '\n';
    }
  }
  if (ds.gt_normals) write_pfm(to_pfm(*ds.gt_normals), dir / "normal_gt.pfm");
}

// ---------------------------------------------------------------------------
// Synthetic scenes

SynthSceneSpec::Shape parse_shape(const std::string& text) {
  if (text == "sphere") return SynthSceneSpec::Shape::Sphere;
  if (text == "heightfield") return SynthSceneSpec::Shape::Heightfield;
  throw Error(ErrorKind::BadSpec, "unknown shape '" + text + "'");
}

SynthSceneSpec::Layout parse_layout(const std::string& text) {
  if (text == "uniform") return SynthSceneSpec::Layout::Uniform;
  if (text == "two-region") return SynthSceneSpec::Layout::TwoRegion;
  if (text == "textured-noise") return SynthSceneSpec::Layout::TexturedNoise;
  throw Error(ErrorKind::BadSpec, "unknown material layout '" + text + "'");
}

namespace {

void check_spec(const SynthSceneSpec& s) {
  auto bad = [](const std::string& why) { throw Error(ErrorKind::BadSpec, why); };
  if (s.height < 1 || s.width < 1) bad("resolution must be positive");
  if (s.shape == SynthSceneSpec::Shape::Sphere &&
      !(s.radius > 0.0 && 2.0 * s.radius <= std::min(s.height, s.width))) {
    bad("sphere radius must fit inside the image");
  }
  if (s.shape == SynthSceneSpec::Shape::Heightfield &&
      !(std::isfinite(s.bump_amplitude) && std::isfinite(s.bump_frequency))) {
    bad("heightfield parameters must be finite");
  }
  if (s.k < 2 || !(s.r_top > s.r_bottom && s.r_bottom > 0.0)) bad("invalid specular ladder");
  if (static_cast<int>(s.specular_a.size()) > s.k || static_cast<int>(s.specular_b.size()) > s.k) {
    bad("specular albedo list longer than k");
  }
  for (double v : s.specular_a)
    if (!(v >= 0.0)) bad("specular albedos must be non-negative");
  for (double v : s.specular_b)
    if (!(v >= 0.0)) bad("specular albedos must be non-negative");
  if (!(s.diffuse_a >= 0.0 && s.diffuse_b >= 0.0)) bad("diffuse albedos must be non-negative");
  if (s.light_directions.empty()) {
    if (s.light_count < 1) bad("need at least one light");
    if (!(s.cap_deg > 0.0 && s.cap_deg < 90.0)) bad("light cap must lie in (0, 90) degrees");
  }
  for (const Vec3d& d : s.light_directions) {
    if (!is_finite(d) || !(d.z > 0.0) || norm(d) <= kDegenerateNorm) bad("light directions must have positive z");
  }
  if (!(s.intensity_jitter >= 0.0 && s.intensity_jitter < 1.0)) bad("intensity jitter must lie in [0, 1)");
  if (!(s.noise_sigma >= 0.0)) bad("noise sigma must be non-negative");
}

std::vector<double> padded(const std::vector<double>& v, int k) {
  std::vector<double> out(static_cast<std::size_t>(k), 0.0);
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

}  // namespace

SyntheticScene synth_scene(const SynthSceneSpec& spec) {
  check_spec(spec);
  std::mt19937_64 rng(spec.seed);
  const int h = spec.height, w = spec.width;
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;

  SyntheticScene scene;
  scene.bank = SpecularBasisBank::ladder(spec.k, spec.r_top, spec.r_bottom);
  PhotometricDataset& ds = scene.dataset;
  ds.mask = Mask::Constant(h, w, false);
  NormalMap normals(h, w);

  if (spec.shape == SynthSceneSpec::Shape::Sphere) {
    const double R = spec.radius;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const double dx = (c - cx) / R, dy = (cy - r) / R;
        const double rho2 = dx * dx + dy * dy;
        if (rho2 >= 1.0) continue;
        ds.mask(r, c) = true;
        normals(r, c) = normalized(Vec3d{dx, dy, std::sqrt(1.0 - rho2)});
      }
  } else {
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    const double p1 = phase(rng), p2 = phase(rng);
    const double omega = 2.0 * std::numbers::pi * spec.bump_frequency / w;
    const double A = spec.bump_amplitude;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const double x = c - cx, y = cy - r;
        const double zx = A * omega * std::cos(omega * x + p1) * std::cos(omega * y + p2);
        const double zy = -A * omega * std::sin(omega * x + p1) * std::sin(omega * y + p2);
        ds.mask(r, c) = true;
        normals(r, c) = normalized(Vec3d{-zx, -zy, 1.0});
      }
  }

  // Materials.
  const std::vector<double> spec_a = padded(spec.specular_a, spec.k);
  const std::vector<double> spec_b = padded(spec.specular_b, spec.k);
  auto blend = [&](double t) {
    Material m;
    m.diffuse = (1.0 - t) * spec.diffuse_a + t * spec.diffuse_b;
    m.specular.resize(static_cast<std::size_t>(spec.k));
    for (int i = 0; i < spec.k; ++i) m.specular[i] = (1.0 - t) * spec_a[i] + t * spec_b[i];
    return m;
  };
  scene.materials = Grid<Material>(h, w, blend(0.0));
  if (spec.layout != SynthSceneSpec::Layout::Uniform) {
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> freq(1.0, 3.0);
    const double f1 = freq(rng), f2 = freq(rng), q1 = phase(rng), q2 = phase(rng);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        double t = 0.0;
        if (spec.layout == SynthSceneSpec::Layout::TwoRegion) {
          t = c < w / 2 ? 0.0 : 1.0;
        } else {
          const double u = 2.0 * std::numbers::pi * c / w, v = 2.0 * std::numbers::pi * r / h;
          t = 0.5 + 0.5 * std::sin(f1 * u + q1) * std::cos(f2 * v + q2);
        }
        scene.materials(r, c) = blend(t);
      }
  }

  // Lights: golden-angle spiral over the cap unless given explicitly.
  std::vector<Vec3d> dirs = spec.light_directions;
  if (dirs.empty()) {
    const double cap = spec.cap_deg * std::numbers::pi / 180.0;
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int j = 0; j < spec.light_count; ++j) {
      const double theta = cap * std::sqrt((j + 0.5) / spec.light_count);
      const double phi = golden * j;
      dirs.push_back({std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)});
    }
  }
  std::uniform_real_distribution<double> jitter(-spec.intensity_jitter, spec.intensity_jitter);
  std::vector<Light> lights;
  for (const Vec3d& d : dirs) lights.push_back({normalize(d), std::log(1.0 + jitter(rng))});
  ds.gt_lights = LightTable::from_lights(lights);
  ds.gt_normals = normals;

  const double alpha = spec.k;
  std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0.0 ? spec.noise_sigma : 1.0);
  for (std::size_t j = 0; j < lights.size(); ++j) {
    Image img = render_image(normals, scene.materials, ds.gt_lights->light(static_cast<int>(j)),
                             scene.bank, alpha, ds.mask);
    if (spec.noise_sigma > 0.0) {
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
          if (ds.mask(r, c)) img(r, c) = std::max(0.0, img(r, c) + noise(rng));
    }
    ds.images.push_back(std::move(img));
    char name[32];
    std::snprintf(name, sizeof(name), "img_%03zu", j);
    ds.names.emplace_back(name);
  }
  ds.validate();
  return scene;
}

Vec3d rotate(const Vec3d& v, const Vec3d& axis, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return v * c + cross(axis, v) * s + axis * (dot(axis, v) * (1.0 - c));
}

LightTable perturb_lights(const LightTable& lights, double sigma_deg, std::uint64_t seed) {
  if (!(sigma_deg >= 0.0)) throw Error(ErrorKind::OutOfRange, "perturbation angle must be non-negative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  LightTable out(lights.size());
  for (int j = 0; j < lights.size(); ++j) {
    Vec3d axis;
    do {
      axis = {gauss(rng), gauss(rng), gauss(rng)};
    } while (norm(axis) < 1e-9);
    axis = normalized(axis);
    const double angle = unit(rng) * sigma_deg * std::numbers::pi / 180.0;
    out.set_direction(j, sigma_deg == 0.0 ? lights.direction(j).vec()
                                          : rotate(lights.direction(j), axis, angle));
  }
  return out;
}

std::vector<Pixel> mask_boundary(const Mask& mask) {
  std::vector<Pixel> out;
  const int h = static_cast<int>(mask.rows()), w = static_cast<int>(mask.cols());
  auto inside = [&](int r, int c) { return r >= 0 && r < h && c >= 0 && c < w && mask(r, c); };
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      if (mask(r, c) && (!inside(r - 1, c) || !inside(r + 1, c) || !inside(r, c - 1) || !inside(r, c + 1))) {
        out.push_back({r, c});
      }
  return out;
}

Vec3d outward_direction(const Mask& mask, const Pixel& p) {
  // Offset of the pixel from the centroid of nearby foreground pixels.
  constexpr int kRadius = 3;
  double sx = 0.0, sy = 0.0;
  int count = 0;
  for (int dr = -kRadius; dr <= kRadius; ++dr)
    for (int dc = -kRadius; dc <= kRadius; ++dc) {
      if (dr * dr + dc * dc > kRadius * kRadius) continue;
      const int r = p.row + dr, c = p.col + dc;
      if (r < 0 || r >= mask.rows() || c < 0 || c >= mask.cols() || !mask(r, c)) continue;
      sx += dc;
      sy += -dr;
      ++count;
    }
  const Vec3d d{-sx / count, -sy / count, 0.0};
  if (norm(d) < 1e-9) return {0.0, 0.0, 0.0};
  return normalized(d);
}

}  // namespace psinvert
