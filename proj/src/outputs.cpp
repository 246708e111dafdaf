#include "psinvert/outputs.hpp"

#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace psinvert {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

NamedArray vector_array(std::string name, const Eigen::VectorXd& v) {
  return {std::move(name), {v.size()}, std::vector<double>(v.data(), v.data() + v.size())};
}

void load_vector(const Checkpoint& ckpt, const std::string& name, Eigen::VectorXd& into) {
  const NamedArray& a = ckpt.get(name);
  if (static_cast<Eigen::Index>(a.data.size()) != into.size()) {
    throw Error(ErrorKind::FileFormat, "checkpoint array '" + name + "' has the wrong size");
  }
  into = Eigen::Map<const Eigen::VectorXd>(a.data.data(), into.size());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path.string());
  out << text;
}

}  // namespace

Checkpoint model_checkpoint(const Model& model, const TrainConfig& cfg, const Mask& mask) {
  Checkpoint ckpt;
  ckpt.arrays.push_back(vector_array("normal_net", model.normal_net.params()));
  ckpt.arrays.push_back(vector_array("material_net", model.material_net.params()));
  ckpt.arrays.push_back(vector_array("lights", model.lights.params()));
  ckpt.arrays.push_back(vector_array("log_roughness", model.log_roughness));
  NamedArray m{"mask", {mask.rows(), mask.cols()}, {}};
  m.data.reserve(static_cast<std::size_t>(mask.size()));
  for (Eigen::Index r = 0; r < mask.rows(); ++r)
    for (Eigen::Index c = 0; c < mask.cols(); ++c) m.data.push_back(mask(r, c) ? 1.0 : 0.0);
  ckpt.arrays.push_back(std::move(m));

  json meta;
  for (const auto& [k, v] : config_entries(cfg)) meta["config"][k] = v;
  meta["lights"] = model.lights.size();
  ckpt.meta_json = meta.dump();
  return ckpt;
}

RestoredModel restore_model(const Checkpoint& ckpt) {
  RestoredModel out;
  json meta;
  try {
    meta = json::parse(ckpt.meta_json);
    for (const auto& [k, v] : meta.at("config").items()) set_config_value(out.config, k, v.get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::FileFormat, std::string("checkpoint metadata: ") + e.what());
  }
  const NamedArray& m = ckpt.get("mask");
  if (m.shape.size() != 2) throw Error(ErrorKind::FileFormat, "checkpoint mask is not 2-D");
  out.mask = Mask::Zero(m.shape[0], m.shape[1]);
  for (Eigen::Index r = 0; r < out.mask.rows(); ++r)
    for (Eigen::Index c = 0; c < out.mask.cols(); ++c)
      out.mask(r, c) = m.data[static_cast<std::size_t>(r * out.mask.cols() + c)] > 0.5;

  const int lights = meta.value("lights", 0);
  out.model = Model::create(out.config, out.mask, LightTable(lights));
  load_vector(ckpt, "normal_net", out.model.normal_net.params());
  load_vector(ckpt, "material_net", out.model.material_net.params());
  load_vector(ckpt, "lights", out.model.lights.params());
  load_vector(ckpt, "log_roughness", out.model.log_roughness);
  return out;
}

std::string train_log_csv(const std::vector<EpochLog>& log) {
  bool metrics = false;
  for (const auto& e : log) metrics = metrics || e.normal_mae || e.dir_mae || e.int_err;
  std::ostringstream out;
  out << "epoch,loss,alpha";
  if (metrics) out << ",normal_mae,dir_mae,int_err";
  out << '\n';
  auto opt = [](const std::optional<double>& v) { return v ? g17(*v) : std::string(); };
  for (const auto& e : log) {
    out << e.epoch << ',' << g17(e.loss) << ',' << g17(e.alpha);
    if (metrics) out << ',' << opt(e.normal_mae) << ',' << opt(e.dir_mae) << ',' << opt(e.int_err);
    out << '\n';
  }
  return out.str();
}

EvalReport evaluate(const NormalMap& normals, const LightTable& lights,
                    const std::vector<Image>& rendered, const PhotometricDataset& gt) {
  EvalReport rep;
  if (gt.gt_normals) {
    rep.angular_error = angular_error_map(normals, *gt.gt_normals, gt.mask);
    rep.normal_mae_deg = mean_angular_error(normals, *gt.gt_normals, gt.mask);
  }
  if (gt.gt_lights) {
    rep.light_dir_mae_deg = light_direction_error(lights, *gt.gt_lights);
    std::vector<double> e, g;
    for (int j = 0; j < lights.size(); ++j) {
      e.push_back(lights.intensity(j));
      g.push_back(gt.gt_lights->intensity(j));
    }
    rep.intensity_si_error = scale_invariant_intensity_error(e, g);
  }
  if (!rendered.empty()) rep.psnr_db = full_image_psnr(rendered, gt);
  return rep;
}

std::string report_json(const EvalReport& rep, int n_images, long n_pixels, const TrainConfig& cfg) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j;
  j["normal_mae_deg"] = opt(rep.normal_mae_deg);
  j["light_dir_mae_deg"] = opt(rep.light_dir_mae_deg);
  j["intensity_si_error"] = opt(rep.intensity_si_error);
  j["psnr_db"] = opt(rep.psnr_db);
  j["n_images"] = n_images;
  j["n_pixels"] = n_pixels;
  json echo = json::object();
  for (const auto& [k, v] : config_entries(cfg)) echo[k] = v;
  j["config_echo"] = echo;
  return j.dump(2) + "\n";
}

void write_lights_file(const LightTable& lights, const fs::path& path) {
  std::ostringstream out;
  for (int j = 0; j < lights.size(); ++j) {
    const UnitVec3 l = lights.direction(j);
    out << g17(l.x()) << ' ' << g17(l.y()) << ' ' << g17(l.z()) << ' ' << g17(lights.intensity(j)) << '\n';
  }
  write_text(path, out.str());
}

void save_outputs(const Solution& sol, const PhotometricDataset& ds, const TrainConfig& cfg,
                  const fs::path& dir) {
  fs::create_directories(dir);
  write_pfm(to_pfm(sol.fields.normals), dir / "normal_est.pfm");
  Image diffuse = Image::Zero(ds.rows(), ds.cols());
  Image spec_sum = Image::Zero(ds.rows(), ds.cols());
  for (int r = 0; r < ds.rows(); ++r)
    for (int c = 0; c < ds.cols(); ++c) {
      if (!ds.mask(r, c)) continue;
      const Material& m = sol.fields.materials(r, c);
      diffuse(r, c) = m.diffuse;
      for (double s : m.specular) spec_sum(r, c) += s;
    }
  write_pfm(to_pfm(diffuse), dir / "albedo_d.pfm");
  write_pfm(to_pfm(spec_sum), dir / "albedo_s_sum.pfm");
  write_lights_file(sol.lights, dir / "lights_est.txt");
  write_text(dir / "train_log.csv", train_log_csv(sol.log));

  EvalReport rep = evaluate(sol.fields.normals, sol.lights, {}, ds);
  rep.psnr_db = sol.final_psnr;
  write_text(dir / "report.json", report_json(rep, ds.count(), static_cast<long>(ds.mask.count()), cfg));
  write_checkpoint(model_checkpoint(sol.model, cfg, ds.mask), dir / "checkpoint.bin");
}

}  // namespace psinvert
