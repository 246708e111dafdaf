#pragma once

// Output directory of a reconstruction:
//   normal_est.pfm   PF, unit normals under the mask, zero elsewhere
//   albedo_d.pfm     Pf
//   albedo_s_sum.pfm Pf, sum of specular albedos
//   lights_est.txt   n lines "lx ly lz e"
//   train_log.csv    epoch,loss,alpha[,normal_mae,dir_mae,int_err]
//   report.json
//   checkpoint.bin   every trainable block plus the mask, for render / eval

#include <filesystem>
#include <string>
#include <vector>

#include "psinvert/checkpoint.hpp"
#include "psinvert/metrics.hpp"
#include "psinvert/optimize.hpp"

namespace psinvert {

Checkpoint model_checkpoint(const Model& model, const TrainConfig& cfg, const Mask& mask);

struct RestoredModel {
  Model model;
  TrainConfig config;
  Mask mask;
};

/// Inverse of model_checkpoint. Throws FileFormat on missing or mis-sized arrays.
RestoredModel restore_model(const Checkpoint& ckpt);

/// CSV text of an epoch log. Optional metric columns appear when any entry
/// carries a ground-truth metric; missing cells are left empty.
std::string train_log_csv(const std::vector<EpochLog>& log);

/// Scores estimated fields and lights against whatever ground truth `gt`
/// carries; PSNR needs re-rendered images (pass empty to skip).
EvalReport evaluate(const NormalMap& normals, const LightTable& lights,
                    const std::vector<Image>& rendered, const PhotometricDataset& gt);

/// report.json text: the four metrics (null when unavailable), image and
/// pixel counts, and the resolved config.
std::string report_json(const EvalReport& report, int n_images, long n_pixels,
                        const TrainConfig& cfg);

/// Writes every file listed above.
void save_outputs(const Solution& solution, const PhotometricDataset& dataset,
                  const TrainConfig& cfg, const std::filesystem::path& dir);

/// Lights in "lx ly lz e" form.
void write_lights_file(const LightTable& lights, const std::filesystem::path& path);

}  // namespace psinvert
