#pragma once

#include <cstdint>

namespace psinvert {

struct PipelineCheckOptions {
  int trials = 100;
  std::uint64_t seed = 0;
  int coords_per_block = 6;
  double step = 1e-4;
};

struct PipelineCheckReport {
  int trials = 0;
  int checked = 0;
  /// Coordinates whose central difference changed with the step size, i.e. a
  /// ReLU or |.| kink lies within the stencil.
  int near_kink = 0;
  double max_relative_error = 0.0;
};

/// Random small reconstructions (encoding -> MLPs -> shading -> L1 loss and
/// priors): analytic gradients against central differences of the loss.
PipelineCheckReport pipeline_gradient_check(const PipelineCheckOptions& options = {});

}  // namespace psinvert
