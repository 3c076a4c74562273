// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nocsloc/renderer.hpp"

namespace nocsloc {

enum class MaskLabel : uint8_t { background = 0, foreground = 1, unknown = 2 };

// Per-pixel foreground / background / unknown labels; unknown marks
// occluded or ambiguous pixels that every loss skips.
struct TriMask {
  int width = 0;
  int height = 0;
  std::vector<MaskLabel> labels;

  static TriMask filled(int width, int height, MaskLabel label);
  MaskLabel at(int x, int y) const { return labels[static_cast<size_t>(y) * width + x]; }
  MaskLabel& at(int x, int y) { return labels[static_cast<size_t>(y) * width + x]; }
};

// Sparse NOCS supervision attached to a crop pixel.
struct NocsTarget {
  int x = 0;
  int y = 0;
  Vec3 nocs = Vec3::Zero();
};

struct TrainingObject {
  std::vector<Vec3> colors;  // row-major crop pixels, [0,1]^3
  TriMask mask;
  Box3D gt_box;
  CameraIntrinsics camera;
  CropRect crop;
  std::vector<NocsTarget> lidar_points;
  std::vector<NocsTarget> completion_points;
  bool basis_eligible = true;

  const Vec3& color_at(int x, int y) const {
    return colors[static_cast<size_t>(y) * crop.width + x];
  }
};

struct FitConfig {
  double weight_occupancy = 1.0;
  double weight_rgb = 1.0;
  double weight_lidar = 1.0;
  double weight_licomp = 1.0;
  double weight_kl = 1e-3;
  double weight_dense = 0.1;
  int rays_per_object = 768;
  int dense_prior_samples = 4096;
  double dense_prior_interval = 0.05;
  int iterations = 500;
  double lr_grid = 1e-2;
  double lr_decoder = 1e-3;
  double lr_coeff = 1e-3;
  int samples_per_ray = 64;
  bool stratified_jitter = true;
  double occupancy_epsilon = 1e-3;
  uint64_t seed = 0;
  int threads = 1;

  void validate() const;
  // The prior resolves the visual-hull ambiguity only where lidar
  // supervision is absent.
  bool dense_prior_active() const {
    return weight_dense > 0.0 && weight_lidar == 0.0 && weight_licomp == 0.0;
  }
};

struct LossValue {
  double value = 0.0;
  int skipped = 0;  // diagnostics, e.g. invalid supervised pixels
};

// Mean squared occupancy error: target 1 at foreground, 0 at
// background, unknowns excluded from sum and count. d_occupancy, when
// given, receives dLoss/dm per ray.
LossValue loss_occupancy(std::span<const double> occupancy, std::span<const MaskLabel> labels,
                         std::span<double> d_occupancy = {});

// Per-channel mean squared color error over foreground rays only.
LossValue loss_rgb(const MatX& rendered, const MatX& target, std::span<const MaskLabel> labels,
                   MatX* d_rendered = nullptr);

// Per-component mean squared NOCS error over valid supervised pixels;
// pixels with occupancy below the render epsilon are skipped and
// counted.
LossValue loss_lidar_nocs(std::span<const RenderedPixel> rendered, std::span<const Vec3> targets,
                          MatX* d_nocs = nullptr);

// Closed-form KL(N(mean, exp(log_variance)) || N(0, I)).
double loss_kl(const VecX& mean, const VecX& log_variance, VecX* d_mean = nullptr,
               VecX* d_log_variance = nullptr);

// Mean of exp(-sigma * interval) over `samples` NOCS points drawn
// uniformly in the centered cube from `seed`. Gradients are accumulated
// into the buffers scaled by `grad_scale` when grad is non-null.
double loss_dense_prior(const ShapeInstance& shape, int samples, double interval, uint64_t seed,
                        ModelGrad* grad = nullptr, VecX* d_z = nullptr, double grad_scale = 1.0);

struct FitIterationStats {
  double occupancy = 0.0;
  double rgb = 0.0;
  double lidar = 0.0;
  double licomp = 0.0;
  double kl = 0.0;
  double dense = 0.0;
  double total = 0.0;
};

struct FitReport {
  std::vector<FitIterationStats> iterations;
  double wall_seconds = 0.0;
  VecX final_coeff_mean_abs;  // mean |mean| per basis over objects (shape model)
  std::string to_csv() const;
};

struct FitResult {
  DeformableShapeModel shape_model;
  DeformableShapeModel color_model;
  std::vector<DeformationCoefficients> shape_coeffs;
  std::vector<DeformationCoefficients> color_coeffs;
  FitReport report;
};

// All gradients of one evaluation of the fit objective.
struct FitGradients {
  ModelGrad shape;
  ModelGrad color;
  std::vector<VecX> d_shape_mean, d_shape_log_variance;
  std::vector<VecX> d_color_mean, d_color_log_variance;
};

// Per-object diagnostics for instrumentation and tests.
struct ObjectEvalInfo {
  FitIterationStats stats;
  double grid_grad_squared_norm = 0.0;  // canonical+bases contribution of this object
  int lidar_skipped = 0;
  int licomp_skipped = 0;
};

// Evaluates the weighted fit objective for one iteration without
// touching parameters. Ray draws, reparameterization noise and dense
// prior samples depend only on (cfg.seed, iteration, object index), so
// repeated calls at the same iteration see the same stochastic batch;
// this is what makes the analytic gradients finite-difference checkable.
FitIterationStats evaluate_fit_iteration(const std::vector<TrainingObject>& objects,
                                         const DeformableShapeModel& shape_model,
                                         const DeformableShapeModel& color_model,
                                         const std::vector<DeformationCoefficients>& shape_coeffs,
                                         const std::vector<DeformationCoefficients>& color_coeffs,
                                         const FitConfig& cfg, int iteration,
                                         FitGradients* gradients = nullptr,
                                         std::vector<ObjectEvalInfo>* per_object = nullptr);

// Gradient-descent fit of both models and per-object coefficients with
// Adam. Basis and canonical grids receive no gradient from objects with
// basis_eligible = false.
FitResult fit(const std::vector<TrainingObject>& objects, DeformableShapeModel shape_model,
              DeformableShapeModel color_model, const FitConfig& cfg);

// Raised when a loss component turns non-finite during fitting.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace nocsloc
