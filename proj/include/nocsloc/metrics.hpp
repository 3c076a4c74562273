// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "nocsloc/geometry.hpp"

namespace nocsloc {

// Intersection-over-union of the yaw-rotated ground-plane footprints
// (the x-z plane under the camera convention), via convex polygon
// clipping.
double iou_bev(const Box3D& a, const Box3D& b);

// BEV intersection area times vertical overlap over the union volume.
double iou_3d(const Box3D& a, const Box3D& b);

// Mean absolute error between paired depth lists, meters.
double depth_mae(std::span<const double> predicted, std::span<const double> ground_truth);

struct PoseError {
  double yaw_deg = 0.0;        // wrapped absolute difference in [0, 180]
  double translation_m = 0.0;  // Euclidean
};
PoseError pose_errors(const Pose4Dof& predicted, const Pose4Dof& ground_truth);

struct ObjectMetrics {
  double iou3d = 0.0;
  double iou_bev = 0.0;
  double depth_abs_error = 0.0;
  double yaw_error_deg = 0.0;
  double translation_error_m = 0.0;
};

struct MetricReport {
  std::vector<ObjectMetrics> per_object;

  ObjectMetrics mean() const;
  ObjectMetrics median() const;
  std::string to_csv() const;
};

ObjectMetrics evaluate_box(const Box3D& predicted, const Box3D& ground_truth);

}  // namespace nocsloc
