// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "nocsloc/geometry.hpp"

namespace nocsloc {

// One pixel <-> NOCS constraint. p is the normalized camera coordinate
// [u, v, 1]; weight carries the per-axis confidence already multiplied
// by the foreground probability upstream.
struct Correspondence {
  Vec3 p = Vec3(0.0, 0.0, 1.0);
  Vec3 nocs = Vec3::Zero();
  Vec2 weight = Vec2(1.0, 1.0);
};

struct PnPSettings {
  double huber_delta = 0.005;  // normalized image units
  int max_iterations = 100;
  int yaw_hypotheses = 16;
  double cost_tolerance = 1e-10;
  double step_tolerance = 1e-10;

  void validate() const;
};

struct PnPProblem {
  std::vector<Correspondence> correspondences;
  ObjectSize size;
  PnPSettings settings;
};

struct PnPSolution {
  Pose4Dof pose;
  double final_cost = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> hypothesis_costs;  // robust cost of each yaw hypothesis
  std::vector<double> cost_trace;        // accepted LM costs, non-increasing
};

// Flattened non-zero partials of the unweighted reprojection residual
// w.r.t. the object center, evaluated at the solved pose.
struct JacobianEntry {
  double drx_dtx = 0.0;
  double drx_dtz = 0.0;
  double dry_dty = 0.0;
  double dry_dtz = 0.0;
};
using JacobianMap = std::vector<JacobianEntry>;

// Huber M-estimator: x^2/2 inside delta, delta(|x| - delta/2) outside.
double huber(double x, double delta);

// Weighted reprojection residual: the perspective projection of the
// posed object point minus the observed normalized coordinate, scaled
// per axis by the weight. `depth_ok` is cleared when the transformed
// point lands at nonpositive depth, in which case the residual value
// must not be used.
Vec2 residual(const Pose4Dof& pose, const Correspondence& corr, const ObjectSize& size,
              bool* depth_ok = nullptr);

// Robust total cost: sum of huber(weighted residual norm); nonpositive
// depths contribute a large finite penalty so rankings stay total.
double robust_cost(const Pose4Dof& pose, const PnPProblem& problem);

// Multi-hypothesis initialization (evenly spaced yaws, each with a
// weighted linear translation solve) followed by Levenberg-Marquardt on
// all four degrees of freedom.
PnPSolution solve(const PnPProblem& problem);

JacobianMap jacobian_map(const PnPSolution& solution, const PnPProblem& problem);

}  // namespace nocsloc
