// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "nocsloc/pnp.hpp"

namespace nocsloc {

struct FusionInput {
  PnPSolution solution;
  ObjectSize size;
  double d_pred = 1.0;  // direct object depth estimate, meters
  double w = 0.5;       // balancing weight; 0 keeps the PnP scale, 1 adopts d_pred

  void validate() const;
};

struct FusedEstimate {
  ObjectSize size;
  Vec3 t = Vec3::Zero();
  double yaw = 0.0;  // unchanged from the input solution
  double scale = 1.0;

  Pose4Dof pose() const { return Pose4Dof(yaw, t); }
};

// Rescales size and translation jointly by
//   lambda = (w * d_pred + (1 - w) * [t]_z) / [t]_z,
// which blends the PnP depth with the direct estimate while leaving
// every reprojection residual unchanged.
FusedEstimate scale_fuse(const FusionInput& input);

}  // namespace nocsloc
