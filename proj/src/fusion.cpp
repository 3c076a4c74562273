// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#include "nocsloc/fusion.hpp"

#include <stdexcept>

namespace nocsloc {

void FusionInput::validate() const {
  if (!(d_pred > 0.0)) throw std::invalid_argument("FusionInput: d_pred must be > 0");
  if (!(solution.pose.t.z() > 0.0))
    throw std::invalid_argument("FusionInput: solution depth must be > 0");
  if (!(w >= 0.0 && w <= 1.0)) throw std::invalid_argument("FusionInput: w must lie in [0, 1]");
}

FusedEstimate scale_fuse(const FusionInput& input) {
  input.validate();
  const double depth = input.solution.pose.t.z();
  const double lambda = (input.w * input.d_pred + (1.0 - input.w) * depth) / depth;
  FusedEstimate out;
  out.scale = lambda;
  out.size = ObjectSize(lambda * input.size.l, lambda * input.size.h, lambda * input.size.w);
  out.t = lambda * input.solution.pose.t;
  out.yaw = input.solution.pose.yaw;
  return out;
}

}  // namespace nocsloc
