// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <json.hpp>

#include "nocsloc/fit.hpp"
#include "nocsloc/pnp.hpp"
#include "nocsloc/synth.hpp"

namespace nocsloc {

using Json = nlohmann::json;

// Current schema version stamped into every JSON artifact.
inline constexpr int kSchemaVersion = 1;

Json to_json(const CameraIntrinsics& K);
CameraIntrinsics camera_from_json(const Json& j);

Json to_json(const Pose4Dof& pose);
Pose4Dof pose_from_json(const Json& j);

Json to_json(const ObjectSize& s);
ObjectSize size_from_json(const Json& j);

Json to_json(const Box3D& box);
Box3D box_from_json(const Json& j);

Json to_json(const Primitive& p);
Primitive primitive_from_json(const Json& j);

Json to_json(const SceneSpec& spec);
SceneSpec scene_from_json(const Json& j);

Json to_json(const FitConfig& cfg);
FitConfig fit_config_from_json(const Json& j);

Json to_json(const PnPProblem& problem);
PnPProblem pnp_problem_from_json(const Json& j);

Json to_json(const PnPSolution& solution);
PnPSolution pnp_solution_from_json(const Json& j);

}  // namespace nocsloc
