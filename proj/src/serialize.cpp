// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#include "nocsloc/serialize.hpp"

#include <stdexcept>

namespace nocsloc {

namespace {

Vec3 vec3_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected a 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

Json to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

}  // namespace

Json to_json(const CameraIntrinsics& K) {
  return Json{{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy}};
}

CameraIntrinsics camera_from_json(const Json& j) {
  return CameraIntrinsics(j.at("fx").get<double>(), j.at("fy").get<double>(),
                          j.at("cx").get<double>(), j.at("cy").get<double>());
}

Json to_json(const Pose4Dof& pose) {
  return Json{{"yaw", pose.yaw}, {"t", to_json(pose.t)}};
}

Pose4Dof pose_from_json(const Json& j) {
  return Pose4Dof(j.at("yaw").get<double>(), vec3_from_json(j.at("t")));
}

Json to_json(const ObjectSize& s) { return Json::array({s.l, s.h, s.w}); }

ObjectSize size_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("size: expected [l, h, w]");
  return ObjectSize(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

Json to_json(const Box3D& box) {
  return Json{{"pose", to_json(box.pose)}, {"size", to_json(box.size)}};
}

Box3D box_from_json(const Json& j) {
  return Box3D(pose_from_json(j.at("pose")), size_from_json(j.at("size")));
}

Json to_json(const Primitive& p) {
  switch (p.kind) {
    case Primitive::Kind::box:
      return Json{{"kind", "box"}, {"half_extents", to_json(p.half_extents)}};
    case Primitive::Kind::ellipsoid:
      return Json{{"kind", "ellipsoid"}, {"radii", to_json(p.radii)}};
    case Primitive::Kind::union_of: {
      Json parts = Json::array();
      for (const auto& part : p.parts) parts.push_back(to_json(part));
      return Json{{"kind", "union"}, {"parts", parts}};
    }
  }
  throw std::logic_error("Primitive: unknown kind");
}

Primitive primitive_from_json(const Json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "box") return Primitive::box(vec3_from_json(j.at("half_extents")));
  if (kind == "ellipsoid") return Primitive::ellipsoid(vec3_from_json(j.at("radii")));
  if (kind == "union") {
    std::vector<Primitive> parts;
    for (const auto& part : j.at("parts")) parts.push_back(primitive_from_json(part));
    return Primitive::union_of(std::move(parts));
  }
  throw std::invalid_argument("Primitive: unknown kind '" + kind + "'");
}

Json to_json(const SceneSpec& spec) {
  Json objects = Json::array();
  for (const auto& obj : spec.objects) {
    objects.push_back(Json{{"primitive", to_json(obj.primitive)},
                           {"box", to_json(obj.box)},
                           {"albedo", to_json(obj.albedo)}});
  }
  Json occluders = Json::array();
  for (const auto& occ : spec.occluders)
    occluders.push_back(
        Json{{"x", occ.x}, {"y", occ.y}, {"width", occ.width}, {"height", occ.height}});
  return Json{{"schema_version", kSchemaVersion},
              {"seed", spec.seed},
              {"camera", to_json(spec.camera)},
              {"image_width", spec.image_width},
              {"image_height", spec.image_height},
              {"objects", objects},
              {"occluders", occluders},
              {"lidar",
               Json{{"sample_count", spec.lidar.sample_count},
                    {"dropout", spec.lidar.dropout},
                    {"depth_sigma", spec.lidar.depth_sigma},
                    {"completion_stride", spec.lidar.completion_stride},
                    {"completion_depth_sigma", spec.lidar.completion_depth_sigma}}},
              {"noise",
               Json{{"nocs_sigma", spec.noise.nocs_sigma},
                    {"outlier_fraction", spec.noise.outlier_fraction},
                    {"weight_log_sigma", spec.noise.weight_log_sigma},
                    {"d_pred_log_sigma", spec.noise.d_pred_log_sigma},
                    {"size_log_sigma", spec.noise.size_log_sigma}}},
              {"gt_samples_per_ray", spec.gt_samples_per_ray},
              {"sigma_max", spec.sigma_max},
              {"crop_margin", spec.crop_margin},
              {"min_basis_height_px", spec.min_basis_height_px}};
}

SceneSpec scene_from_json(const Json& j) {
  SceneSpec spec;
  if (j.contains("schema_version") && j.at("schema_version").get<int>() != kSchemaVersion)
    throw std::invalid_argument("SceneSpec: unsupported schema_version");
  spec.seed = j.value("seed", uint64_t{0});
  spec.camera = camera_from_json(j.at("camera"));
  spec.image_width = j.at("image_width").get<int>();
  spec.image_height = j.at("image_height").get<int>();
  for (const auto& obj : j.at("objects")) {
    SynthObjectSpec o;
    o.primitive = primitive_from_json(obj.at("primitive"));
    o.box = box_from_json(obj.at("box"));
    if (obj.contains("albedo")) o.albedo = vec3_from_json(obj.at("albedo"));
    spec.objects.push_back(o);
  }
  if (j.contains("occluders")) {
    for (const auto& occ : j.at("occluders")) {
      spec.occluders.push_back({occ.at("x").get<double>(), occ.at("y").get<double>(),
                                occ.at("width").get<double>(), occ.at("height").get<double>()});
    }
  }
  if (j.contains("lidar")) {
    const Json& l = j.at("lidar");
    spec.lidar.sample_count = l.value("sample_count", 0);
    spec.lidar.dropout = l.value("dropout", 0.0);
    spec.lidar.depth_sigma = l.value("depth_sigma", 0.02);
    spec.lidar.completion_stride = l.value("completion_stride", 0);
    spec.lidar.completion_depth_sigma = l.value("completion_depth_sigma", 0.05);
  }
  if (j.contains("noise")) {
    const Json& n = j.at("noise");
    spec.noise.nocs_sigma = n.value("nocs_sigma", 0.0);
    spec.noise.outlier_fraction = n.value("outlier_fraction", 0.0);
    spec.noise.weight_log_sigma = n.value("weight_log_sigma", 0.0);
    spec.noise.d_pred_log_sigma = n.value("d_pred_log_sigma", 0.05);
    spec.noise.size_log_sigma = n.value("size_log_sigma", 0.0);
  }
  spec.gt_samples_per_ray = j.value("gt_samples_per_ray", 4096);
  spec.sigma_max = j.value("sigma_max", 1e4);
  spec.crop_margin = j.value("crop_margin", 0.08);
  spec.min_basis_height_px = j.value("min_basis_height_px", 40.0);
  spec.validate();
  return spec;
}

Json to_json(const FitConfig& cfg) {
  return Json{{"schema_version", kSchemaVersion},
              {"weight_occupancy", cfg.weight_occupancy},
              {"weight_rgb", cfg.weight_rgb},
              {"weight_lidar", cfg.weight_lidar},
              {"weight_licomp", cfg.weight_licomp},
              {"weight_kl", cfg.weight_kl},
              {"weight_dense", cfg.weight_dense},
              {"rays_per_object", cfg.rays_per_object},
              {"dense_prior_samples", cfg.dense_prior_samples},
              {"dense_prior_interval", cfg.dense_prior_interval},
              {"iterations", cfg.iterations},
              {"lr_grid", cfg.lr_grid},
              {"lr_decoder", cfg.lr_decoder},
              {"lr_coeff", cfg.lr_coeff},
              {"samples_per_ray", cfg.samples_per_ray},
              {"stratified_jitter", cfg.stratified_jitter},
              {"occupancy_epsilon", cfg.occupancy_epsilon},
              {"seed", cfg.seed},
              {"threads", cfg.threads}};
}

FitConfig fit_config_from_json(const Json& j) {
  FitConfig cfg;
  cfg.weight_occupancy = j.value("weight_occupancy", cfg.weight_occupancy);
  cfg.weight_rgb = j.value("weight_rgb", cfg.weight_rgb);
  cfg.weight_lidar = j.value("weight_lidar", cfg.weight_lidar);
  cfg.weight_licomp = j.value("weight_licomp", cfg.weight_licomp);
  cfg.weight_kl = j.value("weight_kl", cfg.weight_kl);
  cfg.weight_dense = j.value("weight_dense", cfg.weight_dense);
  cfg.rays_per_object = j.value("rays_per_object", cfg.rays_per_object);
  cfg.dense_prior_samples = j.value("dense_prior_samples", cfg.dense_prior_samples);
  cfg.dense_prior_interval = j.value("dense_prior_interval", cfg.dense_prior_interval);
  cfg.iterations = j.value("iterations", cfg.iterations);
  cfg.lr_grid = j.value("lr_grid", cfg.lr_grid);
  cfg.lr_decoder = j.value("lr_decoder", cfg.lr_decoder);
  cfg.lr_coeff = j.value("lr_coeff", cfg.lr_coeff);
  cfg.samples_per_ray = j.value("samples_per_ray", cfg.samples_per_ray);
  cfg.stratified_jitter = j.value("stratified_jitter", cfg.stratified_jitter);
  cfg.occupancy_epsilon = j.value("occupancy_epsilon", cfg.occupancy_epsilon);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.threads = j.value("threads", cfg.threads);
  cfg.validate();
  return cfg;
}

Json to_json(const PnPProblem& problem) {
  Json corr = Json::array();
  for (const auto& c : problem.correspondences) {
    corr.push_back(Json{{"p", Json::array({c.p.x(), c.p.y()})},
                        {"nocs", to_json(c.nocs)},
                        {"weight", Json::array({c.weight.x(), c.weight.y()})}});
  }
  return Json{{"schema_version", kSchemaVersion},
              {"size", to_json(problem.size)},
              {"huber_delta", problem.settings.huber_delta},
              {"max_iterations", problem.settings.max_iterations},
              {"yaw_hypotheses", problem.settings.yaw_hypotheses},
              {"correspondences", corr}};
}

PnPProblem pnp_problem_from_json(const Json& j) {
  PnPProblem problem;
  problem.size = size_from_json(j.at("size"));
  problem.settings.huber_delta = j.value("huber_delta", problem.settings.huber_delta);
  problem.settings.max_iterations = j.value("max_iterations", problem.settings.max_iterations);
  problem.settings.yaw_hypotheses = j.value("yaw_hypotheses", problem.settings.yaw_hypotheses);
  for (const auto& c : j.at("correspondences")) {
    Correspondence corr;
    corr.p = Vec3(c.at("p")[0].get<double>(), c.at("p")[1].get<double>(), 1.0);
    corr.nocs = vec3_from_json(c.at("nocs"));
    corr.weight = Vec2(c.at("weight")[0].get<double>(), c.at("weight")[1].get<double>());
    problem.correspondences.push_back(corr);
  }
  return problem;
}

Json to_json(const PnPSolution& solution) {
  return Json{{"pose", to_json(solution.pose)},
              {"final_cost", solution.final_cost},
              {"iterations", solution.iterations},
              {"converged", solution.converged},
              {"hypothesis_costs", solution.hypothesis_costs}};
}

PnPSolution pnp_solution_from_json(const Json& j) {
  PnPSolution s;
  s.pose = pose_from_json(j.at("pose"));
  s.final_cost = j.at("final_cost").get<double>();
  s.iterations = j.at("iterations").get<int>();
  s.converged = j.at("converged").get<bool>();
  s.hypothesis_costs = j.value("hypothesis_costs", std::vector<double>{});
  return s;
}

}  // namespace nocsloc
