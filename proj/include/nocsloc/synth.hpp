// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "nocsloc/fit.hpp"
#include "nocsloc/pnp.hpp"

namespace nocsloc {

// Analytic solid defined in NOCS space.
struct Primitive {
  enum class Kind { box, ellipsoid, union_of };

  Kind kind = Kind::box;
  Vec3 half_extents = Vec3(0.5, 0.5, 0.5);  // box, clipped to the NOCS cube
  Vec3 radii = Vec3(0.5, 0.5, 0.5);         // ellipsoid
  std::vector<Primitive> parts;             // union_of

  static Primitive box(const Vec3& half_extents);
  static Primitive ellipsoid(const Vec3& radii);
  static Primitive union_of(std::vector<Primitive> parts);
};

// sigma_max inside the primitive (intersected with the NOCS cube), 0
// outside; unions take the max.
double analytic_density(const Primitive& primitive, const Vec3& o, double sigma_max = 1e4);
bool primitive_contains(const Primitive& primitive, const Vec3& o);
// Outward surface normal in NOCS space of the part containing o.
Vec3 primitive_normal(const Primitive& primitive, const Vec3& o);

struct SynthObjectSpec {
  Primitive primitive;
  Box3D box;
  Vec3 albedo = Vec3(0.7, 0.2, 0.2);
};

// Image-space rectangle relabeled `unknown` in the tri-mask.
struct OccluderRect {
  double x = 0, y = 0, width = 0, height = 0;
  bool contains(double px, double py) const {
    return px >= x && px < x + width && py >= y && py < y + height;
  }
};

struct LidarSim {
  int sample_count = 0;  // 0 disables lidar supervision
  double dropout = 0.0;
  double depth_sigma = 0.02;  // meters along the ray
  int completion_stride = 0;  // 0 disables completion points
  double completion_depth_sigma = 0.05;
};

struct SynthNoise {
  double nocs_sigma = 0.0;
  double outlier_fraction = 0.0;
  double weight_log_sigma = 0.0;
  double d_pred_log_sigma = 0.05;
  double size_log_sigma = 0.0;
};

struct SceneSpec {
  CameraIntrinsics camera{200.0, 200.0, 128.0, 128.0};
  int image_width = 256;
  int image_height = 256;
  std::vector<SynthObjectSpec> objects;
  std::vector<OccluderRect> occluders;
  LidarSim lidar;
  SynthNoise noise;
  uint64_t seed = 0;
  int gt_samples_per_ray = 4096;
  double sigma_max = 1e4;
  double crop_margin = 0.08;         // fraction of the projected bbox size
  double min_basis_height_px = 40.0;

  void validate() const;
};

struct GeneratedObject {
  TrainingObject training;
  std::vector<Vec3> gt_nocs;      // dense per crop pixel
  std::vector<uint8_t> gt_hit;    // 1 where the ray meets the primitive
  std::vector<Correspondence> clean_correspondences;
  std::vector<Correspondence> noisy_correspondences;
  std::vector<PixelRef> correspondence_pixels;  // crop pixel of each correspondence
  double d_pred = 0.0;
  ObjectSize size_pred;
  double projected_height_px = 0.0;
  uint64_t object_seed = 0;
};

// Deterministic per (spec.seed, object index); ground-truth NOCS comes
// from fine ray marching of the analytic density with bisection
// refinement at the entry surface.
std::vector<GeneratedObject> generate(const SceneSpec& spec, int threads = 1);

}  // namespace nocsloc
