// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#include "nocsloc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "nocsloc/parallel.hpp"
#include "nocsloc/rng.hpp"

namespace nocsloc {

namespace {

enum : uint64_t {
  kStreamObject = 77,
  kStreamLidar = 1,
  kStreamCompletion = 2,
  kStreamNoise = 3,
  kStreamDetector = 4,
};

bool inside_cube(const Vec3& o) {
  return std::abs(o.x()) <= 0.5 && std::abs(o.y()) <= 0.5 && std::abs(o.z()) <= 0.5;
}

// Fixed light direction in the object frame; shading is a function of
// the surface point only, so it is consistent across viewpoints.
const Vec3 kLightDir = Vec3(0.48, -0.6, 0.64).normalized();

Vec3 shade(const Vec3& albedo, const Vec3& normal) {
  const double lambert = std::max(0.0, normal.dot(kLightDir));
  return (0.55 + 0.45 * lambert) * albedo;
}

struct EntryHit {
  bool hit = false;
  double gamma = 0.0;
  Vec3 nocs = Vec3::Zero();
};

// First primitive contact along the ray: coarse midpoint march of the
// analytic density, then bisection onto the surface.
EntryHit march_entry(const Ray& ray, const Box3D& box, const Primitive& primitive,
                     int samples) {
  EntryHit out;
  const auto span = ray_box_intersect(ray, box);
  if (!span) return out;
  const Mat3 Rt = box.pose.rotation().transpose();
  const Vec3 origin_obj = Rt * (ray.origin - box.pose.t);
  const Vec3 dir_obj = Rt * ray.dir;
  const Vec3 inv_size(1.0 / box.size.l, 1.0 / box.size.h, 1.0 / box.size.w);
  auto nocs_at = [&](double gamma) -> Vec3 {
    return (origin_obj + gamma * dir_obj).cwiseProduct(inv_size);
  };

  const double delta = (span->far - span->near) / samples;
  double lo = span->near;
  if (primitive_contains(primitive, nocs_at(span->near))) {
    out.hit = true;
    out.gamma = span->near;
    out.nocs = nocs_at(span->near);
    return out;
  }
  double hi = -1.0;
  for (int j = 0; j < samples; ++j) {
    const double gamma = span->near + (j + 0.5) * delta;
    if (primitive_contains(primitive, nocs_at(gamma))) {
      hi = gamma;
      break;
    }
    lo = gamma;
  }
  if (hi < 0.0) return out;
  for (int it = 0; it < 64; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (primitive_contains(primitive, nocs_at(mid))) hi = mid;
    else lo = mid;
  }
  out.hit = true;
  out.gamma = hi;
  out.nocs = nocs_at(hi);
  return out;
}

GeneratedObject generate_object(const SceneSpec& spec, int index) {
  const SynthObjectSpec& os = spec.objects[index];
  if (!(os.box.pose.t.z() > 0.0))
    throw std::runtime_error("generate: object " + std::to_string(index) +
                             " is behind the camera");

  GeneratedObject gen;
  gen.object_seed = Rng(spec.seed).fork(kStreamObject).fork(index).seed();
  const Rng base(gen.object_seed);

  // Crop: projected bounding box of the 3D box corners plus a margin.
  double min_u = 1e30, max_u = -1e30, min_v = 1e30, max_v = -1e30;
  for (const Vec3& corner : os.box.corners()) {
    if (!(corner.z() > 0.0))
      throw std::runtime_error("generate: object " + std::to_string(index) +
                               " crosses the camera plane");
    const Vec2 px = normalized_to_pixel(corner / corner.z(), spec.camera);
    min_u = std::min(min_u, px.x());
    max_u = std::max(max_u, px.x());
    min_v = std::min(min_v, px.y());
    max_v = std::max(max_v, px.y());
  }
  gen.projected_height_px = max_v - min_v;
  const double margin = spec.crop_margin * std::max(max_u - min_u, max_v - min_v);
  CropRect crop;
  crop.x0 = std::max(0, static_cast<int>(std::floor(min_u - margin)));
  crop.y0 = std::max(0, static_cast<int>(std::floor(min_v - margin)));
  crop.width = std::min(spec.image_width, static_cast<int>(std::ceil(max_u + margin))) - crop.x0;
  crop.height = std::min(spec.image_height, static_cast<int>(std::ceil(max_v + margin))) - crop.y0;
  if (crop.width <= 0 || crop.height <= 0)
    throw std::runtime_error("generate: object " + std::to_string(index) +
                             " projects outside the image");

  const int n_px = crop.pixel_count();
  gen.gt_nocs.assign(n_px, Vec3::Zero());
  gen.gt_hit.assign(n_px, 0);
  TrainingObject& training = gen.training;
  training.camera = spec.camera;
  training.crop = crop;
  training.gt_box = os.box;
  training.colors.assign(n_px, Vec3(0.05, 0.05, 0.07));
  training.mask = TriMask::filled(crop.width, crop.height, MaskLabel::background);

  std::vector<double> entry_gamma(n_px, 0.0);
  for (int y = 0; y < crop.height; ++y) {
    for (int x = 0; x < crop.width; ++x) {
      const double u = crop.x0 + x + 0.5;
      const double v = crop.y0 + y + 0.5;
      const Ray ray = pixel_ray(u, v, spec.camera);
      const EntryHit hit = march_entry(ray, os.box, os.primitive, spec.gt_samples_per_ray);
      const int flat = y * crop.width + x;
      const bool occluded = [&] {
        for (const auto& occ : spec.occluders)
          if (occ.contains(u, v)) return true;
        return false;
      }();
      if (hit.hit) {
        gen.gt_hit[flat] = 1;
        gen.gt_nocs[flat] = hit.nocs;
        entry_gamma[flat] = hit.gamma;
        training.colors[flat] = shade(os.albedo, primitive_normal(os.primitive, hit.nocs));
        training.mask.labels[flat] = occluded ? MaskLabel::unknown : MaskLabel::foreground;
      } else {
        training.mask.labels[flat] = occluded ? MaskLabel::unknown : MaskLabel::background;
      }
    }
  }

  // Eligibility: tall enough and free of occluders over the projection.
  bool occluded_box = false;
  for (const auto& occ : spec.occluders) {
    const bool disjoint = occ.x + occ.width <= min_u || occ.x >= max_u ||
                          occ.y + occ.height <= min_v || occ.y >= max_v;
    if (!disjoint) occluded_box = true;
  }
  training.basis_eligible =
      gen.projected_height_px >= spec.min_basis_height_px && !occluded_box;

  // Dense correspondences on every non-occluded foreground pixel.
  Rng noise_rng = base.fork(kStreamNoise);
  for (int y = 0; y < crop.height; ++y) {
    for (int x = 0; x < crop.width; ++x) {
      const int flat = y * crop.width + x;
      if (training.mask.labels[flat] != MaskLabel::foreground) continue;
      Correspondence c;
      c.p = pixel_to_normalized(crop.x0 + x + 0.5, crop.y0 + y + 0.5, spec.camera);
      c.nocs = gen.gt_nocs[flat];
      c.weight = Vec2(1.0, 1.0);
      gen.clean_correspondences.push_back(c);
      gen.correspondence_pixels.push_back({x, y});

      Correspondence noisy = c;
      if (noise_rng.uniform01() < spec.noise.outlier_fraction) {
        noisy.nocs = Vec3(noise_rng.uniform(-0.5, 0.5), noise_rng.uniform(-0.5, 0.5),
                          noise_rng.uniform(-0.5, 0.5));
      } else if (spec.noise.nocs_sigma > 0.0) {
        for (int k = 0; k < 3; ++k) noisy.nocs[k] += spec.noise.nocs_sigma * noise_rng.normal();
      }
      if (spec.noise.weight_log_sigma > 0.0) {
        noisy.weight.x() *= std::exp(spec.noise.weight_log_sigma * noise_rng.normal());
        noisy.weight.y() *= std::exp(spec.noise.weight_log_sigma * noise_rng.normal());
      }
      gen.noisy_correspondences.push_back(noisy);
    }
  }

  // Lidar: visible-surface depth samples with Gaussian perturbation,
  // converted to NOCS and kept only inside the box.
  auto depth_sample = [&](int x, int y, double sigma, Rng& rng) -> std::optional<Vec3> {
    const int flat = y * crop.width + x;
    const Ray ray = pixel_ray(crop.x0 + x + 0.5, crop.y0 + y + 0.5, spec.camera);
    const double gamma = entry_gamma[flat] + sigma * rng.normal();
    const Vec3 p_cam = ray.origin + gamma * ray.dir;
    const Vec3 o = nocs_of(world_to_object(p_cam, os.box.pose), os.box.size);
    if (!inside_cube(o)) return std::nullopt;
    return o;
  };

  if (spec.lidar.sample_count > 0) {
    Rng lidar_rng = base.fork(kStreamLidar);
    std::vector<uint8_t> taken(n_px, 0);
    int accepted = 0;
    const int max_attempts = 64 * spec.lidar.sample_count;
    for (int attempt = 0; attempt < max_attempts && accepted < spec.lidar.sample_count;
         ++attempt) {
      const int flat = lidar_rng.uniform_int(n_px);
      if (training.mask.labels[flat] != MaskLabel::foreground || taken[flat]) continue;
      const int x = flat % crop.width;
      const int y = flat / crop.width;
      const auto o = depth_sample(x, y, spec.lidar.depth_sigma, lidar_rng);
      if (!o) continue;
      taken[flat] = 1;
      ++accepted;
      if (lidar_rng.uniform01() < spec.lidar.dropout) continue;
      training.lidar_points.push_back({x, y, *o});
    }
  }

  if (spec.lidar.completion_stride > 0) {
    Rng comp_rng = base.fork(kStreamCompletion);
    int fg_index = 0;
    for (int flat = 0; flat < n_px; ++flat) {
      if (training.mask.labels[flat] != MaskLabel::foreground) continue;
      if (fg_index++ % spec.lidar.completion_stride != 0) continue;
      const int x = flat % crop.width;
      const int y = flat / crop.width;
      const auto o = depth_sample(x, y, spec.lidar.completion_depth_sigma, comp_rng);
      if (o) training.completion_points.push_back({x, y, *o});
    }
  }

  // Base-detector stand-ins.
  Rng det_rng = base.fork(kStreamDetector);
  gen.d_pred = os.box.pose.t.z() * std::exp(spec.noise.d_pred_log_sigma * det_rng.normal());
  const double size_factor = std::exp(spec.noise.size_log_sigma * det_rng.normal());
  gen.size_pred = ObjectSize(os.box.size.l * size_factor, os.box.size.h * size_factor,
                             os.box.size.w * size_factor);
  return gen;
}

}  // namespace

Primitive Primitive::box(const Vec3& half_extents) {
  Primitive p;
  p.kind = Kind::box;
  p.half_extents = half_extents;
  return p;
}

Primitive Primitive::ellipsoid(const Vec3& radii) {
  Primitive p;
  p.kind = Kind::ellipsoid;
  p.radii = radii;
  return p;
}

Primitive Primitive::union_of(std::vector<Primitive> parts) {
  Primitive p;
  p.kind = Kind::union_of;
  p.parts = std::move(parts);
  return p;
}

bool primitive_contains(const Primitive& primitive, const Vec3& o) {
  if (!inside_cube(o)) return false;
  switch (primitive.kind) {
    case Primitive::Kind::box:
      return std::abs(o.x()) <= primitive.half_extents.x() &&
             std::abs(o.y()) <= primitive.half_extents.y() &&
             std::abs(o.z()) <= primitive.half_extents.z();
    case Primitive::Kind::ellipsoid: {
      double q = 0.0;
      for (int k = 0; k < 3; ++k) {
        const double r = o[k] / primitive.radii[k];
        q += r * r;
      }
      return q <= 1.0;
    }
    case Primitive::Kind::union_of:
      for (const auto& part : primitive.parts)
        if (primitive_contains(part, o)) return true;
      return false;
  }
  return false;
}

double analytic_density(const Primitive& primitive, const Vec3& o, double sigma_max) {
  return primitive_contains(primitive, o) ? sigma_max : 0.0;
}

Vec3 primitive_normal(const Primitive& primitive, const Vec3& o) {
  switch (primitive.kind) {
    case Primitive::Kind::box: {
      // Face of the largest relative coordinate.
      int axis = 0;
      double best = -1.0;
      for (int k = 0; k < 3; ++k) {
        const double rel = std::abs(o[k]) / primitive.half_extents[k];
        if (rel > best) {
          best = rel;
          axis = k;
        }
      }
      Vec3 n = Vec3::Zero();
      n[axis] = o[axis] >= 0.0 ? 1.0 : -1.0;
      return n;
    }
    case Primitive::Kind::ellipsoid: {
      Vec3 n;
      for (int k = 0; k < 3; ++k) n[k] = o[k] / (primitive.radii[k] * primitive.radii[k]);
      const double norm = n.norm();
      return norm > 0.0 ? Vec3(n / norm) : Vec3(0.0, -1.0, 0.0);
    }
    case Primitive::Kind::union_of: {
      for (const auto& part : primitive.parts)
        if (primitive_contains(part, o)) return primitive_normal(part, o);
      return primitive_normal(primitive.parts.empty() ? Primitive() : primitive.parts.front(), o);
    }
  }
  return Vec3(0.0, -1.0, 0.0);
}

void SceneSpec::validate() const {
  if (objects.empty()) throw std::invalid_argument("SceneSpec: empty scene");
  if (image_width <= 0 || image_height <= 0)
    throw std::invalid_argument("SceneSpec: image dimensions must be positive");
  if (gt_samples_per_ray < 2)
    throw std::invalid_argument("SceneSpec: gt_samples_per_ray must be >= 2");
  if (!(sigma_max > 0.0)) throw std::invalid_argument("SceneSpec: sigma_max must be > 0");
  if (noise.outlier_fraction < 0.0 || noise.outlier_fraction > 1.0)
    throw std::invalid_argument("SceneSpec: outlier_fraction must lie in [0, 1]");
  if (lidar.dropout < 0.0 || lidar.dropout > 1.0)
    throw std::invalid_argument("SceneSpec: lidar dropout must lie in [0, 1]");
}

std::vector<GeneratedObject> generate(const SceneSpec& spec, int threads) {
  spec.validate();
  std::vector<GeneratedObject> out(spec.objects.size());
  parallel_for(static_cast<int>(spec.objects.size()), threads,
               [&](int i) { out[i] = generate_object(spec, i); });
  return out;
}

}  // namespace nocsloc
