// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "nocsloc/geometry.hpp"
#include "nocsloc/grid.hpp"

namespace nocsloc {

struct RenderConfig {
  int samples_per_ray = 64;
  bool stratified_jitter = false;
  double occupancy_epsilon = 1e-3;  // below this the NOCS quotient is not trusted

  void validate() const;
};

struct RenderedPixel {
  double occupancy = 0.0;
  Vec3 color = Vec3::Zero();
  Vec3 nocs = Vec3::Zero();
  bool nocs_valid = false;
  bool hit = false;
};

// Forward record of one ray for the backward pass. Sample NOCS
// positions are fixed geometry, so only field values and compositing
// intermediates are kept.
struct RayTape {
  bool hit = false;
  bool color_evaluated = false;
  double delta = 0.0;
  int samples = 0;
  std::vector<Vec3> nocs_points;          // r^[gamma_j]
  VecX sigma;                             // decoded densities
  VecX transmittance;                     // T_j
  VecX alpha;                             // 1 - exp(-sigma_j * delta)
  MatX color;                             // 3 x N decoded colors
  MlpDecoder::ForwardTape shape_tape;
  MlpDecoder::ForwardTape color_tape;
  std::vector<QueryFootprint> shape_footprints;
  std::vector<QueryFootprint> color_footprints;
  RenderedPixel pixel;
};

// Emission-absorption compositing of density, color and NOCS along the
// ray clipped to the box:
//   T_j = exp(-sum_{k<j} sigma_k delta), w_j = T_j (1 - exp(-sigma_j delta)),
//   m = sum w_j, c = sum w_j c_j, o = sum w_j r_j / m  (valid when m >= eps).
// `jitter_seed` drives the stratified offsets when cfg.stratified_jitter
// is set; `want_color` skips the color field for rays that never feed a
// color loss.
RenderedPixel render_ray(const ShapeInstance& shape, const ShapeInstance& color, const Ray& ray,
                         const Box3D& box, const RenderConfig& cfg, uint64_t jitter_seed = 0,
                         RayTape* tape = nullptr, bool want_color = true);

struct RayAdjoint {
  double d_occupancy = 0.0;
  Vec3 d_color = Vec3::Zero();
  Vec3 d_nocs = Vec3::Zero();  // ignored when the pixel's NOCS is invalid
};

// Pullback of (m, c, o) adjoints through compositing, decode and grid
// interpolation. Accumulates into the per-model gradient buffers; the
// z buffers may be null.
void render_ray_grad(const RayTape& tape, const RayAdjoint& adjoint, const ShapeInstance& shape,
                     const ShapeInstance& color, ModelGrad& shape_grad, ModelGrad& color_grad,
                     VecX* d_z_shape, VecX* d_z_color);

// Pixel rectangle of an object crop in image coordinates. Pixel (x, y)
// of the crop has image-space center (x0 + x + 0.5, y0 + y + 0.5).
struct CropRect {
  int x0 = 0;
  int y0 = 0;
  int width = 0;
  int height = 0;

  int pixel_count() const { return width * height; }
  bool contains(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
};

struct PixelRef {
  int x = 0;
  int y = 0;
};

struct RenderedMaps {
  CropRect crop;
  std::vector<uint8_t> rendered;      // 1 where a pixel was produced
  std::vector<RenderedPixel> pixels;  // dense width*height

  const RenderedPixel& at(int x, int y) const { return pixels[y * crop.width + x]; }
  bool is_rendered(int x, int y) const { return rendered[y * crop.width + x] != 0; }
};

// Renders the listed crop pixels independently; deterministic given the
// seed regardless of thread count (per-ray jitter streams are derived
// from the pixel index).
RenderedMaps render_object(const ShapeInstance& shape, const ShapeInstance& color,
                           const Box3D& box, const CameraIntrinsics& camera, const CropRect& crop,
                           std::span<const PixelRef> pixels, const RenderConfig& cfg,
                           uint64_t seed = 0, int threads = 1);

// Convenience full-crop render.
RenderedMaps render_crop(const ShapeInstance& shape, const ShapeInstance& color, const Box3D& box,
                         const CameraIntrinsics& camera, const CropRect& crop,
                         const RenderConfig& cfg, uint64_t seed = 0, int threads = 1);

}  // namespace nocsloc
