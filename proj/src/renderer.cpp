// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#include "nocsloc/renderer.hpp"

#include <cmath>
#include <stdexcept>

#include "nocsloc/parallel.hpp"
#include "nocsloc/rng.hpp"

namespace nocsloc {

void RenderConfig::validate() const {
  if (samples_per_ray < 2) throw std::invalid_argument("RenderConfig: samples_per_ray must be >= 2");
  if (!(occupancy_epsilon > 0.0 && occupancy_epsilon < 1.0))
    throw std::invalid_argument("RenderConfig: occupancy_epsilon must lie in (0, 1)");
}

RenderedPixel render_ray(const ShapeInstance& shape, const ShapeInstance& color, const Ray& ray,
                         const Box3D& box, const RenderConfig& cfg, uint64_t jitter_seed,
                         RayTape* tape, bool want_color) {
  cfg.validate();
  RenderedPixel out;
  if (tape) *tape = RayTape{};

  const auto span = ray_box_intersect(ray, box);
  if (!span) {
    if (tape) tape->pixel = out;
    return out;
  }

  const int n = cfg.samples_per_ray;
  const double delta = (span->far - span->near) / n;
  Rng jitter_rng = Rng(jitter_seed);

  // Sample positions: bin midpoints, or stratified offsets when jittered.
  const Mat3 Rt = box.pose.rotation().transpose();
  const Vec3 origin_obj = Rt * (ray.origin - box.pose.t);
  const Vec3 dir_obj = Rt * ray.dir;
  const Vec3 inv_size(1.0 / box.size.l, 1.0 / box.size.h, 1.0 / box.size.w);

  std::vector<Vec3> nocs_points(n);
  MatX shape_features(shape.composed.shape().query_dim(), n);
  std::vector<QueryFootprint> shape_fp;
  if (tape) shape_fp.resize(n);
  VecX feature_buffer;
  for (int j = 0; j < n; ++j) {
    const double offset = cfg.stratified_jitter ? jitter_rng.uniform01() : 0.5;
    const double gamma = span->near + (j + offset) * delta;
    const Vec3 p_obj = origin_obj + gamma * dir_obj;
    nocs_points[j] = p_obj.cwiseProduct(inv_size);
    const Vec3 u = nocs_points[j] + Vec3::Constant(0.5);
    shape.composed.query(u, feature_buffer, tape ? &shape_fp[j] : nullptr);
    shape_features.col(j) = feature_buffer;
  }

  VecX sigma;
  MatX shape_color_unused;
  shape.model->decoder.forward(shape_features, sigma, shape_color_unused,
                               tape ? &tape->shape_tape : nullptr);

  MatX colors;
  if (want_color) {
    MatX color_features(color.composed.shape().query_dim(), n);
    std::vector<QueryFootprint> color_fp;
    if (tape) color_fp.resize(n);
    for (int j = 0; j < n; ++j) {
      const Vec3 u = nocs_points[j] + Vec3::Constant(0.5);
      color.composed.query(u, feature_buffer, tape ? &color_fp[j] : nullptr);
      color_features.col(j) = feature_buffer;
    }
    VecX color_sigma_unused;
    color.model->decoder.forward(color_features, color_sigma_unused, colors,
                                 tape ? &tape->color_tape : nullptr);
    if (tape) tape->color_footprints = std::move(color_fp);
  }

  VecX transmittance(n), alpha(n);
  double trans = 1.0;
  double m = 0.0;
  Vec3 c_acc = Vec3::Zero();
  Vec3 nocs_acc = Vec3::Zero();
  for (int j = 0; j < n; ++j) {
    const double decay = std::exp(-sigma[j] * delta);
    transmittance[j] = trans;
    alpha[j] = 1.0 - decay;
    const double w = trans * alpha[j];
    m += w;
    if (want_color) c_acc += w * colors.col(j);
    nocs_acc += w * nocs_points[j];
    trans *= decay;
  }

  out.hit = true;
  out.occupancy = m;
  out.color = c_acc;
  if (m >= cfg.occupancy_epsilon) {
    out.nocs = nocs_acc / m;
    out.nocs_valid = true;
  }

  if (tape) {
    tape->hit = true;
    tape->color_evaluated = want_color;
    tape->delta = delta;
    tape->samples = n;
    tape->nocs_points = std::move(nocs_points);
    tape->sigma = std::move(sigma);
    tape->transmittance = std::move(transmittance);
    tape->alpha = std::move(alpha);
    if (want_color) tape->color = std::move(colors);
    tape->shape_footprints = std::move(shape_fp);
    tape->pixel = out;
  }
  return out;
}

void render_ray_grad(const RayTape& tape, const RayAdjoint& adjoint, const ShapeInstance& shape,
                     const ShapeInstance& color, ModelGrad& shape_grad, ModelGrad& color_grad,
                     VecX* d_z_shape, VecX* d_z_color) {
  if (!tape.hit) return;  // a miss has no parameter dependence
  const int n = tape.samples;
  const double delta = tape.delta;
  const RenderedPixel& px = tape.pixel;

  double dm = adjoint.d_occupancy;
  Vec3 d_nocs_sum = Vec3::Zero();
  if (px.nocs_valid) {
    // o = S / m: quotient rule folds the m-path into dm.
    d_nocs_sum = adjoint.d_nocs / px.occupancy;
    dm -= px.nocs.dot(adjoint.d_nocs) / px.occupancy;
  }

  const bool has_color = tape.color_evaluated;

  // Per-sample weight adjoints, then density adjoints via the suffix
  // relation d w_k / d sigma_j = -delta * w_k for k > j.
  VecX dw(n);
  for (int j = 0; j < n; ++j) {
    double v = dm + tape.nocs_points[j].dot(d_nocs_sum);
    if (has_color) v += tape.color.col(j).dot(adjoint.d_color);
    dw[j] = v;
  }

  VecX d_sigma(n);
  double suffix = 0.0;  // sum_{k>j} dw_k * w_k
  for (int j = n - 1; j >= 0; --j) {
    const double w = tape.transmittance[j] * tape.alpha[j];
    d_sigma[j] = dw[j] * tape.transmittance[j] * (1.0 - tape.alpha[j]) * delta - delta * suffix;
    suffix += dw[j] * w;
  }

  MatX zero_color = MatX::Zero(3, n);
  MatX d_shape_features;
  shape.model->decoder.backward(tape.shape_tape, d_sigma, zero_color, shape_grad.decoder,
                                &d_shape_features);
  for (int j = 0; j < n; ++j)
    scatter_instance_grad(shape, tape.shape_footprints[j], d_shape_features.col(j), shape_grad,
                          d_z_shape);

  if (has_color && (adjoint.d_color.squaredNorm() > 0.0)) {
    MatX d_colors(3, n);
    for (int j = 0; j < n; ++j)
      d_colors.col(j) = tape.transmittance[j] * tape.alpha[j] * adjoint.d_color;
    VecX zero_sigma = VecX::Zero(n);
    MatX d_color_features;
    color.model->decoder.backward(tape.color_tape, zero_sigma, d_colors, color_grad.decoder,
                                  &d_color_features);
    for (int j = 0; j < n; ++j)
      scatter_instance_grad(color, tape.color_footprints[j], d_color_features.col(j), color_grad,
                            d_z_color);
  }
}

RenderedMaps render_object(const ShapeInstance& shape, const ShapeInstance& color,
                           const Box3D& box, const CameraIntrinsics& camera, const CropRect& crop,
                           std::span<const PixelRef> pixels, const RenderConfig& cfg,
                           uint64_t seed, int threads) {
  if (pixels.empty()) throw std::invalid_argument("render_object: empty pixel list");
  cfg.validate();
  RenderedMaps maps;
  maps.crop = crop;
  maps.rendered.assign(static_cast<size_t>(crop.width) * crop.height, 0);
  maps.pixels.assign(static_cast<size_t>(crop.width) * crop.height, RenderedPixel{});

  const Rng base(seed);
  parallel_for(static_cast<int>(pixels.size()), threads, [&](int i) {
    const PixelRef& px = pixels[i];
    if (!crop.contains(px.x, px.y))
      throw std::out_of_range("render_object: pixel outside the crop");
    const Ray ray = pixel_ray(crop.x0 + px.x + 0.5, crop.y0 + px.y + 0.5, camera);
    const uint64_t ray_seed =
        base.fork(static_cast<uint64_t>(px.y) * crop.width + px.x).seed();
    const size_t slot = static_cast<size_t>(px.y) * crop.width + px.x;
    maps.pixels[slot] = render_ray(shape, color, ray, box, cfg, ray_seed);
    maps.rendered[slot] = 1;
  });
  return maps;
}

RenderedMaps render_crop(const ShapeInstance& shape, const ShapeInstance& color, const Box3D& box,
                         const CameraIntrinsics& camera, const CropRect& crop,
                         const RenderConfig& cfg, uint64_t seed, int threads) {
  std::vector<PixelRef> pixels;
  pixels.reserve(crop.pixel_count());
  for (int y = 0; y < crop.height; ++y)
    for (int x = 0; x < crop.width; ++x) pixels.push_back({x, y});
  return render_object(shape, color, box, camera, crop, pixels, cfg, seed, threads);
}

}  // namespace nocsloc
