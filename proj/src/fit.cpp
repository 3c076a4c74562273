// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#include "nocsloc/fit.hpp"

#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "nocsloc/parallel.hpp"

namespace nocsloc {

namespace {

// Stream tags keeping the per-iteration draws independent.
enum : uint64_t {
  kStreamRays = 0x0A,
  kStreamEpsShape = 0x0B,
  kStreamEpsColor = 0x0C,
  kStreamDense = 0x0D,
  kStreamJitter = 0x0E,
};

struct RayDraw {
  int x = 0;
  int y = 0;
  MaskLabel label = MaskLabel::unknown;
  int lidar_index = -1;   // into TrainingObject::lidar_points
  int licomp_index = -1;  // into TrainingObject::completion_points
};

struct ObjectAccum {
  ModelGrad shape;
  ModelGrad color;
  VecX d_z_shape, d_z_color;
  FitIterationStats stats;
  int lidar_skipped = 0;
  int licomp_skipped = 0;
};

std::vector<RayDraw> draw_rays(const TrainingObject& obj, const FitConfig& cfg, Rng rng) {
  std::vector<int> fg, bg;
  const int n_pixels = obj.crop.pixel_count();
  fg.reserve(n_pixels / 2);
  bg.reserve(n_pixels / 2);
  for (int i = 0; i < n_pixels; ++i) {
    if (obj.mask.labels[i] == MaskLabel::foreground) fg.push_back(i);
    else if (obj.mask.labels[i] == MaskLabel::background) bg.push_back(i);
  }

  // 50% foreground, 25% background, 25% uniform over the crop. Buckets
  // with no candidate pixels fall back to the uniform draw.
  int n_fg = cfg.rays_per_object / 2;
  int n_bg = cfg.rays_per_object / 4;
  if (fg.empty()) n_fg = 0;
  if (bg.empty()) n_bg = 0;
  const int n_uniform = cfg.rays_per_object - n_fg - n_bg;

  std::unordered_map<int, int> lidar_at, licomp_at;
  for (size_t i = 0; i < obj.lidar_points.size(); ++i)
    lidar_at[obj.lidar_points[i].y * obj.crop.width + obj.lidar_points[i].x] =
        static_cast<int>(i);
  for (size_t i = 0; i < obj.completion_points.size(); ++i)
    licomp_at[obj.completion_points[i].y * obj.crop.width + obj.completion_points[i].x] =
        static_cast<int>(i);

  std::vector<RayDraw> draws;
  draws.reserve(cfg.rays_per_object);
  auto push_pixel = [&](int flat) {
    RayDraw d;
    d.x = flat % obj.crop.width;
    d.y = flat / obj.crop.width;
    d.label = obj.mask.labels[flat];
    if (auto it = lidar_at.find(flat); it != lidar_at.end()) d.lidar_index = it->second;
    if (auto it = licomp_at.find(flat); it != licomp_at.end()) d.licomp_index = it->second;
    draws.push_back(d);
  };
  for (int i = 0; i < n_fg; ++i) push_pixel(fg[rng.uniform_int(static_cast<int>(fg.size()))]);
  for (int i = 0; i < n_bg; ++i) push_pixel(bg[rng.uniform_int(static_cast<int>(bg.size()))]);
  for (int i = 0; i < n_uniform; ++i) push_pixel(rng.uniform_int(n_pixels));
  return draws;
}

void evaluate_object(const TrainingObject& obj, int obj_index,
                     const DeformableShapeModel& shape_model,
                     const DeformableShapeModel& color_model,
                     const DeformationCoefficients& coeff_shape,
                     const DeformationCoefficients& coeff_color, const FitConfig& cfg,
                     int iteration, bool want_gradients, ObjectAccum& accum) {
  const Rng base(cfg.seed);
  const std::vector<RayDraw> draws =
      draw_rays(obj, cfg, base.fork(kStreamRays).fork(iteration).fork(obj_index));

  const VecX z_shape = coeff_shape.sample();
  const VecX z_color = coeff_color.sample();
  const ShapeInstance shape_inst = make_instance(shape_model, z_shape);
  const ShapeInstance color_inst = make_instance(color_model, z_color);

  RenderConfig rcfg;
  rcfg.samples_per_ray = cfg.samples_per_ray;
  rcfg.stratified_jitter = cfg.stratified_jitter;
  rcfg.occupancy_epsilon = cfg.occupancy_epsilon;

  const bool need_rgb = cfg.weight_rgb > 0.0;
  const Rng jitter_base = base.fork(kStreamJitter).fork(iteration).fork(obj_index);

  const int n = static_cast<int>(draws.size());
  std::vector<RayTape> tapes(want_gradients ? n : 0);
  std::vector<RenderedPixel> rendered(n);
  for (int i = 0; i < n; ++i) {
    const RayDraw& d = draws[i];
    if (d.label == MaskLabel::unknown) continue;  // drawn but skipped by every loss
    const Ray ray =
        pixel_ray(obj.crop.x0 + d.x + 0.5, obj.crop.y0 + d.y + 0.5, obj.camera);
    const bool want_color = need_rgb && d.label == MaskLabel::foreground;
    rendered[i] = render_ray(shape_inst, color_inst, ray, obj.gt_box, rcfg,
                             jitter_base.fork(i).seed(), want_gradients ? &tapes[i] : nullptr,
                             want_color);
  }

  // Occupancy over labeled rays.
  std::vector<double> occupancy(n);
  std::vector<MaskLabel> labels(n);
  for (int i = 0; i < n; ++i) {
    occupancy[i] = rendered[i].occupancy;
    labels[i] = draws[i].label;
  }
  std::vector<double> d_occ(want_gradients ? n : 0, 0.0);
  accum.stats.occupancy =
      loss_occupancy(occupancy, labels, want_gradients ? std::span<double>(d_occ) : std::span<double>{})
          .value;

  // RGB over foreground rays.
  MatX rgb_rendered(3, n), rgb_target(3, n);
  for (int i = 0; i < n; ++i) {
    rgb_rendered.col(i) = rendered[i].color;
    rgb_target.col(i) =
        draws[i].label == MaskLabel::foreground ? obj.color_at(draws[i].x, draws[i].y) : Vec3::Zero();
  }
  MatX d_rgb;
  if (need_rgb) {
    accum.stats.rgb =
        loss_rgb(rgb_rendered, rgb_target, labels, want_gradients ? &d_rgb : nullptr).value;
  }

  // Sparse NOCS supervision on the sampled rays that carry targets.
  auto nocs_loss = [&](auto index_of, const std::vector<NocsTarget>& points, int& skipped,
                       std::vector<int>& ray_of, MatX* d_out) {
    std::vector<RenderedPixel> sub;
    std::vector<Vec3> targets;
    for (int i = 0; i < n; ++i) {
      const int idx = index_of(draws[i]);
      if (idx < 0 || draws[i].label != MaskLabel::foreground) continue;
      sub.push_back(rendered[i]);
      targets.push_back(points[idx].nocs);
      ray_of.push_back(i);
    }
    const LossValue lv = loss_lidar_nocs(sub, targets, d_out);
    skipped = lv.skipped;
    return lv.value;
  };
  std::vector<int> lidar_rays, licomp_rays;
  MatX d_lidar, d_licomp;
  if (cfg.weight_lidar > 0.0 && !obj.lidar_points.empty())
    accum.stats.lidar = nocs_loss([](const RayDraw& d) { return d.lidar_index; },
                                  obj.lidar_points, accum.lidar_skipped, lidar_rays,
                                  want_gradients ? &d_lidar : nullptr);
  if (cfg.weight_licomp > 0.0 && !obj.completion_points.empty())
    accum.stats.licomp = nocs_loss([](const RayDraw& d) { return d.licomp_index; },
                                   obj.completion_points, accum.licomp_skipped, licomp_rays,
                                   want_gradients ? &d_licomp : nullptr);

  // Backward through every rendered ray.
  if (want_gradients) {
    std::vector<RayAdjoint> adjoints(n);
    for (int i = 0; i < n; ++i) adjoints[i].d_occupancy = cfg.weight_occupancy * d_occ[i];
    if (need_rgb && d_rgb.size() > 0)
      for (int i = 0; i < n; ++i) adjoints[i].d_color = cfg.weight_rgb * d_rgb.col(i);
    for (size_t k = 0; k < lidar_rays.size(); ++k)
      adjoints[lidar_rays[k]].d_nocs += cfg.weight_lidar * d_lidar.col(static_cast<Eigen::Index>(k));
    for (size_t k = 0; k < licomp_rays.size(); ++k)
      adjoints[licomp_rays[k]].d_nocs +=
          cfg.weight_licomp * d_licomp.col(static_cast<Eigen::Index>(k));

    for (int i = 0; i < n; ++i) {
      if (draws[i].label == MaskLabel::unknown) continue;
      render_ray_grad(tapes[i], adjoints[i], shape_inst, color_inst, accum.shape, accum.color,
                      &accum.d_z_shape, &accum.d_z_color);
    }
  }

  if (cfg.dense_prior_active()) {
    const uint64_t dense_seed = base.fork(kStreamDense).fork(iteration).fork(obj_index).seed();
    accum.stats.dense = loss_dense_prior(
        shape_inst, cfg.dense_prior_samples, cfg.dense_prior_interval, dense_seed,
        want_gradients ? &accum.shape : nullptr, want_gradients ? &accum.d_z_shape : nullptr,
        cfg.weight_dense);
  }
}

struct AdamBuf {
  VecX m, v;
  explicit AdamBuf(Eigen::Index n) : m(VecX::Zero(n)), v(VecX::Zero(n)) {}
};

void adam_update(double* p, const double* g, AdamBuf& s, Eigen::Index n, double lr, int t) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (Eigen::Index i = 0; i < n; ++i) {
    s.m[i] = beta1 * s.m[i] + (1.0 - beta1) * g[i];
    s.v[i] = beta2 * s.v[i] + (1.0 - beta2) * g[i] * g[i];
    p[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps);
  }
}

}  // namespace

TriMask TriMask::filled(int width, int height, MaskLabel label) {
  TriMask m;
  m.width = width;
  m.height = height;
  m.labels.assign(static_cast<size_t>(width) * height, label);
  return m;
}

void FitConfig::validate() const {
  if (weight_occupancy < 0 || weight_rgb < 0 || weight_lidar < 0 || weight_licomp < 0 ||
      weight_kl < 0 || weight_dense < 0)
    throw std::invalid_argument("FitConfig: loss weights must be >= 0");
  if (rays_per_object < 1) throw std::invalid_argument("FitConfig: rays_per_object must be >= 1");
  if (dense_prior_samples < 1)
    throw std::invalid_argument("FitConfig: dense_prior_samples must be >= 1");
  if (!(dense_prior_interval > 0)) throw std::invalid_argument("FitConfig: interval must be > 0");
  if (iterations < 0) throw std::invalid_argument("FitConfig: iterations must be >= 0");
  if (samples_per_ray < 2) throw std::invalid_argument("FitConfig: samples_per_ray must be >= 2");
  if (threads < 1) throw std::invalid_argument("FitConfig: threads must be >= 1");
}

LossValue loss_occupancy(std::span<const double> occupancy, std::span<const MaskLabel> labels,
                         std::span<double> d_occupancy) {
  if (occupancy.size() != labels.size())
    throw std::invalid_argument("loss_occupancy: size mismatch");
  double sum = 0.0;
  int count = 0;
  for (size_t i = 0; i < occupancy.size(); ++i) {
    if (labels[i] == MaskLabel::unknown) continue;
    const double target = labels[i] == MaskLabel::foreground ? 1.0 : 0.0;
    const double r = occupancy[i] - target;
    sum += r * r;
    ++count;
  }
  LossValue out;
  if (count == 0) return out;  // no labeled rays: defined as 0 with zero gradient
  out.value = sum / count;
  if (!d_occupancy.empty()) {
    for (size_t i = 0; i < occupancy.size(); ++i) {
      if (labels[i] == MaskLabel::unknown) continue;
      const double target = labels[i] == MaskLabel::foreground ? 1.0 : 0.0;
      d_occupancy[i] = 2.0 * (occupancy[i] - target) / count;
    }
  }
  return out;
}

LossValue loss_rgb(const MatX& rendered, const MatX& target, std::span<const MaskLabel> labels,
                   MatX* d_rendered) {
  if (rendered.cols() != target.cols() || rendered.cols() != static_cast<Eigen::Index>(labels.size()))
    throw std::invalid_argument("loss_rgb: size mismatch");
  double sum = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < rendered.cols(); ++i) {
    if (labels[i] != MaskLabel::foreground) continue;
    sum += (rendered.col(i) - target.col(i)).squaredNorm();
    ++count;
  }
  LossValue out;
  if (d_rendered) d_rendered->setZero(3, rendered.cols());
  if (count == 0) return out;
  out.value = sum / (3.0 * count);
  if (d_rendered) {
    for (Eigen::Index i = 0; i < rendered.cols(); ++i) {
      if (labels[i] != MaskLabel::foreground) continue;
      d_rendered->col(i) = 2.0 * (rendered.col(i) - target.col(i)) / (3.0 * count);
    }
  }
  return out;
}

LossValue loss_lidar_nocs(std::span<const RenderedPixel> rendered, std::span<const Vec3> targets,
                          MatX* d_nocs) {
  if (rendered.size() != targets.size())
    throw std::invalid_argument("loss_lidar_nocs: size mismatch");
  LossValue out;
  int valid = 0;
  for (const auto& px : rendered)
    if (px.nocs_valid) ++valid;
  out.skipped = static_cast<int>(rendered.size()) - valid;
  if (d_nocs) d_nocs->setZero(3, static_cast<Eigen::Index>(rendered.size()));
  if (valid == 0) return out;
  double sum = 0.0;
  for (size_t i = 0; i < rendered.size(); ++i) {
    if (!rendered[i].nocs_valid) continue;
    sum += (rendered[i].nocs - targets[i]).squaredNorm();
    if (d_nocs)
      d_nocs->col(static_cast<Eigen::Index>(i)) =
          2.0 * (rendered[i].nocs - targets[i]) / (3.0 * valid);
  }
  out.value = sum / (3.0 * valid);
  return out;
}

double loss_kl(const VecX& mean, const VecX& log_variance, VecX* d_mean, VecX* d_log_variance) {
  if (mean.size() != log_variance.size()) throw std::invalid_argument("loss_kl: size mismatch");
  double value = 0.0;
  if (d_mean) d_mean->setZero(mean.size());
  if (d_log_variance) d_log_variance->setZero(mean.size());
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    const double var = std::exp(log_variance[i]);
    value += 0.5 * (mean[i] * mean[i] + var - log_variance[i] - 1.0);
    if (d_mean) (*d_mean)[i] = mean[i];
    if (d_log_variance) (*d_log_variance)[i] = 0.5 * (var - 1.0);
  }
  return value;
}

double loss_dense_prior(const ShapeInstance& shape, int samples, double interval, uint64_t seed,
                        ModelGrad* grad, VecX* d_z, double grad_scale) {
  if (samples < 1) throw std::invalid_argument("loss_dense_prior: samples must be >= 1");
  Rng rng(seed);
  const int qdim = shape.composed.shape().query_dim();
  MatX features(qdim, samples);
  std::vector<QueryFootprint> footprints(grad ? samples : 0);
  VecX buffer;
  for (int s = 0; s < samples; ++s) {
    const Vec3 u(rng.uniform01(), rng.uniform01(), rng.uniform01());
    shape.composed.query(u, buffer, grad ? &footprints[s] : nullptr);
    features.col(s) = buffer;
  }
  MlpDecoder::ForwardTape tape;
  VecX sigma;
  MatX color_unused;
  shape.model->decoder.forward(features, sigma, color_unused, grad ? &tape : nullptr);

  double value = 0.0;
  VecX d_sigma(grad ? samples : 0);
  for (int s = 0; s < samples; ++s) {
    const double e = std::exp(-sigma[s] * interval);
    value += e;
    if (grad) d_sigma[s] = grad_scale * (-interval) * e / samples;
  }
  value /= samples;

  if (grad) {
    MatX zero_color = MatX::Zero(3, samples);
    MatX d_features;
    shape.model->decoder.backward(tape, d_sigma, zero_color, grad->decoder, &d_features);
    for (int s = 0; s < samples; ++s)
      scatter_instance_grad(shape, footprints[s], d_features.col(s), *grad, d_z);
  }
  return value;
}

FitIterationStats evaluate_fit_iteration(const std::vector<TrainingObject>& objects,
                                         const DeformableShapeModel& shape_model,
                                         const DeformableShapeModel& color_model,
                                         const std::vector<DeformationCoefficients>& shape_coeffs,
                                         const std::vector<DeformationCoefficients>& color_coeffs,
                                         const FitConfig& cfg, int iteration,
                                         FitGradients* gradients,
                                         std::vector<ObjectEvalInfo>* per_object) {
  cfg.validate();
  if (objects.empty()) throw std::invalid_argument("evaluate_fit_iteration: no objects");
  if (shape_coeffs.size() != objects.size() || color_coeffs.size() != objects.size())
    throw std::invalid_argument("evaluate_fit_iteration: coefficient count mismatch");

  const int n_obj = static_cast<int>(objects.size());
  const bool want_gradients = gradients != nullptr;
  std::vector<ObjectAccum> accums(n_obj);
  for (auto& a : accums) {
    if (want_gradients) {
      a.shape = ModelGrad(shape_model);
      a.color = ModelGrad(color_model);
    }
    a.d_z_shape = VecX::Zero(shape_model.num_bases());
    a.d_z_color = VecX::Zero(color_model.num_bases());
  }

  parallel_for(n_obj, cfg.threads, [&](int i) {
    evaluate_object(objects[i], i, shape_model, color_model, shape_coeffs[i], color_coeffs[i],
                    cfg, iteration, want_gradients, accums[i]);
  });

  if (gradients) {
    gradients->shape = ModelGrad(shape_model);
    gradients->color = ModelGrad(color_model);
    gradients->d_shape_mean.assign(n_obj, VecX());
    gradients->d_shape_log_variance.assign(n_obj, VecX());
    gradients->d_color_mean.assign(n_obj, VecX());
    gradients->d_color_log_variance.assign(n_obj, VecX());
  }
  if (per_object) per_object->assign(n_obj, ObjectEvalInfo{});

  FitIterationStats stats;
  const double inv_n = 1.0 / n_obj;
  for (int i = 0; i < n_obj; ++i) {
    ObjectAccum& a = accums[i];

    // KL regularization of both coefficient sets.
    VecX d_mean_s, d_lv_s, d_mean_c, d_lv_c;
    const double kl_s = loss_kl(shape_coeffs[i].mean, shape_coeffs[i].log_variance,
                                want_gradients ? &d_mean_s : nullptr,
                                want_gradients ? &d_lv_s : nullptr);
    const double kl_c = loss_kl(color_coeffs[i].mean, color_coeffs[i].log_variance,
                                want_gradients ? &d_mean_c : nullptr,
                                want_gradients ? &d_lv_c : nullptr);
    a.stats.kl = kl_s + kl_c;
    a.stats.total = cfg.weight_occupancy * a.stats.occupancy + cfg.weight_rgb * a.stats.rgb +
                    cfg.weight_lidar * a.stats.lidar + cfg.weight_licomp * a.stats.licomp +
                    cfg.weight_kl * a.stats.kl + cfg.weight_dense * a.stats.dense;

    stats.occupancy += inv_n * a.stats.occupancy;
    stats.rgb += inv_n * a.stats.rgb;
    stats.lidar += inv_n * a.stats.lidar;
    stats.licomp += inv_n * a.stats.licomp;
    stats.kl += inv_n * a.stats.kl;
    stats.dense += inv_n * a.stats.dense;
    stats.total += inv_n * a.stats.total;

    if (per_object) {
      (*per_object)[i].stats = a.stats;
      (*per_object)[i].grid_grad_squared_norm =
          a.shape.canonical.squared_norm() +
          [&] {
            double s = 0.0;
            for (const auto& b : a.shape.bases) s += b.squared_norm();
            return s;
          }();
      (*per_object)[i].lidar_skipped = a.lidar_skipped;
      (*per_object)[i].licomp_skipped = a.licomp_skipped;
    }

    if (!gradients) continue;

    // Deterministic merge in object order. Ineligible objects do not
    // touch the canonical grid or the bases.
    if (objects[i].basis_eligible) {
      gradients->shape.canonical.add_scaled(a.shape.canonical, inv_n);
      gradients->color.canonical.add_scaled(a.color.canonical, inv_n);
      for (int b = 0; b < shape_model.num_bases(); ++b)
        gradients->shape.bases[b].add_scaled(a.shape.bases[b], inv_n);
      for (int b = 0; b < color_model.num_bases(); ++b)
        gradients->color.bases[b].add_scaled(a.color.bases[b], inv_n);
    }
    gradients->shape.decoder.add_scaled(a.shape.decoder, inv_n);
    gradients->color.decoder.add_scaled(a.color.decoder, inv_n);

    // Reparameterization: z = mean + exp(lv/2) * eps.
    const VecX scale_s = (shape_coeffs[i].log_variance.array() / 2.0).exp();
    const VecX scale_c = (color_coeffs[i].log_variance.array() / 2.0).exp();
    gradients->d_shape_mean[i] = inv_n * (a.d_z_shape + cfg.weight_kl * d_mean_s);
    gradients->d_shape_log_variance[i] =
        inv_n * (0.5 * a.d_z_shape.cwiseProduct(shape_coeffs[i].epsilon).cwiseProduct(scale_s) +
                 cfg.weight_kl * d_lv_s);
    gradients->d_color_mean[i] = inv_n * (a.d_z_color + cfg.weight_kl * d_mean_c);
    gradients->d_color_log_variance[i] =
        inv_n * (0.5 * a.d_z_color.cwiseProduct(color_coeffs[i].epsilon).cwiseProduct(scale_c) +
                 cfg.weight_kl * d_lv_c);
  }
  return stats;
}

std::string FitReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "iteration,occupancy,rgb,lidar,licomp,kl,dense,total\n";
  for (size_t i = 0; i < iterations.size(); ++i) {
    const FitIterationStats& s = iterations[i];
    os << i << ',' << s.occupancy << ',' << s.rgb << ',' << s.lidar << ',' << s.licomp << ','
       << s.kl << ',' << s.dense << ',' << s.total << '\n';
  }
  return os.str();
}

FitResult fit(const std::vector<TrainingObject>& objects, DeformableShapeModel shape_model,
              DeformableShapeModel color_model, const FitConfig& cfg) {
  cfg.validate();
  if (objects.empty()) throw std::invalid_argument("fit: no objects");
  const auto t_start = std::chrono::steady_clock::now();

  const int n_obj = static_cast<int>(objects.size());
  std::vector<DeformationCoefficients> shape_coeffs(
      n_obj, DeformationCoefficients::zeros(shape_model.num_bases()));
  std::vector<DeformationCoefficients> color_coeffs(
      n_obj, DeformationCoefficients::zeros(color_model.num_bases()));

  // Adam slots: [canonical levels][bases levels][decoder] per model,
  // then per-object coefficients.
  auto make_grid_states = [&](const DeformableShapeModel& m) {
    std::vector<AdamBuf> states;
    for (int l = 0; l < m.canonical.num_levels(); ++l)
      states.emplace_back(m.canonical.level(l).size());
    for (const auto& b : m.bases)
      for (int l = 0; l < b.num_levels(); ++l) states.emplace_back(b.level(l).size());
    return states;
  };
  auto make_decoder_states = [&](const MlpDecoder& d) {
    std::vector<AdamBuf> states;
    for (int i = 0; i < d.num_layers(); ++i) {
      states.emplace_back(d.weight(i).size());
      states.emplace_back(d.bias(i).size());
    }
    return states;
  };
  std::vector<AdamBuf> shape_grid_adam = make_grid_states(shape_model);
  std::vector<AdamBuf> color_grid_adam = make_grid_states(color_model);
  std::vector<AdamBuf> shape_dec_adam = make_decoder_states(shape_model.decoder);
  std::vector<AdamBuf> color_dec_adam = make_decoder_states(color_model.decoder);
  std::vector<AdamBuf> coeff_adam;
  for (int i = 0; i < n_obj; ++i) {
    coeff_adam.emplace_back(shape_model.num_bases());  // shape mean
    coeff_adam.emplace_back(shape_model.num_bases());  // shape log var
    coeff_adam.emplace_back(color_model.num_bases());  // color mean
    coeff_adam.emplace_back(color_model.num_bases());  // color log var
  }

  auto check_finite = [](double v, const char* name, int iter) {
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << "fit: " << name << " loss became non-finite at iteration " << iter;
      throw NumericalError(os.str());
    }
  };

  FitResult result;
  result.report.iterations.reserve(cfg.iterations);
  const Rng base(cfg.seed);

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    // Fresh reparameterization draw per iteration and object.
    for (int i = 0; i < n_obj; ++i) {
      Rng eps_s = base.fork(kStreamEpsShape).fork(iter).fork(i);
      Rng eps_c = base.fork(kStreamEpsColor).fork(iter).fork(i);
      shape_coeffs[i].resample(eps_s);
      color_coeffs[i].resample(eps_c);
    }

    FitGradients grads;
    const FitIterationStats stats = evaluate_fit_iteration(
        objects, shape_model, color_model, shape_coeffs, color_coeffs, cfg, iter, &grads);
    check_finite(stats.occupancy, "occupancy", iter);
    check_finite(stats.rgb, "rgb", iter);
    check_finite(stats.lidar, "lidar", iter);
    check_finite(stats.licomp, "licomp", iter);
    check_finite(stats.kl, "kl", iter);
    check_finite(stats.dense, "dense", iter);
    check_finite(stats.total, "total", iter);
    result.report.iterations.push_back(stats);

    const int t = iter + 1;
    auto update_grid_model = [&](DeformableShapeModel& m, const ModelGrad& g,
                                 std::vector<AdamBuf>& states) {
      int s = 0;
      for (int l = 0; l < m.canonical.num_levels(); ++l, ++s)
        adam_update(m.canonical.level(l).data(), g.canonical.level(l).data(), states[s],
                    m.canonical.level(l).size(), cfg.lr_grid, t);
      for (int b = 0; b < m.num_bases(); ++b)
        for (int l = 0; l < m.bases[b].num_levels(); ++l, ++s)
          adam_update(m.bases[b].level(l).data(), g.bases[b].level(l).data(), states[s],
                      m.bases[b].level(l).size(), cfg.lr_grid, t);
    };
    update_grid_model(shape_model, grads.shape, shape_grid_adam);
    update_grid_model(color_model, grads.color, color_grid_adam);

    auto update_decoder = [&](MlpDecoder& d, const MlpDecoder& g, std::vector<AdamBuf>& states) {
      int s = 0;
      for (int i = 0; i < d.num_layers(); ++i) {
        adam_update(d.weight(i).data(), g.weight(i).data(), states[s++], d.weight(i).size(),
                    cfg.lr_decoder, t);
        adam_update(d.bias(i).data(), g.bias(i).data(), states[s++], d.bias(i).size(),
                    cfg.lr_decoder, t);
      }
    };
    update_decoder(shape_model.decoder, grads.shape.decoder, shape_dec_adam);
    update_decoder(color_model.decoder, grads.color.decoder, color_dec_adam);

    int slot = 0;
    for (int i = 0; i < n_obj; ++i) {
      adam_update(shape_coeffs[i].mean.data(), grads.d_shape_mean[i].data(), coeff_adam[slot++],
                  shape_coeffs[i].mean.size(), cfg.lr_coeff, t);
      adam_update(shape_coeffs[i].log_variance.data(), grads.d_shape_log_variance[i].data(),
                  coeff_adam[slot++], shape_coeffs[i].log_variance.size(), cfg.lr_coeff, t);
      adam_update(color_coeffs[i].mean.data(), grads.d_color_mean[i].data(), coeff_adam[slot++],
                  color_coeffs[i].mean.size(), cfg.lr_coeff, t);
      adam_update(color_coeffs[i].log_variance.data(), grads.d_color_log_variance[i].data(),
                  coeff_adam[slot++], color_coeffs[i].log_variance.size(), cfg.lr_coeff, t);
    }
  }

  result.shape_model = std::move(shape_model);
  result.color_model = std::move(color_model);
  result.shape_coeffs = std::move(shape_coeffs);
  result.color_coeffs = std::move(color_coeffs);

  result.report.final_coeff_mean_abs = VecX::Zero(result.shape_model.num_bases());
  for (const auto& c : result.shape_coeffs)
    result.report.final_coeff_mean_abs += c.mean.cwiseAbs() / n_obj;
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

}  // namespace nocsloc
