// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>

#include "nocsloc/fit.hpp"
#include "nocsloc/synth.hpp"
#include "oracles.hpp"

using namespace nocsloc;

namespace {

GridShape tiny_shape() {
  GridShape shape;
  shape.resolutions = {2, 4};
  shape.feature_dim = 4;
  return shape;
}

// Small two-view scene used by the gradient checks.
SceneSpec tiny_scene(uint64_t seed, bool with_lidar) {
  SceneSpec spec;
  spec.camera = CameraIntrinsics(60.0, 60.0, 24.0, 24.0);
  spec.image_width = 48;
  spec.image_height = 48;
  spec.seed = seed;
  spec.gt_samples_per_ray = 256;
  if (with_lidar) {
    spec.lidar.sample_count = 40;
    spec.lidar.completion_stride = 7;
  }
  SynthObjectSpec a;
  a.primitive = Primitive::ellipsoid(Vec3(0.5, 0.42, 0.45));
  a.box = Box3D{Pose4Dof(0.4, Vec3(0.0, 0.0, 6.0)), ObjectSize(2.2, 1.4, 1.6)};
  SynthObjectSpec b = a;
  b.box.pose = Pose4Dof(-1.1, Vec3(0.3, 0.1, 7.0));
  spec.objects = {a, b};
  return spec;
}

FitConfig tiny_config(bool with_lidar) {
  FitConfig cfg;
  cfg.rays_per_object = 8;
  cfg.samples_per_ray = 4;
  cfg.dense_prior_samples = 16;
  cfg.seed = 5;
  cfg.stratified_jitter = true;
  if (with_lidar) {
    cfg.weight_dense = 0.0;
  } else {
    cfg.weight_lidar = 0.0;
    cfg.weight_licomp = 0.0;
    cfg.weight_dense = 0.1;
  }
  return cfg;
}

DeformableShapeModel constant_sigma_model(double sigma) {
  DeformableShapeModel model;
  model.canonical = LatentGrid(tiny_shape());
  model.decoder = MlpDecoder(tiny_shape().query_dim(), 16);
  // softplus^-1, stable for both small and large targets
  model.decoder.bias(3)[0] = sigma > 30.0 ? sigma : std::log(std::expm1(sigma));
  return model;
}

}  // namespace

TEST_SUITE("fit") {

TEST_CASE("loss_occupancy definition") {
  SUBCASE("perfect mask") {
    const double m[] = {1.0, 1.0, 0.0};
    const MaskLabel labels[] = {MaskLabel::foreground, MaskLabel::foreground,
                                MaskLabel::background};
    CHECK(loss_occupancy(m, labels).value == 0.0);
  }
  SUBCASE("single foreground ray") {
    const double m[] = {0.4};
    const MaskLabel labels[] = {MaskLabel::foreground};
    double grad[1] = {0.0};
    const LossValue lv = loss_occupancy(m, labels, grad);
    CHECK(lv.value == doctest::Approx(0.36));
    CHECK(grad[0] == doctest::Approx(2.0 * (0.4 - 1.0)));
  }
  SUBCASE("only unknown rays") {
    const double m[] = {0.3, 0.9};
    const MaskLabel labels[] = {MaskLabel::unknown, MaskLabel::unknown};
    double grad[2] = {-1.0, -1.0};
    grad[0] = grad[1] = 0.0;
    CHECK(loss_occupancy(m, labels, grad).value == 0.0);
    CHECK(grad[0] == 0.0);
    CHECK(grad[1] == 0.0);
  }
}

TEST_CASE("loss_rgb definition") {
  MatX rendered(3, 1), target(3, 1);
  SUBCASE("perfect color") {
    rendered.col(0) = Vec3(0.2, 0.4, 0.8);
    target = rendered;
    const MaskLabel labels[] = {MaskLabel::foreground};
    CHECK(loss_rgb(rendered, target, labels).value == 0.0);
  }
  SUBCASE("per-channel mean convention") {
    rendered.col(0) = Vec3(1.0, 0.0, 0.0);
    target.col(0) = Vec3(0.0, 0.0, 0.0);
    const MaskLabel labels[] = {MaskLabel::foreground};
    CHECK(loss_rgb(rendered, target, labels).value == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("background-only batch") {
    rendered.col(0) = Vec3(1.0, 1.0, 1.0);
    target.col(0) = Vec3(0.0, 0.0, 0.0);
    const MaskLabel labels[] = {MaskLabel::background};
    CHECK(loss_rgb(rendered, target, labels).value == 0.0);
  }
}

TEST_CASE("loss_lidar_nocs definition") {
  SUBCASE("perfect and simple cases") {
    RenderedPixel px;
    px.nocs_valid = true;
    px.nocs = Vec3(0.1, 0.0, 0.0);
    const Vec3 target(-0.1, 0.0, 0.0);
    const LossValue lv = loss_lidar_nocs(std::span<const RenderedPixel>(&px, 1),
                                         std::span<const Vec3>(&target, 1));
    CHECK(lv.value == doctest::Approx(0.04 / 3.0));
    CHECK(lv.skipped == 0);

    RenderedPixel same = px;
    const Vec3 equal = px.nocs;
    CHECK(loss_lidar_nocs(std::span<const RenderedPixel>(&same, 1),
                          std::span<const Vec3>(&equal, 1))
              .value == 0.0);
  }
  SUBCASE("all supervised pixels invalid") {
    RenderedPixel px;  // nocs_valid = false
    const Vec3 target(0.0, 0.0, 0.0);
    const LossValue lv = loss_lidar_nocs(std::span<const RenderedPixel>(&px, 1),
                                         std::span<const Vec3>(&target, 1));
    CHECK(lv.value == 0.0);
    CHECK(lv.skipped == 1);
  }
}

TEST_CASE("loss_kl closed form") {
  CHECK(loss_kl(VecX::Zero(3), VecX::Zero(3)) == 0.0);
  VecX mean(1), lv(1);
  mean << 1.0;
  lv << 0.0;
  CHECK(loss_kl(mean, lv) == doctest::Approx(0.5));

  // Monte-Carlo cross-check.
  VecX m2(2), lv2(2);
  m2 << 0.8, -1.3;
  lv2 << 0.6, -0.9;
  const double closed = loss_kl(m2, lv2);
  const double mc = oracles::kl_monte_carlo(m2, lv2, 200000, 99);
  CHECK(std::abs(mc - closed) / closed < 0.02);

  VecX d_mean, d_lv;
  loss_kl(m2, lv2, &d_mean, &d_lv);
  for (int i = 0; i < 2; ++i) {
    const double fd_mean = oracles::central_difference([&] { return loss_kl(m2, lv2); },
                                                       [&](double d) { m2[i] += d; });
    CHECK(oracles::rel_error(d_mean[i], fd_mean) < 1e-6);
    const double fd_lv = oracles::central_difference([&] { return loss_kl(m2, lv2); },
                                                     [&](double d) { lv2[i] += d; });
    CHECK(oracles::rel_error(d_lv[i], fd_lv) < 1e-6);
  }
}

TEST_CASE("loss_dense_prior closed forms") {
  SUBCASE("empty space") {
    DeformableShapeModel model = constant_sigma_model(1e-18);
    const ShapeInstance inst = make_instance(model, VecX::Zero(0));
    CHECK(loss_dense_prior(inst, 64, 0.05, 1) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("solid space") {
    DeformableShapeModel model = constant_sigma_model(1000.0);
    const ShapeInstance inst = make_instance(model, VecX::Zero(0));
    CHECK(loss_dense_prior(inst, 64, 0.05, 1) ==
          doctest::Approx(std::exp(-50.0)).epsilon(1e-9));
  }
  SUBCASE("half occupancy") {
    DeformableShapeModel model = constant_sigma_model(std::log(2.0) / 0.05);
    const ShapeInstance inst = make_instance(model, VecX::Zero(0));
    CHECK(loss_dense_prior(inst, 64, 0.05, 1) == doctest::Approx(0.5).epsilon(1e-9));
  }
}

TEST_CASE("fit config validation") {
  FitConfig cfg;
  cfg.weight_rgb = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  FitConfig cfg2;
  cfg2.weight_lidar = 0.5;
  CHECK_FALSE(cfg2.dense_prior_active());
  cfg2.weight_lidar = 0.0;
  cfg2.weight_licomp = 0.0;
  CHECK(cfg2.dense_prior_active());
}

TEST_CASE("zero-iteration fit returns bit-identical models") {
  const SceneSpec scene = tiny_scene(3, false);
  const auto generated = generate(scene);
  std::vector<TrainingObject> objects;
  for (const auto& g : generated) objects.push_back(g.training);

  DeformableShapeModel shape = DeformableShapeModel::init(tiny_shape(), 2, 10, 16);
  DeformableShapeModel color = DeformableShapeModel::init(tiny_shape(), 2, 11, 16);
  FitConfig cfg = tiny_config(false);
  cfg.iterations = 0;
  const FitResult result = fit(objects, shape, color, cfg);
  for (int l = 0; l < shape.canonical.num_levels(); ++l) {
    CHECK((result.shape_model.canonical.level(l) - shape.canonical.level(l)).norm() == 0.0);
    CHECK((result.color_model.canonical.level(l) - color.canonical.level(l)).norm() == 0.0);
  }
  for (int i = 0; i < 4; ++i)
    CHECK((result.shape_model.decoder.weight(i) - shape.decoder.weight(i)).norm() == 0.0);
  CHECK(result.report.iterations.empty());
}

TEST_CASE("fit objective gradients match finite differences") {
  for (const bool with_lidar : {true, false}) {
    CAPTURE(with_lidar);
    const SceneSpec scene = tiny_scene(with_lidar ? 21 : 22, with_lidar);
    const auto generated = generate(scene);
    std::vector<TrainingObject> objects;
    for (const auto& g : generated) objects.push_back(g.training);
    // The tiny crops project below the basis-eligibility bar; the
    // finite-difference check needs gradient flow everywhere.
    for (auto& o : objects) o.basis_eligible = true;

    DeformableShapeModel shape = DeformableShapeModel::init(tiny_shape(), 2, 30, 16, 0.5);
    DeformableShapeModel color = DeformableShapeModel::init(tiny_shape(), 2, 31, 16, 0.5);
    shape.decoder.bias(3)[0] = 0.3;  // keep rendered NOCS valid so every loss is live
    std::vector<DeformationCoefficients> cs(2, DeformationCoefficients::zeros(2));
    std::vector<DeformationCoefficients> cc(2, DeformationCoefficients::zeros(2));
    Rng eps_rng(7);
    for (auto& c : cs) {
      c.mean = VecX::Random(2) * 0.3;
      c.log_variance = VecX::Random(2) * 0.2;
      c.resample(eps_rng);
    }
    for (auto& c : cc) {
      c.mean = VecX::Random(2) * 0.3;
      c.log_variance = VecX::Random(2) * 0.2;
      c.resample(eps_rng);
    }

    const FitConfig cfg = tiny_config(with_lidar);
    const int iteration = 2;
    auto objective = [&] {
      return evaluate_fit_iteration(objects, shape, color, cs, cc, cfg, iteration).total;
    };

    FitGradients grads;
    evaluate_fit_iteration(objects, shape, color, cs, cc, cfg, iteration, &grads);

    Rng rng(with_lidar ? 40 : 41);
    int checked = 0;
    for (int rep = 0; rep < 6; ++rep) {
      const int l = rng.uniform_int(2);
      const int idx = rng.uniform_int(static_cast<int>(shape.canonical.level(l).size()));
      const double fd = oracles::central_difference_refined(
          objective, [&](double d) { shape.canonical.level(l)[idx] += d; });
      CHECK(oracles::rel_error(grads.shape.canonical.level(l)[idx], fd, 1e-7) < 1e-3);
      ++checked;
    }
    for (int rep = 0; rep < 3; ++rep) {
      const int b = rng.uniform_int(2);
      const int l = rng.uniform_int(2);
      const int idx = rng.uniform_int(static_cast<int>(shape.bases[b].level(l).size()));
      const double fd = oracles::central_difference_refined(
          objective, [&](double d) { shape.bases[b].level(l)[idx] += d; });
      CHECK(oracles::rel_error(grads.shape.bases[b].level(l)[idx], fd, 1e-7) < 1e-3);
    }
    for (int layer = 0; layer < 4; ++layer) {
      const int r = rng.uniform_int(static_cast<int>(shape.decoder.weight(layer).rows()));
      const int c = rng.uniform_int(static_cast<int>(shape.decoder.weight(layer).cols()));
      const double fd = oracles::central_difference_refined(
          objective, [&](double d) { shape.decoder.weight(layer)(r, c) += d; });
      CHECK(oracles::rel_error(grads.shape.decoder.weight(layer)(r, c), fd, 1e-7) < 1e-3);
    }
    for (int rep = 0; rep < 2; ++rep) {
      const int l = rng.uniform_int(2);
      const int idx = rng.uniform_int(static_cast<int>(color.canonical.level(l).size()));
      const double fd = oracles::central_difference_refined(
          objective, [&](double d) { color.canonical.level(l)[idx] += d; });
      CHECK(oracles::rel_error(grads.color.canonical.level(l)[idx], fd, 1e-7) < 1e-3);
    }
    for (int obj = 0; obj < 2; ++obj) {
      for (int b = 0; b < 2; ++b) {
        const double fd_m = oracles::central_difference_refined(
            objective, [&](double d) { cs[obj].mean[b] += d; });
        CHECK(oracles::rel_error(grads.d_shape_mean[obj][b], fd_m, 1e-7) < 1e-3);
        const double fd_v = oracles::central_difference_refined(
            objective, [&](double d) { cs[obj].log_variance[b] += d; });
        CHECK(oracles::rel_error(grads.d_shape_log_variance[obj][b], fd_v, 1e-7) < 1e-3);
      }
    }
    CHECK(checked == 6);
  }
}

TEST_CASE("ineligible objects leave canonical and bases untouched") {
  const SceneSpec scene = tiny_scene(33, false);
  auto generated = generate(scene);
  std::vector<TrainingObject> objects;
  for (const auto& g : generated) objects.push_back(g.training);

  for (auto& o : objects) o.basis_eligible = true;

  DeformableShapeModel shape = DeformableShapeModel::init(tiny_shape(), 2, 50, 16, 0.5);
  DeformableShapeModel color = DeformableShapeModel::init(tiny_shape(), 2, 51, 16, 0.5);
  std::vector<DeformationCoefficients> cs(2, DeformationCoefficients::zeros(2));
  std::vector<DeformationCoefficients> cc(2, DeformationCoefficients::zeros(2));
  const FitConfig cfg = tiny_config(false);

  SUBCASE("all ineligible: zero accumulated grid gradient") {
    for (auto& o : objects) o.basis_eligible = false;
    FitGradients grads;
    std::vector<ObjectEvalInfo> info;
    evaluate_fit_iteration(objects, shape, color, cs, cc, cfg, 0, &grads, &info);
    CHECK(grads.shape.canonical.squared_norm() == 0.0);
    for (const auto& b : grads.shape.bases) CHECK(b.squared_norm() == 0.0);
    CHECK(grads.color.canonical.squared_norm() == 0.0);
    // The decoder and coefficients still learn from these objects.
    double decoder_norm = 0.0;
    for (int i = 0; i < 4; ++i) decoder_norm += grads.shape.decoder.weight(i).squaredNorm();
    CHECK(decoder_norm > 0.0);
    // Their own buffers saw gradients; they were just never merged.
    CHECK(info[0].grid_grad_squared_norm > 0.0);
  }

  SUBCASE("mixed eligibility matches the eligible-only contribution") {
    objects[1].basis_eligible = false;
    FitGradients mixed;
    evaluate_fit_iteration(objects, shape, color, cs, cc, cfg, 0, &mixed);

    std::vector<TrainingObject> both_ineligible = objects;
    both_ineligible[0].basis_eligible = false;
    FitGradients none;
    evaluate_fit_iteration(both_ineligible, shape, color, cs, cc, cfg, 0, &none);
    CHECK(none.shape.canonical.squared_norm() == 0.0);
    CHECK(mixed.shape.canonical.squared_norm() > 0.0);
  }
}

TEST_CASE("fit reduces the loss on a small problem") {
  const SceneSpec scene = tiny_scene(60, false);
  const auto generated = generate(scene);
  std::vector<TrainingObject> objects;
  for (const auto& g : generated) objects.push_back(g.training);

  FitConfig cfg = tiny_config(false);
  cfg.rays_per_object = 96;
  cfg.samples_per_ray = 12;
  cfg.iterations = 40;
  cfg.seed = 9;
  const FitResult result =
      fit(objects, DeformableShapeModel::init(tiny_shape(), 0, 1, 16),
          DeformableShapeModel::init(tiny_shape(), 0, 2, 16), cfg);
  REQUIRE(result.report.iterations.size() == 40);
  double first5 = 0.0, last5 = 0.0;
  for (int i = 0; i < 5; ++i) {
    first5 += result.report.iterations[i].total;
    last5 += result.report.iterations[35 + i].total;
  }
  CHECK(last5 < first5);
  const std::string csv = result.report.to_csv();
  CHECK(csv.find("iteration,occupancy,rgb,lidar,licomp,kl,dense,total") == 0);
}

TEST_CASE("non-finite loss aborts with the component named") {
  const SceneSpec scene = tiny_scene(70, false);
  const auto generated = generate(scene);
  std::vector<TrainingObject> objects;
  for (const auto& g : generated) objects.push_back(g.training);
  FitConfig cfg = tiny_config(false);
  cfg.iterations = 1;
  cfg.weight_occupancy = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(fit(objects, DeformableShapeModel::init(tiny_shape(), 0, 1, 16),
                      DeformableShapeModel::init(tiny_shape(), 0, 2, 16), cfg),
                  NumericalError);
}

TEST_CASE("fit is reproducible and thread-count independent") {
  const SceneSpec scene = tiny_scene(80, false);
  const auto generated = generate(scene);
  std::vector<TrainingObject> objects;
  for (const auto& g : generated) objects.push_back(g.training);

  FitConfig cfg = tiny_config(false);
  cfg.rays_per_object = 32;
  cfg.samples_per_ray = 6;
  cfg.iterations = 8;
  auto run = [&](int threads) {
    FitConfig c = cfg;
    c.threads = threads;
    return fit(objects, DeformableShapeModel::init(tiny_shape(), 2, 1, 16),
               DeformableShapeModel::init(tiny_shape(), 2, 2, 16), c);
  };
  const FitResult a = run(1);
  const FitResult b = run(1);
  const FitResult c = run(2);
  CHECK(a.report.iterations.back().total == b.report.iterations.back().total);
  CHECK(std::abs(a.report.iterations.back().total - c.report.iterations.back().total) <= 1e-6);
  for (int l = 0; l < a.shape_model.canonical.num_levels(); ++l)
    CHECK((a.shape_model.canonical.level(l) - c.shape_model.canonical.level(l)).norm() == 0.0);
}

}  // TEST_SUITE
