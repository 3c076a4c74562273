// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>

#include "nocsloc/dataset.hpp"
#include "nocsloc/io.hpp"
#include "nocsloc/serialize.hpp"

using namespace nocsloc;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("nocsloc_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

bool files_equal(const fs::path& a, const fs::path& b) {
  return read_text_file(a) == read_text_file(b);
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("tensor round trip") {
  const fs::path dir = temp_dir("tensor");
  Tensor t = Tensor::from_f64({2, 3}, {1.0, -2.5, 3.0e-17, 4.0, 5.5, -6.25});
  write_tensor(dir / "a.nlt", t);
  const Tensor back = read_tensor(dir / "a.nlt");
  CHECK(back.dtype == Tensor::Dtype::f64);
  REQUIRE(back.dims == std::vector<uint64_t>{2, 3});
  for (size_t i = 0; i < 6; ++i) CHECK(back.f64[i] == t.f64[i]);

  Tensor u = Tensor::from_u8({4}, {0, 128, 255, 7});
  write_tensor(dir / "b.nlt", u);
  CHECK(read_tensor(dir / "b.nlt").u8 == u.u8);

  CHECK_THROWS(read_tensor(dir / "missing.nlt"));
  write_text_file(dir / "junk.nlt", "not a tensor");
  CHECK_THROWS(read_tensor(dir / "junk.nlt"));
}

TEST_CASE("checkpoint round trip is bit exact") {
  const fs::path dir = temp_dir("ckpt");
  GridShape shape;
  shape.resolutions = {2, 4, 8};
  Checkpoint ckpt;
  ckpt.shape_model = DeformableShapeModel::init(shape, 3, 42);
  ckpt.color_model = DeformableShapeModel::init(shape, 3, 43);
  ckpt.seed = 777;
  for (int i = 0; i < 2; ++i) {
    DeformationCoefficients c = DeformationCoefficients::zeros(3);
    Rng rng(i + 1);
    c.mean = VecX::Random(3);
    c.log_variance = VecX::Random(3);
    c.resample(rng);
    ckpt.shape_coeffs.push_back(c);
    ckpt.color_coeffs.push_back(c);
  }

  save_checkpoint(dir / "model.nlck", ckpt);
  const Checkpoint back = load_checkpoint(dir / "model.nlck");
  CHECK(back.seed == 777);
  CHECK(back.shape_model.num_bases() == 3);
  save_checkpoint(dir / "model2.nlck", back);
  CHECK(files_equal(dir / "model.nlck", dir / "model2.nlck"));

  write_text_file(dir / "bad.nlck", "XXXXXXXXX");
  CHECK_THROWS(load_checkpoint(dir / "bad.nlck"));
}

TEST_CASE("image writers") {
  const fs::path dir = temp_dir("img");
  write_ppm(dir / "c.ppm", 2, 2, {{255, 0, 0}, {0, 255, 0}, {0, 0, 255}, {9, 9, 9}});
  write_pgm(dir / "g.pgm", 2, 2, {0, 64, 128, 255});
  CHECK(read_text_file(dir / "c.ppm").rfind("P6\n2 2\n255\n", 0) == 0);
  CHECK(read_text_file(dir / "g.pgm").rfind("P5\n2 2\n255\n", 0) == 0);
  CHECK_THROWS_AS(write_ppm(dir / "x.ppm", 2, 2, {{1, 2, 3}}), std::invalid_argument);
}

TEST_CASE("dataset round trip") {
  const fs::path dir = temp_dir("dataset");
  SceneSpec spec;
  spec.camera = CameraIntrinsics(80.0, 80.0, 32.0, 32.0);
  spec.image_width = 64;
  spec.image_height = 64;
  spec.seed = 5;
  spec.lidar.sample_count = 30;
  spec.lidar.completion_stride = 6;
  spec.noise.nocs_sigma = 0.01;
  SynthObjectSpec obj;
  obj.primitive = Primitive::ellipsoid(Vec3(0.5, 0.4, 0.45));
  obj.box = Box3D{Pose4Dof(0.8, Vec3(0.1, 0.0, 6.0)), ObjectSize(2.5, 1.3, 1.5)};
  spec.objects = {obj, obj};

  const auto generated = generate(spec);
  write_dataset(dir, spec, generated);
  CHECK(fs::exists(dir / "scene.json"));
  CHECK(fs::exists(dir / "object_000" / "meta.json"));
  CHECK(fs::exists(dir / "object_001" / "color.ppm"));

  const Dataset loaded = load_dataset(dir);
  REQUIRE(loaded.objects.size() == 2);
  const GeneratedObject& a = generated[0];
  const GeneratedObject& b = loaded.objects[0];
  CHECK(a.training.crop.width == b.training.crop.width);
  CHECK(a.d_pred == b.d_pred);
  REQUIRE(a.clean_correspondences.size() == b.clean_correspondences.size());
  for (size_t i = 0; i < a.clean_correspondences.size(); ++i) {
    CHECK(a.clean_correspondences[i].nocs == b.clean_correspondences[i].nocs);
    CHECK(a.clean_correspondences[i].p == b.clean_correspondences[i].p);
  }
  REQUIRE(a.training.lidar_points.size() == b.training.lidar_points.size());
  for (size_t i = 0; i < a.training.lidar_points.size(); ++i)
    CHECK(a.training.lidar_points[i].nocs == b.training.lidar_points[i].nocs);
  CHECK(a.training.mask.labels == b.training.mask.labels);
}

TEST_CASE("scene spec json round trip") {
  SceneSpec spec;
  spec.camera = CameraIntrinsics(100.0, 110.0, 50.0, 40.0);
  spec.image_width = 100;
  spec.image_height = 80;
  spec.seed = 99;
  spec.noise.outlier_fraction = 0.2;
  spec.occluders.push_back({5, 6, 20, 10});
  SynthObjectSpec obj;
  obj.primitive = Primitive::union_of(
      {Primitive::box(Vec3(0.5, 0.3, 0.5)), Primitive::ellipsoid(Vec3(0.3, 0.5, 0.3))});
  obj.box = Box3D{Pose4Dof(-0.4, Vec3(0.0, 0.2, 9.0)), ObjectSize(4.0, 1.5, 1.8)};
  spec.objects = {obj};

  const SceneSpec back = scene_from_json(to_json(spec));
  CHECK(back.seed == 99);
  CHECK(back.camera.fy == 110.0);
  CHECK(back.occluders.size() == 1);
  CHECK(back.objects[0].primitive.kind == Primitive::Kind::union_of);
  CHECK(back.objects[0].box.pose.yaw == doctest::Approx(-0.4));
  CHECK(back.noise.outlier_fraction == 0.2);
}

TEST_CASE("fit config json round trip") {
  FitConfig cfg;
  cfg.weight_dense = 0.25;
  cfg.iterations = 123;
  cfg.seed = 17;
  const FitConfig back = fit_config_from_json(to_json(cfg));
  CHECK(back.weight_dense == 0.25);
  CHECK(back.iterations == 123);
  CHECK(back.seed == 17);
  CHECK_THROWS(fit_config_from_json(Json{{"iterations", -3}}));
}

TEST_CASE("pnp problem json round trip") {
  PnPProblem problem;
  problem.size = ObjectSize(4.0, 1.5, 1.8);
  Correspondence c;
  c.p = Vec3(0.1, -0.2, 1.0);
  c.nocs = Vec3(0.3, 0.1, -0.4);
  c.weight = Vec2(0.9, 0.8);
  problem.correspondences = {c};
  const PnPProblem back = pnp_problem_from_json(to_json(problem));
  CHECK(back.size.l == 4.0);
  REQUIRE(back.correspondences.size() == 1);
  CHECK(back.correspondences[0].p == c.p);
  CHECK(back.correspondences[0].nocs == c.nocs);
  CHECK(back.correspondences[0].weight == c.weight);
}

}  // TEST_SUITE
