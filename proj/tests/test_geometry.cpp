// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <Eigen/Dense>

#include "nocsloc/geometry.hpp"
#include "nocsloc/rng.hpp"
#include "oracles.hpp"

using namespace nocsloc;

namespace {
constexpr double kPi = 3.141592653589793238462643383279502884;
}

TEST_SUITE("geometry") {

TEST_CASE("yaw_rotation identity and half turn") {
  CHECK((yaw_rotation(0.0) - Mat3::Identity()).norm() == doctest::Approx(0.0).epsilon(1e-15));
  const Mat3 R = yaw_rotation(kPi);
  CHECK(R(0, 0) == doctest::Approx(-1.0));
  CHECK(R(2, 2) == doctest::Approx(-1.0));
  CHECK(R(1, 1) == doctest::Approx(1.0));
}

TEST_CASE("yaw_rotation orthonormality") {
  const Mat3 R = yaw_rotation(0.3);
  CHECK((R.transpose() * R - Mat3::Identity()).norm() < 1e-12);
  CHECK((R * R.transpose() - Mat3::Identity()).norm() < 1e-12);
  CHECK(R.determinant() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("yaw_rotation additivity up to wrap") {
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    const double a = rng.uniform(-4.0, 4.0);
    const double b = rng.uniform(-4.0, 4.0);
    CHECK((yaw_rotation(a) * yaw_rotation(b) - yaw_rotation(wrap_angle(a + b))).norm() < 1e-12);
  }
}

TEST_CASE("wrap_angle canonical interval") {
  CHECK(wrap_angle(kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(3.0 * kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(0.25) == doctest::Approx(0.25));
  CHECK_THROWS_AS(wrap_angle(std::nan("")), std::invalid_argument);
}

TEST_CASE("pixel_to_normalized") {
  const CameraIntrinsics K(100.0, 100.0, 0.0, 0.0);
  SUBCASE("principal point") {
    const CameraIntrinsics K2(320.0, 320.0, 160.0, 120.0);
    const Vec3 p = pixel_to_normalized(160.0, 120.0, K2);
    CHECK(p.isApprox(Vec3(0.0, 0.0, 1.0)));
  }
  SUBCASE("linear map") {
    const Vec3 p = pixel_to_normalized(50.0, -25.0, K);
    CHECK(p.isApprox(Vec3(0.5, -0.25, 1.0)));
  }
  SUBCASE("round trip") {
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
      const double u = rng.uniform(-500.0, 500.0);
      const double v = rng.uniform(-500.0, 500.0);
      const Vec2 px = normalized_to_pixel(pixel_to_normalized(u, v, K), K);
      CHECK(std::abs(px.x() - u) < 1e-12 * std::max(1.0, std::abs(u)));
      CHECK(std::abs(px.y() - v) < 1e-12 * std::max(1.0, std::abs(v)));
    }
  }
}

TEST_CASE("camera intrinsics validation") {
  CHECK_THROWS_AS(CameraIntrinsics(0.0, 1.0, 0.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(CameraIntrinsics(1.0, -2.0, 0.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(ObjectSize(1.0, 0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(Ray(Vec3::Zero(), Vec3(1.0, 1.0, 0.0)), std::invalid_argument);
}

TEST_CASE("world_to_object") {
  SUBCASE("center maps to origin") {
    const Pose4Dof pose(0.7, Vec3(1.0, -2.0, 12.0));
    CHECK(world_to_object(pose.t, pose).norm() < 1e-12);
  }
  SUBCASE("identity pose") {
    const Vec3 x(0.3, -0.2, 5.0);
    CHECK(world_to_object(x, Pose4Dof()).isApprox(x));
  }
  SUBCASE("round trip") {
    Rng rng(11);
    for (int i = 0; i < 50; ++i) {
      const Pose4Dof pose(rng.uniform(-kPi, kPi),
                          Vec3(rng.uniform(-5, 5), rng.uniform(-2, 2), rng.uniform(2, 40)));
      const Vec3 x(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
      CHECK((world_to_object(object_to_world(x, pose), pose) - x).norm() < 1e-12);
    }
  }
}

TEST_CASE("nocs_of") {
  const ObjectSize s(4.0, 2.0, 2.0);
  CHECK(nocs_of(Vec3::Zero(), s).norm() == 0.0);
  CHECK(nocs_of(Vec3(2.0, 1.0, -1.0), s).isApprox(Vec3(0.5, 0.5, -0.5)));
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    const Vec3 x(rng.uniform(-2, 2), rng.uniform(-1, 1), rng.uniform(-1, 1));
    CHECK((nocs_to_object(nocs_of(x, s), s) - x).norm() < 1e-12);
  }
}

TEST_CASE("nocs containment for interior points") {
  Rng rng(13);
  for (int i = 0; i < 50; ++i) {
    const Pose4Dof pose(rng.uniform(-kPi, kPi),
                        Vec3(rng.uniform(-5, 5), rng.uniform(-2, 2), rng.uniform(4, 30)));
    const ObjectSize s(rng.uniform(0.5, 5), rng.uniform(0.5, 3), rng.uniform(0.5, 3));
    const Vec3 o(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    const Vec3 x_cam = object_to_world(nocs_to_object(o, s), pose);
    const Vec3 back = nocs_of(world_to_object(x_cam, pose), s);
    for (int k = 0; k < 3; ++k) {
      CHECK(back[k] >= -0.5 - 1e-9);
      CHECK(back[k] <= 0.5 + 1e-9);
    }
  }
}

TEST_CASE("ray_box_intersect axis-aligned slab") {
  const Box3D box{Pose4Dof(0.0, Vec3(0.0, 0.0, 5.0)), ObjectSize(1.0, 1.0, 1.0)};
  const auto hit = ray_box_intersect(Ray(Vec3::Zero(), Vec3::UnitZ()), box);
  REQUIRE(hit.has_value());
  CHECK(hit->near == doctest::Approx(4.5).epsilon(1e-12));
  CHECK(hit->far == doctest::Approx(5.5).epsilon(1e-12));
  CHECK_FALSE(ray_box_intersect(Ray(Vec3::Zero(), Vec3::UnitX()), box).has_value());
}

TEST_CASE("ray_box_intersect vs membership oracle") {
  const Box3D box{Pose4Dof(0.7, Vec3(0.4, -0.3, 6.0)), ObjectSize(2.0, 1.2, 1.5)};
  Rng rng(17);
  int checked = 0;
  for (int i = 0; i < 40; ++i) {
    const Vec3 target = box.pose.t + Vec3(rng.uniform(-1, 1), rng.uniform(-0.5, 0.5),
                                          rng.uniform(-0.7, 0.7));
    const Ray ray(Vec3::Zero(), target.normalized());
    const auto hit = ray_box_intersect(ray, box);
    const double gamma_max = 12.0;
    const int samples = 10000;
    double first = 0.0, last = 0.0;
    const bool inside = oracles::membership_interval(ray, box, gamma_max, samples, &first, &last);
    if (!hit.has_value()) {
      CHECK_FALSE(inside);
      continue;
    }
    if (!inside) continue;  // grazing ray that the coarse scan missed
    const double spacing = gamma_max / samples;
    CHECK(std::abs(hit->near - first) <= spacing);
    CHECK(std::abs(hit->far - last) <= spacing);
    ++checked;
  }
  CHECK(checked > 20);
}

TEST_CASE("ray_box_intersect rigid invariance") {
  Rng rng(23);
  for (int i = 0; i < 30; ++i) {
    const Box3D box{Pose4Dof(rng.uniform(-kPi, kPi), Vec3(0.5, 0.2, 8.0)),
                    ObjectSize(2.0, 1.0, 1.5)};
    const Vec3 dir = (box.pose.t + Vec3(rng.uniform(-1, 1), rng.uniform(-0.5, 0.5),
                                        rng.uniform(-1, 1)))
                         .normalized();
    const Ray ray(Vec3::Zero(), dir);
    const auto base = ray_box_intersect(ray, box);

    const double phi = rng.uniform(-kPi, kPi);
    const Mat3 R = yaw_rotation(phi);
    const Vec3 shift(rng.uniform(-2, 2), rng.uniform(-1, 1), rng.uniform(-2, 2));
    const Box3D moved{Pose4Dof(wrap_angle(box.pose.yaw + phi), R * box.pose.t + shift), box.size};
    const Ray moved_ray(R * ray.origin + shift, R * ray.dir);
    const auto transformed = ray_box_intersect(moved_ray, moved);

    REQUIRE(base.has_value() == transformed.has_value());
    if (base) {
      CHECK(std::abs(base->near - transformed->near) < 1e-9);
      CHECK(std::abs(base->far - transformed->far) < 1e-9);
    }
  }
}

TEST_CASE("box corners land on pose-transformed size") {
  const Box3D box{Pose4Dof(0.4, Vec3(1.0, 0.5, 9.0)), ObjectSize(3.0, 1.4, 1.8)};
  for (const Vec3& corner : box.corners()) {
    const Vec3 o = nocs_of(world_to_object(corner, box.pose), box.size);
    for (int k = 0; k < 3; ++k) CHECK(std::abs(std::abs(o[k]) - 0.5) < 1e-12);
  }
}

}  // TEST_SUITE
