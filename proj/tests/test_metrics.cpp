// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "nocsloc/metrics.hpp"
#include "nocsloc/rng.hpp"
#include "oracles.hpp"

using namespace nocsloc;

namespace {
constexpr double kPi = 3.141592653589793238462643383279502884;

Box3D make_box(double yaw, const Vec3& t, double l, double h, double w) {
  return Box3D{Pose4Dof(yaw, t), ObjectSize(l, h, w)};
}
}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("iou_bev basics") {
  const Box3D a = make_box(0.3, Vec3(1.0, 0.5, 10.0), 4.0, 1.5, 1.8);
  CHECK(iou_bev(a, a) == doctest::Approx(1.0).epsilon(1e-9));
  const Box3D far = make_box(0.0, Vec3(101.0, 0.5, 10.0), 4.0, 1.5, 1.8);
  CHECK(iou_bev(a, far) == 0.0);

  // Axis-aligned 2x2 squares offset by 1 along x: IoU = 2/6.
  const Box3D s1 = make_box(0.0, Vec3(0.0, 0.0, 5.0), 2.0, 1.0, 2.0);
  const Box3D s2 = make_box(0.0, Vec3(1.0, 0.0, 5.0), 2.0, 1.0, 2.0);
  CHECK(iou_bev(s1, s2) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
}

TEST_CASE("iou_3d basics") {
  const Box3D a = make_box(-0.7, Vec3(0.3, 0.1, 12.0), 3.9, 1.6, 1.7);
  CHECK(iou_3d(a, a) == doctest::Approx(1.0).epsilon(1e-9));
  Box3D lifted = a;
  lifted.pose.t.y() += a.size.h;  // vertical offset by the full height
  CHECK(iou_3d(a, lifted) == 0.0);
}

TEST_CASE("iou_3d agrees with the Monte-Carlo volume oracle") {
  Rng rng(5);
  for (int trial = 0; trial < 12; ++trial) {
    const Box3D a = make_box(rng.uniform(-kPi, kPi),
                             Vec3(rng.uniform(-1, 1), rng.uniform(-0.5, 0.5), 10.0),
                             rng.uniform(2, 5), rng.uniform(1, 2), rng.uniform(1, 2.5));
    Box3D b = a;
    b.pose = Pose4Dof(a.pose.yaw + rng.uniform(-0.5, 0.5),
                      a.pose.t + Vec3(rng.uniform(-0.8, 0.8), rng.uniform(-0.4, 0.4),
                                      rng.uniform(-0.8, 0.8)));
    b.size = ObjectSize(a.size.l * rng.uniform(0.8, 1.2), a.size.h * rng.uniform(0.8, 1.2),
                        a.size.w * rng.uniform(0.8, 1.2));
    const double analytic = iou_3d(a, b);
    const double mc = oracles::iou3d_monte_carlo(a, b, 200000, 1000 + trial);
    CHECK(std::abs(analytic - mc) < 0.01);
  }
}

TEST_CASE("iou symmetry and rigid invariance") {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const Box3D a = make_box(rng.uniform(-kPi, kPi), Vec3(0.2, 0.1, 8.0), 4.0, 1.5, 1.8);
    Box3D b = a;
    b.pose = Pose4Dof(a.pose.yaw + 0.3, a.pose.t + Vec3(0.5, 0.2, -0.4));
    CHECK(iou_3d(a, b) == doctest::Approx(iou_3d(b, a)).epsilon(1e-12));
    CHECK(iou_bev(a, b) == doctest::Approx(iou_bev(b, a)).epsilon(1e-12));

    const double phi = rng.uniform(-kPi, kPi);
    const Mat3 R = yaw_rotation(phi);
    const Vec3 shift(rng.uniform(-3, 3), rng.uniform(-1, 1), rng.uniform(-3, 3));
    auto moved = [&](const Box3D& box) {
      return Box3D{Pose4Dof(wrap_angle(box.pose.yaw + phi), R * box.pose.t + shift), box.size};
    };
    CHECK(iou_3d(moved(a), moved(b)) == doctest::Approx(iou_3d(a, b)).epsilon(1e-9));
    CHECK(iou_bev(moved(a), moved(b)) == doctest::Approx(iou_bev(a, b)).epsilon(1e-9));
  }
}

TEST_CASE("degenerate tangency stays finite") {
  const Box3D a = make_box(0.0, Vec3(0.0, 0.0, 5.0), 2.0, 1.0, 2.0);
  const Box3D touching = make_box(0.0, Vec3(2.0, 0.0, 5.0), 2.0, 1.0, 2.0);  // shared edge
  const double v = iou_bev(a, touching);
  CHECK(std::isfinite(v));
  CHECK(v >= 0.0);
  CHECK(v < 1e-9);
  const double v3 = iou_3d(a, touching);
  CHECK(std::isfinite(v3));
  CHECK(v3 >= 0.0);
}

TEST_CASE("depth_mae") {
  const double pred[] = {10.0, 20.0};
  const double gt[] = {11.0, 18.0};
  CHECK(depth_mae(pred, gt) == doctest::Approx(1.5));
  const double same[] = {3.0, 4.0, 5.0};
  CHECK(depth_mae(same, same) == 0.0);
  const double swapped_pred[] = {20.0, 10.0};
  const double swapped_gt[] = {18.0, 11.0};
  CHECK(depth_mae(swapped_pred, swapped_gt) == depth_mae(pred, gt));
  CHECK_THROWS_AS(depth_mae({}, {}), std::invalid_argument);
}

TEST_CASE("pose_errors") {
  const Pose4Dof p(0.0, Vec3(1.0, 2.0, 10.0));
  CHECK(pose_errors(p, p).yaw_deg == 0.0);
  CHECK(pose_errors(p, p).translation_m == 0.0);
  CHECK(pose_errors(Pose4Dof(kPi, Vec3::Zero()), Pose4Dof(-kPi, Vec3::Zero())).yaw_deg ==
        doctest::Approx(0.0));
  CHECK(pose_errors(Pose4Dof(0.0, Vec3::Zero()), Pose4Dof(kPi / 2.0, Vec3::Zero())).yaw_deg ==
        doctest::Approx(90.0));
}

TEST_CASE("metric report aggregates") {
  MetricReport report;
  report.per_object.push_back({0.5, 0.6, 1.0, 2.0, 0.5});
  report.per_object.push_back({0.7, 0.8, 3.0, 4.0, 1.5});
  report.per_object.push_back({0.9, 1.0, 2.0, 6.0, 1.0});
  CHECK(report.mean().iou3d == doctest::Approx(0.7));
  CHECK(report.median().iou3d == doctest::Approx(0.7));
  CHECK(report.median().depth_abs_error == doctest::Approx(2.0));
  const std::string csv = report.to_csv();
  CHECK(csv.find("object,iou3d") == 0);
  CHECK(csv.find("mean,") != std::string::npos);
  CHECK(csv.find("median,") != std::string::npos);
}

}  // TEST_SUITE
