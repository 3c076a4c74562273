// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#include "nocsloc/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace nocsloc {

namespace {
constexpr double kPi = 3.141592653589793238462643383279502884;
constexpr double kTwoPi = 2.0 * kPi;
}  // namespace

double wrap_angle(double a) {
  if (!std::isfinite(a)) throw std::invalid_argument("wrap_angle: non-finite angle");
  double r = std::fmod(a + kPi, kTwoPi);
  if (r <= 0.0) r += kTwoPi;
  return r - kPi;
}

CameraIntrinsics::CameraIntrinsics(double fx_in, double fy_in, double cx_in, double cy_in)
    : fx(fx_in), fy(fy_in), cx(cx_in), cy(cy_in) {
  if (!(fx > 0.0) || !(fy > 0.0))
    throw std::invalid_argument("CameraIntrinsics: focal lengths must be positive");
}

Pose4Dof::Pose4Dof(double yaw_in, const Vec3& t_in) : yaw(wrap_angle(yaw_in)), t(t_in) {}

Mat3 Pose4Dof::rotation() const { return yaw_rotation(yaw); }

ObjectSize::ObjectSize(double l_in, double h_in, double w_in) : l(l_in), h(h_in), w(w_in) {
  if (!(l > 0.0) || !(h > 0.0) || !(w > 0.0))
    throw std::invalid_argument("ObjectSize: dimensions must be strictly positive");
}

std::array<Vec3, 8> Box3D::corners() const {
  const Mat3 R = pose.rotation();
  const Vec3 half = 0.5 * size.vec();
  std::array<Vec3, 8> out;
  int k = 0;
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      for (int sz : {-1, 1})
        out[k++] = R * Vec3(sx * half.x(), sy * half.y(), sz * half.z()) + pose.t;
  return out;
}

Ray::Ray(const Vec3& origin_in, const Vec3& dir_in) : origin(origin_in), dir(dir_in) {
  if (std::abs(dir.norm() - 1.0) > 1e-9)
    throw std::invalid_argument("Ray: direction must be unit length");
}

Mat3 yaw_rotation(double yaw) {
  if (!std::isfinite(yaw)) throw std::invalid_argument("yaw_rotation: non-finite yaw");
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  Mat3 R;
  R << c, 0.0, s,  //
      0.0, 1.0, 0.0,  //
      -s, 0.0, c;
  return R;
}

Vec3 pixel_to_normalized(double u_px, double v_px, const CameraIntrinsics& K) {
  return Vec3((u_px - K.cx) / K.fx, (v_px - K.cy) / K.fy, 1.0);
}

Vec2 normalized_to_pixel(const Vec3& p, const CameraIntrinsics& K) {
  return Vec2(p.x() * K.fx + K.cx, p.y() * K.fy + K.cy);
}

Ray pixel_ray(double u_px, double v_px, const CameraIntrinsics& K) {
  const Vec3 p = pixel_to_normalized(u_px, v_px, K);
  return Ray(Vec3::Zero(), p.normalized());
}

Vec3 object_to_world(const Vec3& x_obj, const Pose4Dof& pose) {
  return pose.rotation() * x_obj + pose.t;
}

Vec3 world_to_object(const Vec3& x_cam, const Pose4Dof& pose) {
  return pose.rotation().transpose() * (x_cam - pose.t);
}

Vec3 nocs_of(const Vec3& x_obj, const ObjectSize& s) {
  return Vec3(x_obj.x() / s.l, x_obj.y() / s.h, x_obj.z() / s.w);
}

Vec3 nocs_to_object(const Vec3& o, const ObjectSize& s) {
  return Vec3(o.x() * s.l, o.y() * s.h, o.z() * s.w);
}

std::optional<RaySpan> ray_box_intersect(const Ray& ray, const Box3D& box) {
  // Equivalent to intersecting the size-normalized ray with the unit
  // NOCS cube: transform into the object frame and run the slab test.
  const Mat3 Rt = box.pose.rotation().transpose();
  const Vec3 o = Rt * (ray.origin - box.pose.t);
  const Vec3 d = Rt * ray.dir;
  const Vec3 half = 0.5 * box.size.vec();

  double near = 0.0;
  double far = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-15) {
      if (std::abs(o[i]) > half[i]) return std::nullopt;
      continue;
    }
    double t0 = (-half[i] - o[i]) / d[i];
    double t1 = (half[i] - o[i]) / d[i];
    if (t0 > t1) std::swap(t0, t1);
    near = std::max(near, t0);
    far = std::min(far, t1);
  }
  if (!(near < far)) return std::nullopt;
  return RaySpan{near, far};
}

}  // namespace nocsloc
