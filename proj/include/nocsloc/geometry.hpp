// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <array>
#include <optional>

namespace nocsloc {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

// Wraps an angle to the canonical interval (-pi, pi].
double wrap_angle(double a);

// Pinhole camera in pixels, no distortion.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  CameraIntrinsics() = default;
  CameraIntrinsics(double fx, double fy, double cx, double cy);
};

// Yaw + translation in the camera frame (x right, y down, z forward).
// Yaw rotates about the camera y-axis, the vertical axis of driving
// scenes under this convention.
struct Pose4Dof {
  double yaw = 0.0;
  Vec3 t = Vec3::Zero();

  Pose4Dof() = default;
  Pose4Dof(double yaw_in, const Vec3& t_in);
  Mat3 rotation() const;
};

// Object dimensions in meters: length (x), height (y), width (z).
struct ObjectSize {
  double l = 1.0;
  double h = 1.0;
  double w = 1.0;

  ObjectSize() = default;
  ObjectSize(double l_in, double h_in, double w_in);
  Vec3 vec() const { return Vec3(l, h, w); }
};

// Oriented 3D box. The object frame has its origin at the box center,
// x along length, y along height, z along width; NOCS coordinates of
// interior points lie in the centered cube [-0.5, 0.5]^3.
struct Box3D {
  Pose4Dof pose;
  ObjectSize size;

  Box3D() = default;
  Box3D(const Pose4Dof& pose_in, const ObjectSize& size_in) : pose(pose_in), size(size_in) {}
  std::array<Vec3, 8> corners() const;  // camera frame
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 dir = Vec3::UnitZ();

  Ray() = default;
  Ray(const Vec3& origin_in, const Vec3& dir_in);  // dir must be unit length
};

// Rotation matrix of a yaw angle about the camera y-axis.
Mat3 yaw_rotation(double yaw);

// Normalized camera coordinate [ (u-cx)/fx, (v-cy)/fy, 1 ].
Vec3 pixel_to_normalized(double u_px, double v_px, const CameraIntrinsics& K);
Vec2 normalized_to_pixel(const Vec3& p, const CameraIntrinsics& K);

// Camera ray through a pixel; origin at the camera center.
Ray pixel_ray(double u_px, double v_px, const CameraIntrinsics& K);

Vec3 object_to_world(const Vec3& x_obj, const Pose4Dof& pose);
Vec3 world_to_object(const Vec3& x_cam, const Pose4Dof& pose);

// Scale-normalized object coordinate o = x_obj / s (componentwise).
Vec3 nocs_of(const Vec3& x_obj, const ObjectSize& s);
Vec3 nocs_to_object(const Vec3& o, const ObjectSize& s);

struct RaySpan {
  double near = 0.0;
  double far = 0.0;
};

// Slab intersection in the object frame. Returns the [near, far]
// parameter interval, with intersections behind the origin clipped to
// near = 0; empty on a miss.
std::optional<RaySpan> ray_box_intersect(const Ray& ray, const Box3D& box);

}  // namespace nocsloc
