// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#include "nocsloc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace nocsloc {

namespace {

constexpr double kCollinearTolerance = 1e-12;

// Footprint of the box on the ground plane (x-z), counter-clockwise.
std::array<Vec2, 4> bev_footprint(const Box3D& box) {
  const double c = std::cos(box.pose.yaw);
  const double s = std::sin(box.pose.yaw);
  const double hl = 0.5 * box.size.l;
  const double hw = 0.5 * box.size.w;
  const Vec2 center(box.pose.t.x(), box.pose.t.z());
  // Object x-axis maps to (c, -s), z-axis to (s, c) in the (x, z) plane.
  const Vec2 ex(c, -s);
  const Vec2 ez(s, c);
  return {center + hl * ex + hw * ez, center - hl * ex + hw * ez, center - hl * ex - hw * ez,
          center + hl * ex - hw * ez};
}

double polygon_area(const std::vector<Vec2>& poly) {
  if (poly.size() < 3) return 0.0;
  double a = 0.0;
  for (size_t i = 0; i < poly.size(); ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % poly.size()];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * std::abs(a);
}

// Sutherland-Hodgman clip of `subject` against the half-plane on the
// left of edge a->b.
std::vector<Vec2> clip_edge(const std::vector<Vec2>& subject, const Vec2& a, const Vec2& b) {
  std::vector<Vec2> out;
  out.reserve(subject.size() + 2);
  const Vec2 dir = b - a;
  auto side = [&](const Vec2& p) { return dir.x() * (p.y() - a.y()) - dir.y() * (p.x() - a.x()); };
  const size_t n = subject.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2& p = subject[i];
    const Vec2& q = subject[(i + 1) % n];
    const double sp = side(p);
    const double sq = side(q);
    if (sp >= -kCollinearTolerance) out.push_back(p);
    if ((sp > kCollinearTolerance && sq < -kCollinearTolerance) ||
        (sp < -kCollinearTolerance && sq > kCollinearTolerance)) {
      const double t = sp / (sp - sq);
      out.push_back(p + t * (q - p));
    }
  }
  return out;
}

double bev_intersection_area(const Box3D& a, const Box3D& b) {
  const auto fa = bev_footprint(a);
  const auto fb = bev_footprint(b);
  std::vector<Vec2> poly(fa.begin(), fa.end());
  for (int i = 0; i < 4 && !poly.empty(); ++i) poly = clip_edge(poly, fb[i], fb[(i + 1) % 4]);
  return polygon_area(poly);
}

double median_of(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

double iou_bev(const Box3D& a, const Box3D& b) {
  const double inter = bev_intersection_area(a, b);
  const double area_a = a.size.l * a.size.w;
  const double area_b = b.size.l * b.size.w;
  const double uni = area_a + area_b - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double iou_3d(const Box3D& a, const Box3D& b) {
  const double inter_bev = bev_intersection_area(a, b);
  const double ya0 = a.pose.t.y() - 0.5 * a.size.h, ya1 = a.pose.t.y() + 0.5 * a.size.h;
  const double yb0 = b.pose.t.y() - 0.5 * b.size.h, yb1 = b.pose.t.y() + 0.5 * b.size.h;
  const double overlap_y = std::max(0.0, std::min(ya1, yb1) - std::max(ya0, yb0));
  const double inter = inter_bev * overlap_y;
  const double vol_a = a.size.l * a.size.h * a.size.w;
  const double vol_b = b.size.l * b.size.h * b.size.w;
  const double uni = vol_a + vol_b - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double depth_mae(std::span<const double> predicted, std::span<const double> ground_truth) {
  if (predicted.size() != ground_truth.size())
    throw std::invalid_argument("depth_mae: length mismatch");
  if (predicted.empty()) throw std::invalid_argument("depth_mae: empty lists");
  double sum = 0.0;
  for (size_t i = 0; i < predicted.size(); ++i) sum += std::abs(predicted[i] - ground_truth[i]);
  return sum / static_cast<double>(predicted.size());
}

PoseError pose_errors(const Pose4Dof& predicted, const Pose4Dof& ground_truth) {
  PoseError e;
  e.yaw_deg = std::abs(wrap_angle(predicted.yaw - ground_truth.yaw)) * 180.0 /
              3.141592653589793238462643383279502884;
  e.translation_m = (predicted.t - ground_truth.t).norm();
  return e;
}

ObjectMetrics evaluate_box(const Box3D& predicted, const Box3D& ground_truth) {
  ObjectMetrics m;
  m.iou3d = iou_3d(predicted, ground_truth);
  m.iou_bev = iou_bev(predicted, ground_truth);
  m.depth_abs_error = std::abs(predicted.pose.t.z() - ground_truth.pose.t.z());
  const PoseError pe = pose_errors(predicted.pose, ground_truth.pose);
  m.yaw_error_deg = pe.yaw_deg;
  m.translation_error_m = pe.translation_m;
  return m;
}

ObjectMetrics MetricReport::mean() const {
  ObjectMetrics m;
  if (per_object.empty()) return m;
  for (const auto& o : per_object) {
    m.iou3d += o.iou3d;
    m.iou_bev += o.iou_bev;
    m.depth_abs_error += o.depth_abs_error;
    m.yaw_error_deg += o.yaw_error_deg;
    m.translation_error_m += o.translation_error_m;
  }
  const double n = static_cast<double>(per_object.size());
  m.iou3d /= n;
  m.iou_bev /= n;
  m.depth_abs_error /= n;
  m.yaw_error_deg /= n;
  m.translation_error_m /= n;
  return m;
}

ObjectMetrics MetricReport::median() const {
  ObjectMetrics m;
  if (per_object.empty()) return m;
  std::vector<double> v;
  v.reserve(per_object.size());
  auto med = [&](auto field) {
    v.clear();
    for (const auto& o : per_object) v.push_back(o.*field);
    return median_of(v);
  };
  m.iou3d = med(&ObjectMetrics::iou3d);
  m.iou_bev = med(&ObjectMetrics::iou_bev);
  m.depth_abs_error = med(&ObjectMetrics::depth_abs_error);
  m.yaw_error_deg = med(&ObjectMetrics::yaw_error_deg);
  m.translation_error_m = med(&ObjectMetrics::translation_error_m);
  return m;
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "object,iou3d,iou_bev,depth_abs_error,yaw_error_deg,translation_error_m\n";
  for (size_t i = 0; i < per_object.size(); ++i) {
    const auto& o = per_object[i];
    os << i << ',' << o.iou3d << ',' << o.iou_bev << ',' << o.depth_abs_error << ','
       << o.yaw_error_deg << ',' << o.translation_error_m << '\n';
  }
  const ObjectMetrics mn = mean();
  const ObjectMetrics md = median();
  os << "mean," << mn.iou3d << ',' << mn.iou_bev << ',' << mn.depth_abs_error << ','
     << mn.yaw_error_deg << ',' << mn.translation_error_m << '\n';
  os << "median," << md.iou3d << ',' << md.iou_bev << ',' << md.depth_abs_error << ','
     << md.yaw_error_deg << ',' << md.translation_error_m << '\n';
  return os.str();
}

}  // namespace nocsloc
